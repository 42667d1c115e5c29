"""Budgeted boundary attack driver.

Runs in two phases. Initialization walks from the benign point x_s in steps
of length epsilon along a zeroth-order gradient estimate until the goal
indicator flips, then pulls the crossing back to the decision boundary with
a binary line search. Refinement repeatedly re-estimates the gradient on the
boundary and slides the iterate along a semicircular arc toward x_s, which
shrinks the perturbation norm every time it succeeds.

Every oracle call is charged to a single QueryLedger: one for the benign
query, i0 + 1 per walk step (probes plus the stepped point), one per
line-search midpoint, and during refinement floor(i0 * sqrt(t)) probes plus
however many arc queries the remaining budget allows. The trace records the
perturbation norm against the cumulative query count so success-rate curves
can be read off at any budget cut.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .estimators import (AllZeroWeights, boundary_gradient, collect_probe_batch,
                         init_gradient, probe_schedule)
from .geometry import (DEFAULT_THETA_MAX, DEFAULT_THETA_TOL, DegeneratePlane,
                       ZeroVector, boundary_binary_search,
                       semicircular_boundary_search, unit_direction)
from .noise import NoiseConfig, NoiseSampler
from .oracle import QueryLedger, is_adversarial, query_probs

BINARY_SEARCH_TAU = 1e-4


class InitStalled(Exception):
    """Initialization could not reach an adversarial point."""


@dataclass(frozen=True)
class AttackConfig:
    i0: int = 30
    epsilon: float | None = None  # walk step; None picks a per-task default
    tau: float = BINARY_SEARCH_TAU
    sigma: float = 2e-4
    reduction_factor: int = 4
    theta_tol: float = DEFAULT_THETA_TOL
    theta_max: float = DEFAULT_THETA_MAX
    max_init_steps: int = 200
    init_variant: str = "proposed"
    boundary_variant: str = "proposed"
    include_nonadversarial: bool = True
    init_mode: str = "gradient"  # "random" walks a fixed random ray instead
    noise_mode: str | None = None  # "lowfreq" | "gaussian" | None = auto
    max_refine_iters: int | None = None

    def __post_init__(self):
        if self.i0 < 1:
            raise ValueError("i0 must be >= 1")
        if self.epsilon is not None and self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.tau < 1:
            raise ValueError("tau must be in (0, 1)")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.init_mode not in ("gradient", "random"):
            raise ValueError("init_mode must be 'gradient' or 'random'")
        if self.noise_mode not in (None, "lowfreq", "gaussian"):
            raise ValueError("noise_mode must be 'lowfreq', 'gaussian', or None")


@dataclass(frozen=True)
class TraceEntry:
    step: int
    kind: str  # benign | init | boundary | refine
    norm: float
    queries: int  # cumulative oracle calls when this entry was recorded
    adversarial: bool

    def to_dict(self) -> dict:
        return {"step": self.step, "kind": self.kind, "norm": self.norm,
                "queries": self.queries, "adversarial": self.adversarial}


@dataclass
class AttackTrace:
    mode: str
    k: int
    budget: int
    seed: int
    entries: list = field(default_factory=list)
    failed: bool = False
    failure_reason: str | None = None
    final_x: np.ndarray | None = None
    total_queries: int = 0

    @property
    def success(self) -> bool:
        return any(e.adversarial for e in self.entries)

    @property
    def final_norm(self) -> float:
        adv = [e.norm for e in self.entries if e.adversarial]
        return min(adv) if adv else math.inf

    def first_success_query(self, r_th: float) -> int | None:
        """Smallest cumulative query count at which an adversarial point with
        norm <= r_th had been observed, or None."""
        hits = [e.queries for e in self.entries
                if e.adversarial and e.norm <= r_th]
        return min(hits) if hits else None

    def best_norm_within(self, max_queries: int) -> float:
        hits = [e.norm for e in self.entries
                if e.adversarial and e.queries <= max_queries]
        return min(hits) if hits else math.inf

    def boundary_norms(self) -> list:
        return [e.norm for e in self.entries if e.kind in ("boundary", "refine")]

    def is_monotone(self) -> bool:
        """True when the norm never increases once the boundary is reached."""
        norms = self.boundary_norms()
        return all(b <= a + 1e-12 for a, b in zip(norms, norms[1:]))

    def to_dict(self) -> dict:
        d = {
            "mode": self.mode, "k": self.k, "budget": self.budget,
            "seed": self.seed, "failed": self.failed,
            "failure_reason": self.failure_reason,
            "total_queries": self.total_queries,
            "entries": [e.to_dict() for e in self.entries],
        }
        if self.final_x is not None:
            import hashlib
            d["final_sha256"] = hashlib.sha256(
                np.ascontiguousarray(self.final_x, dtype="<f8").tobytes()).hexdigest()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AttackTrace":
        trace = cls(mode=d["mode"], k=d["k"], budget=d["budget"], seed=d["seed"],
                    failed=d["failed"], failure_reason=d.get("failure_reason"),
                    total_queries=d["total_queries"])
        trace.entries = [TraceEntry(step=e["step"], kind=e["kind"], norm=e["norm"],
                                    queries=e["queries"], adversarial=e["adversarial"])
                         for e in d["entries"]]
        return trace

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "AttackTrace":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def default_epsilon(x_s: np.ndarray, input_shape) -> float:
    """Walk step length: fixed for pixel-box tasks, norm-relative otherwise."""
    if input_shape is not None and len(input_shape) == 3:
        return 6.0
    norm = float(np.linalg.norm(x_s))
    return 0.05 * norm if norm > 1e-9 else 1.0


def _make_sampler(config: AttackConfig, model, dim: int, seed: int):
    """Returns a callable n -> (n, dim) matrix of probe directions."""
    shape = getattr(model, "input_shape", None)
    mode = config.noise_mode
    if mode is None:
        mode = "lowfreq" if (shape is not None and len(shape) == 3) else "gaussian"
    if mode == "lowfreq":
        if shape is None or len(shape) != 3:
            shape = (1, 1, dim)
        cfg = NoiseConfig(shape=tuple(shape), reduction_factor=config.reduction_factor,
                          sigma=config.sigma, seed=seed)
        sampler = NoiseSampler(cfg)
        return lambda n: sampler.sample_batch(n).reshape(n, dim)
    rng = np.random.Generator(np.random.PCG64(seed))
    return lambda n: rng.standard_normal((n, dim)) * config.sigma


def find_initial_boundary(model, x_s, p_s, goal, config, ledger, sample_noises,
                          rng, trace, project=None):
    """Walks from x_s until the goal indicator flips, then binary-searches the
    crossing segment. Returns (x_b, p_b). Raises InitStalled when the walk
    exceeds max_init_steps, runs out of budget, or the estimator repeatedly
    returns nothing to follow.
    """
    x_s = np.asarray(x_s, dtype=np.float64).ravel()
    epsilon = config.epsilon
    if epsilon is None:
        epsilon = default_epsilon(x_s, getattr(model, "input_shape", None))
    b_cost = math.ceil(math.log2(1.0 / config.tau))
    x_q, p_q = x_s, p_s
    x_hit = None
    p_hit = None
    zero_strikes = 0
    steps = 0
    step_cost = (config.i0 + 1) if config.init_mode == "gradient" else 1
    ray = None
    if config.init_mode == "random":
        ray = unit_direction(rng.standard_normal(x_s.size))
    while x_hit is None:
        if steps >= config.max_init_steps:
            raise InitStalled(f"no adversarial point after {steps} walk steps")
        if ledger.remaining < step_cost + b_cost:
            raise InitStalled("budget too small to finish initialization")
        if config.init_mode == "gradient":
            batch = collect_probe_batch(model, x_q, p_q, sample_noises(config.i0),
                                        ledger)
            try:
                direction = unit_direction(init_gradient(batch, goal,
                                                         config.init_variant))
                zero_strikes = 0
            except (AllZeroWeights, ZeroVector):
                zero_strikes += 1
                if zero_strikes >= 2:
                    raise InitStalled("estimator returned no direction twice")
                continue
        else:
            direction = ray
        x_next = x_q + epsilon * direction
        if project is not None:
            x_next = project(x_next)
        p_next = query_probs(model, x_next, ledger)
        steps += 1
        flag = is_adversarial(p_next, goal) == 1
        trace.entries.append(TraceEntry(step=steps, kind="init",
                                        norm=float(np.linalg.norm(x_next - x_s)),
                                        queries=ledger.used, adversarial=flag))
        if flag:
            x_hit, p_hit = x_next, p_next
        else:
            x_q, p_q = x_next, p_next

    cache = {x_hit.tobytes(): p_hit}

    def indicator(x):
        p = query_probs(model, x, ledger)
        cache[x.tobytes()] = p
        return is_adversarial(p, goal) == 1

    x_b, _ = boundary_binary_search(x_s, x_hit, indicator, config.tau)
    p_b = cache[x_b.tobytes()]
    trace.entries.append(TraceEntry(step=steps, kind="boundary",
                                    norm=float(np.linalg.norm(x_b - x_s)),
                                    queries=ledger.used, adversarial=True))
    return x_b, p_b


def attack(model, x_s, goal, budget: int, seed: int = 0,
           config: AttackConfig | None = None) -> AttackTrace:
    """Runs the full two-phase attack under a hard query budget and returns
    the trace. A run that never reaches an adversarial point comes back with
    failed=True rather than raising.
    """
    if config is None:
        config = AttackConfig()
    if budget < 2:
        raise ValueError("budget must be at least 2")
    x_s = np.asarray(x_s, dtype=np.float64).ravel()
    ledger = QueryLedger(budget)
    rng = np.random.Generator(np.random.PCG64(seed))
    sample_noises = _make_sampler(config, model, x_s.size, seed=int(rng.integers(2 ** 63)))
    project = None
    if getattr(model, "clamp01", False):
        project = lambda x: np.clip(x, 0.0, 1.0)

    trace = AttackTrace(mode=goal.mode, k=goal.k, budget=budget, seed=seed)
    p_s = query_probs(model, x_s, ledger)
    if is_adversarial(p_s, goal) == 1:
        raise ValueError("starting point already satisfies the attack goal")
    trace.entries.append(TraceEntry(step=0, kind="benign", norm=0.0,
                                    queries=ledger.used, adversarial=False))

    try:
        x_b, p_b = find_initial_boundary(model, x_s, p_s, goal, config, ledger,
                                         sample_noises, rng, trace, project)
    except InitStalled as exc:
        trace.failed = True
        trace.failure_reason = str(exc)
        trace.total_queries = ledger.used
        return trace

    cache = {}

    def indicator(x):
        p = query_probs(model, x, ledger)
        cache[x.tobytes()] = p
        return is_adversarial(p, goal) == 1

    iteration = 0
    zero_strikes = 0
    plane_strikes = 0
    while True:
        iteration += 1
        if config.max_refine_iters is not None and iteration > config.max_refine_iters:
            break
        n_probes = probe_schedule(config.i0, iteration)
        if ledger.remaining < n_probes + 2:
            break
        batch = collect_probe_batch(model, x_b, p_b, sample_noises(n_probes), ledger)
        try:
            g = boundary_gradient(batch, goal, config.boundary_variant,
                                  config.include_nonadversarial)
            zero_strikes = 0
        except AllZeroWeights:
            zero_strikes += 1
            if zero_strikes >= 2:
                break
            continue
        if ledger.remaining < 2:
            break
        try:
            x_new, _ = semicircular_boundary_search(
                x_s, x_b, g, indicator, theta_max=config.theta_max,
                theta_tol=config.theta_tol, max_queries=ledger.remaining,
                project=project)
            plane_strikes = 0
        except (DegeneratePlane, ZeroVector):
            plane_strikes += 1
            if plane_strikes >= 2:
                break
            continue
        moved = not np.array_equal(x_new, x_b)
        if moved:
            x_b = x_new
            p_b = cache[x_b.tobytes()]
        trace.entries.append(TraceEntry(step=iteration, kind="refine",
                                        norm=float(np.linalg.norm(x_b - x_s)),
                                        queries=ledger.used, adversarial=True))
        if ledger.remaining < 2:
            break

    trace.final_x = x_b
    trace.total_queries = ledger.used
    return trace
