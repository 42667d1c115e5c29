"""Experiment harness: runs attack grids over synthetic tasks and reduces
the traces to success-rate and distortion tables.

A grid is described by an ExperimentConfig (usually loaded from JSON). Each
(attack, K, sample) cell runs with its own seed derived from the master seed
through splitmix64 so rows are reproducible independently of execution order.
Every run is audited against an independent call counter on the model; a
ledger mismatch aborts the experiment rather than producing a quietly wrong
query column. Outputs are plain CSV with a config checksum header line and
no timestamps, so reruns are byte-identical.
"""

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .attack import AttackConfig, attack
from .models import generate_synthetic_task
from .oracle import (TARGETED, UNTARGETED, CountingModel, InsufficientClasses,
                     AttackGoal, top_k)
from .square import square_attack

_M64 = (1 << 64) - 1


class ConfigError(Exception):
    pass


class LedgerMismatch(Exception):
    """Trace query count disagrees with the audited model call count."""


def splitmix64(value: int) -> int:
    """Deterministic 64-bit mix used to derive per-row seeds."""
    v = (value + 0x9E3779B97F4A7C15) & _M64
    v = ((v ^ (v >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    v = ((v ^ (v >> 27)) * 0x94D049BB133111EB) & _M64
    return v ^ (v >> 31)


def row_seed(master_seed: int, row_index: int) -> int:
    return splitmix64(master_seed + row_index + 1) & ((1 << 63) - 1)


def select_target_set(probs, source_set, k: int, policy: str = "best",
                      rng=None) -> tuple:
    """Chooses K target classes outside the source set.

    best: the K most probable remaining classes (easiest to reach);
    worst: the K least probable; random: uniform without replacement.
    Ties break toward the lower class index. Returns sorted class indices.
    """
    p = np.asarray(probs, dtype=np.float64).ravel()
    source = set(int(i) for i in source_set)
    candidates = [i for i in range(p.size) if i not in source]
    if len(candidates) < k:
        raise InsufficientClasses(
            f"need {k} classes outside the source set, have {len(candidates)}")
    if policy == "best":
        chosen = sorted(candidates, key=lambda i: (-p[i], i))[:k]
    elif policy == "worst":
        chosen = sorted(candidates, key=lambda i: (p[i], i))[:k]
    elif policy == "random":
        if rng is None:
            raise ValueError("random policy needs an rng")
        chosen = list(rng.choice(candidates, size=k, replace=False))
    else:
        raise ConfigError(f"unknown target policy {policy!r}")
    return tuple(sorted(int(i) for i in chosen))


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    seed: int
    flavor: str
    d: int
    classes: int
    mode: str
    k_values: tuple
    budget: int
    r_th: tuple
    query_cuts: tuple
    shape: tuple | None = None
    n_samples: int = 10
    target_policy: str = "best"
    attacks: tuple = ("gsbak", "sak")
    attack_options: dict = field(default_factory=dict)
    sak_p_init: float = 0.1
    audit: bool = True
    save_traces: bool = False

    def __post_init__(self):
        if not self.k_values or any(k < 1 for k in self.k_values):
            raise ConfigError("k_values must be positive")
        if self.mode not in (UNTARGETED, TARGETED):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.mode == TARGETED and max(self.k_values) >= self.classes / 2:
            raise ConfigError("targeted runs need K < classes / 2")
        if self.mode == UNTARGETED and max(self.k_values) >= self.classes:
            raise ConfigError("untargeted runs need K < classes")
        if self.budget < 2:
            raise ConfigError("budget must be at least 2")
        if not self.r_th or any(r <= 0 for r in self.r_th):
            raise ConfigError("r_th values must be positive")
        if list(self.r_th) != sorted(self.r_th):
            raise ConfigError("r_th values must be ascending")
        if not self.query_cuts or any(q < 1 for q in self.query_cuts):
            raise ConfigError("query_cuts must be positive")
        if any(a not in ("gsbak", "sak") for a in self.attacks):
            raise ConfigError("attacks must be drawn from {'gsbak', 'sak'}")
        if self.n_samples < 1:
            raise ConfigError("n_samples must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        for key in ("k_values", "r_th", "query_cuts", "attacks"):
            if key in d and d[key] is not None:
                d[key] = tuple(d[key])
        if d.get("shape") is not None:
            d["shape"] = tuple(d["shape"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                payload = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(payload, dict):
            raise ConfigError("config root must be a JSON object")
        return cls.from_dict(payload)

    def checksum(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass
class ResultRow:
    attack: str
    mode: str
    k: int
    sample: int
    seed: int
    budget: int
    queries: int
    success: bool
    failed: bool
    final_norm: float
    milestones: str  # "queries:norm|..." prefix-minimum adversarial points
    eps_ball: float | None = None

    @staticmethod
    def milestones_from_trace(trace) -> str:
        parts = []
        best = math.inf
        for e in trace.entries:
            if e.adversarial and e.norm < best:
                best = e.norm
                parts.append(f"{e.queries}:{e.norm:.17g}")
        return "|".join(parts)

    def milestone_pairs(self) -> list:
        if not self.milestones:
            return []
        out = []
        for part in self.milestones.split("|"):
            q, norm = part.split(":")
            out.append((int(q), float(norm)))
        return out

    def first_success_query(self, r_th: float, rel_tol: float = 1e-9) -> int | None:
        limit = r_th * (1 + rel_tol)
        for q, norm in self.milestone_pairs():
            if norm <= limit:
                return q
        return None

    def best_norm_within(self, max_queries: int) -> float:
        best = math.inf
        for q, norm in self.milestone_pairs():
            if q <= max_queries and norm < best:
                best = norm
        return best


_CSV_FIELDS = ["attack", "mode", "k", "sample", "seed", "budget", "queries",
               "success", "failed", "final_norm", "eps_ball", "milestones"]


def write_rows(rows, path, config_checksum: str = "") -> None:
    with open(path, "w", newline="") as fh:
        if config_checksum:
            fh.write(f"# config_sha256={config_checksum}\n")
        writer = csv.DictWriter(fh, fieldnames=_CSV_FIELDS)
        writer.writeheader()
        for r in rows:
            writer.writerow({
                "attack": r.attack, "mode": r.mode, "k": r.k, "sample": r.sample,
                "seed": r.seed, "budget": r.budget, "queries": r.queries,
                "success": int(r.success), "failed": int(r.failed),
                "final_norm": f"{r.final_norm:.17g}",
                "eps_ball": "" if r.eps_ball is None else f"{r.eps_ball:.17g}",
                "milestones": r.milestones,
            })


def read_rows(path) -> list:
    rows = []
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    for rec in csv.DictReader(lines):
        rows.append(ResultRow(
            attack=rec["attack"], mode=rec["mode"], k=int(rec["k"]),
            sample=int(rec["sample"]), seed=int(rec["seed"]),
            budget=int(rec["budget"]), queries=int(rec["queries"]),
            success=bool(int(rec["success"])), failed=bool(int(rec["failed"])),
            final_norm=float(rec["final_norm"]),
            eps_ball=float(rec["eps_ball"]) if rec["eps_ball"] else None,
            milestones=rec["milestones"]))
    return rows


def asr(rows, q: int, r_th: float, rel_tol: float = 1e-9) -> float:
    """Fraction of eligible rows that reached norm <= r_th within q queries.
    Ball-constrained rows (eps_ball set) are eligible only for their own
    radius; unconstrained rows count toward every radius.
    """
    eligible = [r for r in rows
                if r.eps_ball is None or abs(r.eps_ball - r_th) <= rel_tol * r_th]
    if not eligible:
        return math.nan
    hits = sum(1 for r in eligible if r.first_success_query(r_th, rel_tol) is not None
               and r.first_success_query(r_th, rel_tol) <= q)
    return hits / len(eligible)


def median_l2(rows, q: int) -> float:
    """Median over rows of the best adversarial norm seen within q queries
    (+inf for rows that never succeeded by then)."""
    if not rows:
        return math.nan
    return float(np.median([r.best_norm_within(q) for r in rows]))


def summarize(rows, query_cuts, r_ths) -> list:
    """Long-format metric table, one dict per (metric, attack, mode, k, q[, r])."""
    out = []
    keys = sorted({(r.attack, r.mode, r.k) for r in rows})
    for attack_name, mode, k in keys:
        group = [r for r in rows if (r.attack, r.mode, r.k) == (attack_name, mode, k)]
        for q in query_cuts:
            for r_th in r_ths:
                out.append({"metric": "asr", "attack": attack_name, "mode": mode,
                            "k": k, "q": q, "r_th": r_th,
                            "value": asr(group, q, r_th)})
            if attack_name == "gsbak":
                out.append({"metric": "median_l2", "attack": attack_name,
                            "mode": mode, "k": k, "q": q, "r_th": "",
                            "value": median_l2(group, q)})
    return out


def write_summary(summary, path, config_checksum: str = "") -> None:
    fields = ["metric", "attack", "mode", "k", "q", "r_th", "value"]
    with open(path, "w", newline="") as fh:
        if config_checksum:
            fh.write(f"# config_sha256={config_checksum}\n")
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for rec in summary:
            rec = dict(rec)
            if isinstance(rec["value"], float):
                rec["value"] = f"{rec['value']:.17g}"
            writer.writerow(rec)


def _build_goal(config, p_benign, k, rng):
    order = top_k(p_benign, 1)
    source = (int(order[0]),)
    if config.mode == UNTARGETED:
        return AttackGoal.untargeted(source, k)
    targets = select_target_set(p_benign, source, k, config.target_policy, rng)
    return AttackGoal.targeted(targets, k, source_set=source)


def run_experiment(config: ExperimentConfig, out_dir=None) -> dict:
    """Runs the full grid and returns {"rows", "summary", "traces"}.

    Grid cells: for each k in k_values and each benign sample, one
    unconstrained boundary-attack run (if enabled) plus one ball-constrained
    baseline run per r_th radius (if enabled).
    """
    model, samples = generate_synthetic_task(
        config.seed, config.d, config.classes, config.flavor,
        n_samples=config.n_samples, shape=config.shape)
    counted = CountingModel(model)
    attack_cfg = AttackConfig(**config.attack_options)

    rows = []
    traces = []
    row_index = 0
    for k in config.k_values:
        for sample_idx, (x, _labels) in enumerate(samples):
            p_benign = model.predict_probs(x)
            goal_rng = np.random.Generator(np.random.PCG64(
                row_seed(config.seed, 1_000_000 + row_index)))
            goal = _build_goal(config, p_benign, k, goal_rng)
            if "gsbak" in config.attacks:
                seed = row_seed(config.seed, row_index)
                row_index += 1
                before = counted.calls
                trace = attack(counted, x, goal, config.budget, seed, attack_cfg)
                _audit(config, counted.calls - before, trace)
                rows.append(_trace_row("gsbak", config, goal, sample_idx, seed,
                                       trace))
                if config.save_traces:
                    traces.append(trace.to_dict())
            if "sak" in config.attacks:
                for r_th in config.r_th:
                    seed = row_seed(config.seed, row_index)
                    row_index += 1
                    before = counted.calls
                    trace = square_attack(counted, x, goal, eps_ball=r_th,
                                          budget=config.budget, seed=seed,
                                          p_init=config.sak_p_init)
                    _audit(config, counted.calls - before, trace)
                    rows.append(_trace_row("sak", config, goal, sample_idx, seed,
                                           trace, eps_ball=r_th))
                    if config.save_traces:
                        traces.append(trace.to_dict())

    summary = summarize(rows, config.query_cuts, config.r_th)
    result = {"rows": rows, "summary": summary, "traces": traces}
    if out_dir is not None:
        import os
        os.makedirs(out_dir, exist_ok=True)
        checksum = config.checksum()
        write_rows(rows, os.path.join(out_dir, "rows.csv"), checksum)
        write_summary(summary, os.path.join(out_dir, "summary.csv"), checksum)
        if config.save_traces:
            with open(os.path.join(out_dir, "traces.json"), "w") as fh:
                json.dump({"config_sha256": checksum, "traces": traces}, fh)
                fh.write("\n")
    return result


def _audit(config, observed_calls, trace):
    if config.audit and observed_calls != trace.total_queries:
        raise LedgerMismatch(
            f"trace reports {trace.total_queries} queries but the model "
            f"answered {observed_calls}")
    if trace.total_queries > trace.budget:
        raise LedgerMismatch(
            f"trace spent {trace.total_queries} queries over budget {trace.budget}")
    if not trace.is_monotone():
        raise LedgerMismatch("boundary norm trace is not non-increasing")


def _trace_row(attack_name, config, goal, sample_idx, seed, trace,
               eps_ball=None) -> ResultRow:
    return ResultRow(
        attack=attack_name, mode=goal.mode, k=goal.k, sample=sample_idx,
        seed=seed, budget=config.budget, queries=trace.total_queries,
        success=trace.success, failed=trace.failed,
        final_norm=trace.final_norm,
        milestones=ResultRow.milestones_from_trace(trace), eps_ball=eps_ball)


PRESETS = {
    "smoke": {
        "name": "smoke", "seed": 11, "flavor": "linear", "d": 32, "classes": 10,
        "mode": "untargeted", "k_values": [1, 2], "budget": 3000,
        "r_th": [0.5, 1.0, 2.0], "query_cuts": [500, 1500, 3000],
        "n_samples": 3,
    },
    "k-sweep-untargeted": {
        "name": "k-sweep-untargeted", "seed": 101, "flavor": "linear",
        "d": 3072, "classes": 20, "shape": [3, 32, 32], "mode": "untargeted",
        "k_values": [1, 2, 3, 4], "budget": 4000, "r_th": [0.75, 1.5, 3.0],
        "query_cuts": [1000, 2000, 4000], "n_samples": 20,
    },
    "k-sweep-targeted": {
        "name": "k-sweep-targeted", "seed": 202, "flavor": "linear",
        "d": 3072, "classes": 20, "shape": [3, 32, 32], "mode": "targeted",
        "k_values": [1, 2, 3, 4], "budget": 4000, "r_th": [0.75, 1.5, 3.0],
        "query_cuts": [1000, 2000, 4000], "n_samples": 20,
        "target_policy": "best",
    },
}


def preset_config(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; have {sorted(PRESETS)}")
    return ExperimentConfig.from_dict(PRESETS[name])
