"""Zeroth-order gradient estimators for the two attack phases.

Phase "init" estimates at a benign point x using perturbed copies x + z_i;
phase "boundary" estimates at a point x_b sitting on the decision boundary.
Each estimator turns a batch of probed probability vectors into one scalar
weight per probe and accumulates sum_i weight_i * z_i. Besides the default
("proposed") weighting, the alternative weightings studied alongside it are
exposed by name: m1..m4 for the init phase, a1..a7 for the boundary phase.

Weight conventions per probe i with confidence deltas w_c = P_c(x+z_i) - P_c(x):

  init, targeted
    proposed  (sum_c chi_c) * (sum_c w_c chi_c)   chi_c = 1 iff phi_i * w_c > 0
    m1        min_t P(x+z_i) - min_t P(x)         t ranges over target classes
    m2        L(x+z_i) - L(x),  L = min_t P - max_{j not in t} P_j
    m3        (sum_c chi_c) * phi_i
    m4        sum_c w_c chi_c
  init, untargeted
    proposed  F(x+z_i) - F(x)                     F = P_{v_K} - P_{c_s}
  boundary, targeted
    proposed  (sum_c zeta_c) * (sum_c w_c zeta_c) zeta_c = 1 iff flag_i * w_c > 0
    a1        flag_i                              flag_i = +-1 adversarial test
    a2        sum_c w_c
    a3        min_t P(x_b+z_i) - min_t P(x_b)
    a4        min_t P(x_b+z_i) - max_{j not in t} P_j(x_b+z_i)
    a5        a4 computed on raw logits
    a6        (sum_c zeta_c) * flag_i
    a7        sum_c w_c zeta_c
  boundary, untargeted
    proposed  F(x_b + z_i)
    a1        flag_i

phi_i is the sign of the change in the weakest target-class probability.
Sums accumulate left to right in probe order so runs are bit-reproducible.
"""

import math
from dataclasses import dataclass

import numpy as np

from .oracle import TARGETED, UNTARGETED, is_adversarial, margin_f, query_probs

INIT_VARIANTS_TARGETED = ("proposed", "m1", "m2", "m3", "m4")
INIT_VARIANTS_UNTARGETED = ("proposed",)
BOUNDARY_VARIANTS_TARGETED = ("proposed", "a1", "a2", "a3", "a4", "a5", "a6", "a7")
BOUNDARY_VARIANTS_UNTARGETED = ("proposed", "a1")


class EmptyBatch(Exception):
    pass


class AllZeroWeights(Exception):
    """Every probe got weight zero; the batch carries no direction."""


class InvalidVariant(Exception):
    pass


class LogitsUnavailable(Exception):
    pass


@dataclass(frozen=True)
class ProbeBatch:
    """Probe directions and the probability vectors observed at x0 + z_i."""

    x0: np.ndarray
    p0: np.ndarray
    noises: np.ndarray  # (n, d)
    probs: np.ndarray  # (n, C)
    logits0: np.ndarray | None = None
    logits: np.ndarray | None = None

    @property
    def n_probes(self) -> int:
        return self.noises.shape[0]


def collect_probe_batch(model, x0, p0, noises, ledger, need_logits=False) -> ProbeBatch:
    """Queries the model at x0 + z_i for every row z_i, charging the ledger
    once per probe. Logit rows ride along on the same query when requested
    and the model exposes them.
    """
    x0 = np.asarray(x0, dtype=np.float64).ravel()
    noises = np.asarray(noises, dtype=np.float64)
    if noises.ndim != 2 or noises.shape[1] != x0.size:
        raise ValueError("noises must be (n_probes, d) matching x0")
    rows = []
    logit_rows = [] if need_logits and hasattr(model, "predict_logits") else None
    for i in range(noises.shape[0]):
        point = x0 + noises[i]
        rows.append(query_probs(model, point, ledger))
        if logit_rows is not None:
            logit_rows.append(np.asarray(model.predict_logits(point), dtype=np.float64))
    probs = np.array(rows) if rows else np.zeros((0, p0.size))
    logits0 = None
    logits = None
    if logit_rows is not None:
        logits0 = np.asarray(model.predict_logits(x0), dtype=np.float64)
        logits = np.array(logit_rows) if logit_rows else np.zeros((0, p0.size))
    return ProbeBatch(x0=x0, p0=np.asarray(p0, dtype=np.float64), noises=noises,
                      probs=probs, logits0=logits0, logits=logits)


def probe_schedule(i0: int, iteration: int) -> int:
    """Probe count for refinement iteration t >= 1: floor(i0 * sqrt(t))."""
    if i0 < 1 or iteration < 1:
        raise ValueError("i0 and iteration must be >= 1")
    return int(math.floor(i0 * math.sqrt(iteration)))


def _targets(goal):
    return sorted(goal.target_set)


def _min_target(p, targets):
    best = p[targets[0]]
    for c in targets[1:]:
        if p[c] < best:
            best = p[c]
    return best


def _max_excluded(p, targets):
    excluded = set(targets)
    best = None
    for j in range(p.size):
        if j in excluded:
            continue
        if best is None or p[j] > best:
            best = p[j]
    if best is None:
        raise ValueError("no classes outside the target set")
    return best


def _phi(p0, p, targets) -> float:
    return 1.0 if _min_target(p, targets) - _min_target(p0, targets) > 0 else -1.0


def init_probe_weights(batch: ProbeBatch, goal, variant: str = "proposed") -> np.ndarray:
    if batch.n_probes == 0:
        raise EmptyBatch("no probes in batch")
    if goal.mode == UNTARGETED:
        if variant not in INIT_VARIANTS_UNTARGETED:
            raise InvalidVariant(f"init variant {variant!r} needs a targeted goal")
        f0 = margin_f(batch.p0, goal)
        return np.array([margin_f(batch.probs[i], goal) - f0
                         for i in range(batch.n_probes)])
    if variant not in INIT_VARIANTS_TARGETED:
        raise InvalidVariant(f"unknown init variant {variant!r}")
    targets = _targets(goal)
    p0 = batch.p0
    weights = np.zeros(batch.n_probes)
    for i in range(batch.n_probes):
        p = batch.probs[i]
        if variant == "m1":
            weights[i] = _min_target(p, targets) - _min_target(p0, targets)
            continue
        if variant == "m2":
            l_probe = _min_target(p, targets) - _max_excluded(p, targets)
            l_base = _min_target(p0, targets) - _max_excluded(p0, targets)
            weights[i] = l_probe - l_base
            continue
        phi = _phi(p0, p, targets)
        chi_sum = 0.0
        w_chi_sum = 0.0
        for c in targets:
            w = p[c] - p0[c]
            if phi * w > 0:
                chi_sum += 1.0
                w_chi_sum += w
        if variant == "proposed":
            weights[i] = chi_sum * w_chi_sum
        elif variant == "m3":
            weights[i] = chi_sum * phi
        else:  # m4
            weights[i] = w_chi_sum
    return weights


def boundary_probe_weights(batch: ProbeBatch, goal, variant: str = "proposed",
                           include_nonadversarial: bool = True) -> np.ndarray:
    if batch.n_probes == 0:
        raise EmptyBatch("no probes in batch")
    allowed = (BOUNDARY_VARIANTS_TARGETED if goal.mode == TARGETED
               else BOUNDARY_VARIANTS_UNTARGETED)
    if variant not in allowed:
        raise InvalidVariant(
            f"boundary variant {variant!r} not defined for {goal.mode} goals")
    if variant == "a5" and batch.logits is None:
        raise LogitsUnavailable("this batch carries no logits")
    p0 = batch.p0
    targets = _targets(goal) if goal.mode == TARGETED else None
    weights = np.zeros(batch.n_probes)
    for i in range(batch.n_probes):
        p = batch.probs[i]
        flag = float(is_adversarial(p, goal))
        if goal.mode == UNTARGETED:
            weights[i] = margin_f(p, goal) if variant == "proposed" else flag
        elif variant == "a1":
            weights[i] = flag
        elif variant == "a2":
            weights[i] = sum(p[c] - p0[c] for c in targets)
        elif variant == "a3":
            weights[i] = _min_target(p, targets) - _min_target(p0, targets)
        elif variant == "a4":
            weights[i] = _min_target(p, targets) - _max_excluded(p, targets)
        elif variant == "a5":
            li = batch.logits[i]
            weights[i] = _min_target(li, targets) - _max_excluded(li, targets)
        else:  # proposed, a6, a7 share the zeta selection
            zeta_sum = 0.0
            w_zeta_sum = 0.0
            for c in targets:
                w = p[c] - p0[c]
                if flag * w > 0:
                    zeta_sum += 1.0
                    w_zeta_sum += w
            if variant == "proposed":
                weights[i] = zeta_sum * w_zeta_sum
            elif variant == "a6":
                weights[i] = zeta_sum * flag
            else:  # a7
                weights[i] = w_zeta_sum
        if not include_nonadversarial and flag < 0:
            weights[i] = 0.0
    return weights


def _accumulate(noises: np.ndarray, weights: np.ndarray) -> np.ndarray:
    if not np.any(weights != 0.0):
        raise AllZeroWeights("all probe weights are zero")
    g = np.zeros(noises.shape[1])
    for i in range(weights.size):
        if weights[i] != 0.0:
            g += weights[i] * noises[i]
    return g


def init_gradient(batch: ProbeBatch, goal, variant: str = "proposed") -> np.ndarray:
    """Gradient estimate at a benign point: sum_i weight_i * z_i."""
    return _accumulate(batch.noises, init_probe_weights(batch, goal, variant))


def boundary_gradient(batch: ProbeBatch, goal, variant: str = "proposed",
                      include_nonadversarial: bool = True) -> np.ndarray:
    """Gradient estimate on the boundary: sum_i weight_i * z_i."""
    weights = boundary_probe_weights(batch, goal, variant, include_nonadversarial)
    return _accumulate(batch.noises, weights)
