"""The query boundary between attacker and victim: metered probability
queries, top-K extraction, success indicators, and the two scalar signals
(per-class confidence delta w, margin F) the estimators consume.

ProbVectors are numpy arrays of C class probabilities. Success indicators
are pure functions of (ProbVector, goal) and cost nothing; only
query_probs touches the ledger.
"""

from dataclasses import dataclass, field

import numpy as np

UNTARGETED = "untargeted"
TARGETED = "targeted"


class BudgetExhausted(Exception):
    pass


class InsufficientClasses(Exception):
    pass


def validate_probs(p: np.ndarray, normalized: bool = True) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size < 2:
        raise ValueError("ProbVector must be a flat array of at least 2 entries")
    if np.any(p < -1e-9) or np.any(p > 1 + 1e-9):
        raise ValueError("ProbVector entries must lie in [0, 1]")
    if normalized and abs(float(p.sum()) - 1.0) > 1e-6:
        raise ValueError("ProbVector entries must sum to 1")
    return p


@dataclass(frozen=True)
class AttackGoal:
    """Untargeted: push every source label out of the top-K. Targeted: make
    the top-K set equal target_set (ordered equality only if ordered=True,
    an untested escape hatch)."""

    mode: str
    k: int
    source_set: tuple = ()
    target_set: tuple = ()
    ordered: bool = False

    def __post_init__(self):
        if self.mode not in (UNTARGETED, TARGETED):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.k < 1:
            raise ValueError("K must be positive")
        if self.mode == UNTARGETED:
            if len(self.source_set) not in (1, self.k):
                raise ValueError("source set must have 1 (single-label) or K "
                                 "(multi-label) entries")
        else:
            if len(self.target_set) != self.k:
                raise ValueError("target set must have exactly K labels")
            if set(self.target_set) & set(self.source_set):
                raise ValueError("target set must be disjoint from the source set")

    @classmethod
    def untargeted(cls, source_set, k: int) -> "AttackGoal":
        return cls(mode=UNTARGETED, k=k, source_set=tuple(source_set))

    @classmethod
    def targeted(cls, target_set, k: int, source_set=()) -> "AttackGoal":
        return cls(mode=TARGETED, k=k, source_set=tuple(source_set),
                   target_set=tuple(target_set))


@dataclass
class QueryLedger:
    """Monotone oracle-call counter. Budget enforcement is soft by default
    (the attack driver pre-checks costs); hard=True makes the ledger itself
    refuse the call that would pass the budget."""

    budget: int
    used: int = 0
    hard: bool = False

    def charge(self) -> None:
        if self.hard and self.used >= self.budget:
            raise BudgetExhausted(f"budget of {self.budget} queries exhausted")
        self.used += 1

    @property
    def remaining(self) -> int:
        return max(self.budget - self.used, 0)


def query_probs(model, x: np.ndarray, ledger: QueryLedger) -> np.ndarray:
    """One metered victim query."""
    ledger.charge()
    p = model.predict_probs(x)
    return validate_probs(p, normalized=getattr(model, "normalized", True))


class CountingModel:
    """Audit wrapper: counts predict_probs calls independently of any ledger."""

    def __init__(self, model):
        self.model = model
        self.calls = 0

    def predict_probs(self, x):
        self.calls += 1
        return self.model.predict_probs(x)

    def __getattr__(self, name):
        return getattr(self.model, name)


def top_k(p: np.ndarray, k: int) -> list:
    """Indices of the K largest probabilities, descending, ties broken by
    lower index first."""
    p = np.asarray(p)
    if not 1 <= k <= p.size:
        raise ValueError("K must satisfy 1 <= K <= C")
    order = np.argsort(-p, kind="stable")
    return [int(i) for i in order[:k]]


def is_adversarial(p: np.ndarray, goal: AttackGoal) -> int:
    """+1 when p satisfies the goal, else -1."""
    ranked = top_k(p, goal.k)
    if goal.mode == UNTARGETED:
        return +1 if not set(goal.source_set) <= set(ranked) else -1
    if goal.ordered:
        return +1 if ranked == list(goal.target_set) else -1
    return +1 if set(ranked) == set(goal.target_set) else -1


def margin_f(p: np.ndarray, goal: AttackGoal) -> float:
    """P_{v_K} - P_{c_s}: the K-th largest probability outside the source
    set minus the largest within it. Positive marks the adversarial region
    (exactly, for a single-label source)."""
    if goal.mode != UNTARGETED:
        raise ValueError("margin F is defined for untargeted goals")
    p = np.asarray(p)
    source = list(goal.source_set)
    others = [i for i in range(p.size) if i not in set(source)]
    if len(others) < goal.k:
        raise InsufficientClasses(
            f"need at least K={goal.k} classes outside the source set, have {len(others)}")
    c_s = source[int(np.argmax(p[source]))]
    others_sorted = sorted(others, key=lambda i: (-p[i], i))
    v_k = others_sorted[goal.k - 1]
    return float(p[v_k] - p[c_s])


def confidence_delta_w(p_base: np.ndarray, p_pert: np.ndarray, c: int) -> float:
    """Per-class confidence change P_c(perturbed) - P_c(base)."""
    if len(p_base) != len(p_pert):
        raise ValueError("probability vectors must have the same length")
    return float(p_pert[c] - p_base[c])
