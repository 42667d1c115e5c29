"""Random-search baseline inside a fixed l2 ball.

Maintains a structured perturbation delta of radius eps around the benign
point and proposes window-local updates built from concentric pseudo-gaussian
tiles, accepting a proposal whenever the ranking loss strictly drops. The
loss is negative exactly when the top-K goal is met, so runs are comparable
with the boundary attack through the same trace format: one oracle query per
candidate evaluation.

Flat tasks (h == 1) degrade to one-dimensional segment windows.
"""

import math

import numpy as np

from .attack import AttackTrace, TraceEntry
from .oracle import QueryLedger, is_adversarial, margin_f, query_probs

TARGETED = "targeted"


def sak_loss(p: np.ndarray, goal) -> float:
    """Ranking loss; strictly negative iff the probed point is adversarial
    (up to exact probability ties, which continuous scores never produce).
    Untargeted: P_{c_s} - P_{v_K}. Targeted: max_{j not in t} P_j - min_t P_j.
    """
    p = np.asarray(p, dtype=np.float64).ravel()
    if goal.mode == TARGETED:
        targets = sorted(goal.target_set)
        t_min = min(p[c] for c in targets)
        excluded = set(targets)
        o_max = max(p[j] for j in range(p.size) if j not in excluded)
        return o_max - t_min
    return -margin_f(p, goal)


def p_selection(p_init: float, iteration: int, n_iters: int) -> float:
    """Fraction of coordinates touched per proposal, on a halving schedule
    rescaled to a 10000-iteration reference run."""
    it = int(iteration / n_iters * 10000)
    schedule = ((10, 2), (50, 4), (200, 8), (500, 16), (1000, 32), (2000, 64),
                (4000, 128), (6000, 256), (8000, 512))
    p = p_init
    for threshold, divisor in schedule:
        if it > threshold:
            p = p_init / divisor
    return p


def pseudo_gaussian_pert_rectangles(x: int, y: int) -> np.ndarray:
    """Unit-l2 mass concentrated toward the rectangle center via nested
    rings of increment 1/(k+1)^2."""
    delta = np.zeros((x, y))
    x_c, y_c = x // 2 + 1, y // 2 + 1
    row0, col0 = x_c - 1, y_c - 1
    for counter in range(max(x_c, y_c)):
        delta[max(row0, 0):min(row0 + 2 * counter + 1, x),
              max(col0, 0):min(col0 + 2 * counter + 1, y)] += 1.0 / (counter + 1) ** 2
        row0 -= 1
        col0 -= 1
    return delta / np.sqrt(np.sum(delta ** 2))


def meta_pseudo_gaussian_pert(s: int, rng) -> np.ndarray:
    """s x s tile: positive hump on top, negative on bottom, randomly
    transposed, unit l2 norm."""
    delta = np.zeros((s, s))
    delta[:s // 2] = pseudo_gaussian_pert_rectangles(s // 2, s)
    delta[s // 2:] = -pseudo_gaussian_pert_rectangles(s - s // 2, s)
    delta /= np.sqrt(np.sum(delta ** 2))
    if rng.random() > 0.5:
        delta = delta.T
    return delta


def _initial_delta(shape, eps, rng) -> np.ndarray:
    c, h, w = shape
    delta = np.zeros(shape)
    if h == 1:
        s = max(w // 5, 3)
        start = (w - (w // s) * s) // 2
        pos = start
        while pos + s <= w:
            tile = pseudo_gaussian_pert_rectangles(1, s)
            delta[:, 0, pos:pos + s] += tile[0] * rng.choice([-1.0, 1.0], size=(c, 1))
            pos += s
    else:
        s = max(h // 5, 3)
        start = (h - (h // s) * s) // 2
        ch = start
        while ch + s <= h:
            cw = start
            while cw + s <= w:
                delta[:, ch:ch + s, cw:cw + s] += (
                    meta_pseudo_gaussian_pert(s, rng)[None]
                    * rng.choice([-1.0, 1.0], size=(c, 1, 1)))
                cw += s
            ch += s
    norm = np.sqrt(np.sum(delta ** 2))
    if norm < 1e-12:
        delta = rng.standard_normal(shape)
        norm = np.sqrt(np.sum(delta ** 2))
    return delta / norm * eps


def square_attack(model, x_s, goal, eps_ball: float, budget: int, seed: int = 0,
                  p_init: float = 0.1, stop_on_success: bool = True) -> AttackTrace:
    """Runs the random-search baseline for the given goal within an l2 ball
    of radius eps_ball. The trace marks iterations where the best-so-far
    point satisfies the goal; norms stay at (or under, after clamping) the
    ball radius throughout. With stop_on_success the run ends at the first
    accepted adversarial point instead of spending the rest of the budget.
    """
    if eps_ball <= 0:
        raise ValueError("eps_ball must be positive")
    if budget < 1:
        raise ValueError("budget must be at least 1")
    x_flat = np.asarray(x_s, dtype=np.float64).ravel()
    shape = getattr(model, "input_shape", None)
    if shape is None or len(shape) != 3:
        shape = (1, 1, x_flat.size)
    c, h, w = shape
    x = x_flat.reshape(shape)
    clamp = bool(getattr(model, "clamp01", False))
    lo, hi = (0.0, 1.0) if clamp else (-np.inf, np.inf)
    n_features = c * h * w

    ledger = QueryLedger(budget)
    rng = np.random.Generator(np.random.PCG64(seed))
    trace = AttackTrace(mode=goal.mode, k=goal.k, budget=budget, seed=seed)

    def evaluate(point_img):
        p = query_probs(model, point_img.ravel(), ledger)
        return p, sak_loss(p, goal)

    delta = _initial_delta(shape, eps_ball, rng)
    x_best = np.clip(x + delta, lo, hi)
    p_best, loss_best = evaluate(x_best)
    delta = x_best - x
    success_now = is_adversarial(p_best, goal) == 1
    trace.entries.append(TraceEntry(
        step=0, kind="square", norm=float(np.linalg.norm(x_best - x)),
        queries=ledger.used, adversarial=success_now))

    n_iters = max(budget - 1, 1)
    iteration = 0
    while ledger.remaining > 0 and not (stop_on_success and success_now):
        iteration += 1
        p_frac = p_selection(p_init, iteration - 1, n_iters)
        s = max(int(round(math.sqrt(p_frac * n_features / c))), 3)
        if h == 1:
            s = min(s if s % 2 else s + 1, w - 1)
            wins = [(0, int(rng.integers(0, w - s))) for _ in range(2)]
            tile = pseudo_gaussian_pert_rectangles(1, s)[None].repeat(c, axis=0)
            window_shape = (c, 1, s)
        else:
            if s % 2 == 0:
                s += 1
            s = min(s, min(h, w) - 1)
            wins = [(int(rng.integers(0, h - s)), int(rng.integers(0, w - s)))
                    for _ in range(2)]
            tile = meta_pseudo_gaussian_pert(s, rng)[None].repeat(c, axis=0)
            window_shape = (c, s, s)
        (r1, c1), (r2, c2) = wins
        sh = 1 if h == 1 else s

        def window(d, r, cc):
            return d[:, r:r + sh, cc:cc + s]

        norms_window_1 = np.sqrt(np.sum(window(delta, r1, c1) ** 2))
        mask_union = np.zeros(shape, dtype=bool)
        mask_union[:, r1:r1 + sh, c1:c1 + s] = True
        mask_union[:, r2:r2 + sh, c2:c2 + s] = True
        norms_image = np.sqrt(np.sum(delta ** 2))
        norms_windows = np.sqrt(np.sum((delta * mask_union) ** 2))

        new_deltas = tile * rng.choice([-1.0, 1.0], size=(c, 1, 1))
        new_deltas = new_deltas.reshape(window_shape)
        new_deltas = new_deltas + window(delta, r1, c1) / (1e-10 + norms_window_1)
        budget_sq = max(eps_ball ** 2 - norms_image ** 2, 0.0) / c + norms_windows ** 2
        new_norm = np.sqrt(np.sum(new_deltas ** 2))
        new_deltas = new_deltas / (1e-10 + new_norm) * math.sqrt(budget_sq)

        delta_prop = delta.copy()
        delta_prop[:, r2:r2 + sh, c2:c2 + s] = 0.0
        delta_prop[:, r1:r1 + sh, c1:c1 + s] = new_deltas
        prop_norm = np.sqrt(np.sum(delta_prop ** 2))
        if prop_norm < 1e-12:
            continue
        x_new = np.clip(x + delta_prop / prop_norm * eps_ball, lo, hi)
        p_new, loss_new = evaluate(x_new)
        if loss_new < loss_best:
            x_best, p_best, loss_best = x_new, p_new, loss_new
            delta = x_best - x
            success_now = is_adversarial(p_best, goal) == 1
            trace.entries.append(TraceEntry(
                step=iteration, kind="square",
                norm=float(np.linalg.norm(x_best - x)), queries=ledger.used,
                adversarial=success_now))

    trace.final_x = x_best.ravel()
    trace.total_queries = ledger.used
    return trace
