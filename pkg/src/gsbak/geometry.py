"""Vector primitives and the two boundary-search procedures.

Points and directions are flat float64 numpy arrays ("vectors"). Indicator
predicates are callables mapping a vector to True (adversarial) / False;
every predicate invocation is one chargeable oracle query, and each search
reports exactly how many it made.
"""

import math
from dataclasses import dataclass

import numpy as np

Vector = np.ndarray

# bisection stops once the bracket is this fraction of pi/2 by default
DEFAULT_THETA_TOL = math.pi / 512
# largest scheduled probe angle; the arc is open at pi/2 (that end is x_s)
DEFAULT_THETA_MAX = (math.pi / 2) * (1 - 1 / 256)

_PROBE_LADDER = 8


class ZeroVector(Exception):
    pass


class InvalidBracket(Exception):
    pass


class DegeneratePlane(Exception):
    pass


def unit_direction(v: Vector) -> Vector:
    """v / ||v||2, rejecting effectively-zero inputs."""
    norm = float(np.linalg.norm(v))
    if norm <= 1e-12:
        raise ZeroVector("cannot normalize a zero-length vector")
    return np.asarray(v, dtype=np.float64) / norm


@dataclass(frozen=True)
class SemicirclePlane:
    """The 2-D search plane: chord direction, in-plane gradient direction.

    center is the benign point; radius_dir points at the current boundary
    point; ortho_dir is the gradient component orthogonal to radius_dir,
    normalized; chord_len is the distance from center to the boundary point.
    """

    center: Vector
    radius_dir: Vector
    ortho_dir: Vector
    chord_len: float

    def __post_init__(self):
        if self.chord_len <= 0:
            raise ValueError("chord_len must be positive")
        for name, d in (("radius_dir", self.radius_dir), ("ortho_dir", self.ortho_dir)):
            if abs(float(np.linalg.norm(d)) - 1.0) > 1e-9:
                raise ValueError(f"{name} must be a unit vector")
        if abs(float(np.dot(self.radius_dir, self.ortho_dir))) > 1e-9:
            raise ValueError("radius_dir and ortho_dir must be orthogonal")

    @classmethod
    def from_gradient(cls, x_s: Vector, x_b: Vector, g_hat: Vector) -> "SemicirclePlane":
        """Plane through x_s and x_b whose second axis follows g_hat.

        Raises DegeneratePlane when g_hat has no component orthogonal to the
        chord (nothing to bend toward).
        """
        chord = np.asarray(x_b, dtype=np.float64) - np.asarray(x_s, dtype=np.float64)
        m = float(np.linalg.norm(chord))
        if m <= 1e-12:
            raise DegeneratePlane("boundary point coincides with the benign point")
        psi = chord / m
        ortho = np.asarray(g_hat, dtype=np.float64) - float(np.dot(g_hat, psi)) * psi
        ortho_norm = float(np.linalg.norm(ortho))
        if ortho_norm <= 1e-12:
            raise DegeneratePlane("gradient is parallel to the chord")
        return cls(center=np.asarray(x_s, dtype=np.float64), radius_dir=psi,
                   ortho_dir=ortho / ortho_norm, chord_len=m)

    def flipped(self) -> "SemicirclePlane":
        """Same plane, opposite bending side."""
        return SemicirclePlane(self.center, self.radius_dir, -self.ortho_dir,
                               self.chord_len)


def semicircle_point(plane: SemicirclePlane, theta: float) -> Vector:
    """Point at angle theta on the arc whose chord (center -> boundary) is a
    diameter.

    theta=0 is the boundary point; the distance to center is
    chord_len * cos(theta), strictly shrinking as theta grows toward pi/2.
    """
    if not 0.0 <= theta < math.pi / 2:
        raise ValueError("theta must lie in [0, pi/2)")
    c, s = math.cos(theta), math.sin(theta)
    return plane.center + plane.chord_len * c * (c * plane.radius_dir + s * plane.ortho_dir)


def boundary_binary_search(x_in: Vector, x_out: Vector, indicator, tau: float):
    """Bisect the segment [x_in, x_out] down to a bracket of relative length
    tau, returning (adversarial end point, indicator calls made).

    x_in must be non-adversarial and x_out adversarial; the endpoints are
    trusted (not re-queried) so the query count is exactly the number of
    midpoint evaluations, ceil(log2(1/tau)).
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    x_in = np.asarray(x_in, dtype=np.float64)
    x_out = np.asarray(x_out, dtype=np.float64)
    if float(np.linalg.norm(x_out - x_in)) <= 1e-12:
        raise InvalidBracket("endpoints coincide; segment cannot straddle the boundary")

    lo, hi = 0.0, 1.0  # fractions along the segment; hi side is adversarial
    hi_vec = x_out
    queries = 0
    while hi - lo > tau:
        mid = 0.5 * (lo + hi)
        cand = x_in + mid * (x_out - x_in)
        queries += 1
        if indicator(cand):
            hi, hi_vec = mid, cand
        else:
            lo = mid
    return hi_vec, queries


def _probe_schedule(theta_max: float):
    """Ascending candidate angles pi/2 * (1 - 1/2^j), clipped to theta_max."""
    thetas = []
    for j in range(1, _PROBE_LADDER + 1):
        theta = min((math.pi / 2) * (1 - 0.5 ** j), theta_max)
        if not thetas or theta > thetas[-1]:
            thetas.append(theta)
    return thetas


def _search_one_side(plane, indicator, theta_max, theta_tol, budget, project):
    """Probe the ladder, then bisect the resulting bracket.

    Returns (best_theta, best_point_or_None, queries, exhausted). best_theta
    stays 0.0 when no adversarial angle > 0 was confirmed on this side.
    """
    lo, lo_vec = 0.0, None  # theta=0 is the boundary point, adversarial by contract
    hi = theta_max
    queries = 0

    for theta in _probe_schedule(theta_max):
        if queries >= budget:
            return lo, lo_vec, queries, True
        cand = project(semicircle_point(plane, theta))
        queries += 1
        if indicator(cand):
            lo, lo_vec = theta, cand
            break
        hi = min(hi, theta)

    while hi - lo > theta_tol:
        if queries >= budget:
            return lo, lo_vec, queries, True
        mid = 0.5 * (lo + hi)
        cand = project(semicircle_point(plane, mid))
        queries += 1
        if indicator(cand):
            lo, lo_vec = mid, cand
        else:
            hi = mid
    return lo, lo_vec, queries, False


def semicircular_boundary_search(x_s: Vector, x_b: Vector, g_hat: Vector, indicator,
                                 theta_max: float = DEFAULT_THETA_MAX,
                                 theta_tol: float = DEFAULT_THETA_TOL,
                                 max_queries: int | None = None,
                                 project=None):
    """Search the semicircular arc for the adversarial point closest to x_s.

    Probes an ascending angle ladder, then bisects between the largest
    verified adversarial angle and the smallest known non-adversarial one.
    If the gradient side of the arc yields no adversarial angle, the
    opposite side is tried once; if both fail, x_b is returned unchanged.

    project, when given, maps each candidate point into the feasible set
    before it is queried (the returned point is the projected one).
    max_queries caps total indicator calls; on exhaustion the best verified
    point so far is returned. Result: (point, indicator calls made).
    """
    if not 0.0 < theta_max < math.pi / 2:
        raise ValueError("theta_max must lie in (0, pi/2)")
    if theta_tol <= 0:
        raise ValueError("theta_tol must be positive")
    if project is None:
        project = lambda p: p

    plane = SemicirclePlane.from_gradient(x_s, x_b, g_hat)
    budget = max_queries if max_queries is not None else (1 << 30)
    total = 0
    for side in (plane, plane.flipped()):
        theta, vec, queries, exhausted = _search_one_side(
            side, indicator, theta_max, theta_tol, budget - total, project)
        total += queries
        if theta > 0.0:
            return vec, total
        if exhausted:
            break
    return np.asarray(x_b, dtype=np.float64), total
