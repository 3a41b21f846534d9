"""Distances between probability measures on R^d (Euclidean metric).

Conventions: the bounded-Lipschitz distance is the sup of
|mu(f) - nu(f)| over functions with sup-norm <= 1 and Lipschitz constant
<= 1; total variation is the sup over |f| <= 1, so disjoint measures are
at distance 2.
"""
import math
from dataclasses import dataclass
from itertools import product

import numpy as np
from numba import njit
from scipy import sparse
from scipy.integrate import simpson
from scipy.optimize import linear_sum_assignment, linprog
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import as_points, check_positive
from .exceptions import DimensionMismatch, SingularNoise, SupportTooLarge
from .measures import convolved_density

DEFAULT_CAP = 2000
DEFAULT_ALPHAS = (1.0, 2.0, 5.0, 10.0, 20.0, 50.0)


def _signed_union(mu, nu):
    if mu.dim != nu.dim:
        raise DimensionMismatch("measures live in different dimensions")
    points = np.vstack([mu.atoms, nu.atoms])
    signed = np.concatenate([mu.weights, -nu.weights])
    return points, signed


@njit(cache=True)
def _chain_kernel(cs, gaps):
    n = cs.shape[0]
    cap = 2 * n + 2
    # each side is a deque in a flat buffer: outer end at lo, inner end at hi - 1
    l_len = np.empty(cap)
    l_raw = np.empty(cap)
    r_len = np.empty(cap)
    r_raw = np.empty(cap)
    l_lo, l_hi, r_lo, r_hi = 0, 1, 0, 1
    l_len[0], l_raw[0], r_len[0], r_raw[0] = 1.0, 0.0, 1.0, 0.0
    a = 0.0
    best = 0.0
    off = 0.0
    for i in range(n):
        ci = cs[i]
        best += ci * a
        off += ci
        if ci > 0:
            while r_hi > r_lo and r_raw[r_hi - 1] + off > 0:
                r_hi -= 1
                length, raw = r_len[r_hi], r_raw[r_hi]
                best += (raw + off) * length
                a += length
                if l_hi == cap:
                    l_lo, l_hi = _compact(l_len, l_raw, l_lo, l_hi)
                l_len[l_hi], l_raw[l_hi] = length, raw
                l_hi += 1
        elif ci < 0:
            while l_hi > l_lo and l_raw[l_hi - 1] + off < 0:
                l_hi -= 1
                length, raw = l_len[l_hi], l_raw[l_hi]
                best -= (raw + off) * length
                a -= length
                if r_hi == cap:
                    r_lo, r_hi = _compact(r_len, r_raw, r_lo, r_hi)
                r_len[r_hi], r_raw[r_hi] = length, raw
                r_hi += 1
        if i == n - 1:
            break
        g = gaps[i]
        if g <= 0.0:
            continue
        if l_hi == cap:
            l_lo, l_hi = _compact(l_len, l_raw, l_lo, l_hi)
        l_len[l_hi], l_raw[l_hi] = g, -off
        l_hi += 1
        l_lo = _trim(l_len, l_lo, l_hi, g)
        if r_hi == cap:
            r_lo, r_hi = _compact(r_len, r_raw, r_lo, r_hi)
        r_len[r_hi], r_raw[r_hi] = g, -off
        r_hi += 1
        r_lo = _trim(r_len, r_lo, r_hi, g)
    return best


@njit(cache=True)
def _trim(lengths, lo, hi, excess):
    while excess > 0 and hi > lo:
        if lengths[lo] <= excess:
            excess -= lengths[lo]
            lo += 1
        else:
            lengths[lo] -= excess
            excess = 0.0
    return lo


@njit(cache=True)
def _compact(lengths, raws, lo, hi):
    k = hi - lo
    for j in range(k):
        lengths[j] = lengths[lo + j]
        raws[j] = raws[lo + j]
    return 0, k


def _bl_chain(x, c):
    """Exact 1-d BL value: max sum c_i f_i, |f| <= 1, |f_i - f_{i+1}| <= gap_i.

    On the line the pairwise Lipschitz constraints reduce to neighbours.
    The programme is solved left to right over the concave piecewise-linear
    value function V_i(f) (best partial objective with f_i = f), stored as
    segments on each side of its argmax ``a`` with slopes kept raw under a
    lazy global offset. Adding c_i f shifts all slopes and walks the argmax;
    the Lipschitz window inserts a flat segment at the argmax and trims the
    outer ends back to [-1, 1].
    """
    order = np.argsort(x, kind="stable")
    cs = np.ascontiguousarray(c[order], dtype=np.float64)
    gaps = np.ascontiguousarray(np.diff(x[order]), dtype=np.float64)
    return float(_chain_kernel(cs, gaps))


def _bl_dense_lp(points, signed):
    n = points.shape[0]
    diff = points[:, None, :] - points[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=2))
    # pairs at distance >= 2 are already implied by the box |f| <= 1
    iu, ju = np.nonzero(np.triu(dist < 2.0, k=1))
    m = iu.size
    if m:
        rows = np.concatenate([np.arange(m), np.arange(m), m + np.arange(m), m + np.arange(m)])
        cols = np.concatenate([iu, ju, ju, iu])
        vals = np.concatenate([np.ones(m), -np.ones(m), np.ones(m), -np.ones(m)])
        a_ub = sparse.csr_matrix((vals, (rows, cols)), shape=(2 * m, n))
        b_ub = np.concatenate([dist[iu, ju], dist[iu, ju]])
    else:
        a_ub, b_ub = None, None
    res = linprog(-signed, A_ub=a_ub, b_ub=b_ub, bounds=(-1.0, 1.0), method="highs-ds",
                  options={"primal_feasibility_tolerance": 1e-10,
                           "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:  # pragma: no cover - f = 0 is always feasible
        raise RuntimeError(f"LP solver failed: {res.message}")
    return -res.fun


def _uniform_equal_size(mu, nu):
    n = len(mu)
    return (n == len(nu) and np.all(mu.weights == mu.weights[0])
            and np.all(nu.weights == nu.weights[0]))


def _bl_assignment(mu, nu):
    # the BL distance is the transport cost under min(|x - y|, 2); between
    # uniform measures with equally many atoms some permutation is optimal
    cost = np.minimum(cdist(mu.atoms, nu.atoms), 2.0)
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].mean())


def _auto_method(mu, nu):
    if mu.dim == 1:
        return "chain"
    return "assignment" if _uniform_equal_size(mu, nu) else "lp"


def bl_distance_exact(mu, nu, cap=DEFAULT_CAP, method="auto"):
    """Exact dual bounded-Lipschitz distance between two discrete measures.

    The sup over test functions reduces to a linear programme over the
    function values at the union of the supports: a feasible assignment
    extends to all of R^d (McShane extension clipped to [-1, 1]).

    ``method`` is ``"lp"`` (dense LP, combined support at most ``cap``),
    ``"chain"`` (exact 1-d dynamic programme, no size cap), ``"assignment"``
    (uniform weights on equally many atoms, solved as a matching with cost
    min(distance, 2), same cap) or ``"auto"`` (chain in one dimension, then
    assignment when it applies, LP otherwise).
    """
    points, signed = _signed_union(mu, nu)
    if method == "auto":
        method = _auto_method(mu, nu)
    if method == "chain":
        if points.shape[1] != 1:
            raise DimensionMismatch("chain solver is one-dimensional")
        value = _bl_chain(points[:, 0], signed)
    elif method == "lp":
        if points.shape[0] > cap:
            raise SupportTooLarge(
                f"combined support {points.shape[0]} exceeds cap {cap}; use the bounds")
        value = _bl_dense_lp(points, signed)
    elif method == "assignment":
        if not _uniform_equal_size(mu, nu):
            raise ValueError("assignment solver needs uniform weights on equally many atoms")
        if points.shape[0] > cap:
            raise SupportTooLarge(
                f"combined support {points.shape[0]} exceeds cap {cap}; use the bounds")
        value = _bl_assignment(mu, nu)
    else:
        raise ValueError(f"unknown method {method!r}")
    return float(min(2.0, max(0.0, value)))


def _phi(u):
    """One-dimensional cos^2 bump supported on [-1, 1]."""
    u = np.asarray(u, dtype=float)
    return np.where(np.abs(u) <= 1.0, np.cos(0.5 * np.pi * u) ** 2, 0.0)


def partition_member_eval(k, alpha, x):
    """Value at ``x`` of the partition member indexed by lattice point ``k``.

    ``k`` and ``x`` broadcast over leading axes; the last axis is the
    coordinate. A single pair returns a float.
    """
    k = np.atleast_1d(np.asarray(k, dtype=float))
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if k.shape[-1] != x.shape[-1]:
        raise DimensionMismatch("lattice index and point dimensions differ")
    out = np.prod(_phi(alpha * x - k), axis=-1)
    return float(out) if out.ndim == 0 else out


def active_members(points, alpha):
    """Lattice indices and values of the (at most 2^d) members nonzero at each point.

    Returns ``keys`` of shape (n, 2^d, d) and ``values`` of shape (n, 2^d).
    Some returned members may evaluate to exactly zero at lattice-aligned
    points; they are harmless for sums.
    """
    pts = as_points(points)
    u = alpha * pts
    base = np.floor(u)
    d = pts.shape[1]
    corners = np.array(list(product((0, 1), repeat=d)), dtype=float)
    keys = base[:, None, :] + corners[None, :, :]
    values = np.prod(_phi(u[:, None, :] - keys), axis=2)
    return keys.astype(np.int64), values


def _member_masses(mu, alpha):
    keys, values = active_members(mu.atoms, alpha)
    d = mu.dim
    flat_keys = keys.reshape(-1, d)
    masses = (values * mu.weights[:, None]).ravel()
    return flat_keys, masses


def _row_groups(rows):
    """Group label per row; equal rows share a label."""
    if rows.shape[1] == 1:
        _, inverse = np.unique(rows[:, 0], return_inverse=True)
    else:
        _, inverse = np.unique(rows, axis=0, return_inverse=True)
    return inverse.ravel()


def bl_upper_partition(mu, nu, alpha):
    """Upper bound on the BL distance from the cos^2 partition at scale ``alpha``.

    Each member is supported in a box of side 2/alpha, so any 1-Lipschitz
    test function varies by at most sqrt(d)/alpha from its value at the
    box centre; what remains is the l1 gap of member masses.
    """
    alpha = check_positive(alpha, "alpha")
    if mu.dim != nu.dim:
        raise DimensionMismatch("measures live in different dimensions")
    k_mu, m_mu = _member_masses(mu, alpha)
    k_nu, m_nu = _member_masses(nu, alpha)
    keys = np.vstack([k_mu, k_nu])
    masses = np.concatenate([m_mu, -m_nu])
    gap = np.bincount(_row_groups(keys), weights=masses)
    value = 2.0 * math.sqrt(mu.dim) / alpha + np.abs(gap).sum()
    return float(min(2.0, value))


def bl_upper_best(mu, nu, alphas=DEFAULT_ALPHAS):
    """Minimum of the partition bound over a set of scales."""
    return min(bl_upper_partition(mu, nu, a) for a in alphas)


def bl_lower_random(mu, nu, trials, rng):
    """Lower bound on the BL distance from random clipped hinge functions.

    Test functions are x -> clip(<u, x> - t, -1, 1) with a uniformly random
    unit direction u and offset t drawn across the projected support.
    """
    trials = int(trials)
    if trials < 1:
        raise ValueError("trials must be at least 1")
    points, signed = _signed_union(mu, nu)
    d = points.shape[1]
    best = 0.0
    # chunk to bound memory at (chunk, n)
    chunk = max(1, min(trials, 2_000_000 // max(1, points.shape[0])))
    done = 0
    while done < trials:
        m = min(chunk, trials - done)
        u = rng.standard_normal((m, d))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        proj = u @ points.T
        lo = proj.min(axis=1) - 1.0
        hi = proj.max(axis=1) + 1.0
        t = lo + (hi - lo) * rng.random(m)
        vals = np.clip(proj - t[:, None], -1.0, 1.0) @ signed
        best = max(best, float(np.max(np.abs(vals))))
        done += m
    return min(2.0, best)


def tv_discrete(mu, nu):
    """Total variation (no 1/2 factor) between discrete measures.

    Only exactly coinciding atoms are matched.
    """
    points, signed = _signed_union(mu, nu)
    return float(min(2.0, np.abs(np.bincount(_row_groups(points), weights=signed)).sum()))


def tv_convolved(mu, nu, xi, n_grid=None, width=8.0):
    """Total variation between ``mu * xi`` and ``nu * xi`` by Simpson quadrature.

    The integration box covers every atom +- ``width`` noise standard
    deviations (largest eigenvalue); d must be 1 or 2.
    """
    if mu.dim != nu.dim or xi.dim != mu.dim:
        raise DimensionMismatch("dimensions differ")
    d = mu.dim
    if d > 2:
        raise DimensionMismatch("quadrature TV supports d <= 2")
    eig = np.linalg.eigvalsh(xi.covariance)
    if eig.min() <= 0:
        raise SingularNoise("noise covariance is not positive definite")
    sigma = math.sqrt(eig.max())
    points = np.vstack([mu.atoms, nu.atoms])
    lo = points.min(axis=0) + xi.mean - width * sigma
    hi = points.max(axis=0) + xi.mean + width * sigma
    if d == 1:
        n_grid = n_grid or 20001
        grid = np.linspace(lo[0], hi[0], n_grid)
        diff = np.abs(convolved_density(mu, xi, grid[:, None]) - convolved_density(nu, xi, grid[:, None]))
        return float(simpson(diff, x=grid))
    n_grid = n_grid or 401
    gx = np.linspace(lo[0], hi[0], n_grid)
    gy = np.linspace(lo[1], hi[1], n_grid)
    xx, yy = np.meshgrid(gx, gy, indexing="ij")
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    diff = np.abs(convolved_density(mu, xi, pts) - convolved_density(nu, xi, pts)).reshape(xx.shape)
    return float(simpson(simpson(diff, x=gy, axis=1), x=gx))


@dataclass(frozen=True)
class MetricReport:
    """BL value (when the exact solver ran), its bounds, and TV."""

    exact_bl: float | None
    bl_upper: float
    bl_lower: float
    tv: float
    method: str = "lp"

    def row(self, t):
        exact = "" if self.exact_bl is None else repr(self.exact_bl)
        return [repr(float(t)), exact, repr(self.bl_upper), repr(self.bl_lower), repr(self.tv)]

    header = ("t", "bl_exact", "bl_upper", "bl_lower", "tv")


def metric_report(mu, nu, rng, cap=DEFAULT_CAP, alphas=DEFAULT_ALPHAS, trials=256):
    """Exact BL when affordable, plus partition and hinge bounds and TV."""
    method = _auto_method(mu, nu)
    if method != "chain" and len(mu) + len(nu) > cap:
        exact, method = None, "bounds"
    else:
        exact = bl_distance_exact(mu, nu, cap=cap, method=method)
    upper = bl_upper_best(mu, nu, alphas)
    lower = bl_lower_random(mu, nu, trials, rng)
    if exact is not None:
        # the bounds are valid for the true value; clamp solver round-off
        upper = max(upper, exact)
        lower = min(lower, exact)
    return MetricReport(exact, upper, lower, tv_discrete(mu, nu), method)


class PartitionOfUnity(TransformerMixin, BaseEstimator):
    """Feature map onto the cos^2 partition of unity at scale ``alpha``.

    ``fit`` records the lattice members active on the training points;
    ``transform`` returns their values, one column per member, as a sparse
    matrix whose rows sum to one on the training support.
    """

    def __init__(self, alpha=1.0):
        self.alpha = alpha

    def fit(self, X, y=None):
        check_positive(self.alpha, "alpha")
        X = as_points(X)
        keys, _ = active_members(X, self.alpha)
        self.members_ = np.unique(keys.reshape(-1, X.shape[1]), axis=0)
        self.n_features_in_ = X.shape[1]
        self.lipschitz_bound_ = 0.5 * self.alpha * math.pi * math.sqrt(X.shape[1])
        return self

    def transform(self, X):
        check_is_fitted(self, "members_")
        X = as_points(X)
        if X.shape[1] != self.n_features_in_:
            raise DimensionMismatch("dimension differs from fit")
        keys, values = active_members(X, self.alpha)
        index = {tuple(k): j for j, k in enumerate(self.members_)}
        rows, cols, vals = [], [], []
        for i in range(X.shape[0]):
            for k, v in zip(keys[i], values[i]):
                j = index.get(tuple(k))
                if j is not None and v > 0:
                    rows.append(i)
                    cols.append(j)
                    vals.append(v)
        return sparse.csr_matrix((vals, (rows, cols)), shape=(X.shape[0], len(self.members_)))
