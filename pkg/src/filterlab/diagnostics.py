"""Observability and regularity checks for the model classes.

Covers the linear-systems rank test, reconstruction from time-integrated
observations, the 1-d decomposition h(x) = Cx + h0(x), and numerical
verification of the windowed-observation sandwich and flow-deviation
bounds for diffusion models.
"""
import csv
import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import as_matrix
from .exceptions import BoundViolated, DimensionMismatch, InvalidModel, NotMonotone, SandwichViolated
from .models import eta_flow, em_step, integrated_exponential


@dataclass(frozen=True)
class ObservabilityReport:
    rank: int
    singular_values: tuple
    observable: bool
    tolerance: float
    matrix: np.ndarray = field(repr=False, default=None)
    reconstruction: np.ndarray = field(repr=False, default=None)

    def summary(self):
        sv = ", ".join(f"{s:.6g}" for s in self.singular_values)
        return (f"rank: {self.rank}\nsingular values: {sv}\n"
                f"observable: {'yes' if self.observable else 'no'}\n")


def _rank(mat, tol):
    sv = np.linalg.svd(mat, compute_uv=False)
    if sv.size == 0 or sv[0] == 0:
        return 0, sv
    return int(np.sum(sv > tol * sv[0])), sv


def observability_matrix(A, C):
    A = as_matrix(A, "A")
    C = as_matrix(C, "C")
    d = A.shape[0]
    if A.shape != (d, d) or C.shape[1] != d:
        raise DimensionMismatch("A must be d x d and C q x d")
    blocks = [C]
    for _ in range(d - 1):
        blocks.append(blocks[-1] @ A)
    return np.vstack(blocks)


def observability_matrix_rank(A, C, tol=1e-10):
    """Rank of [C; CA; ...; CA^{d-1}] with a relative singular-value cutoff."""
    if not 0 < tol < 1:
        raise ValueError("tol must lie in (0, 1)")
    O = observability_matrix(A, C)
    rank, sv = _rank(O, tol)
    d = O.shape[1]
    return ObservabilityReport(rank, tuple(float(s) for s in sv), rank == d, tol, O)


def reconstruction_matrix(A, C, times, tol=1e-10):
    """Stack C int_0^{t_i} e^{As} ds over the given times.

    Full column rank means x is recovered linearly from the noise-free
    integrated observations; the pseudoinverse is then returned as the
    reconstruction map.
    """
    A = as_matrix(A, "A")
    C = as_matrix(C, "C")
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(times <= 0):
        raise ValueError("times must be positive")
    M = np.vstack([C @ integrated_exponential(A, t) for t in times])
    rank, sv = _rank(M, tol)
    d = A.shape[0]
    recon = np.linalg.pinv(M) if rank == d else None
    return ObservabilityReport(rank, tuple(float(s) for s in sv), rank == d, tol, M, recon)


def unobservable_direction(A, C, tol=1e-10):
    """A unit vector in the null space of the observability matrix, or None."""
    O = observability_matrix(A, C)
    _, sv, vt = np.linalg.svd(O)
    d = O.shape[1]
    sv = np.concatenate([sv, np.zeros(d - sv.size)])
    small = np.nonzero(sv <= tol * max(sv[0], 1e-300))[0]
    return None if small.size == 0 else vt[small[0]]


@dataclass(frozen=True)
class Decomposition1D:
    C: float
    eps: float
    valid: bool
    m: float
    M: float
    h0_lipschitz: float


def bilipschitz_decompose_1d(h, grid):
    """Split a monotone scalar map as h(x) = Cx + h0(x) with |h0/C|_L <= eps.

    The difference-quotient range [m, M] over adjacent grid points gives
    C = +-(M+m)/2 and eps = (M-m)/(M+m). ``h0_lipschitz`` is the largest
    adjacent difference quotient of h0/C, which should not exceed eps.
    """
    grid = np.sort(np.asarray(grid, dtype=float).ravel())
    if grid.size < 1000:
        raise ValueError("probe grid needs at least 1000 points")
    hx = np.asarray(h(grid), dtype=float).ravel()
    q = np.diff(hx) / np.diff(grid)
    if np.all(q > 0):
        sign = 1.0
    elif np.all(q < 0):
        sign = -1.0
    else:
        raise NotMonotone("h is not strictly monotone on the probe grid")
    slopes = np.abs(q)
    m, M = float(slopes.min()), float(slopes.max())
    C = sign * (M + m) / 2.0
    eps = (M - m) / (M + m)
    h0_scaled = (hx - C * grid) / C
    lip_h0 = float(np.max(np.abs(np.diff(h0_scaled) / np.diff(grid))))
    valid = m > 0 and eps < 1 and lip_h0 <= eps + 1e-9
    return Decomposition1D(C, eps, bool(valid), m, M, lip_h0)


@dataclass(frozen=True)
class SandwichConstants:
    eps: float
    m: float
    M: float
    eps0: float


def _lower_constant(a, L, norm_cinv, eps):
    e = math.exp(L * eps)
    return (1.0 - a * e - L * eps * e / 2.0) / norm_cinv


def lemma51_constants(lip_ch0, lip_b, norm_cinv, lip_h, eps):
    """Lower/upper constants of the windowed observation map H_eps.

    m(eps) = (1 - a e^{L eps} - L eps e^{L eps} / 2) / ||C^{-1}|| and
    M(eps) = ||h||_L e^{L eps}, with a = ||C^{-1} h0||_L and L = ||b||_L.
    eps0 is the root of m (bisection, relative precision 1e-8); it is
    infinite without drift.
    """
    a, L = float(lip_ch0), float(lip_b)
    if not a < 1:
        raise InvalidModel(f"||C^-1 h0||_L = {a} must be < 1")
    if L == 0:
        eps0 = math.inf
    else:
        lo, hi = 0.0, 1.0 / L
        while _lower_constant(a, L, norm_cinv, hi) > 0:
            hi *= 2.0
        while hi - lo > 1e-8 * hi:
            mid = 0.5 * (lo + hi)
            if _lower_constant(a, L, norm_cinv, mid) > 0:
                lo = mid
            else:
                hi = mid
        eps0 = 0.5 * (lo + hi)
    m = _lower_constant(a, L, norm_cinv, eps)
    M = float(lip_h) * math.exp(L * eps)
    return SandwichConstants(float(eps), m, M, eps0)


def model_constants(model, eps):
    """Sandwich constants from a diffusion model's declared constants."""
    model.check_observable_class()
    norm_cinv = float(np.linalg.norm(np.linalg.inv(model.C), 2))
    return lemma51_constants(model.lip_cinv_h0, model.lip_b, norm_cinv,
                             model.declared_lip_h(), eps)


def windowed_observation(model, x, eps, n_sub=64, flow_substeps=4):
    """H_eps(x) = (1/eps) int_0^eps h(eta_s(x)) ds by composite Simpson.

    The flow is advanced with ``flow_substeps`` RK4 steps per Simpson
    subinterval.
    """
    if n_sub % 2:
        raise ValueError("Simpson needs an even number of subintervals")
    x = np.array(x, dtype=float)
    step = eps / n_sub
    coeffs = np.ones(n_sub + 1)
    coeffs[1:-1:2] = 4.0
    coeffs[2:-1:2] = 2.0
    total = coeffs[0] * model.h(x)
    state = x
    for j in range(1, n_sub + 1):
        state = eta_flow(model.drift, state, step, substeps=flow_substeps)
        total = total + coeffs[j] * model.h(state)
    return total * (step / 3.0) / eps


@dataclass
class CheckReport:
    """Rows of (check, value, bound, pass) plus free-form details."""

    rows: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def add(self, check, value, bound, passed):
        self.rows.append((check, float(value), float(bound), bool(passed)))

    @property
    def passed(self):
        return all(r[3] for r in self.rows)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["check", "value", "bound", "pass"])
            for check, value, bound, ok in self.rows:
                w.writerow([check, repr(value), repr(bound), "true" if ok else "false"])

    def summary(self):
        return "".join(f"{'PASS' if ok else 'FAIL'} {c} {v:.6g} {b:.6g}\n"
                       for c, v, b, ok in self.rows)


def verify_sandwich(model, eps, n_pairs, rng, scale=5.0, raise_on_fail=True):
    """Check m(eps)|x-y| <= |H_eps(x) - H_eps(y)| <= M(eps)|x-y| on random pairs.

    First points are uniform on a box of half-width ``scale``; separations
    are log-uniform between 1e-6 and 2 * scale along random directions, so
    both local and global ratios are probed.
    """
    const = model_constants(model, eps)
    if not eps < const.eps0:
        raise ValueError(f"eps={eps} is not below eps0={const.eps0}")
    q = model.state_dim
    x = rng.uniform(-scale, scale, (n_pairs, q))
    direction = rng.normal(size=(n_pairs, q))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    dist = np.exp(rng.uniform(math.log(1e-6), math.log(2.0 * scale), n_pairs))
    y = x + direction * dist[:, None]
    gap = np.linalg.norm(windowed_observation(model, x, eps) - windowed_observation(model, y, eps), axis=1)
    ratio = gap / dist
    report = CheckReport()
    report.add("sandwich_min_ratio", ratio.min(), const.m, ratio.min() >= const.m)
    report.add("sandwich_max_ratio", ratio.max(), const.M, ratio.max() <= const.M)
    report.details.update(constants=const, ratios=ratio)
    if raise_on_fail and not report.passed:
        bad = int(np.argmin(ratio) if ratio.min() < const.m else np.argmax(ratio))
        raise SandwichViolated(f"ratio {ratio[bad]} outside [{const.m}, {const.M}]", x[bad], y[bad])
    return report


def flow_deviation_bound(model, t):
    return math.exp(model.lip_b * t) * math.sqrt(model.trace_bound * t)


def verify_flow_deviation(model, t, mc_paths, probes, rng, dt=1e-3, check_times=None,
                          raise_on_fail=True):
    """Monte Carlo estimate of max_x E|X_s - eta_s(x)| for s <= t.

    Each probe point x starts ``mc_paths`` Euler-Maruyama paths; the
    deterministic flow is advanced on the same grid by the drift part of
    the same Euler scheme, so with sigma = 0 the two coincide exactly and
    the estimate measures the noise-driven deviation only. The estimate
    at each check time is compared to e^{L s} sqrt(K s) plus three Monte
    Carlo standard errors.
    """
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    n = int(round(t / dt))
    check_times = sorted(check_times or [t])
    check_steps = {int(round(s / dt)): s for s in check_times}
    report = CheckReport()
    estimates = {}
    for x0 in probes:
        x = np.broadcast_to(x0, (mc_paths, x0.size)).copy()
        eta = x0.reshape(1, -1).copy()
        for i in range(1, n + 1):
            x = em_step(model, x, dt, rng)
            eta = eta + model.drift(eta) * dt
            if i in check_steps:
                s = check_steps[i]
                dev = np.linalg.norm(x - eta, axis=1)
                mean, se = float(dev.mean()), float(dev.std(ddof=1) / math.sqrt(mc_paths))
                prev = estimates.get(s)
                if prev is None or mean > prev[0]:
                    estimates[s] = (mean, se)
    for s in check_times:
        mean, se = estimates[s]
        bound = flow_deviation_bound(model, s)
        report.add(f"flow_deviation_s={s:g}", mean, bound, mean <= bound + 3 * se)
    report.details["estimates"] = estimates
    if raise_on_fail and not report.passed:
        raise BoundViolated(report.summary())
    return report


def validate_declared_constants(model, probes, rng, n_pairs=2000):
    """Grid/probe check that declared Lipschitz and trace bounds are not exceeded."""
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    if probes.shape[1] != model.state_dim:
        probes = probes.reshape(-1, model.state_dim)
    i = rng.integers(0, len(probes), n_pairs)
    j = rng.integers(0, len(probes), n_pairs)
    keep = np.linalg.norm(probes[i] - probes[j], axis=1) > 1e-12
    x, y = probes[i[keep]], probes[j[keep]]
    dist = np.linalg.norm(x - y, axis=1)
    report = CheckReport()
    lip_b = np.max(np.linalg.norm(model.drift(x) - model.drift(y), axis=1) / dist, initial=0.0)
    report.add("lip_b", lip_b, model.lip_b, lip_b <= model.lip_b + 1e-9)
    cinv = np.linalg.inv(model.C)
    if model.h0 is not None:
        g = lambda z: model.h0(z) @ cinv.T  # noqa: E731
        lip_h0 = np.max(np.linalg.norm(g(x) - g(y), axis=1) / dist, initial=0.0)
    else:
        lip_h0 = 0.0
    report.add("lip_cinv_h0", lip_h0, model.lip_cinv_h0, lip_h0 <= model.lip_cinv_h0 + 1e-9)
    sig = model.diffusion(probes)
    trace = float(np.max(np.einsum("mqp,mqp->m", sig, sig)))
    report.add("trace_sigma", trace, model.trace_bound, trace <= model.trace_bound + 1e-9)
    return report
