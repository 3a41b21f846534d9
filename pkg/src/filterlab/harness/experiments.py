"""Merging and non-merging experiments.

Every experiment generates its observations under the first prior (mu)
and runs a second, misspecified filter (nu) on the very same path object.
Seeds are independent; each owns its named random streams.
"""
import csv
import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy.stats import norm, qmc

from ..filters import (StabilityPair, finite_hmm_forward, grid_filter_example12, kalman_bucy_run,
                       limit_posterior_example12, particle_filter_run, predictor_step_discrete)
from ..measures import DiscreteMeasure, GaussianMeasure, GaussianNoise, sample
from ..metrics import DEFAULT_CAP, metric_report, tv_convolved, tv_discrete, bl_distance_exact
from ..models import (DiffusionModel, Example12Model, LinearGaussianModel, simulate_chain, simulate_diffusion,
                      simulate_example12, simulate_linear_gaussian)
from ..oracles import hmm_joint_observation_law
from ..rng import stream

TRACE_COLUMNS = ("t", "bl", "bl_upper", "bl_lower", "tv", "mean_gap", "aux", "bl_method", "path_hash")


@dataclass
class StabilityTrace:
    seed: int
    prior_ids: tuple
    records: list = field(default_factory=list)
    pair: StabilityPair = field(default=None, repr=False)

    def column(self, name):
        return np.array([r[name] for r in self.records], dtype=float)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_COLUMNS)
            for r in self.records:
                w.writerow([_fmt(r[c]) for c in TRACE_COLUMNS])


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    return repr(float(v))


def _map_seeds(fn, seeds, workers):
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, seeds))
    return [fn(s) for s in seeds]


def gaussian_atoms(g, n_quasi=512):
    """Deterministic equal-weight discretization of a Gaussian.

    2d+1 sigma atoms (mean, mean +- sqrt(d) L e_j) plus ``n_quasi``
    quasi-random quantile atoms: midpoint quantiles in 1-d, an unscrambled
    Halton sequence mapped through the normal quantile otherwise.
    """
    d = g.dim
    L = g.sqrt_covariance()
    sig = [np.zeros(d)]
    for j in range(d):
        sig.append(math.sqrt(d) * np.eye(d)[j])
        sig.append(-math.sqrt(d) * np.eye(d)[j])
    if d == 1:
        u = (np.arange(n_quasi) + 0.5) / n_quasi
        z = norm.ppf(u).reshape(-1, 1)
    else:
        u = qmc.Halton(d, scramble=False).random(n_quasi + 1)[1:]
        z = norm.ppf(u)
    # sigma atoms are expressed in standardized coordinates like z
    std = np.vstack([np.array(sig), z])
    atoms = g.mean + std @ L.T
    return DiscreteMeasure(atoms, np.full(atoms.shape[0], 1.0 / atoms.shape[0]))


def _simulate_under_mu(cfg, seed):
    rng = stream(seed, "signal")
    model = cfg.model
    if isinstance(model, LinearGaussianModel):
        return simulate_linear_gaussian(model, cfg.prior_mu, cfg.horizon, cfg.dt, rng)
    if isinstance(model, DiffusionModel):
        x0 = sample(cfg.prior_mu, 1, stream(seed, "x0"))[0]
        return simulate_diffusion(model, x0, cfg.horizon, cfg.dt, rng)
    raise TypeError(f"stability experiments need a linear Gaussian or diffusion model, "
                    f"got {type(model).__name__}")


def run_stability(cfg):
    """One :class:`StabilityTrace` per seed for a Kalman-Bucy or particle filter pair."""
    if cfg.filter == "kalman" and not isinstance(cfg.model, LinearGaussianModel):
        raise ValueError("the Kalman-Bucy filter needs a linear Gaussian model")

    def one(seed):
        _, path = _simulate_under_mu(cfg, seed)
        metric_rng = stream(seed, "metrics")
        if cfg.filter == "kalman":
            run_mu = kalman_bucy_run(cfg.model, cfg.prior_mu, path)
            run_nu = kalman_bucy_run(cfg.model, cfg.prior_nu, path)
            idx = list(range(0, len(path), cfg.cadence))
            if idx[-1] != len(path) - 1:
                idx.append(len(path) - 1)
            pairs = [(run_mu[i], run_nu[i]) for i in idx]
        else:
            run_mu = particle_filter_run(cfg.model, cfg.prior_mu, path, cfg.particles,
                                         stream(seed, "filter"), record_every=cfg.cadence)
            run_nu = particle_filter_run(cfg.model, cfg.prior_nu, path, cfg.particles,
                                         stream(seed, "filter"), record_every=cfg.cadence)
            pairs = list(zip(run_mu, run_nu))
        pair = StabilityPair(path, run_mu, run_nu)
        path_hash = pair.path_hash
        trace = StabilityTrace(seed, ("mu", "nu"), pair=pair)
        for a, b in pairs:
            if cfg.filter == "kalman":
                ma, mb = gaussian_atoms(a.as_measure()), gaussian_atoms(b.as_measure())
                mean_gap = float(np.linalg.norm(a.mean - b.mean))
                aux = float(np.linalg.norm(a.cov - b.cov, 2))
            else:
                ma, mb = a.measure, b.measure
                mean_gap = float(np.linalg.norm(ma.mean() - mb.mean()))
                aux = min(a.ess, b.ess)
            rep = metric_report(ma, mb, metric_rng, cap=DEFAULT_CAP, trials=cfg.bl_trials)
            trace.records.append(dict(t=a.t, bl=rep.exact_bl, bl_upper=rep.bl_upper,
                                      bl_lower=rep.bl_lower, tv=rep.tv, mean_gap=mean_gap,
                                      aux=aux, bl_method=rep.method, path_hash=path_hash))
        return trace

    return _map_seeds(one, cfg.seeds, cfg.workers)


@dataclass
class CounterexampleResult:
    seed: int
    x0: float
    gaps: np.ndarray
    times: np.ndarray
    g_limit: float
    residual: float
    n_from: int


def _equivalent_discrete(mu, nu):
    if len(mu) != len(nu):
        return False
    a = np.sort(mu.atoms[:, 0])
    b = np.sort(nu.atoms[:, 0])
    return bool(np.all(a == b) and np.all(mu.weights > 0) and np.all(nu.weights > 0))


def counterexample_grid(lam, n_max, snap=1e-3, tail_tol=1e-9):
    """Step, horizon and step count for the non-merging experiment.

    The step divides one period 2 pi / lam exactly so every t_n is a grid
    time, and is small enough that snapping would cost at most 1e-3 / lam.
    The horizon covers t_{n_max} and makes the truncated tail of
    int e^{-lam s} dY_s negligible (drift and noise scale below tail_tol).
    """
    period = 2 * math.pi / lam
    per_period = math.ceil(period / (2 * snap / lam))
    dt = period / per_period
    t_tail = max(math.log(1.0 / (lam * tail_tol)) / lam,
                 math.log(1.0 / (2 * lam * tail_tol)) / (2 * lam))
    periods = max(int(n_max), math.ceil(t_tail / period))
    return dt, periods * period, per_period


def run_counterexample(lam, mu, nu, n_max, seeds, n_from=5, workers=1):
    """Filter gaps g_n = pi^mu_{t_n}(f) - pi^nu_{t_n}(f) with f = cos(log x).

    Also returns the limiting gap from the closed-form posterior given the
    whole (truncated) path, and the residual max_{n >= n_from} |g_n - g_limit|.
    """
    if not _equivalent_discrete(mu, nu):
        raise ValueError("priors must charge exactly the same atoms")
    if np.any(mu.atoms < 1):
        raise ValueError("priors must be supported on [1, inf)")
    model = Example12Model(lam)
    dt, horizon, per_period = counterexample_grid(lam, n_max)

    def f(x):
        return np.cos(np.log(x))

    def one(seed):
        x0 = float(sample(mu, 1, stream(seed, "x0"))[0, 0])
        path = simulate_example12(model, x0, horizon, dt, stream(seed, "signal"))
        gaps, times = [], []
        for n in range(1, n_max + 1):
            t = path.times[n * per_period]
            pm = grid_filter_example12(model, mu, path, t)
            pn = grid_filter_example12(model, nu, path, t)
            gaps.append(pm.expect(lambda x: f(x[:, 0])) - pn.expect(lambda x: f(x[:, 0])))
            times.append(t)
        z = float(np.exp(-lam * path.times[:-1]) @ path.increments[:, 0])
        g_limit = limit_posterior_example12(mu, z, lam, f) - limit_posterior_example12(nu, z, lam, f)
        gaps = np.array(gaps)
        tail = np.abs(gaps[n_from - 1:] - g_limit)
        residual = float(tail.max()) if tail.size else float("nan")
        return CounterexampleResult(seed, x0, gaps, np.array(times), float(g_limit), residual, n_from)

    return _map_seeds(one, seeds, workers)


def check_invertible_observation(model, probes=None):
    """Probe-grid check that |h(x) - h(y)| >= |x - y| / L for the declared L."""
    if model.h_inverse_lipschitz is None:
        raise ValueError("observation map needs a declared inverse Lipschitz constant")
    probes = np.linspace(-50.0, 50.0, 20001) if probes is None else np.asarray(probes, float)
    x = probes.reshape(-1, 1)
    hx = np.asarray(model.h(x)).reshape(len(x), -1)
    slopes = np.linalg.norm(np.diff(hx, axis=0), axis=1) / np.abs(np.diff(x[:, 0]))
    if slopes.min() < 1.0 / model.h_inverse_lipschitz - 1e-9:
        raise ValueError(f"h is not invertible with inverse Lipschitz constant "
                         f"{model.h_inverse_lipschitz} on the probe grid")
    return float(slopes.min())


def run_predictor_merging(model, prior_mu, prior_nu, n_steps, n_particles, seeds, cadence=1,
                          workers=1, bl_trials=64):
    """BL distance between one-step predictors started from two priors.

    Observations Y_0..Y_n come from the chain started under ``prior_mu``.
    Both predictors start from N prior draws made with the same stream,
    assimilate Y_k and move one kernel step, so identical priors give
    identical clouds.
    """
    check_invertible_observation(model)

    def one(seed):
        x0 = sample(prior_mu, 1, stream(seed, "x0"))
        _, ys = simulate_chain(model, x0, n_steps, stream(seed, "signal"))
        path_hash = hashlib.sha256(np.ascontiguousarray(ys).tobytes()).hexdigest()[:16]
        pi_mu = DiscreteMeasure.from_points(sample(prior_mu, n_particles, stream(seed, "init")))
        pi_nu = DiscreteMeasure.from_points(sample(prior_nu, n_particles, stream(seed, "init")))
        rng_mu, rng_nu = stream(seed, "filter"), stream(seed, "filter")
        metric_rng = stream(seed, "metrics")
        trace = StabilityTrace(seed, ("mu", "nu"))
        for n in range(n_steps + 1):
            pi_mu = predictor_step_discrete(pi_mu, ys[n], model, rng_mu)
            pi_nu = predictor_step_discrete(pi_nu, ys[n], model, rng_nu)
            if n % cadence == 0 or n == n_steps:
                rep = metric_report(pi_mu, pi_nu, metric_rng, trials=bl_trials)
                trace.records.append(dict(
                    t=n, bl=rep.exact_bl, bl_upper=rep.bl_upper, bl_lower=rep.bl_lower, tv=rep.tv,
                    mean_gap=float(np.linalg.norm(pi_mu.mean() - pi_nu.mean())), aux=None,
                    bl_method=rep.method, path_hash=path_hash))
        return trace

    return _map_seeds(one, seeds, workers)


def run_convolution_merging(ns, xi=None):
    """Rows (n, bl, tv_discrete, tv_convolved, closed_form) for delta_{1/n} vs delta_0."""
    xi = xi if xi is not None else GaussianNoise.standard(1)
    nu = DiscreteMeasure.dirac([0.0])
    rows = []
    sd = math.sqrt(float(xi.covariance[0, 0]))
    for n in ns:
        mu = DiscreteMeasure.dirac([1.0 / n])
        closed = 2.0 * (2.0 * norm.cdf(1.0 / (2 * n * sd)) - 1.0)
        rows.append(dict(n=n, bl=bl_distance_exact(mu, nu), tv_discrete=tv_discrete(mu, nu),
                         tv_convolved=tv_convolved(mu, nu, xi), closed_form=closed))
    return rows


def run_lemma42_check(model, prior, t_max, k):
    """Max discrepancy between conditional future-observation laws.

    Left: P^mu(Y_{t+1..t+k} = . | Y_0..Y_t) from the full joint table.
    Right: law of (Y_1..Y_k) when the chain is restarted from the filter
    pi_t. Indicators of every k-tuple form a basis of the functionals, so
    the max over the table is the max over all bounded functionals.
    """
    if t_max + k > 8 or model.n_states > 3 or model.n_symbols > 3:
        raise ValueError("enumeration limited to 3 states, 3 symbols, t_max + k <= 8")
    prior = np.asarray(prior, dtype=float)
    worst = 0.0
    o = model.n_symbols
    for t in range(t_max + 1):
        for kk in range(1, k + 1):
            joint = hmm_joint_observation_law(model.transition, model.emission, prior, t + kk + 1)
            for prefix in product(range(o), repeat=t + 1):
                block = joint[prefix]
                p_prefix = block.sum()
                if p_prefix <= 1e-300:
                    continue
                left = block / p_prefix
                pi_t = finite_hmm_forward(model, prior, prefix)[-1]
                right = hmm_joint_observation_law(model.transition, model.emission, pi_t,
                                                  kk + 1).sum(axis=0)
                worst = max(worst, float(np.max(np.abs(left - right))))
    return worst
