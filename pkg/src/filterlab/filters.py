"""Filtering algorithms evaluated on the observation grid.

Functional entry points (``kalman_bucy_run``, ``particle_filter_run``, ...)
do the work; :class:`KalmanBucyFilter` and :class:`ParticleFilter` wrap
them as scikit-learn style estimators whose ``fit`` consumes an
:class:`~filterlab.models.ObservationPath`.
"""
from dataclasses import dataclass

import numpy as np
from numba import njit
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import as_points
from .exceptions import AllWeightsZero, DimensionMismatch, SingularInnovation, ZeroLikelihood
from .measures import (DiscreteMeasure, GaussianMeasure, log_normalize, normalize,
                       normalize_log, sample)
from .models import DiffusionModel, LinearGaussianModel, ObservationPath, em_step
from .rng import as_generator


@dataclass(frozen=True, eq=False)
class KalmanState:
    t: float
    mean: np.ndarray
    cov: np.ndarray

    def as_measure(self):
        return GaussianMeasure(self.mean, self.cov)


@dataclass(frozen=True, eq=False)
class ParticleState:
    t: float
    measure: DiscreteMeasure
    log_weights: np.ndarray
    ess: float


@njit(cache=True)
def _riccati_rhs(P, A, BBt, CtRinvC):
    return A @ P + P @ A.T + BBt - P @ CtRinvC @ P


@njit(cache=True)
def _kalman_bucy_kernel(m0, P0, dts, dys, A, C, BBt, CtRinv, CtRinvC):
    n = dts.shape[0]
    means = np.empty((n + 1, m0.shape[0]))
    covs = np.empty((n + 1, P0.shape[0], P0.shape[1]))
    m, P = m0.copy(), P0.copy()
    means[0], covs[0] = m, P
    for i in range(n):
        dt = dts[i]
        gain = P @ CtRinv
        m = m + A @ m * dt + gain @ (dys[i] - C @ m * dt)
        k1 = _riccati_rhs(P, A, BBt, CtRinvC)
        k2 = _riccati_rhs(P + 0.5 * dt * k1, A, BBt, CtRinvC)
        k3 = _riccati_rhs(P + 0.5 * dt * k2, A, BBt, CtRinvC)
        k4 = _riccati_rhs(P + dt * k3, A, BBt, CtRinvC)
        P = P + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        P = 0.5 * (P + P.T)
        means[i + 1], covs[i + 1] = m, P
    return means, covs


def _innovation_inverse(model):
    R = model.R
    try:
        np.linalg.cholesky(R)
    except np.linalg.LinAlgError:
        raise SingularInnovation("D D^T is not invertible") from None
    return np.linalg.inv(R)


def kalman_bucy_run(model, prior, path):
    """Kalman-Bucy filter on the grid of ``path``.

    The Riccati equation is advanced by one RK4 step per observation
    interval; the mean takes an Euler step driven by the observed
    increment with the gain at the left endpoint.
    """
    if path.dim != model.obs_dim or prior.dim != model.state_dim:
        raise DimensionMismatch("prior/path dimensions do not match the model")
    Rinv = _innovation_inverse(model)
    A, C = model.A, model.C
    BBt = model.B @ model.B.T
    CtRinv = C.T @ Rinv
    CtRinvC = CtRinv @ C
    m0 = np.array(prior.mean, dtype=float)
    P0 = np.array(prior.covariance, dtype=float)
    c = np.ascontiguousarray
    means, covs = _kalman_bucy_kernel(m0, P0, c(path.dt), c(path.increments), c(A), c(C), c(BBt),
                                      c(CtRinv), c(CtRinvC))
    states = [KalmanState(float(t), m, P) for t, m, P in zip(path.times, means, covs)]
    return states


def systematic_resample(weights, u, n_out=None):
    """Ancestor indices for systematic resampling with a single uniform ``u``."""
    w = np.asarray(weights, dtype=float)
    n = w.shape[0] if n_out is None else int(n_out)
    positions = (u + np.arange(n)) / n
    cdf = np.cumsum(w)
    cdf[-1] = 1.0
    return np.minimum(np.searchsorted(cdf, positions, side="right"), w.shape[0] - 1)


def _draw_prior(prior, n, d, rng):
    if callable(prior) and not isinstance(prior, (DiscreteMeasure, GaussianMeasure)):
        x = as_points(prior(n, rng))
    else:
        x = sample(prior, n, rng)
    if x.shape != (n, d):
        raise DimensionMismatch(f"prior draws have shape {x.shape}, expected {(n, d)}")
    return x


def particle_filter_run(model, prior, path, n_particles, rng, resample_threshold=0.5,
                        record_every=1):
    """Bootstrap particle filter for continuous-time observations.

    Per interval: log-weights gain h^T R^{-1} dY - 0.5 h^T R^{-1} h dt with
    h evaluated at the particles (left endpoint), weights are normalized,
    the cloud is resampled systematically when ESS < threshold * N, and
    then every particle moves by one signal step (exact Gaussian
    transition for linear models, Euler-Maruyama for diffusions).

    Returns the states at every ``record_every``-th grid time and at the
    final time.
    """
    n = int(n_particles)
    if n < 2:
        raise ValueError("need at least two particles")
    rng = as_generator(rng)
    Rinv = _innovation_inverse(model)
    d = model.state_dim
    if isinstance(model, LinearGaussianModel):
        phi_cache = {}

        def move(x, dt):
            key = round(float(dt), 15)
            if key not in phi_cache:
                phi, Q = model.transition(dt)
                vals, vecs = np.linalg.eigh(Q)
                phi_cache[key] = (phi, vecs * np.sqrt(np.clip(vals, 0.0, None)))
            phi, q_sqrt = phi_cache[key]
            return x @ phi.T + rng.standard_normal(x.shape) @ q_sqrt.T
    elif isinstance(model, DiffusionModel):
        def move(x, dt):
            return em_step(model, x, dt, rng)
    else:
        raise TypeError(f"unsupported model {type(model).__name__}")

    x = _draw_prior(prior, n, d, rng)
    logw = np.full(n, -np.log(n))

    def snapshot(t):
        w = np.exp(logw)
        w = normalize(w)
        return ParticleState(float(t), DiscreteMeasure(x, w), logw.copy(), float(1.0 / np.sum(w * w)))

    states = [snapshot(0.0)]
    steps = len(path) - 1
    for i in range(steps):
        dt = path.dt[i]
        dy = path.increments[i]
        hx = model.h(x)
        hR = hx @ Rinv
        logw = logw + hR @ dy - 0.5 * np.sum(hR * hx, axis=1) * dt
        try:
            logw = log_normalize(logw)
        except AllWeightsZero:
            raise AllWeightsZero(step=i + 1) from None
        w = np.exp(logw)
        ess = 1.0 / np.sum(w * w)
        if ess < resample_threshold * n:
            idx = systematic_resample(w, rng.random())
            x = x[idx]
            logw = np.full(n, -np.log(n))
        x = move(x, dt)
        if (i + 1) % record_every == 0 or i + 1 == steps:
            states.append(snapshot(path.times[i + 1]))
    return states


def example12_log_likelihood(atoms, path, lam, upto):
    """Log-likelihood of initial states ``atoms`` given Y on [0, t_upto].

    Uses the left-endpoint sum for int e^{-lam s} dY_s and the closed form
    for int e^{-2 lam s} ds.
    """
    x = np.asarray(atoms, dtype=float).ravel()
    t = path.times[upto]
    weights = np.exp(-lam * path.times[:upto])
    z = float(weights @ path.increments[:upto, 0])
    quad = (1.0 - np.exp(-2.0 * lam * t)) / (2.0 * lam)
    return z / x - 0.5 * quad / x ** 2, z


def grid_filter_example12(model, prior, path, t):
    """Exact filter for the exponential-growth model at grid time ``t``.

    X_0 determines the whole signal, so the filter is the Bayes reweighting
    of the prior atoms pushed forward by x -> x e^{lam t}.
    """
    if np.any(prior.atoms < 1):
        raise ValueError("prior must be supported on [1, inf)")
    i = path.index_of(t)
    loglik, _ = example12_log_likelihood(prior.atoms, path, model.lam, i)
    with np.errstate(divide="ignore"):
        logw = np.log(prior.weights) + loglik
    w = normalize_log(logw)
    return DiscreteMeasure(prior.atoms * np.exp(model.lam * path.times[i]), w)


def limit_posterior_example12(prior, Z, lam, f):
    """Posterior mean of f(X_0) given the whole observation path.

    ``Z`` stands for int_0^inf e^{-lam s} dY_s; the time integral is 1/(2 lam).
    """
    x = prior.atoms[:, 0]
    with np.errstate(divide="ignore"):
        logw = np.log(prior.weights) + Z / x - 0.25 / (lam * x ** 2)
    w = normalize_log(logw)
    fx = np.asarray(f(x), dtype=float)
    return float(w @ fx)


def predictor_step_discrete(pi, y, model, rng=None, flat=False, exact=False, n_out=None):
    """One-step predictor update: assimilate ``y`` then move one kernel step.

    Atoms are weighted by the noise density at y - h(x). With ``exact``
    (finite chains with a kernel matrix) the predicted law is computed in
    closed form on the model's states; otherwise the weighted cloud is
    resampled systematically to ``n_out`` atoms (default: current size)
    and each atom takes one sampled kernel move. In one dimension the
    atoms are sorted first, so ancestor i is the i-th weighted quantile:
    two predictors driven by the same stream then stay quantile-coupled.
    """
    if flat:
        w = np.array(pi.weights)
    else:
        y = np.atleast_1d(np.asarray(y, dtype=float)).reshape(1, -1)
        resid = y - model.h(np.array(pi.atoms))
        with np.errstate(divide="ignore"):
            logw = np.log(pi.weights) + model.noise.logpdf(resid)
        w = normalize_log(logw)
    if exact:
        if model.kernel_matrix is None:
            raise ValueError("exact propagation needs a kernel matrix")
        if pi.atoms.shape != model.states.shape or np.any(pi.atoms != model.states):
            raise ValueError("measure atoms must be the chain states, in order")
        return DiscreteMeasure(model.states, normalize(w @ model.kernel_matrix))
    rng = as_generator(rng)
    n = int(n_out or len(pi))
    atoms = np.array(pi.atoms)
    if atoms.shape[1] == 1:
        order = np.argsort(atoms[:, 0], kind="stable")
        atoms, w = atoms[order], w[order]
    idx = systematic_resample(w, rng.random(), n)
    moved = model.step(atoms[idx], rng)
    return DiscreteMeasure(moved, np.full(n, 1.0 / n))


def finite_hmm_forward(model, prior, observations):
    """Normalized forward recursion: row k is P(X_k | Y_0..Y_k)."""
    prior = np.asarray(prior, dtype=float)
    if prior.shape != (model.n_states,):
        raise DimensionMismatch("prior must have one entry per state")
    rows = []
    pred = prior
    for k, y in enumerate(observations):
        unnorm = pred * model.emission[:, int(y)]
        total = unnorm.sum()
        if total <= 0:
            raise ZeroLikelihood(f"observation {y} at step {k} has zero probability")
        filt = unnorm / total
        rows.append(filt)
        pred = filt @ model.transition
    return np.array(rows)


@dataclass(eq=False)
class StabilityPair:
    """Two filters driven by one shared observation path."""

    path: ObservationPath
    filter_mu: list
    filter_nu: list

    @property
    def path_hash(self):
        return self.path.content_hash()


class KalmanBucyFilter(BaseEstimator):
    """Kalman-Bucy filter as an estimator.

    ``fit(path)`` runs the filter over an observation path; ``predict``
    returns posterior means at grid times.
    """

    def __init__(self, A=0.0, B=0.0, C=1.0, D=1.0, prior_mean=0.0, prior_cov=1.0):
        self.A = A
        self.B = B
        self.C = C
        self.D = D
        self.prior_mean = prior_mean
        self.prior_cov = prior_cov

    def _model(self):
        return LinearGaussianModel(self.A, self.B, self.C, self.D)

    def fit(self, path, y=None):
        model = self._model()
        prior = GaussianMeasure(np.atleast_1d(self.prior_mean), np.atleast_2d(self.prior_cov))
        self.states_ = kalman_bucy_run(model, prior, path)
        self.times_ = np.array([s.t for s in self.states_])
        self.means_ = np.array([s.mean for s in self.states_])
        self.covariances_ = np.array([s.cov for s in self.states_])
        return self

    def predict(self, times=None):
        check_is_fitted(self, "states_")
        if times is None:
            return self.means_
        idx = [int(np.argmin(np.abs(self.times_ - t))) for t in np.atleast_1d(times)]
        return self.means_[idx]


class ParticleFilter(BaseEstimator):
    """Bootstrap particle filter as an estimator over a fixed model."""

    def __init__(self, model=None, prior=None, n_particles=1000, resample_threshold=0.5,
                 record_every=1, random_state=None):
        self.model = model
        self.prior = prior
        self.n_particles = n_particles
        self.resample_threshold = resample_threshold
        self.record_every = record_every
        self.random_state = random_state

    def fit(self, path, y=None):
        self.states_ = particle_filter_run(self.model, self.prior, path, self.n_particles,
                                           as_generator(self.random_state),
                                           self.resample_threshold, self.record_every)
        self.times_ = np.array([s.t for s in self.states_])
        self.means_ = np.array([s.measure.mean() for s in self.states_])
        self.ess_ = np.array([s.ess for s in self.states_])
        return self

    def predict(self, times=None):
        check_is_fitted(self, "states_")
        if times is None:
            return self.means_
        idx = [int(np.argmin(np.abs(self.times_ - t))) for t in np.atleast_1d(times)]
        return self.means_[idx]
