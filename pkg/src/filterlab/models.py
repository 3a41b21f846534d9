"""Signal/observation models and their path simulators.

Continuous-time models observe ``dY = h(X) dt + D dV`` and store the
cumulative observation ``Y`` on a grid starting from ``Y_0 = 0``.
"""
import csv
import hashlib
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import expm

from ._validation import as_matrix, as_points, as_vector, check_positive, check_stochastic
from .exceptions import DimensionMismatch, InvalidModel, NonFiniteState
from .measures import DiscreteMeasure, GaussianMeasure, GaussianNoise, sample


def _n_steps(horizon, dt):
    horizon = float(horizon)
    dt = check_positive(dt, "dt")
    n = int(round(horizon / dt))
    if n < 1 or abs(n * dt - horizon) > 1e-9 * max(1.0, horizon):
        raise ValueError(f"dt={dt} does not divide horizon={horizon}")
    return n


def van_loan(A, BBt, dt):
    """Exact discretization ``(exp(A dt), int_0^dt e^{As} BB^T e^{A^T s} ds)``."""
    d = A.shape[0]
    block = np.zeros((2 * d, 2 * d))
    block[:d, :d] = A
    block[:d, d:] = BBt
    block[d:, d:] = -A.T
    e = expm(block * dt)
    phi = e[:d, :d]
    q = e[:d, d:] @ phi.T
    return phi, 0.5 * (q + q.T)


def integrated_exponential(A, t):
    """``int_0^t exp(A s) ds`` via the augmented matrix exponential."""
    d = A.shape[0]
    block = np.zeros((2 * d, 2 * d))
    block[:d, :d] = A
    block[:d, d:] = np.eye(d)
    return expm(block * t)[:d, d:]


@dataclass(frozen=True, eq=False)
class ObservationPath:
    """Cumulative observations ``Y`` on a strictly increasing grid from t=0."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = as_vector(self.times, "times")
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        if values.shape[0] != times.shape[0]:
            raise DimensionMismatch("times and values lengths differ")
        if times[0] != 0.0 or np.any(np.diff(times) <= 0):
            raise ValueError("time grid must start at 0 and increase strictly")
        if np.any(values[0] != 0.0):
            raise ValueError("observation path must start at Y_0 = 0")
        times = times.copy()
        values = values.copy()
        times.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_increments(cls, times, increments):
        inc = np.asarray(increments, dtype=float)
        if inc.ndim == 1:
            inc = inc.reshape(-1, 1)
        values = np.vstack([np.zeros((1, inc.shape[1])), np.cumsum(inc, axis=0)])
        return cls(times, values)

    @property
    def increments(self):
        return np.diff(self.values, axis=0)

    @property
    def dt(self):
        return np.diff(self.times)

    @property
    def dim(self):
        return self.values.shape[1]

    def __len__(self):
        return self.times.shape[0]

    def content_hash(self):
        h = hashlib.sha256()
        h.update(self.times.tobytes())
        h.update(self.values.tobytes())
        return h.hexdigest()[:16]

    def index_of(self, t, tol=1e-9):
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > tol * max(1.0, abs(t)):
            raise ValueError(f"t={t} is not on the observation grid")
        return i


def write_path_csv(path, times, signal, obs):
    """Write ``t, x_0.., y_0..`` rows; ``signal`` may be None."""
    obs = np.asarray(obs).reshape(len(times), -1)
    cols = ["t"]
    if signal is not None:
        signal = np.asarray(signal).reshape(len(times), -1)
        cols += [f"x_{j}" for j in range(signal.shape[1])]
    cols += [f"y_{j}" for j in range(obs.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for i, t in enumerate(times):
            row = [repr(float(t))]
            if signal is not None:
                row += [repr(float(v)) for v in signal[i]]
            row += [repr(float(v)) for v in obs[i]]
            w.writerow(row)


@dataclass(frozen=True, eq=False)
class LinearGaussianModel:
    """dX = AX dt + B dW, dY = CX dt + D dV."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        A = as_matrix(self.A, "A")
        d = A.shape[0]
        if A.shape != (d, d):
            raise DimensionMismatch("A must be square")
        B = as_matrix(self.B, "B")
        C = as_matrix(self.C, "C", shape=(None, d))
        D = as_matrix(self.D, "D", shape=(C.shape[0], None))
        if B.shape[0] != d:
            raise DimensionMismatch("B must have d rows")
        for name, val in (("A", A), ("B", B), ("C", C), ("D", D)):
            object.__setattr__(self, name, val)

    @property
    def state_dim(self):
        return self.A.shape[0]

    @property
    def obs_dim(self):
        return self.C.shape[0]

    @property
    def R(self):
        return self.D @ self.D.T

    def transition(self, dt):
        return van_loan(self.A, self.B @ self.B.T, dt)

    def h(self, x):
        return x @ self.C.T


@dataclass(frozen=True, eq=False)
class DiffusionModel:
    """dX = b(X) dt + sigma(X) dW, dY = (C X + h0(X)) dt + D dV.

    ``drift`` maps (m, q) -> (m, q); ``diffusion`` maps (m, q) -> (m, q, p).
    The Lipschitz constants are declared by the caller (they cannot be
    inferred over all of R^q) and checked on probe points by
    :func:`filterlab.diagnostics.validate_declared_constants`.
    """

    drift: Callable
    diffusion: Callable
    C: np.ndarray
    D: np.ndarray
    h0: Callable = None
    lip_b: float = 0.0
    trace_bound: float = 0.0
    lip_cinv_h0: float = 0.0
    lip_h: float = None

    def __post_init__(self):
        C = as_matrix(self.C, "C")
        if C.shape[0] != C.shape[1]:
            raise DimensionMismatch("C must be square")
        D = as_matrix(self.D, "D", shape=(C.shape[0], None))
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "D", D)
        if self.lip_b < 0 or self.trace_bound < 0 or self.lip_cinv_h0 < 0:
            raise InvalidModel("declared constants must be nonnegative")

    @property
    def state_dim(self):
        return self.C.shape[0]

    @property
    def obs_dim(self):
        return self.C.shape[0]

    @property
    def R(self):
        return self.D @ self.D.T

    def h(self, x):
        out = x @ self.C.T
        if self.h0 is not None:
            out = out + self.h0(x)
        return out

    def check_observable_class(self):
        """Raise unless C is invertible and ||C^{-1} h0||_L < 1."""
        if abs(np.linalg.det(self.C)) < 1e-12:
            raise InvalidModel("C must be invertible")
        if not self.lip_cinv_h0 < 1:
            raise InvalidModel(f"declared ||C^-1 h0||_L = {self.lip_cinv_h0} is not < 1")
        return True

    def declared_lip_h(self):
        if self.lip_h is not None:
            return float(self.lip_h)
        norm_c = np.linalg.norm(self.C, 2)
        return float(norm_c * (1.0 + self.lip_cinv_h0))


def constant_diffusion(sigma):
    """Diffusion coefficient that ignores the state."""
    sigma = as_matrix(sigma, "sigma")

    def fn(x):
        return np.broadcast_to(sigma, (x.shape[0],) + sigma.shape)

    return fn


def linear_drift(matrix):
    matrix = as_matrix(matrix, "drift matrix")

    def fn(x):
        return x @ matrix.T

    return fn


def zero_map(x):
    return np.zeros_like(x)


@dataclass(frozen=True)
class Example12Model:
    """Deterministic exponential growth X_t = X_0 e^{lam t} on [1, inf), h(x) = 1/x."""

    lam: float

    def __post_init__(self):
        check_positive(self.lam, "lam")

    def signal(self, x0, t):
        return np.asarray(x0, dtype=float) * np.exp(self.lam * np.asarray(t, dtype=float))


@dataclass(frozen=True, eq=False)
class DiscreteChainModel:
    """Markov chain X_{n+1} ~ P(X_n, .) observed as Y_n = h(X_n) + xi_n.

    ``step(x, rng)`` draws one kernel move for every row of ``x``. A chain
    on finitely many ``states`` may also give ``kernel_matrix`` so that
    predictors can propagate exactly.
    """

    step: Callable
    h: Callable
    noise: GaussianNoise
    states: np.ndarray = None
    kernel_matrix: np.ndarray = None
    h_inverse_lipschitz: float = None

    def __post_init__(self):
        eig = np.linalg.eigvalsh(self.noise.covariance)
        if eig.min() <= 0:
            raise InvalidModel("observation noise must be nondegenerate")
        if self.kernel_matrix is not None:
            P = check_stochastic(self.kernel_matrix, "kernel_matrix")
            states = as_points(self.states, "states")
            if P.shape != (states.shape[0], states.shape[0]):
                raise DimensionMismatch("kernel_matrix must be s x s")
            object.__setattr__(self, "kernel_matrix", P)
            object.__setattr__(self, "states", states)


def ar1_chain(a, noise_std=1.0, h=None, xi=None, h_inverse_lipschitz=None):
    """Scalar AR(1) chain x' = a x + noise_std * N(0, 1)."""
    a = float(a)
    noise_std = float(noise_std)

    def step(x, rng):
        return a * x + noise_std * rng.standard_normal(x.shape)

    return DiscreteChainModel(step=step, h=h if h is not None else (lambda x: x),
                              noise=xi if xi is not None else GaussianNoise.standard(1),
                              h_inverse_lipschitz=h_inverse_lipschitz)


@dataclass(frozen=True, eq=False)
class FiniteHMM:
    """Finite-state chain with discrete emissions (rows stochastic)."""

    transition: np.ndarray
    emission: np.ndarray

    def __post_init__(self):
        T = check_stochastic(self.transition, "transition")
        E = check_stochastic(self.emission, "emission")
        if T.shape[0] != T.shape[1] or E.shape[0] != T.shape[0]:
            raise DimensionMismatch("transition must be s x s and emission s x o")
        object.__setattr__(self, "transition", T)
        object.__setattr__(self, "emission", E)

    @property
    def n_states(self):
        return self.transition.shape[0]

    @property
    def n_symbols(self):
        return self.emission.shape[1]


def _initial_states(prior, m, d, rng):
    if isinstance(prior, (DiscreteMeasure, GaussianMeasure)):
        if prior.dim != d:
            raise DimensionMismatch("prior dimension does not match the model")
        return sample(prior, m, rng)
    x0 = np.asarray(prior, dtype=float)
    if x0.ndim <= 1:
        x0 = np.broadcast_to(np.atleast_1d(x0).reshape(1, -1), (m, d))
    if x0.shape != (m, d):
        raise DimensionMismatch(f"initial state shape {x0.shape}, expected {(m, d)}")
    return np.array(x0, dtype=float)


def simulate_linear_gaussian_batch(model, prior, horizon, dt, rng, n_paths=1):
    """Simulate ``n_paths`` independent paths.

    Returns ``(times, X, Y)`` with X of shape (n+1, m, d) and Y (n+1, m, q).
    The signal uses the exact Gaussian transition; the observation integral
    uses the left endpoint.
    """
    n = _n_steps(horizon, dt)
    d, q = model.state_dim, model.obs_dim
    phi, Q = model.transition(dt)
    vals, vecs = np.linalg.eigh(Q)
    q_sqrt = vecs * np.sqrt(np.clip(vals, 0.0, None))
    r = model.D.shape[1]
    X = np.empty((n + 1, n_paths, d))
    Y = np.zeros((n + 1, n_paths, q))
    X[0] = _initial_states(prior, n_paths, d, rng)
    sdt = np.sqrt(dt)
    for i in range(n):
        x = X[i]
        obs_noise = rng.standard_normal((n_paths, r)) @ model.D.T * sdt
        Y[i + 1] = Y[i] + x @ model.C.T * dt + obs_noise
        X[i + 1] = x @ phi.T + rng.standard_normal((n_paths, d)) @ q_sqrt.T
    times = dt * np.arange(n + 1)
    return times, X, Y


def simulate_linear_gaussian(model, prior, horizon, dt, rng):
    """One path: ``(signal array (n+1, d), ObservationPath)``."""
    times, X, Y = simulate_linear_gaussian_batch(model, prior, horizon, dt, rng, 1)
    return X[:, 0, :], ObservationPath(times, Y[:, 0, :])


def _check_finite(x, step):
    if not np.all(np.isfinite(x)):
        raise NonFiniteState(f"state left the representable range at step {step}")


def em_step(model, x, dt, rng):
    """One Euler-Maruyama move of the signal for each row of ``x``."""
    sig = model.diffusion(x)
    dw = rng.standard_normal((x.shape[0], sig.shape[2])) * np.sqrt(dt)
    return x + model.drift(x) * dt + np.einsum("mqp,mp->mq", sig, dw)


def simulate_diffusion_batch(model, x0, horizon, dt, rng, n_paths=1):
    """Euler-Maruyama for signal and observation; returns ``(times, X, Y)``."""
    n = _n_steps(horizon, dt)
    if dt > 0.1 / max(1.0, model.lip_b) + 1e-15:
        raise ValueError(f"dt={dt} too large for drift Lipschitz constant {model.lip_b}")
    q = model.state_dim
    r = model.D.shape[1]
    X = np.empty((n + 1, n_paths, q))
    Y = np.zeros((n + 1, n_paths, q))
    X[0] = _initial_states(x0, n_paths, q, rng)
    sdt = np.sqrt(dt)
    for i in range(n):
        x = X[i]
        obs_noise = rng.standard_normal((n_paths, r)) @ model.D.T * sdt
        Y[i + 1] = Y[i] + model.h(x) * dt + obs_noise
        X[i + 1] = em_step(model, x, dt, rng)
        _check_finite(X[i + 1], i + 1)
    return dt * np.arange(n + 1), X, Y


def simulate_diffusion(model, x0, horizon, dt, rng):
    times, X, Y = simulate_diffusion_batch(model, x0, horizon, dt, rng, 1)
    return X[:, 0, :], ObservationPath(times, Y[:, 0, :])


def simulate_example12(model, x0, horizon, dt, rng, noise=True):
    """Observation path for the exponential-growth model.

    The drift part of each increment is integrated exactly; the signal is
    never discretized (it is ``model.signal(x0, t)``).
    """
    x0 = float(x0)
    if x0 < 1:
        raise ValueError("x0 must be >= 1")
    n = _n_steps(horizon, dt)
    lam = model.lam
    times = dt * np.arange(n + 1)
    drift = (np.exp(-lam * times[:-1]) - np.exp(-lam * times[1:])) / (lam * x0)
    inc = drift
    if noise:
        inc = drift + np.sqrt(dt) * rng.standard_normal(n)
    return ObservationPath.from_increments(times, inc)


def eta_flow(b, x, t, substeps=100):
    """Deterministic flow x -> eta_t(x) of dx/dt = b(x) by classical RK4.

    ``x`` may be a single point or an (m, q) batch; ``b`` must accept the
    same shape.
    """
    t = float(t)
    if t < 0:
        raise ValueError("t must be nonnegative")
    x = np.array(x, dtype=float)
    if t == 0:
        return x
    h = t / int(substeps)
    for _ in range(int(substeps)):
        k1 = b(x)
        k2 = b(x + 0.5 * h * k1)
        k3 = b(x + 0.5 * h * k2)
        k4 = b(x + h * k3)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


def step_discrete_chain(model, x, rng):
    """Advance the chain one step and observe the new state: ``(x', y)``."""
    x = as_points(x)
    x_next = model.step(x, rng)
    L = model.noise.sqrt_covariance()
    y = model.h(x_next) + model.noise.mean + rng.standard_normal(x_next.shape) @ L.T
    return x_next, y


def simulate_chain(model, x0, n_steps, rng):
    """States X_0..X_n and observations Y_0..Y_n with Y_k = h(X_k) + xi_k."""
    x = as_points(x0)
    L = model.noise.sqrt_covariance()
    xs = [x]
    ys = [model.h(x) + model.noise.mean + rng.standard_normal(x.shape) @ L.T]
    for _ in range(int(n_steps)):
        x, y = step_discrete_chain(model, x, rng)
        xs.append(x)
        ys.append(y)
    return np.stack(xs), np.stack(ys)


def simulate_finite_hmm(model, prior, n_steps, rng):
    """States and symbols for n_steps+1 times (sampled by inverse CDF)."""
    prior = np.asarray(prior, dtype=float)
    s = model.n_states
    states = np.empty(n_steps + 1, dtype=int)
    symbols = np.empty(n_steps + 1, dtype=int)
    x = int(np.searchsorted(np.cumsum(prior), rng.random(), side="right"))
    for k in range(n_steps + 1):
        x = min(x, s - 1)
        states[k] = x
        symbols[k] = min(int(np.searchsorted(np.cumsum(model.emission[x]), rng.random(), side="right")),
                         model.n_symbols - 1)
        x = int(np.searchsorted(np.cumsum(model.transition[x]), rng.random(), side="right"))
    return states, symbols
