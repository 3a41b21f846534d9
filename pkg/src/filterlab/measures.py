"""Finitely supported and Gaussian probability measures on R^d.

All measure objects are immutable once built: their arrays are flagged
read-only so they can be shared freely between filters and threads.
"""
import csv
from dataclasses import dataclass

import numpy as np

from ._validation import as_points, as_vector, check_covariance
from .exceptions import AllWeightsZero, DimensionMismatch, SingularNoise

WEIGHT_SUM_TOL = 1e-12


def _frozen(arr):
    arr = np.array(arr, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


def normalize(raw_weights):
    """Rescale nonnegative weights to sum to one.

    >>> normalize([1, 1, 2]).tolist()
    [0.25, 0.25, 0.5]
    """
    w = np.asarray(raw_weights, dtype=float)
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    total = w.sum()
    if not total > 0:
        raise AllWeightsZero()
    out = w / total
    # one extra pass pulls the sum to within a few ulps of 1
    return out / out.sum()


def normalize_log(log_weights):
    """Normalize weights given in log-space (max subtracted before exp)."""
    lw = np.asarray(log_weights, dtype=float)
    if lw.size == 0 or np.all(lw == -np.inf):
        raise AllWeightsZero()
    if np.any(np.isnan(lw)) or np.any(lw == np.inf):
        raise AllWeightsZero("log-weights are not finite")
    return normalize(np.exp(lw - lw.max()))


def log_normalize(log_weights):
    """Return log of the normalized weights (log-sum-exp)."""
    lw = np.asarray(log_weights, dtype=float)
    top = lw.max()
    if not np.isfinite(top):
        raise AllWeightsZero()
    return lw - (top + np.log(np.exp(lw - top).sum()))


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Weighted point masses ``sum_i w_i delta_{x_i}`` on R^d.

    ``atoms`` has shape (n, d). Coinciding atoms are kept as separate
    entries; nothing is ever merged.
    """

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = as_points(self.atoms, "atoms")
        weights = as_vector(self.weights, "weights")
        if atoms.shape[0] != weights.shape[0]:
            raise DimensionMismatch(
                f"{atoms.shape[0]} atoms but {weights.shape[0]} weights")
        if np.any(weights < 0):
            raise ValueError("weights must be nonnegative")
        if abs(weights.sum() - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(f"weights sum to {weights.sum()!r}, not 1")
        object.__setattr__(self, "atoms", _frozen(atoms))
        object.__setattr__(self, "weights", _frozen(weights))

    @classmethod
    def from_points(cls, points, weights=None):
        """Build from raw points; weights default to uniform and are normalized."""
        pts = as_points(points)
        if weights is None:
            weights = np.ones(pts.shape[0])
        return cls(pts, normalize(weights))

    @classmethod
    def dirac(cls, x):
        return cls(as_points(np.atleast_1d(x)).reshape(1, -1), [1.0])

    @property
    def dim(self):
        return self.atoms.shape[1]

    def __len__(self):
        return self.atoms.shape[0]

    def expect(self, f):
        """Integral of ``f`` (vectorized over rows of the atom array)."""
        vals = np.asarray(f(self.atoms), dtype=float)
        return np.tensordot(self.weights, vals, axes=(0, 0))

    def mean(self):
        return self.weights @ self.atoms

    def covariance(self):
        centered = self.atoms - self.mean()
        return (centered * self.weights[:, None]).T @ centered

    def ess(self):
        return 1.0 / np.sum(self.weights ** 2)

    def to_csv(self, path):
        header = [f"atom_{j}" for j in range(self.dim)] + ["weight"]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for x, w in zip(self.atoms, self.weights):
                writer.writerow([repr(float(v)) for v in x] + [repr(float(w))])

    @classmethod
    def read_csv(cls, path):
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if not header or header[-1] != "weight" or any(
                    h != f"atom_{j}" for j, h in enumerate(header[:-1])):
                raise ValueError(f"unexpected header {header!r} in {path}")
            rows = [[float(v) for v in row] for row in reader if row]
        arr = np.array(rows, dtype=float)
        return cls(arr[:, :-1], arr[:, -1])


@dataclass(frozen=True, eq=False)
class GaussianMeasure:
    """Normal law N(mean, covariance); covariance may be singular."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = as_vector(self.mean, "mean")
        cov = check_covariance(self.covariance)
        if cov.shape[0] != mean.shape[0]:
            raise DimensionMismatch("mean and covariance dimensions differ")
        object.__setattr__(self, "mean", _frozen(mean))
        object.__setattr__(self, "covariance", _frozen(0.5 * (cov + cov.T)))

    @property
    def dim(self):
        return self.mean.shape[0]

    def sqrt_covariance(self):
        """A factor L with L L^T = covariance, valid for singular covariances."""
        vals, vecs = np.linalg.eigh(self.covariance)
        return vecs * np.sqrt(np.clip(vals, 0.0, None))

    def logpdf(self, y):
        """Log density at rows of ``y``; requires a nonsingular covariance."""
        y = as_points(y)
        if y.shape[1] != self.dim:
            raise DimensionMismatch("point dimension does not match")
        try:
            chol = np.linalg.cholesky(self.covariance)
        except np.linalg.LinAlgError:
            raise SingularNoise("covariance is not positive definite") from None
        z = np.linalg.solve(chol, (y - self.mean).T)
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        return -0.5 * (np.sum(z * z, axis=0) + logdet + self.dim * np.log(2 * np.pi))

    def pdf(self, y):
        return np.exp(self.logpdf(y))


class GaussianNoise(GaussianMeasure):
    """Additive Gaussian noise law (observation noise, convolution kernel)."""

    @classmethod
    def standard(cls, dim=1, variance=1.0):
        return cls(np.zeros(dim), variance * np.eye(dim))


def pushforward(mu, f):
    """Image measure of ``mu`` under ``f``; weights are carried over unchanged.

    ``f`` is called once on the (n, d) atom array and must return n rows.
    """
    image = as_points(f(np.array(mu.atoms)))
    if image.shape[0] != len(mu):
        raise DimensionMismatch("map must return one point per atom")
    return DiscreteMeasure(image, mu.weights)


def sample(measure, n, rng):
    """Draw ``n`` i.i.d. points, returned as an (n, d) array.

    Discrete measures use inverse-CDF lookup with one uniform per draw.
    """
    n = int(n)
    if n < 1:
        raise ValueError("n must be at least 1")
    if isinstance(measure, DiscreteMeasure):
        cdf = np.cumsum(measure.weights)
        u = rng.random(n)
        idx = np.searchsorted(cdf, u * cdf[-1], side="right")
        return np.array(measure.atoms[np.minimum(idx, len(measure) - 1)])
    if isinstance(measure, GaussianMeasure):
        z = rng.standard_normal((n, measure.dim))
        return measure.mean + z @ measure.sqrt_covariance().T
    raise TypeError(f"cannot sample from {type(measure).__name__}")


def convolved_density(mu, xi, y):
    """Density of ``mu * xi`` at point(s) ``y`` (a Gaussian mixture).

    Returns a scalar for a single point and an array for an (m, d) batch.
    """
    single = np.ndim(y) <= 1 and mu.dim == np.size(y)
    pts = as_points(y).reshape(-1, mu.dim)
    if xi.dim != mu.dim:
        raise DimensionMismatch("noise and measure dimensions differ")
    try:
        chol = np.linalg.cholesky(xi.covariance)
    except np.linalg.LinAlgError:
        raise SingularNoise("noise covariance is not positive definite") from None
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    const = -0.5 * (logdet + mu.dim * np.log(2 * np.pi))
    # residuals y_j - x_i - m, shape (m, n, d)
    resid = pts[:, None, :] - mu.atoms[None, :, :] - xi.mean
    z = np.linalg.solve(chol, resid.reshape(-1, mu.dim).T).T.reshape(resid.shape)
    dens = np.exp(const - 0.5 * np.sum(z * z, axis=2)) @ mu.weights
    return float(dens[0]) if single else dens


def reflect(xi):
    """Law of ``-Z`` for ``Z ~ xi``."""
    return type(xi)(-xi.mean, xi.covariance)
