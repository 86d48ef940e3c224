"""Gaussian-process traversability map over 2D positions.

Exact GP regression with a squared-exponential (RBF) kernel.  The Cholesky
factor of the noisy Gram matrix is cached and extended one row at a time as
observations arrive, so the common "add one, query the whole grid" cycle of
an episode costs O(n^2) for the update plus O(n q) for the query.  For a
query set that never changes (the grid), :class:`GridPosterior` also keeps
the whitened cross-covariances, extending them one row per observation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import InvalidArgument, NumericalError

log = logging.getLogger(__name__)

__all__ = ["GridPosterior", "Hyperparams", "PosteriorField", "TraversabilityGP", "kernel",
           "kernel_matrix"]

_JITTER_START = 1e-8
_JITTER_MAX = 1e-2


@dataclass(frozen=True)
class Hyperparams:
    """Kernel and noise hyperparameters.

    Parameters
    ----------
    signal_variance : float
        Prior variance of the latent traversability (sigma_f squared).
    length_scale : float
        RBF length scale, in world units.
    noise_variance : float
        Variance of the additive measurement noise assumed by the model.
    jitter : float
        Relative diagonal stabilizer; the absolute jitter added to the Gram
        diagonal is ``jitter * signal_variance``.
    prior_mean : float
        Constant prior mean.
    """

    signal_variance: float = 1.0
    length_scale: float = 1.0
    noise_variance: float = 0.0
    jitter: float = _JITTER_START
    prior_mean: float = 0.0

    def __post_init__(self):
        vals = (self.signal_variance, self.length_scale, self.noise_variance,
                self.jitter, self.prior_mean)
        if not all(np.isfinite(v) for v in vals):
            raise InvalidArgument("hyperparameters must be finite")
        if self.signal_variance < 0:
            raise InvalidArgument("signal_variance must be >= 0")
        if self.length_scale <= 0:
            raise InvalidArgument("length_scale must be > 0")
        if self.noise_variance < 0:
            raise InvalidArgument("noise_variance must be >= 0")
        if self.jitter <= 0:
            raise InvalidArgument("jitter must be > 0")


@dataclass(frozen=True)
class PosteriorField:
    means: np.ndarray
    variances: np.ndarray

    @property
    def stds(self) -> np.ndarray:
        return np.sqrt(self.variances)


def _as_points(x, name="points") -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise InvalidArgument(f"{name} must have shape (n, 2), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgument(f"{name} contain non-finite coordinates")
    return arr


def kernel(a, b, hp: Hyperparams) -> float:
    """RBF covariance between two points."""
    a = _as_points(a, "a")[0]
    b = _as_points(b, "b")[0]
    d2 = float(np.sum((a - b) ** 2))
    return hp.signal_variance * float(np.exp(-d2 / (2.0 * hp.length_scale ** 2)))


def kernel_matrix(A, B, hp: Hyperparams) -> np.ndarray:
    """Cross-covariance matrix ``K[i, j] = k(A[i], B[j])``."""
    A = _as_points(A, "A")
    B = _as_points(B, "B")
    # explicit differences keep k(a, b) == k(b, a) bit-for-bit
    d2 = ((A[:, None, 0] - B[None, :, 0]) ** 2
          + (A[:, None, 1] - B[None, :, 1]) ** 2)
    return hp.signal_variance * np.exp(-d2 / (2.0 * hp.length_scale ** 2))


class TraversabilityGP:
    """Exact GP posterior over a growing measurement history.

    Examples
    --------
    >>> gp = TraversabilityGP(Hyperparams(signal_variance=1.0, length_scale=1.0))
    >>> gp.add_observation((0.0, 0.0), 1.0)
    >>> len(gp)
    1
    """

    def __init__(self, hp: Hyperparams):
        self.hp = hp
        self._X = np.empty((0, 2))
        self._y = np.empty(0)
        self._chol = None
        self._jitter = hp.jitter
        self._alpha = None
        self.epoch = 0  # bumped whenever the factor is rebuilt from scratch

    def __len__(self):
        return self._y.shape[0]

    @property
    def positions(self) -> np.ndarray:
        return self._X.copy()

    @property
    def values(self) -> np.ndarray:
        return self._y.copy()

    @property
    def diag_noise(self) -> float:
        return self.hp.noise_variance + self._jitter * self.hp.signal_variance

    def add_observation(self, x, y) -> None:
        x = _as_points(x, "x")[0]
        y = float(y)
        if not np.isfinite(y):
            raise InvalidArgument("observation value must be finite")
        n = len(self)
        self._X = np.vstack([self._X, x])
        self._y = np.append(self._y, y)
        self._alpha = None
        if self._chol is None or n == 0:
            self._refit()
            return
        # rank-one extension of the cached factor
        k_new = kernel_matrix(self._X[:n], x[None, :], self.hp)[:, 0]
        l_row = solve_triangular(self._chol, k_new, lower=True)
        d2 = self.hp.signal_variance + self.diag_noise - l_row @ l_row
        if d2 <= 0 or not np.isfinite(d2):
            self._refit()
            return
        L = np.zeros((n + 1, n + 1))
        L[:n, :n] = self._chol
        L[n, :n] = l_row
        L[n, n] = np.sqrt(d2)
        self._chol = L

    def _refit(self):
        self.epoch += 1
        n = len(self)
        if n == 0:
            self._chol = None
            return
        K = kernel_matrix(self._X, self._X, self.hp)
        jitter = max(self._jitter, self.hp.jitter)
        while True:
            A = K + (self.hp.noise_variance + jitter * self.hp.signal_variance) * np.eye(n)
            try:
                self._chol = np.linalg.cholesky(A)
                break
            except np.linalg.LinAlgError:
                if jitter * 10 > _JITTER_MAX:
                    cond = np.linalg.cond(A)
                    raise NumericalError(
                        f"Cholesky failed for {n} observations at relative jitter "
                        f"{jitter:.1e}; condition number {cond:.3e}") from None
                jitter *= 10
                log.debug("escalating GP jitter to %.1e", jitter)
        self._jitter = jitter

    def refit(self) -> None:
        """Recompute the factorization from scratch."""
        self._jitter = self.hp.jitter
        self._alpha = None
        self._refit()

    def posterior(self, queries) -> PosteriorField:
        """Posterior mean and variance at every query point, in one batch."""
        Q = _as_points(queries, "queries")
        prior_var = np.full(Q.shape[0], self.hp.signal_variance)
        if len(self) == 0:
            return PosteriorField(np.full(Q.shape[0], self.hp.prior_mean), prior_var)
        if self._alpha is None:
            resid = self._y - self.hp.prior_mean
            z = solve_triangular(self._chol, resid, lower=True)
            self._alpha = solve_triangular(self._chol.T, z, lower=False)
        Ks = kernel_matrix(self._X, Q, self.hp)
        mean = self.hp.prior_mean + Ks.T @ self._alpha
        V = solve_triangular(self._chol, Ks, lower=True)
        var = prior_var - np.einsum("ij,ij->j", V, V)
        np.maximum(var, 0.0, out=var)
        return PosteriorField(mean, var)


class GridPosterior:
    """Incremental posterior over a fixed query set.

    Caches ``V = L^-1 K(X, Q)`` and ``z = L^-1 (y - m)``; a new observation
    only appends one row to each (forward substitution), so refreshing the
    whole grid costs O(n q) instead of O(n^2 q).  A full refactorization of
    the underlying GP invalidates the cache.
    """

    def __init__(self, gp: TraversabilityGP, queries):
        self.gp = gp
        self.Q = _as_points(queries, "queries")
        self._reset()

    def _reset(self):
        m = self.Q.shape[0]
        self._epoch = self.gp.epoch
        self._n = 0
        self._V = np.empty((0, m))
        self._z = np.empty(0)
        self._mean = np.zeros(m)
        self._sumsq = np.zeros(m)

    def _grow(self, n):
        cap = self._V.shape[0]
        if n > cap:
            new = max(n, 2 * cap, 16)
            V = np.empty((new, self.Q.shape[0]))
            V[:self._n] = self._V[:self._n]
            z = np.empty(new)
            z[:self._n] = self._z[:self._n]
            self._V, self._z = V, z

    def posterior(self) -> PosteriorField:
        gp = self.gp
        hp = gp.hp
        n = len(gp)
        if gp.epoch != self._epoch or n < self._n:
            self._reset()
        if n > self._n:
            self._grow(n)
            L = gp._chol
            resid = gp._y - hp.prior_mean
            Ks = kernel_matrix(gp._X[self._n:n], self.Q, hp)
            for k in range(self._n, n):
                row = L[k, :k]
                v = (Ks[k - self._n] - row @ self._V[:k]) / L[k, k]
                zk = (resid[k] - row @ self._z[:k]) / L[k, k]
                self._V[k] = v
                self._z[k] = zk
                self._mean += v * zk
                self._sumsq += v * v
            self._n = n
        var = hp.signal_variance - self._sumsq
        np.maximum(var, 0.0, out=var)
        return PosteriorField(hp.prior_mean + self._mean, var)
