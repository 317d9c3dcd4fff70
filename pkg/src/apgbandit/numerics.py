"""Regularised design-matrix tracker with O(D^2) rank-1 updates."""
from __future__ import annotations

import numpy as np
from scipy import linalg
from scipy.linalg import blas

REFACTOR_EVERY = 512


class FactorizationError(RuntimeError):
    """Maintained inverse lost positive definiteness."""


class SpdTracker:
    """Tracks ``inv = (lam*I + sum x x^T)^{-1}`` and ``logdet = log det(A / lam)``.

    The inverse follows Sherman-Morrison; every ``refactor_every`` updates it
    is recomputed from the explicitly accumulated ``A`` to bound drift.
    """

    def __init__(self, dim: int, lam: float = 1.0, refactor_every: int = REFACTOR_EVERY):
        if dim < 1:
            raise ValueError("dim must be positive")
        if not lam > 0:
            raise ValueError("lam must be positive")
        self.dim = int(dim)
        self.lam = float(lam)
        self.refactor_every = int(refactor_every)
        self._A = lam * np.eye(dim)
        self._pending: list[np.ndarray] = []
        self.inv = np.eye(dim) / lam
        self.logdet = 0.0
        self.t = 0
        self._chol: np.ndarray | None = None

    def copy(self) -> "SpdTracker":
        new = SpdTracker.__new__(SpdTracker)
        new.__dict__.update(self.__dict__)
        new._A = self.A.copy()
        new._pending = []
        new.inv = self.inv.copy()
        new._chol = None if self._chol is None else self._chol.copy()
        return new

    @property
    def A(self) -> np.ndarray:
        """``lam*I + sum x x^T``; outer products are folded in lazily, in blocks."""
        if self._pending:
            P = np.array(self._pending)
            self._A += P.T @ P
            self._pending = []
        return self._A

    def mahalanobis_sq(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        return float(max(x @ self.inv @ x, 0.0))

    def mahalanobis(self, x: np.ndarray) -> float:
        return float(np.sqrt(self.mahalanobis_sq(x)))

    def rank1_update(self, x: np.ndarray) -> float:
        """Add ``x x^T``; returns the pre-update squared Mahalanobis norm of ``x``."""
        x = np.asarray(x, dtype=float)
        v = self.inv @ x
        m2 = max(float(x @ v), 0.0)
        self._pending.append(x.copy())
        # in-place rank-one update; inv is symmetric so its transpose is the Fortran view
        self.inv = blas.dger(-1.0 / (1.0 + m2), v, v, a=self.inv.T, overwrite_a=1).T
        self.logdet += np.log1p(m2)
        self.t += 1
        self._chol = None
        self.last_direction = v
        if self.refactor_every and self.t % self.refactor_every == 0:
            self.refactor()
        return m2

    def refactor(self) -> None:
        """Recompute inverse and log-determinant from ``A``."""
        try:
            c = linalg.cho_factor(self.A, lower=True)
        except linalg.LinAlgError as exc:
            raise FactorizationError("design matrix is not positive definite") from exc
        inv = linalg.cho_solve(c, np.eye(self.dim))
        self.inv = np.ascontiguousarray(0.5 * (inv + inv.T))
        self.logdet = float(2.0 * np.sum(np.log(np.diag(c[0])))) - self.dim * np.log(self.lam)
        self._chol = None

    def inv_cholesky(self) -> np.ndarray:
        """Lower-triangular ``L`` with ``L L^T = inv``; cached until the next update."""
        if self._chol is None:
            try:
                self._chol = np.linalg.cholesky(self.inv)
            except np.linalg.LinAlgError:
                self.refactor()
                try:
                    self._chol = np.linalg.cholesky(self.inv)
                except np.linalg.LinAlgError as exc:
                    raise FactorizationError("inverse is not positive definite") from exc
        return self._chol


def rank1_update(tr: SpdTracker, x: np.ndarray) -> SpdTracker:
    tr.rank1_update(x)
    return tr


def mahalanobis(tr: SpdTracker, x: np.ndarray) -> float:
    return tr.mahalanobis(x)


def sample_gaussian(
    mean: np.ndarray, scale: float, tr: SpdTracker, rng: np.random.Generator
) -> np.ndarray:
    """One draw from ``N(mean, scale^2 * tr.inv)``."""
    if not scale > 0:
        raise ValueError("scale must be positive")
    L = tr.inv_cholesky()
    z = rng.standard_normal(tr.dim)
    return np.asarray(mean, dtype=float) + scale * (L @ z)
