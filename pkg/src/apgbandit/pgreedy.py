"""P-greedy point selection with simultaneous Newton-basis construction.

The Newton basis N_1..N_D is the Gram-Schmidt orthonormalisation, in the
RKHS inner product, of the kernel translates K(., xi_k) at the greedily chosen
points.  Feature vectors ``x~ = (N_1(x), ..., N_D(x))`` turn any function of
the RKHS into a linear model up to ``||f|| * P(x)``, where ``P`` is the power
function.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, stats

from .kernels import Kernel

log = logging.getLogger(__name__)

PRECISION_FLOOR = 1e-14
# power values this close to the maximum count as ties (lowest index wins),
# so mathematically tied candidates do not get ordered by rounding noise
TIE_RTOL = 1e-9
DEFAULT_MAX_POINTS = 2000
# extended precision for the Newton recurrence; plain float64 where unavailable
WORK_DTYPE = np.longdouble


@dataclass(frozen=True)
class NewtonBasis:
    """Output of :func:`build_basis`.

    ``lower[i, k] = N_k(xi_i)`` is the (lower-triangular) Cholesky factor of
    the kernel matrix on the selected points, kept in ``WORK_DTYPE``;
    ``transfer = lower^{-1}`` holds the coefficients
    ``N_k = sum_j transfer[k, j] K(., xi_j)``.
    ``candidate_features`` are the Newton values on the candidate set, in the
    order they were computed by the greedy loop; ``candidate_power_sq`` is
    that loop's own running ``P^2 = K(x, x) - sum_k N_k(x)^2``, carried in
    ``WORK_DTYPE`` and rounded once at the end.
    """

    kernel: Kernel
    points: np.ndarray
    indices: np.ndarray
    lower: np.ndarray
    transfer: np.ndarray
    candidate_features: np.ndarray
    candidate_power_sq: np.ndarray
    residual_trace: np.ndarray
    admissible_error: float
    truncated: bool = False
    exhausted: bool = False

    @property
    def size(self) -> int:
        return len(self.indices)

    def features(self, X) -> np.ndarray:
        """Newton values at arbitrary points, shape ``(n, D)``."""
        X = self.kernel._points(X)
        if self.size == 0:
            return np.zeros((len(X), 0))
        kx = self.kernel.matrix(self.points, X)
        # forward substitution with ``lower`` applies ``transfer`` without forming products
        low = np.asarray(self.lower, dtype=float)
        return linalg.solve_triangular(low, kx, lower=True, check_finite=False).T

    def power_sq(self, X) -> np.ndarray:
        F = self.features(X)
        X = self.kernel._points(X)
        return np.maximum(self.kernel.diag(X) - np.einsum("ij,ij->i", F, F), 0.0)

    def gram(self) -> np.ndarray:
        """RKHS Gram matrix of the basis functions; the identity in exact arithmetic."""
        if self.size == 0:
            return np.zeros((0, 0))
        # G = L^-1 K L^-T = I + L^-1 (K - L L^T) L^-T; the residual needs the
        # extended-precision factor, the solves do not
        L = self.lower
        resid = self.kernel.matrix(self.points).astype(L.dtype) - L @ L.T
        low = np.asarray(L, dtype=float)
        Y = linalg.solve_triangular(low, np.asarray(resid, dtype=float), lower=True, check_finite=False)
        Y = linalg.solve_triangular(low, Y.T, lower=True, check_finite=False)
        return np.eye(self.size) + Y


def _first_max(v: np.ndarray) -> int:
    top = v.max()
    return int(np.flatnonzero(v >= top - TIE_RTOL * abs(top))[0])


def build_basis(
    kernel: Kernel,
    candidates,
    error: float,
    max_points: int | None = None,
) -> NewtonBasis:
    """Run P-greedy on ``candidates`` until ``max P^2 < error^2``.

    Ties in the argmax go to the lowest candidate index.  Stops early, with
    the matching flag set, when ``max_points`` is reached (``truncated``) or
    the next pivot falls below ``PRECISION_FLOOR`` (``exhausted``).
    """
    X = kernel._points(candidates)
    n = len(X)
    if n == 0:
        raise ValueError("candidate set is empty")
    if not error > 0:
        raise ValueError("admissible error must be positive")
    cap = min(n, DEFAULT_MAX_POINTS) if max_points is None else int(max_points)
    if cap < 0:
        raise ValueError("max_points must be non-negative")

    p2 = kernel.diag(X).astype(WORK_DTYPE)
    values = np.empty((n, min(cap, n)), dtype=WORK_DTYPE)
    chosen: list[int] = []
    trace = [float(p2.max())]
    tol = error * error
    truncated = exhausted = False
    m = 0
    while True:
        i = _first_max(p2)
        if p2[i] < tol:
            break
        if m >= values.shape[1]:
            truncated = True
            break
        if p2[i] < PRECISION_FLOOR:
            exhausted = True
            break
        u = kernel.matrix(X, X[i : i + 1])[:, 0].astype(WORK_DTYPE)
        if m:
            u -= values[:, :m] @ values[i, :m]
        col = u / np.sqrt(p2[i])
        values[:, m] = col
        p2 -= col * col
        np.maximum(p2, 0.0, out=p2)
        chosen.append(i)
        m += 1
        trace.append(float(p2.max()))

    if truncated:
        log.warning("P-greedy stopped at max_points=%d with max P^2=%.3g", m, trace[-1])
    if exhausted:
        log.warning("P-greedy hit the precision floor after %d points", m)

    idx = np.asarray(chosen, dtype=int)
    lower = np.tril(values[idx, :m]) if m else np.zeros((0, 0), dtype=WORK_DTYPE)
    feats = values[:, :m].astype(float)
    transfer = (
        linalg.solve_triangular(lower.astype(float), np.eye(m), lower=True)
        if m
        else np.zeros((0, 0))
    )
    return NewtonBasis(
        kernel=kernel,
        points=X[idx].copy(),
        indices=idx,
        lower=lower,
        transfer=transfer,
        candidate_features=feats,
        candidate_power_sq=p2.astype(float),
        residual_trace=np.asarray(trace),
        admissible_error=float(error),
        truncated=truncated,
        exhausted=exhausted,
    )


def feature_of(basis: NewtonBasis, x) -> np.ndarray:
    return basis.features(np.atleast_2d(np.asarray(x, dtype=float)).reshape(-1, basis.kernel.dim))[0]


def power_function(basis: NewtonBasis, x) -> float:
    x = np.asarray(x, dtype=float).reshape(1, basis.kernel.dim)
    return float(np.sqrt(basis.power_sq(x)[0]))


@dataclass(frozen=True)
class DecayReport:
    """Least-squares fits of ``log max P_m^2`` against ``m^(1/d)`` and ``log m``."""

    n_points: int
    exp_slope: float
    exp_r2: float
    poly_slope: float
    poly_r2: float
    degenerate: bool = False
    notes: list[str] = field(default_factory=list)

    @property
    def regime(self) -> str:
        if self.degenerate:
            return "degenerate"
        return "exponential" if self.exp_r2 >= self.poly_r2 else "polynomial"


def decay_diagnostics(basis: NewtonBasis | np.ndarray, dim: int | None = None) -> DecayReport:
    """Fit the residual trace of a basis (or a raw trace, with ``dim`` given)."""
    if isinstance(basis, NewtonBasis):
        trace = basis.residual_trace
        dim = basis.kernel.dim
    else:
        trace = np.asarray(basis, dtype=float)
        if dim is None:
            raise ValueError("dim is required for a raw trace")
    # trace[m] is max P_m^2 after m points; m = 0 has no log m
    m = np.arange(1, len(trace))
    y = np.asarray(trace[1:], dtype=float)
    keep = y > 0
    m, y = m[keep], y[keep]
    if len(m) < 10:
        raise ValueError("decay diagnostics need at least 10 points")
    logy = np.log(y)
    if np.ptp(logy) < 1e-12:
        return DecayReport(len(m), 0.0, 0.0, 0.0, 0.0, True, ["constant residual trace"])
    e = stats.linregress(m ** (1.0 / dim), logy)
    p = stats.linregress(np.log(m), logy)
    return DecayReport(len(m), float(e.slope), float(e.rvalue**2), float(p.slope), float(p.rvalue**2))
