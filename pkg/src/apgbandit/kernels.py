"""Radial positive-definite kernels with unit diagonal.

All kernels are functions of the Euclidean distance only, evaluated from the
squared distance in float64.  ``Kernel.matrix`` is the vectorised form used by
everything else in the package.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Mapping

import numpy as np

FAMILIES = ("RQ", "SE", "Matern")
MATERN_NUS = (0.5, 1.5, 2.5, 3.5)

_ALIASES = {
    "rq": "RQ",
    "rationalquadratic": "RQ",
    "se": "SE",
    "rbf": "SE",
    "squaredexponential": "SE",
    "matern": "Matern",
    "matérn": "Matern",
}


def canonical_family(name: str) -> str:
    key = name.replace("_", "").replace("-", "").replace(" ", "").lower()
    try:
        return _ALIASES[key]
    except KeyError:
        raise ValueError(
            f"unknown kernel family {name!r}; expected one of {', '.join(FAMILIES)}"
        ) from None


def _sqdist(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    # explicit differences keep K(x, y) == K(y, x) bit for bit
    diff = X[:, None, :] - Y[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


@dataclass(frozen=True)
class Kernel:
    """Isotropic kernel specification.

    ``rq_shape`` is only used by RQ and ``matern_nu`` only by Matern.
    """

    family: str
    lengthscale: float
    dim: int
    rq_shape: float | None = None
    matern_nu: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "family", canonical_family(self.family))
        if not self.lengthscale > 0:
            raise ValueError("lengthscale must be positive")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError("dim must be a positive integer")
        if self.family == "RQ":
            if self.rq_shape is None:
                raise ValueError("RQ kernel needs rq_shape")
            if not self.rq_shape > self.dim / 2:
                raise ValueError(
                    f"RQ kernel needs rq_shape > dim/2 (got {self.rq_shape} with dim={self.dim})"
                )
        if self.family == "Matern":
            if self.matern_nu not in MATERN_NUS:
                raise ValueError(f"matern_nu must be one of {MATERN_NUS}")

    # -- evaluation -------------------------------------------------------

    def profile(self, s2: np.ndarray) -> np.ndarray:
        """Kernel value as a function of squared distance."""
        s2 = np.asarray(s2, dtype=float)
        l = self.lengthscale
        if self.family == "SE":
            return np.exp(-s2 / (2.0 * l * l))
        if self.family == "RQ":
            mu = self.rq_shape
            return (1.0 + s2 / (2.0 * mu * l * l)) ** (-mu)
        return _matern_half_integer(np.sqrt(s2), self.matern_nu, l)

    def matrix(self, X, Y=None) -> np.ndarray:
        X = self._points(X)
        Y = X if Y is None else self._points(Y)
        return self.profile(_sqdist(X, Y))

    def diag(self, X) -> np.ndarray:
        return np.ones(len(self._points(X)))

    def __call__(self, x, y) -> float:
        x = np.asarray(x, dtype=float).reshape(-1)
        y = np.asarray(y, dtype=float).reshape(-1)
        if x.shape[0] != self.dim or y.shape[0] != self.dim:
            raise ValueError(
                f"points must have dimension {self.dim}, got {x.shape[0]} and {y.shape[0]}"
            )
        d = x - y
        return float(self.profile(np.dot(d, d)))

    def _points(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1) if self.dim == 1 else X.reshape(1, -1)
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise ValueError(f"points must have shape (n, {self.dim}), got {X.shape}")
        return X

    # -- config -----------------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "family": self.family,
            "lengthscale": self.lengthscale,
            "dim": self.dim,
        }
        if self.rq_shape is not None:
            out["rq_shape"] = self.rq_shape
        if self.matern_nu is not None:
            out["matern_nu"] = self.matern_nu
        return out

    @classmethod
    def from_dict(cls, spec: Mapping[str, Any]) -> "Kernel":
        known = {"family", "lengthscale", "dim", "rq_shape", "matern_nu"}
        extra = set(spec) - known
        if extra:
            raise ValueError(f"unknown kernel keys: {sorted(extra)}")
        return cls(
            family=spec["family"],
            lengthscale=float(spec["lengthscale"]),
            dim=int(spec["dim"]),
            rq_shape=None if spec.get("rq_shape") is None else float(spec["rq_shape"]),
            matern_nu=None if spec.get("matern_nu") is None else float(spec["matern_nu"]),
        )


def evaluate(k: Kernel, x, y) -> float:
    return k(x, y)


def benchmark_kernel(family: str, dim: int, length_factor: float | None = None) -> Kernel:
    """Experiment defaults: RQ with shape 2d and length 0.3*sqrt(d), SE with 0.2*sqrt(d).

    ``length_factor`` overrides the multiplier of sqrt(d).
    """
    family = canonical_family(family)
    if family == "RQ":
        f = 0.3 if length_factor is None else length_factor
        return Kernel("RQ", f * math.sqrt(dim), dim, rq_shape=2.0 * dim)
    if family == "SE":
        f = 0.2 if length_factor is None else length_factor
        return Kernel("SE", f * math.sqrt(dim), dim)
    raise ValueError("benchmark defaults exist for RQ and SE only")


def _matern_half_integer(s: np.ndarray, nu: float, l: float) -> np.ndarray:
    # nu = p + 1/2: exp(-r) * p!/(2p)! * sum_i (p+i)!/(i!(p-i)!) (2r)^(p-i),  r = sqrt(2 nu) s / l
    p = int(Fraction(nu) - Fraction(1, 2))
    r = math.sqrt(2.0 * nu) * s / l
    lead = math.factorial(p) / math.factorial(2 * p)
    poly = np.zeros_like(r)
    for i in range(p + 1):
        c = math.factorial(p + i) / (math.factorial(i) * math.factorial(p - i))
        poly = poly + c * (2.0 * r) ** (p - i)
    return lead * poly * np.exp(-r)
