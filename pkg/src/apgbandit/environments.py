"""Synthetic RKHS reward functions on grid arm sets.

A reward function is a random unit vector of coefficients over an
orthonormal basis of ``V(centers)``, with centres drawn at random from the
arm set until 300 are taken or the power function over the arms drops
below ``1e-4``.  Its RKHS norm is therefore one.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .kernels import Kernel

BENCHMARK_GRID = {1: 1000, 2: 30, 3: 10}
MAX_CENTERS = 300
POWER_TOL = 1e-4
NOISE_FRACTION = 0.2
# a translate whose own power value is below the stopping tolerance adds almost
# nothing to the span but blows up the translate weights; such centres are skipped
SINGULAR_FLOOR = POWER_TOL**2


def grid_arms(d: int, m: int | None = None) -> np.ndarray:
    """``{i/m : i = 0..m-1}^d`` in lexicographic order."""
    if m is None:
        try:
            m = BENCHMARK_GRID[d]
        except KeyError:
            raise ValueError(f"no default grid for d={d}; pass m explicitly") from None
    g = np.arange(m) / m
    return np.array(list(itertools.product(g, repeat=d)), dtype=float).reshape(-1, d)


@dataclass
class RewardFunction:
    """``f = sum_i coeffs[i] phi_i`` for the orthonormal basis ``phi`` of the centre translates.

    ``weights`` re-express ``f`` over kernel translates,
    ``f(x) = sum_j weights[j] K(x, centers[j])``.
    """

    center_idx: np.ndarray
    centers: np.ndarray
    coeffs: np.ndarray
    weights: np.ndarray
    values: np.ndarray

    @property
    def best_arm(self) -> int:
        return int(np.argmax(self.values))

    @property
    def f_star(self) -> float:
        return float(self.values.max())

    def __call__(self, kernel: Kernel, X) -> np.ndarray:
        return kernel.matrix(X, self.centers) @ self.weights


def _orthonormal_values(kernel: Kernel, arms: np.ndarray, order, max_centers, power_tol, max_skips):
    """Gram-Schmidt of translates in the given order; returns (chosen, values, lower)."""
    n = len(arms)
    wd = np.longdouble
    cap = min(max_centers, n)
    V = np.empty((n, cap), dtype=wd)
    p2 = kernel.diag(arms).astype(wd)
    chosen: list[int] = []
    skips = 0
    for i in order:
        if len(chosen) >= cap:
            break
        if power_tol is not None and chosen and p2.max() < power_tol**2:
            break
        if p2[i] < SINGULAR_FLOOR:
            skips += 1
            if skips > max_skips:
                raise RuntimeError("centre Gram matrix is numerically singular; too many resamples")
            continue
        m = len(chosen)
        u = kernel.matrix(arms, arms[i : i + 1])[:, 0].astype(wd)
        if m:
            u -= V[:, :m] @ V[i, :m]
        col = u / np.sqrt(p2[i])
        V[:, m] = col
        p2 = np.maximum(p2 - col * col, 0)
        chosen.append(int(i))
    m = len(chosen)
    idx = np.asarray(chosen, dtype=int)
    return idx, V[:, :m], np.tril(V[idx, :m])


def _back_substitute(L: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Solve ``L^T w = a`` in the dtype of ``L``."""
    m = len(a)
    w = np.zeros(m, dtype=L.dtype)
    a = a.astype(L.dtype)
    for i in range(m - 1, -1, -1):
        w[i] = (a[i] - L[i + 1 :, i] @ w[i + 1 :]) / L[i, i]
    return w


def build_function(
    kernel: Kernel,
    arms: np.ndarray,
    order,
    coeffs: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
    max_centers: int = MAX_CENTERS,
    power_tol: float | None = POWER_TOL,
) -> RewardFunction:
    """Orthonormalise translates at ``order`` (in that order) and combine them.

    With ``coeffs=None`` a uniformly random unit vector is drawn from ``rng``.
    """
    idx, V, L = _orthonormal_values(
        kernel, arms, order, max_centers, power_tol, max_skips=10 * max(max_centers, 1)
    )
    m = len(idx)
    if coeffs is None:
        a = rng.standard_normal(m)
        a /= np.linalg.norm(a)
    else:
        a = np.asarray(coeffs, dtype=float)
        if len(a) != m:
            raise ValueError(f"expected {m} coefficients, got {len(a)}")
    values = np.asarray(V @ a.astype(V.dtype), dtype=float)
    weights = np.asarray(_back_substitute(L, a), dtype=float)
    return RewardFunction(idx, arms[idx].copy(), a, weights, values)


def random_function(kernel: Kernel, arms: np.ndarray, rng: np.random.Generator, **kw) -> RewardFunction:
    order = rng.permutation(len(arms))
    return build_function(kernel, arms, order, rng=rng, **kw)


def l1_scale(values: np.ndarray, mode: str = "mean") -> float:
    if mode == "mean":
        return float(np.mean(np.abs(values)))
    if mode == "sum":
        return float(np.sum(np.abs(values)))
    raise ValueError(f"unknown l1 mode {mode!r}; expected 'mean' or 'sum'")


class NoiseStream:
    """Per-round standard normal draws, independent of which arm is pulled."""

    def __init__(self, seed, block: int = 4096):
        self._rng = np.random.default_rng(seed)
        self._block = block
        self._buf = np.empty(0)
        self._pos = 0
        self.count = 0

    def next(self) -> float:
        if self._pos == len(self._buf):
            self._buf = self._rng.standard_normal(self._block)
            self._pos = 0
        z = self._buf[self._pos]
        self._pos += 1
        self.count += 1
        return float(z)


@dataclass
class SyntheticEnv:
    kernel: Kernel
    grid_m: int
    arms: np.ndarray
    function: RewardFunction
    noise_sigma: float
    l1_norm: float
    seed: Any = None
    l1_mode: str = "mean"
    B: float = 1.0

    @property
    def values(self) -> np.ndarray:
        return self.function.values

    @property
    def f_star(self) -> float:
        return self.function.f_star

    @property
    def best_arm(self) -> int:
        return self.function.best_arm

    @property
    def n_arms(self) -> int:
        return len(self.arms)

    @property
    def R(self) -> float:
        return self.noise_sigma

    def mean_gap(self) -> float:
        """Expected per-round regret of uniformly random play."""
        return float(self.f_star - self.values.mean())

    def pull(self, arm: int, noise: NoiseStream) -> float:
        z = noise.next()
        if self.noise_sigma == 0.0:
            return float(self.values[arm])
        return float(self.values[arm] + self.noise_sigma * z)

    def to_dict(self) -> dict[str, Any]:
        return {
            "kernel": self.kernel.to_dict(),
            "grid_m": self.grid_m,
            "seed": self.seed,
            "center_idx": self.function.center_idx.tolist(),
            "coeffs": self.function.coeffs.tolist(),
            "noise_sigma": self.noise_sigma,
            "l1_mode": self.l1_mode,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SyntheticEnv":
        kernel = Kernel.from_dict(data["kernel"])
        arms = grid_arms(kernel.dim, data["grid_m"])
        order = np.asarray(data["center_idx"], dtype=int)
        fn = build_function(kernel, arms, order, coeffs=np.asarray(data["coeffs"]), power_tol=None,
                            max_centers=len(order))
        mode = data.get("l1_mode", "mean")
        return cls(kernel, data["grid_m"], arms, fn, float(data["noise_sigma"]),
                   l1_scale(fn.values, mode), data.get("seed"), mode)

    @classmethod
    def load(cls, path) -> "SyntheticEnv":
        return cls.from_dict(json.loads(Path(path).read_text()))


def generate_env(
    kernel: Kernel,
    d: int | None = None,
    seed: int | np.random.SeedSequence = 0,
    m: int | None = None,
    l1_mode: str = "mean",
    noise_fraction: float = NOISE_FRACTION,
    max_centers: int = MAX_CENTERS,
) -> SyntheticEnv:
    d = kernel.dim if d is None else d
    if d != kernel.dim:
        raise ValueError("kernel dimension does not match d")
    m = BENCHMARK_GRID.get(d) if m is None else m
    arms = grid_arms(d, m)
    rng = np.random.default_rng(seed)
    fn = random_function(kernel, arms, rng, max_centers=max_centers)
    l1 = l1_scale(fn.values, l1_mode)
    seed_repr = seed if isinstance(seed, (int, np.integer)) else None
    return SyntheticEnv(kernel, m, arms, fn, noise_fraction * l1, l1, seed_repr, l1_mode)


def pull(env: SyntheticEnv, arm: int, noise: NoiseStream) -> float:
    return env.pull(arm, noise)


def benchmark_noise(envs) -> float:
    """Algorithm-side noise level: the mean of the environments' noise scales."""
    envs = list(envs)
    return float(sum(e.noise_sigma for e in envs) / len(envs))


@dataclass
class AdversarialSeq:
    """Oblivious sequence: function ``t // drift_period`` is active in round ``t`` (0-based)."""

    kernel: Kernel
    arms: np.ndarray
    functions: list[RewardFunction]
    horizon: int
    drift_period: int
    table: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.table = np.stack([f.values for f in self.functions])

    def values_at(self, t: int) -> np.ndarray:
        return self.table[t // self.drift_period]

    def totals(self, horizon: int | None = None) -> np.ndarray:
        """``sum_t f_t(x)`` for every arm over the first ``horizon`` rounds."""
        T = self.horizon if horizon is None else horizon
        counts = np.zeros(len(self.functions))
        full, rest = divmod(T, self.drift_period)
        counts[:full] = self.drift_period
        if rest:
            counts[full] += rest
        return counts @ self.table

    def best_arm(self, horizon: int | None = None) -> int:
        return int(np.argmax(self.totals(horizon)))


def generate_adversarial(
    kernel: Kernel,
    d: int | None,
    T: int,
    drift_period: int,
    seed: int | np.random.SeedSequence = 0,
    m: int | None = None,
    max_centers: int = MAX_CENTERS,
) -> AdversarialSeq:
    if T < 1 or drift_period < 1:
        raise ValueError("T and drift_period must be positive")
    d = kernel.dim if d is None else d
    arms = grid_arms(d, BENCHMARK_GRID.get(d) if m is None else m)
    n_funcs = math.ceil(T / drift_period)
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    children = ss.spawn(n_funcs)
    fns = [
        random_function(kernel, arms, np.random.default_rng(c), max_centers=max_centers)
        for c in children
    ]
    return AdversarialSeq(kernel, arms, fns, T, drift_period)
