"""Kernel bandits: P-greedy reductions to misspecified linear bandits, and exact IGP-UCB.

Every policy exposes ``select() -> arm`` and ``update(arm, reward)``; the
play loops here feed them rewards and record regret against the true
function, which the policies never see.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.linalg import blas

from .kernels import Kernel
from .misspec import (
    RANK_TOL,
    Exp3,
    Exp3State,
    LinParams,
    LinTS,
    LinUCB,
    PhasedElimination,
    default_eta,
    span_reduce,
)
from .pgreedy import NewtonBasis, build_basis

log = logging.getLogger(__name__)

ALGORITHMS = ("UCB", "PE", "TS", "EXP3")


@dataclass(frozen=True)
class ApgConfig:
    algorithm: str = "UCB"
    T: int = 5000
    q: float | None = None
    alpha: float | None = None
    lam: float = 1.0
    R: float = 1.0
    B: float = 1.0
    delta: float = 1e-3
    design_tol: float = 0.01
    pe_constant: float = 2.0
    eta: float | None = None
    max_points: int | None = None

    def __post_init__(self) -> None:
        alg = self.algorithm.upper()
        if alg not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; expected one of {', '.join(ALGORITHMS)}")
        object.__setattr__(self, "algorithm", alg)
        if self.T < 1:
            raise ValueError("T must be positive")
        if self.q is not None and not self.q > 0:
            raise ValueError("q must be positive")
        if self.alpha is not None and not self.alpha > 0:
            raise ValueError("alpha must be positive")

    def resolved(self, n_arms: int) -> "ApgConfig":
        """Fill in the default ``q`` and ``alpha`` for the algorithm."""
        if self.algorithm == "EXP3":
            q, alpha = 1.0, math.log(max(n_arms, 2))
        else:
            q, alpha = 0.5, 5e-3
        return replace(
            self,
            q=q if self.q is None else self.q,
            alpha=alpha if self.alpha is None else self.alpha,
        )

    def admissible_error(self, n_arms: int) -> float:
        c = self.resolved(n_arms)
        return c.alpha / c.T**c.q

    def eps(self, n_arms: int) -> float:
        return self.B * self.admissible_error(n_arms)

    def lin_params(self, n_arms: int) -> LinParams:
        return LinParams(lam=self.lam, R=self.R, B=self.B, delta=self.delta, eps=self.eps(n_arms))


@dataclass
class RegretCurve:
    """Per-round record of one run.

    ``elapsed[t]`` is the wall time from the start of the play loop to the
    end of round ``t``; ``setup_time`` covers basis and design construction.
    """

    algorithm: str
    arms: np.ndarray
    instant: np.ndarray
    elapsed: np.ndarray
    setup_time: float = 0.0
    basis_size: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.instant)

    @property
    def loop_time(self) -> float:
        return float(self.elapsed[-1]) if len(self.elapsed) else 0.0

    @property
    def total_time(self) -> float:
        return self.setup_time + self.loop_time

    @property
    def T(self) -> int:
        return len(self.instant)


def play(policy, T: int, reward: Callable[[int, int], float]) -> tuple[np.ndarray, np.ndarray]:
    """Run ``T`` rounds; ``reward(t, arm)`` supplies the feedback. Returns (arms, elapsed)."""
    arms = np.empty(T, dtype=int)
    elapsed = np.empty(T)
    t0 = time.perf_counter()
    for t in range(T):
        a = policy.select()
        policy.update(a, reward(t, a))
        arms[t] = a
        elapsed[t] = time.perf_counter() - t0
    return arms, elapsed


# -- APG ----------------------------------------------------------------------


def _spanning(F: np.ndarray, what: str) -> np.ndarray:
    Fr, _ = span_reduce(F, RANK_TOL)
    if Fr.shape[1] < F.shape[1]:
        log.warning("%s: features have rank %d < %d; rotating onto their span", what, Fr.shape[1], F.shape[1])
        return Fr
    return F


class NullPolicy:
    """Policy over an empty basis: every arm has the zero feature vector.

    The linear layers then see identical arms.  EXP3 and TS reduce to uniform
    sampling; UCB and PE reduce to the lowest-index argmax.
    """

    def __init__(self, n_arms: int, rng: np.random.Generator | None):
        self.n = n_arms
        self.rng = rng
        self.last_p = np.full(n_arms, 1.0 / n_arms)

    def select(self) -> int:
        return int(self.rng.integers(self.n)) if self.rng is not None else 0

    def update(self, arm: int, reward: float) -> None:
        pass


def apg_policy(cfg: ApgConfig, basis: NewtonBasis, n_arms: int, rng: np.random.Generator | None = None):
    F = basis.candidate_features
    if F.shape[1] == 0:
        log.warning("admissible error %.3g leaves the basis empty; arms are indistinguishable", basis.admissible_error)
        randomised = cfg.algorithm in ("TS", "EXP3")
        return NullPolicy(n_arms, (rng if rng is not None else np.random.default_rng()) if randomised else None)
    if cfg.algorithm == "UCB":
        return LinUCB(F, cfg.lin_params(n_arms))
    if cfg.algorithm == "TS":
        return LinTS(F, cfg.lin_params(n_arms), rng if rng is not None else np.random.default_rng())
    if cfg.algorithm == "PE":
        return PhasedElimination(
            F, delta=cfg.delta, noise_scale=cfg.R, design_tol=cfg.design_tol, pull_constant=cfg.pe_constant
        )
    F = _spanning(F, "APG-EXP3")
    eta = cfg.eta if cfg.eta is not None else default_eta(n_arms, F.shape[1], cfg.T)
    state = Exp3State(F, eta, B=cfg.B, design_tol=cfg.design_tol)
    return Exp3(state, rng if rng is not None else np.random.default_rng())


def build_apg(cfg: ApgConfig, kernel: Kernel, arms: np.ndarray, rng=None):
    """Basis over the arm set followed by the linear-bandit policy; returns (policy, basis)."""
    arms = np.asarray(arms, dtype=float)
    cfg = cfg.resolved(len(arms))
    basis = build_basis(kernel, arms, cfg.admissible_error(len(arms)), max_points=cfg.max_points)
    if basis.truncated:
        log.warning("basis truncated at %d points; misspecification exceeds B*e", basis.size)
    return apg_policy(cfg, basis, len(arms), rng), basis


def apg_run(cfg: ApgConfig, kernel: Kernel, arms: np.ndarray, env, noise, rng=None) -> RegretCurve:
    """APG-{UCB,PE,TS} against a stochastic environment.

    ``env`` provides ``values`` (f over the arms) and ``pull(arm, noise)``.
    """
    t0 = time.perf_counter()
    policy, basis = build_apg(cfg, kernel, arms, rng)
    setup = time.perf_counter() - t0
    chosen, elapsed = play(policy, cfg.T, lambda t, a: env.pull(a, noise))
    values = np.asarray(env.values)
    inst = values.max() - values[chosen]
    return RegretCurve(f"APG-{cfg.algorithm}", chosen, inst, elapsed, setup, basis.size)


def apg_exp3_run(cfg: ApgConfig, kernel: Kernel, arms: np.ndarray, seq, rng=None) -> RegretCurve:
    """APG-EXP3 on an oblivious sequence with noiseless feedback ``f_t(x_t)``.

    ``instant`` holds the expected regret ``f_t(x*) - sum_a p_t(a) f_t(a)``
    against the best fixed arm in hindsight; the realised per-round regret
    is kept in ``meta["realised"]``.
    """
    if cfg.algorithm != "EXP3":
        cfg = replace(cfg, algorithm="EXP3")
    T = cfg.T
    t0 = time.perf_counter()
    policy, basis = build_apg(cfg, kernel, arms, rng)
    setup = time.perf_counter() - t0
    probs = []

    def reward(t, a):
        probs.append(policy.last_p)
        return float(seq.values_at(t)[a])

    chosen, elapsed = play(policy, T, reward)
    best = seq.best_arm(T)
    inst = np.empty(T)
    realised = np.empty(T)
    for t in range(T):
        f = seq.values_at(t)
        inst[t] = f[best] - probs[t] @ f
        realised[t] = f[best] - f[chosen[t]]
    return RegretCurve("APG-EXP3", chosen, inst, elapsed, setup, basis.size, {"realised": realised})


# -- IGP-UCB ------------------------------------------------------------------


class IgpUcb:
    """Kernel UCB with the exact GP posterior.

    ``(K_t + lam I)^{-1}`` is held as ``W^T W`` with ``W`` the inverse of its
    lower Cholesky factor.  Adding a point appends one row to ``W`` (a block
    Schur-complement step), so rows never change once written.

    ``mode="direct"`` recomputes the posterior of every arm from the inverse
    each round, O(|A| t^2).  ``mode="incremental"`` applies the rank-one
    posterior update instead, O(|A| t + t^2); both follow the same decisions
    up to roundoff.
    """

    def __init__(
        self,
        kernel: Kernel,
        arms: np.ndarray,
        T: int,
        R: float = 1.0,
        B: float = 1.0,
        delta: float = 1e-3,
        lam: float | None = None,
        mode: str = "direct",
    ):
        if mode not in ("direct", "incremental"):
            raise ValueError(f"unknown mode {mode!r}; expected 'direct' or 'incremental'")
        self.kernel = kernel
        self.X = np.asarray(arms, dtype=float)
        self.n = len(self.X)
        self.T = int(T)
        self.R, self.B, self.delta = float(R), float(B), float(delta)
        self.lam = 1.0 + 2.0 / T if lam is None else float(lam)
        self.mode = mode
        self.kdiag = kernel.diag(self.X)
        self.KA = np.empty((self.n, self.T))
        self.W = np.zeros((self.T, self.T))
        self.y = np.empty(self.T)
        self.z = np.empty(self.T)  # W y
        self.chosen = np.empty(self.T, dtype=int)
        self.t = 0
        self.gamma_hat = 0.0
        self.mu = np.zeros(self.n)
        self.var = self.kdiag.copy()

    def beta(self) -> float:
        return self.B + self.R * math.sqrt(2.0 * (self.gamma_hat + 1.0 + math.log(1.0 / self.delta)))

    def posterior(self) -> tuple[np.ndarray, np.ndarray]:
        """``(mu, sigma^2)`` over all arms from the current inverse."""
        t = self.t
        if t == 0:
            return np.zeros(self.n), self.kdiag.copy()
        # L = W K_A^T, shape (t, n)
        L = blas.dtrmm(1.0, self.W[:t, :t].T, self.KA[:, :t].T, lower=0, trans_a=1)
        mu = self.z[:t] @ L
        var = self.kdiag - np.einsum("ij,ij->j", L, L)
        return mu, np.clip(var, 0.0, self.kdiag)

    def scores(self) -> np.ndarray:
        if self.mode == "direct":
            self.mu, self.var = self.posterior()
        return self.mu + self.beta() * np.sqrt(self.var)

    def select(self) -> int:
        return int(np.argmax(self.scores()))

    def update(self, arm: int, y: float) -> None:
        t = self.t
        if t >= self.T:
            raise RuntimeError("horizon exhausted")
        col = self.kernel.matrix(self.X, self.X[arm : arm + 1])[:, 0]
        k = self.KA[arm, :t]
        W = self.W
        l = W[:t, :t] @ k
        u = W[:t, :t].T @ l
        d2 = self.kdiag[arm] + self.lam - l @ l
        # posterior variance at the pulled arm, consistent with d2
        s2 = max(d2 - self.lam, 0.0)
        d2 = self.lam + s2
        d = math.sqrt(d2)
        W[t, :t] = -u / d
        W[t, t] = 1.0 / d
        self.KA[:, t] = col
        self.y[t] = y
        self.z[t] = W[t, : t + 1] @ self.y[: t + 1]
        self.chosen[t] = arm
        self.gamma_hat += 0.5 * math.log1p(s2 / self.lam)
        if self.mode == "incremental":
            c = col - self.KA[:, :t] @ u if t else col.copy()
            mu_at = self.mu[arm]
            self.mu += c * ((y - mu_at) / d2)
            self.var -= c * c / d2
            np.clip(self.var, 0.0, self.kdiag, out=self.var)
        self.t = t + 1

    def kernel_inverse(self) -> np.ndarray:
        W = self.W[: self.t, : self.t]
        return W.T @ W


def igp_ucb_run(
    kernel: Kernel,
    arms: np.ndarray,
    env,
    noise,
    T: int,
    R: float = 1.0,
    B: float = 1.0,
    delta: float = 1e-3,
    lam: float | None = None,
    mode: str = "direct",
) -> RegretCurve:
    t0 = time.perf_counter()
    policy = IgpUcb(kernel, arms, T, R=R, B=B, delta=delta, lam=lam, mode=mode)
    setup = time.perf_counter() - t0
    chosen, elapsed = play(policy, T, lambda t, a: env.pull(a, noise))
    values = np.asarray(env.values)
    return RegretCurve(
        "IGP-UCB", chosen, values.max() - values[chosen], elapsed, setup, None,
        {"mode": mode, "gamma_hat": policy.gamma_hat},
    )
