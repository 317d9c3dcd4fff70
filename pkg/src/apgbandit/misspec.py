"""Algorithms for misspecified linear bandits over a finite arm set.

Arms are given as rows of a feature matrix ``F`` with ``||F[a]|| <= 1``.
Rewards are ``<theta, F[a]> + omega(a)`` with ``|omega| <= eps``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import linalg

from .numerics import FactorizationError, SpdTracker, sample_gaussian

log = logging.getLogger(__name__)

RANK_TOL = 1e-10


class RankDeficientError(ValueError):
    """Arm features do not span the feature space."""


@dataclass(frozen=True)
class LinParams:
    lam: float = 1.0
    R: float = 1.0
    B: float = 1.0
    delta: float = 1e-3
    eps: float = 0.0

    def __post_init__(self) -> None:
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if self.R < 0 or self.B < 0 or self.eps < 0:
            raise ValueError("R, B and eps must be non-negative")
        if not 0 < self.delta <= 1:
            raise ValueError("delta must lie in (0, 1]")


class LinBanditState:
    """Regularised least squares plus the misspecification accumulator ``psi``.

    ``psi`` is the running sum of ``||x_s||`` in the norm of ``A_{s-1}^{-1}``,
    i.e. measured before each update.
    """

    def __init__(self, dim: int, params: LinParams | None = None):
        self.params = params or LinParams()
        self.tracker = SpdTracker(dim, self.params.lam)
        self.b = np.zeros(dim)
        self.theta_hat = np.zeros(dim)
        self.psi = 0.0

    @property
    def dim(self) -> int:
        return self.tracker.dim

    @property
    def t(self) -> int:
        return self.tracker.t

    def beta(self, delta: float | None = None) -> float:
        p = self.params
        delta = p.delta if delta is None else delta
        rad = self.tracker.logdet + 2.0 * math.log(1.0 / delta)
        return p.R * math.sqrt(max(rad, 0.0)) + math.sqrt(p.lam) * p.B

    def width(self, delta: float | None = None) -> float:
        """Confidence multiplier ``beta + eps * psi``."""
        return self.beta(delta) + self.params.eps * self.psi

    def ucb_scores(self, features: np.ndarray) -> np.ndarray:
        F = np.asarray(features, dtype=float)
        q = np.einsum("ij,ij->i", F @ self.tracker.inv, F)
        return F @ self.theta_hat + np.sqrt(np.maximum(q, 0.0)) * self.width()

    def ucb_select(self, features: np.ndarray) -> int:
        return int(np.argmax(self.ucb_scores(features)))

    def ts_select(self, features: np.ndarray, rng: np.random.Generator) -> int:
        F = np.asarray(features, dtype=float)
        scale = self.width(self.params.delta / 2.0)
        if scale <= 0.0:
            return int(np.argmax(F @ self.theta_hat))
        mu = sample_gaussian(self.theta_hat, scale, self.tracker, rng)
        return int(np.argmax(F @ mu))

    def update(self, x: np.ndarray, y: float) -> float:
        """Record reward ``y`` for feature ``x``; returns the pre-update ``||x||^2``."""
        x = np.asarray(x, dtype=float)
        tr = self.tracker
        resid = y - x @ self.theta_hat
        m2 = tr.rank1_update(x)
        self.psi += math.sqrt(m2)
        self.b += y * x
        if tr.refactor_every and tr.t % tr.refactor_every == 0:
            self.theta_hat = tr.inv @ self.b
        else:
            self.theta_hat = self.theta_hat + tr.last_direction * (resid / (1.0 + m2))
        return m2


class LinUCB:
    """Modified LinUCB over a fixed arm set.

    Keeps ``F @ theta_hat`` and the per-arm squared norms under ``A^{-1}``
    current with O(|A| D) work per round, instead of the O(|A| D^2) full
    rescoring of :meth:`LinBanditState.ucb_scores`.
    """

    def __init__(self, features: np.ndarray, params: LinParams | None = None):
        self.F = np.ascontiguousarray(features, dtype=float)
        self.state = LinBanditState(self.F.shape[1], params)
        self._refresh()

    def _refresh(self) -> None:
        inv = self.state.tracker.inv
        self._norm_sq = np.maximum(np.einsum("ij,ij->i", self.F @ inv, self.F), 0.0)
        self._mean = self.F @ self.state.theta_hat

    def scores(self) -> np.ndarray:
        return self._mean + np.sqrt(self._norm_sq) * self.state.width()

    def select(self) -> int:
        return int(np.argmax(self.scores()))

    def update(self, arm: int, y: float) -> None:
        tr = self.state.tracker
        x = self.F[arm]
        resid = y - self._mean[arm]
        m2 = self.state.update(x, y)
        if tr.refactor_every and tr.t % tr.refactor_every == 0:
            self._refresh()
            return
        z = self.F @ tr.last_direction
        c = 1.0 / (1.0 + m2)
        self._norm_sq -= z * z * c
        np.maximum(self._norm_sq, 0.0, out=self._norm_sq)
        self._mean += z * (resid * c)


class LinTS:
    """Modified Thompson sampling: one posterior draw per round."""

    def __init__(self, features: np.ndarray, params: LinParams | None, rng: np.random.Generator):
        self.F = np.ascontiguousarray(features, dtype=float)
        self.state = LinBanditState(self.F.shape[1], params)
        self.rng = rng

    def select(self) -> int:
        return self.state.ts_select(self.F, self.rng)

    def update(self, arm: int, y: float) -> None:
        self.state.update(self.F[arm], y)


# -- G-optimal design ---------------------------------------------------------


@dataclass
class Design:
    weights: np.ndarray
    leverage_max: float
    leverages: np.ndarray
    iterations: int
    converged: bool

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.weights > 0)


def check_span(features: np.ndarray) -> None:
    F = np.asarray(features, dtype=float)
    D = F.shape[1]
    if F.shape[0] < D:
        raise RankDeficientError(f"{F.shape[0]} arms cannot span R^{D}")
    s = linalg.svdvals(F)
    if s.size == 0 or s[-1] <= RANK_TOL * s[0]:
        raise RankDeficientError("arm features do not span the feature space")


def leverages(features: np.ndarray, weights: np.ndarray) -> np.ndarray:
    F = np.asarray(features, dtype=float)
    Q = F.T @ (weights[:, None] * F)
    Qinv = linalg.inv(Q)
    return np.einsum("ij,ij->i", F @ Qinv, F)


def g_optimal_design(features: np.ndarray, tol: float = 0.01, max_iters: int = 100_000) -> Design:
    """Frank-Wolfe ascent on ``log det Q(pi)`` with Khachiyan step sizes.

    Starts from the uniform design on a spanning subset picked by pivoted QR
    and takes away (or drop) steps when the worst supported arm is further
    below ``D`` than the best arm is above it, which keeps the support small.
    Stops once ``max leverage <= D (1 + tol)``.
    """
    F = np.asarray(features, dtype=float)
    n, D = F.shape
    check_span(F)
    w = np.zeros(n)
    if n == D:
        w[:] = 1.0 / D
    else:
        _, _, piv = linalg.qr(F.T, mode="economic", pivoting=True)
        w[np.sort(piv[:D])] = 1.0 / D

    def exact(w):
        Qinv = linalg.inv(F.T @ (w[:, None] * F))
        Qinv = 0.5 * (Qinv + Qinv.T)
        return Qinv, np.einsum("ij,ij->i", F @ Qinv, F)

    Qinv, lev = exact(w)
    target = D * (1.0 + tol)
    it = 0
    converged = False
    while True:
        j = int(np.argmax(lev))
        if lev[j] <= target:
            converged = True
            break
        if it >= max_iters:
            break
        it += 1
        supp = np.flatnonzero(w > 0)
        k = int(supp[np.argmin(lev[supp])])
        step = None
        if D - lev[k] > lev[j] - D and w[k] < 1.0:
            lo = -w[k] / (1.0 - w[k])
            tau = (lev[k] / D - 1.0) / (lev[k] - 1.0) if lev[k] > 1.0 else lo
            tau = max(tau, lo)
            if 1.0 + tau / (1.0 - tau) * lev[k] > 1e-12:
                step = (k, tau, tau == lo)
        if step is None:
            step = (j, (lev[j] / D - 1.0) / (lev[j] - 1.0), False)
        a, tau, drop = step
        x = F[a]
        c = tau / (1.0 - tau)
        v = Qinv @ x
        g = lev[a]
        denom = 1.0 + c * g
        z = F @ v
        Qinv = (Qinv - np.outer(v, v) * (c / denom)) / (1.0 - tau)
        lev = (lev - z * z * (c / denom)) / (1.0 - tau)
        w *= 1.0 - tau
        w[a] += tau
        if drop:
            w[a] = 0.0
        np.maximum(w, 0.0, out=w)
        w /= w.sum()
        if it % 256 == 0:
            Qinv, lev = exact(w)

    Qinv, lev = exact(w)
    if not converged:
        converged = bool(lev.max() <= target)
        if not converged:
            log.warning("G-optimal design stopped after %d iterations at %.4g > %.4g", it, lev.max(), target)
    return Design(weights=w, leverage_max=float(lev.max()), leverages=lev, iterations=it, converged=converged)


def span_reduce(features: np.ndarray, tol: float = RANK_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Rotate features onto their numerical row space.

    Returns ``(F @ V, V)`` where the columns of ``V`` are the right singular
    vectors with singular value above ``tol * s_max``.  Inner products between
    arm features are unchanged.
    """
    F = np.asarray(features, dtype=float)
    _, s, Vt = linalg.svd(F, full_matrices=False)
    r = int(np.sum(s > tol * s[0])) if s.size and s[0] > 0 else 0
    V = Vt[:r].T
    return F @ V, V


# -- EXP3 ---------------------------------------------------------------------


class Exp3State:
    """EXP3 with a G-optimal exploration mixture.

    ``gamma = B * Gamma(pi_exp) * eta``.  A ``gamma`` above one would not give
    a distribution, so it is capped at one (pure exploration).
    """

    def __init__(
        self,
        features: np.ndarray,
        eta: float,
        B: float = 1.0,
        design: Design | None = None,
        design_tol: float = 0.01,
    ):
        self.F = np.ascontiguousarray(features, dtype=float)
        if design is None:
            design = g_optimal_design(self.F, tol=design_tol)
        self.pi_exp = design.weights
        self.Gamma_val = design.leverage_max
        self.eta = float(eta)
        self.B = float(B)
        gamma = self.B * self.Gamma_val * self.eta
        if gamma > 1.0:
            log.warning("exploration weight %.3g exceeds 1; using pure exploration", gamma)
            gamma = 1.0
        self.gamma = gamma
        self.cumulative_phi = np.zeros(self.F.shape[1])
        self.t = 0

    def distributions(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(q_t, p_t)``."""
        s = self.eta * (self.F @ self.cumulative_phi)
        s -= s.max()
        q = np.exp(s)
        q /= q.sum()
        p = self.gamma * self.pi_exp + (1.0 - self.gamma) * q
        return q, p

    def estimate(self, p: np.ndarray, arm: int, reward: float) -> np.ndarray:
        """Importance-weighted parameter estimate ``reward * Q(p)^{-1} x_arm``."""
        Q = self.F.T @ (p[:, None] * self.F)
        try:
            c = linalg.cho_factor(Q, lower=True)
        except linalg.LinAlgError as exc:
            raise FactorizationError("exploration matrix is singular") from exc
        return reward * linalg.cho_solve(c, self.F[arm])

    def update(self, p: np.ndarray, arm: int, reward: float) -> None:
        self.cumulative_phi += self.estimate(p, arm, reward)
        self.t += 1


def exp3_round(
    state: Exp3State, rng: np.random.Generator
) -> tuple[int, np.ndarray, Callable[[float], None]]:
    """Sample an arm; returns ``(arm, p_t, update)`` where ``update(reward)`` closes the round."""
    _, p = state.distributions()
    arm = int(rng.choice(len(p), p=p))

    def update(reward: float) -> None:
        state.update(p, arm, reward)

    return arm, p, update


def default_eta(n_arms: int, dim: int, horizon: int) -> float:
    return math.sqrt(math.log(max(n_arms, 2)) / (dim * horizon))


class Exp3:
    def __init__(self, state: Exp3State, rng: np.random.Generator):
        self.state = state
        self.rng = rng
        self.last_p: np.ndarray | None = None
        self._pending: Callable[[float], None] | None = None

    def select(self) -> int:
        arm, self.last_p, self._pending = exp3_round(self.state, self.rng)
        return arm

    def update(self, arm: int, reward: float) -> None:
        self._pending(reward)
        self._pending = None


# -- Phased elimination -------------------------------------------------------


@dataclass
class PhaseRecord:
    phase: int
    active_before: int
    active_after: int
    pulls: int
    dim: int


class PhasedElimination:
    """Phased elimination with per-phase G-optimal designs.

    Phase ``l`` has accuracy ``eps_l = 2^-l`` and pulls each supported arm
    ``ceil(pi(a) * g_l)`` times (at least once) with
    ``g_l = noise_scale^2 * (2 D / eps_l^2) * log(|A| l (l + 1) / delta)``.
    The estimate uses only the current phase's data; arms more than
    ``2 eps_l`` below the best estimate are removed.
    """

    def __init__(
        self,
        features: np.ndarray,
        delta: float = 1e-3,
        noise_scale: float = 1.0,
        design_tol: float = 0.01,
        ridge: float = 1e-8,
        pull_constant: float = 2.0,
    ):
        self.F = np.asarray(features, dtype=float)
        self.n_arms = len(self.F)
        self.delta = delta
        self.noise_scale = noise_scale
        self.design_tol = design_tol
        self.ridge = ridge
        self.pull_constant = pull_constant
        self.active = np.arange(self.n_arms)
        self.phase = 0
        self.history: list[PhaseRecord] = []
        self._start_phase()

    def phase_accuracy(self, phase: int | None = None) -> float:
        return 2.0 ** -(self.phase if phase is None else phase)

    def pulls_per_unit(self, dim: int, phase: int) -> float:
        eps = 2.0**-phase
        return (
            self.noise_scale**2
            * self.pull_constant
            * dim
            / eps**2
            * math.log(self.n_arms * phase * (phase + 1) / self.delta)
        )

    def _start_phase(self) -> None:
        self.phase += 1
        self._pos = 0
        if len(self.active) == 1:
            self._schedule = None
            return
        Fa, self._V = span_reduce(self.F[self.active])
        r = Fa.shape[1]
        self._Fa = Fa
        if r == 0:
            # indistinguishable arms
            self.active = self.active[:1]
            self._schedule = None
            return
        try:
            design = g_optimal_design(Fa, tol=self.design_tol)
        except RankDeficientError:
            log.warning("design failed on %d active arms; keeping the first", len(self.active))
            self.active = self.active[:1]
            self._schedule = None
            return
        g = self.pulls_per_unit(r, self.phase)
        supp = design.support
        counts = np.maximum(np.ceil(design.weights[supp] * g), 1).astype(int)
        self._schedule = np.repeat(supp, counts)
        self._gram = np.zeros((r, r))
        self._moment = np.zeros(r)

    def select(self) -> int:
        if self._schedule is None:
            return int(self.active[0])
        return int(self.active[self._schedule[self._pos]])

    def update(self, arm: int, y: float) -> None:
        if self._schedule is None:
            return
        local = self._schedule[self._pos]
        x = self._Fa[local]
        self._gram += np.outer(x, x)
        self._moment += y * x
        self._pos += 1
        if self._pos == len(self._schedule):
            self._end_phase()

    def _end_phase(self) -> None:
        r = self._Fa.shape[1]
        theta = linalg.solve(self._gram + self.ridge * np.eye(r), self._moment, assume_a="pos")
        est = self._Fa @ theta
        keep = est.max() - est <= 2.0 * self.phase_accuracy()
        before = len(self.active)
        self.active = self.active[keep]
        self.history.append(
            PhaseRecord(self.phase, before, len(self.active), len(self._schedule), r)
        )
        self._start_phase()


def phased_elim_step(state: PhasedElimination, pull: Callable[[int], float]) -> PhasedElimination:
    """Run the remainder of the current phase against ``pull(arm) -> reward``."""
    phase = state.phase
    while state.phase == phase and state._schedule is not None:
        arm = state.select()
        state.update(arm, pull(arm))
    return state
