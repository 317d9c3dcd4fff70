import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from apgbandit.misspec import (
    Exp3,
    Exp3State,
    LinBanditState,
    LinParams,
    LinTS,
    LinUCB,
    PhasedElimination,
    RankDeficientError,
    default_eta,
    exp3_round,
    g_optimal_design,
    leverages,
    phased_elim_step,
    span_reduce,
)
from apgbandit.numerics import sample_gaussian


def random_arms(rng, n, d):
    F = rng.standard_normal((n, d))
    return F / np.linalg.norm(F, axis=1, keepdims=True) * rng.uniform(0.3, 1.0, size=(n, 1))


class ReferenceLinUCB:
    """Recomputes everything from the raw history with dense inverses."""

    def __init__(self, F, p: LinParams):
        self.F, self.p = F, p
        self.X, self.y = [], []

    def _A(self, upto=None):
        X = np.array(self.X[:upto]).reshape(-1, self.F.shape[1])
        return self.p.lam * np.eye(self.F.shape[1]) + X.T @ X

    def logdet(self):
        return np.linalg.slogdet(self._A() / self.p.lam)[1]

    def beta(self):
        p = self.p
        return p.R * math.sqrt(self.logdet() + 2 * math.log(1 / p.delta)) + math.sqrt(p.lam) * p.B

    def psi(self):
        return sum(math.sqrt(x @ np.linalg.inv(self._A(s)) @ x) for s, x in enumerate(self.X))

    def select(self):
        inv = np.linalg.inv(self._A())
        b = np.array(self.y) @ np.array(self.X) if self.X else np.zeros(self.F.shape[1])
        theta = inv @ b
        w = self.beta() + self.p.eps * self.psi()
        s = self.F @ theta + np.sqrt(np.einsum("ij,jk,ik->i", self.F, inv, self.F)) * w
        return int(np.argmax(s))

    def update(self, arm, y):
        self.X.append(self.F[arm])
        self.y.append(y)


def test_beta_at_start():
    st_ = LinBanditState(3, LinParams(R=0.5, B=2.0, delta=0.01))
    assert st_.beta() == pytest.approx(0.5 * math.sqrt(2 * math.log(100)) + 2.0, rel=1e-15)
    assert LinBanditState(3, LinParams(R=0.5, B=2.0, delta=1.0)).beta() == 2.0


def test_beta_against_determinant():
    rng = np.random.default_rng(0)
    p = LinParams(lam=1.5, R=0.3, B=1.0, delta=0.05)
    st_ = LinBanditState(3, p)
    X = random_arms(rng, 20, 3)
    for x in X:
        st_.update(x, rng.standard_normal())
    A = 1.5 * np.eye(3) + X.T @ X
    want = 0.3 * math.sqrt(math.log(np.linalg.det(A / 1.5) / 0.05**2)) + math.sqrt(1.5)
    assert abs(st_.beta() - want) < 1e-8


def test_ucb_first_round_and_ties():
    F = np.array([[0.5, 0.0], [0.0, 0.9], [0.9, 0.0]])
    assert LinBanditState(2).ucb_select(F) == 1
    F = np.array([[0.3, 0.4], [0.3, 0.4]])
    assert LinBanditState(2).ucb_select(F) == 0
    assert LinUCB(F).select() == 0


def test_ucb_one_step_hand_example():
    F = np.array([[1.0, 0.0], [0.6, 0.6]])
    p = LinParams(R=0.1, B=1.0, delta=0.1)
    ref = ReferenceLinUCB(F, p)
    st_ = LinBanditState(2, p)
    st_.update(F[0], 0.2)
    ref.update(0, 0.2)
    assert st_.ucb_select(F) == ref.select()


def test_first_update():
    st_ = LinBanditState(3)
    st_.update(np.array([1.0, 0, 0]), 0.0)
    assert st_.psi == 1.0
    assert np.allclose(st_.tracker.inv, np.diag([0.5, 1, 1]), atol=1e-16)
    assert np.all(st_.theta_hat == 0)


def test_zero_rewards_keep_theta_zero():
    rng = np.random.default_rng(1)
    st_ = LinBanditState(4)
    for x in random_arms(rng, 30, 4):
        st_.update(x, 0.0)
        assert np.all(st_.theta_hat == 0.0)


def test_psi_and_theta_against_direct():
    rng = np.random.default_rng(2)
    D = 4
    st_ = LinBanditState(D, LinParams(lam=2.0))
    X = random_arms(rng, 50, D)
    y = rng.standard_normal(50)
    psi, prev = 0.0, 0.0
    for s, (x, r) in enumerate(zip(X, y)):
        A = 2.0 * np.eye(D) + X[:s].T @ X[:s]
        psi += math.sqrt(x @ np.linalg.solve(A, x))
        st_.update(x, r)
        assert abs(st_.psi - psi) < 1e-8
        assert st_.psi >= prev
        prev = st_.psi
        assert np.max(np.abs(st_.theta_hat - st_.tracker.inv @ st_.b)) < 1e-8
        assert st_.psi <= math.sqrt((s + 1) * 2 * st_.tracker.logdet) + 1e-12


@pytest.mark.parametrize("seed", range(10))
def test_linucb_matches_reference(seed):
    rng = np.random.default_rng(seed)
    D = int(rng.integers(1, 6))
    n = int(rng.integers(2, 12))
    F = random_arms(rng, n, D)
    theta = rng.standard_normal(D) / math.sqrt(D)
    p = LinParams(lam=1.0, R=0.2, B=1.0, delta=0.01)
    alg, ref = LinUCB(F, p), ReferenceLinUCB(F, p)
    for _ in range(60):
        a = alg.select()
        assert a == ref.select()
        y = F[a] @ theta + 0.2 * rng.standard_normal()
        alg.update(a, y)
        ref.update(a, y)
    assert abs(alg.state.beta() - ref.beta()) < 1e-8
    assert abs(alg.state.psi - ref.psi()) < 1e-8


def test_linucb_incremental_cache_matches_full_rescoring():
    rng = np.random.default_rng(3)
    F = random_arms(rng, 40, 6)
    alg = LinUCB(F, LinParams(R=0.1, eps=0.01))
    for t in range(1100):
        a = alg.select()
        alg.update(a, rng.standard_normal())
        if t % 97 == 0 or t in (510, 511, 512, 1023):
            full = alg.state.ucb_scores(F)
            assert np.max(np.abs(alg.scores() - full)) < 1e-9


def test_ucb_sublinear_on_linear_instance():
    ratios = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        F = random_arms(rng, 50, 5)
        theta = rng.standard_normal(5)
        theta /= np.linalg.norm(theta)
        f = F @ theta
        alg = LinUCB(F, LinParams(R=0.1))
        reg = []
        for t in range(4000):
            a = alg.select()
            alg.update(a, f[a] + 0.1 * rng.standard_normal())
            reg.append(f.max() - f[a])
        c = np.cumsum(reg)
        ratios.append((c[1999] / c[999], c[3999] / c[1999]))
    r = np.mean(ratios, axis=0)
    assert r[0] < 1.8 and r[1] < 1.8


def test_ts_zero_scale_is_greedy():
    p = LinParams(R=0.0, B=0.0, delta=1.0, eps=0.0)
    rng = np.random.default_rng(4)
    F = random_arms(rng, 10, 3)
    ts = LinTS(F, p, rng)
    for a in (2, 5, 5, 7):
        ts.update(a, float(a) / 10)
    assert ts.select() == int(np.argmax(F @ ts.state.theta_hat))


def test_ts_initial_covariance():
    p = LinParams(R=0.3, B=1.0, delta=0.01)
    st_ = LinBanditState(3, p)
    scale = st_.width(p.delta / 2)
    assert scale == pytest.approx(0.3 * math.sqrt(2 * math.log(200)) + 1.0)
    rng = np.random.default_rng(5)
    draws = np.array([sample_gaussian(st_.theta_hat, scale, st_.tracker, rng) for _ in range(100_000)])
    target = scale**2 * np.eye(3)
    assert np.linalg.norm(np.cov(draws.T) - target) / np.linalg.norm(target) < 0.05


def test_ts_deterministic_given_seed():
    F = random_arms(np.random.default_rng(6), 20, 4)

    def seq():
        ts = LinTS(F, LinParams(R=0.1), np.random.default_rng(11))
        out = []
        for i in range(50):
            a = ts.select()
            ts.update(a, F[a, 0])
            out.append(a)
        return out

    assert seq() == seq()


# -- design -------------------------------------------------------------------


def test_design_standard_basis():
    d = g_optimal_design(np.eye(4))
    assert np.allclose(d.weights, 0.25) and d.leverage_max == pytest.approx(4.0)
    d = g_optimal_design(np.array([[0.7]]))
    assert d.weights.tolist() == [1.0] and d.leverage_max == pytest.approx(1.0)


def test_design_random_r4():
    F = random_arms(np.random.default_rng(7), 30, 4)
    d = g_optimal_design(F)
    brute = max(x @ np.linalg.inv(F.T @ (d.weights[:, None] * F)) @ x for x in F)
    assert brute <= 4 * 1.01
    assert d.leverage_max == pytest.approx(brute, rel=1e-9)


def test_design_rank_deficient():
    F = np.array([[1.0, 0.0], [0.5, 0.0], [-1.0, 0.0]])
    with pytest.raises(RankDeficientError):
        g_optimal_design(F)
    Fr, V = span_reduce(F)
    assert Fr.shape == (3, 1)
    assert np.allclose(Fr @ Fr.T, F @ F.T)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), D=st.integers(1, 6), extra=st.integers(0, 40))
def test_design_properties(seed, D, extra):
    F = random_arms(np.random.default_rng(seed), D + extra, D)
    d = g_optimal_design(F)
    assert abs(d.weights.sum() - 1) < 1e-12 and np.all(d.weights >= 0)
    assert d.converged
    assert np.max(leverages(F, d.weights)) <= D * 1.01 + 1e-9


# -- EXP3 ---------------------------------------------------------------------


def test_exp3_first_round():
    F = np.eye(3)
    eta = 0.05
    s = Exp3State(F, eta)
    assert s.gamma == pytest.approx(eta * 3)
    q, p = s.distributions()
    assert np.allclose(q, 1 / 3)
    assert np.allclose(p, s.gamma * s.pi_exp + (1 - s.gamma) / 3)


def test_exp3_gamma_formula_and_cap(caplog):
    F = random_arms(np.random.default_rng(8), 12, 3)
    s = Exp3State(F, 0.01, B=2.0)
    assert s.gamma == 2.0 * s.Gamma_val * 0.01
    s = Exp3State(F, 10.0)
    assert s.gamma == 1.0
    assert "exceeds 1" in caplog.text


def test_exp3_unbiased_estimator():
    rng = np.random.default_rng(9)
    F = random_arms(rng, 4, 2)
    s = Exp3State(F, 0.1)
    s.cumulative_phi = rng.standard_normal(2)
    theta = rng.standard_normal(2) * 0.5
    g = F @ theta
    _, p = s.distributions()
    mean_phi = sum(p[a] * s.estimate(p, a, g[a]) for a in range(4))
    assert np.max(np.abs(F @ mean_phi - g)) < 1e-10


def test_exp3_distributions_stay_valid():
    rng = np.random.default_rng(10)
    F = random_arms(rng, 15, 3)
    s = Exp3State(F, default_eta(15, 3, 10_000))
    theta = rng.standard_normal(3)
    for t in range(10_000):
        arm, p, upd = exp3_round(s, rng)
        assert abs(p.sum() - 1.0) < 1e-9 and np.all(p >= 0)
        assert np.all(p >= s.gamma * s.pi_exp - 1e-15)
        upd(float(F[arm] @ theta) / 2)
    q, p = s.distributions()
    assert abs(q.sum() - 1) < 1e-12


def test_exp3_sublinear_adversarial():
    ratios = []
    for seed in range(10):
        rng = np.random.default_rng(seed)
        F = random_arms(rng, 8, 3)
        base = rng.standard_normal(3)
        base /= 2 * np.linalg.norm(base)
        T = 4000
        thetas = base + 0.3 * rng.standard_normal((T, 3)) / math.sqrt(3)
        G = thetas @ F.T
        G /= max(1.0, np.abs(G).max())
        s = Exp3State(F, default_eta(8, 3, T))
        pol = Exp3(s, rng)
        exp_gain = []
        for t in range(T):
            a = pol.select()
            exp_gain.append(pol.last_p @ G[t])
            pol.update(a, G[t, a])
        exp_gain = np.cumsum(exp_gain)
        best = lambda n: G[:n].sum(axis=0).max()
        ratios.append((best(T) - exp_gain[-1]) / (best(T // 2) - exp_gain[T // 2 - 1]))
    assert np.mean(ratios) < 1.8


# -- phased elimination --------------------------------------------------------

THREE_ARMS = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
THETA3 = np.array([0.5, 0.0])


def test_pe_noiseless_schedule():
    pe = PhasedElimination(THREE_ARMS, delta=0.05, noise_scale=0.0)
    f = THREE_ARMS @ THETA3
    for _ in range(4):
        phased_elim_step(pe, lambda a: f[a])
        if len(pe.active) == 1:
            break
    after = [h.active_after for h in pe.history]
    assert after == [3, 3, 1]
    assert pe.active.tolist() == [0]
    assert 2 * pe.phase_accuracy(3) < 0.5 <= 2 * pe.phase_accuracy(2)


def test_pe_single_arm():
    pe = PhasedElimination(np.array([[0.3, 0.4]]))
    for _ in range(20):
        assert pe.select() == 0
        pe.update(0, 1.0)
    assert pe.history == []


def test_pe_active_set_shrinks():
    rng = np.random.default_rng(12)
    F = random_arms(rng, 30, 3)
    f = F @ np.array([0.6, -0.2, 0.1])
    pe = PhasedElimination(F, delta=0.05, noise_scale=0.1)
    sizes = [len(pe.active)]
    for _ in range(20_000):
        a = pe.select()
        pe.update(a, f[a] + 0.1 * rng.standard_normal())
        sizes.append(len(pe.active))
    assert all(a >= b for a, b in zip(sizes, sizes[1:]))
    assert int(np.argmax(f)) in pe.active
