import numpy as np
import pytest

from aeal.losses import LossFamily
from aeal.simulate import (SETTINGS, Ownership, SimDesign, alt_beta, ar1_sqrt,
                           eta_bound, gen_covariates, gen_response, map_T,
                           null_beta, oracle_fit, simulate, spawn_rngs)

GAUSS = LossFamily("gaussian")
LOGIT = LossFamily("logistic")
POIS = LossFamily("poisson")


class TestSettings:
    def test_ownership_shapes(self):
        assert SETTINGS["s1"].shared_names == ()
        assert len(SETTINGS["s2"].shared_names) == 4
        assert len(SETTINGS["s3"].shared_names) == 8
        for s in ("s1", "s2", "s3"):
            assert len(SETTINGS[s].pooled_names) == 12

    def test_null_beta_puts_signal_on_a_only(self):
        b = null_beta("s2", LOGIT)
        assert list(np.nonzero(b)[0]) == list(range(8))
        assert set(b[:8]) == {0.5}
        assert set(null_beta("s1", POIS)[:6]) == {0.1}


class TestCovariates:
    def test_rho_zero_is_raw_uniforms(self):
        rng1 = np.random.default_rng(0)
        rng2 = np.random.default_rng(0)
        X = gen_covariates(50, 4, 0.0, rng1)
        raw = rng2.uniform(0, 1, (50, 4))
        assert np.array_equal(X, raw)

    def test_single_column_unchanged(self):
        rng1 = np.random.default_rng(1)
        rng2 = np.random.default_rng(1)
        X = gen_covariates(30, 1, 0.5, rng1)
        raw = rng2.uniform(0, 1, (30, 1))
        assert np.max(np.abs(X - raw)) <= 1e-12

    def test_adjacent_correlation_matches_analytic(self):
        # Cov(X) = sqrtV Cov(raw) sqrtV = V/12, so adjacent correlation = rho
        rng = np.random.default_rng(2)
        X = gen_covariates(100_000, 6, 0.25, rng)
        corr = np.corrcoef(X[:, 2], X[:, 3])[0, 1]
        assert abs(corr - 0.25) <= 0.02

    def test_entries_bounded_by_sqrtv_l1_norms(self):
        rng = np.random.default_rng(3)
        p, rho = 8, 0.4
        X = gen_covariates(5000, p, rho, rng)
        bound = np.abs(ar1_sqrt(p, rho)).sum(axis=0)  # |row| <= l1 norm of column
        assert np.all(np.abs(X) <= bound[None, :] + 1e-12)

    def test_deterministic_under_seed(self):
        X1 = gen_covariates(40, 5, 0.3, np.random.default_rng(4))
        X2 = gen_covariates(40, 5, 0.3, np.random.default_rng(4))
        assert np.array_equal(X1, X2)

    def test_centered_option(self):
        X = gen_covariates(20_000, 3, 0.0, np.random.default_rng(5), centered=True)
        assert abs(X.mean()) <= 0.01


class TestResponses:
    def test_logistic_balanced_at_zero_beta(self):
        rng = np.random.default_rng(6)
        X = gen_covariates(10_000, 4, 0.0, rng)
        y = gen_response(LOGIT, X, np.zeros(4), rng)
        assert abs(y.mean() - 0.5) <= 0.02

    def test_gaussian_unit_noise(self):
        rng = np.random.default_rng(7)
        X = gen_covariates(10_000, 4, 0.0, rng)
        y = gen_response(GAUSS, X, np.zeros(4), rng)
        assert 0.95 <= y.var() <= 1.05

    def test_poisson_rates_moderate_at_small_coefficients(self):
        rng = np.random.default_rng(8)
        X = gen_covariates(10_000, 12, 0.0, rng)
        y = gen_response(POIS, X, np.full(12, 0.1), rng)
        assert np.all(y >= 0)
        assert y.mean() < 10.0

    def test_logcosh_uses_gaussian_generator(self):
        rng1 = np.random.default_rng(9)
        rng2 = np.random.default_rng(9)
        X = np.zeros((100, 2))
        y1 = gen_response(LossFamily("logcosh"), X, np.zeros(2), rng1)
        y2 = gen_response(GAUSS, X, np.zeros(2), rng2)
        assert np.array_equal(y1, y2)


class TestOracle:
    def test_matches_normal_equations(self):
        rng = np.random.default_rng(10)
        X = rng.normal(size=(80, 5))
        y = rng.normal(size=80)
        fit = oracle_fit(X, y, GAUSS)
        want = np.linalg.solve(X.T @ X, X.T @ y)
        assert np.max(np.abs(fit.beta - want)) <= 1e-10


class TestMapT:
    def test_disjoint_concatenation(self):
        own = SETTINGS["s1"]
        ba = np.arange(6.0)
        bb = np.arange(6.0, 12.0)
        assert np.array_equal(map_T(ba, bb, own), np.arange(12.0))

    def test_shared_block_addition(self):
        own = Ownership(a_names=("x1", "c1", "c2"), b_names=("c1", "c2", "x2"))
        ba = np.array([7.0, 1.0, 0.0])
        bb = np.array([0.5, 2.0, 9.0])
        got = map_T(ba, bb, own)
        # pooled order: x1, c1, c2, x2; shared entries add: (1.5, 2.0)
        assert np.array_equal(got, np.array([7.0, 1.5, 2.0, 9.0]))


class TestEtaBound:
    def test_orthonormal_design(self):
        rng = np.random.default_rng(11)
        q, _ = np.linalg.qr(rng.normal(size=(100, 4)))
        X = q * np.sqrt(100)  # X'X/n = I
        y = rng.normal(size=100)
        eta = eta_bound(X, y, GAUSS, np.zeros(4))
        assert eta == pytest.approx(0.75, abs=1e-10)

    def test_limit_towards_one(self):
        rng = np.random.default_rng(12)
        X = rng.normal(size=(200, 3))
        X[:, 0] *= 10.0  # growing lmax/lmin pushes the bound towards 1
        eta = eta_bound(X, rng.normal(size=200), GAUSS, np.zeros(3))
        assert 0.99 < eta < 1.0

    def test_against_power_iteration(self):
        def power_extremes(H, iters=50_000):
            v = np.ones(H.shape[0]) / np.sqrt(H.shape[0])
            for _ in range(iters):
                v = H @ v
                v /= np.linalg.norm(v)
            lmax = float(v @ H @ v)
            # invert the spectrum around lmax to expose the smallest eigenvalue
            M = lmax * 1.0001 * np.eye(H.shape[0]) - H
            w = np.ones(H.shape[0]) / np.sqrt(H.shape[0])
            for _ in range(iters):
                w = M @ w
                w /= np.linalg.norm(w)
            lmin = float(w @ H @ w)
            return lmin, lmax

        design = SimDesign(setting="s1", n=400, rho=0.0, family=GAUSS)
        sim = simulate(design, np.random.default_rng(13), hypothesis="h1")
        H = sim.X.T @ sim.X / 400
        lmin, lmax = power_extremes(H)
        want = 1 - lmin ** 3 / (4 * lmax ** 3)
        got = eta_bound(sim.X, sim.y, GAUSS, np.zeros(12))
        assert got == pytest.approx(want, abs=1e-8)


class TestHarness:
    def test_simulate_h0_vs_h1(self):
        design = SimDesign(setting="s1", n=50, rho=0.1, family=LOGIT)
        h0 = simulate(design, np.random.default_rng(14), hypothesis="h0")
        assert np.array_equal(h0.beta_true, null_beta("s1", LOGIT))
        h1 = simulate(design, np.random.default_rng(14), hypothesis="h1")
        assert not np.array_equal(h1.beta_true, h0.beta_true)

    def test_views_match_ownership(self):
        design = SimDesign(setting="s2", n=30, rho=0.0, family=GAUSS)
        sim = simulate(design, np.random.default_rng(15))
        pos = {nm: j for j, nm in enumerate(sim.ownership.pooled_names)}
        assert np.array_equal(sim.X_a, sim.X[:, [pos[n] for n in sim.ownership.a_names]])
        assert np.array_equal(sim.X_b, sim.X[:, [pos[n] for n in sim.ownership.b_names]])

    def test_spawned_rngs_independent_and_reproducible(self):
        a = [r.uniform() for r in spawn_rngs(1, 3)]
        b = [r.uniform() for r in spawn_rngs(1, 3)]
        assert a == b
        assert len(set(a)) == 3

    def test_alt_beta_variances(self):
        rng = np.random.default_rng(16)
        draws = np.array([alt_beta(LOGIT, rng) for _ in range(4000)])
        assert abs(draws.var() - 0.25) <= 0.02
        draws_p = np.array([alt_beta(POIS, rng) for _ in range(4000)])
        assert abs(draws_p.var() - 0.01) <= 0.002
