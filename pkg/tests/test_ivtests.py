import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

import oracles
from oracles import make_data
from weakiv import (
    ConfigError,
    IVDataset,
    UnsupportedError,
    ar_test,
    clr_test,
    j_liml,
    j_statistic,
    kappa_liml,
    liml,
    lm_test,
    lm_test_plugin,
    lr_test,
    rank_test,
    run_test,
    test_with_exogenous_of_interest,
    tsls,
    wald_test,
)
from weakiv.ivtests import lm_objective, s_min
from weakiv.montecarlo import DGPSpec, null_pvalues

dims = st.fixed_dictionaries(
    {
        "seed": st.integers(0, 10**6),
        "k": st.integers(2, 7),
        "mw": st.integers(0, 1),
        "strength": st.sampled_from([0.05, 0.3, 1.0]),
    }
)


def _S(d):
    return np.column_stack([d.X, d.W])


class TestAR:
    def test_orthogonal_residual(self):
        rng = np.random.default_rng(0)
        n = 30
        Z = rng.standard_normal((n, 3))
        X = rng.standard_normal((n, 1))
        y = 2.0 * X[:, 0] + np.linalg.svd(Z, full_matrices=True)[0][:, -1]
        r = ar_test(IVDataset(y=y, X=X, Z=Z), [2.0])
        assert r.statistic == pytest.approx(0.0, abs=1e-12) and r.p_value == pytest.approx(1.0)

    @settings(max_examples=25)
    @given(dims)
    def test_dense_oracle(self, p):
        d = make_data(p["seed"], k=p["k"], mw=p["mw"], strength=p["strength"])
        b = [0.7]
        r = ar_test(d, b)
        assert r.statistic == pytest.approx(oracles.ar_statistic(d.y, d.X, d.W, d.Z, b), rel=1e-7)
        assert str(r.dist) == f"chi2({d.k - d.mw})"

    def test_inner_minimum_is_liml_of_reduced_system(self):
        d = make_data(1, k=5, mw=1)
        b = np.array([0.4])
        reduced = IVDataset(y=d.y - d.X @ b, X=d.W, Z=d.Z)
        expected = (d.n - d.k) * (kappa_liml(reduced) - 1.0)
        assert ar_test(d, b).statistic == pytest.approx(expected, rel=1e-10)


class TestLR:
    def test_zero_at_liml(self):
        d = make_data(2, k=5)
        r = lr_test(d, liml(d).coef)
        assert r.statistic == pytest.approx(0.0, abs=1e-8) and r.p_value == pytest.approx(1.0)

    @settings(max_examples=25)
    @given(dims, st.floats(-3, 3))
    def test_decomposition(self, p, b):
        d = make_data(p["seed"], k=p["k"], mw=p["mw"], strength=p["strength"])
        ar, lr = ar_test(d, [b]), lr_test(d, [b])
        jl = j_liml(d).statistic
        assert ar.statistic == pytest.approx(lr.statistic + jl, rel=1e-10, abs=1e-8)

    def test_wald_liml_relation(self):
        d = make_data(3, k=5)
        fit = liml(d)
        for b in (0.0, 0.8, 1.3):
            u = oracles.M(d.Z) @ (d.y - d.X[:, 0] * b)
            sigma2_b = u @ u / (d.n - d.k)
            scale = fit.sigma2_wald / sigma2_b
            lr = lr_test(d, [b]).statistic
            assert lr == pytest.approx(scale * wald_test(d, [b], "liml").statistic, rel=1e-8)


class TestWald:
    def test_center(self):
        d = make_data(4, mw=1, k=4)
        r = wald_test(d, tsls(d).coef[:1])
        assert r.statistic == pytest.approx(0.0, abs=1e-12) and r.p_value == pytest.approx(1.0)

    @pytest.mark.parametrize("estimator, kappa", [("tsls", None), ("liml", None), (0.5, 0.5)])
    def test_dense_oracle(self, estimator, kappa):
        d = make_data(5, mw=1, k=4)
        if kappa is None:
            kappa = 1.0 if estimator == "tsls" else kappa_liml(d)
        expected = oracles.wald(d.y, _S(d), d.Z, kappa, [0.2], 1)
        assert wald_test(d, [0.2], estimator).statistic == pytest.approx(expected, rel=1e-8)


class TestLM:
    @settings(max_examples=25)
    @given(st.integers(0, 10**6), st.integers(1, 6), st.floats(-2, 2))
    def test_kleibergen_dense_oracle(self, seed, k, b):
        d = make_data(seed, k=k)
        assert lm_test(d, [b]).statistic == pytest.approx(
            oracles.lm_kleibergen(d.y, d.X, d.Z, [b]), rel=1e-8, abs=1e-10
        )

    def test_just_identified_equals_ar(self):
        for seed in range(10):
            d = make_data(seed, k=2, mx=2)
            b = np.array([0.5, 1.5])
            assert lm_test(d, b).statistic == pytest.approx(ar_test(d, b).statistic, rel=1e-8)

    def test_orthogonal_residual(self):
        rng = np.random.default_rng(0)
        Z = rng.standard_normal((30, 3))
        X = rng.standard_normal((30, 1))
        y = X[:, 0] + np.linalg.svd(Z, full_matrices=True)[0][:, -1]
        assert lm_test(IVDataset(y=y, X=X, Z=Z), [1.0]).statistic == pytest.approx(0.0, abs=1e-12)

    def test_objective_dense_oracle(self):
        d = make_data(6, k=5, mw=1)
        f = lm_objective(d.moments, [0.3])
        for g in (-1.0, 0.2, 2.5):
            assert f([g]) == pytest.approx(
                oracles.lm_subvector_objective(d.y, d.X, d.W, d.Z, [0.3], [g]), rel=1e-8
            )

    @pytest.mark.parametrize("seed", range(6))
    def test_grid_scan(self, seed):
        """The minimizer is a local minimum no worse than either start; seeded
        with the best point of a dense scan it reaches the global minimum."""
        d = make_data(seed, n=150, k=5, mw=1, strength=0.3)
        b = [0.5]
        f = lm_objective(d.moments, b)
        r = lm_test(d, b)
        gs = r.diagnostics["gamma_star"][0]
        for start in r.diagnostics["starts"]:
            assert r.statistic <= f(start["start"]) + 1e-12
        h = 1e-3 * (1 + abs(gs))
        assert r.statistic <= min(f([gs - h]), f([gs + h])) + 1e-9
        grid = np.linspace(-20, 20, 8001)
        vals = np.array([f([g]) for g in grid])
        best = grid[vals.argmin()]
        seeded = lm_test(d, b, extra_starts=[[best]])
        assert seeded.statistic <= vals.min() + 1e-9
        assert seeded.statistic >= vals.min() - 1e-3 * (1 + vals.min())

    def test_minimized_not_above_plugin(self):
        for seed in range(20):
            d = make_data(seed, k=6, mw=1, strength=0.2)
            assert lm_test(d, [0.0]).statistic <= lm_test_plugin(d, [0.0]).statistic + 1e-9


class TestCLR:
    def test_just_identified_equals_lr(self):
        d = make_data(7, k=1)
        for b in (0.0, 0.9, 2.0):
            clr, lr = clr_test(d, [b]), lr_test(d, [b])
            assert clr.p_value == pytest.approx(lr.p_value, abs=1e-8)

    def test_s_min_zero_gives_ar_calibration(self):
        rng = np.random.default_rng(0)
        n, k = 50, 4
        Z = rng.standard_normal((n, k))
        y = rng.standard_normal(n)
        # at beta0 = 0, u = y; choosing X = M_Z x + t P_Z y with
        # t = y'M_Z x / y'M_Z y makes P_Z X~ vanish, so s_min = 0
        x = oracles.M(Z) @ rng.standard_normal(n)
        t = (y @ oracles.M(Z) @ x) / (y @ oracles.M(Z) @ y)
        X = x + t * (oracles.P(Z) @ y)
        d = IVDataset(y=y, X=X, Z=Z)
        r = clr_test(d, [0.0])
        assert r.diagnostics["s_min"] == pytest.approx(0.0, abs=1e-8)
        assert r.p_value == pytest.approx(stats.chi2.sf(r.statistic, k), abs=1e-7)

    def test_strong_instruments_near_chi2(self):
        d = make_data(8, n=2000, k=5, strength=2.0)
        b = liml(d).coef[0] + 0.05
        r = clr_test(d, [b])
        assert r.diagnostics["s_min"] > 1e4
        assert r.p_value == pytest.approx(stats.chi2.sf(r.statistic, 1), abs=1e-3)

    @pytest.mark.parametrize("seed", range(4))
    def test_s_min_dense_oracle(self, seed):
        d = make_data(seed, k=4)
        assert s_min(d.moments, [0.3]) == pytest.approx(
            oracles.s_min_no_nuisance(d.y, d.X, d.Z, [0.3]), rel=1e-8
        )

    def test_s_min_with_nuisance(self):
        d = make_data(9, k=5, mw=1)
        lam = np.sort(np.linalg.eigvals(np.linalg.solve(
            np.column_stack([d.y, _S(d)]).T @ oracles.M(d.Z) @ np.column_stack([d.y, _S(d)]),
            np.column_stack([d.y, _S(d)]).T @ oracles.P(d.Z) @ np.column_stack([d.y, _S(d)]),
        )).real)
        mu = oracles.ar_statistic(d.y, d.X, d.W, d.Z, [0.3]) / (d.n - d.k)
        expected = (d.n - d.k) * (lam[0] + lam[1] - mu)
        r = clr_test(d, [0.3])
        assert r.diagnostics["s_min"] == pytest.approx(max(expected, 0.0), rel=1e-6, abs=1e-8)
        assert "conjectural" in r.diagnostics["note"]


class TestRank:
    def test_first_stage_f(self):
        d = make_data(10, k=4)
        x = d.X[:, 0]
        rss_full = x @ oracles.M(d.Z) @ x
        expected = (d.n - d.k) * (x @ x - rss_full) / rss_full
        r = rank_test(d)
        assert r.statistic == pytest.approx(expected, rel=1e-10)
        assert str(r.dist) == "chi2(4)"

    @pytest.mark.parametrize("r", [1, 2])
    def test_dense_oracle(self, r):
        d = make_data(11, k=5, mx=1, mw=1)
        ev = oracles.rank_eigenvalues(_S(d), d.Z)
        res = rank_test(d, r)
        assert res.statistic == pytest.approx(ev[:r].sum(), rel=1e-10)
        assert res.dist.df == r * (d.k - 2 + r)

    def test_collinear_first_stage_fit(self):
        d = make_data(12, k=4, mx=2)
        X = d.X.copy()
        X[:, 1] = oracles.M(d.Z) @ X[:, 1] + 0.5 * oracles.P(d.Z) @ X[:, 0]
        dd = IVDataset(y=d.y, X=X, Z=d.Z)
        ev = oracles.rank_eigenvalues(X, d.Z)
        assert rank_test(dd).statistic == pytest.approx(ev[0], abs=1e-10 * ev[-1])

    @pytest.mark.parametrize("seed", range(5))
    def test_combination_in_instrument_span(self, seed):
        # W - X = Z_0 lies in span(Z): that direction is perfectly instrumented,
        # so the statistic is the rank test of X after partialling Z_0 out
        d = make_data(seed, n=200, k=4, strength=0.3)
        W = d.X[:, 0] + 3.0 * d.Z[:, 0]
        res = rank_test(IVDataset(y=d.y, X=d.X, W=W, Z=d.Z))
        M0 = oracles.M(d.Z[:, :1])
        x, Zr = M0 @ d.X[:, 0], M0 @ d.Z[:, 1:]
        lam = (x @ oracles.P(Zr) @ x) / (x @ oracles.M(Zr) @ x)
        assert res.statistic == pytest.approx((d.n - d.k) * lam, rel=1e-8)
        assert res.diagnostics["eigenvalues"][-1] == np.inf

    def test_bad_r(self):
        with pytest.raises(ConfigError):
            rank_test(make_data(0), 2)

    @pytest.mark.slow
    def test_null_calibration(self):
        rng_stats = []
        for rep in range(500):
            rng = np.random.default_rng([rep, 99])
            n, k = 2000, 3
            Z = rng.standard_normal((n, k))
            x = rng.standard_normal(n)
            y = x + rng.standard_normal(n)
            rng_stats.append(rank_test(IVDataset(y=y, X=x, Z=Z)).p_value)
        assert stats.kstest(rng_stats, "uniform").statistic < 0.05


class TestJ:
    def test_just_identified(self):
        d = make_data(13, k=1)
        for fn in (j_statistic, j_liml):
            r = fn(d)
            assert r.statistic == 0.0 and r.p_value == 1.0 and "just" in r.diagnostics["note"]

    @settings(max_examples=20)
    @given(dims)
    def test_j_bounds_j_liml(self, p):
        d = make_data(p["seed"], k=p["k"] + 1, mw=p["mw"], strength=p["strength"])
        jl = j_liml(d).statistic
        assert jl == pytest.approx((d.n - d.k) * (kappa_liml(d) - 1.0), rel=1e-10)
        assert j_statistic(d).statistic >= jl - 1e-9 * (1 + jl)


class TestInvariance:
    @pytest.mark.parametrize("kind", ["ar", "lr", "lm", "clr"])
    def test_instrument_reparametrization(self, kind):
        d = make_data(14, k=4, mw=1, strength=0.5)
        G = np.random.default_rng(3).standard_normal((4, 4)) + 3 * np.eye(4)
        d2 = IVDataset(y=d.y, X=d.X, W=d.W, Z=d.Z @ G)
        a, b = run_test(d, kind, [0.4]), run_test(d2, kind, [0.4])
        assert a.statistic == pytest.approx(b.statistic, rel=1e-8, abs=1e-10)


class TestResultContract:
    @pytest.mark.parametrize("kind", ["ar", "lr", "clr", "lm", "lm_plugin", "wald_tsls", "wald_liml"])
    def test_p_value_is_upper_tail(self, kind):
        d = make_data(15, k=4, mw=1)
        r = run_test(d, kind, [0.6])
        assert r.statistic >= 0
        assert r.p_value == pytest.approx(1.0 - r.dist.cdf(r.statistic), abs=1e-10)
        assert set(r.to_dict()) == {"statistic", "dist", "p_value", "diagnostics"}

    def test_unknown_kind(self):
        with pytest.raises(ConfigError, match="unknown test"):
            run_test(make_data(0), "score", [0.0])

    def test_beta_length(self):
        with pytest.raises(ConfigError, match="length"):
            run_test(make_data(0), "ar", [0.0, 1.0])


class TestExogenousOfInterest:
    def test_no_d_is_plain_test(self):
        d = make_data(16, k=4)
        for kind in ("ar", "clr", "lm"):
            a = test_with_exogenous_of_interest(d, [0.3], [], kind)
            assert a.statistic == run_test(d, kind, [0.3]).statistic

    @pytest.mark.parametrize("kind", ["ar", "lr", "lm", "wald"])
    def test_augmentation_oracle(self, kind):
        d = make_data(17, k=4, md=1)
        aug = IVDataset(y=d.y, X=np.column_stack([d.X, d.D]), Z=np.column_stack([d.Z, d.D]))
        a = test_with_exogenous_of_interest(d, [0.8], [0.5], kind)
        b = run_test(aug, kind, [0.8, 0.5])
        assert a.statistic == pytest.approx(b.statistic, rel=1e-8)

    def test_delta_only(self):
        d = make_data(18, k=3, md=2, mx=0, mw=1)
        a = test_with_exogenous_of_interest(d, [], [0.5, 0.5], "ar")
        aug = IVDataset(y=d.y, X=d.D, W=d.W, Z=np.column_stack([d.Z, d.D]))
        assert a.statistic == pytest.approx(ar_test(aug, [0.5, 0.5]).statistic, rel=1e-8)

    def test_clr_with_d(self):
        d = make_data(19, k=4, md=1, n=400)
        r = test_with_exogenous_of_interest(d, [1.0], [0.5], "clr")
        assert str(r.dist).startswith("gamma_cvf_plus_chi2(4, 1,")
        assert 0.0 <= r.p_value <= 1.0 and r.diagnostics["s_min"] > 0
        lr = test_with_exogenous_of_interest(d, [1.0], [0.5], "lr")
        assert r.statistic == pytest.approx(lr.statistic)

    def test_clr_with_d_and_w_unsupported(self):
        d = make_data(20, k=4, md=1, mw=1)
        with pytest.raises(UnsupportedError):
            test_with_exogenous_of_interest(d, [1.0], [0.5], "clr")

    def test_nuisance_endogenous_with_d(self):
        # income-style nuisance regressor with an exogenous coefficient of interest
        d = make_data(21, k=3, mx=0, mw=1, md=1, n=500)
        r = test_with_exogenous_of_interest(d, [], [0.5], "lm")
        assert np.isfinite(r.statistic) and 0 <= r.p_value <= 1


@pytest.mark.slow
def test_null_calibration_strong_design():
    spec = DGPSpec(n=2000, k=5, pi_x_norm=100, pi_w_norm=100, pi_inner=0)
    tests = ["ar", "lr", "clr", "lm", "wald_tsls"]
    pv = null_pvalues(tests, spec, reps=300, seed=5)
    for t in tests:
        assert stats.kstest(pv[t], "uniform").statistic < 0.09, t
