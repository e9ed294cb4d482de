import math

import numpy as np
import pytest
from scipy import stats

from concordance.core import ConcordanceError, KernelSpec, PairedSample, RciParams
from concordance.exact_null import exact_ci_test
from concordance.simulation import (
    BivariateBetaSpec,
    NoiseSpec,
    PowerConfig,
    add_noise,
    beta_model_correlation,
    level_set_effect_size,
    pearson_power,
    run_null_calibration_sim,
    run_power_sim,
    sample_bivariate_beta,
    sample_bivariate_normal,
    solve_dirichlet_params,
)


class TestBivariateNormal:
    def test_correlation(self):
        s = sample_bivariate_normal(200_000, 0.4, seed=1)
        assert np.corrcoef(s.x, s.y)[0, 1] == pytest.approx(0.4, abs=0.005)
        assert np.std(s.y) == pytest.approx(1.0, abs=0.01)

    def test_seeded(self):
        a = sample_bivariate_normal(10, 0.2, seed=3)
        b = sample_bivariate_normal(10, 0.2, seed=3)
        np.testing.assert_array_equal(a.y, b.y)

    def test_invalid_r(self):
        with pytest.raises(ConcordanceError):
            sample_bivariate_normal(10, 1.0)


class TestBivariateBeta:
    @pytest.mark.parametrize("a1", [0.1, 0.5, 1.0, 1.19])
    def test_moment_correlation_matches_closed_form(self, a1):
        a, b = 1.2, 4.5
        assert beta_model_correlation(a, b, a1) == pytest.approx(1 - a1 * (a + b) / (a * b), abs=1e-14)

    def test_solver_frozen(self):
        # closed form a1 = (1 - r) a b / (a + b)
        spec = solve_dirichlet_params(1.2, 4.5, 0.3)
        assert spec.dirichlet_params[0] == pytest.approx(0.7 * 5.4 / 5.7, rel=1e-10)
        assert spec.dirichlet_params[2] == pytest.approx(1.2 - spec.dirichlet_params[0])

    def test_infeasible_target(self):
        lo, _ = BivariateBetaSpec(target_r=0.5).r_range
        assert lo == pytest.approx(-1.2 / 4.5)  # a1 = a gives 1 - (a + b) / b
        with pytest.raises(ConcordanceError, match="infeasible"):
            solve_dirichlet_params(1.2, 4.5, lo - 0.01)
        with pytest.raises(ConcordanceError):
            solve_dirichlet_params(1.2, 4.5, 1.0)

    def test_marginals(self):
        s = sample_bivariate_beta(20_000, BivariateBetaSpec(target_r=0.3), seed=2)
        for v in (s.x, s.y):
            assert stats.kstest(v, stats.beta(1.2, 4.5).cdf).pvalue > 0.001
        assert np.corrcoef(s.x, s.y)[0, 1] == pytest.approx(0.3, abs=0.03)

    def test_zero_correlation_supported(self):
        assert BivariateBetaSpec(target_r=0.0).dirichlet_params[0] > 0


class TestNoise:
    def test_clamps(self):
        s = PairedSample([0.0, 0.5, 1.0], [0.0, 0.5, 1.0])
        out, clamped = add_noise(s, NoiseSpec(scale=0.2), seed=0, return_clamped=True)
        assert np.all((out.y >= 0) & (out.y <= 1))
        assert np.array_equal(out.x, s.x)
        assert 0 <= clamped <= 3

    def test_distribution(self):
        s = PairedSample(np.zeros(50_000), np.full(50_000, 0.5))
        out = add_noise(s, NoiseSpec(0.01, 0.05), seed=1)
        loc, scale = stats.laplace.fit(out.y - 0.5)
        assert (loc, scale) == pytest.approx((0.01, 0.05), abs=0.002)

    def test_invalid(self):
        with pytest.raises(ConcordanceError):
            NoiseSpec(scale=0)
        with pytest.raises(ConcordanceError):
            NoiseSpec(family="gaussian")


class TestPowerFormula:
    def test_frozen_values(self):
        # Fisher z: power = Phi(atanh(r) sqrt(n-3) - z) + Phi(-atanh(r) sqrt(n-3) - z)
        z = stats.norm.isf(0.0005)
        ref = stats.norm.cdf(math.atanh(0.3) * math.sqrt(97) - z)
        assert pearson_power(0.3, 100, 0.001) == pytest.approx(ref, rel=1e-6)
        assert pearson_power(0.3, 100, 0.001) == pytest.approx(0.4043, abs=1e-4)
        assert level_set_effect_size(0.5, 100, 0.001) == pytest.approx(0.3222, abs=1e-4)

    def test_level_set_inverts(self):
        r = level_set_effect_size(0.8, 50, 0.01)
        assert pearson_power(r, 50, 0.01) == pytest.approx(0.8, abs=1e-10)
        assert level_set_effect_size(0.01, 50, 0.01) == 0.0

    def test_invalid(self):
        with pytest.raises(ConcordanceError):
            level_set_effect_size(1.0, 50, 0.01)


class TestPowerSim:
    def config(self, **kw):
        base = dict(effect_sizes=(0.0, 0.6), sample_sizes=(40,), replications=12, alpha=0.05,
                    statistics=("pearson", "ci", "rci"), rci_params=RciParams(0.5, 0.5), seed=5)
        base.update(kw)
        return PowerConfig(**base)

    def test_deterministic_and_thread_invariant(self):
        a = run_power_sim(self.config())
        b = run_power_sim(self.config(threads=3))
        assert a.to_records() == b.to_records()

    def test_power_shape(self):
        g = run_power_sim(self.config())
        assert g.power("pearson", 0.6) >= 0.9
        assert g.power("ci", 0.0) <= 0.34
        assert len(g.rows) == 6
        assert g.rows[0].statistic == "pearson"
        assert "rci(0.5,0.5)" in {r.statistic for r in g.rows}
        assert g.to_csv().splitlines()[0].startswith("statistic,effect_size")

    def test_cells_independent_of_grid(self):
        a = run_power_sim(self.config(effect_sizes=(0.6,)))
        b = run_power_sim(self.config(effect_sizes=(0.6, 0.0)))
        assert a.rows[0] == b.rows[0]

    def test_noise_metadata(self):
        g = run_power_sim(self.config(family="beta", effect_sizes=(0.3,), noise=NoiseSpec(), rci_params=None))
        assert 0 <= g.metadata["clamped_fraction"] <= 1
        assert g.metadata["config"]["rci_params"] == {"delta_x": 0.1, "delta_y": 0.1}

    def test_kci_needs_kernel(self):
        with pytest.raises(ConcordanceError):
            run_power_sim(self.config(statistics=("kci",)))
        g = run_power_sim(self.config(statistics=("kci",), kernel=KernelSpec.logistic(-5, 0.3), replications=3))
        assert g.rows[0].statistic == "kci(-5,0.3)"


class TestNullCalibrationSim:
    def test_methods_and_shapes(self):
        res = run_null_calibration_sim("normal", (20,), 300, seed=1, chunk=128)
        assert {m for m, _ in res.pvalues} == {"pearson_t", "spearman_t", "ci_noether", "rci_noether", "ci_exact"}
        for p in res.pvalues.values():
            assert p.shape == (300,)
        assert res.qq("ci_exact", 20).shape[1] == 2
        assert len(res.fpr_table((0.05,))) == 5

    def test_exact_pvalues_match_scalar(self):
        res = run_null_calibration_sim("normal", (12,), 5, methods=("ci_exact",), seed=2)
        rng = np.random.default_rng(np.random.SeedSequence([2, 0, 0]))
        x = rng.standard_normal((5, 12))
        y = rng.standard_normal((5, 12))
        ref = [exact_ci_test(PairedSample(x[i], y[i])) for i in range(5)]
        np.testing.assert_allclose(res.pvalues[("ci_exact", 12)], ref, rtol=1e-12)

    def test_pearson_t_calibrated(self):
        res = run_null_calibration_sim("normal", (30,), 20000, methods=("pearson_t",), seed=3)
        assert res.false_positive_rate("pearson_t", 30, 0.05) == pytest.approx(0.05, abs=0.005)

    def test_unknown_method(self):
        with pytest.raises(ConcordanceError):
            run_null_calibration_sim(methods=("bogus",))
