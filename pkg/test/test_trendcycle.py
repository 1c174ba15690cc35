#!/usr/bin/env python

import os
import tempfile
import unittest
from dataclasses import replace
from pathlib import Path

import numpy as np
import numpy.testing as npt
import pandas as pd
from scipy import integrate, stats

from nu_sampler.kernels import sweeps
from nu_sampler.kernels.adaptive_metropolis import AMTuning
from nu_sampler.model import Algorithm, AugmentedState, NuPrior, ObservationSet
from nu_sampler.trendcycle.application import fit_all, summarize_application
from nu_sampler.trendcycle.gibbs import (
    DRAW_COLUMNS,
    TrendCycleData,
    TrendCycleParams,
    TrendCyclePrior,
    TrendCycleSampler,
    _gaussian_regression,
    a_conditional,
    conditional_mean,
    conditional_means,
    draw_a,
    draw_gamma_delta,
    draw_nu_tau_app,
    draw_rho,
    draw_sigma2,
    fit_series,
    gamma_delta_conditional,
    ols_initialize,
    residuals,
    rho_likelihood,
    simulate_series,
)
from nu_sampler.trendcycle.np_series import NPSeries, load_np_csv, write_np_csv
from nu_sampler.utils.errors import ConfigError, DataLoadError
from nu_sampler.utils.numerics import RandomStream
from nu_sampler.utils.parameters import ApplicationParameters
from nu_sampler.validation import conditional_quantile_check

SLOW = os.environ.get("NU_SAMPLER_SLOW") == "1"
NELPLO_CSV = os.environ.get("NU_SAMPLER_NELPLO")


def params(**overrides):
    base = TrendCycleParams(
        gamma=1.0,
        delta=0.02,
        rho=0.8,
        a=[0.3, -0.1, 0.05, 0.0],
        sigma2=0.01,
        nu=5.0,
        tau=np.ones(55),
    )
    return replace(base, **overrides)


def synthetic_series(seed=0, length=60, nu=5.0):
    stream = RandomStream(seed)
    truth = params(nu=nu, tau=1.0 / stream.generator.gamma(nu / 2, 2 / nu, size=length - 5))
    values = simulate_series(stream, truth, 1.0 + 0.02 * np.arange(5), length)
    return values, truth


class TestSeriesFiles(unittest.TestCase):
    def setUp(self):
        self.directory = tempfile.TemporaryDirectory()
        self.path = Path(self.directory.name) / "np.csv"

    def tearDown(self):
        self.directory.cleanup()

    def write(self, text):
        self.path.write_text(text)
        return self.path

    def test_leading_gaps_are_trimmed(self):
        rows = ["year,late,int.rate"]
        for year in range(1900, 1912):
            late = "" if year < 1903 else str(year - 1890)
            rows.append(f"{year},{late},{year - 1895}")
        series = load_np_csv(self.write("\n".join(rows) + "\n"))
        self.assertEqual(series["late"].years[0], 1903)
        self.assertEqual(series["late"].years[-1], 1911)
        self.assertAlmostEqual(series["late"].values[0], np.log(13.0))
        self.assertFalse(series["int.rate"].log_transformed)
        self.assertEqual(series["int.rate"].values[0], 5.0)

    def test_without_log_transform(self):
        rows = ["year,x"] + [f"{1950 + i},{i + 1}" for i in range(8)]
        series = load_np_csv(self.write("\n".join(rows)), log_transform=False)
        npt.assert_array_equal(series["x"].values, np.arange(1.0, 9.0))

    def test_round_trip(self):
        first = {
            "a": NPSeries("a", np.arange(1900, 1920), np.linspace(1.0, 3.0, 20)),
            "b": NPSeries("b", np.arange(1905, 1920), np.linspace(5.0, 6.0, 15)),
        }
        write_np_csv(first, self.path)
        second = load_np_csv(self.path, log_transform=False)
        for name, item in first.items():
            npt.assert_array_equal(second[name].years, item.years)
            npt.assert_allclose(second[name].values, item.values, rtol=1e-7)

    def test_errors_name_the_series(self):
        rows = ["year,short"] + [f"{2000 + i},{i + 1}" for i in range(4)]
        with self.assertRaisesRegex(DataLoadError, "short"):
            load_np_csv(self.write("\n".join(rows)))
        rows = ["year,gap"] + [f"{2000 + i},{'' if i == 5 else i + 1}" for i in range(10)]
        with self.assertRaisesRegex(DataLoadError, "gap"):
            load_np_csv(self.write("\n".join(rows)))
        rows = ["year,text"] + [f"{2000 + i},{'x' if i == 3 else i + 1}" for i in range(10)]
        with self.assertRaisesRegex(DataLoadError, "text"):
            load_np_csv(self.write("\n".join(rows)))

    def test_non_monotone_years(self):
        rows = ["year,x", "2001,1", "2000,2"] + [f"{2002 + i},{i + 3}" for i in range(6)]
        with self.assertRaises(DataLoadError):
            load_np_csv(self.write("\n".join(rows)))


class TestConditionalMean(unittest.TestCase):
    def setUp(self):
        self.y = np.array([1.0, 1.3, 0.9, 1.6, 2.0, 2.2, 2.1, 2.5])

    def test_random_walk_limit(self):
        value = conditional_mean(self.y, 6, params(rho=0.0, a=np.zeros(4)))
        self.assertAlmostEqual(value, 1.0 + 0.02 * 6)

    def test_unit_root_limit(self):
        near_one = params(rho=1.0 - 1e-12, a=np.zeros(4))
        self.assertAlmostEqual(conditional_mean(self.y, 6, near_one), 0.02 + self.y[5], places=9)

    def test_vectorized_agrees(self):
        data = TrendCycleData(synthetic_series()[0])
        theta = params(tau=np.ones(data.n_terms))
        expected = [conditional_mean(data.y, t, theta) for t in range(5, data.y.size)]
        npt.assert_allclose(conditional_means(data, theta), expected, rtol=1e-12)

    def test_linear_in_each_block(self):
        theta = params()

        def mean_at(**changes):
            return conditional_mean(self.y, 7, replace(theta, **changes))

        for name, low, high in (("gamma", 0.0, 2.0), ("delta", -0.1, 0.1), ("rho", 0.1, 0.9)):
            middle = mean_at(**{name: (low + high) / 2})
            self.assertAlmostEqual(middle, (mean_at(**{name: low}) + mean_at(**{name: high})) / 2)
        a_low, a_high = np.zeros(4), np.array([0.4, -0.2, 0.1, 0.3])
        self.assertAlmostEqual(
            mean_at(a=(a_low + a_high) / 2), (mean_at(a=a_low) + mean_at(a=a_high)) / 2
        )


class TestGibbsSteps(unittest.TestCase):
    def setUp(self):
        values, self.truth = synthetic_series(seed=1)
        self.data = TrendCycleData(values)
        self.prior = TrendCyclePrior()

    def marginal_checks(self, draw, conditional):
        mean, covariance = conditional
        generator_draws = np.array([draw() for _ in range(20_000)])
        for index in range(mean.size):
            reference = stats.norm(mean[index], np.sqrt(covariance[index, index]))
            report = conditional_quantile_check(lambda K: generator_draws[:K, index], reference.ppf, K=20_000)
            self.assertTrue(report.passed, (index, report))

    def test_gamma_delta_matches_its_conditional(self):
        stream = RandomStream(2)
        self.marginal_checks(
            lambda: draw_gamma_delta(stream, self.data, self.truth, self.prior),
            gamma_delta_conditional(self.data, self.truth, self.prior),
        )

    def test_a_matches_its_conditional(self):
        stream = RandomStream(3)
        self.marginal_checks(
            lambda: draw_a(stream, self.data, self.truth, self.prior),
            a_conditional(self.data, self.truth, self.prior),
        )

    def test_prior_limit(self):
        vague = replace(self.truth, tau=np.full(self.data.n_terms, 1e12))
        mean, covariance = gamma_delta_conditional(self.data, vague, self.prior)
        npt.assert_allclose(mean, [self.data.y0, 0.0], atol=1e-6)
        npt.assert_allclose(np.diag(covariance), [100.0, 0.0025], rtol=1e-6)
        mean, covariance = a_conditional(self.data, vague, self.prior)
        npt.assert_allclose(np.diag(covariance), self.prior.a_variances, rtol=1e-6)

    def test_weighted_least_squares_limit(self):
        flat = TrendCyclePrior(gamma_variance=1e12, delta_variance=1e12, a_variances=(1e12,) * 4)
        theta = replace(self.truth, tau=np.linspace(0.5, 2.0, self.data.n_terms))
        mean, _ = a_conditional(self.data, theta, flat)
        design = self.data.dlags - theta.delta
        response = (
            self.data.target
            - theta.gamma * (1 - theta.rho)
            - theta.delta * theta.rho
            - theta.delta * (1 - theta.rho) * self.data.time
            - theta.rho * self.data.lag1
        )
        root_weights = 1.0 / np.sqrt(theta.sigma2 * theta.tau)
        expected, *_ = np.linalg.lstsq(design * root_weights[:, None], response * root_weights, rcond=None)
        npt.assert_allclose(mean, expected, rtol=1e-5)

    def test_ill_conditioned_design(self):
        # design entries near 4e13 with weights between 2e-28 and 5
        theta = replace(
            self.truth, delta=3.8e13, sigma2=0.01, tau=np.logspace(np.log10(20.0), 29.7, self.data.n_terms)
        )
        mean, covariance = a_conditional(self.data, theta, self.prior)
        self.assertTrue(np.all(np.isfinite(mean)))
        self.assertTrue(np.all(np.isfinite(covariance)))
        variances = np.diag(covariance)
        self.assertTrue(np.all(variances > 0))
        self.assertTrue(np.all(variances <= 1.01 * np.asarray(self.prior.a_variances)))
        self.assertTrue(np.all(np.isfinite(draw_a(RandomStream(6), self.data, theta, self.prior))))
        gamma, delta = draw_gamma_delta(RandomStream(6), self.data, theta, self.prior)
        self.assertTrue(np.isfinite(gamma) and np.isfinite(delta))

    def test_precision_factor(self):
        stream = RandomStream(11)
        design = stream.generator.standard_normal((40, 3)) * np.array([3.8e13, 1.0, 1e-3])
        weights = np.logspace(-28, 0.7, 40)
        prior_variance = np.array([100.0, 0.0025, 0.5])
        response = stream.generator.standard_normal(40)
        mean, factor = _gaussian_regression(design, response, weights, np.zeros(3), prior_variance)
        self.assertTrue(np.all(np.isfinite(mean)))
        npt.assert_array_equal(factor, np.tril(factor))
        self.assertTrue(np.all(np.diag(factor) > 0))
        precision = design.T @ (weights[:, None] * design) + np.diag(1.0 / prior_variance)
        npt.assert_allclose(factor @ factor.T, precision, rtol=1e-8, atol=1e-10 * np.abs(precision).max())

    def test_rho_draws_follow_the_kernel(self):
        theta = replace(self.truth, sigma2=0.05)
        stream = RandomStream(4)
        draws = np.array([draw_rho(stream, self.data, theta, self.prior) for _ in range(100_000)])
        self.assertTrue(np.all((draws >= 0.0) & (draws < 1.0)))

        mean, sd = rho_likelihood(self.data, theta)
        grid = np.linspace(0.0, 1.0, 20_001)
        log_kernel = stats.norm.logpdf(grid, mean, sd) + 4.0 * np.log(np.maximum(grid, 1e-300))
        density = np.exp(log_kernel - log_kernel.max())
        cdf = integrate.cumulative_trapezoid(density, grid, initial=0.0)
        cdf /= cdf[-1]
        empirical = np.searchsorted(np.sort(draws), grid, side="right") / draws.size
        self.assertLess(np.max(np.abs(empirical - cdf)), 0.01)

    def test_sigma2_scaled_inverse_chi_square(self):
        theta = replace(self.truth, tau=np.ones(self.data.n_terms))
        stream = RandomStream(5)
        T = self.data.n_terms
        scale = np.sum(residuals(self.data, theta) ** 2) / T
        report = conditional_quantile_check(
            lambda K: np.array([draw_sigma2(stream, self.data, theta) for _ in range(K)]),
            stats.invgamma(T / 2.0, scale=T * scale / 2.0).ppf,
            K=50_000,
        )
        self.assertTrue(report.passed, report)

    def test_sigma2_scale_equivariance(self):
        theta = replace(self.truth, gamma=0.0, delta=0.0, rho=0.0, a=np.zeros(4))
        scaled = TrendCycleData(3.0 * self.data.y)
        first = draw_sigma2(RandomStream(7), self.data, theta)
        second = draw_sigma2(RandomStream(7), scaled, theta)
        self.assertAlmostEqual(second / first, 9.0, places=9)

    def test_nu_step_reduces_to_the_core_sweep(self):
        theta = replace(self.truth, gamma=0.0, delta=0.0, rho=0.0, a=np.zeros(4), sigma2=1.0)
        eps = residuals(self.data, theta)
        npt.assert_array_equal(eps, self.data.target)
        for algorithm in Algorithm:
            start = AugmentedState(theta.nu, theta.tau, am=AMTuning())
            reduced = draw_nu_tau_app(RandomStream(8), start, eps, 1.0, algorithm, NuPrior(0.333), k_aa=3)
            core = sweeps.sweep(
                algorithm, start, ObservationSet(self.data.target), NuPrior(0.333), RandomStream(8), 3
            )
            self.assertEqual(reduced.nu, core.nu)
            npt.assert_array_equal(reduced.tau, core.tau)


class TestFit(unittest.TestCase):
    def setUp(self):
        values, _ = synthetic_series(seed=9, length=70)
        self.series = NPSeries("synthetic", np.arange(1900, 1970), values)

    def test_ols_start(self):
        start = ols_initialize(TrendCycleData(self.series.values))
        self.assertTrue(0.0 <= start.rho <= 0.999)
        self.assertEqual(start.nu, 4.0)
        npt.assert_array_equal(start.tau, np.ones(65))
        self.assertGreater(start.sigma2, 0.0)

    def test_ols_clips_explosive_rho(self):
        values = 1.05 ** np.arange(40.0) + 0.01 * RandomStream(10).generator.standard_normal(40)
        start = ols_initialize(TrendCycleData(values))
        self.assertLessEqual(start.rho, 0.999)

    def test_replay_and_layout(self):
        first = fit_series(self.series, "asis", M=150, burn_in=50, stream=RandomStream(11), k_aa=3)
        second = fit_series(self.series, "asis", M=150, burn_in=50, stream=RandomStream(11), k_aa=3)
        pd.testing.assert_frame_equal(first.draws, second.draws)
        self.assertEqual(list(first.draws.columns), DRAW_COLUMNS)
        self.assertEqual(len(first.draws), 150)
        self.assertTrue(first.q10 <= first.median <= first.q90)

    def test_interweaving_recovers_from_large_start(self):
        values, _ = synthetic_series(seed=12, length=120, nu=1.0)
        data = TrendCycleData(values)
        sampler = TrendCycleSampler(
            data, "asis", RandomStream(13), params=replace(ols_initialize(data), nu=100.0), k_aa=5
        )
        for _ in range(300):
            theta = sampler.sweep()
        self.assertLess(theta.nu, 10.0)

    def test_fit_all_and_summary(self):
        other = NPSeries("int.rate", self.series.years, self.series.values)
        config = ApplicationParameters({"iterations": 60, "burn_in": 20, "k_aa": 2, "seed": 3})
        fits = fit_all({"synthetic": self.series, "int.rate": other}, config)
        self.assertEqual(len(fits), 6)
        summary = summarize_application(fits)
        self.assertEqual(list(summary["series"]), ["synthetic", "int.rate"])
        self.assertEqual(summary.loc[1, "name"], "Interest Rate")
        row = summary.iloc[0]
        self.assertAlmostEqual(row["aa_sa_ratio"], row["rne_aa"] / row["rne_sa"])
        with self.assertRaises(ConfigError):
            fit_all({"synthetic": self.series}, config, names=["missing"])

    @unittest.skipUnless(SLOW, "set NU_SAMPLER_SLOW=1")
    def test_heavy_tails_are_recovered(self):
        values, _ = synthetic_series(seed=14, length=120, nu=1.0)
        series = NPSeries("heavy", np.arange(1869, 1989), values)
        fit = fit_series(series, "asis", M=5_000, burn_in=1_000, stream=RandomStream(15))
        self.assertLess(fit.median, 3.0)


@unittest.skipUnless(SLOW and NELPLO_CSV, "set NU_SAMPLER_SLOW=1 and NU_SAMPLER_NELPLO to the exported CSV")
class TestNelsonPlosser(unittest.TestCase):
    """Fits of the exported Nelson-Plosser series with the settings of config/application.yaml."""

    @classmethod
    def setUpClass(cls):
        cls.series = load_np_csv(NELPLO_CSV)
        cls.summary = summarize_application(fit_all(cls.series, ApplicationParameters(), jobs=os.cpu_count() or 1))
        cls.summary = cls.summary.set_index("series")

    def test_layout(self):
        self.assertEqual(len(self.series), 14)
        for item in self.series.values():
            self.assertEqual(item.years[-1], 1988, item.name)

    def test_posterior_medians(self):
        self.assertTrue(1.05 <= self.summary.loc["int.rate", "median_nu"] <= 1.40)
        self.assertTrue(5.2 <= self.summary.loc["stock.prices", "median_nu"] <= 7.0)

    def test_ancillary_gains_with_light_tails(self):
        light = self.summary[self.summary["median_nu"] > 3.0]
        self.assertTrue(np.all(light["aa_sa_ratio"] > 1.0), light["aa_sa_ratio"])
        self.assertEqual(self.summary["aa_sa_ratio"].idxmin(), "int.rate")


if __name__ == "__main__":
    unittest.main()
