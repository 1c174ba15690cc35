#!/usr/bin/env python

import itertools
import math
import os
import unittest
from unittest import mock

import numpy as np
import pandas as pd
from scipy import special

from nu_sampler.fisher import (
    DEFAULT_READING,
    SufficientReading,
    bep_curve,
    bep_grid,
    estimate_i_tau_mc,
    estimate_i_u,
    i_tau,
    i_tau_printed,
    sufficient_information,
)
from nu_sampler.utils.errors import ConfigError, DomainError, FisherEstimationError
from nu_sampler.utils.numerics import RandomStream

SLOW = os.environ.get("NU_SAMPLER_SLOW") == "1"


class TestSufficientInformation(unittest.TestCase):
    def test_closed_form(self):
        self.assertAlmostEqual(i_tau(1, 2.0).value, 0.1612335, places=7)
        self.assertAlmostEqual(i_tau(10, 2.0).value, 1.612335, places=6)

    def test_large_nu(self):
        nu = 200.0
        self.assertAlmostEqual(i_tau(1, nu).value * 2 * nu**2, 1.0, delta=0.01)

    def test_monte_carlo_agrees(self):
        for y, nu in itertools.product((0.0, 1.5, 4.0), (0.5, 2.0, 5.0, 15.0)):
            estimate = estimate_i_tau_mc(RandomStream(1), y, nu, L=500)
            tolerance = max(2 * estimate.std_error, 1e-6 * i_tau(1, nu).value)
            self.assertAlmostEqual(estimate.value, i_tau(1, nu).value, delta=tolerance)

    def test_invalid_n(self):
        with self.assertRaises(DomainError):
            i_tau(0, 2.0)
        with self.assertRaises(DomainError):
            i_tau_printed(0, 2.0)


class TestPrintedReading(unittest.TestCase):
    def test_digamma_expression(self):
        self.assertAlmostEqual(i_tau_printed(1, 2.0).value, (-np.euler_gamma - 0.5) / 2.0, places=12)
        for nu in (0.5, 3.0, 4.0, 20.0):
            self.assertAlmostEqual(i_tau_printed(1, nu).value, (special.digamma(nu / 2) - 1 / nu) / 2, places=12)
            self.assertAlmostEqual(i_tau_printed(7, nu).value, 7 * i_tau_printed(1, nu).value, places=12)

    def test_negative_below_the_break_even(self):
        self.assertLess(i_tau_printed(1, 3.0).value, 0.0)
        self.assertGreater(i_tau_printed(1, 4.0).value, 0.0)

    def test_reading_switch(self):
        self.assertIs(DEFAULT_READING, SufficientReading.PRINTED)
        self.assertEqual(sufficient_information(1, 5.0), i_tau_printed(1, 5.0))
        self.assertEqual(sufficient_information(1, 5.0, "derived"), i_tau(1, 5.0))
        self.assertEqual(sufficient_information(1, 5.0, SufficientReading.DERIVED), i_tau(1, 5.0))
        with self.assertRaises(ConfigError):
            sufficient_information(1, 5.0, "second")


class TestAncillaryInformation(unittest.TestCase):
    def test_sign_at_small_and_large_nu(self):
        small = estimate_i_u(RandomStream(2), 0.0, 1.0, L=4_000)
        self.assertGreater(small.value - sufficient_information(1, 1.0).value, 0.0)
        large = estimate_i_u(RandomStream(3), 0.0, 20.0, L=4_000)
        self.assertLess(large.value - sufficient_information(1, 20.0).value, 0.0)
        self.assertEqual(small.L, 4_000)

    def test_replay(self):
        first = estimate_i_u(RandomStream(4), 1.0, 3.0, L=200)
        second = estimate_i_u(RandomStream(4), 1.0, 3.0, L=200)
        self.assertEqual(first, second)

    def test_too_many_failures(self):
        with mock.patch("nu_sampler.fisher.tau_quantile", return_value=np.nan):
            with self.assertRaises(FisherEstimationError):
                estimate_i_u(RandomStream(5), 0.0, 2.0, L=100)

    def test_invalid_arguments(self):
        with self.assertRaises(DomainError):
            estimate_i_u(RandomStream(6), 0.0, -1.0)
        with self.assertRaises(DomainError):
            estimate_i_u(RandomStream(6), 0.0, 1.0, L=1)


class TestBreakEven(unittest.TestCase):
    def test_curve_interpolates_in_log_nu(self):
        nu = np.array([1.0, 2.0, 3.0, 5.0, 8.0])
        grid = pd.DataFrame({"y": 0.0, "nu": nu, "diff": np.log(4.0 / nu)})
        curve = bep_curve(grid)
        self.assertAlmostEqual(curve["nu_bep"].iloc[0], 4.0, places=10)

    def test_curve_without_crossing(self):
        grid = pd.DataFrame({"y": [1.0, 1.0], "nu": [1.0, 2.0], "diff": [1.0, 0.5]})
        self.assertTrue(math.isnan(bep_curve(grid)["nu_bep"].iloc[0]))

    def test_grid_columns_and_symmetry(self):
        grid = bep_grid([-1.0, 1.0], [2.0], L=100, seed=7)
        self.assertEqual(list(grid.columns), ["y", "nu", "i_u", "i_tau", "diff", "se", "dropped"])
        self.assertEqual(grid["i_u"].iloc[0], grid["i_u"].iloc[1])
        self.assertEqual(grid["i_tau"].iloc[0], i_tau_printed(1, 2.0).value)

    def test_grid_readings_share_the_ancillary_estimates(self):
        printed = bep_grid([1.0], [2.0, 6.0], L=100, seed=7)
        derived = bep_grid([1.0], [2.0, 6.0], L=100, seed=7, reading="derived")
        pd.testing.assert_series_equal(printed["i_u"], derived["i_u"])
        np.testing.assert_allclose(derived["i_tau"], [i_tau(1, 2.0).value, i_tau(1, 6.0).value])

    def test_break_even_with_small_sample(self):
        grid = bep_grid([0.0, 4.0], [2.0, 3.0, 5.0, 8.0], L=1_000, seed=8)
        self.assertTrue(np.all(grid["se"] > 0))
        for value in bep_curve(grid)["nu_bep"]:
            self.assertTrue(3.0 <= value <= 5.0, value)

    @unittest.skipUnless(SLOW, "set NU_SAMPLER_SLOW=1")
    def test_break_even_near_four(self):
        grid = bep_grid([0.0, 2.0, 4.0], [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0, 12.0], L=10_000, seed=8)
        for value in bep_curve(grid)["nu_bep"]:
            self.assertTrue(3.0 <= value <= 5.0, value)


if __name__ == "__main__":
    unittest.main()
