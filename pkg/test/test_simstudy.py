#!/usr/bin/env python

import itertools
import math
import os
import tempfile
import unittest
from pathlib import Path
from unittest import mock

import numpy as np
import pandas as pd

from nu_sampler.chain import ChainRunner
from nu_sampler.model import DrawMatrix
from nu_sampler.simstudy import (
    MANIFEST_FILE,
    RESULT_COLUMNS,
    RESULTS_FILE,
    StudyConfig,
    aggregate_mean_rne,
    data_stream,
    interval_table,
    results_frame,
    rne_table,
    run_grid,
    run_group,
)
from nu_sampler.utils import io
from nu_sampler.utils.errors import ConfigError, NumericFailure
from nu_sampler.utils.path_finder import get_config_path

SLOW = os.environ.get("NU_SAMPLER_SLOW") == "1"


def small_config(**overrides):
    params = {
        "nu_true": [1.0, 5.0],
        "n": [10],
        "lambda": [0.2],
        "datasets": 1,
        "inits": [0.5, 2.0, 10.0],
        "iterations": 200,
        "burn_in": 50,
        "k_aa": 3,
        "seed": 11,
    }
    params.update(overrides)
    return StudyConfig.from_mapping(params)


class TestStudyConfig(unittest.TestCase):
    def test_default_cardinality(self):
        self.assertEqual(StudyConfig().n_chains, 29700)

    def test_files_match_the_defaults(self):
        self.assertEqual(StudyConfig.from_file(get_config_path("study.yaml")), StudyConfig())
        desk = StudyConfig.preset("desk")
        self.assertEqual(desk.n_grid, (10, 100, 1000))
        self.assertEqual(desk.lambda_grid, (0.2,))
        self.assertEqual(desk.datasets, 2)
        self.assertEqual(desk.n_chains, 11 * 3 * 2 * 3 * 4)

    def test_invalid_values(self):
        for params in (
            {"unknown": 1},
            {"n": [10.5]},
            {"nu_true": []},
            {"lambda": [0.2, 0.2]},
            {"iterations": 4},
            {"algorithms": ["sa", "gibbs"]},
            {"data_seed_scope": "global"},
        ):
            with self.assertRaises(ConfigError, msg=params):
                StudyConfig.from_mapping(params)
        with self.assertRaises(ConfigError):
            StudyConfig.preset("huge")

    def test_as_dict_round_trip(self):
        config = small_config(algorithms=["asis", "sa"])
        self.assertEqual(StudyConfig.from_mapping(config.as_dict()), config)

    def test_data_seed_scope(self):
        cell = small_config()
        shared = small_config(data_seed_scope="data_id")
        self.assertNotEqual(data_stream(cell, 1.0, 10, 0).stream_id, data_stream(cell, 5.0, 10, 0).stream_id)
        self.assertEqual(data_stream(shared, 1.0, 10, 0).stream_id, data_stream(shared, 5.0, 100, 0).stream_id)
        self.assertNotEqual(data_stream(shared, 1.0, 10, 0).stream_id, data_stream(shared, 1.0, 10, 1).stream_id)


class TestRunGrid(unittest.TestCase):
    def setUp(self):
        self.directory = tempfile.TemporaryDirectory()
        self.root = Path(self.directory.name)

    def tearDown(self):
        self.directory.cleanup()

    def test_rows_and_layout(self):
        config = small_config()
        rows = list(run_grid(config, self.root / "a"))
        self.assertEqual(len(rows), config.n_chains)
        frame = pd.read_csv(self.root / "a" / RESULTS_FILE)
        self.assertEqual(list(frame.columns), RESULT_COLUMNS)
        self.assertEqual(len(frame), config.n_chains)
        for _, group in frame.groupby(["alg", "nu_true", "n", "lambda", "data_id"]):
            self.assertEqual(group["rhat"].nunique(), 1)
            self.assertEqual(sorted(group["init"]), [0.5, 2.0, 10.0])
        self.assertTrue(np.all(frame["q10"] <= frame["q50"]))
        self.assertTrue(np.all(frame["q50"] <= frame["q90"]))
        manifest = io.read_json(self.root / "a" / MANIFEST_FILE)
        self.assertTrue(manifest["complete"])
        self.assertEqual(manifest["config"], config.as_dict())
        self.assertEqual(manifest["chains_total"], config.n_chains)

    def test_rerun_and_jobs_give_identical_files(self):
        config = small_config()
        for name, jobs in (("first", 1), ("second", 1), ("parallel", 2)):
            for _ in run_grid(config, self.root / name, jobs=jobs):
                pass
        first = (self.root / "first" / RESULTS_FILE).read_bytes()
        self.assertEqual(first, (self.root / "second" / RESULTS_FILE).read_bytes())
        self.assertEqual(first, (self.root / "parallel" / RESULTS_FILE).read_bytes())

    def test_resume_after_interruption(self):
        config = small_config()
        list(run_grid(config, self.root / "full"))

        partial = run_grid(config, self.root / "resumed")
        list(itertools.islice(partial, 2 * len(config.inits)))
        partial.close()
        manifest = io.read_json(self.root / "resumed" / MANIFEST_FILE)
        self.assertEqual(manifest["completed_groups"], 2)
        self.assertFalse(manifest["complete"])
        with open(self.root / "resumed" / RESULTS_FILE, "a") as handle:
            handle.write("asis,5,10,0.2,0,0.5,0.3,60,1.0,3,4,5,False\n")

        new_rows = list(run_grid(config, self.root / "resumed", resume=True))
        self.assertEqual(len(new_rows), config.n_chains - 2 * len(config.inits))
        self.assertEqual(
            (self.root / "full" / RESULTS_FILE).read_bytes(),
            (self.root / "resumed" / RESULTS_FILE).read_bytes(),
        )
        self.assertEqual(list(run_grid(config, self.root / "resumed", resume=True)), [])

    def test_resume_rejects_another_config(self):
        list(run_grid(small_config(), self.root / "out"))
        with self.assertRaises(ConfigError):
            list(run_grid(small_config(seed=12), self.root / "out", resume=True))

    def test_chain_failure_is_recorded_in_its_row(self):
        config = small_config()
        real_run = ChainRunner.run

        def flaky(runner):
            if runner.spec.init_nu == 0.5:
                raise NumericFailure("quantile did not converge", abscissa=0.5)
            return real_run(runner)

        task = next(config.groups())
        with mock.patch.object(ChainRunner, "run", autospec=True, side_effect=flaky):
            rows = run_group(config, task)
        self.assertIn("NumericFailure", rows[0].error)
        self.assertTrue(math.isnan(rows[0].rne))
        self.assertTrue(math.isnan(rows[0].rhat))
        self.assertIsNone(rows[1].error)
        self.assertTrue(np.isfinite(rows[1].rhat))
        self.assertEqual(rows[1].rhat, rows[2].rhat)

    def test_stuck_chain(self):
        config = small_config(nu_true=[5.0], inits=[2.0, 10.0, 100.0], algorithms=["aa"])
        real_run = ChainRunner.run

        def stuck_at_start(runner):
            if runner.spec.init_nu == 100.0:
                return DrawMatrix(np.full(config.iterations, 100.0))
            return real_run(runner)

        with mock.patch.object(ChainRunner, "run", autospec=True, side_effect=stuck_at_start):
            rows = run_group(config, next(config.groups()))
        stuck = rows[2]
        self.assertTrue(stuck.stuck)
        self.assertEqual(stuck.rne, 0.0)
        self.assertEqual((stuck.q10, stuck.q90), (100.0, 100.0))
        self.assertGreaterEqual(stuck.rhat, 1.1)
        table = interval_table(rows, n=10)
        self.assertEqual(table["interval"].iloc[2], "(100, 100)*")
        self.assertTrue(table["flagged"].all())


def synthetic_rows():
    rows = []
    for alg, rhat, rne in (("sa", 1.01, 0.4), ("aa", 1.5, 0.9), ("asis", 1.02, 0.8)):
        for data_id in (0, 1):
            for init in (0.5, 2.0):
                rows.append(
                    {
                        "alg": alg,
                        "nu_true": 1.0,
                        "n": 1000,
                        "lambda": 0.2,
                        "data_id": data_id,
                        "init": init,
                        "rne": rne + 0.1 * data_id,
                        "ess": 100.0,
                        "rhat": rhat,
                        "q10": 0.9 + 0.01 * init,
                        "q50": 0.95,
                        "q90": 1.0 + 0.02 * init,
                        "stuck": False,
                    }
                )
    return pd.DataFrame(rows, columns=RESULT_COLUMNS)


class TestTables(unittest.TestCase):
    def test_mean_rne_screens_groups(self):
        aggregated = aggregate_mean_rne(synthetic_rows())
        self.assertEqual(list(aggregated["alg"]), ["sa", "aa", "asis"])
        by_alg = aggregated.set_index("alg")
        self.assertAlmostEqual(by_alg.loc["sa", "mean_rne"], 45.0)
        self.assertAlmostEqual(by_alg.loc["asis", "mean_rne"], 85.0)
        self.assertTrue(math.isnan(by_alg.loc["aa", "mean_rne"]))
        self.assertEqual(by_alg.loc["aa", "display"], "-")
        self.assertEqual(by_alg.loc["aa", "screened_out"], 4)
        self.assertEqual(by_alg.loc["sa", "display"], "45.0")

    def test_failed_chains_do_not_survive(self):
        rows = synthetic_rows()
        rows.loc[rows["alg"] == "sa", "rhat"] = np.nan
        by_alg = aggregate_mean_rne(rows).set_index("alg")
        self.assertEqual(by_alg.loc["sa", "display"], "-")

    def test_rne_table_layout(self):
        table = rne_table(aggregate_mean_rne(synthetic_rows()))
        self.assertEqual(list(table.index.get_level_values("alg")), ["sa", "aa", "asis"])
        self.assertEqual(list(table.columns), [1.0])
        self.assertEqual(table.iloc[1, 0], "-")

    def test_interval_table(self):
        rows = synthetic_rows()
        first = interval_table(rows)
        self.assertEqual(len(first), 6)
        self.assertEqual(list(first["alg"]), ["sa", "sa", "aa", "aa", "asis", "asis"])
        self.assertEqual(first["interval"].iloc[0], "(0.905, 1.01)")
        self.assertTrue(first["interval"].iloc[2].endswith("*"))
        pd.testing.assert_frame_equal(first, interval_table(rows))
        self.assertEqual(len(interval_table(rows, n=100)), 0)

    def test_results_frame_from_cells(self):
        config = small_config(nu_true=[5.0], algorithms=["sa"])
        rows = run_group(config, next(config.groups()))
        frame = results_frame(rows)
        self.assertEqual(list(frame.columns), RESULT_COLUMNS)
        self.assertEqual(list(frame["init"]), [0.5, 2.0, 10.0])


@unittest.skipUnless(SLOW, "set NU_SAMPLER_SLOW=1")
class TestDeskScale(unittest.TestCase):
    def test_small_sample_efficiency(self):
        config = StudyConfig.preset("desk", {"n": [10], "nu_true": [1, 10], "datasets": 1})
        aggregated = aggregate_mean_rne(list(run_grid(config))).set_index(["alg", "nu_true"])
        self.assertAlmostEqual(aggregated.loc[("sa", 1.0), "mean_rne"], 45.5, delta=13.7)
        self.assertAlmostEqual(aggregated.loc[("asis", 10.0), "mean_rne"], 99.4, delta=29.8)
        for nu_true in (1.0, 10.0):
            best = max(
                aggregated.loc[("sa", nu_true), "mean_rne"], aggregated.loc[("aa", nu_true), "mean_rne"]
            )
            self.assertGreaterEqual(aggregated.loc[("asis", nu_true), "mean_rne"], best - 5.0)


if __name__ == "__main__":
    unittest.main()
