"""Simulation study over true nu, data length, prior rate and starting value.

Chains are organized in groups: one simulated data set, one prior rate, one
algorithm and every starting value of ``StudyConfig.inits``. R-hat is computed
per group and shared by its rows. Results are appended to ``results.csv`` one
group at a time and ``manifest.json`` records how many groups are complete, so
an interrupted study resumes where it stopped.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, List, Mapping, Optional, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from nu_sampler.chain import ChainRunner
from nu_sampler.diagnostics import MIN_CHAIN_LENGTH, efficiency, split_rhat, summarize
from nu_sampler.model import Algorithm, ChainSpec, NuPrior, ObservationSet, simulate_observations
from nu_sampler.utils import io
from nu_sampler.utils.errors import ConfigError, NuSamplerError
from nu_sampler.utils.numerics import RandomStream, derive_stream_id
from nu_sampler.utils.parameters import check_keys, load_config, non_negative_int, positive
from nu_sampler.utils.path_finder import get_config_path

logger = logging.getLogger(__name__)

RHAT_THRESHOLD = 1.1
RESULT_COLUMNS = [
    "alg",
    "nu_true",
    "n",
    "lambda",
    "data_id",
    "init",
    "rne",
    "ess",
    "rhat",
    "q10",
    "q50",
    "q90",
    "stuck",
]
RESULTS_FILE = "results.csv"
MANIFEST_FILE = "manifest.json"
SEED_SCOPES = ("cell", "data_id")
PRESETS = {"full": "study.yaml", "desk": "study_desk.yaml"}

# mapping key -> attribute
_KEYS = {
    "nu_true": "nu_grid",
    "n": "n_grid",
    "lambda": "lambda_grid",
    "datasets": "datasets",
    "inits": "inits",
    "iterations": "iterations",
    "burn_in": "burn_in",
    "k_aa": "k_aa",
    "algorithms": "algorithms",
    "seed": "seed",
    "data_seed_scope": "data_seed_scope",
}


def _grid(values, name, kind=float) -> tuple:
    if isinstance(values, (str, bytes)) or not isinstance(values, Iterable):
        raise ConfigError(f"{name} must be a list, got {values!r}")
    grid = tuple(positive(value, name, kind) for value in values)
    if not grid:
        raise ConfigError(f"{name} must not be empty")
    if len(set(grid)) != len(grid):
        raise ConfigError(f"{name} has repeated values: {list(grid)}")
    return grid


@dataclass(frozen=True)
class StudyConfig:
    """Grid and chain settings of a simulation study.

    The defaults are the full study: 11 true values of nu, 9 data lengths,
    5 data sets per setup, 5 prior rates, 3 algorithms and 4 starting values,
    that is 29700 chains of 10000 kept draws after 1000 burn-in sweeps.

    ``data_seed_scope`` selects how data sets are seeded: ``"cell"`` derives the
    seed from (seed, nu_true, n, data_id), ``"data_id"`` from (seed, data_id)
    only, so that data sets with the same id share their random numbers across
    setups. In both cases one data set serves every prior rate, algorithm and
    starting value of its setup.
    """

    nu_grid: Tuple[float, ...] = (1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0, 10.0, 20.0, 50.0, 100.0)
    n_grid: Tuple[int, ...] = (1, 3, 10, 30, 100, 300, 1000, 3000, 10000)
    lambda_grid: Tuple[float, ...] = (0.05, 0.1, 0.2, 0.5, 1.0)
    datasets: int = 5
    inits: Tuple[float, ...] = (0.5, 2.0, 10.0, 100.0)
    iterations: int = 10_000
    burn_in: int = 1_000
    k_aa: int = 20
    algorithms: Tuple[Algorithm, ...] = (Algorithm.SA, Algorithm.AA, Algorithm.ASIS)
    seed: int = 0
    data_seed_scope: str = "cell"

    def __post_init__(self):
        object.__setattr__(self, "nu_grid", _grid(self.nu_grid, "nu_true"))
        object.__setattr__(self, "n_grid", _grid(self.n_grid, "n", int))
        object.__setattr__(self, "lambda_grid", _grid(self.lambda_grid, "lambda"))
        object.__setattr__(self, "inits", _grid(self.inits, "inits"))
        object.__setattr__(
            self, "algorithms", tuple(Algorithm.parse(value) for value in self.algorithms)
        )
        if not self.algorithms or len(set(self.algorithms)) != len(self.algorithms):
            raise ConfigError(f"algorithms must be distinct and non-empty, got {self.algorithms}")
        object.__setattr__(self, "datasets", positive(self.datasets, "datasets", int))
        object.__setattr__(self, "iterations", positive(self.iterations, "iterations", int))
        object.__setattr__(self, "burn_in", non_negative_int(self.burn_in, "burn_in"))
        object.__setattr__(self, "k_aa", positive(self.k_aa, "k_aa", int))
        object.__setattr__(self, "seed", non_negative_int(self.seed, "seed"))
        if self.iterations < MIN_CHAIN_LENGTH:
            raise ConfigError(f"iterations must be >= {MIN_CHAIN_LENGTH}, got {self.iterations}")
        if self.data_seed_scope not in SEED_SCOPES:
            raise ConfigError(
                f"data_seed_scope must be one of {', '.join(SEED_SCOPES)}, got {self.data_seed_scope!r}"
            )

    @classmethod
    def from_mapping(cls, params: Optional[Mapping] = None) -> StudyConfig:
        params = dict(params or {})
        check_keys(params, _KEYS, "study")
        return cls(**{_KEYS[key]: value for key, value in params.items()})

    @classmethod
    def from_file(cls, path, overrides: Optional[Mapping] = None) -> StudyConfig:
        params = load_config(path)
        params.update(overrides or {})
        return cls.from_mapping(params)

    @classmethod
    def preset(cls, name: str, overrides: Optional[Mapping] = None) -> StudyConfig:
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
        return cls.from_file(get_config_path(PRESETS[name]), overrides)

    def as_dict(self) -> dict:
        values = asdict(self)
        values["algorithms"] = [algorithm.value for algorithm in self.algorithms]
        return {
            key: list(values[attr]) if isinstance(values[attr], tuple) else values[attr]
            for key, attr in _KEYS.items()
        }

    @property
    def n_groups(self) -> int:
        return (
            len(self.nu_grid)
            * len(self.n_grid)
            * self.datasets
            * len(self.lambda_grid)
            * len(self.algorithms)
        )

    @property
    def n_chains(self) -> int:
        return self.n_groups * len(self.inits)

    def groups(self) -> Iterator[GroupTask]:
        """Every group in the order its rows appear in the results file."""
        for nu_true in self.nu_grid:
            for n in self.n_grid:
                for data_id in range(self.datasets):
                    for nu_rate in self.lambda_grid:
                        for algorithm in self.algorithms:
                            yield GroupTask(algorithm, nu_true, n, nu_rate, data_id)


@dataclass(frozen=True)
class GroupTask:
    algorithm: Algorithm
    nu_true: float
    n: int
    nu_rate: float
    data_id: int

    @property
    def label(self) -> str:
        return (
            f"{self.algorithm.value} nu_true={self.nu_true:g} n={self.n} "
            f"lambda={self.nu_rate:g} data_id={self.data_id}"
        )


@dataclass
class CellResult:
    """One chain of the study. ``error`` is set when the chain failed; its statistics are then NaN."""

    alg: str
    nu_true: float
    n: int
    nu_rate: float
    data_id: int
    init: float
    rne: float = math.nan
    ess: float = math.nan
    rhat: float = math.nan
    q10: float = math.nan
    q50: float = math.nan
    q90: float = math.nan
    stuck: bool = False
    error: Optional[str] = field(default=None, compare=False)

    def row(self) -> dict:
        return {
            "alg": self.alg,
            "nu_true": self.nu_true,
            "n": self.n,
            "lambda": self.nu_rate,
            "data_id": self.data_id,
            "init": self.init,
            "rne": self.rne,
            "ess": self.ess,
            "rhat": self.rhat,
            "q10": self.q10,
            "q50": self.q50,
            "q90": self.q90,
            "stuck": self.stuck,
        }


def data_stream(config: StudyConfig, nu_true: float, n: int, data_id: int) -> RandomStream:
    if config.data_seed_scope == "data_id":
        return RandomStream.derived(config.seed, "data", data_id)
    return RandomStream.derived(config.seed, "data", nu_true, n, data_id)


def simulate_data(config: StudyConfig, nu_true: float, n: int, data_id: int) -> ObservationSet:
    return simulate_observations(data_stream(config, nu_true, n, data_id), nu_true, n)


def chain_spec(config: StudyConfig, task: GroupTask, init: float) -> ChainSpec:
    stream_id = derive_stream_id(
        "chain", task.algorithm.value, task.nu_true, task.n, task.nu_rate, task.data_id, init
    )
    return ChainSpec(
        task.algorithm,
        config.iterations,
        config.burn_in,
        init,
        NuPrior(task.nu_rate),
        config.seed,
        stream_id,
        config.k_aa,
    )


def run_group(config: StudyConfig, task: GroupTask) -> List[CellResult]:
    """Run the chains of one group and return one row per starting value.

    A failing chain is reported in its row and leaves the other chains of the
    group untouched; R-hat then covers the chains that finished.
    """
    rows = [
        CellResult(task.algorithm.value, task.nu_true, task.n, task.nu_rate, task.data_id, init)
        for init in config.inits
    ]
    try:
        data = simulate_data(config, task.nu_true, task.n, task.data_id)
    except NuSamplerError as error:
        logger.warning("%s: data simulation failed: %s", task.label, error)
        for row in rows:
            row.error = f"{type(error).__name__}: {error}"
        return rows

    finished = []
    for row in rows:
        try:
            draws = ChainRunner(chain_spec(config, task, row.init), data).run().nu_draws
        except NuSamplerError as error:
            row.error = f"{type(error).__name__}: {error}"
            logger.warning("%s init=%g: chain failed: %s", task.label, row.init, row.error)
            continue
        chain_efficiency = efficiency(draws)
        summary = summarize(draws)
        row.rne, row.ess = chain_efficiency.rne, chain_efficiency.ess
        row.q10, row.q50, row.q90 = summary.q10, summary.median, summary.q90
        row.stuck = chain_efficiency.degenerate
        finished.append(draws)

    rhat = split_rhat(finished) if len(finished) >= 2 else math.nan
    for row in rows:
        if row.error is None:
            row.rhat = rhat
    if len(finished) >= 2 and not rhat < RHAT_THRESHOLD:
        logger.warning("%s: R-hat %.3g fails the %.1f screen", task.label, rhat, RHAT_THRESHOLD)
    return rows


def _run_group_job(job):
    return run_group(*job)


class StudyWriter:
    """Single writer of the results file and the manifest.

    Groups are written in the order of ``StudyConfig.groups``, so the completed
    groups are always a prefix of that order and the manifest only stores
    their count.
    """

    def __init__(self, config: StudyConfig, out_dir):
        self.config = config
        self.out_dir = Path(out_dir)
        self.results_path = self.out_dir / RESULTS_FILE
        self.manifest_path = self.out_dir / MANIFEST_FILE
        self.completed = 0
        self.failures: List[dict] = []

    def start(self, resume: bool = False) -> int:
        """Prepare the output directory and return the number of groups to skip."""
        self.out_dir.mkdir(parents=True, exist_ok=True)
        if resume and self.manifest_path.exists():
            manifest = io.read_json(self.manifest_path)
            if manifest.get("config") != self.config.as_dict():
                raise ConfigError(
                    f"{self.manifest_path} was written for a different study configuration"
                )
            self.completed = int(manifest["completed_groups"])
            self.failures = list(manifest.get("failures", []))
            self._truncate_results(self.completed * len(self.config.inits))
            logger.info(
                "resuming %s: %d of %d groups already complete",
                self.out_dir,
                self.completed,
                self.config.n_groups,
            )
        else:
            if resume:
                logger.info("no manifest in %s, starting a new study", self.out_dir)
            self.results_path.unlink(missing_ok=True)
            self.completed = 0
            self.failures = []
            self._write_manifest()
        return self.completed

    def _truncate_results(self, rows: int):
        # drops rows of a group whose manifest update was interrupted
        if not self.results_path.exists():
            return
        lines = self.results_path.read_text().splitlines(keepends=True)
        if len(lines) > rows + 1:
            logger.warning("dropping %d rows of an unfinished group", len(lines) - rows - 1)
            self.results_path.write_text("".join(lines[: rows + 1]))

    def write(self, task: GroupTask, rows: List[CellResult]):
        frame = pd.DataFrame([row.row() for row in rows], columns=RESULT_COLUMNS)
        io.append_csv(frame, self.results_path)
        self.completed += 1
        self.failures.extend(
            {"group": task.label, "init": row.init, "error": row.error}
            for row in rows
            if row.error is not None
        )
        self._write_manifest()

    def _write_manifest(self):
        payload = {
            "config": self.config.as_dict(),
            "seed": self.config.seed,
            "groups_total": self.config.n_groups,
            "chains_total": self.config.n_chains,
            "completed_groups": self.completed,
            "complete": self.completed == self.config.n_groups,
            "failures": self.failures,
        }
        partial = self.manifest_path.with_name(self.manifest_path.name + ".tmp")
        io.write_json(payload, partial)
        partial.replace(self.manifest_path)


def run_grid(
    config: StudyConfig,
    out_dir=None,
    resume: bool = False,
    jobs: int = 1,
    progress: bool = False,
) -> Iterator[CellResult]:
    """Run every group of ``config`` and yield its rows as they complete.

    With ``out_dir`` the rows are also appended to ``out_dir/results.csv`` and
    ``out_dir/manifest.json`` is kept current; ``resume`` then skips the groups
    the manifest reports complete. Every chain and data set draws from a stream
    derived from its identifiers, so the output does not depend on ``jobs``.
    """
    writer = StudyWriter(config, out_dir) if out_dir is not None else None
    skip = writer.start(resume) if writer is not None else 0
    tasks = list(config.groups())[skip:]
    logger.info(
        "study: %d groups (%d chains) to run of %d, seed %d, %d jobs",
        len(tasks),
        len(tasks) * len(config.inits),
        config.n_groups,
        config.seed,
        jobs,
    )
    jobs_list = [(config, task) for task in tasks]
    with tqdm(total=len(tasks), disable=not progress, desc="study") as bar:
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as executor:
                results = executor.map(_run_group_job, jobs_list)
                for task, rows in zip(tasks, results):
                    if writer is not None:
                        writer.write(task, rows)
                    bar.update()
                    yield from rows
        else:
            for task in tasks:
                rows = run_group(config, task)
                if writer is not None:
                    writer.write(task, rows)
                bar.update()
                yield from rows


def results_frame(rows) -> pd.DataFrame:
    """Rows as a data frame with ``RESULT_COLUMNS``; accepts a frame, ``CellResult`` objects or a CSV path."""
    if isinstance(rows, pd.DataFrame):
        return rows
    if isinstance(rows, (str, Path)):
        return pd.read_csv(rows)
    return pd.DataFrame([row.row() for row in rows], columns=RESULT_COLUMNS)


def _algorithm_rank(values: pd.Series) -> pd.Series:
    order = {algorithm.value: rank for rank, algorithm in enumerate(Algorithm)}
    return values.map(order)


def aggregate_mean_rne(rows, threshold: float = RHAT_THRESHOLD) -> pd.DataFrame:
    """Mean RNE in percent per (alg, n, nu_true) over the chains of groups with R-hat below ``threshold``.

    Prior rates, data sets and starting values are pooled. Cells without a
    surviving chain get NaN and the display marker ``"-"``.
    """
    frame = results_frame(rows).copy()
    frame["survives"] = (frame["rhat"] < threshold) & frame["rne"].notna()
    frame["rank"] = _algorithm_rank(frame["alg"])
    frame = frame.sort_values(["rank", "n", "nu_true"])
    records = []
    for (alg, n, nu_true), cell in frame.groupby(["alg", "n", "nu_true"], sort=False):
        kept = cell.loc[cell["survives"], "rne"]
        mean_rne = 100.0 * kept.mean() if len(kept) else math.nan
        records.append(
            {
                "alg": alg,
                "n": n,
                "nu_true": nu_true,
                "mean_rne": mean_rne,
                "chains": int(len(kept)),
                "screened_out": int(len(cell) - len(kept)),
                "display": "-" if math.isnan(mean_rne) else f"{mean_rne:.1f}",
            }
        )
    return pd.DataFrame(
        records, columns=["alg", "n", "nu_true", "mean_rne", "chains", "screened_out", "display"]
    )


def rne_table(aggregated: pd.DataFrame) -> pd.DataFrame:
    """Display strings of ``aggregate_mean_rne`` with one row per (alg, n) and one column per nu_true."""
    table = aggregated.pivot(index=["alg", "n"], columns="nu_true", values="display")
    ranks = _algorithm_rank(table.index.get_level_values("alg").to_series()).to_numpy()
    order = np.lexsort((table.index.get_level_values("n"), ranks))
    return table.iloc[order]


def interval_table(
    rows,
    n: int = 1000,
    nu_rate: float = 0.2,
    data_id: int = 0,
    threshold: float = RHAT_THRESHOLD,
) -> pd.DataFrame:
    """10th and 90th percentiles per (nu_true, alg, init) for one data length, prior rate and data set.

    ``interval`` renders as ``"(q10, q90)"`` with a trailing ``*`` when the
    group fails the R-hat screen.
    """
    frame = results_frame(rows)
    selected = frame[
        (frame["n"] == n) & np.isclose(frame["lambda"], nu_rate) & (frame["data_id"] == data_id)
    ].copy()
    selected["rank"] = _algorithm_rank(selected["alg"])
    selected = selected.sort_values(["nu_true", "rank", "init"])
    selected["flagged"] = ~(selected["rhat"] < threshold)
    selected["interval"] = [
        "-" if math.isnan(low) else f"({low:.3g}, {high:.3g})" + ("*" if flagged else "")
        for low, high, flagged in zip(selected["q10"], selected["q90"], selected["flagged"])
    ]
    columns = ["nu_true", "alg", "init", "q10", "q90", "rhat", "flagged", "interval"]
    return selected[columns].reset_index(drop=True)
