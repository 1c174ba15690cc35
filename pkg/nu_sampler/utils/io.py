"""CSV and JSON emission shared by the command line and the study runner."""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np
import pandas as pd

from nu_sampler import FORMAT_VERSION, __version__
from nu_sampler.model import ObservationSet
from nu_sampler.utils.errors import DataLoadError

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.8g"


def _prepare(path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def write_csv(frame: pd.DataFrame, path) -> Path:
    path = _prepare(path)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.info("wrote %d rows to %s", len(frame), path)
    return path


def append_csv(frame: pd.DataFrame, path) -> Path:
    """Append rows to ``path``, writing the header only when the file is new or empty."""
    path = _prepare(path)
    new_file = not path.exists() or path.stat().st_size == 0
    frame.to_csv(path, mode="a", header=new_file, index=False, float_format=FLOAT_FORMAT)
    return path


def write_observations_csv(data: ObservationSet, path) -> Path:
    return write_csv(pd.DataFrame({"index": np.arange(data.n), "y": data.y}), path)


def read_observations_csv(path) -> ObservationSet:
    """Read the ``y`` column of an ``index,y`` CSV; other columns are ignored."""
    try:
        frame = pd.read_csv(path)
    except (OSError, ValueError) as error:
        raise DataLoadError(f"cannot read observations from {path}: {error}") from error
    if "y" not in frame.columns:
        raise DataLoadError(f"{path}: expected a column named 'y', got {list(frame.columns)}")
    values = pd.to_numeric(frame["y"], errors="coerce").to_numpy(dtype=float)
    if not np.all(np.isfinite(values)):
        raise DataLoadError(f"{path}: non-numeric or missing observations")
    return ObservationSet(values)


def _jsonable(value):
    if isinstance(value, dict):
        return {str(key): _jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(item) for item in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(item) for item in value.tolist()]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not np.isfinite(value):
        return None
    if hasattr(value, "value") and hasattr(value, "name"):
        return value.value
    return value


def write_json(payload: dict, path) -> Path:
    """Write ``payload`` with the library and format versions attached."""
    path = _prepare(path)
    document = {"version": __version__, "format_version": FORMAT_VERSION}
    document.update(_jsonable(payload))
    with open(path, "w") as handle:
        json.dump(document, handle, indent=2)
        handle.write("\n")
    logger.debug("wrote %s", path)
    return path


def read_json(path) -> dict:
    with open(path) as handle:
        return json.load(handle)
