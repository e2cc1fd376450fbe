"""CSV time series and JSON run summaries."""

import csv
import json
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Sequence, Union

import numpy as np

from ..core.exceptions import DataError, StorageError
from ..numerics.diagnostics import PathDiagnostics

log = logging.getLogger(__name__)

COLUMNS = (
    "t", "E", "kinetic", "gradient_bulk", "boundary_l2", "boundary_grad",
    "bulk_potential", "boundary_potential", "D", "mass", "G",
)

PathLike = Union[str, Path]


def _format(value: float) -> str:
    return format(float(value), ".17g")


def series_rows(path: PathDiagnostics) -> List[List[float]]:
    """One row per recorded sample, in COLUMNS order."""
    rows = []
    for report, g_value in zip(path.reports, path.G_series):
        rows.append([
            report.t, report.E, report.kinetic, report.gradient_bulk, report.boundary_l2, report.boundary_grad,
            report.bulk_potential, report.boundary_potential, report.D, report.mass, float(g_value),
        ])
    return rows


def emit_csv(path: PathDiagnostics, destination: PathLike) -> Path:
    """Writes the sampled series with a header row and 17 significant digits."""
    destination = Path(destination)
    rows = series_rows(path)
    if not rows:
        raise DataError("nothing recorded to write")
    try:
        destination.parent.mkdir(parents=True, exist_ok=True)
        with open(destination, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(COLUMNS)
            for row in rows:
                writer.writerow([_format(v) for v in row])
    except OSError as e:
        log.error(f"Failed to write series to {destination}: {e}")
        raise StorageError(f"could not write {destination}: {e}") from e
    log.info(f"Wrote {len(rows)} rows to {destination}")
    return destination


def read_csv(source: PathLike) -> Dict[str, np.ndarray]:
    """Reads a series file back into one float array per column."""
    source = Path(source)
    try:
        with open(source, "r", encoding="utf-8", newline="") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            rows = [[float(v) for v in row] for row in reader if row]
    except (OSError, ValueError) as e:
        raise StorageError(f"could not read series {source}: {e}") from e
    if header is None or tuple(header) != COLUMNS:
        raise StorageError(f"unexpected header in {source}: {header}")
    table = np.array(rows, dtype=float).reshape(len(rows), len(COLUMNS))
    return {name: table[:, i] for i, name in enumerate(COLUMNS)}


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    return value


def write_summary(destination: PathLike, data: Dict[str, Any]) -> Path:
    """Persists a summary dict with an `updated_at` stamp."""
    destination = Path(destination)
    payload = {
        "updated_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "data": _jsonable(data),
    }
    try:
        destination.parent.mkdir(parents=True, exist_ok=True)
        with open(destination, "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=2, ensure_ascii=False)
    except (OSError, TypeError, ValueError) as e:
        log.error(f"Failed to write summary {destination}: {e}")
        raise StorageError(f"could not write summary {destination}: {e}") from e
    return destination


def read_summary(source: PathLike) -> Dict[str, Any]:
    try:
        with open(source, "r", encoding="utf-8") as f:
            return json.load(f).get("data", {})
    except (OSError, json.JSONDecodeError) as e:
        raise StorageError(f"could not read summary {source}: {e}") from e


def ensemble_rows(times: Sequence[float], columns: Dict[str, Sequence[float]]) -> List[List[str]]:
    return [[_format(t)] + [_format(columns[name][i]) for name in columns] for i, t in enumerate(times)]


def emit_ensemble_csv(destination: PathLike, times: Sequence[float], columns: Dict[str, Sequence[float]]) -> Path:
    """Per-time ensemble means and standard errors."""
    destination = Path(destination)
    try:
        destination.parent.mkdir(parents=True, exist_ok=True)
        with open(destination, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["t"] + list(columns))
            writer.writerows(ensemble_rows(times, columns))
    except OSError as e:
        log.error(f"Failed to write ensemble series to {destination}: {e}")
        raise StorageError(f"could not write {destination}: {e}") from e
    return destination
