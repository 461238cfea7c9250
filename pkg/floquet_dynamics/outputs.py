"""CSV time series, run manifests and comparison reports."""

import csv
import hashlib
import json
import logging
from pathlib import Path

import numpy as np

from .ensemble import TimeSeries
from .exceptions import SeriesMismatch

logger = logging.getLogger(__name__)

FRSH_COLUMNS = ("t", "pop_D", "pop_D_stderr", "kinetic", "kinetic_stderr")
FRQME_COLUMNS = ("t", "pop_D", "kinetic")
STDERR_SUFFIX = "_stderr"


def format_number(value) -> str:
    """Locale-independent, round-trippable float text."""
    return format(float(value), ".17g")


def _column(series: TimeSeries, name: str) -> np.ndarray:
    if name == "t":
        return series.t
    if name.endswith(STDERR_SUFFIX):
        return series.stderr[name[: -len(STDERR_SUFFIX)]]
    return series.means[name]


def write_series(series: TimeSeries, path, columns=FRSH_COLUMNS) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = [_column(series, name) for name in columns]
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(columns)
        for row in zip(*data):
            writer.writerow([format_number(value) for value in row])
    logger.info("Wrote %d rows to %s.", len(series.t), path)
    return path


def read_series(path) -> TimeSeries:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        header = reader.fieldnames or []
        if "t" not in header or "pop_D" not in header:
            raise SeriesMismatch(f"{path} needs at least the columns t and pop_D.")
        try:
            rows = [{name: float(row[name]) for name in header} for row in reader]
        except (TypeError, ValueError) as exc:
            raise SeriesMismatch(f"{path} has a non-numeric entry: {exc}") from exc
    if not rows:
        raise SeriesMismatch(f"{path} has no data rows.")
    columns = {name: np.array([row[name] for row in rows]) for name in header}
    t = columns.pop("t")
    stderr = {
        name[: -len(STDERR_SUFFIX)]: values
        for name, values in columns.items()
        if name.endswith(STDERR_SUFFIX)
    }
    means = {name: values for name, values in columns.items() if not name.endswith(STDERR_SUFFIX)}
    return TimeSeries(t=t, means=means, stderr=stderr)


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_json(path, payload: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def write_manifest(path, *, config: dict, seed: int, code_version: str, wall_time: float,
                   outputs, diagnostics: dict | None = None) -> Path:
    payload = {
        "config": config,
        "master_seed": seed,
        "code_version": code_version,
        "wall_time_seconds": wall_time,
        "outputs": {str(Path(p)): sha256_file(p) for p in outputs},
        "diagnostics": diagnostics or {},
    }
    path = write_json(path, payload)
    logger.info("Wrote manifest %s.", path)
    return path


def manifest_path_for(output) -> Path:
    output = Path(output)
    return output.with_name(f"{output.stem}.manifest.json")


def report_path_for(output) -> Path:
    output = Path(output)
    return output.with_name(f"{output.stem}.report.json")


def variant_path(output, tag: str) -> Path:
    output = Path(output)
    return output.with_name(f"{output.stem}_{tag}{output.suffix or '.csv'}")


def amplitude_tag(amplitude: float) -> str:
    return f"A{amplitude:g}"
