"""
Dispatch of a parsed RunConfig to the solvers and the output writers.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path

from .config import METHOD_COMPARE, METHOD_FRQME, METHOD_FRSH, RunConfig
from .ensemble import TimeSeries, compare_series, run_ensemble, steady_state_ordering
from .frqme import FloquetMasterEquation, build_vibronic_space
from .outputs import (
    FRQME_COLUMNS,
    FRSH_COLUMNS,
    amplitude_tag,
    read_series,
    report_path_for,
    variant_path,
    write_json,
    write_series,
)

logger = logging.getLogger(__name__)

ORDERED_OBSERVABLES = ("pop_D", "kinetic")


@dataclass
class RunOutcome:
    outputs: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    steady_state: dict = field(default_factory=dict)
    report: dict | None = None


def master_equation_stride(config: RunConfig) -> int:
    """FR-QME stride whose output spacing matches the FR-SH grid."""
    spacing = config.ensemble.dt * config.io.stride
    return max(1, int(round(spacing / config.qme.dt)))


def run_frsh(config: RunConfig) -> TimeSeries:
    return run_ensemble(config.ensemble, config.params, config.floquet.n_max)


def run_frqme(config: RunConfig) -> TimeSeries:
    space = build_vibronic_space(config.floquet.n_phonon, config.floquet.n_max)
    solver = FloquetMasterEquation(config.params, space)
    return solver.run(config.ensemble.t_end, config.qme.dt, master_equation_stride(config))


def _summarise(outcome: RunOutcome, method: str, series: TimeSeries) -> None:
    outcome.steady_state[method] = {
        "mean": series.steady_state(),
        "stderr": series.steady_state_error(),
    }
    if series.diagnostics:
        outcome.diagnostics[method] = dict(series.diagnostics)


def execute_single(config: RunConfig, output: Path, frsh_csv=None, frqme_csv=None) -> RunOutcome:
    outcome = RunOutcome()
    if config.method == METHOD_FRSH:
        series = run_frsh(config)
        outcome.outputs.append(write_series(series, output, FRSH_COLUMNS))
        _summarise(outcome, METHOD_FRSH, series)
    elif config.method == METHOD_FRQME:
        series = run_frqme(config)
        outcome.outputs.append(write_series(series, output, FRQME_COLUMNS))
        _summarise(outcome, METHOD_FRQME, series)
    elif config.method == METHOD_COMPARE:
        if frsh_csv:
            frsh = read_series(frsh_csv)
        else:
            frsh = run_frsh(config)
            outcome.outputs.append(write_series(frsh, variant_path(output, METHOD_FRSH), FRSH_COLUMNS))
        if frqme_csv:
            frqme = read_series(frqme_csv)
        else:
            frqme = run_frqme(config)
            outcome.outputs.append(write_series(frqme, variant_path(output, METHOD_FRQME), FRQME_COLUMNS))
        _summarise(outcome, METHOD_FRSH, frsh)
        _summarise(outcome, METHOD_FRQME, frqme)
        outcome.report = compare_series(frsh, frqme).as_dict()
        outcome.outputs.append(write_json(report_path_for(output), outcome.report))
        logger.info(
            "Comparison: max |dpop_D| = %.4g, steady-state difference %.4g.",
            outcome.report["max_deviation"],
            outcome.report["observables"]["pop_D"]["steady_state_difference"],
        )
    else:
        raise ValueError(f"Unknown method {config.method!r}.")
    return outcome


def execute(config: RunConfig, output, frsh_csv=None, frqme_csv=None) -> RunOutcome:
    output = Path(output)
    if config.sweep is None:
        return execute_single(config, output, frsh_csv, frqme_csv)

    outcome = RunOutcome()
    per_amplitude = {}
    for amplitude in config.sweep.amplitudes:
        tag = amplitude_tag(amplitude)
        logger.info("Amplitude sweep: A=%g.", amplitude)
        single = execute_single(config.for_amplitude(amplitude), variant_path(output, tag))
        outcome.outputs.extend(single.outputs)
        if single.diagnostics:
            outcome.diagnostics[tag] = single.diagnostics
        per_amplitude[amplitude] = single

    ordering = {}
    for method in next(iter(per_amplitude.values())).steady_state:
        for name in ORDERED_OBSERVABLES:
            values = {A: run.steady_state[method]["mean"][name] for A, run in per_amplitude.items()}
            errors = {A: run.steady_state[method]["stderr"].get(name, 0.0) for A, run in per_amplitude.items()}
            ordering[f"{method}.{name}"] = steady_state_ordering(values, errors)

    outcome.report = {
        "amplitudes": {
            amplitude_tag(A): {"steady_state": run.steady_state, "comparison": run.report}
            for A, run in per_amplitude.items()
        },
        "ordering": ordering,
    }
    outcome.outputs.append(write_json(report_path_for(output), outcome.report))
    return outcome
