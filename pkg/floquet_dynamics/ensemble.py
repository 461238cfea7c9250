"""
Trajectory ensembles, their statistics and solver-to-solver comparison.

Trajectory ``i`` always draws from the stream ``(master_seed, i)`` and
results are stacked in index order before any reduction, so a
TimeSeries depends on ``(master_seed, n_traj)`` and not on how many
workers produced it.
"""

import logging
import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import driven_model
from .exceptions import EnsembleError, SeriesMismatch
from .frsh import ESTIMATORS, FRUSTRATED_POLICIES, FloquetSurfaceHopping

logger = logging.getLogger(__name__)

STEADY_STATE_FRACTION = 0.2
SHORT_TIME_FRACTION = 0.05
SLOPE_TOLERANCE = 1e-6
CHUNKS_PER_WORKER = 4

PASS = "pass"
FAIL = "fail"


def output_grid(t_end: float, dt: float, stride: int) -> tuple[np.ndarray, int]:
    """Output times (multiples of dt * stride) and the number of dt steps."""
    if dt <= 0:
        raise ValueError("dt must be positive.")
    if t_end < 0:
        raise ValueError("t_end must be non-negative.")
    if stride < 1:
        raise ValueError("Output stride must be at least 1.")
    n_steps = int(round(t_end / dt))
    n_out = n_steps // stride + 1
    return np.arange(n_out) * (dt * stride), n_steps


@dataclass(frozen=True)
class EnsembleConfig:
    n_traj: int = 10000
    master_seed: int = 0
    dt: float = 0.5
    t_end: float = 50000.0
    output_stride: int = 200
    worker_count: int = 1
    frustrated_hops: str = "reject"
    estimator: str = "reference"
    max_hop_probability: float = 0.1

    def __post_init__(self):
        if self.n_traj < 1:
            raise ValueError("n_traj must be at least 1.")
        if self.worker_count < 1:
            raise ValueError("worker_count must be at least 1.")
        if self.master_seed < 0:
            raise ValueError("master_seed must be non-negative.")
        if self.frustrated_hops not in FRUSTRATED_POLICIES:
            raise ValueError(f"frustrated_hops must be one of {FRUSTRATED_POLICIES}.")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}.")
        if not 0 < self.max_hop_probability <= 1:
            raise ValueError("max_hop_probability must be in (0, 1].")
        output_grid(self.t_end, self.dt, self.output_stride)

    @property
    def times(self) -> np.ndarray:
        return output_grid(self.t_end, self.dt, self.output_stride)[0]


@dataclass
class TimeSeries:
    t: np.ndarray
    means: dict
    stderr: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict, repr=False)
    diagnostics: dict = field(default_factory=dict)
    n_samples: int = 1

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        for name, values in self.means.items():
            if np.shape(values) != self.t.shape:
                raise ValueError(f"Column {name!r} does not match the time grid.")

    @property
    def observables(self) -> list[str]:
        return list(self.means)

    def final_window(self, fraction: float = STEADY_STATE_FRACTION) -> np.ndarray:
        if not 0 < fraction <= 1:
            raise ValueError("fraction must be in (0, 1].")
        start = self.t[0] + (1.0 - fraction) * (self.t[-1] - self.t[0])
        return self.t >= start

    def steady_state(self, fraction: float = STEADY_STATE_FRACTION) -> dict[str, float]:
        window = self.final_window(fraction)
        result = {}
        for name, values in self.means.items():
            result[name] = float(np.mean(values[window]))
            if window.sum() >= 2:
                slope = np.polyfit(self.t[window], values[window], 1)[0]
                if abs(slope) > SLOPE_TOLERANCE:
                    logger.warning(
                        "%s has not reached a steady state: final-window slope %.3e.", name, slope
                    )
        return result

    def steady_state_error(self, fraction: float = STEADY_STATE_FRACTION) -> dict[str, float]:
        """Standard error of the window mean, from per-trajectory window averages."""
        window = self.final_window(fraction)
        result = {}
        for name, samples in self.raw.items():
            per_trajectory = samples[:, window].mean(axis=1)
            n = per_trajectory.shape[0]
            result[name] = float(per_trajectory.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        return result

    def interpolate(self, name: str, t: np.ndarray) -> np.ndarray:
        return np.interp(t, self.t, self.means[name])


def reduce_samples(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean and standard error along the trajectory axis."""
    n = samples.shape[0]
    mean = samples.mean(axis=0)
    if n == 1:
        return mean, np.zeros_like(mean)
    return mean, samples.std(axis=0, ddof=1) / math.sqrt(n)


def run_trajectory(propagator: FloquetSurfaceHopping, config: EnsembleConfig, index: int):
    times, n_steps = output_grid(config.t_end, config.dt, config.output_stride)
    population = np.empty(times.shape[0])
    kinetic = np.empty(times.shape[0])
    state = propagator.sample_initial(config.master_seed, index)
    out_of_bounds = 0

    def record(slot):
        nonlocal out_of_bounds
        population[slot] = propagator.donor_population(state, config.estimator)
        kinetic[slot] = propagator.kinetic_energy(state)
        if not propagator.estimator_in_bounds(state, population[slot]):
            out_of_bounds += 1

    record(0)
    slot = 1
    for step in range(1, n_steps + 1):
        propagator.advance(state, config.dt)
        if step % config.output_stride == 0:
            record(slot)
            slot += 1
    return population, kinetic, {**state.diagnostics(), "estimator_out_of_bounds": out_of_bounds}


def _run_chunk(params: driven_model.ModelParams, n_max: int, config: EnsembleConfig, indices):
    propagator = FloquetSurfaceHopping(
        params,
        n_max,
        frustrated_hops=config.frustrated_hops,
        max_hop_probability=config.max_hop_probability,
    )
    populations, kinetics = [], []
    diagnostics = Counter()
    for index in indices:
        population, kinetic, counts = run_trajectory(propagator, config, int(index))
        populations.append(population)
        kinetics.append(kinetic)
        diagnostics.update(counts)
    return np.array(populations), np.array(kinetics), dict(diagnostics)


def run_ensemble(config: EnsembleConfig, params: driven_model.ModelParams, n_max: int = 2) -> TimeSeries:
    chunks = [
        chunk
        for chunk in np.array_split(np.arange(config.n_traj), config.worker_count * CHUNKS_PER_WORKER)
        if chunk.size
    ]
    logger.info(
        "FR-SH ensemble: %d trajectories, seed %d, %d workers, %d chunks.",
        config.n_traj,
        config.master_seed,
        config.worker_count,
        len(chunks),
    )
    results = [None] * len(chunks)
    completed = 0

    if config.worker_count == 1:
        for position, chunk in enumerate(chunks):
            try:
                results[position] = _run_chunk(params, n_max, config, chunk)
            except Exception as exc:
                logger.exception("Trajectory chunk starting at %d failed.", int(chunk[0]))
                raise EnsembleError(str(exc), completed=completed, requested=config.n_traj) from exc
            completed += chunk.size
            logger.info("FR-SH ensemble: %d/%d trajectories done.", completed, config.n_traj)
    else:
        with ProcessPoolExecutor(max_workers=config.worker_count) as pool:
            futures = [pool.submit(_run_chunk, params, n_max, config, chunk) for chunk in chunks]
            for position, future in enumerate(futures):
                try:
                    results[position] = future.result()
                except Exception as exc:
                    logger.exception("Trajectory chunk starting at %d failed.", int(chunks[position][0]))
                    for pending in futures:
                        pending.cancel()
                    raise EnsembleError(str(exc), completed=completed, requested=config.n_traj) from exc
                completed += chunks[position].size
                logger.info("FR-SH ensemble: %d/%d trajectories done.", completed, config.n_traj)

    population = np.concatenate([r[0] for r in results], axis=0)
    kinetic = np.concatenate([r[1] for r in results], axis=0)
    diagnostics = Counter()
    for r in results:
        diagnostics.update(r[2])

    if diagnostics.get("estimator_out_of_bounds"):
        logger.warning(
            "%d donor-population samples exceed [0, 1] by more than their largest coherence.",
            diagnostics["estimator_out_of_bounds"],
        )
    if diagnostics.get("starvation_events"):
        logger.warning(
            "Active-surface population starved %d times; derivative-coupling hops were skipped there.",
            diagnostics["starvation_events"],
        )

    pop_mean, pop_err = reduce_samples(population)
    kin_mean, kin_err = reduce_samples(kinetic)
    return TimeSeries(
        t=config.times,
        means={"pop_D": pop_mean, "kinetic": kin_mean},
        stderr={"pop_D": pop_err, "kinetic": kin_err},
        raw={"pop_D": population, "kinetic": kinetic},
        diagnostics=dict(diagnostics),
        n_samples=config.n_traj,
    )


def steady_state_ordering(values_by_amplitude: dict, errors: dict | None = None) -> str:
    """
    ``pass`` when the values strictly increase with amplitude; with
    ``errors`` every step must also exceed the combined standard error.
    """
    amplitudes = sorted(values_by_amplitude)
    for low, high in zip(amplitudes, amplitudes[1:]):
        step = values_by_amplitude[high] - values_by_amplitude[low]
        margin = 0.0
        if errors:
            margin = math.hypot(errors.get(low, 0.0), errors.get(high, 0.0))
        if step <= margin:
            return FAIL
    return PASS


@dataclass(frozen=True)
class ObservableComparison:
    max_deviation: float
    steady_state_frsh: float
    steady_state_frqme: float
    steady_state_difference: float
    short_time_deviation: float


@dataclass
class ComparisonReport:
    t_start: float
    t_end: float
    observables: dict = field(default_factory=dict)
    ordering: dict = field(default_factory=dict)

    @property
    def max_deviation(self) -> float:
        return self.observables["pop_D"].max_deviation

    def as_dict(self) -> dict:
        return {
            "t_start": self.t_start,
            "t_end": self.t_end,
            "max_deviation": self.max_deviation,
            "observables": {name: asdict(comparison) for name, comparison in self.observables.items()},
            "ordering": dict(self.ordering),
        }


def compare_series(frsh: TimeSeries, frqme: TimeSeries) -> ComparisonReport:
    """
    Deviation of ``frsh`` from ``frqme`` on the FR-SH grid restricted to
    the common time range, with ``frqme`` interpolated linearly onto it.
    """
    start = max(frsh.t[0], frqme.t[0])
    end = min(frsh.t[-1], frqme.t[-1])
    if end < start:
        raise SeriesMismatch(
            f"Time ranges [{frsh.t[0]:g}, {frsh.t[-1]:g}] and [{frqme.t[0]:g}, {frqme.t[-1]:g}] do not overlap."
        )
    shared = [name for name in frsh.observables if name in frqme.means]
    if "pop_D" not in shared:
        raise SeriesMismatch("Both series need a pop_D column.")

    grid = frsh.t[(frsh.t >= start) & (frsh.t <= end)]
    if grid.size == 0:
        grid = np.array([start])
    span = grid[-1] - grid[0]
    steady = grid >= grid[0] + (1.0 - STEADY_STATE_FRACTION) * span
    early = grid <= grid[0] + SHORT_TIME_FRACTION * span

    report = ComparisonReport(t_start=float(grid[0]), t_end=float(grid[-1]))
    for name in shared:
        left = frsh.interpolate(name, grid)
        right = frqme.interpolate(name, grid)
        deviation = np.abs(left - right)
        steady_left = float(np.mean(left[steady]))
        steady_right = float(np.mean(right[steady]))
        report.observables[name] = ObservableComparison(
            max_deviation=float(deviation.max()),
            steady_state_frsh=steady_left,
            steady_state_frqme=steady_right,
            steady_state_difference=abs(steady_left - steady_right),
            short_time_deviation=float(deviation[early].max()),
        )
    return report
