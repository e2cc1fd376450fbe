"""Monte Carlo driver: independent paths with split seeds, aggregation and the supermartingale test."""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np

from ..core.exceptions import DataError, DivergenceError, LinearSolveError, ParameterError, StateError
from ..core.models import RunConfig
from .diagnostics import EventFilter, MomentEstimate, PathDiagnostics, PathRecorder, moment_estimates, truncate
from .dynamics import State, StepContext, full_step
from .initial import initial_state
from .noise import path_rng

log = logging.getLogger(__name__)

PATH_FAILURES = (DivergenceError, LinearSolveError, StateError)

StepHook = Callable[[int, State, np.random.Generator], None]

# --- Single path ---

@dataclass(frozen=True, eq=False)
class PathResult:
    index: int
    diagnostics: Optional[PathDiagnostics]
    final_state: Optional[State] = None
    final_step: int = 0
    error: Optional[str] = None
    error_type: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.error is not None


def integrate_path(ctx: StepContext, state: State, rng: np.random.Generator, steps: int,
                   recorder: Optional[PathRecorder] = None, start_step: int = 0,
                   hook: Optional[StepHook] = None) -> State:
    """Advances `state` from step `start_step` to `steps`, feeding every new state to the recorder."""
    if recorder is not None and not recorder.started:
        recorder.observe(start_step, state)
    for n in range(start_step, steps):
        state = full_step(state, ctx, rng)
        if recorder is not None:
            recorder.observe(n + 1, state)
        if hook is not None:
            hook(n + 1, state, rng)
    return state


def run_path(config: RunConfig, index: int, steps: Optional[int] = None, keep_state: bool = False,
             hook: Optional[StepHook] = None, strict: bool = False) -> PathResult:
    """Runs path `index` of the ensemble described by `config` from its initial condition.

    A failing path is returned as a failed PathResult, or re-raised when `strict`.
    """
    ctx = StepContext.from_config(config)
    steps = config.output.steps if steps is None else steps
    rng = path_rng(config.ensemble.base_seed, index)
    recorder = PathRecorder(ctx, config.ensemble.record_every)
    state = initial_state(ctx, config.initial)
    return _drive(ctx, index, state, rng, steps, recorder, 0, keep_state, hook, strict)


def resume_path(config: RunConfig, index: int, state: State, rng: np.random.Generator, start_step: int,
                steps: Optional[int] = None, keep_state: bool = True, hook: Optional[StepHook] = None,
                strict: bool = True) -> PathResult:
    """Continues a checkpointed path; the record covers the resumed part only."""
    ctx = StepContext.from_config(config)
    steps = config.output.steps if steps is None else steps
    if start_step > steps:
        raise ParameterError(f"checkpoint is at step {start_step}, beyond the requested {steps} steps")
    recorder = PathRecorder(ctx, config.ensemble.record_every)
    return _drive(ctx, index, state, rng, steps, recorder, start_step, keep_state, hook, strict)


def _drive(ctx: StepContext, index: int, state: State, rng: np.random.Generator, steps: int,
           recorder: PathRecorder, start_step: int, keep_state: bool, hook: Optional[StepHook],
           strict: bool = False) -> PathResult:
    try:
        final = integrate_path(ctx, state, rng, steps, recorder, start_step, hook)
    except PATH_FAILURES as e:
        if strict:
            raise
        log.warning(f"Path {index} failed after {recorder.steps_observed} steps: {type(e).__name__}: {e}")
        partial = recorder.finish() if recorder.steps_observed > 0 else None
        return PathResult(index=index, diagnostics=partial, final_step=recorder.last_step,
                          error=str(e), error_type=type(e).__name__)
    log.debug(f"Path {index} finished at t={final.t:.6g}")
    return PathResult(index=index, diagnostics=recorder.finish(), final_state=final if keep_state else None,
                      final_step=steps)

# --- Ensemble ---

@dataclass(frozen=True, eq=False)
class EnsembleStats:
    times: np.ndarray
    energy_mean: np.ndarray
    energy_stderr: np.ndarray
    mass_mean: np.ndarray
    mass_stderr: np.ndarray
    G_mean: np.ndarray
    G_stderr: np.ndarray
    moments: Dict[str, MomentEstimate]
    n_paths: int
    n_failed: int
    n_stopped: int
    exclusion_limit: float
    paths: Tuple[PathDiagnostics, ...] = field(default_factory=tuple)
    failed_indices: Tuple[int, ...] = field(default_factory=tuple)

    @property
    def excluded_fraction(self) -> float:
        return self.n_failed / self.n_paths

    @property
    def final_energies(self) -> np.ndarray:
        return np.array([p.energy_series[-1] for p in self.paths])


@dataclass(frozen=True, eq=False)
class EnsembleResult:
    stats: EnsembleStats
    results: Tuple[PathResult, ...]


def _mean_and_stderr(samples: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    mean = samples.mean(axis=0)
    if samples.shape[0] < 2:
        return mean, np.zeros_like(mean)
    return mean, samples.std(axis=0, ddof=1) / math.sqrt(samples.shape[0])


def aggregate(results: Sequence[PathResult], exclusion_limit: float = 0.05) -> EnsembleStats:
    """Reduces path results in index order; failed paths are counted and left out of every statistic."""
    if not results:
        raise DataError("cannot aggregate an empty ensemble")
    ordered = sorted(results, key=lambda r: r.index)
    good = [r.diagnostics for r in ordered if not r.failed and r.diagnostics is not None]
    failed = tuple(r.index for r in ordered if r.failed)
    if not good:
        raise DataError(f"all {len(ordered)} paths failed")
    lengths = {len(p) for p in good}
    if len(lengths) != 1:
        raise DataError(f"paths recorded different numbers of samples: {sorted(lengths)}")
    energy = np.stack([p.energy_series for p in good])
    mass = np.stack([p.mass_series for p in good])
    g_series = np.stack([p.G_series for p in good])
    energy_mean, energy_stderr = _mean_and_stderr(energy)
    mass_mean, mass_stderr = _mean_and_stderr(mass)
    g_mean, g_stderr = _mean_and_stderr(g_series)
    return EnsembleStats(
        times=good[0].times.copy(),
        energy_mean=energy_mean,
        energy_stderr=energy_stderr,
        mass_mean=mass_mean,
        mass_stderr=mass_stderr,
        G_mean=g_mean,
        G_stderr=g_stderr,
        moments=moment_estimates(good),
        n_paths=len(ordered),
        n_failed=len(failed),
        n_stopped=sum(1 for p in good if p.stopped_at is not None),
        exclusion_limit=exclusion_limit,
        paths=tuple(good),
        failed_indices=failed,
    )


def run_ensemble(config: RunConfig, indices: Optional[Sequence[int]] = None) -> EnsembleResult:
    """Runs every path and aggregates; with max_workers > 1 paths run in worker processes."""
    indices = list(range(config.ensemble.n_paths)) if indices is None else list(indices)
    if not indices:
        raise DataError("ensemble has no paths to run")
    workers = config.ensemble.max_workers
    log.info(f"Running {len(indices)} paths with {workers} worker(s), seed={config.ensemble.base_seed}")
    if workers > 1 and len(indices) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results: List[PathResult] = list(pool.map(run_path, [config] * len(indices), indices))
    else:
        results = [run_path(config, i) for i in indices]
    stats = aggregate(results, config.ensemble.exclusion_limit)
    if stats.n_failed:
        log.warning(f"{stats.n_failed} of {stats.n_paths} paths failed and are excluded: {list(stats.failed_indices)}")
    return EnsembleResult(stats=stats, results=tuple(sorted(results, key=lambda r: r.index)))

# --- Events and the supermartingale test ---

def full_space(path: PathDiagnostics) -> bool:
    return True


def empty_event(path: PathDiagnostics) -> bool:
    return False


def energy_below(threshold: float) -> EventFilter:
    """{E(s) <= threshold}, reading only the last sample of the truncated record."""
    def event(path: PathDiagnostics) -> bool:
        return bool(path.energy_series[-1] <= threshold)
    return event


def low_energy_half(stats: EnsembleStats, s_index: int) -> EventFilter:
    """{E(s) <= median of E(s) over the ensemble}"""
    threshold = float(np.median([p.energy_series[s_index] for p in stats.paths]))
    return energy_below(threshold)


EVENTS: Dict[str, Callable[[EnsembleStats, int], EventFilter]] = {
    "full": lambda stats, s: full_space,
    "low_energy_half": low_energy_half,
    "empty": lambda stats, s: empty_event,
}


@dataclass(frozen=True)
class SupermartingaleOutcome:
    verdict: Literal["pass", "fail", "inconclusive"]
    statistic: float
    stderr: float
    n_event: int
    reason: str = ""


def supermartingale_test(stats: EnsembleStats, s_index: int, t_index: int, event_filter: EventFilter,
                         atol: float = 0.0) -> SupermartingaleOutcome:
    """
    Empirical E[1_A G(t)] - E[1_A G(s)] with its standard error; passes iff it is at most 2 stderr + atol.

    The event sees each path truncated at s. Failed paths beyond the exclusion
    limit, or an event no path satisfies, make the result inconclusive.
    """
    if not 0 <= s_index < t_index < len(stats.times):
        raise ParameterError(f"need 0 <= s < t < {len(stats.times)}, got s={s_index}, t={t_index}")
    if stats.excluded_fraction > stats.exclusion_limit:
        reason = f"{stats.n_failed}/{stats.n_paths} paths excluded (limit {stats.exclusion_limit:.0%})"
        log.warning(f"Supermartingale test inconclusive: {reason}")
        return SupermartingaleOutcome("inconclusive", math.nan, math.nan, 0, reason)
    indicator = np.array([bool(event_filter(truncate(p, s_index))) for p in stats.paths], dtype=float)
    n_event = int(indicator.sum())
    if n_event == 0:
        log.warning(f"Supermartingale test inconclusive: empty event at s={s_index}")
        return SupermartingaleOutcome("inconclusive", math.nan, math.nan, 0, "no path satisfies the event")
    increments = indicator * np.array([p.G_series[t_index] - p.G_series[s_index] for p in stats.paths])
    statistic = float(increments.mean())
    stderr = float(increments.std(ddof=1) / math.sqrt(len(increments))) if len(increments) > 1 else 0.0
    verdict = "pass" if statistic <= 2.0 * stderr + atol else "fail"
    log.debug(f"Supermartingale test s={s_index} t={t_index}: {verdict}, statistic={statistic:.4g}, stderr={stderr:.4g}")
    return SupermartingaleOutcome(verdict, statistic, stderr, n_event)
