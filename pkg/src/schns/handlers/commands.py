"""Functions implementing the logic of each CLI command."""

import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from ..core import models
from ..core.config import config_hash, dump_config
from ..core.exceptions import SimulationError, VerificationError
from ..numerics.diagnostics import PathDiagnostics
from ..numerics.dynamics import State
from ..numerics.ensemble import (
    EVENTS,
    EnsembleStats,
    PathResult,
    resume_path,
    run_ensemble,
    run_path,
    supermartingale_test,
)
from ..storage import checkpoint, series
from .verification import SUITES, run_suites

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.bin"
SUMMARY_NAME = "summary.json"
CONFIG_NAME = "config.schns"

# --- Helpers ---

def output_directory(config: models.RunConfig) -> Path:
    out = Path(config.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _checkpoint_hook(config: models.RunConfig, out: Path):
    every = config.output.checkpoint_every
    if every <= 0:
        return None

    def hook(step: int, state: State, rng: np.random.Generator) -> None:
        if step % every == 0:
            checkpoint.checkpoint_write(out / CHECKPOINT_NAME, state, rng, step, config)

    return hook


def path_summary(path: PathDiagnostics) -> Dict[str, Any]:
    first, last = path.reports[0], path.reports[-1]
    return {
        "samples": len(path),
        "t_end": last.t,
        "energy_start": first.E,
        "energy_end": last.E,
        "mass_drift": float(np.max(np.abs(path.mass_series - path.mass_series[0]))),
        "G_end": float(path.G_series[-1]),
        "holder_seminorm": path.holder_seminorm,
        "stopped_at": path.stopped_at,
        "functionals": path.functionals,
    }


def _write_path_outputs(config: models.RunConfig, result: PathResult, out: Path, csv_name: str) -> Dict[str, Any]:
    csv_path = series.emit_csv(result.diagnostics, out / csv_name)
    summary = {
        "command": "run",
        "config_hash": config_hash(config).hex(),
        "path_index": result.index,
        "final_step": result.final_step,
        "series": csv_path.name,
        **path_summary(result.diagnostics),
    }
    series.write_summary(out / SUMMARY_NAME, summary)
    return summary


def sample_grid(n_samples: int, points: int = 5) -> List[int]:
    """Up to `points` evenly spaced sample indices, always including the first and the last."""
    if n_samples < 2:
        return [0]
    return sorted({int(round(i)) for i in np.linspace(0, n_samples - 1, min(points, n_samples))})


def supermartingale_table(stats: EnsembleStats, events: Optional[List[str]] = None, points: int = 5,
                          atol: float = 0.0) -> List[Dict[str, Any]]:
    """Runs the supermartingale test for every event on every s < t of a small time grid."""
    grid = sample_grid(len(stats.times), points)
    rows = []
    for name in events or ["full", "low_energy_half"]:
        for i, s in enumerate(grid):
            event = EVENTS[name](stats, s)
            for t in grid[i + 1:]:
                outcome = supermartingale_test(stats, s, t, event, atol=atol)
                rows.append({"event": name, "s": s, "t": t, "verdict": outcome.verdict,
                             "statistic": outcome.statistic, "stderr": outcome.stderr, "n_event": outcome.n_event})
    return rows

# --- Command Handlers ---

def handle_run(args: models.CommandArgs) -> Dict[str, Any]:
    """
    Handles the 'run' command: one path from the configured initial condition.
    Writes the series CSV, the summary and optional checkpoints.
    """
    config = args.config
    try:
        out = output_directory(config)
        (out / CONFIG_NAME).write_text(dump_config(config), encoding="utf-8")
        result = run_path(config, 0, keep_state=True, hook=_checkpoint_hook(config, out), strict=True)
        summary = _write_path_outputs(config, result, out, config.output.csv_name)
        log.info(f"Run finished: {result.final_step} steps, E={summary['energy_end']:.6g}")
        return {"status": "success", "output_directory": str(out), **summary}
    except SimulationError as e:
        log.error(f"Run failed: {type(e).__name__}: {e}")
        raise
    except OSError as e:
        log.error(f"Run failed on output directory {config.output.directory}: {e}")
        raise SimulationError(f"Output error in run: {e}") from e
    except Exception as e:
        log.exception("Unexpected error in run")
        raise SimulationError(f"Unexpected error in run: {e}") from e


def handle_ensemble(args: models.CommandArgs) -> Dict[str, Any]:
    """
    Handles the 'ensemble' command: N paths, aggregate statistics and the supermartingale test grid.
    """
    config = args.config
    try:
        out = output_directory(config)
        (out / CONFIG_NAME).write_text(dump_config(config), encoding="utf-8")
        outcome = run_ensemble(config)
        stats = outcome.stats
        for result in outcome.results:
            if result.diagnostics is not None and not result.failed:
                series.emit_csv(result.diagnostics, out / "paths" / f"path_{result.index:04d}.csv")
        series.emit_ensemble_csv(out / "ensemble.csv", stats.times, {
            "E_mean": stats.energy_mean, "E_stderr": stats.energy_stderr,
            "mass_mean": stats.mass_mean, "mass_stderr": stats.mass_stderr,
            "G_mean": stats.G_mean, "G_stderr": stats.G_stderr,
        })
        tests = supermartingale_table(stats)
        verdicts = {v: sum(1 for row in tests if row["verdict"] == v) for v in ("pass", "fail", "inconclusive")}
        summary = {
            "command": "ensemble",
            "config_hash": config_hash(config).hex(),
            "n_paths": stats.n_paths,
            "n_failed": stats.n_failed,
            "n_stopped": stats.n_stopped,
            "failed_indices": list(stats.failed_indices),
            "failures": {r.index: f"{r.error_type}: {r.error}" for r in outcome.results if r.failed},
            "moments": {k: {"mean": m.mean, "stderr": m.stderr} for k, m in stats.moments.items()},
            "supermartingale": tests,
            "verdicts": verdicts,
        }
        series.write_summary(out / SUMMARY_NAME, summary)
        log.info(f"Ensemble finished: {stats.n_paths} paths, {stats.n_failed} failed, verdicts {verdicts}")
        return {"status": "success", "output_directory": str(out), **summary}
    except SimulationError as e:
        log.error(f"Ensemble failed: {type(e).__name__}: {e}")
        raise
    except OSError as e:
        log.error(f"Ensemble failed on output directory {config.output.directory}: {e}")
        raise SimulationError(f"Output error in ensemble: {e}") from e
    except Exception as e:
        log.exception("Unexpected error in ensemble")
        raise SimulationError(f"Unexpected error in ensemble: {e}") from e


def handle_resume(args: models.ResumeArgs) -> Dict[str, Any]:
    """
    Handles the 'resume' command: continues path 0 from a checkpoint to `output.steps`.
    The checkpoint must have been written with the same physics configuration.
    """
    config = args.config
    try:
        out = output_directory(config)
        state, rng, step = checkpoint.checkpoint_read(args.checkpoint, config)
        log.info(f"Resuming from step {step} to {config.output.steps}")
        result = resume_path(config, 0, state, rng, step, hook=_checkpoint_hook(config, out))
        stem = Path(config.output.csv_name)
        summary = _write_path_outputs(config, result, out, f"{stem.stem}_resumed{stem.suffix or '.csv'}")
        summary.update(command="resume", resumed_from=step)
        series.write_summary(out / SUMMARY_NAME, summary)
        return {"status": "success", "output_directory": str(out), **summary}
    except SimulationError as e:
        log.error(f"Resume failed: {type(e).__name__}: {e}")
        raise
    except OSError as e:
        log.error(f"Resume failed on output directory {config.output.directory}: {e}")
        raise SimulationError(f"Output error in resume: {e}") from e
    except Exception as e:
        log.exception("Unexpected error in resume")
        raise SimulationError(f"Unexpected error in resume: {e}") from e


def handle_verify(args: models.VerifyArgs) -> Dict[str, Any]:
    """
    Handles the 'verify' command: runs the invariant suites and fails if any of them fails.
    """
    unknown = [name for name in args.suites or () if name not in SUITES]
    if unknown:
        raise VerificationError(f"unknown suites {unknown}; available: {sorted(SUITES)}")
    try:
        results = run_suites(args.config, args.suites, size=args.grid_size)
    except SimulationError as e:
        log.error(f"Verification aborted: {type(e).__name__}: {e}")
        raise
    except Exception as e:
        log.exception("Unexpected error in verify")
        raise SimulationError(f"Unexpected error in verify: {e}") from e
    report = {name: {"passed": r.passed, **r.details} for name, r in results.items()}
    failed = [name for name, r in results.items() if not r.passed]
    if failed:
        log.error(f"Verification failed: {failed}")
        raise VerificationError(f"suites failed: {', '.join(failed)}", results=report)
    return {"status": "success", "suites": report}
