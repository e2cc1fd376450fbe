import json
from dataclasses import replace

import numpy as np
import pytest

from schns.core.exceptions import CheckpointError, DataError, StorageError
from schns.core.models import RunConfig
from schns.numerics.diagnostics import PathRecorder
from schns.numerics.dynamics import StepContext
from schns.numerics.ensemble import integrate_path, resume_path, run_path
from schns.numerics.initial import initial_state
from schns.numerics.noise import path_rng
from schns.storage import checkpoint, series


def _config(**sections):
    data = {
        "grid": {"nx": 8, "ny": 8},
        "initial": {"kind": "cosine", "amplitude": 0.2, "velocity": 0.5},
        "ensemble": {"record_every": 10, "base_seed": 9},
        "output": {"steps": 20},
    }
    for section, values in sections.items():
        data.setdefault(section, {}).update(values)
    return RunConfig.model_validate(data)


def _advanced(config, steps):
    ctx = StepContext.from_config(config)
    rng = path_rng(config.ensemble.base_seed, 0)
    state = integrate_path(ctx, initial_state(ctx, config.initial), rng, steps)
    return state, rng

# --- Checkpoints ---

def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    config = _config()
    state, rng = _advanced(config, 3)
    path = checkpoint.checkpoint_write(tmp_path / "ck.bin", state, rng, 3, config)
    assert path.stat().st_size == checkpoint.expected_size(8, 8)
    loaded, loaded_rng, step = checkpoint.checkpoint_read(path, config)
    assert step == 3 and loaded.t == state.t
    for name, values in state.fields().items():
        assert np.array_equal(loaded.fields()[name], values), name
    assert loaded_rng.bit_generator.state == rng.bit_generator.state
    assert np.array_equal(loaded_rng.standard_normal(5), rng.standard_normal(5))


def test_truncated_checkpoint_is_rejected():
    config = _config()
    state, rng = _advanced(config, 1)
    blob = checkpoint.encode_checkpoint(state, rng, 1, config)
    with pytest.raises(CheckpointError):
        checkpoint.decode_checkpoint(blob[:-1], config)
    with pytest.raises(CheckpointError):
        checkpoint.decode_checkpoint(blob[:10], config)


def test_checkpoint_rejects_foreign_files_and_configs():
    config = _config()
    state, rng = _advanced(config, 1)
    blob = checkpoint.encode_checkpoint(state, rng, 1, config)
    with pytest.raises(CheckpointError):
        checkpoint.decode_checkpoint(b"NOTME!" + blob[6:], config)
    with pytest.raises(CheckpointError):
        checkpoint.decode_checkpoint(blob, _config(scheme={"dt": 2e-4}))
    # output settings are not part of the physics
    decoded, _, _ = checkpoint.decode_checkpoint(blob, _config(output={"steps": 99, "directory": "other"}))
    assert np.array_equal(decoded.u, state.u)
    # nor is the ensemble plumbing around the seed
    decoded, _, _ = checkpoint.decode_checkpoint(blob, _config(ensemble={"n_paths": 16, "max_workers": 4, "record_every": 3}))
    assert np.array_equal(decoded.phi, state.phi)


def test_missing_checkpoint_file(tmp_path):
    with pytest.raises(CheckpointError):
        checkpoint.checkpoint_read(tmp_path / "nothing.bin", _config())


def test_resume_reproduces_the_uninterrupted_path(tmp_path):
    config = _config()
    saved = {}

    def hook(step, state, rng):
        if step == 7:
            saved["path"] = checkpoint.checkpoint_write(tmp_path / "ck.bin", state, rng, step, config)

    uninterrupted = run_path(config, 0, keep_state=True, hook=hook)
    state, rng, step = checkpoint.checkpoint_read(saved["path"], config)
    resumed = resume_path(config, 0, state, rng, step)
    assert resumed.final_step == 20
    assert np.array_equal(resumed.final_state.u, uninterrupted.final_state.u)
    assert np.array_equal(resumed.final_state.phi, uninterrupted.final_state.phi)
    assert np.array_equal(resumed.final_state.psi, uninterrupted.final_state.psi)
    assert list(resumed.diagnostics.sample_steps) == [7, 10, 20]
    assert resumed.diagnostics.energy_series[-1] == uninterrupted.diagnostics.energy_series[-1]

# --- Series ---

def test_zero_state_series_rows(tmp_path):
    config = _config(initial={"kind": "zero", "velocity": 0.0})
    result = run_path(config, 0)
    out = series.emit_csv(result.diagnostics, tmp_path / "series.csv")
    lines = out.read_text(encoding="utf-8").splitlines()
    assert lines[0] == ",".join(series.COLUMNS)
    assert len(lines) == 4
    table = series.read_csv(out)
    assert np.all(table["E"] == 0.0) and np.all(table["mass"] == 0.0) and np.all(table["G"] == 0.0)
    assert table["t"] == pytest.approx([0.0, 10 * config.scheme.dt, 20 * config.scheme.dt])


def test_series_reparse_is_exact(tmp_path):
    result = run_path(_config(), 0)
    out = series.emit_csv(result.diagnostics, tmp_path / "nested" / "series.csv")
    table = series.read_csv(out)
    assert np.array_equal(table["E"], result.diagnostics.energy_series)
    assert np.array_equal(table["G"], result.diagnostics.G_series)


def test_empty_record_and_unwritable_destination(tmp_path):
    config = _config()
    recorder = PathRecorder(StepContext.from_config(config))
    recorder.observe(0, initial_state(StepContext.from_config(config), config.initial))
    path = recorder.finish()
    with pytest.raises(StorageError):
        series.emit_csv(path, tmp_path)
    empty = replace(path, reports=(), G_series=np.array([]))
    with pytest.raises(DataError):
        series.emit_csv(empty, tmp_path / "x.csv")


def test_read_csv_rejects_foreign_header(tmp_path):
    out = tmp_path / "other.csv"
    out.write_text("a,b\n1,2\n", encoding="utf-8")
    with pytest.raises(StorageError):
        series.read_csv(out)


def test_summary_round_trip(tmp_path):
    destination = series.write_summary(tmp_path / "summary.json", {"value": np.float64(1.5), "steps": np.arange(3)})
    raw = json.loads(destination.read_text(encoding="utf-8"))
    assert "updated_at" in raw
    assert series.read_summary(destination) == {"value": 1.5, "steps": [0, 1, 2]}


def test_ensemble_csv_layout(tmp_path):
    out = series.emit_ensemble_csv(tmp_path / "ensemble.csv", [0.0, 0.5], {"E_mean": [1.0, 0.5], "E_stderr": [0.0, 0.1]})
    assert out.read_text(encoding="utf-8").splitlines() == ["t,E_mean,E_stderr", "0,1,0", "0.5,0.5,0.10000000000000001"]
