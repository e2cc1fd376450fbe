"""Invariant suites run by the `verify` command.

Every suite is hermetic: fixed seeds, small grids, no clock or file access.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional, Sequence

import numpy as np

from ..core.models import RunConfig
from ..numerics import grid as gr
from ..numerics.diagnostics import PathRecorder, energy_defect, mass
from ..numerics.dynamics import StepContext, full_step
from ..numerics.ensemble import integrate_path
from ..numerics.grid import Grid
from ..numerics.initial import initial_state
from ..numerics.mollifier import mollify, smoothing_constant
from ..numerics.noise import NoiseModel, hs_norm_sq, path_rng
from ..numerics.potentials import build_potentials

log = logging.getLogger(__name__)


@dataclass
class SuiteResult:
    name: str
    passed: bool
    details: Dict[str, Any] = field(default_factory=dict)


def verification_config(config: RunConfig, size: int = 16, **sections: Dict[str, Any]) -> RunConfig:
    """`config` moved onto a size x size grid, with per-section overrides."""
    data = config.model_dump()
    data["grid"].update(nx=size, ny=size)
    for section, values in sections.items():
        data[section].update(values)
    return RunConfig.model_validate(data)


def check_grid(config: RunConfig, size: int) -> SuiteResult:
    g = Grid(size, size, config.grid.lx, config.grid.ly)
    rng = np.random.default_rng(0)
    f = rng.standard_normal(g.scalar_shape)
    v = rng.standard_normal(g.vector_shape)
    adjoint_gap = abs(gr.inner(g, gr.gradient(g, f), v) + gr.inner(g, f, gr.divergence(g, v)))
    laplacian_integral = abs(gr.integrate(g, gr.laplacian_neumann(g, f)))
    scale = gr.norm(g, f) * gr.norm(g, v) / min(g.hx, g.hy)
    passed = adjoint_gap <= 1e-10 * max(scale, 1.0) and laplacian_integral <= 1e-9
    return SuiteResult("grid", passed, {"adjoint_gap": adjoint_gap, "laplacian_integral": laplacian_integral})


def check_potentials(config: RunConfig, size: int) -> SuiteResult:
    pot = build_potentials(config.potential)
    eps = config.scheme.eps if config.scheme.eps > 0 else 0.05
    r = np.linspace(-3.0, 3.0, 6001)
    floor_ok = bool(np.all(pot.bulk.primitive(r) >= -pot.floor - 1e-12)
                    and np.all(pot.boundary.primitive(r) >= -pot.floor - 1e-12))
    m = pot.bulk.level(eps)
    wide = np.linspace(-2.0 * m, 2.0 * m, 4001)
    inside = np.abs(wide) <= m
    agree = float(np.max(np.abs(pot.bulk.truncated(wide[inside], eps) - pot.bulk.value(wide[inside]))))
    slopes = np.abs(np.diff(pot.bulk.truncated(wide, eps))) / np.diff(wide)
    lipschitz = pot.bulk.lipschitz(eps)
    passed = floor_ok and agree <= 1e-9 * max(1.0, m**3) and float(np.max(slopes)) <= lipschitz * (1 + 1e-9)
    return SuiteResult("potentials", passed, {"floor": pot.floor, "inside_gap": agree, "lipschitz": lipschitz})


def check_mollifier(config: RunConfig, size: int) -> SuiteResult:
    g = Grid(size, size, config.grid.lx, config.grid.ly)
    eps = config.scheme.eps if config.scheme.eps > 0 else 2.0 * g.hx
    f = np.random.default_rng(1).standard_normal(g.scalar_shape)
    smoothed = mollify(g, f, eps)
    mean_gap = abs(gr.mean(g, smoothed) - gr.mean(g, f))
    norm_ratio = gr.norm(g, smoothed) / gr.norm(g, f)
    constant = smoothing_constant(g, eps)
    passed = mean_gap <= 1e-12 and norm_ratio <= 1.0 + 1e-12 and math.isfinite(constant)
    return SuiteResult("mollifier", passed, {"mean_gap": mean_gap, "norm_ratio": norm_ratio, "constant": constant})


def check_noise(config: RunConfig, size: int, samples: int = 32) -> SuiteResult:
    g = Grid(size, size, config.grid.lx, config.grid.ly)
    model = NoiseModel.from_spec(g, config.noise)
    rng = np.random.default_rng(2)
    worst_growth, worst_lipschitz = 0.0, 0.0
    for _ in range(samples):
        u1, p1, u2, p2 = (rng.standard_normal(g.vector_shape) * rng.uniform(0.1, 10.0) for _ in range(4))
        growth = hs_norm_sq(model, u1, p1) / (1.0 + gr.inner(g, u1, u1) + gr.inner(g, p1, p1))
        difference = NoiseModel(g, model.sigma, model.basis, model.alpha_u, model.alpha_phi, 0.0)
        dist = gr.inner(g, u1 - u2, u1 - u2) + gr.inner(g, p1 - p2, p1 - p2)
        lipschitz = hs_norm_sq(difference, u1 - u2, p1 - p2) / dist
        worst_growth = max(worst_growth, growth)
        worst_lipschitz = max(worst_lipschitz, lipschitz)
    passed = worst_growth <= model.growth_constant() * (1 + 1e-12) and worst_lipschitz <= model.lipschitz_constant() * (1 + 1e-12)
    return SuiteResult("noise", passed, {
        "growth_ratio": worst_growth, "growth_constant": model.growth_constant(),
        "lipschitz_ratio": worst_lipschitz, "lipschitz_constant": model.lipschitz_constant(),
    })


def _trajectory(config: RunConfig, steps: int, seed_index: int = 0):
    ctx = StepContext.from_config(config)
    rng = path_rng(config.ensemble.base_seed, seed_index)
    state = initial_state(ctx, config.initial)
    states = [state]
    for _ in range(steps):
        state = full_step(state, ctx, rng)
        states.append(state)
    return ctx, states


def check_cutoff_neutrality(config: RunConfig, size: int, steps: int = 20) -> SuiteResult:
    disabled = verification_config(config, size, cutoff={"radius": math.inf}, output={"steps": steps})
    large = verification_config(config, size, cutoff={"radius": 1e12}, output={"steps": steps})
    _, a = _trajectory(disabled, steps)
    _, b = _trajectory(large, steps)
    identical = all(
        np.array_equal(x.u, y.u) and np.array_equal(x.phi, y.phi) and np.array_equal(x.psi, y.psi)
        for x, y in zip(a, b)
    )
    return SuiteResult("cutoff", identical, {"steps": steps})


def check_energy_law(config: RunConfig, size: int, steps: int = 40) -> SuiteResult:
    cfg = verification_config(
        config, size,
        noise={"enabled": False},
        scheme={"dt": 1e-5},
        initial={"kind": "cosine", "amplitude": 0.1, "velocity": 0.0},
        cutoff={"radius": math.inf},
    )
    ctx = StepContext.from_config(cfg)
    recorder = PathRecorder(ctx, record_every=1)
    integrate_path(ctx, initial_state(ctx, cfg.initial), path_rng(0, 0), steps, recorder)
    path = recorder.finish()
    e0 = path.reports[0].E
    gap = abs(energy_defect(path.reports, cfg.scheme.dt))
    tol = 0.02 * max(abs(e0), 1.0)
    return SuiteResult("energy", gap <= tol, {"E0": e0, "E_end": path.reports[-1].E, "gap": gap, "tolerance": tol})


def check_mass(config: RunConfig, size: int, steps: int = 20) -> SuiteResult:
    cfg = verification_config(config, size, initial={"kind": "random_smooth", "amplitude": 0.3, "modes": 2, "seed": 7},
                              noise={"enabled": True})
    ctx, states = _trajectory(cfg, steps)
    masses = np.array([mass(ctx.grid, s.phi) for s in states])
    drift = float(np.max(np.abs(masses - masses[0])))
    return SuiteResult("mass", drift <= 1e-9, {"max_drift": drift})


SUITES: Dict[str, Callable[[RunConfig, int], SuiteResult]] = {
    "grid": check_grid,
    "potentials": check_potentials,
    "mollifier": check_mollifier,
    "noise": check_noise,
    "cutoff": check_cutoff_neutrality,
    "energy": check_energy_law,
    "mass": check_mass,
}


def run_suites(config: RunConfig, names: Optional[Sequence[str]] = None, size: int = 16) -> Dict[str, SuiteResult]:
    selected = list(SUITES) if not names else list(names)
    results = {}
    for name in selected:
        suite = SUITES[name]
        result = suite(config, size)
        level = logging.INFO if result.passed else logging.WARNING
        log.log(level, f"verify {name}: {'pass' if result.passed else 'FAIL'} {result.details}")
        results[name] = result
    return results
