"""Named initial-condition generators.

Every generator returns a State with psi = trace(phi), a divergence-free
velocity and mu, K evaluated from the initial phase.
"""

import logging
import math

import numpy as np

from ..core.exceptions import ParameterError
from ..core.models import InitialCondition
from . import grid as gr
from .dynamics import State, StepContext, derived_state, helmholtz_project
from .grid import Grid

log = logging.getLogger(__name__)


def _shear(g: Grid, amplitude: float) -> np.ndarray:
    _, y = g.mesh()
    u = g.zeros_vector()
    u[0] = amplitude * np.sin(2.0 * math.pi * y / g.ly)
    return u


def _cosine(g: Grid, ic: InitialCondition) -> np.ndarray:
    x, y = g.mesh()
    return ic.amplitude * np.cos(2.0 * math.pi * ic.mode * x / g.lx) * np.cos(math.pi * ic.y_mode * y / g.ly)


def _interface(g: Grid, ic: InitialCondition) -> np.ndarray:
    x, y = g.mesh()
    r = np.hypot(x - 0.5 * g.lx, y - 0.5 * g.ly)
    return np.tanh((ic.radius - r) / (math.sqrt(2.0) * ic.width))


def _random_smooth(g: Grid, ic: InitialCondition) -> np.ndarray:
    """Random combination of the lowest Neumann-compatible modes, scaled to max |phi| = amplitude."""
    rng = np.random.default_rng(ic.seed)
    x, y = g.mesh()
    phi = np.zeros(g.scalar_shape)
    for m in range(ic.modes + 1):
        for k in range(ic.modes + 1):
            if m == 0 and k == 0:
                continue
            a, b = rng.standard_normal(2) / (1.0 + m * m + k * k)
            profile = np.cos(math.pi * k * y / g.ly)
            phi += (a * np.cos(2.0 * math.pi * m * x / g.lx) + b * np.sin(2.0 * math.pi * m * x / g.lx)) * profile
    peak = float(np.max(np.abs(phi)))
    return phi * (ic.amplitude / peak) if peak > 0 else phi


def initial_phase(g: Grid, ic: InitialCondition) -> np.ndarray:
    if ic.kind in ("zero", "shear"):
        return g.zeros_scalar()
    if ic.kind == "cosine":
        return _cosine(g, ic)
    if ic.kind == "interface":
        return _interface(g, ic)
    if ic.kind == "random_smooth":
        return _random_smooth(g, ic)
    raise ParameterError(f"unknown initial condition '{ic.kind}'")


def initial_state(ctx: StepContext, ic: InitialCondition) -> State:
    g = ctx.grid
    phi = initial_phase(g, ic)
    u = _shear(g, ic.velocity)
    if ic.velocity:
        u = helmholtz_project(g, u, div_tol=ctx.scheme.div_tol)
    log.debug(f"Initial condition '{ic.kind}': mass={gr.mean(g, phi):.6g}, max|phi|={np.max(np.abs(phi)):.4g}")
    return derived_state(ctx, u, phi, gr.trace(g, phi))
