"""Smooth cut-off in front of the nonlinear terms and the stopping-time detector."""

import logging
import math
from typing import Optional, Sequence, Tuple

import numpy as np

from ..core.exceptions import DataError, ParameterError
from ..core.models import CutoffParams
from .grid import Grid, boundary_forward_difference, boundary_inner, gradient, inner

log = logging.getLogger(__name__)

END: Optional[int] = None


def _q(t: float) -> float:
    return math.exp(-1.0 / t) if t > 0 else 0.0


def psi_bar(params: CutoffParams, x: float) -> float:
    """1 on [0, R), 0 on [2R, inf), C-infinity and nonincreasing in between."""
    if x < 0 or math.isnan(x):
        raise ParameterError(f"cut-off argument must be a nonnegative norm, got {x}")
    radius = params.radius
    if x < radius:
        return 1.0
    if x >= 2.0 * radius:
        return 0.0
    up = _q((2.0 * radius - x) / radius)
    down = _q((x - radius) / radius)
    return up / (up + down)


def psi_R(params: CutoffParams, u_norm: float, v1_norm: float) -> float:
    """Psi_R = psi_bar(||u||) * psi_bar(||(phi, psi)||_V1)."""
    return psi_bar(params, u_norm) * psi_bar(params, v1_norm)


def profile_lipschitz_constant(samples: int = 20001) -> float:
    """max |d psi_bar / dx| * R, the same for every R."""
    unit = CutoffParams(radius=1.0)
    x = np.linspace(1.0, 2.0, samples)
    values = np.array([psi_bar(unit, float(v)) for v in x])
    return float(np.max(np.abs(np.diff(values)) / np.diff(x)))


def v1_norm(g: Grid, phi: np.ndarray, psi: np.ndarray) -> float:
    """(||phi||^2 + ||grad phi||^2 + ||psi||^2_Gamma + ||d_x psi||^2_Gamma)^(1/2)"""
    grad = gradient(g, phi)
    dpsi = boundary_forward_difference(g, psi)
    total = inner(g, phi, phi) + inner(g, grad, grad) + boundary_inner(g, psi, psi) + boundary_inner(g, dpsi, dpsi)
    return math.sqrt(total)


def monitored_norm(u_norm: float, v1: float, monitor: str) -> float:
    if monitor == "combined":
        return math.hypot(u_norm, v1)
    if monitor == "either":
        return max(u_norm, v1)
    if monitor == "velocity":
        return u_norm
    raise ParameterError(f"unknown stopping-time monitor '{monitor}'")


def stopping_time_index(traj: Sequence[Tuple[float, float]], radius: float, monitor: str = "combined") -> Optional[int]:
    """First index whose monitored norm reaches 2R, END (None) if the trajectory stays inside."""
    if len(traj) == 0:
        raise DataError("stopping-time detector needs a nonempty trajectory")
    for index, (u_norm, v1) in enumerate(traj):
        if math.isnan(u_norm) or math.isnan(v1):
            raise DataError(f"NaN norm at trajectory index {index}")
        if monitored_norm(u_norm, v1, monitor) >= 2.0 * radius:
            log.debug(f"Stopping time reached at index {index} (monitor={monitor}, R={radius})")
            return index
    return END
