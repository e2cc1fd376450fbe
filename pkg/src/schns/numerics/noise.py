"""Truncated cylindrical Wiener process and the multiplicative noise intensity.

W = sum_k e_k beta_k over K orthonormal vector modes e_k. The intensity is
pointwise linear in (u, grad phi):

    h(u, grad phi) dW = sum_k sigma_k (a0 + alpha_u u + alpha_phi grad phi) * e_k dW_k

so the linear-growth and Lipschitz bounds on h hold with explicit
constants. Mode shapes are Fourier modes in x times polynomial profiles in y
that vanish on both walls, with both vector components equal, orthonormalized
in the cell-volume inner product.
"""

import logging
import math
from dataclasses import dataclass
from typing import List

import numpy as np

from ..core.exceptions import ParameterError
from ..core.models import NoiseSpec
from .grid import Grid, check_vector

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class NoiseIncrement:
    dw: np.ndarray
    dt: float


@dataclass(frozen=True, eq=False)
class NoiseModel:
    grid: Grid
    sigma: np.ndarray  # (K,)
    basis: np.ndarray  # (K, 2, nx, ny), orthonormal
    alpha_u: float
    alpha_phi: float
    additive: float = 0.0

    @property
    def n_modes(self) -> int:
        return int(self.sigma.shape[0])

    @property
    def variance_field(self) -> np.ndarray:
        """sum_k sigma_k^2 e_k^2, pointwise, shape (2, nx, ny)."""
        return np.einsum("k,kcij->cij", self.sigma**2, self.basis**2)

    @property
    def trace_sum(self) -> float:
        """sum_k sigma_k^2"""
        return float(np.sum(self.sigma**2))

    @property
    def is_silent(self) -> bool:
        return not np.any(self.sigma) or (self.alpha_u == 0 and self.alpha_phi == 0 and self.additive == 0)

    def basis_sup_sq(self) -> float:
        """max_k ||e_k||_inf^2"""
        return float(np.max(self.basis**2))

    def growth_constant(self) -> float:
        """Linear growth: hs_norm_sq(u, grad phi) <= C (1 + ||u||^2 + ||grad phi||^2)."""
        scale = self.trace_sum * self.basis_sup_sq()
        if self.additive == 0:
            return 2.0 * scale * max(self.alpha_u**2, self.alpha_phi**2)
        volume_term = 2.0 * self.additive**2 * self.grid.domain_measure
        return 3.0 * scale * max(volume_term, self.alpha_u**2, self.alpha_phi**2)

    def lipschitz_constant(self) -> float:
        """Lipschitz: ||h(u1, p1) - h(u2, p2)||_HS^2 <= C ||(u1 - u2, p1 - p2)||^2."""
        return 2.0 * self.trace_sum * self.basis_sup_sq() * max(self.alpha_u**2, self.alpha_phi**2)

    @classmethod
    def from_basis(cls, grid: Grid, basis: np.ndarray, sigma: np.ndarray, alpha_u: float, alpha_phi: float,
                   additive: float = 0.0) -> "NoiseModel":
        basis = np.asarray(basis, dtype=float)
        sigma = np.asarray(sigma, dtype=float)
        if basis.ndim != 4 or basis.shape[1:] != grid.vector_shape or basis.shape[0] != sigma.shape[0]:
            raise ParameterError(f"basis of shape {basis.shape} does not match {sigma.shape[0]} modes on the grid")
        norms = np.sqrt(np.sum(basis**2, axis=(1, 2, 3)) * grid.cell_volume)
        if not np.allclose(norms, 1.0, atol=1e-10):
            raise ParameterError(f"noise modes must have unit L2 norm, got {norms}")
        return cls(grid=grid, sigma=sigma, basis=basis, alpha_u=alpha_u, alpha_phi=alpha_phi, additive=additive)

    @classmethod
    def from_spec(cls, grid: Grid, spec: NoiseSpec) -> "NoiseModel":
        k = np.arange(1, spec.n_modes + 1, dtype=float)
        sigma0 = spec.sigma0 if spec.enabled else 0.0
        sigma = sigma0 * k ** (-spec.gamma)
        model = cls(
            grid=grid,
            sigma=sigma,
            basis=wall_vanishing_basis(grid, spec.n_modes),
            alpha_u=spec.alpha_u,
            alpha_phi=spec.alpha_phi,
            additive=spec.additive,
        )
        log.debug(f"Noise model with {spec.n_modes} modes, sum sigma^2={model.trace_sum:.4g}")
        return model


def wall_vanishing_basis(grid: Grid, n_modes: int) -> np.ndarray:
    """K orthonormal modes: {1, cos, sin}(2 pi m x / lx) times (y/ly)(1 - y/ly)(2y/ly - 1)^p."""
    x, y = grid.mesh()
    s = y / grid.ly
    candidates: List[np.ndarray] = []
    level = 0
    while len(candidates) < n_modes:
        for p in range(level + 1):
            m = level - p
            profile = s * (1.0 - s) * (2.0 * s - 1.0) ** p
            if m == 0:
                shapes = [np.ones_like(x)]
            else:
                shapes = [np.cos(2.0 * math.pi * m * x / grid.lx), np.sin(2.0 * math.pi * m * x / grid.lx)]
            candidates.extend(shape * profile for shape in shapes)
        level += 1
    candidates = candidates[:n_modes]
    weight = math.sqrt(grid.cell_volume)
    matrix = np.stack([np.stack([c, c]).ravel() * weight for c in candidates], axis=1)
    q, r = np.linalg.qr(matrix)
    q = q * np.sign(np.diag(r))
    return (q.T / weight).reshape((n_modes,) + grid.vector_shape)


def sample_increments(model: NoiseModel, dt: float, rng: np.random.Generator) -> NoiseIncrement:
    """K independent N(0, dt) draws."""
    if dt < 0:
        raise ParameterError(f"noise increment needs dt >= 0, got {dt}")
    return NoiseIncrement(dw=rng.standard_normal(model.n_modes) * math.sqrt(dt), dt=dt)


def _intensity_weight(model: NoiseModel, u: np.ndarray, gradphi: np.ndarray) -> np.ndarray:
    u = check_vector(model.grid, u)
    gradphi = check_vector(model.grid, gradphi)
    return model.additive + model.alpha_u * u + model.alpha_phi * gradphi


def apply_h(model: NoiseModel, u: np.ndarray, gradphi: np.ndarray, inc: NoiseIncrement) -> np.ndarray:
    """sum_k sigma_k (a0 + alpha_u u + alpha_phi gradphi) * e_k dW_k"""
    if inc.dw.shape != (model.n_modes,):
        raise ParameterError(f"increment has {inc.dw.shape[0]} modes, model has {model.n_modes}")
    forcing = np.einsum("k,kcij->cij", model.sigma * inc.dw, model.basis)
    return _intensity_weight(model, u, gradphi) * forcing


def hs_norm_sq(model: NoiseModel, u: np.ndarray, gradphi: np.ndarray) -> float:
    """sum_k ||h_k(u, grad phi)||^2_L2"""
    w = _intensity_weight(model, u, gradphi)
    return float(np.sum(w**2 * model.variance_field) * model.grid.cell_volume)


def mode_pairings(model: NoiseModel, u: np.ndarray, gradphi: np.ndarray, v: np.ndarray) -> np.ndarray:
    """(w * e_k, v) for every mode, w being the intensity weight."""
    w = _intensity_weight(model, u, gradphi)
    return np.einsum("cij,kcij->k", w * v, model.basis) * model.grid.cell_volume


def quadratic_variation(model: NoiseModel, u: np.ndarray, gradphi: np.ndarray, v: np.ndarray) -> float:
    """sum_k sigma_k^2 (h_k, v)^2, the rate of the quadratic variation of <int h dW, v>."""
    pairings = mode_pairings(model, u, gradphi, v)
    return float(np.sum(model.sigma**2 * pairings**2))


def path_rng(base_seed: int, index: int) -> np.random.Generator:
    """Independent PCG64 stream for path `index`, split from the base seed."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(base_seed, spawn_key=(index,))))
