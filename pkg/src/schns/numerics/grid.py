"""Periodic channel grid and the discrete operators every other module builds on.

Layout:
    ScalarField    ndarray (nx, ny), cell centered, x along axis 0
    VectorField    ndarray (2, nx, ny), colocated components (ux, uy)
    BoundaryField  ndarray (2, nx), row 0 is the bottom wall y=0, row 1 the top wall y=ly

x is periodic. The walls are flat, so the outward normal is -e_y at the
bottom and +e_y at the top. The discrete inner product on D weights every cell
by hx*hy, the one on the walls weights every wall cell by hx.
"""

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from ..core.exceptions import GridShapeError, ParameterError
from ..core.models import GridSpec

log = logging.getLogger(__name__)

BOTTOM, TOP = 0, 1


@dataclass(frozen=True)
class Grid:
    """Rectangular channel [0, lx) x [0, ly] with nx * ny cells."""
    nx: int
    ny: int
    lx: float = 1.0
    ly: float = 1.0

    def __post_init__(self) -> None:
        if self.nx < 8 or self.ny < 8:
            raise GridShapeError(f"grid needs at least 8 cells per direction, got {self.nx}x{self.ny}")
        if not (self.lx > 0 and self.ly > 0):
            raise ParameterError(f"grid extents must be positive, got lx={self.lx}, ly={self.ly}")

    @classmethod
    def from_spec(cls, spec: GridSpec) -> "Grid":
        return cls(nx=spec.nx, ny=spec.ny, lx=spec.lx, ly=spec.ly)

    @property
    def hx(self) -> float:
        return self.lx / self.nx

    @property
    def hy(self) -> float:
        return self.ly / self.ny

    @property
    def cell_volume(self) -> float:
        return self.hx * self.hy

    @property
    def domain_measure(self) -> float:
        """|D|"""
        return self.lx * self.ly

    @property
    def boundary_measure(self) -> float:
        """|Gamma|, both walls together."""
        return 2.0 * self.lx

    @property
    def scalar_shape(self) -> tuple:
        return (self.nx, self.ny)

    @property
    def vector_shape(self) -> tuple:
        return (2, self.nx, self.ny)

    @property
    def boundary_shape(self) -> tuple:
        return (2, self.nx)

    def x_centers(self) -> np.ndarray:
        return (np.arange(self.nx) + 0.5) * self.hx

    def y_centers(self) -> np.ndarray:
        return (np.arange(self.ny) + 0.5) * self.hy

    def mesh(self) -> tuple:
        """Cell-center coordinates (X, Y), each of shape (nx, ny)."""
        return np.meshgrid(self.x_centers(), self.y_centers(), indexing="ij")

    def zeros_scalar(self) -> np.ndarray:
        return np.zeros(self.scalar_shape)

    def zeros_vector(self) -> np.ndarray:
        return np.zeros(self.vector_shape)

    def zeros_boundary(self) -> np.ndarray:
        return np.zeros(self.boundary_shape)


def _check(f: np.ndarray, shape: tuple, what: str) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape != shape:
        raise GridShapeError(f"{what} has shape {f.shape}, expected {shape}")
    return f


def check_scalar(g: Grid, f: np.ndarray) -> np.ndarray:
    return _check(f, g.scalar_shape, "scalar field")


def check_vector(g: Grid, v: np.ndarray) -> np.ndarray:
    return _check(v, g.vector_shape, "vector field")


def check_boundary(g: Grid, b: np.ndarray) -> np.ndarray:
    return _check(b, g.boundary_shape, "boundary field")

# --- Sparse operator assembly ---

# Cell weights of the quadratic through the three cells next to a wall, wall row first.
TRACE_STENCIL = (15.0 / 8.0, -10.0 / 8.0, 3.0 / 8.0)
NORMAL_STENCIL = (2.0, -3.0, 1.0)
# Quadrature weights of the first two y-faces off each wall; the rest weigh 1.
WALL_FACE_WEIGHTS = (15.0 / 8.0, 5.0 / 8.0)


class Operators(NamedTuple):
    """Sparse matrices acting on C-ordered flattened scalar fields (index i*ny + j).

    `trace` and `normal` return boundary fields flattened bottom wall first.
    """
    grad_x: sp.csr_matrix
    grad_y: sp.csr_matrix
    laplacian: sp.csr_matrix
    weighted_laplacian: sp.csr_matrix
    trace: sp.csr_matrix
    normal: sp.csr_matrix


def _periodic_first_difference(n: int, h: float) -> sp.csr_matrix:
    d = sp.diags([-np.ones(n - 1), np.ones(n - 1)], [-1, 1], shape=(n, n), format="lil")
    d[0, n - 1] = -1.0
    d[n - 1, 0] = 1.0
    return d.tocsr() / (2.0 * h)


def periodic_second_difference(n: int, h: float) -> sp.csr_matrix:
    d = sp.diags([np.ones(n - 1), -2.0 * np.ones(n), np.ones(n - 1)], [-1, 0, 1], shape=(n, n), format="lil")
    d[0, n - 1] = 1.0
    d[n - 1, 0] = 1.0
    return d.tocsr() / h**2


def wall_first_difference(n: int, h: float) -> sp.csr_matrix:
    """Central differences inside, second-order one-sided rows next to the walls."""
    d = sp.diags([-np.ones(n - 1), np.ones(n - 1)], [-1, 1], shape=(n, n), format="lil")
    d[0, :3] = [-3.0, 4.0, -1.0]
    d[n - 1, n - 3:] = [1.0, -4.0, 3.0]
    return d.tocsr() / (2.0 * h)


def neumann_second_difference(n: int, h: float) -> sp.csr_matrix:
    """Three-point second difference with even-reflection ghosts (zero flux through the walls)."""
    main = -2.0 * np.ones(n)
    main[0] = main[-1] = -1.0
    d = sp.diags([np.ones(n - 1), main, np.ones(n - 1)], [-1, 0, 1], shape=(n, n))
    return d.tocsr() / h**2


def wall_face_weights(n: int) -> np.ndarray:
    """Weights of the n - 1 interior y-faces. They sum to n, the channel height in cells."""
    if n < 6:
        raise GridShapeError(f"weighted wall faces need at least 6 cells in y, got {n}")
    weights = np.ones(n - 1)
    weights[:2] = WALL_FACE_WEIGHTS
    weights[-2:] = WALL_FACE_WEIGHTS[::-1]
    return weights


def weighted_second_difference(n: int, h: float) -> sp.csr_matrix:
    """-D^T diag(w) D with D the forward difference: zero flux through the walls, weighted wall faces."""
    d = sp.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n)) / h
    return (-(d.T @ sp.diags(wall_face_weights(n)) @ d)).tocsr()


def _wall_stencil(g: Grid, coefficients: tuple, scale: float = 1.0) -> sp.csr_matrix:
    """(2 nx) x (nx ny) matrix applying `coefficients` to the cells next to each wall, wall row first."""
    i = np.arange(g.nx)
    rows, cols, vals = [], [], []
    for k, c in enumerate(coefficients):
        rows += [i, g.nx + i]
        cols += [i * g.ny + k, i * g.ny + g.ny - 1 - k]
        vals += [np.full(g.nx, c * scale)] * 2
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(2 * g.nx, g.nx * g.ny)
    )


@lru_cache(maxsize=16)
def operators(g: Grid) -> Operators:
    ix, iy = sp.identity(g.nx, format="csr"), sp.identity(g.ny, format="csr")
    grad_x = sp.kron(_periodic_first_difference(g.nx, g.hx), iy, format="csr")
    grad_y = sp.kron(ix, wall_first_difference(g.ny, g.hy), format="csr")
    lap_x = sp.kron(periodic_second_difference(g.nx, g.hx), iy)
    laplacian = (lap_x + sp.kron(ix, neumann_second_difference(g.ny, g.hy))).tocsr()
    weighted = (lap_x + sp.kron(ix, weighted_second_difference(g.ny, g.hy))).tocsr()
    log.debug(f"Assembled grid operators for {g.nx}x{g.ny}")
    return Operators(
        grad_x=grad_x,
        grad_y=grad_y,
        laplacian=laplacian,
        weighted_laplacian=weighted,
        trace=_wall_stencil(g, TRACE_STENCIL),
        normal=_wall_stencil(g, NORMAL_STENCIL, 1.0 / g.hy),
    )

# --- Bulk operators ---

def laplacian_neumann(g: Grid, f: np.ndarray) -> np.ndarray:
    """5-point Laplacian, periodic in x, homogeneous Neumann in y. Returns +Delta f."""
    f = check_scalar(g, f)
    lap_x = (np.roll(f, -1, axis=0) - 2.0 * f + np.roll(f, 1, axis=0)) / g.hx**2
    padded = np.pad(f, ((0, 0), (1, 1)), mode="edge")
    lap_y = (padded[:, 2:] - 2.0 * f + padded[:, :-2]) / g.hy**2
    return lap_x + lap_y


def laplacian_weighted(g: Grid, f: np.ndarray) -> np.ndarray:
    """Zero-flux Laplacian with weighted wall faces, minus the variation of 1/2 sum_faces w |D f|^2."""
    f = check_scalar(g, f)
    return (operators(g).weighted_laplacian @ f.ravel()).reshape(g.scalar_shape)


def trace_adjoint(g: Grid, b: np.ndarray) -> np.ndarray:
    """T^T b: spreads wall values over the cells next to each wall with the trace weights."""
    b = check_boundary(g, b)
    return (operators(g).trace.T @ b.ravel()).reshape(g.scalar_shape)


def laplacian_wall(g: Grid, f: np.ndarray) -> np.ndarray:
    """Laplacian closed at the walls by `normal_derivative` through the trace weights.

    Exact for fields linear in y, and its integral over D is the wall integral
    of the normal derivative to rounding.
    """
    f = check_scalar(g, f)
    ops = operators(g)
    flat = f.ravel()
    out = ops.weighted_laplacian @ flat + ops.trace.T @ (ops.normal @ flat) / g.hy
    return out.reshape(g.scalar_shape)


def gradient(g: Grid, f: np.ndarray) -> np.ndarray:
    """Central differences, periodic in x, one-sided second order in the wall rows."""
    f = check_scalar(g, f)
    ops = operators(g)
    flat = f.ravel()
    return np.stack([(ops.grad_x @ flat).reshape(g.scalar_shape), (ops.grad_y @ flat).reshape(g.scalar_shape)])


def divergence(g: Grid, v: np.ndarray) -> np.ndarray:
    """Negative adjoint of `gradient` in the cell-volume inner product.

    The adjoint relation <gradient(f), v> = -<f, divergence(v)> is exact, with
    no wall flux, which encodes v.n = 0 on both walls.
    """
    v = check_vector(g, v)
    ops = operators(g)
    out = -(ops.grad_x.T @ v[0].ravel()) - (ops.grad_y.T @ v[1].ravel())
    return out.reshape(g.scalar_shape)


def projection_laplacian(g: Grid, f: np.ndarray) -> np.ndarray:
    """divergence(gradient(f)), the wide-stencil operator inverted by the Helmholtz projection."""
    return divergence(g, gradient(g, f))

# --- Wall operators ---

def boundary_laplacian(g: Grid, b: np.ndarray) -> np.ndarray:
    """Periodic three-point second difference along each wall."""
    b = check_boundary(g, b)
    return (np.roll(b, -1, axis=1) - 2.0 * b + np.roll(b, 1, axis=1)) / g.hx**2


def boundary_gradient(g: Grid, b: np.ndarray) -> np.ndarray:
    """Periodic central difference along each wall."""
    b = check_boundary(g, b)
    return (np.roll(b, -1, axis=1) - np.roll(b, 1, axis=1)) / (2.0 * g.hx)


def boundary_forward_difference(g: Grid, b: np.ndarray) -> np.ndarray:
    b = check_boundary(g, b)
    return (np.roll(b, -1, axis=1) - b) / g.hx


def _apply_wall_stencil(f: np.ndarray, coefficients: tuple) -> np.ndarray:
    bottom = sum(c * f[:, k] for k, c in enumerate(coefficients))
    top = sum(c * f[:, -1 - k] for k, c in enumerate(coefficients))
    return np.stack([bottom, top])


def normal_derivative(g: Grid, f: np.ndarray) -> np.ndarray:
    """Outward normal derivative from the quadratic through the three cells next to each wall."""
    f = check_scalar(g, f)
    if g.ny < 3:
        raise GridShapeError("normal_derivative needs at least 3 cells in y")
    return _apply_wall_stencil(f, NORMAL_STENCIL) / g.hy


def trace(g: Grid, f: np.ndarray) -> np.ndarray:
    """Value of the same quadratic on the wall faces."""
    f = check_scalar(g, f)
    if g.ny < 3:
        raise GridShapeError("trace needs at least 3 cells in y")
    return _apply_wall_stencil(f, TRACE_STENCIL)

# --- Quadrature ---

def integrate(g: Grid, f: np.ndarray) -> float:
    return float(np.sum(f) * g.cell_volume)


def integrate_boundary(g: Grid, b: np.ndarray) -> float:
    return float(np.sum(b) * g.hx)


def mean(g: Grid, f: np.ndarray) -> float:
    """Cell-volume weighted average over D."""
    f = check_scalar(g, f)
    return integrate(g, f) / g.domain_measure


def boundary_mean(g: Grid, b: np.ndarray) -> float:
    b = check_boundary(g, b)
    return integrate_boundary(g, b) / g.boundary_measure


def inner(g: Grid, a: np.ndarray, b: np.ndarray) -> float:
    """L2(D) inner product of two scalar or two vector fields."""
    return float(np.sum(a * b) * g.cell_volume)


def boundary_inner(g: Grid, a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sum(a * b) * g.hx)


def norm(g: Grid, f: np.ndarray) -> float:
    return math.sqrt(inner(g, f, f))


def boundary_norm(g: Grid, b: np.ndarray) -> float:
    return math.sqrt(boundary_inner(g, b, b))
