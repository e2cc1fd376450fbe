"""Time stepper for the regularized stochastic Cahn-Hilliard-Navier-Stokes system.

One full step is a Lie splitting:

1. Cahn-Hilliard substep with dynamic boundary condition, implicit in every
   linear term, explicit in f_eps, g_eps and the cut-off transport.
2. Momentum forcing: capillary force mu grad(J phi) and skew-symmetric
   convection in the bulk, K(psi) d_x(J psi) as generalized Navier wall data.
3. Stokes substep with the Robin wall closure, then Helmholtz projection.
4. Euler-Maruyama noise increment h(u, grad phi) dW, then projection again.

The boundary phase is the quadratic wall trace of phi at every time level, and
K(psi) is the multiplier of that constraint in the Cahn-Hilliard solve. mu and
K together are the exact variation of the discrete free energy, so the energy
law holds at the discrete level.
"""

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Dict, NamedTuple, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from ..core.exceptions import DivergenceError, LinearSolveError, ParameterError, StateError
from ..core.models import CutoffParams, RunConfig, SchemeParams
from . import grid as gr
from .grid import BOTTOM, TOP, Grid
from .mollifier import mollify, mollify_boundary
from .noise import (
    NoiseIncrement,
    NoiseModel,
    apply_h,
    hs_norm_sq,
    quadratic_variation,
    sample_increments,
)
from .potentials import Potentials, boundary_force, build_potentials, bulk_force
from .regularization import psi_R, v1_norm
from .solvers import FactorizedSystem, conjugate_gradient, jacobi_preconditioner

log = logging.getLogger(__name__)

# --- Domain types ---

@dataclass(frozen=True, eq=False)
class State:
    """Fields at one time level. mu, kpsi and the noise terms are derived by the step that produced them."""
    u: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    mu: np.ndarray
    kpsi: np.ndarray
    t: float = 0.0
    phi_rate: Optional[np.ndarray] = None
    hs_norm_sq: float = 0.0
    qv_velocity: float = 0.0
    qv_phase: float = 0.0
    cutoff: float = 1.0

    def fields(self) -> Dict[str, np.ndarray]:
        rate = self.phi_rate if self.phi_rate is not None else np.zeros_like(self.phi)
        return {"u": self.u, "phi": self.phi, "psi": self.psi, "mu": self.mu, "kpsi": self.kpsi, "phi_rate": rate}


@dataclass(frozen=True, eq=False)
class StepContext:
    """Immutable data shared by every step of every path of one run."""
    grid: Grid
    scheme: SchemeParams
    potentials: Potentials
    noise: NoiseModel
    cutoff: CutoffParams = field(default_factory=CutoffParams)

    @classmethod
    def from_config(cls, config: RunConfig) -> "StepContext":
        grid = Grid.from_spec(config.grid)
        return cls(
            grid=grid,
            scheme=config.scheme,
            potentials=build_potentials(config.potential),
            noise=NoiseModel.from_spec(grid, config.noise),
            cutoff=config.cutoff,
        )


class ChemicalUpdate(NamedTuple):
    phi: np.ndarray
    psi: np.ndarray
    mu: np.ndarray
    kpsi: np.ndarray

# --- Helmholtz-Leray projection ---

@lru_cache(maxsize=8)
def _projection_system(g: Grid) -> Tuple[FactorizedSystem, np.ndarray]:
    """Factorization of G^T G with its kernel removed by pinning one cell per kernel vector.

    ker G is spanned by the constants and, for even nx, the x-checkerboard.
    The right-hand side G^T v is orthogonal to both, so the pinned equations
    hold automatically.
    """
    ops = gr.operators(g)
    matrix = (ops.grad_x.T @ ops.grad_x + ops.grad_y.T @ ops.grad_y).tocsr()
    pinned = [0, g.ny] if g.nx % 2 == 0 else [0]
    free = np.setdiff1d(np.arange(g.nx * g.ny), pinned)
    reduced = matrix[free][:, free]
    return FactorizedSystem(reduced, label="projection"), free


def helmholtz_project(g: Grid, v: np.ndarray, div_tol: float = 1e-10, max_passes: int = 4) -> np.ndarray:
    """v - grad q with G^T G q = G^T v: the orthogonal projection onto discretely divergence-free fields."""
    out = np.array(gr.check_vector(g, v), dtype=float)
    system, free = _projection_system(g)
    residual = math.inf
    for _ in range(max_passes):
        div = gr.divergence(g, out)
        residual = float(np.max(np.abs(div)))
        if residual <= div_tol:
            return out
        q = np.zeros(g.nx * g.ny)
        q[free] = system.solve(-div.ravel()[free])
        out = out - gr.gradient(g, q.reshape(g.scalar_shape))
    div = gr.divergence(g, out)
    residual = float(np.max(np.abs(div)))
    if residual <= div_tol:
        return out
    raise LinearSolveError("projection left a divergence above tolerance", residual=residual, iterations=max_passes)

# --- Bilinear forms ---

def convective_form(g: Grid, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """b0(u, v) = 1/2 [(u . grad) v + div(u v)], skew so that <b0(u, v), v> = 0 for every u."""
    out = np.empty_like(v)
    for c in range(2):
        grad_c = gr.gradient(g, v[c])
        out[c] = 0.5 * (u[0] * grad_c[0] + u[1] * grad_c[1] + gr.divergence(g, u * v[c]))
    return out


def bilinear_b0(g: Grid, u: np.ndarray, v: np.ndarray, w: np.ndarray) -> float:
    return gr.inner(g, convective_form(g, u, v), w)


def bilinear_b1(g: Grid, mu: np.ndarray, phi: np.ndarray, w: np.ndarray) -> float:
    """int mu grad(phi) . w"""
    return gr.inner(g, mu * gr.gradient(g, phi), w)


def bilinear_b2(g: Grid, u: np.ndarray, phi: np.ndarray, rho: np.ndarray) -> float:
    """int (u . grad phi) rho"""
    return gr.inner(g, np.sum(u * gr.gradient(g, phi), axis=0), rho)


def bilinear_bGamma(g: Grid, u_tau: np.ndarray, psi: np.ndarray, eta: np.ndarray) -> float:
    """int_Gamma u_tau d_x(psi) eta, both walls."""
    return gr.boundary_inner(g, u_tau * gr.boundary_gradient(g, psi), eta)


def slip_velocity(g: Grid, u: np.ndarray) -> np.ndarray:
    """u_tau, the trace of the tangential velocity on both walls."""
    return gr.trace(g, u[0])

# --- Stokes substep ---

def _robin_factor(g: Grid, viscosity: float) -> float:
    """2 nu0 / ((hy + 2 nu0) hy): wall-row coefficient of the Robin closure."""
    return 2.0 * viscosity / ((g.hy + 2.0 * viscosity) * g.hy)


def _wall_rows(g: Grid) -> np.ndarray:
    mask = np.zeros(g.scalar_shape)
    mask[:, 0] = mask[:, -1] = 1.0
    return mask.ravel()


@lru_cache(maxsize=16)
def stokes_operators(g: Grid, viscosity: float) -> Tuple[sp.csr_matrix, sp.csr_matrix]:
    """Viscous operators (S_x, S_y): Robin closure for u_x, homogeneous Dirichlet for u_y."""
    base = viscosity * gr.operators(g).laplacian
    walls = _wall_rows(g)
    s_x = (base - sp.diags(_robin_factor(g, viscosity) * walls)).tocsr()
    s_y = (base - sp.diags(2.0 * viscosity / g.hy**2 * walls)).tocsr()
    return s_x, s_y


@lru_cache(maxsize=16)
def _stokes_matrices(g: Grid, dt: float, theta: float, viscosity: float) -> Tuple[Any, ...]:
    identity = sp.identity(g.nx * g.ny, format="csr")
    out = []
    for s in stokes_operators(g, viscosity):
        a = (identity - theta * dt * s).tocsr()
        out.append((s, a, jacobi_preconditioner(a)))
    return tuple(out)


def stokes_substep(g: Grid, u: np.ndarray, body_force: np.ndarray, wall_rhs: np.ndarray, dt: float,
                   theta: float = 1.0, viscosity: float = 1.0, div_tol: float = 1e-10) -> np.ndarray:
    """
    Solves u' = u + dt (nu0 Laplace(u'_theta) + body_force) with u'_theta = theta u' + (1 - theta) u,
    the Robin condition -+nu0 d_y u_x + u_x = wall_rhs on the bottom/top wall and u_y = 0,
    then projects onto divergence-free fields.
    """
    if dt <= 0:
        raise ParameterError(f"Stokes substep needs dt > 0, got {dt}")
    u = gr.check_vector(g, u)
    body_force = gr.check_vector(g, body_force)
    wall_rhs = gr.check_boundary(g, wall_rhs)
    load = np.zeros(g.scalar_shape)
    load[:, 0] = _robin_factor(g, viscosity) * wall_rhs[BOTTOM]
    load[:, -1] = _robin_factor(g, viscosity) * wall_rhs[TOP]
    loads = (load.ravel(), np.zeros(g.nx * g.ny))

    out = np.empty_like(u)
    for c, (s, a, precond) in enumerate(_stokes_matrices(g, dt, theta, viscosity)):
        current = u[c].ravel()
        rhs = current + dt * (body_force[c].ravel() + loads[c])
        if theta < 1.0:
            rhs = rhs + (1.0 - theta) * dt * (s @ current)
        solution, _ = conjugate_gradient(a, rhs, x0=current.copy(), rtol=1e-10, preconditioner=precond,
                                         label=f"stokes[{'xy'[c]}]")
        out[c] = solution.reshape(g.scalar_shape)
    return helmholtz_project(g, out, div_tol=div_tol)

# --- Cahn-Hilliard substep ---

@lru_cache(maxsize=16)
def _chemical_system(g: Grid, dt: float, delta: float, interface: float) -> FactorizedSystem:
    """Block system in (phi', mu, K) with psi' = trace(phi') built in; K enters as the multiplier of that constraint."""
    n, nb = g.nx * g.ny, 2 * g.nx
    ops = gr.operators(g)
    ix = gr.periodic_second_difference(g.nx, g.hx)
    wall_stiffness = sp.identity(nb, format="csr") - sp.block_diag([ix, ix])
    spread = ops.trace.T / g.hy

    matrix = sp.bmat([
        [sp.identity(n), -dt * ops.laplacian, None],
        [interface * ops.weighted_laplacian - (delta / dt) * sp.identity(n) - spread @ wall_stiffness @ ops.trace,
         sp.identity(n), spread],
        [ops.trace, None, dt * sp.identity(nb)],
    ], format="csc")
    log.debug(f"Assembled Cahn-Hilliard system of size {matrix.shape[0]} (dt={dt}, delta={delta})")
    return FactorizedSystem(matrix, label="cahn-hilliard")


def boundary_potential(g: Grid, phi: np.ndarray, psi: np.ndarray, potentials: Potentials,
                       scheme: SchemeParams, g_psi: Optional[np.ndarray] = None) -> np.ndarray:
    """K(psi) = -Laplace_tau psi + nu1 d_n phi + psi + g_eps(psi); g_eps may be evaluated at an earlier level."""
    if g_psi is None:
        g_psi = boundary_force(potentials, psi, scheme.eps)
    return -gr.boundary_laplacian(g, psi) + scheme.interface * gr.normal_derivative(g, phi) + psi + g_psi


def chemical_potential(g: Grid, phi: np.ndarray, potentials: Potentials, scheme: SchemeParams) -> np.ndarray:
    """mu = -nu1 Laplace(phi) + alpha f_eps(phi) with the wall-closed Laplacian, without the parabolic term."""
    return -scheme.interface * gr.laplacian_wall(g, phi) + scheme.alpha * bulk_force(potentials, phi, scheme.eps)


def check_trace(g: Grid, phi: np.ndarray, psi: np.ndarray, tol: float) -> float:
    gap = float(np.max(np.abs(psi - gr.trace(g, phi))))
    if not gap <= tol:
        raise StateError(f"boundary phase departs from trace(phi) by {gap:.3e} > {tol:.3e}")
    return gap


def ch_substep(g: Grid, phi: np.ndarray, psi: np.ndarray, u_transport: np.ndarray, params: SchemeParams,
               potentials: Potentials, cutoff: float = 1.0, source: Optional[np.ndarray] = None,
               wall_source: Optional[np.ndarray] = None) -> ChemicalUpdate:
    """One step of the Cahn-Hilliard equation with dynamic boundary condition.

    (phi' - phi)/dt + cutoff u . grad(J phi)   = Laplace_N mu + source
    (psi' - psi)/dt + cutoff u_tau d_x(J psi) = -K + wall_source,  psi' = trace(phi')
    mu = -nu1 W phi' + delta (phi' - phi)/dt + alpha f_eps(phi)
         + T^T (psi' - Laplace_tau psi' + g_eps(psi) - K) / hy

    W is the zero-flux Laplacian with weighted wall faces and T the trace.
    Pairing mu with d_t phi and K with d_t psi gives exactly the variation of
    the discrete free energy, and K agrees with `boundary_potential` of the
    new state up to the truncation error of the wall stencils.
    """
    phi = gr.check_scalar(g, phi)
    psi = gr.check_boundary(g, psi)
    u_transport = gr.check_vector(g, u_transport)
    check_trace(g, phi, psi, params.trace_tol)
    dt, eps = params.dt, params.eps

    smooth_phi = mollify(g, phi, eps) if eps > 0 else phi
    smooth_psi = mollify_boundary(g, psi, eps) if eps > 0 else psi
    bulk_rhs = phi - dt * cutoff * np.sum(u_transport * gr.gradient(g, smooth_phi), axis=0)
    wall_rhs = psi - dt * cutoff * slip_velocity(g, u_transport) * gr.boundary_gradient(g, smooth_psi)
    if source is not None:
        bulk_rhs = bulk_rhs + dt * gr.check_scalar(g, source)
    if wall_source is not None:
        wall_rhs = wall_rhs + dt * gr.check_boundary(g, wall_source)
    g_psi = boundary_force(potentials, psi, eps)

    rhs = np.concatenate([
        bulk_rhs.ravel(),
        (params.alpha * bulk_force(potentials, phi, eps) - (params.delta / dt) * phi
         + gr.trace_adjoint(g, g_psi) / g.hy).ravel(),
        wall_rhs.ravel(),
    ])
    solution = _chemical_system(g, dt, params.delta, params.interface).solve(rhs)
    n = g.nx * g.ny
    new_phi = solution[:n].reshape(g.scalar_shape)
    mu = solution[n:2 * n].reshape(g.scalar_shape)
    kpsi = solution[2 * n:].reshape(g.boundary_shape)
    return ChemicalUpdate(new_phi, gr.trace(g, new_phi), mu, kpsi)

# --- Full step ---

def derived_state(ctx: StepContext, u: np.ndarray, phi: np.ndarray, psi: np.ndarray, t: float = 0.0) -> State:
    """State whose mu and K are evaluated from (phi, psi) directly, used for initial data."""
    g, scheme = ctx.grid, ctx.scheme
    return State(
        u=u,
        phi=phi,
        psi=psi,
        mu=chemical_potential(g, phi, ctx.potentials, scheme),
        kpsi=boundary_potential(g, phi, psi, ctx.potentials, scheme),
        t=t,
        phi_rate=np.zeros_like(phi),
    )


def _guard(ctx: StepContext, state: State) -> None:
    g = ctx.grid
    norms = {
        "u": gr.norm(g, state.u),
        "phi": gr.norm(g, state.phi),
        "mu": gr.norm(g, state.mu),
        "psi": gr.boundary_norm(g, state.psi),
        "kpsi": gr.boundary_norm(g, state.kpsi),
    }
    bad = {k: v for k, v in norms.items() if not (math.isfinite(v) and v <= ctx.scheme.blowup_guard)}
    if bad:
        diagnostics = {"t": state.t, "norms": norms, "cutoff": state.cutoff, "hs_norm_sq": state.hs_norm_sq}
        log.warning(f"Blow-up at t={state.t:.6g}: {bad}")
        raise DivergenceError(f"norm blow-up at t={state.t:.6g} in {sorted(bad)}", diagnostics=diagnostics)


def full_step(state: State, ctx: StepContext, rng: Optional[np.random.Generator] = None,
              increment: Optional[NoiseIncrement] = None) -> State:
    """Advances the state by one time step; a recorded increment replays the step exactly."""
    g, scheme, pot = ctx.grid, ctx.scheme, ctx.potentials
    if increment is None:
        if rng is None:
            raise ParameterError("full_step needs an rng or a recorded noise increment")
        increment = sample_increments(ctx.noise, scheme.dt, rng)
    u, phi, psi = state.u, state.phi, state.psi
    eps = scheme.eps

    cutoff = psi_R(ctx.cutoff, gr.norm(g, u), v1_norm(g, phi, psi))
    chem = ch_substep(g, phi, psi, u, scheme, pot, cutoff=cutoff)

    smooth_u = mollify(g, u, eps) if eps > 0 else u
    smooth_phi = mollify(g, phi, eps) if eps > 0 else phi
    smooth_psi = mollify_boundary(g, psi, eps) if eps > 0 else psi
    body = cutoff * (-convective_form(g, u, smooth_u) + chem.mu * gr.gradient(g, smooth_phi))
    wall_rhs = cutoff * chem.kpsi * gr.boundary_gradient(g, smooth_psi)
    new_u = stokes_substep(g, u, body, wall_rhs, scheme.dt, scheme.theta, scheme.viscosity, scheme.div_tol)

    grad_phi = gr.gradient(g, phi)
    kick = apply_h(ctx.noise, u, grad_phi, increment)
    if np.any(kick):
        new_u = helmholtz_project(g, new_u + kick, div_tol=scheme.div_tol)

    new_state = State(
        u=new_u,
        phi=chem.phi,
        psi=chem.psi,
        mu=chem.mu,
        kpsi=chem.kpsi,
        t=state.t + scheme.dt,
        phi_rate=(chem.phi - phi) / scheme.dt,
        hs_norm_sq=hs_norm_sq(ctx.noise, u, grad_phi),
        qv_velocity=quadratic_variation(ctx.noise, u, grad_phi, u),
        qv_phase=quadratic_variation(ctx.noise, u, grad_phi, grad_phi),
        cutoff=cutoff,
    )
    _guard(ctx, new_state)
    return new_state
