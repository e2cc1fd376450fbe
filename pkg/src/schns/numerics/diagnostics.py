"""Energy, dissipation and mass functionals, the supermartingale process and path regularity.

The discrete free energy is

    E = 1/2 ||u||^2 + nu1/2 ||grad_h phi||^2 + 1/2 ||psi||_Gamma^2 + 1/2 ||D_x psi||_Gamma^2
        + alpha int F_eps(phi) + int_Gamma G_eps(psi)

where ||grad_h phi||^2 is the face-difference Dirichlet form with weighted
y-faces next to the walls and psi is the quadratic wall trace of phi. The
dynamics is the (semi-)implicit gradient flow of exactly this functional, so
the dissipation below is what the step removes.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from ..core.exceptions import DataError, ParameterError
from ..core.models import SchemeParams
from . import grid as gr
from .grid import Grid
from .potentials import Potentials, boundary_energy_density, boundary_force, bulk_energy_density, bulk_force
from .regularization import END, stopping_time_index, v1_norm

log = logging.getLogger(__name__)

# --- Energy and dissipation ---

class DissipationReport(NamedTuple):
    viscous: float
    slip: float
    chemical: float
    boundary: float
    parabolic: float

    @property
    def total(self) -> float:
        return self.viscous + self.slip + self.chemical + self.boundary + self.parabolic


@dataclass(frozen=True)
class EnergyReport:
    """Components of the free energy at one time, with the dissipation of the step that produced it."""
    E: float
    kinetic: float
    gradient_bulk: float
    boundary_l2: float
    boundary_grad: float
    bulk_potential: float
    boundary_potential: float
    D: float
    mass: float
    t: float
    dissipation: DissipationReport = field(default_factory=lambda: DissipationReport(0.0, 0.0, 0.0, 0.0, 0.0))

    def components(self) -> Tuple[float, ...]:
        return (self.kinetic, self.gradient_bulk, self.boundary_l2, self.boundary_grad,
                self.bulk_potential, self.boundary_potential)


def _face_energy(g: Grid, f: np.ndarray) -> float:
    """Sum over interior faces of squared differences: periodic in x, no wall faces in y."""
    dx = (np.roll(f, -1, axis=-2) - f) / g.hx
    dy = np.diff(f, axis=-1) / g.hy
    return float((np.sum(dx**2) + np.sum(dy**2)) * g.cell_volume)


def dirichlet_form(g: Grid, phi: np.ndarray) -> float:
    """||grad_h phi||^2 with the wall-face weights of `laplacian_weighted`, which is minus its half-variation."""
    dx = (np.roll(phi, -1, axis=0) - phi) / g.hx
    dy = np.diff(phi, axis=1) / g.hy
    weighted = np.sum(dx**2) + np.sum(gr.wall_face_weights(g.ny) * dy**2)
    return float(weighted * g.cell_volume)


def dissipation(g: Grid, u: np.ndarray, mu: np.ndarray, kpsi: np.ndarray, phi_rate: Optional[np.ndarray],
                scheme: SchemeParams) -> DissipationReport:
    """nu0 ||grad u||^2 + ||u_slip||_Gamma^2 + ||grad mu||^2 + ||K||_Gamma^2 + delta ||d_t phi||^2"""
    nu0 = scheme.viscosity
    rows = np.stack([u[:, :, 0], u[:, :, -1]], axis=1)  # (2 components, 2 walls, nx)
    slip = 2.0 * nu0 * rows[0] / (g.hy + 2.0 * nu0)
    wall_shear = (rows[0] - slip) ** 2 + rows[1] ** 2
    viscous = nu0 * (_face_energy(g, u) + float(np.sum(wall_shear) * g.hx * 2.0 / g.hy))
    rate = phi_rate if phi_rate is not None else np.zeros_like(mu)
    return DissipationReport(
        viscous=viscous,
        slip=gr.boundary_inner(g, slip, slip),
        chemical=_face_energy(g, mu),
        boundary=gr.boundary_inner(g, kpsi, kpsi),
        parabolic=scheme.delta * gr.inner(g, rate, rate),
    )


def mass(g: Grid, phi: np.ndarray) -> float:
    """Mean phase <phi>, fixed by the Cahn-Hilliard step up to transport."""
    return gr.mean(g, phi)


def energy(state, potentials: Potentials, grid: Grid, scheme: Optional[SchemeParams] = None) -> EnergyReport:
    """Free energy, its components, dissipation and mass of a dynamics State."""
    scheme = scheme or SchemeParams()
    g = grid
    u, phi, psi = state.u, state.phi, state.psi
    dpsi = gr.boundary_forward_difference(g, psi)
    parts = dict(
        kinetic=0.5 * gr.inner(g, u, u),
        gradient_bulk=0.5 * scheme.interface * dirichlet_form(g, phi),
        boundary_l2=0.5 * gr.boundary_inner(g, psi, psi),
        boundary_grad=0.5 * gr.boundary_inner(g, dpsi, dpsi),
        bulk_potential=scheme.alpha * gr.integrate(g, bulk_energy_density(potentials, phi, scheme.eps)),
        boundary_potential=gr.integrate_boundary(g, boundary_energy_density(potentials, psi, scheme.eps)),
    )
    report = dissipation(g, u, state.mu, state.kpsi, state.phi_rate, scheme)
    return EnergyReport(
        E=sum(parts.values()),
        D=report.total,
        mass=mass(g, phi),
        t=state.t,
        dissipation=report,
        **parts,
    )


def energy_shift(potentials: Potentials, grid: Grid, scheme: Optional[SchemeParams] = None) -> float:
    """floor * (alpha |D| + |Gamma|), which makes E + shift nonnegative."""
    alpha = (scheme or SchemeParams()).alpha
    return potentials.floor * (alpha * grid.domain_measure + grid.boundary_measure)


def energy_defect(reports: Sequence[EnergyReport], dt: float) -> float:
    """
    E_N + sum_k dt (D_k + D_k+1)/2 - E_0 over the reports of consecutive time levels.

    The trapezoidal sum integrates the dissipation rate to second order, so
    what remains is the first-order defect of the time step itself.
    """
    if len(reports) < 2:
        raise DataError(f"energy defect needs at least two time levels, got {len(reports)}")
    d = np.array([r.D for r in reports])
    return float(reports[-1].E - reports[0].E + 0.5 * dt * np.sum(d[1:] + d[:-1]))


def v2_norm_sq(g: Grid, phi: np.ndarray, psi: np.ndarray) -> float:
    """||Laplace phi||^2 + ||Laplace_tau psi||^2_Gamma + ||phi||^2 + ||psi||^2_Gamma"""
    lap = gr.laplacian_wall(g, phi)
    lap_tau = gr.boundary_laplacian(g, psi)
    return gr.inner(g, lap, lap) + gr.boundary_inner(g, lap_tau, lap_tau) + gr.inner(g, phi, phi) + gr.boundary_inner(g, psi, psi)


def mean_mu_identity(g: Grid, previous, current, potentials: Potentials, scheme: SchemeParams) -> Tuple[float, float]:
    """
    Both sides of the mean chemical potential identity across one step:

        <mu> = alpha <f_eps(phi_n)> - |Gamma|/|D| (<K> - <psi_n+1> - <g_eps(psi_n)>)_Gamma + delta <d_t phi>

    It follows from integrating the chemical potential equation: the weighted
    Laplacian integrates to zero and the trace adjoint to the wall integral.
    """
    ratio = g.boundary_measure / g.domain_measure
    rate = current.phi_rate if current.phi_rate is not None else np.zeros_like(current.phi)
    lhs = gr.mean(g, current.mu)
    rhs = (
        scheme.alpha * gr.mean(g, bulk_force(potentials, previous.phi, scheme.eps))
        - ratio * (
            gr.boundary_mean(g, current.kpsi)
            - gr.boundary_mean(g, current.psi)
            - gr.boundary_mean(g, boundary_force(potentials, previous.psi, scheme.eps))
        )
        + scheme.delta * gr.mean(g, rate)
    )
    return lhs, rhs

# --- Dual-norm proxy ---

def dual_test_fields(g: Grid, max_mode: int = 3) -> np.ndarray:
    """Divergence-free fields curl(s) with stream functions {cos, sin}(2 pi m x) sin^2(pi y), m = 0..max_mode."""
    x, y = g.mesh()
    kx, ky = 2.0 * math.pi / g.lx, math.pi / g.ly
    bump, dbump = np.sin(ky * y) ** 2, ky * np.sin(2.0 * ky * y)
    fields = []
    for m in range(max_mode + 1):
        c, s = np.cos(m * kx * x), np.sin(m * kx * x)
        fields.append(np.stack([c * dbump, m * kx * s * bump]))
        if m > 0:
            fields.append(np.stack([s * dbump, -m * kx * c * bump]))
    return np.stack(fields)


def dual_pairings(g: Grid, u: np.ndarray, fields: Optional[np.ndarray] = None) -> np.ndarray:
    fields = dual_test_fields(g) if fields is None else fields
    return np.einsum("kcij,cij->k", fields, u) * g.cell_volume


def holder_seminorm(times: Sequence[float], samples: Sequence, beta: float) -> float:
    """max over sample pairs of ||X(t) - X(s)|| / |t - s|^beta, with the max-abs norm for vector samples."""
    if not 0.0 < beta < 0.5:
        raise ParameterError(f"Holder exponent must lie in (0, 1/2), got {beta}")
    t = np.asarray(times, dtype=float)
    x = np.asarray(samples, dtype=float).reshape(len(t), -1)
    if len(t) < 2:
        raise DataError("Holder seminorm needs at least two samples")
    if not np.all(np.isfinite(x)):
        raise DataError("Holder seminorm got non-finite samples")
    best = 0.0
    for i in range(len(t) - 1):
        gaps = np.abs(t[i + 1:] - t[i])
        diffs = np.max(np.abs(x[i + 1:] - x[i]), axis=1)
        valid = gaps > 0
        if np.any(valid):
            best = max(best, float(np.max(diffs[valid] / gaps[valid] ** beta)))
    return best

# --- Supermartingale process ---

def supermartingale_series(shifted_energy: np.ndarray, dissipation_rate: np.ndarray, hs_norms: np.ndarray,
                           qv: np.ndarray, dt: float) -> np.ndarray:
    """
    G_n = 1/2 E_n^2 - 1/2 E_0^2 + sum_{k=1..n} dt E_k D_k - sum_{k=0..n-1} dt (E_k hs_k + qv_k)

    `shifted_energy` and `dissipation_rate` are indexed by time level 0..N,
    `hs_norms` and `qv` by step 0..N-1 (evaluated at the left end of the step).
    """
    e = np.asarray(shifted_energy, dtype=float)
    d = np.asarray(dissipation_rate, dtype=float)
    hs = np.asarray(hs_norms, dtype=float)
    qv = np.asarray(qv, dtype=float)
    n = len(e)
    if len(d) != n or len(hs) != n - 1 or len(qv) != n - 1:
        raise DataError(f"recorded terms do not line up: E {n}, D {len(d)}, hs {len(hs)}, qv {len(qv)}")
    for name, series in (("E", e), ("D", d), ("hs", hs), ("qv", qv)):
        if not np.all(np.isfinite(series)):
            raise DataError(f"non-finite values in recorded {name}")
    gain = np.concatenate([[0.0], np.cumsum(dt * e[1:] * d[1:])])
    noise = np.concatenate([[0.0], np.cumsum(dt * (e[:-1] * hs + qv))])
    return 0.5 * e**2 - 0.5 * e[0] ** 2 + gain - noise

# --- Path recording ---

@dataclass(frozen=True, eq=False)
class PathDiagnostics:
    """Sampled record of one path. Per-step arrays keep every time level for the stopping-time detector."""
    times: np.ndarray
    sample_steps: np.ndarray
    reports: Tuple[EnergyReport, ...]
    energy_series: np.ndarray
    mass_series: np.ndarray
    G_series: np.ndarray
    G_series_phase: np.ndarray
    pairings: np.ndarray
    holder_seminorm: float
    stopped_at: Optional[int]
    norm_trajectory: np.ndarray
    functionals: Dict[str, float]
    mu_integral: np.ndarray
    kpsi_integral: np.ndarray
    dt: float = 0.0

    def __len__(self) -> int:
        return len(self.times)


def truncate(path: PathDiagnostics, sample_index: int) -> PathDiagnostics:
    """The record up to and including sample `sample_index`, the only part an event at that time may read."""
    end = sample_index + 1
    if not 0 <= sample_index < len(path.times):
        raise DataError(f"sample index {sample_index} outside a record of {len(path.times)} samples")
    last_step = int(path.sample_steps[sample_index] - path.sample_steps[0])
    stopped = path.stopped_at if path.stopped_at is not None and path.stopped_at <= last_step else END
    return replace(
        path,
        times=path.times[:end],
        sample_steps=path.sample_steps[:end],
        reports=path.reports[:end],
        energy_series=path.energy_series[:end],
        mass_series=path.mass_series[:end],
        G_series=path.G_series[:end],
        G_series_phase=path.G_series_phase[:end],
        pairings=path.pairings[:end],
        stopped_at=stopped,
        norm_trajectory=path.norm_trajectory[: last_step + 1],
    )


class PathRecorder:
    """Accumulates per-step terms of one path and samples every `record_every` steps."""

    def __init__(self, ctx, record_every: int = 1, holder_beta: float = 0.25):
        if record_every < 1:
            raise ParameterError(f"record_every must be >= 1, got {record_every}")
        self.ctx = ctx
        self.record_every = record_every
        self.holder_beta = holder_beta
        self._fields = dual_test_fields(ctx.grid)
        self._shift = energy_shift(ctx.potentials, ctx.grid, ctx.scheme)
        self._energy: List[float] = []
        self._dissipation: List[float] = []
        self._hs: List[float] = []
        self._qv_velocity: List[float] = []
        self._qv_phase: List[float] = []
        self._norms: List[Tuple[float, float]] = []
        self._functional_terms: List[Tuple[float, ...]] = []
        self._samples: List[Tuple[int, EnergyReport, np.ndarray]] = []
        self._last = None
        self._start: Optional[int] = None
        self._mu_integral = np.zeros(ctx.grid.scalar_shape)
        self._kpsi_integral = np.zeros(ctx.grid.boundary_shape)

    @property
    def steps_observed(self) -> int:
        return max(0, len(self._energy) - 1)

    @property
    def started(self) -> bool:
        return self._start is not None

    @property
    def last_step(self) -> int:
        return (self._start or 0) + self.steps_observed

    def observe(self, step: int, state) -> EnergyReport:
        """Records the state at global step index `step`; the first call fixes the start of the path."""
        g, scheme = self.ctx.grid, self.ctx.scheme
        if self._start is None:
            self._start = step
        elif step != self.last_step + 1:
            raise DataError(f"expected step {self.last_step + 1}, got {step}")
        report = energy(state, self.ctx.potentials, g, scheme)
        v2 = v2_norm_sq(g, state.phi, state.psi) if scheme.v2_weight > 0 else 0.0
        if self._last is not None:
            self._hs.append(state.hs_norm_sq)
            self._qv_velocity.append(state.qv_velocity)
            self._qv_phase.append(state.qv_phase)
            self._mu_integral += scheme.dt * self._last.mu
            self._kpsi_integral += scheme.dt * self._last.kpsi
        self._energy.append(report.E + self._shift)
        self._dissipation.append(report.D + scheme.v2_weight * v2)
        u_norm = gr.norm(g, state.u)
        v1 = v1_norm(g, state.phi, state.psi)
        self._norms.append((u_norm, v1))
        d = report.dissipation
        self._functional_terms.append((u_norm**2, v1**2, d.viscous, d.chemical, d.boundary, d.parabolic))
        if step % self.record_every == 0 or step == self._start:
            self._samples.append((step, report, dual_pairings(g, state.u, self._fields)))
        self._last = state
        return report

    def finish(self) -> PathDiagnostics:
        if not self._energy:
            raise DataError("no states were recorded on this path")
        if self._samples[-1][0] != self.last_step:
            self._samples.append((self.last_step, energy(self._last, self.ctx.potentials, self.ctx.grid, self.ctx.scheme),
                                  dual_pairings(self.ctx.grid, self._last.u, self._fields)))
        dt = self.ctx.scheme.dt
        energies = np.array(self._energy)
        dissipations = np.array(self._dissipation)
        g_velocity = supermartingale_series(energies, dissipations, np.array(self._hs), np.array(self._qv_velocity), dt)
        g_phase = supermartingale_series(energies, dissipations, np.array(self._hs), np.array(self._qv_phase), dt)
        if self.ctx.scheme.pairing == "phase":
            g_velocity, g_phase = g_phase, g_velocity

        steps = np.array([s for s, _, _ in self._samples], dtype=int)
        local = steps - self._start
        reports = tuple(r for _, r, _ in self._samples)
        pairings = np.stack([p for _, _, p in self._samples])
        times = np.array([r.t for r in reports])
        holder = holder_seminorm(times, pairings, self.holder_beta) if len(times) >= 2 else 0.0

        terms = np.array(self._functional_terms)
        functionals = {
            "sup_kinetic": float(np.max(terms[:, 0])),
            "sup_v1": float(np.max(terms[:, 1])),
            "viscous_integral": float(dt * np.sum(terms[1:, 2])),
            "chemical_integral": float(dt * np.sum(terms[1:, 3])),
            "boundary_integral": float(dt * np.sum(terms[1:, 4])),
            "parabolic_integral": float(dt * np.sum(terms[1:, 5])),
        }
        norms = np.array(self._norms)
        stopped = stopping_time_index(self._norms, self.ctx.cutoff.radius, self.ctx.cutoff.monitor)
        return PathDiagnostics(
            times=times,
            sample_steps=steps,
            reports=reports,
            energy_series=np.array([r.E for r in reports]),
            mass_series=np.array([r.mass for r in reports]),
            G_series=g_velocity[local],
            G_series_phase=g_phase[local],
            pairings=pairings,
            holder_seminorm=holder,
            stopped_at=stopped,
            norm_trajectory=norms,
            functionals=functionals,
            mu_integral=self._mu_integral.copy(),
            kpsi_integral=self._kpsi_integral.copy(),
            dt=dt,
        )

# --- Moments ---

class MomentEstimate(NamedTuple):
    mean: float
    stderr: float


def moment_estimates(paths: Sequence[PathDiagnostics], p: float = 1.0) -> Dict[str, MomentEstimate]:
    """Sample mean and standard error of functional**p across paths, for every recorded functional."""
    if p < 1:
        raise ParameterError(f"moment order p must be >= 1, got {p}")
    if len(paths) == 0:
        raise DataError("moment estimates need at least one path")
    out = {}
    for key in paths[0].functionals:
        values = np.array([path.functionals[key] for path in paths]) ** p
        stderr = float(np.std(values, ddof=1) / math.sqrt(len(values))) if len(values) > 1 else 0.0
        out[key] = MomentEstimate(float(np.mean(values)), stderr)
    return out


EventFilter = Callable[[PathDiagnostics], bool]
