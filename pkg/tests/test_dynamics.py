import math

import numpy as np
import pytest
import scipy.sparse as sp

from schns.core.exceptions import DivergenceError, LinearSolveError, ParameterError, StateError
from schns.core.models import RunConfig, SchemeParams
from schns.numerics import grid as gr
from schns.numerics.dynamics import (
    StepContext,
    bilinear_b0,
    bilinear_b1,
    bilinear_b2,
    bilinear_bGamma,
    ch_substep,
    derived_state,
    full_step,
    helmholtz_project,
    slip_velocity,
    stokes_substep,
)
from schns.numerics.grid import Grid
from schns.numerics.initial import initial_state
from schns.numerics.noise import path_rng, sample_increments
from schns.numerics.potentials import build_potentials
from schns.numerics.solvers import FactorizedSystem, conjugate_gradient, jacobi_preconditioner


def _config(size=16, **sections):
    data = {"grid": {"nx": size, "ny": size}}
    for section, values in sections.items():
        data.setdefault(section, {}).update(values)
    return RunConfig.model_validate(data)


def _zero_wall(g):
    return g.zeros_boundary()


def _random_divfree(g, seed=0, scale=1.0):
    v = scale * np.random.default_rng(seed).standard_normal(g.vector_shape)
    return helmholtz_project(g, v)


# --- Linear solvers ---

def test_conjugate_gradient_solves_spd_system():
    matrix = sp.diags([[-1.0] * 19, [4.0] * 20, [-1.0] * 19], [-1, 0, 1]).tocsr()
    rhs = np.arange(20, dtype=float)
    x, info = conjugate_gradient(matrix, rhs, preconditioner=jacobi_preconditioner(matrix))
    assert info["success"]
    assert np.allclose(matrix @ x, rhs, atol=1e-8)


def test_conjugate_gradient_reports_non_convergence():
    n = 200
    matrix = sp.diags([[-1.0] * (n - 1), [2.0 + 1e-6] * n, [-1.0] * (n - 1)], [-1, 0, 1]).tocsr()
    with pytest.raises(LinearSolveError) as excinfo:
        conjugate_gradient(matrix, np.ones(n), maxiter=2)
    assert excinfo.value.iterations <= 2


def test_factorized_system_reuses_factorization():
    system = FactorizedSystem(sp.diags([2.0, 4.0, 8.0]))
    assert np.allclose(system.solve(np.array([2.0, 4.0, 8.0])), 1.0)
    assert np.allclose(system.solve(np.array([1.0, 1.0, 1.0])), [0.5, 0.25, 0.125])

# --- Projection ---

def test_projection_removes_divergence_and_is_idempotent():
    g = Grid(16, 16)
    v = np.random.default_rng(0).standard_normal(g.vector_shape)
    p = helmholtz_project(g, v)
    assert np.max(np.abs(gr.divergence(g, p))) <= 1e-10
    assert np.allclose(helmholtz_project(g, p), p, atol=1e-12)
    assert abs(gr.inner(g, p, v - p)) < 1e-9


def test_projection_removes_gradients():
    g = Grid(16, 12)
    q = np.random.default_rng(1).standard_normal(g.scalar_shape)
    assert np.max(np.abs(helmholtz_project(g, gr.gradient(g, q)))) < 1e-9


def test_projection_keeps_shear_flow():
    g = Grid(12, 12)
    _, y = g.mesh()
    v = g.zeros_vector()
    v[0] = np.sin(2 * math.pi * y)
    assert np.array_equal(helmholtz_project(g, v), v)


def test_projection_works_for_odd_nx():
    g = Grid(9, 10)
    v = np.random.default_rng(2).standard_normal(g.vector_shape)
    assert np.max(np.abs(gr.divergence(g, helmholtz_project(g, v)))) <= 1e-10

# --- Stokes ---

def test_stokes_zero_is_a_fixed_point():
    g = Grid(16, 16)
    out = stokes_substep(g, g.zeros_vector(), g.zeros_vector(), _zero_wall(g), 1e-3)
    assert np.all(out == 0.0)


@pytest.mark.parametrize("theta", [0.5, 1.0])
def test_stokes_without_forcing_does_not_gain_energy(theta):
    g = Grid(16, 16)
    u = _random_divfree(g, seed=3)
    out = stokes_substep(g, u, g.zeros_vector(), _zero_wall(g), 1e-3, theta=theta)
    assert gr.norm(g, out) <= gr.norm(g, u) * (1 + 1e-12)


def test_stokes_rejects_nonpositive_dt():
    g = Grid(8, 8)
    with pytest.raises(ParameterError):
        stokes_substep(g, g.zeros_vector(), g.zeros_vector(), _zero_wall(g), 0.0)


def _steady_shear_error(ny):
    # nu0 u'' = -1 with -u'(0) + u(0) = 0 and u'(1) + u(1) = 0: u = (1 + y - y^2) / 2
    g = Grid(8, ny)
    _, y = g.mesh()
    force = g.zeros_vector()
    force[0] = 1.0
    u = g.zeros_vector()
    for _ in range(40):
        u = stokes_substep(g, u, force, _zero_wall(g), 1.0)
    exact = 0.5 * (1.0 + y - y**2)
    return float(np.max(np.abs(u[0] - exact))), float(np.max(np.abs(u[1])))


def test_stokes_converges_to_manufactured_shear():
    coarse, cross_coarse = _steady_shear_error(16)
    fine, cross_fine = _steady_shear_error(32)
    assert coarse < 1e-2
    assert coarse / fine >= 3.0
    assert cross_coarse < 1e-12 and cross_fine < 1e-12


def _fitted_order(steps, errors):
    return float(np.polyfit(np.log(steps), np.log(errors), 1)[0])


# w(y) = sin(pi y) + 1 has nonzero Robin data on both walls
def _profile(y):
    return np.sin(math.pi * y) + 1.0


def _shear_data(g, viscosity, rate, value):
    """Body force and Robin wall data for u = (a(t) w(y), 0) with a' = rate and a = value."""
    _, y = g.mesh()
    force = g.zeros_vector()
    force[0] = rate * _profile(y) + viscosity * value * math.pi**2 * np.sin(math.pi * y)
    wall = np.empty(g.boundary_shape)
    wall[gr.BOTTOM] = value * (-viscosity * math.pi + 1.0)
    wall[gr.TOP] = value * (-viscosity * math.pi + 1.0)
    return force, wall


def _linear_in_time_shear_error(ny, viscosity=0.5, dt=0.01, steps=50):
    # u = (1 + t) w(y): backward Euler is exact in time, only the spatial error remains
    g = Grid(8, ny)
    _, y = g.mesh()
    u = g.zeros_vector()
    u[0] = _profile(y)
    for n in range(steps):
        force, wall = _shear_data(g, viscosity, 1.0, 1.0 + (n + 1) * dt)
        u = stokes_substep(g, u, force, wall, dt, viscosity=viscosity)
    exact = (1.0 + steps * dt) * _profile(y)
    return float(np.max(np.abs(u[0] - exact))), float(np.max(np.abs(u[1])))


def test_stokes_with_robin_wall_data_is_second_order_in_h():
    sizes = [16, 32, 64]
    results = [_linear_in_time_shear_error(ny) for ny in sizes]
    errors = [e for e, _ in results]
    assert errors[0] < 5e-2
    assert 1.8 <= _fitted_order([1.0 / n for n in sizes], errors) <= 2.2
    assert all(cross < 1e-12 for _, cross in results)


def _decaying_shear(g, dt, viscosity=0.5, final_time=0.2):
    _, y = g.mesh()
    u = g.zeros_vector()
    u[0] = _profile(y)
    for n in range(round(final_time / dt)):
        value = math.exp(-2.0 * (n + 1) * dt)
        force, wall = _shear_data(g, viscosity, -2.0 * value, value)
        u = stokes_substep(g, u, force, wall, dt, viscosity=viscosity)
    return u


def test_stokes_with_robin_wall_data_is_first_order_in_dt():
    g = Grid(8, 32)
    steps = [0.02, 0.01, 0.005]
    reference = _decaying_shear(g, steps[-1] / 8)
    errors = [gr.norm(g, _decaying_shear(g, dt) - reference) for dt in steps]
    assert _fitted_order(steps, errors) >= 0.9

# --- Cahn-Hilliard substep ---

def _phase(g, amplitude=0.1):
    x, y = g.mesh()
    return amplitude * np.cos(2 * math.pi * x) + 0.05 * np.cos(math.pi * y)


def test_ch_zero_state_is_stationary():
    g = Grid(16, 16)
    pot = build_potentials(RunConfig().potential)
    out = ch_substep(g, g.zeros_scalar(), g.zeros_boundary(), g.zeros_vector(), SchemeParams(), pot)
    for part in out:
        assert np.allclose(part, 0.0, atol=1e-14)


def test_ch_conserves_mass_under_transport():
    g = Grid(16, 16)
    pot = build_potentials(RunConfig().potential)
    phi = _phase(g) + 0.2
    u = _random_divfree(g, seed=4, scale=2.0)
    params = SchemeParams(dt=1e-3)
    out = ch_substep(g, phi, gr.trace(g, phi), u, params, pot)
    assert gr.mean(g, out.phi) == pytest.approx(gr.mean(g, phi), abs=1e-10)


def test_ch_requires_psi_to_be_the_trace():
    g = Grid(16, 16)
    pot = build_potentials(RunConfig().potential)
    phi = _phase(g)
    with pytest.raises(StateError):
        ch_substep(g, phi, gr.trace(g, phi) + 1.0, g.zeros_vector(), SchemeParams(), pot)


def test_ch_parabolic_term_enters_linearly():
    g = Grid(16, 16)
    pot = build_potentials(RunConfig().potential)
    phi = _phase(g)
    psi = gr.trace(g, phi)
    u = g.zeros_vector()
    base = ch_substep(g, phi, psi, u, SchemeParams(dt=0.1, delta=0.0), pot).phi
    deltas = np.array([1e-5, 1e-4, 1e-3])
    gaps = [gr.norm(g, ch_substep(g, phi, psi, u, SchemeParams(dt=0.1, delta=d), pot).phi - base) for d in deltas]
    slope = np.polyfit(np.log(deltas), np.log(gaps), 1)[0]
    assert slope >= 0.9



def test_ch_new_psi_is_the_trace_and_k_closes_the_dynamic_law():
    g = Grid(32, 32)
    pot = build_potentials(RunConfig().potential)
    x, y = g.mesh()
    phi = 0.5 * np.cos(4 * math.pi * x) * np.cos(3 * math.pi * y)
    psi = gr.trace(g, phi)
    params = SchemeParams(dt=1e-4)
    for _ in range(25):
        out = ch_substep(g, phi, psi, g.zeros_vector(), params, pot)
        assert np.max(np.abs(out.psi - gr.trace(g, out.phi))) <= 1e-12
        residual = (out.psi - psi) / params.dt + out.kpsi
        assert np.max(np.abs(residual)) <= 1e-6 * max(1.0, float(np.max(np.abs(out.kpsi))))
        phi, psi = out.phi, out.psi


# c(y) = cos(pi y) + sin(pi y) - 5/39 sin(3 pi y) has d_y(Laplace c) = 0 on both walls, c(0) = 1, c(1) = -1
_MODES = ((1.0, 1, np.cos), (1.0, 1, np.sin), (-5.0 / 39.0, 3, np.sin))


def _manufactured_phase(g, t):
    x, y = g.mesh()
    profile = sum(a * b(j * math.pi * y) for a, j, b in _MODES)
    return (1.0 + t) * np.cos(2 * math.pi * x) * profile


def _manufactured_sources(g, t_old, t_new):
    """Bulk and wall sources making (1 + t) cos(2 pi x) c(y) exact for u = 0, alpha = delta = eps = 0, g(r) = r."""
    x, y = g.mesh()
    bulk = sum(a * (1.0 + (1.0 + t_new) * (4 + j**2) ** 2 * math.pi**4) * b(j * math.pi * y) for a, j, b in _MODES)
    wave = np.cos(2 * math.pi * g.x_centers())
    wall_new = np.stack([(1.0 + t_new) * wave, -(1.0 + t_new) * wave])
    wall_old = np.stack([(1.0 + t_old) * wave, -(1.0 + t_old) * wave])
    normal = np.tile(-(1.0 + t_new) * wave * 24 * math.pi / 39, (2, 1))
    rate = np.stack([wave, -wave])
    # g(psi) is explicit, so the wall source carries the old psi
    wall = rate + (4 * math.pi**2 + 1.0) * wall_new + wall_old + normal
    return np.cos(2 * math.pi * x) * bulk, wall


def _manufactured_ch_error(n, dt=1e-3, steps=10):
    g = Grid(n, n)
    pot = build_potentials(RunConfig().potential)
    params = SchemeParams(dt=dt, eps=0.0, delta=0.0, alpha=0.0, interface=1.0)
    phi = _manufactured_phase(g, 0.0)
    psi = gr.trace(g, phi)
    for k in range(steps):
        source, wall_source = _manufactured_sources(g, k * dt, (k + 1) * dt)
        out = ch_substep(g, phi, psi, g.zeros_vector(), params, pot, source=source, wall_source=wall_source)
        phi, psi = out.phi, out.psi
    return gr.norm(g, phi - _manufactured_phase(g, steps * dt))


def test_ch_manufactured_solution_is_second_order_in_h():
    sizes = [16, 32, 64]
    errors = [_manufactured_ch_error(n) for n in sizes]
    assert 1.8 <= _fitted_order([1.0 / n for n in sizes], errors) <= 2.2


def _double_well_run(g, dt, final_time=0.004):
    pot = build_potentials(RunConfig().potential)
    params = SchemeParams(dt=dt)
    x, y = g.mesh()
    phi = 0.1 * np.cos(2 * math.pi * x) * np.cos(math.pi * y)
    psi = gr.trace(g, phi)
    for _ in range(round(final_time / dt)):
        out = ch_substep(g, phi, psi, g.zeros_vector(), params, pot)
        phi, psi = out.phi, out.psi
    return phi


def test_ch_double_well_is_first_order_in_dt():
    g = Grid(16, 16)
    steps = [4e-4, 2e-4, 1e-4]
    reference = _double_well_run(g, 1.25e-5)
    errors = [gr.norm(g, _double_well_run(g, dt) - reference) for dt in steps]
    assert _fitted_order(steps, errors) >= 0.9


# --- Bilinear forms ---

def test_convective_form_is_skew():
    g = Grid(16, 12)
    rng = np.random.default_rng(6)
    u, v = rng.standard_normal(g.vector_shape), rng.standard_normal(g.vector_shape)
    assert abs(bilinear_b0(g, u, v, v)) < 1e-9


def test_capillary_and_transport_forms_are_dual():
    g = Grid(12, 12)
    rng = np.random.default_rng(7)
    mu, phi = rng.standard_normal(g.scalar_shape), rng.standard_normal(g.scalar_shape)
    u = rng.standard_normal(g.vector_shape)
    assert bilinear_b1(g, mu, phi, u) == pytest.approx(bilinear_b2(g, u, phi, mu), rel=1e-12)


def test_wall_form_pairs_slip_with_tangential_gradient():
    g = Grid(16, 8)
    rng = np.random.default_rng(8)
    u = rng.standard_normal(g.vector_shape)
    psi, kpsi = rng.standard_normal(g.boundary_shape), rng.standard_normal(g.boundary_shape)
    u_tau = slip_velocity(g, u)
    expected = gr.boundary_inner(g, kpsi * gr.boundary_gradient(g, psi), u_tau)
    assert bilinear_bGamma(g, u_tau, psi, kpsi) == pytest.approx(expected, rel=1e-12)
    ones = np.ones(g.boundary_shape)
    assert abs(bilinear_bGamma(g, ones, psi, ones)) < 1e-12

# --- Full step ---

def test_zero_state_stays_zero():
    cfg = _config(initial={"kind": "zero"})
    ctx = StepContext.from_config(cfg)
    state = initial_state(ctx, cfg.initial)
    rng = path_rng(0, 0)
    for _ in range(5):
        state = full_step(state, ctx, rng)
    assert np.all(state.u == 0.0) and np.allclose(state.phi, 0.0, atol=1e-14)
    assert state.t == pytest.approx(5 * cfg.scheme.dt)


def test_full_step_needs_randomness_or_an_increment():
    cfg = _config(8)
    ctx = StepContext.from_config(cfg)
    with pytest.raises(ParameterError):
        full_step(initial_state(ctx, cfg.initial), ctx)


def test_recorded_increment_replays_the_step_exactly():
    cfg = _config(12, initial={"kind": "cosine", "velocity": 0.5})
    ctx = StepContext.from_config(cfg)
    state = initial_state(ctx, cfg.initial)
    rng = path_rng(3, 0)
    increment = sample_increments(ctx.noise, cfg.scheme.dt, path_rng(3, 0))
    sampled = full_step(state, ctx, rng)
    replayed = full_step(state, ctx, increment=increment)
    assert np.array_equal(sampled.u, replayed.u)
    assert np.array_equal(sampled.phi, replayed.phi)


def test_step_keeps_velocity_divergence_free_and_mass_fixed():
    cfg = _config(16, initial={"kind": "random_smooth", "amplitude": 0.3, "modes": 2, "velocity": 0.5},
                  noise={"sigma0": 1.0})
    ctx = StepContext.from_config(cfg)
    state = initial_state(ctx, cfg.initial)
    m0 = gr.mean(ctx.grid, state.phi)
    rng = path_rng(1, 0)
    for _ in range(10):
        state = full_step(state, ctx, rng)
        assert np.max(np.abs(gr.divergence(ctx.grid, state.u))) <= cfg.scheme.div_tol
    assert gr.mean(ctx.grid, state.phi) == pytest.approx(m0, abs=1e-10)
    assert np.max(np.abs(state.psi - gr.trace(ctx.grid, state.phi))) < cfg.scheme.trace_tol


@pytest.mark.parametrize("initial", [
    {"kind": "cosine", "amplitude": 0.5, "mode": 2, "y_mode": 3},
    {"kind": "interface", "radius": 0.6},
])
def test_boundary_phase_stays_on_the_trace_over_many_steps(initial):
    cfg = _config(32, noise={"enabled": False}, initial=initial)
    ctx = StepContext.from_config(cfg)
    state = initial_state(ctx, cfg.initial)
    rng = path_rng(0, 0)
    for _ in range(40):
        state = full_step(state, ctx, rng)
        assert np.max(np.abs(state.psi - gr.trace(ctx.grid, state.phi))) <= 1e-12


def test_large_cutoff_radius_matches_disabled_cutoff():
    def run(radius):
        cfg = _config(12, cutoff={"radius": radius}, initial={"velocity": 0.5})
        ctx = StepContext.from_config(cfg)
        state = initial_state(ctx, cfg.initial)
        rng = path_rng(2, 0)
        for _ in range(10):
            state = full_step(state, ctx, rng)
        return state

    a, b = run(math.inf), run(1e12)
    assert np.array_equal(a.u, b.u) and np.array_equal(a.phi, b.phi) and np.array_equal(a.psi, b.psi)


def test_small_cutoff_radius_switches_off_the_nonlinear_terms():
    cfg = _config(12, cutoff={"radius": 1e-6}, initial={"velocity": 0.5})
    ctx = StepContext.from_config(cfg)
    state = full_step(initial_state(ctx, cfg.initial), ctx, path_rng(0, 0))
    assert state.cutoff == 0.0


def test_blowup_guard_raises_with_diagnostics():
    cfg = _config(8, scheme={"blowup_guard": 1e-6}, initial={"velocity": 1.0})
    ctx = StepContext.from_config(cfg)
    with pytest.raises(DivergenceError) as excinfo:
        full_step(initial_state(ctx, cfg.initial), ctx, path_rng(0, 0))
    assert "norms" in excinfo.value.diagnostics


def test_derived_state_fills_the_potentials():
    cfg = _config(12, noise={"enabled": False})
    ctx = StepContext.from_config(cfg)
    g = ctx.grid
    phi = _phase(g)
    state = derived_state(ctx, g.zeros_vector(), phi, gr.trace(g, phi))
    assert state.mu.shape == g.scalar_shape and state.kpsi.shape == g.boundary_shape
    assert np.all(state.phi_rate == 0.0)
