import math

import numpy as np
import pytest

from schns.core.exceptions import ParameterError
from schns.core.models import NoiseSpec
from schns.numerics import grid as gr
from schns.numerics.grid import Grid
from schns.numerics.noise import (
    NoiseIncrement,
    NoiseModel,
    apply_h,
    hs_norm_sq,
    path_rng,
    quadratic_variation,
    sample_increments,
    wall_vanishing_basis,
)


@pytest.fixture
def grid():
    return Grid(8, 8)


@pytest.fixture
def model(grid):
    return NoiseModel.from_spec(grid, NoiseSpec(n_modes=6))


def _constant_mode(grid):
    c = 1.0 / math.sqrt(2.0 * grid.domain_measure)
    return np.full((1,) + grid.vector_shape, c), c


def test_basis_is_orthonormal(grid):
    basis = wall_vanishing_basis(grid, 10)
    flat = basis.reshape(10, -1)
    gram = flat @ flat.T * grid.cell_volume
    assert np.allclose(gram, np.eye(10), atol=1e-10)
    assert np.array_equal(basis[:, 0], basis[:, 1])


def test_zero_dt_gives_zero_increments(model):
    inc = sample_increments(model, 0.0, np.random.default_rng(0))
    assert np.all(inc.dw == 0.0)
    with pytest.raises(ParameterError):
        sample_increments(model, -1e-3, np.random.default_rng(0))


def test_increment_variance_matches_dt(model):
    rng = np.random.default_rng(123)
    dt = 1e-2
    draws = np.array([sample_increments(model, dt, rng).dw[0] for _ in range(100_000)])
    assert 0.98 * dt <= draws.var() <= 1.02 * dt


def test_same_seed_same_increments(model):
    a = sample_increments(model, 0.1, path_rng(5, 2)).dw
    b = sample_increments(model, 0.1, path_rng(5, 2)).dw
    c = sample_increments(model, 0.1, path_rng(5, 3)).dw
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_h_vanishes_at_zero_and_is_linear(grid, model):
    inc = sample_increments(model, 0.1, np.random.default_rng(1))
    zero = grid.zeros_vector()
    assert np.all(apply_h(model, zero, zero, inc) == 0.0)
    rng = np.random.default_rng(2)
    u, p = rng.standard_normal(grid.vector_shape), rng.standard_normal(grid.vector_shape)
    assert np.allclose(apply_h(model, 2 * u, 2 * p, inc), 2 * apply_h(model, u, p, inc))


def test_single_mode_hand_computation(grid):
    basis, c = _constant_mode(grid)
    model = NoiseModel.from_basis(grid, basis, np.array([1.0]), alpha_u=1.0, alpha_phi=0.0)
    u = grid.zeros_vector()
    u[0] = 1.0
    out = apply_h(model, u, grid.zeros_vector(), NoiseIncrement(dw=np.array([0.3]), dt=0.09))
    assert np.allclose(out[0], 0.3 * c)
    assert np.allclose(out[1], 0.0)
    assert hs_norm_sq(model, u, grid.zeros_vector()) == pytest.approx(c**2 * grid.domain_measure)


def test_from_basis_rejects_non_normalized_modes(grid):
    basis, _ = _constant_mode(grid)
    with pytest.raises(ParameterError):
        NoiseModel.from_basis(grid, 2 * basis, np.array([1.0]), 1.0, 0.0)
    with pytest.raises(ParameterError):
        NoiseModel.from_basis(grid, basis, np.array([1.0, 0.5]), 1.0, 0.0)


def test_increment_mode_count_must_match(grid, model):
    zero = grid.zeros_vector()
    with pytest.raises(ParameterError):
        apply_h(model, zero, zero, NoiseIncrement(dw=np.zeros(model.n_modes + 1), dt=0.1))


def test_growth_and_lipschitz_bounds_hold_on_random_inputs(grid):
    model = NoiseModel.from_spec(grid, NoiseSpec(n_modes=8, alpha_u=0.7, alpha_phi=0.3, additive=0.2))
    silent_offset = NoiseModel(grid, model.sigma, model.basis, model.alpha_u, model.alpha_phi, 0.0)
    rng = np.random.default_rng(9)
    for _ in range(20):
        u1, p1, u2, p2 = (rng.standard_normal(grid.vector_shape) * rng.uniform(0.1, 10.0) for _ in range(4))
        size = 1.0 + gr.inner(grid, u1, u1) + gr.inner(grid, p1, p1)
        assert hs_norm_sq(model, u1, p1) <= model.growth_constant() * size
        dist = gr.inner(grid, u1 - u2, u1 - u2) + gr.inner(grid, p1 - p2, p1 - p2)
        assert hs_norm_sq(silent_offset, u1 - u2, p1 - p2) <= model.lipschitz_constant() * dist


def test_hs_norm_matches_mean_squared_forcing(grid, model):
    rng = np.random.default_rng(7)
    u = rng.standard_normal(grid.vector_shape)
    p = 0.5 * rng.standard_normal(grid.vector_shape)
    dt = 0.01
    samples = [gr.inner(grid, f, f) for f in
               (apply_h(model, u, p, sample_increments(model, dt, rng)) for _ in range(10_000))]
    assert np.mean(samples) / dt == pytest.approx(hs_norm_sq(model, u, p), rel=0.05)


def test_quadratic_variation_is_zero_against_zero_field(grid, model):
    u = np.ones(grid.vector_shape)
    assert quadratic_variation(model, u, u, grid.zeros_vector()) == 0.0
    assert quadratic_variation(model, u, u, u) > 0.0


def test_disabled_noise_is_silent(grid):
    model = NoiseModel.from_spec(grid, NoiseSpec(enabled=False))
    assert model.is_silent
    assert model.growth_constant() == 0.0


def test_quadratic_variation_matches_the_variance_of_the_pairing(grid, model):
    rng = np.random.default_rng(17)
    u = rng.standard_normal(grid.vector_shape)
    gradphi = 0.5 * rng.standard_normal(grid.vector_shape)
    v = rng.standard_normal(grid.vector_shape)
    dt = 0.01
    pairings = np.array([gr.inner(grid, apply_h(model, u, gradphi, sample_increments(model, dt, rng)), v)
                         for _ in range(10_000)])
    assert pairings.var(ddof=1) == pytest.approx(dt * quadratic_variation(model, u, gradphi, v), rel=0.05)


def test_single_mode_quadratic_variation_hand_computation(grid):
    basis, c = _constant_mode(grid)
    model = NoiseModel.from_basis(grid, basis, np.array([2.0]), alpha_u=1.0, alpha_phi=0.0)
    u = grid.zeros_vector()
    u[0] = 1.0
    # (h_1, v) = c |D| against v = u, times sigma_1^2 = 4
    assert quadratic_variation(model, u, grid.zeros_vector(), u) == pytest.approx(4.0 * (c * grid.domain_measure) ** 2)
