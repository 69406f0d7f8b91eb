from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from curveflow import (
    CoordSDE,
    CoordSeries,
    InvalidArgument,
    NumericalBlowup,
    OutOfDomain,
    diffusion_coeff,
    drift_coeff,
    inner_product,
    ito_correction,
    make_affine_family,
    make_exp_basis,
    make_exp_rate,
    make_grid,
    make_nelson_siegel,
    make_vol,
    make_weight,
    project,
    reconstruct_curve,
    simulate_coords,
    simulate_paths,
    step_euler_ito,
    step_heun_strat,
    strat_drift,
)
from curveflow.hjm import VolatilitySpec, gaussian_increments
from curveflow.manifold import orthonormalize
from curveflow.projection_dynamics import coefficients, paired_step

GRID = make_grid(10.0, 401)
UNIT = make_grid(1.0, 101)
NS = make_nelson_siegel(0.5)
Z0 = np.array([0.04, -0.01, 0.005])


def constant_family(grid=GRID, **bounds):
    return make_affine_family(None, [grid.curve(np.ones(grid.size))], **bounds)


def centered_family():
    return make_affine_family(None, [UNIT.curve(lambda x: x - 0.5)])


# ---------------------------------------------------------------- drift and diffusion


def test_drift_exp_basis_zero_vol():
    a, c = 0.5, 0.04
    sde = CoordSDE(make_exp_basis([a]), make_vol("constant", 0.0), GRID)
    np.testing.assert_allclose(drift_coeff(sde, [c]), [-a * c], rtol=1e-4)


def test_drift_zero_for_flat_family_without_vol():
    sde = CoordSDE(constant_family(), make_vol("constant", 0.0), GRID)
    assert np.all(drift_coeff(sde, [0.03]) == 0.0)


def test_drift_zero_when_orthogonal():
    sde = CoordSDE(centered_family(), make_vol("constant", 0.0), UNIT)
    assert np.max(np.abs(drift_coeff(sde, [0.7]))) <= 1e-10


def test_drift_reproduces_in_span_vector():
    # d/dx (z1 + z2 x) = z2 is in the span, so the projection is exact
    fam = make_affine_family(None, [GRID.curve(np.ones(GRID.size)), GRID.curve(lambda x: x)])
    sde = CoordSDE(fam, make_vol("constant", 0.0), GRID)
    z = np.array([0.03, -0.002])
    A = drift_coeff(sde, z)
    mu = strat_drift(fam.eval(z, GRID), sde.vol).values
    np.testing.assert_allclose(A @ fam.affine_parts(GRID)[1], mu, rtol=0, atol=1e-9)
    np.testing.assert_allclose(A, [-0.002, 0.0], atol=1e-12)


def test_diffusion_of_tangent_vol_is_unit_vector():
    sde = CoordSDE(NS, make_vol("exp_decay", 1.0, 0.5), GRID)
    np.testing.assert_allclose(diffusion_coeff(sde, Z0), [[0.0], [1.0], [0.0]], atol=1e-12)


def test_diffusion_zero_when_orthogonal():
    sde = CoordSDE(centered_family(), make_vol("constant", 0.3), UNIT)
    assert np.max(np.abs(diffusion_coeff(sde, [0.2]))) <= 1e-10


def test_diffusion_with_orthonormal_basis():
    w = make_weight(GRID, "exp_decreasing", 0.2)
    basis = orthonormalize([c for c in (GRID.curve(np.ones(GRID.size)), GRID.curve(lambda x: np.exp(-x)),
                                        GRID.curve(lambda x: x * np.exp(-x)))], w)
    fam = make_affine_family(None, basis)
    s0 = 0.02
    sde = CoordSDE(fam, make_vol("constant", s0), GRID, w)
    expected = [inner_product(GRID.curve(np.full(GRID.size, s0)), e, w) for e in basis]
    np.testing.assert_allclose(diffusion_coeff(sde, np.zeros(3))[:, 0], expected, atol=1e-12)


def test_diffusion_columns_per_factor():
    sde = CoordSDE(NS, make_vol("proportional", [0.1, 0.3]), GRID)
    B = diffusion_coeff(sde, Z0)
    assert B.shape == (3, 2)
    np.testing.assert_allclose(B[:, 1], 3 * B[:, 0], rtol=1e-12)


# ---------------------------------------------------------------- Ito correction


def test_correction_zero_for_constant_diffusion():
    for fam in (NS, NS.without_analytic_tangents()):
        sde = CoordSDE(fam, make_vol("exp_decay", 0.01, 0.5), GRID)
        assert np.max(np.abs(ito_correction(sde, Z0))) <= 1e-8


@settings(max_examples=30, deadline=None)
@given(st.floats(-2.0, 2.0))
def test_correction_for_linear_diffusion(z):
    sde = CoordSDE(constant_family(), make_vol("proportional", 1.0), GRID)
    assert abs(diffusion_coeff(sde, [z])[0, 0] - z) <= 1e-12 * (1 + abs(z))
    assert abs(ito_correction(sde, [z])[0] - z / 2) <= 1e-6


def test_correction_invariant_to_factor_order():
    a = CoordSDE(NS, make_vol("proportional_exp", [0.2, 0.5, 0.1], 0.3), GRID)
    b = CoordSDE(NS, make_vol("proportional_exp", [0.1, 0.5, 0.2], 0.3), GRID)
    ca, cb = ito_correction(a, Z0), ito_correction(b, Z0)
    assert np.max(np.abs(ca - cb)) <= 1e-12 * np.max(np.abs(ca))


def test_correction_nonlinear_family_nonzero_for_state_free_vol():
    sde = CoordSDE(make_exp_rate(), make_vol("constant", 0.05), GRID)
    assert not sde.diffusion_is_constant
    assert np.max(np.abs(ito_correction(sde, [0.04, 0.3]))) > 0


def test_batch_matches_single_evaluation():
    for fam, vol in [(NS, make_vol("proportional_exp", 0.2, 0.3)), (make_exp_rate(), make_vol("constant", 0.01))]:
        sde = CoordSDE(fam, vol, GRID)
        Z = np.array([[0.04, 0.3], [0.05, 0.6]]) if fam.n == 2 else np.array([Z0, 2 * Z0])
        A, B = coefficients(sde, Z)
        for k in range(2):
            a, b = coefficients(sde, Z[k])
            np.testing.assert_allclose(A[k], a, rtol=1e-12, atol=1e-18)
            np.testing.assert_allclose(B[k], b, rtol=1e-12, atol=1e-18)


# ---------------------------------------------------------------- steppers


def test_euler_step_fixed_point():
    sde = CoordSDE(constant_family(), make_vol("constant", 0.0), GRID)
    assert np.array_equal(step_euler_ito(sde, [0.03], 0.01, [0.0]), [0.03])


def test_euler_step_exp_decay_ode():
    a, c, d = 0.5, 0.04, 0.01
    sde = CoordSDE(make_exp_basis([a]), make_vol("constant", 0.0), GRID)
    np.testing.assert_allclose(step_euler_ito(sde, [c], d, [0.0]), [c * (1 - a * d)], rtol=1e-6)


def test_euler_step_linear_in_noise():
    sde = CoordSDE(NS, make_vol("proportional_exp", [0.2, 0.1], 0.4), GRID)
    e = np.array([0.03, -0.07])
    diff = step_euler_ito(sde, Z0, 0.01, 2 * e) - step_euler_ito(sde, Z0, 0.01, e)
    np.testing.assert_allclose(diff, diffusion_coeff(sde, Z0) @ e, rtol=1e-10, atol=1e-18)


def test_heun_close_to_euler_for_constant_diffusion():
    sde = CoordSDE(NS, make_vol("constant", 0.01), GRID)
    for d in (1e-2, 5e-3, 1e-3):
        eps = gaussian_increments(5, 0, 1, 1, d)[0]
        gap = np.max(np.abs(step_heun_strat(sde, Z0, d, eps) - step_euler_ito(sde, Z0, d, eps)))
        assert gap <= 1e-3 * d


def test_heun_deterministic_step():
    a, c, d = 0.5, 0.04, 0.1
    sde = CoordSDE(make_exp_basis([a]), make_vol("constant", 0.0), GRID)
    A0 = drift_coeff(sde, [c])
    A1 = drift_coeff(sde, [c] + A0 * d)
    np.testing.assert_allclose(step_heun_strat(sde, [c], d, [0.0]), c + 0.5 * (A0 + A1) * d, rtol=1e-14)


def test_zero_step_leaves_state():
    sde = CoordSDE(NS, make_vol("proportional", 0.2), GRID)
    np.testing.assert_array_equal(step_heun_strat(sde, Z0, 0.0, [0.0]), Z0)
    np.testing.assert_array_equal(step_euler_ito(sde, Z0, 0.0, [0.0]), Z0)


def test_heun_predictor_bounds_checked():
    fam = constant_family(lower=-1.0, upper=1.0)
    sde = CoordSDE(fam, make_vol("constant", 1.0), GRID)
    with pytest.raises(OutOfDomain):
        step_heun_strat(sde, [0.9], 0.01, [0.5])


# ---------------------------------------------------------------- simulation


def test_simulated_decay_matches_ode():
    a, c, d = 0.5, 0.04, 1e-3
    sde = CoordSDE(make_exp_basis([a]), make_vol("constant", 0.0), GRID)
    s = simulate_coords(sde, [c], d, 1000, seed=0)
    exact = c * np.exp(-a * s.times)
    assert np.max(np.abs(s.z[:, 0] - exact) / exact) <= 2 * a * d


def test_simulation_reproducible():
    sde = CoordSDE(NS, make_vol("proportional_exp", 0.2, 0.4), GRID)
    a = simulate_coords(sde, Z0, 0.01, 50, seed=9)
    b = simulate_coords(sde, Z0, 0.01, 50, seed=9)
    assert np.array_equal(a.z, b.z)
    assert not np.array_equal(a.z, simulate_coords(sde, Z0, 0.01, 50, seed=10).z)


def test_flat_family_without_vol_is_constant():
    sde = CoordSDE(constant_family(), make_vol("constant", 0.0), GRID)
    s = simulate_coords(sde, [0.035], 0.01, 25, scheme="heun_strat")
    assert np.all(s.z == 0.035)


def test_multi_coordinate_flat_series_is_constant():
    g = UNIT
    step = g.curve(lambda x: (x > 0.5).astype(float))
    fam = make_affine_family(None, [g.curve(np.ones(g.size)), step])
    sde = CoordSDE(fam, make_vol("constant", 0.0), g)
    z0 = [0.02, 0.0]
    s = simulate_coords(sde, z0, 0.01, 10)
    np.testing.assert_allclose(s.z, np.tile(z0, (11, 1)), atol=0)


def test_paths_match_single_path_runs():
    sde = CoordSDE(NS, make_vol("proportional", 0.3), GRID)
    many = simulate_paths(sde, Z0, 0.01, 20, 4, path_ids=[0, 3])
    for s, p in zip(many, [0, 3]):
        np.testing.assert_allclose(s.z, simulate_coords(sde, Z0, 0.01, 20, 4, path_id=p).z, rtol=1e-13, atol=1e-18)


def test_out_of_domain_aborts_with_step():
    fam = constant_family(lower=-0.05, upper=0.05)
    sde = CoordSDE(fam, make_vol("constant", 1.0), GRID)
    with pytest.raises(OutOfDomain) as err:
        simulate_coords(sde, [0.0], 0.01, 500, seed=1)
    assert err.value.step is not None and err.value.step >= 1


def test_blowup_aborts_with_step():
    sde = CoordSDE(constant_family(), make_vol("proportional", 50.0), GRID)
    with pytest.raises(NumericalBlowup) as err:
        simulate_coords(sde, [1.0], 0.5, 200, seed=0)
    assert err.value.step >= 1


def test_simulation_rejects_bad_arguments():
    sde = CoordSDE(NS, make_vol("constant", 0.01), GRID)
    with pytest.raises(InvalidArgument):
        simulate_coords(sde, Z0, 0.01, 10, scheme="milstein")
    with pytest.raises(InvalidArgument):
        simulate_coords(sde, Z0, 0.01, 0)
    with pytest.raises(InvalidArgument):
        simulate_coords(sde, Z0, 0.01, 3, noise=np.zeros((2, 1)))
    with pytest.raises(OutOfDomain):
        simulate_coords(make_sde_bounded(), [2.0], 0.01, 3)


def make_sde_bounded():
    return CoordSDE(constant_family(lower=-1.0, upper=1.0), make_vol("constant", 0.01), GRID)


def test_coord_series_validation():
    s = CoordSeries(0.5, [[1.0], [2.0], [3.0]])
    np.testing.assert_array_equal(s.times, [0, 0.5, 1.0])
    assert len(s) == 3 and s.n == 1
    with pytest.raises(InvalidArgument):
        CoordSeries(0.0, [[1.0]])
    with pytest.raises(InvalidArgument):
        CoordSeries(0.1, [[np.nan]])
    with pytest.raises(InvalidArgument):
        CoordSeries(0.1, [1.0, 2.0])


# ---------------------------------------------------------------- reconstruction and tangency


def test_reconstruct_examples():
    g0 = GRID.curve(lambda x: 0.01 * np.exp(-x))
    fam = make_affine_family(g0, [GRID.curve(np.ones(GRID.size))])
    assert np.array_equal(reconstruct_curve(fam, [0.0], GRID).values, g0.values)
    assert np.all(reconstruct_curve(make_nelson_siegel(1.0), [1, 0, 0], GRID).values == 1.0)


def test_increment_is_tangent():
    sde = CoordSDE(NS, make_vol("proportional_exp", [0.2, 0.4], 0.3), GRID)
    A, B = coefficients(sde, Z0, ito=False)
    eps = gaussian_increments(2, 0, 1, 2, 0.01)[0]
    inc = GRID.curve((A * 0.01 + B @ eps) @ NS.affine_parts(GRID)[1])
    coords, again = project(inc, NS, Z0)
    np.testing.assert_allclose(again.values, inc.values, atol=1e-10 * np.max(np.abs(inc.values)))
    np.testing.assert_allclose(coords, A * 0.01 + B @ eps, atol=1e-10 * np.max(np.abs(coords)))


@pytest.mark.parametrize("vol", [make_vol("constant", 0.01), make_vol("proportional_exp", 0.3, 0.2),
                                 make_vol("constant", 0.0)])
@pytest.mark.parametrize("weight", [None, "exp_decreasing"])
def test_paired_step_orthogonal(vol, weight):
    w = None if weight is None else make_weight(GRID, weight, 0.1)
    sde = CoordSDE(NS, vol, GRID, w)
    for seed in range(5):
        eps = gaussian_increments(seed, 0, 1, vol.m, 1 / 252)[0]
        assert paired_step(sde, Z0, 1 / 252, eps).max_ratio <= 1e-8


def test_paired_step_rejects_nonlinear_family():
    sde = CoordSDE(make_exp_rate(), make_vol("constant", 0.01), GRID)
    with pytest.raises(InvalidArgument):
        paired_step(sde, [0.04, 0.3], 0.01, [0.1])


def test_custom_volatility_through_finite_differences():
    # sigma(r) = r^2 has Frechet derivative 2 r h; the correction is r^3
    vol = VolatilitySpec(1, lambda R, grid: (R * R)[..., None, :])
    sde = CoordSDE(constant_family(), vol, GRID)
    z = 0.3
    np.testing.assert_allclose(diffusion_coeff(sde, [z]), [[z * z]], rtol=1e-12)
    # B(z) = z^2, so (1/2) B' B = z^3
    np.testing.assert_allclose(ito_correction(sde, [z]), [z**3], rtol=1e-6)


def test_paired_step_residual_matches_grid_oracle():
    sde = CoordSDE(NS, make_vol("proportional_exp", 0.3, 0.2), GRID)
    eps = gaussian_increments(11, 0, 1, 1, 1 / 252)[0]
    out = paired_step(sde, Z0, 1 / 252, eps)
    r1 = out.hjm.values[1]
    np.testing.assert_allclose(out.residual.values, r1 - NS.values(out.z_next, GRID), atol=1e-15)
