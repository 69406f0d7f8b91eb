from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from curveflow import (
    DegenerateBasis,
    FitFailed,
    IncompatibleGrid,
    InvalidArgument,
    OutOfDomain,
    fit_curve,
    gram_matrix,
    inner_product,
    make_affine_family,
    make_custom_family,
    make_exp_basis,
    make_exp_rate,
    make_grid,
    make_nelson_siegel,
    make_weight,
    norm_h,
    project,
    tangent_basis,
)
from curveflow.manifold import orthonormalize

GRID = make_grid(10.0, 201)
X = GRID.nodes
NS = make_nelson_siegel(0.5)
coord = st.floats(-2.0, 2.0, allow_nan=False)
curve_samples = arrays(np.float64, GRID.size, elements=st.floats(-1.0, 1.0, allow_nan=False))


# ---------------------------------------------------------------- evaluation


def test_affine_single_constant_basis():
    fam = make_affine_family(None, [GRID.curve(np.ones(GRID.size))])
    assert np.all(fam.eval([0.7], GRID).values == 0.7)


def test_nelson_siegel_level():
    np.testing.assert_array_equal(make_nelson_siegel(1.0).eval([1, 0, 0], GRID).values, 1.0)


def test_exp_basis_evaluation():
    np.testing.assert_allclose(make_exp_basis([0.5]).eval([2.0], GRID).values, 2 * np.exp(-0.5 * X))


def test_affine_evaluation_is_exact():
    g0 = GRID.curve(lambda x: 0.01 * np.sin(x))
    basis = [GRID.curve(np.ones(GRID.size)), GRID.curve(lambda x: np.exp(-x))]
    fam = make_affine_family(g0, basis)
    z = np.array([0.3, -1.2])
    expected = g0.values + z[0] * basis[0].values + z[1] * basis[1].values
    np.testing.assert_allclose(fam.eval(z, GRID).values, expected, rtol=0, atol=1e-15)
    assert np.array_equal(fam.eval(np.zeros(2), GRID).values, g0.values)


def test_affine_family_bound_to_its_grid():
    fam = make_affine_family(None, [GRID.curve(np.ones(GRID.size))])
    with pytest.raises(IncompatibleGrid):
        fam.eval([1.0], make_grid(5.0, 201))


def test_out_of_bounds_coordinates():
    fam = make_nelson_siegel(1.0, lower=[0, -1, -1], upper=[1, 1, 1])
    with pytest.raises(OutOfDomain):
        fam.eval([1.5, 0, 0], GRID)
    with pytest.raises(OutOfDomain):
        tangent_basis(fam, [0, 0, 2], GRID)
    with pytest.raises(InvalidArgument):
        fam.eval([0.1, 0.1], GRID)


def test_invalid_constructors():
    with pytest.raises(InvalidArgument):
        make_nelson_siegel(0.0)
    with pytest.raises(DegenerateBasis):
        make_exp_basis([0.5, 0.5])
    with pytest.raises(InvalidArgument):
        make_exp_basis([-1.0])
    with pytest.raises(InvalidArgument):
        make_affine_family(None, [])
    with pytest.raises(InvalidArgument):
        make_nelson_siegel(1.0, lower=1.0, upper=0.0)


# ---------------------------------------------------------------- tangents


def test_nelson_siegel_tangents_analytic():
    lam = 0.7
    T = tangent_basis(make_nelson_siegel(lam), [0.1, 0.2, 0.3], GRID)
    np.testing.assert_allclose(T[0].values, 1.0)
    np.testing.assert_allclose(T[1].values, np.exp(-lam * X))
    np.testing.assert_allclose(T[2].values, X * np.exp(-lam * X))


def test_affine_tangents_independent_of_z():
    a = tangent_basis(NS, [0, 0, 0], GRID)
    b = tangent_basis(NS, [5, -3, 2], GRID)
    for u, v in zip(a, b):
        assert np.array_equal(u.values, v.values)


@settings(max_examples=50, deadline=None)
@given(st.tuples(coord, coord, coord))
def test_finite_difference_tangents_match_nelson_siegel(z):
    fd = NS.without_analytic_tangents()
    for u, v in zip(tangent_basis(NS, z, GRID), tangent_basis(fd, z, GRID)):
        assert np.max(np.abs(u.values - v.values)) <= 1e-7


@settings(max_examples=50, deadline=None)
@given(st.floats(-1.0, 1.0), st.floats(0.05, 5.0))
def test_exp_rate_analytic_vs_finite_difference(z1, z2):
    fam = make_exp_rate()
    fd = make_custom_family(fam.value_fn, 2, lower=fam.lower, upper=fam.upper)
    for u, v in zip(tangent_basis(fam, [z1, z2], GRID), tangent_basis(fd, [z1, z2], GRID)):
        assert np.max(np.abs(u.values - v.values)) <= 1e-7


# ---------------------------------------------------------------- Gram matrices


def test_gram_one_x_unit_interval():
    g = make_grid(1.0, 1001)
    G = gram_matrix([g.curve(np.ones(g.size)), g.curve(lambda x: x)])
    np.testing.assert_allclose(G.lam, [[1, 0.5], [0.5, 1 / 3]], atol=1e-6)
    np.testing.assert_allclose(G.chol @ G.chol.T, G.lam, atol=1e-15)


def test_gram_of_orthonormal_basis_is_identity():
    w = make_weight(GRID, "exp_decreasing", 0.3)
    basis = orthonormalize(tangent_basis(NS, [0, 0, 0], GRID), w)
    np.testing.assert_allclose(gram_matrix(basis, w).lam, np.eye(3), atol=1e-10)


def test_gram_degenerate_basis():
    g = make_grid(1.0, 101)
    with pytest.raises(DegenerateBasis):
        gram_matrix([g.curve(lambda x: x), g.curve(lambda x: 2 * x)])
    with pytest.raises(DegenerateBasis):
        make_affine_family(None, [g.curve(lambda x: x), g.curve(lambda x: 2 * x)])


def test_gram_ill_conditioned_basis_rejected():
    g = make_grid(1.0, 101)
    with pytest.raises(DegenerateBasis):
        gram_matrix([g.curve(lambda x: x), g.curve(lambda x: x + 1e-9 * x**2)])


def test_gram_rejects_mixed_grids():
    with pytest.raises(IncompatibleGrid):
        gram_matrix([GRID.curve(np.ones(GRID.size)), make_grid(1.0, 11).curve(np.ones(11))])


# ---------------------------------------------------------------- projection


def test_project_in_span():
    c = np.array([0.02, -0.5, 1.5])
    v = NS.eval(c, GRID)
    coords, curve = project(v, NS, [0, 0, 0])
    np.testing.assert_allclose(coords, c, atol=1e-9)
    np.testing.assert_allclose(curve.values, v.values, atol=1e-9)


def test_project_orthogonal_input():
    g = make_grid(1.0, 101)
    fam = make_affine_family(None, [g.curve(np.ones(g.size))])
    coords, curve = project(g.curve(lambda x: x - 0.5), fam, [0.0])
    assert np.max(np.abs(coords)) <= 1e-10
    assert np.max(np.abs(curve.values)) <= 1e-10


def test_project_x_onto_constants():
    g = make_grid(1.0, 101)
    fam = make_affine_family(None, [g.curve(np.ones(g.size))])
    coords, curve = project(g.curve(lambda x: x), fam, [0.0])
    np.testing.assert_allclose(coords, [0.5], atol=1e-12)
    np.testing.assert_allclose(curve.values, 0.5, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(curve_samples, st.tuples(st.floats(0.1, 3.0), st.floats(0.05, 2.0)))
def test_projection_properties_nonlinear_family(v, z):
    fam = make_exp_rate()
    V = GRID.curve(v)
    coords, P = project(V, fam, z)
    resid = V - P
    nv = norm_h(V)
    for t in tangent_basis(fam, z, GRID):
        assert abs(inner_product(resid, t)) <= 1e-9 * nv * norm_h(t) + 1e-300
    assert norm_h(P) <= nv * (1 + 1e-9)
    again, _ = project(P, fam, z)
    np.testing.assert_allclose(again, coords, atol=1e-10 * (1 + np.abs(coords).max()))


def test_projection_weight_sensitivity():
    g = make_grid(1.0, 401)
    fam = make_affine_family(None, [g.curve(np.ones(g.size)), g.curve(lambda x: x)])
    v = g.curve(lambda x: x**2)
    c1, _ = project(v, fam, [0, 0], make_weight(g, "constant"))
    c2, _ = project(v, fam, [0, 0], make_weight(g, "exp_decreasing", 1.0))
    assert np.max(np.abs(c1 - c2)) >= 1e-3
    np.testing.assert_allclose(c1, [-1 / 6, 1.0], atol=1e-5)


# ---------------------------------------------------------------- fitting


def test_fit_recovers_affine_coordinates():
    z_star = np.array([0.04, -0.02, 0.01])
    assert np.allclose(fit_curve(NS.eval(z_star, GRID), NS, [0, 0, 0]), z_star, atol=1e-9, rtol=0)


def test_fit_ignores_orthogonal_component():
    z_star = np.array([0.04, -0.02, 0.01])
    noise = GRID.curve(lambda x: np.cos(3 * x))
    coords, proj = project(noise, NS, z_star)
    orth = noise - proj
    np.testing.assert_allclose(fit_curve(NS.eval(z_star, GRID) + orth, NS, [0, 0, 0]), z_star, atol=1e-9)


def test_fit_nelson_siegel_example():
    fam = make_nelson_siegel(1.0)
    target = GRID.curve(lambda x: 0.03 + 0.01 * np.exp(-x))
    np.testing.assert_allclose(fit_curve(target, fam, [0, 0, 0]), [0.03, 0.01, 0.0], atol=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.tuples(coord, coord, coord), st.sampled_from([None, "exp_decreasing"]))
def test_fit_agrees_with_projection(z, kind):
    w = None if kind is None else make_weight(GRID, kind, 0.2)
    target = GRID.curve(lambda x: np.sin(x) + z[0] + z[1] * x / 10 + z[2] * np.exp(-x))
    fitted = fit_curve(target, NS, [0, 0, 0], w)
    coords, _ = project(target, NS, list(z), w)
    np.testing.assert_allclose(fitted, coords, atol=1e-9)


def test_fit_gauss_newton_exp_rate():
    fam = make_exp_rate()
    target = fam.eval([0.05, 0.8], GRID)
    np.testing.assert_allclose(fit_curve(target, fam, [0.01, 0.2]), [0.05, 0.8], atol=1e-9)


def test_fit_gauss_newton_no_convergence_reports_best():
    fam = make_exp_rate()
    target = GRID.curve(lambda x: np.sin(3 * x))
    with pytest.raises(FitFailed) as err:
        fit_curve(target, fam, [1.0, 1.0], max_iter=2)
    assert err.value.best.shape == (2,)
    assert err.value.iterations == 2


def test_fit_affine_outside_bounds():
    fam = make_nelson_siegel(1.0, lower=[0, -1, -1], upper=[1, 1, 1])
    with pytest.raises(FitFailed):
        fit_curve(GRID.curve(np.full(GRID.size, 5.0)), fam, [0.5, 0, 0])


def test_fit_round_trip_affine_reconstruction():
    from curveflow import reconstruct_curve

    z = np.array([0.03, 0.002, -0.004])
    np.testing.assert_allclose(fit_curve(reconstruct_curve(NS, z, GRID), NS, [0, 0, 0]), z, atol=1e-9)
