"""Grid, field, and Neumann-operator contracts."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dispersal.errors import BoundaryMinimizer, ValidationError
from dispersal.grids import (
    PhaseDensity,
    ScalarField,
    SpatialGrid,
    TimeIndexedField,
    TraitField,
    TraitGrid,
    argmax_refined,
    argmin_refined,
    default_m,
    integrate,
    laplacian_x,
    laplacian_z,
)


def test_grid_geometry():
    g = SpatialGrid(64)
    assert g.h_x == 1.0 / 64
    assert g.nodes[0] == pytest.approx(g.h_x / 2)
    assert g.nodes[-1] == pytest.approx(1.0 - g.h_x / 2)
    assert np.all(g.nodes > 0.0) and np.all(g.nodes < 1.0)
    assert g.n_x * g.h_x == pytest.approx(1.0)

    t = TraitGrid(128, -0.5, 0.5)
    assert t.h_z == pytest.approx(1.0 / 128)
    assert t.nodes[0] == pytest.approx(-0.5 + t.h_z / 2)


def test_grid_validation():
    with pytest.raises(ValidationError):
        SpatialGrid(4)
    with pytest.raises(ValidationError):
        TraitGrid(8)
    with pytest.raises(ValidationError):
        TraitGrid(32, 1.0, 0.0)


def test_field_validation():
    g = SpatialGrid(8)
    with pytest.raises(ValidationError):
        ScalarField(g, np.ones(9))
    with pytest.raises(ValidationError):
        ScalarField(g, np.array([1.0] * 7 + [np.nan]))
    with pytest.raises(ValidationError):
        PhaseDensity(g, TraitGrid(16), -np.ones((8, 16)))
    f = ScalarField(g, np.arange(8.0))
    with pytest.raises(ValueError):
        f.values[0] = 3.0  # fields are immutable


def test_laplacian_constant_in_kernel():
    g = SpatialGrid(32)
    out = laplacian_x(ScalarField(g, np.full(32, 4.2)))
    assert np.max(np.abs(out.values)) == 0.0
    t = TraitGrid(64)
    outz = laplacian_z(TraitField(t, np.ones(64)))
    assert np.max(np.abs(outz.values)) == 0.0


def test_laplacian_quadratic_interior():
    # direct stencil evaluation: exact second derivative 2.0 away from the walls
    g = SpatialGrid(64)
    f = ScalarField(g, g.nodes**2)
    out = laplacian_x(f).values
    assert np.max(np.abs(out[1:-1] - 2.0)) < 1e-9
    # x^2 has zero slope at the left wall, so the mirror closure is exact there
    assert out[0] == pytest.approx(2.0, abs=1e-9)
    # at the right wall the slope is 2, so the Neumann closure must deviate
    assert abs(out[-1] - 2.0) > 1.0


def test_laplacian_z_cosine():
    t = TraitGrid(128, -0.5, 0.5)
    z = t.nodes
    g = TraitField(t, np.cos(np.pi * (z - t.a)))
    exact = -np.pi**2 * np.cos(np.pi * (z - t.a))
    err128 = np.max(np.abs(laplacian_z(g).values - exact))
    assert err128 < 6e-4  # O(h^2); pi^4 h^2 / 12 ~ 5e-4 at n_z = 128

    t2 = TraitGrid(256, -0.5, 0.5)
    g2 = TraitField(t2, np.cos(np.pi * (t2.nodes - t2.a)))
    exact2 = -np.pi**2 * np.cos(np.pi * (t2.nodes - t2.a))
    err256 = np.max(np.abs(laplacian_z(g2).values - exact2))
    assert 3.0 < err128 / err256 < 5.0  # second-order convergence


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=16, max_value=70), st.integers(min_value=0, max_value=2**32 - 1))
def test_laplacian_green_identity_and_symmetry(n, seed):
    rng = np.random.default_rng(seed)
    t = TraitGrid(n, -0.3, 0.9)
    f = TraitField(t, rng.normal(size=n))
    g = TraitField(t, rng.normal(size=n))
    lf = laplacian_z(f)
    lg = laplacian_z(g)
    # discrete Green identity: the Neumann Laplacian integrates to zero
    scale = max(1.0, np.max(np.abs(lf.values)))
    assert abs(integrate(lf)) < 1e-10 * scale
    # symmetry under the midpoint inner product
    lhs = float(np.dot(lf.values, g.values))
    rhs = float(np.dot(f.values, lg.values))
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-9)


def test_integrate_constant_exact():
    t = TraitGrid(33, 0.0, 1.0)
    assert integrate(TraitField(t, np.ones(33))) == pytest.approx(1.0, abs=1e-14)


def test_integrate_richardson_ratio():
    # midpoint quadrature is second order: halving h divides the error by ~4
    exact = float(np.exp(1.0) - 1.0)

    def err(n):
        t = TraitGrid(n, 0.0, 1.0)
        return abs(integrate(TraitField(t, np.exp(t.nodes))) - exact)

    ratio = err(64) / err(128)
    assert 3.5 < ratio < 4.5


@settings(max_examples=30, deadline=None)
@given(
    st.floats(min_value=0.5, max_value=40.0),
    st.floats(min_value=-0.2, max_value=0.2),
)
def test_argmin_refined_exact_parabola(curv_half, z0):
    t = TraitGrid(64, -0.5, 0.5)
    g = TraitField(t, curv_half * (t.nodes - z0) ** 2)
    z_star, g_star, sigma = argmin_refined(g)
    assert z_star == pytest.approx(z0, abs=1e-9)
    assert g_star == pytest.approx(0.0, abs=1e-9)
    assert sigma == pytest.approx(2.0 * curv_half, rel=1e-9)


def test_argmin_tie_breaks_leftmost():
    t = TraitGrid(16, 0.0, 1.0)
    v = np.full(16, 5.0)
    v[6] = 1.0
    v[7] = 1.0  # two equal discrete minima; node 6 must anchor the fit
    z_star, _, curv = argmin_refined(TraitField(t, v))
    z6 = t.nodes[6]
    h = t.h_z
    # by the 3-point formula around node 6: slope -2/h, curvature 4/h^2
    assert curv == pytest.approx(4.0 / h**2, rel=1e-12)
    assert z_star == pytest.approx(z6 + h / 2, abs=1e-12)


def test_argmin_boundary_rejected():
    t = TraitGrid(16, 0.0, 1.0)
    with pytest.raises(BoundaryMinimizer):
        argmin_refined(TraitField(t, t.nodes))
    with pytest.raises(BoundaryMinimizer):
        argmin_refined(TraitField(t, -t.nodes))


def test_argmax_refined_matches_negated_argmin():
    t = TraitGrid(32, -0.5, 0.5)
    g = TraitField(t, -3.0 * (t.nodes - 0.07) ** 2)
    z_star, g_star, curv = argmax_refined(g)
    assert z_star == pytest.approx(0.07, abs=1e-9)
    assert g_star == pytest.approx(0.0, abs=1e-9)
    assert curv == pytest.approx(-6.0, rel=1e-9)


def test_phase_density_marginals():
    sg, tg = SpatialGrid(8), TraitGrid(16, 0.0, 1.0)
    vals = np.outer(np.arange(1.0, 9.0), np.ones(16))
    n = PhaseDensity(sg, tg, vals, t=0.3)
    rho = n.rho()
    assert rho.values == pytest.approx(np.arange(1.0, 9.0))
    marg = n.z_marginal()
    assert marg.values == pytest.approx(np.full(16, np.arange(1.0, 9.0).mean()))


def test_default_m_satisfies_hypotheses():
    g = SpatialGrid(64)
    m = default_m(g)
    assert m.values.min() > 0.0
    assert m.values.max() > m.values.min()  # nonconstant
    # Neumann-compatible: mirror-ghost Laplacian stays O(1) at the walls
    lap = laplacian_x(m).values
    assert abs(lap[0]) < 10.0 and abs(lap[-1]) < 10.0


def test_time_indexed_field_interpolation():
    times = np.array([0.0, 1.0, 3.0])
    vals = np.array([[0.0, 0.0], [2.0, 4.0], [2.0, 8.0]])
    track = TimeIndexedField(times, vals)
    assert track.at(-1.0) == pytest.approx([0.0, 0.0])  # constant extension
    assert track.at(0.5) == pytest.approx([1.0, 2.0])
    assert track.at(2.0) == pytest.approx([2.0, 6.0])
    assert track.at(9.0) == pytest.approx([2.0, 8.0])
    with pytest.raises(ValidationError):
        TimeIndexedField(np.array([0.0, 0.0]), np.zeros((2, 2)))
