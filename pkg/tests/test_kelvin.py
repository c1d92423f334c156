import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mtlab.errors import PreconditionError, SingularityError
from mtlab.fields import Grid3
from mtlab.kelvin import (ConformalMap, ball_defining_function, cross_product_lemma,
                          curl_transformation, fd_jacobian, jacobian, jacobian_identities,
                          kelvin_jacobian, kelvin_point, normal_law, residual_law,
                          sphere_points, trace_law, transform_material)
from mtlab.material import Bump, MaterialModel

from support import observed_orders

BALL_MODEL = MaterialModel(1, 1, (Bump((0, 0, 0.5), 0.2, 0.5, "sigma"),
                                  Bump((0.02, 0, 0.45), 0.2, 0.3, "mu")))


def _u(x):
    return np.stack([np.sin(x[1]) * x[2], np.cos(x[0]) + x[2] ** 2, x[0] * x[1]]).astype(complex)


def _v(x):
    return np.stack([x[2], np.exp(0.3 * x[0]), x[1] ** 2]).astype(complex)


def _E(x):
    return np.stack([np.exp(1j * x[2]), x[0] * x[1], np.sin(x[0])]).astype(complex)


def _random_points(seed=0, shift=(0.0, 0.0, 0.0)):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(3, 100)) + np.asarray(shift)[:, None]


def test_kelvin_point_values():
    assert np.allclose(kelvin_point(np.array([2.0, 0.0, 0.0])), [0.5, 0, 0])
    y = _random_points(1)
    assert np.allclose(kelvin_point(kelvin_point(y)), y, rtol=1e-14)
    assert np.allclose(np.linalg.norm(kelvin_point(y), axis=0), 1 / np.linalg.norm(y, axis=0))


def test_kelvin_singularity():
    with pytest.raises(SingularityError):
        kelvin_point(np.zeros(3))
    with pytest.raises(SingularityError):
        kelvin_jacobian(np.zeros(3))
    F = ConformalMap.sphere_to_halfspace()
    with pytest.raises(SingularityError):
        jacobian(F, np.array(F.pole))


@pytest.mark.parametrize("kind", ["sphere_to_halfspace", "centre_inversion"])
def test_jacobian_identities(kind):
    F = getattr(ConformalMap, kind)()
    d = jacobian_identities(F, _random_points(2))
    assert d["det"] <= 1e-10
    assert d["orthogonality"] <= 1e-10
    assert d["symmetry"] <= 1e-10
    assert d["inverse"] <= 1e-10


def test_centre_inversion_unit_determinant():
    P = ConformalMap.centre_inversion()
    assert P.det(np.array([0.0, 0.0, -1.0])) == pytest.approx(1.0, abs=1e-14)


def test_jacobian_matches_finite_differences():
    F = ConformalMap.sphere_to_halfspace()
    y = _random_points(3)
    J = F.DF(y)
    scale = np.abs(J).max(axis=(0, 1))
    assert (np.abs(fd_jacobian(F, y) - J).max(axis=(0, 1)) / scale).max() < 1e-7


def test_sphere_maps_to_plane():
    F = ConformalMap.sphere_to_halfspace()
    x = sphere_points(200)
    y = F.Finv(x)
    assert np.abs(y[2]).max() < 1e-12
    assert np.abs(F.F(y) - x).max() < 1e-12
    # an interior point of the ball lands in the lower half space
    assert F.Finv(np.array([[0.1], [0.05], [0.5]]))[2, 0] < 0


def test_reflection_composite_fixes_sphere():
    S = ConformalMap.reflection_composite()
    x = sphere_points(50, seed=4)
    assert np.abs(S.F(x) - x).max() < 1e-12


def test_functoriality():
    # the Jacobian of a composition is the product of the Jacobians
    F = ConformalMap.sphere_to_halfspace()
    R = ConformalMap.rigid(0.7 * np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]),
                           (0.1, -0.2, 0.3))
    C = F.compose(R)
    y = _random_points(5)
    assert np.abs(C.F(y) - F.F(R.F(y))).max() < 1e-13
    assert np.abs(fd_jacobian(C, y) - C.DF(y)).max() < 1e-6
    assert np.abs(C.Finv(C.F(y)) - y).max() < 1e-10


@settings(max_examples=30, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3), c=st.floats(-3, 3))
def test_kelvin_jacobian_conformal(a, b, c):
    z = np.array([a, b, c])
    r2 = z @ z
    if r2 < 1e-4:
        return
    J = kelvin_jacobian(z)
    assert np.allclose(J @ J.T, np.eye(3) / r2 ** 2, rtol=1e-12, atol=1e-12 / r2 ** 2)
    assert np.linalg.det(J) == pytest.approx(-r2 ** -3, rel=1e-10)


def test_cross_product_lemma():
    F = ConformalMap.sphere_to_halfspace()
    y = _random_points(6, shift=(0, 0, -1.5))
    assert cross_product_lemma(F, _u, _v, y) < 1e-8


def _box(n):
    return Grid3((-0.3, -0.3, -1.3), (0.6, 0.6, 0.6), (n, n, n))


def test_curl_law_second_order():
    F = ConformalMap.sphere_to_halfspace()
    errs = [curl_transformation(F, _u, _box(n))["relative"] for n in (9, 17, 33)]
    assert errs[0] > errs[1] > errs[2]
    assert min(observed_orders(errs)) > 1.8


@pytest.mark.parametrize("law", ["faraday", "ampere"])
def test_residual_law_second_order(law):
    F = ConformalMap.sphere_to_halfspace()
    errs = [residual_law(F, BALL_MODEL, _E, _u, 2.0, _box(n), law=law)["relative"]
            for n in (9, 17, 33)]
    assert errs[0] > errs[1] > errs[2]
    assert min(observed_orders(errs)) > 1.8


def test_material_factor():
    F = ConformalMap.sphere_to_halfspace()
    y = _random_points(7, shift=(0, 0, -1.5))
    pm = transform_material(BALL_MODEL, F)
    assert np.allclose(pm.factor(y), F.pole_distance(y) ** -2, rtol=1e-12)
    assert np.allclose(pm.sigma(y), F.pole_distance(y) ** -2 * BALL_MODEL.sigma(F.F(y)))
    with pytest.raises(PreconditionError):
        transform_material(BALL_MODEL, ConformalMap.reflection_composite())


def _ball_boundary_points(seed=8):
    F = ConformalMap.sphere_to_halfspace()
    c, R = np.array([0.0, 0.0, 0.5]), 0.2
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(3, 50))
    x = c[:, None] + R * v / np.linalg.norm(v, axis=0)
    return F, ball_defining_function(c, R), F.Finv(x)


def test_normal_law():
    F, (rho, grad_rho), y = _ball_boundary_points()
    assert normal_law(F, grad_rho, y) < 1e-12


def test_trace_law_second_order():
    F, (rho, grad_rho), y = _ball_boundary_points()
    errs = [trace_law(F, _u, rho, grad_rho, y, h)["relative"] for h in (1e-2, 5e-3, 2.5e-3)]
    assert errs[0] > errs[1] > errs[2]
    assert min(observed_orders(errs)) > 1.8
