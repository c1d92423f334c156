import numpy as np
import pytest
import sympy as sp

from mtlab.cgo import STANDARD_MOLLIFIER_RADIUS, periodic_grid
from mtlab.errors import ExtensionError, GeometryError, PreconditionError
from mtlab.fields import Grid3, ScalarField3, VectorField3, l2_norm
from mtlab.material import Bump, MaterialModel
from mtlab.mirror import (build_reflected_cgo, check_even, even_extension, folded_limit,
                          is_symmetric, local_integral_identity, mirror_grid, mirror_phase,
                          oscillatory_integral, phase_split, plane_index, reflect,
                          reflect_array, reflected_pair, reflection_identities)

from support import sample, x, y, z

LOWER1 = MaterialModel(1, 1, (Bump((0.05, -0.03, -0.2), 0.18, 0.6, "sigma"),
                              Bump((-0.05, 0.04, 0.0), 0.25, 0.4, "mu")))
M2 = MaterialModel(1, 1, (Bump((-0.04, 0.05, 0.0), 0.28, 0.3, "sigma"),
                          Bump((-0.05, 0.04, 0.0), 0.25, 0.4, "mu")))


def _sym_grid(n=(6, 7, 9)):
    return Grid3((-0.4, -0.6, -0.8), (1.0, 1.3, 1.6), n)


def test_grid_symmetry_checks():
    assert is_symmetric(_sym_grid())
    assert plane_index(_sym_grid()) == 4
    assert plane_index(_sym_grid((6, 7, 8))) is None
    assert not is_symmetric(Grid3.cube(8, -0.5, 0.7))
    with pytest.raises(GeometryError):
        reflect(ScalarField3(Grid3.cube(8, -0.5, 0.7), np.zeros((8, 8, 8))))
    with pytest.raises(GeometryError):
        mirror_grid((16, 16, 64))


def test_reflection_identities_exact_on_quadratics():
    g = _sym_grid()
    beta = sp.Matrix([x * z + 2 * z ** 2 - y + 0.5 * x * y])
    X = sp.Matrix([x * y - z ** 2, 3 * y * z + x, z ** 2 - x * z + 2 * y])
    b = ScalarField3(g, sample(g, beta)[0])
    u = VectorField3(g, sample(g, X))
    d = reflection_identities(b, u)
    scale = np.abs(u.components).max() / g.h.min()
    assert d["product"] == 0
    assert d["grad"] <= 1e-12 * scale
    assert d["curl"] <= 1e-12 * scale


def test_reflection_is_involution():
    g = _sym_grid()
    rng = np.random.default_rng(0)
    u = VectorField3(g, rng.standard_normal((3,) + g.n) + 1j * rng.standard_normal((3,) + g.n))
    assert np.array_equal(reflect(reflect(u)).components, u.components)
    # an even scalar is unchanged
    b = sample(g, [x ** 2 + z ** 2 * y])[0]
    assert np.allclose(reflect_array(b, False), b, atol=1e-14)


def test_reflection_preserves_norm():
    g = _sym_grid()
    rng = np.random.default_rng(1)
    u = rng.standard_normal((3,) + g.n)
    assert l2_norm(reflect_array(u), g) == pytest.approx(l2_norm(u, g), rel=1e-14)


def test_even_extension():
    g = mirror_grid((16, 16, 63))
    m = even_extension(LOWER1)
    assert len(m.bumps) == 3
    assert check_even(m, g) <= 1e-12
    assert np.allclose(m.sigma(g)[..., : g.n[2] // 2], LOWER1.sigma(g)[..., : g.n[2] // 2])
    with pytest.raises(ExtensionError):
        check_even(LOWER1, g)
    with pytest.raises(ExtensionError):
        even_extension(MaterialModel(1, 1, (Bump((0, 0, -0.1), 0.3, 0.5),)))


def test_phase_split_frequencies():
    ps = phase_split(mirror_phase(10, xi=(0.0, 0.0, 0.0)))
    assert np.allclose(ps.xi_tilde_plus, [0, 0, 20])
    assert np.allclose(ps.xi_tilde_minus, [0, 0, -20])
    with pytest.raises(GeometryError):
        from mtlab.cgo import standard_phase
        phase_split(standard_phase(8))


def test_eta_times_tau_is_constant():
    vals = [abs(phase_split(mirror_phase(t)).eta_rate) * t for t in (10.0, 100.0, 1000.0)]
    assert max(vals) / min(vals) - 1 <= 0.1
    # eta is linear in depth
    ps = phase_split(mirror_phase(50.0), x3=(-0.1, -0.4))
    assert ps.eta_plus[1] == pytest.approx(4 * ps.eta_plus[0])
    assert ps.eta_sup(0.4) == pytest.approx(abs(ps.eta_plus[1]))


def test_riemann_lebesgue_decay():
    g = periodic_grid(2.0, 64)
    r2 = g.radius_squared()
    f = np.where(r2 < 0.25, (1 - r2 / 0.25) ** 3, 0.0)
    vals = [abs(oscillatory_integral(f, g, (0.0, 0.0, k))) for k in (0.0, 10.0, 20.0, 40.0)]
    assert vals[0] > vals[1] > vals[2] > vals[3]


@pytest.fixture(scope="module")
def reflected_small():
    m1 = even_extension(LOWER1)
    g = mirror_grid((16, 16, 63))
    R = build_reflected_cgo(m1, mirror_phase(8).member(1), g, 1.0, 0.0,
                            mollifier_radius=STANDARD_MOLLIFIER_RADIUS)
    return m1, g, R


def test_reflected_trace_vanishes(reflected_small):
    _, g, R = reflected_small
    j = plane_index(g)
    assert R.diagnostics["trace_leakage"] <= 1e-2
    assert np.abs(R.combined.components[:2, :, :, j]).max() <= 1e-12 * np.abs(R.combined.components).max()


def test_reflected_trace_between_nodes():
    m1 = even_extension(LOWER1)
    g = periodic_grid(1.5, (16, 16, 64), center=(0.0, 0.0, 1.5 / 128))
    assert plane_index(g) is None and is_symmetric(g)
    R = build_reflected_cgo(m1, mirror_phase(8).member(1), g, 1.0, 0.0,
                            mollifier_radius=STANDARD_MOLLIFIER_RADIUS)
    assert R.diagnostics["trace_leakage"] <= 1e-2


def test_reflected_residuals(reflected_small):
    _, _, R = reflected_small
    d = R.diagnostics
    assert d["residual_original"] < 2e-2
    assert d["residual_combined"] < 2e-2
    assert d["reflection_defect"] < 2e-2


def test_reflected_requires_even_material():
    g = mirror_grid((16, 16, 63))
    with pytest.raises(ExtensionError):
        build_reflected_cgo(LOWER1, mirror_phase(8).member(1), g, 1.0)


def test_local_identity_zero_for_identical(reflected_small):
    m1, _, R = reflected_small
    rep = local_integral_identity(m1, m1, R, R, 1.0)
    assert rep.value == 0


def test_local_identity_rejects_trace(reflected_small):
    m1, g, R = reflected_small
    with pytest.raises(PreconditionError):
        local_integral_identity(m1, M2, R.original, R.combined, 1.0)


def test_folded_limit_ladder():
    m1 = even_extension(LOWER1)
    g = mirror_grid()
    xi = (0.0, 2.0, 0.0)
    lim = folded_limit(m1, M2, xi, 1.0, 0.5)
    errs = []
    for tau in (8, 32, 128):
        R1, R2 = reflected_pair(m1, M2, mirror_phase(tau, xi), g, 1.0, 0.5,
                                mollifier_radius=STANDARD_MOLLIFIER_RADIUS)
        v = local_integral_identity(m1, M2, R1, R2, 1.0).value / tau ** 2
        errs.append(abs(v - lim) / abs(lim))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 2e-2
