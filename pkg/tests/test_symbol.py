import warnings

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp

from mtlab.errors import GuardError, SingularFrequencyError, StructureWarning
from mtlab.fields import Grid3
from mtlab.forward import impedance_map
from mtlab.material import Bump, MaterialModel
from mtlab.symbol import (LayeredModel, apparent_resistivity, boundary_matrices,
                          exact_halfspace_symbol, factorization_probe, layered_impedance,
                          layered_sounding, principal_symbol_B, principal_symbol_Z,
                          recover_boundary_sigma, sounding, synthetic_impedance,
                          write_sounding_csv, z_symbol)


class LinearLogModel:
    """alpha = a.x and beta = b.x: constant log-gradients."""

    def __init__(self, a, b):
        self.a, self.b = np.asarray(a, float), np.asarray(b, float)

    def grad_log(self, target, x):
        return (self.a if target == "sigma" else self.b).reshape(3, 1)


# --- principal symbol ---------------------------------------------------------------

def test_symbol_example():
    assert np.array_equal(principal_symbol_Z(2.0, (1.0, 0.0)), 0.5 * np.array([[0, 0], [-1, 0]]))


@settings(max_examples=50, deadline=None)
@given(s=st.floats(0.1, 10), x1=st.floats(-5, 5), x2=st.floats(-5, 5), lam=st.floats(0.1, 10))
def test_symbol_algebra(s, x1, x2, lam):
    if np.hypot(x1, x2) < 1e-3:
        return
    P = principal_symbol_Z(s, (x1, x2))
    scale = np.abs(P).max() ** 2
    assert np.abs(P @ P).max() <= 1e-14 * max(scale, 1e-300)
    assert abs(np.trace(P)) <= 1e-14 * np.abs(P).max()
    assert abs(np.linalg.det(P)) <= 1e-14 * max(scale, 1e-300)
    assert np.allclose(principal_symbol_Z(s, (lam * x1, lam * x2)), lam * P, rtol=1e-13, atol=0)


def test_symbol_singular_frequency():
    with pytest.raises(SingularFrequencyError):
        principal_symbol_Z(1.0, (0.0, 0.0))
    with pytest.raises(SingularFrequencyError):
        principal_symbol_B((0.0, 0.0))


def test_symbol_matrix_wrapper():
    S = z_symbol(3.0)
    assert S.degree == 1.0
    assert np.array_equal(S((0.6, 0.8)), principal_symbol_Z(3.0, (0.6, 0.8)))
    assert np.array_equal(principal_symbol_B((3.0, 4.0)), -5 * np.eye(3))


def test_exact_symbol_tends_to_principal():
    devs = []
    for r in (4.0, 16.0, 64.0):
        xi = r * np.array([0.6, 0.8])
        P = principal_symbol_Z(2.0, xi)
        devs.append(np.abs(exact_halfspace_symbol(2.0, 1.0, 1.0, xi) - P).max() / np.abs(P).max())
    assert devs[0] > devs[1] > devs[2]
    assert devs[2] < 1e-3


# --- M and N ----------------------------------------------------------------------------

def test_matrices_vanish_for_constant_coefficients():
    M, N = boundary_matrices(MaterialModel.constant(2.0, 3.0), (0.0, 0.0, 0.0))
    assert not np.any(M((1.3, -0.4))) and not np.any(N)


def test_matrix_entries_for_exponential_sigma():
    # sigma = e^{x1}: the only nonzero log-gradient is d1 alpha = 1
    M, N = boundary_matrices(LinearLogModel((1, 0, 0), (0, 0, 0)), (0, 0, 0))
    m = M((1.0, 0.0))
    assert m[0, 0] == 0
    assert m[1, 0] == 0
    assert m[1, 1] == -1 and m[2, 2] == -1
    assert M((0.0, 1.0))[1, 0] == 1
    assert np.array_equal(N[2], [1, 0, 0])


def test_n33_for_exponential_mu():
    model = LinearLogModel((0, 0, 0), (0, 0, 1))
    assert boundary_matrices(model, (0, 0, 0))[1][2, 2] == -1
    assert boundary_matrices(model, (0, 0, 0), form="operator")[1][2, 2] == 1


def test_operator_form_matches_symbolic_operator():
    # with linear alpha, beta the plane wave c e^{i xi.x} is mapped to
    # (|xi|^2 - i M(xi') - i N xi3) c e^{i xi.x} by the first- and second-order part
    X = sp.symbols("x1:4", real=True)
    a = [sp.Rational(3, 7), sp.Rational(-2, 7), sp.Rational(5, 7)]
    b = [sp.Rational(-4, 5), sp.Rational(1, 5), sp.Rational(6, 5)]
    xi = [sp.Rational(5, 3), sp.Rational(-2, 3), sp.Rational(7, 3)]
    c = sp.Matrix([1, 2 - sp.I, sp.Rational(1, 2)])
    alpha = sum(ai * v for ai, v in zip(a, X))
    beta = sum(bi * v for bi, v in zip(b, X))
    ph = sp.exp(sp.I * sum(k * v for k, v in zip(xi, X)))
    H = c * ph
    grad = lambda f: sp.Matrix([sp.diff(f, v) for v in X])
    curl = lambda F: sp.Matrix([sp.diff(F[2], X[1]) - sp.diff(F[1], X[2]),
                                sp.diff(F[0], X[2]) - sp.diff(F[2], X[0]),
                                sp.diff(F[1], X[0]) - sp.diff(F[0], X[1])])
    lap = sp.Matrix([sum(sp.diff(H[i], v, 2) for v in X) for i in range(3)])
    L = sp.simplify((-lap - grad((grad(beta).T * H)[0]) - grad(alpha).cross(curl(H))) / ph)
    Lnum = np.array([complex(v) for v in L])
    cn = np.array([complex(v) for v in c])
    xf = np.array([float(v) for v in xi])
    model = LinearLogModel([float(v) for v in a], [float(v) for v in b])
    M, N = boundary_matrices(model, (0, 0, 0), form="operator")
    pred = (xf @ xf) * cn - 1j * (M(xf[:2]) + N * xf[2]) @ cn
    assert np.abs(Lnum - pred).max() < 1e-12
    Mp, Np = boundary_matrices(model, (0, 0, 0))
    assert np.array_equal(Mp((0.3, 0.7)), M((0.3, 0.7)))


# --- factorization probe -----------------------------------------------------------------

@pytest.fixture(scope="module")
def probe_constant():
    return factorization_probe(MaterialModel.constant(1, 1), (0.1, 0.2, -1), [4, 8, 16],
                               Grid3.cube(64, -1, 1))


def test_probe_matches_oracle(probe_constant):
    r = probe_constant
    assert r.decreasing
    assert np.all(np.abs(r.deviation / r.oracle - 1) < 0.05)


def test_probe_slope(probe_constant):
    # at least first-order decay in 1/|xi'|
    assert probe_constant.slope < -0.9


def test_probe_variable_coefficients():
    m = MaterialModel(1, 1, (Bump((0.4, 0.2, -1.2), 0.7, 1.5, "sigma"),), support_radius=2.0)
    r = factorization_probe(m, (0.1, 0.2, -1), [4, 8, 16], Grid3.cube(64, -1, 1))
    assert r.decreasing
    assert np.all(np.isnan(r.oracle))


def test_probe_guard():
    with pytest.raises(GuardError):
        factorization_probe(MaterialModel.constant(), (0, 0, -1), [40.0], Grid3.cube(17, -1, 1))


# --- boundary sigma ----------------------------------------------------------------------

def test_synthetic_round_trip():
    g = Grid3.cube(17, -1, 1)
    est = recover_boundary_sigma(synthetic_impedance(2.5, g, 4), "z-", g)
    assert np.allclose(est.estimates, 2.5, rtol=1e-12)
    assert est.top_mode == (4, 4)


@pytest.fixture(scope="module")
def boundary_estimates():
    g = Grid3.cube(17, -1, 1)
    models = {"one": MaterialModel.constant(1, 1), "two": MaterialModel.constant(2, 1),
              "mu": MaterialModel(1, 1, (Bump((0, 0, -1.0), 0.8, 0.5, "mu"),), support_radius=2.0)}
    return {k: recover_boundary_sigma(impedance_map(m, 1.0, 3, g, faces=("z-",)), "z-", g)
            for k, m in models.items()}


def test_boundary_sigma_within_tolerance(boundary_estimates):
    e = boundary_estimates["one"]
    assert abs(e.sigma - 1.0) <= 0.1
    assert e.top_mode == (3, 3)
    # error decreases with frequency
    err = np.abs(e.estimates - 1.0)
    assert err[0] > err[1] > err[2]


def test_boundary_sigma_ratio(boundary_estimates):
    ratio = boundary_estimates["two"].sigma / boundary_estimates["one"].sigma
    assert abs(ratio - 2.0) <= 0.2


def test_boundary_sigma_ignores_mu(boundary_estimates):
    assert abs(boundary_estimates["mu"].sigma - boundary_estimates["one"].sigma) <= 0.1
    assert abs(boundary_estimates["mu"].sigma - 1.0) <= 0.1


def test_boundary_sigma_guard():
    g = Grid3.cube(17, -1, 1)
    with pytest.raises(GuardError):
        recover_boundary_sigma(synthetic_impedance(1.0, g, 2), "z-", g, resolve_limit=1e-3)


# --- apparent resistivity --------------------------------------------------------------

def _column_oracle(sigmas, thicknesses, omega, mu=1.0):
    """Native-convention surface impedance by integrating H' = sigma P,
    P' = -i omega mu H upward layer by layer from the decaying mode of the
    bottom half-space; Z = -P(0)/H(0)."""
    edges = np.concatenate([[0.0], np.cumsum(thicknesses)])
    gam = np.sqrt(-1j * omega * mu * sigmas[-1])
    y = np.array([1.0, -gam / sigmas[-1]], dtype=complex)
    for j in range(len(sigmas) - 2, -1, -1):
        s = sigmas[j]
        rhs = lambda z, v, s=s: np.array([s * v[1], -1j * omega * mu * v[0]])
        y = solve_ivp(rhs, (edges[j + 1], edges[j]), y, rtol=1e-11, atol=1e-13).y[:, -1]
    return -y[1] / y[0]


@pytest.mark.parametrize("omega", [0.5, 4.0, 30.0])
def test_layered_recursion_matches_bvp(omega):
    sigmas, th = [1.0, 0.1, 3.0], [0.4, 0.7]
    z = layered_impedance(sigmas, th, omega, convention="native")
    assert z == pytest.approx(_column_oracle(sigmas, th, omega), rel=1e-4)


def test_half_space_recursion():
    z = layered_impedance([2.0], [], 3.0)
    assert z == pytest.approx(np.sqrt(3j / 2.0))
    assert apparent_resistivity(z, 3.0) == pytest.approx(0.5)


def test_resistivity_scaling():
    rows1 = layered_sounding([1.0, 0.1], [0.5], [1.0, 4.0, 16.0])
    rows2 = layered_sounding([3.0, 0.3], [0.5], [1.0, 4.0, 16.0])
    # sigma -> c sigma changes depths too, so compare on a uniform model
    u1 = layered_sounding([1.0], [], [2.0])[0][1]
    u3 = layered_sounding([3.0], [], [2.0])[0][1]
    assert u3 == pytest.approx(u1 / 3)
    assert all(r2[1] < r1[1] for r1, r2 in zip(rows1, rows2))


def test_sounding_half_space():
    g = Grid3((-0.5, -0.5, 0.0), (1.0, 1.0, 1.0), (9, 9, 161))
    rows = sounding(LayeredModel((2.0,)), [1.0, 4.0], g)
    for w, rho, phase in rows:
        assert rho == pytest.approx(0.5, rel=0.05)
        assert phase == pytest.approx(45.0, abs=2.0)


def test_sounding_two_layer():
    g = Grid3((-0.5, -0.5, 0.0), (1.0, 1.0, 1.0), (9, 9, 161))
    omegas = [1.0, 4.0, 16.0]
    rows = sounding(LayeredModel((1.0, 0.1), (0.5,), 0.0, 0.0125), omegas, g)
    ref = layered_sounding([1.0, 0.1], [0.5], omegas)
    for r, q in zip(rows, ref):
        assert r[1] == pytest.approx(q[1], rel=0.05)


def test_structure_warning():
    with pytest.warns(StructureWarning):
        apparent_resistivity(np.array([[0.5, 1.0], [-1.0, 0.0]]), 1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        rho = apparent_resistivity(np.array([[0.0, 1 + 1j], [-1 - 1j, 0.0]]), 2.0)
    assert rho == pytest.approx(1.0)


def test_sounding_csv(tmp_path):
    rows = layered_sounding([1.0], [], [1.0, 2.0])
    p = tmp_path / "s.csv"
    write_sounding_csv(p, rows)
    lines = p.read_text().splitlines()
    assert lines[0] == "omega,rho_a,phase"
    assert len(lines) == 3
