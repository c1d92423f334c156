"""Shared oracles for the test suite."""
import numpy as np
import sympy as sp

from mtlab.fields import Grid3, l2_norm
from mtlab.forward import ForwardProblem
from mtlab.material import Bump, MaterialModel

x, y, z = sp.symbols("x y z", real=True)

MMS_OMEGA = 3.0
MMS_MODEL = MaterialModel(1.0, 1.0, (Bump((0.1, 0, 0), 0.6, 0.5, "sigma"),
                                     Bump((0, -0.1, 0.1), 0.6, 0.4, "mu")))


def sym_curl(F):
    return sp.Matrix([sp.diff(F[2], y) - sp.diff(F[1], z), sp.diff(F[0], z) - sp.diff(F[2], x),
                      sp.diff(F[1], x) - sp.diff(F[0], y)])


def sym_coefficient(m, target):
    base = m.sigma0 if target == "sigma" else m.mu0
    e = sp.Float(base)
    for b in m.bumps:
        if b.target == target:
            r2 = sum((v - c) ** 2 for v, c in zip((x, y, z), b.center)) / b.radius ** 2
            e = e + sp.Piecewise((b.amplitude * (1 - r2) ** 3, r2 < 1), (0, True))
    return e


def sample(grid, exprs):
    f = sp.lambdify((x, y, z), list(exprs), "numpy")
    X = grid.mesh()
    return np.stack([np.broadcast_to(np.asarray(v, dtype=complex), grid.n) for v in f(*X)])


def mms_fields(m=MMS_MODEL, omega=MMS_OMEGA):
    """Manufactured H with zero tangential trace on [-1, 1]^3, E = curl H / sigma
    and the magnetic source making (E, H) an exact solution."""
    c = lambda t: sp.cos(sp.pi * t / 2)
    H = sp.Matrix([c(y) * c(z) * sp.exp(x) * (1 + 0.3 * y), c(x) * c(z) * sp.sin(2 * y + z),
                   c(x) * c(y) * (x * y + 1)])
    sig, mu = sym_coefficient(m, "sigma"), sym_coefficient(m, "mu")
    E = sym_curl(H) / sig
    Jm = sym_curl(E) - sp.I * omega * mu * H
    return H, E, Jm


def mms_error(n, m=MMS_MODEL, omega=MMS_OMEGA):
    H, _, Jm = mms_fields(m, omega)
    g = Grid3.cube(n)
    Hx = sample(g, H)
    sol = ForwardProblem(m, omega, g).solve(J_m=sample(g, Jm))
    return l2_norm(sol.H.components - Hx, g) / l2_norm(Hx, g), sol


def observed_orders(errors):
    e = np.asarray(errors)
    return np.log2(e[:-1] / e[1:])


# acceptance results, printed by the terminal-summary hook in conftest.py
ACCEPTANCE = {}


def record(number, title, ok, detail=""):
    ACCEPTANCE[number] = (title, bool(ok), detail)
    print(f"[{number:2d}] {'PASS' if ok else 'FAIL'} {title}: {detail}")
    return ok
