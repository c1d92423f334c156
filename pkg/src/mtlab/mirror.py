"""Reflection across the plane {x3 = 0} and CGO fields with vanishing trace on it.

For a field X the reflection is X*(x) = (X1, X2, -X3)(x1, x2, -x3).  A CGO
H~ and its reflection solve the same equation when the coefficients are even
in x3, and H~ - H~* has zero tangential trace on the plane, so it can be used
with boundary data supported away from the plane.

When rho2 has no x3 component the real growth factor e^{-kappa.x} of a CGO,
kappa = (Im zeta_1, Im zeta_2, 0), is even in x3.  Reflected fields are
therefore stored without it: the physical field is e^{-kappa.x} times the
stored one, and the factors of a pair cancel in the bilinear identity.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cgo import (CgoSolution, PhasePair, Phase, TwistedSpectral, build_cgo, conjugated_residual,
                  cross, periodic_grid)
from .errors import ExtensionError, GeometryError, PreconditionError
from .fields import Grid3, ScalarField3, VectorField3, curl_array, grad_array, integrate
from .identity import IdentityReport, _integrate_with_error, quadrature_grid
from .material import Bump, MaterialModel

TRACE_TOL = 1e-2
SYMMETRY_TOL = 1e-9
SIGNS = np.array([1.0, 1.0, -1.0])


# --- reflections -------------------------------------------------------------

def is_symmetric(grid: Grid3, tol=SYMMETRY_TOL) -> bool:
    """True when the x3 node set is invariant under x3 -> -x3."""
    lo, ext = grid.origin[2], grid.extent[2]
    return abs(2 * lo + ext) <= tol * ext


def check_symmetric(grid: Grid3) -> None:
    if not is_symmetric(grid):
        lo = grid.origin[2]
        raise GeometryError(f"grid x3 range [{lo:.6g}, {lo + grid.extent[2]:.6g}] "
                            "is not symmetric under x3 -> -x3")


def plane_index(grid: Grid3, tol=SYMMETRY_TOL):
    """Index of the node plane x3 = 0, or None when the plane falls between nodes."""
    k = -grid.origin[2] / grid.h[2]
    j = int(round(k))
    return j if abs(k - j) <= tol * max(1.0, abs(k)) and 0 <= j < grid.n[2] else None


def reflect_vector(v) -> np.ndarray:
    """(v1, v2, -v3) for a constant 3-vector."""
    return np.asarray(v) * SIGNS


def _flip(u):
    return np.flip(u, axis=-1)


def reflect_array(u: np.ndarray, vector: bool | None = None) -> np.ndarray:
    """Reflection of sampled values; arrays of shape (3, ...) are vectors unless told otherwise."""
    u = np.asarray(u)
    if vector is None:
        vector = u.ndim == 4 and u.shape[0] == 3
    if not vector:
        return _flip(u).copy()
    return _flip(u) * SIGNS.reshape((3,) + (1,) * (u.ndim - 1))


def reflect(f):
    """beta*(x) = beta(x1, x2, -x3) and X*(x) = (X1, X2, -X3)(x1, x2, -x3)."""
    if isinstance(f, ScalarField3):
        check_symmetric(f.grid)
        return ScalarField3(f.grid, reflect_array(f.values, False))
    if isinstance(f, VectorField3):
        check_symmetric(f.grid)
        return VectorField3(f.grid, reflect_array(f.components, True))
    return reflect_array(f)


def reflect_jacobian(da: np.ndarray) -> np.ndarray:
    """Reflect a field of derivatives da[j][c] = d_j a_c (shape (3, 3, ...))."""
    s = (SIGNS[:, None] * SIGNS[None, :]).reshape((3, 3) + (1,) * (da.ndim - 2))
    return _flip(da) * s


def reflection_identities(beta: ScalarField3, X: VectorField3) -> dict:
    """Sup-norm defects of grad b* = (grad b)*, (bX)* = b*X*, curl X* = -(curl X)*."""
    check_symmetric(X.grid)
    h = X.grid.h
    b, x = beta.values, X.components
    bs, xs = reflect_array(b, False), reflect_array(x, True)
    d_grad = grad_array(bs, h) - reflect_array(grad_array(b, h), True)
    d_prod = reflect_array(b * x, True) - bs * xs
    d_curl = curl_array(xs, h) + reflect_array(curl_array(x, h), True)
    return {"grad": float(np.max(np.abs(d_grad))), "product": float(np.max(np.abs(d_prod))),
            "curl": float(np.max(np.abs(d_curl)))}


# --- even extension ------------------------------------------------------------------

def even_extension(m: MaterialModel, plane: float = 0.0, tol: float = 1e-12) -> MaterialModel:
    """Add the mirror image of every bump lying below the plane x3 = ``plane``.

    A bump centred on the plane is its own mirror image and is kept once.  A
    bump that crosses the plane off-centre, or lies above it, has no even
    extension that agrees with it below the plane.
    """
    bumps = []
    for b in m.bumps:
        c3 = b.center[2] - plane
        if abs(c3) <= tol:
            bumps.append(b)
        elif c3 + b.radius <= tol:
            bumps.append(b)
            c = (b.center[0], b.center[1], plane - c3)
            bumps.append(Bump(c, b.radius, b.amplitude, b.target))
        else:
            raise ExtensionError(
                f"{b.target} bump at {b.center} with radius {b.radius} reaches x3 > {plane}; "
                "only bumps below the plane or centred on it can be extended evenly")
    reach = max((np.linalg.norm(b.center) + b.radius for b in bumps), default=0.0)
    return MaterialModel(m.sigma0, m.mu0, tuple(bumps), max(reach, m.support_radius or 0.0))


def check_even(m: MaterialModel, grid: Grid3, tol: float = 1e-12) -> float:
    """Largest relative defect of sigma and mu under reflection; raises above ``tol``."""
    check_symmetric(grid)
    worst = 0.0
    for name in ("sigma", "mu"):
        v = m.coefficient(name, grid)
        worst = max(worst, float(np.max(np.abs(v - reflect_array(v, False))) / np.max(np.abs(v))))
    if worst > tol:
        raise ExtensionError(f"material is not even in x3 (relative defect {worst:.3e})")
    return worst


# --- reflected CGO fields --------------------------------------------------------------

def mirror_grid(shape=(32, 32, 255), length=1.5) -> Grid3:
    """Periodic box whose x3 nodes are symmetric and include the plane (n3 odd)."""
    n3 = int(np.broadcast_to(shape, (3,))[2])
    if n3 % 2 == 0:
        raise GeometryError("mirror grids need an odd number of x3 nodes")
    h3 = float(np.broadcast_to(length, (3,))[2]) / n3
    return periodic_grid(length, shape, center=(0.0, 0.0, h3 / 2))


def _check_phase(rho, tol=1e-12):
    rho = np.asarray(rho)
    if abs(rho.real[2]) <= tol:
        raise GeometryError("degenerate phase: rho1 has no x3 component")
    if abs(rho.imag[2]) > tol:
        raise GeometryError("rho2 must have no x3 component for the reflection argument")


def plane_values(u: np.ndarray, grid: Grid3) -> np.ndarray:
    """Samples of u on x3 = 0: the node plane if present, else cubic interpolation."""
    j = plane_index(grid)
    if j is not None:
        return u[..., j]
    t = -grid.origin[2] / grid.h[2]
    j0 = int(np.floor(t)) - 1
    if j0 < 0 or j0 + 3 >= grid.n[2]:
        raise GeometryError("plane x3 = 0 lies outside the grid")
    s = t - j0
    nodes = np.arange(4)
    w = [np.prod([(s - nodes[q]) / (nodes[p] - nodes[q]) for q in range(4) if q != p])
         for p in range(4)]
    return sum(w[p] * u[..., j0 + p] for p in range(4))


def trace_leakage(H: np.ndarray, grid: Grid3) -> float:
    """max |nu x H| on the plane relative to max |H| over the grid (nu = e3)."""
    t = plane_values(H[:2], grid)
    top = float(np.max(np.abs(H)))
    return float(np.max(np.abs(t))) / top if top > 0 else 0.0


@dataclass
class ReflectedField:
    """H~, H~* and H~ - H~* with their curls, all divided by e^{-kappa.x}."""

    original: VectorField3
    reflected: VectorField3
    combined: VectorField3
    curl_original: VectorField3
    curl_combined: VectorField3
    kappa: np.ndarray
    phase: Phase | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def grid(self) -> Grid3:
        return self.combined.grid

    def weight(self) -> np.ndarray:
        return np.exp(-np.tensordot(self.kappa, self.grid.points(), axes=1))

    def physical(self) -> VectorField3:
        return VectorField3(self.grid, self.weight() * self.combined.components)


def _split_zeta(zeta):
    zeta = np.asarray(zeta, dtype=complex)
    kappa = np.array([zeta.imag[0], zeta.imag[1], 0.0])
    return kappa, zeta - 1j * kappa


def _norm(u, mask):
    return float(np.sqrt(np.sum((np.sum(np.abs(u) ** 2, axis=0))[mask])))


def reflect_cgo(sol: CgoSolution, m: MaterialModel, omega: float, region_radius=None) -> ReflectedField:
    """Reflected field of an existing CGO built for an even material."""
    grid = sol.r.grid
    check_symmetric(grid)
    _check_phase(sol.phase.rho)
    check_even(m, grid)
    ans, zeta = sol.ansatz, np.asarray(sol.phase.zeta)
    kappa, zrest = _split_zeta(zeta)
    X = grid.points()
    P = np.exp(1j * np.tensordot(zrest, X, axes=1))
    a, r, da = ans.a.components, sol.r.components, ans.da
    sp = TwistedSpectral(grid, zeta)
    curl_a = np.stack([da[1][2] - da[2][1], da[2][0] - da[0][2], da[0][1] - da[1][0]])
    C = curl_a + 1j * cross(zeta, a) + sp.curl_zeta(r)
    orig = P * (a + r)
    refl = reflect_array(orig, True)
    corig = P * C
    ccomb = corig + reflect_array(corig, True)

    # residual of each member in its own conjugated frame
    c = ans.coeffs
    res1, scale = conjugated_residual(c, grid, zeta, a, da, r, omega, sp)
    zs = reflect_vector(zeta)
    res2, _ = conjugated_residual(c, grid, zs, reflect_array(a, True), reflect_jacobian(da),
                                  reflect_array(r, True), omega)
    _, zrest_s = _split_zeta(zs)
    Ps = np.exp(1j * np.tensordot(zrest_s, X, axes=1))
    R1, R2 = P * res1, Ps * res2
    mask = np.ones(grid.n, dtype=bool) if region_radius is None else (
        grid.radius_squared() <= region_radius**2)
    den = float(np.sqrt(np.sum((scale * np.abs(P) ** 2)[mask])))
    n1, nc = _norm(R1, mask), _norm(R1 - R2, mask)
    diag = {
        "tau": sol.phase.tau,
        "trace_leakage": trace_leakage(orig - refl, grid),
        "residual_original": n1 / den if den > 0 else 0.0,
        "residual_combined": nc / den if den > 0 else 0.0,
        "residual_ratio": nc / n1 if n1 > 0 else 0.0,
        "reflection_defect": _norm(R2 - reflect_array(R1, True), mask) / max(n1, 1e-300),
        "cgo": sol.diagnostics,
    }
    return ReflectedField(VectorField3(grid, orig), VectorField3(grid, refl),
                          VectorField3(grid, orig - refl), VectorField3(grid, corig),
                          VectorField3(grid, ccomb), kappa, sol.phase, diag)


def build_reflected_cgo(m: MaterialModel, phase: Phase, grid: Grid3, omega: float,
                        s0: float = 0.0, region_radius=None, **cgo_kw) -> ReflectedField:
    """CGO for an even material on a symmetric grid, combined with its reflection."""
    check_symmetric(grid)
    _check_phase(phase.rho)
    check_even(m, grid)
    sol = build_cgo(m, phase, grid, omega, s0=s0, region_radius=region_radius, **cgo_kw)
    return reflect_cgo(sol, m, omega, region_radius)


def mirror_phase(tau, xi=(0.0, 2.0, 0.0), omega=1.0, sigma0=1.0, mu0=1.0) -> PhasePair:
    """rho1 = e3 (normal to the plane), rho2 = e1 (tangential)."""
    from .cgo import build_phase_pair
    return build_phase_pair(xi, (0.0, 0.0, 1.0), (1.0, 0.0, 0.0), tau, omega, sigma0, mu0)


# --- phases of the cross products ------------------------------------------------------

@dataclass
class PhaseSplit:
    """Frequencies of the four products of H~1, H~1* with H~2, H~2*.

    i(zeta1 - zeta2*).x = i xi~+ .x - 2 tau rho2_3 x3 - eta+ and
    i(zeta1* - zeta2).x = i xi~- .x + 2 tau rho2_3 x3 - eta-, with eta+- = +-c x3.
    """

    xi: np.ndarray
    xi_star: np.ndarray
    xi_tilde_plus: np.ndarray
    xi_tilde_minus: np.ndarray
    eta_rate: complex
    tau: float
    x3: np.ndarray
    eta_plus: np.ndarray
    eta_minus: np.ndarray

    def eta_sup(self, depth: float) -> float:
        """sup |eta+-| over 0 <= -x3 <= depth."""
        return abs(self.eta_rate) * depth


def phase_split(pp: PhasePair, x3=(-0.5,)) -> PhaseSplit:
    _check_phase(pp.rho)
    xi, tau = np.asarray(pp.xi, dtype=float), pp.tau
    s = np.sqrt(1.0 - (xi @ xi) / (4 * tau**2))
    root = np.sqrt(s**2 + 1j * pp.omega * pp.sigma0 * pp.mu0 / tau**2)
    r13 = float(pp.rho1[2])
    plus = np.array([xi[0], xi[1], 2 * tau * s * r13])
    minus = np.array([xi[0], xi[1], -2 * tau * s * r13])
    rate = complex(2 * pp.omega * pp.sigma0 * pp.mu0 * r13 / (tau * (root + s)))
    x3 = np.asarray(x3, dtype=float)
    return PhaseSplit(xi, reflect_vector(xi), plus, minus, rate, float(tau), x3,
                      rate * x3, -rate * x3)


def oscillatory_integral(g: np.ndarray, grid: Grid3, xi) -> complex:
    """int e^{i xi.x} g dx by the trapezoid rule."""
    ph = np.exp(1j * np.tensordot(np.asarray(xi, dtype=float), grid.points(), axes=1))
    return complex(integrate(ph * g, grid))


# --- local integral identity -------------------------------------------------------------

def half_space_mask(grid: Grid3) -> np.ndarray:
    """Trapezoid weights of {x3 <= 0}: 1 below the plane, 1/2 on the node plane."""
    x3 = grid.axis(2)
    w = np.where(x3 < 0, 1.0, 0.0)
    j = plane_index(grid)
    if j is not None:
        w[j] = 0.5
    return np.broadcast_to(w, grid.n)


def _dot(u, v):
    return np.sum(u * v, axis=0)


def local_integral_identity(m1: MaterialModel, m2: MaterialModel, H1, H2, omega: float,
                            tol: float = TRACE_TOL) -> IdentityReport:
    """Identity integrand integrated over the half space {x3 < 0}.

    Inputs are ReflectedField pairs or physical VectorField3 fields; either way
    their tangential traces on the plane must vanish to ``tol`` (relative).
    """
    grid = H1.grid
    if H2.grid != grid:
        raise GeometryError("fields must live on a common grid")
    check_symmetric(grid)
    for k, H in enumerate((H1, H2), start=1):
        comps = H.combined.components if isinstance(H, ReflectedField) else H.components
        leak = trace_leakage(comps, grid)
        if leak > tol:
            raise PreconditionError(
                f"H{k} has tangential trace {leak:.3e} (relative) on the plane x3 = 0, "
                f"above the tolerance {tol:.1e}")
    half = half_space_mask(grid)
    dmu = (m1.mu(grid) - m2.mu(grid)) * half
    s1, s2 = m1.sigma(grid), m2.sigma(grid)
    wsig = (s1 - s2) / (s1 * s2) / (1j * omega) * half
    terms, err = {}, 0.0

    def add(name, vals):
        nonlocal err
        v, e = _integrate_with_error(vals, grid)
        terms[name] = v
        err += e if np.isfinite(e) else 0.0

    if isinstance(H1, ReflectedField) and isinstance(H2, ReflectedField):
        w = np.exp(-np.tensordot(H1.kappa + H2.kappa, grid.points(), axes=1))
        O1, O2 = H1.original.components, H2.original.components
        F1, F2 = H1.reflected.components, H2.reflected.components
        C1, C2 = H1.curl_original.components, H2.curl_original.components
        D1, D2 = reflect_array(C1, True), reflect_array(C2, True)
        add("mu_direct", w * dmu * (_dot(O1, O2) + _dot(F1, F2)))
        add("mu_cross", -w * dmu * (_dot(O1, F2) + _dot(F1, O2)))
        add("sigma_direct", w * wsig * (_dot(C1, C2) + _dot(D1, D2)))
        add("sigma_cross", w * wsig * (_dot(C1, D2) + _dot(D1, C2)))
        tau = H1.phase.tau if H1.phase is not None else None
    else:
        u1, u2 = H1.components, H2.components
        add("mu", dmu * _dot(u1, u2))
        add("sigma", wsig * _dot(curl_array(u1, grid.h), curl_array(u2, grid.h)))
        tau = None
    return IdentityReport(complex(sum(terms.values())), terms, tau, err)


def reflected_pair(m1: MaterialModel, m2: MaterialModel, pp: PhasePair, grid: Grid3,
                   omega: float, s0: float = 0.5, s0_second: float | None = None,
                   **cgo_kw) -> tuple:
    """Reflected CGOs for zeta^1 (material 1) and -zeta^2 (material 2)."""
    s2 = s0 if s0_second is None else s0_second
    R1 = build_reflected_cgo(m1, pp.member(1), grid, omega, s0=s0, **cgo_kw)
    R2 = build_reflected_cgo(m2, pp.member(2, sign=-1), grid, omega, s0=s2, **cgo_kw)
    return R1, R2


def half_space_functional(m1: MaterialModel, m2: MaterialModel, xi, target: str = "sigma",
                          grid: Grid3 | None = None) -> complex:
    """int over x3 < 0 of e^{i xi.x} times the sigma or mu weight of the identity limit."""
    if grid is None:
        grid = quadrature_grid([m1, m2], float(np.linalg.norm(xi)))
        if plane_index(grid) is None:
            raise GeometryError("quadrature grid has no node plane at x3 = 0")
    s1, s2 = m1.sigma(grid), m2.sigma(grid)
    if target == "sigma":
        g = (s1 - s2) / np.sqrt(s1 * s2)
    elif target == "mu":
        g = (m1.mu(grid) - m2.mu(grid)) * np.sqrt(s1 / m1.mu(grid))
    else:
        raise ValueError(f"target must be 'sigma' or 'mu', got {target!r}")
    return oscillatory_integral(g * half_space_mask(grid), grid, xi)


def folded_limit(m1: MaterialModel, m2: MaterialModel, xi, omega: float, s0: float = 0.5,
                 kind: str = "sigma", grid: Grid3 | None = None,
                 s0_second: float | None = None) -> complex:
    """Large-tau limit of the local identity / tau^2: twice the half-space functional."""
    half = half_space_functional(m1, m2, xi, kind, grid)
    if kind == "sigma":
        return complex(2 * 4 * s0**2 / (1j * omega) * half)
    s2 = s0 if s0_second is None else s0_second
    return complex(2 * -2 * s2 * half)
