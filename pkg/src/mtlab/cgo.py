"""Complex geometric optics (CGO) solutions H = e^{i zeta.x}(a + r).

Everything is computed in the conjugated frame: the amplitude ``a``, the
source ``f = e^{-i zeta.x} L (e^{i zeta.x} a)`` and the correction ``r``
are smooth or periodic arrays, and the exponential is only multiplied in
when a physical field is requested.

The inverse of -Delta_zeta = -Delta - 2i zeta.grad is applied with FFTs on
a periodic box.  Fields on that box are "twisted": ``u = e^{i k0.x} v``
with ``v`` periodic and ``k0 = pi/L`` on every axis, which keeps the
lattice away from k = 0.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft
from scipy.integrate import quad
from scipy.ndimage import map_coordinates
from scipy.signal import fftconvolve
from scipy.sparse.linalg import LinearOperator, gmres

from .errors import DomainError, GeometryError, GuardError, TauTooSmallError
from .fields import (Grid3, ScalarField3, VectorField3, WeightedNormParams, d_axis,
                     weighted_norm)
from .material import MaterialModel

EPSILON = 1.0 / 16.0
THETA = 0.25
MIN_POINTS_PER_WAVE = 8.0
SYMBOL_FLOOR = 1e-8
KRYLOV_TOL = 1e-8


def _workers():
    return int(os.environ.get("MTLAB_THREADS", "1"))


def periodic_grid(length, n, center=(0.0, 0.0, 0.0)) -> Grid3:
    """Box of side ``length`` sampled with spacing length/n (no repeated end point).

    ``length`` and ``n`` may be scalars or per-axis triples.
    """
    L = np.broadcast_to(np.asarray(length, dtype=float), (3,))
    n = np.broadcast_to(np.asarray(n, dtype=int), (3,))
    h = L / n
    return Grid3(tuple(c - l / 2 for c, l in zip(center, L)), tuple(L - h), tuple(n))


def _period(grid: Grid3) -> np.ndarray:
    return grid.h * np.array(grid.n)


# --- small vector helpers ------------------------------------------------------

def _bc(v, ndim):
    """Reshape a constant 3-vector so it broadcasts against (3, ...) arrays."""
    v = np.asarray(v)
    return v.reshape((3,) + (1,) * ndim) if v.ndim == 1 else v


def cross(u, v):
    nd = max(np.ndim(u), np.ndim(v)) - 1
    u, v = _bc(u, nd), _bc(v, nd)
    return np.stack([u[1] * v[2] - u[2] * v[1],
                     u[2] * v[0] - u[0] * v[2],
                     u[0] * v[1] - u[1] * v[0]])


def dot(u, v):
    nd = max(np.ndim(u), np.ndim(v)) - 1
    return np.sum(_bc(u, nd) * _bc(v, nd), axis=0)


def matvec3(M, v):
    """(3,3,...) matrix field times (3,...) vector field."""
    return np.einsum("ij...,j...->i...", M, v)


# --- phases --------------------------------------------------------------------

@dataclass(frozen=True)
class Phase:
    """One complex frequency zeta = tau*rho + zeta_1 used to build a CGO."""

    zeta: np.ndarray
    rho: np.ndarray
    tau: float

    @property
    def remainder(self) -> np.ndarray:
        return self.zeta - self.tau * self.rho


@dataclass(frozen=True)
class PhasePair:
    xi: np.ndarray
    rho1: np.ndarray
    rho2: np.ndarray
    tau: float
    omega: float
    sigma0: float
    mu0: float
    zeta1: np.ndarray
    zeta2: np.ndarray

    @property
    def rho(self) -> np.ndarray:
        return self.rho1 + 1j * self.rho2

    def member(self, j: int, sign: int = 1) -> Phase:
        """Phase of ``zeta^j`` (sign=+1) or of ``-zeta^j`` (sign=-1, rho -> -rho)."""
        z = self.zeta1 if j == 1 else self.zeta2
        return Phase(sign * z, sign * self.rho, self.tau)


def orthonormal_frame(xi) -> tuple:
    """Deterministic unit vectors rho1, rho2 orthogonal to xi and to each other.

    Flipping xi flips rho2, so rho(-xi) = conj(rho(xi)).
    """
    xi = np.asarray(xi, dtype=float)
    nx = np.linalg.norm(xi)
    if nx == 0:
        return np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])
    u = xi / nx
    e = np.eye(3)[int(np.argmin(np.abs(u)))]
    r1 = e - (e @ u) * u
    r1 /= np.linalg.norm(r1)
    return r1, np.cross(u, r1)


def build_phase_pair(xi, rho1, rho2, tau, omega, sigma0=1.0, mu0=1.0, tol=1e-10) -> PhasePair:
    xi = np.asarray(xi, dtype=float)
    r1 = np.asarray(rho1, dtype=float)
    r2 = np.asarray(rho2, dtype=float)
    if abs(np.linalg.norm(r1) - 1) > tol or abs(np.linalg.norm(r2) - 1) > tol:
        raise GeometryError("rho1 and rho2 must be unit vectors")
    scale = max(1.0, np.linalg.norm(xi))
    if abs(r1 @ r2) > tol or abs(r1 @ xi) > tol * scale or abs(r2 @ xi) > tol * scale:
        raise GeometryError("xi, rho1, rho2 must be mutually orthogonal")
    if tau <= 0:
        raise GeometryError("tau must be positive")
    disc = 1.0 - (xi @ xi) / (4 * tau**2)
    if disc <= 0:
        raise GeometryError(f"tau={tau} too small for |xi|={np.linalg.norm(xi):.4g}")
    root = np.sqrt(disc + 1j * omega * sigma0 * mu0 / tau**2)
    base = 1j * tau * r2 + tau * root * r1
    return PhasePair(xi, r1, r2, float(tau), float(omega), float(sigma0), float(mu0),
                     xi / 2 + base, -xi / 2 + base)


def resolution_guard(grid: Grid3, zeta) -> dict:
    """Points per oscillation of e^{i zeta.x}: 2pi over the largest phase step along an axis."""
    step = float(np.max(np.abs(np.real(zeta)) * grid.h))
    ppw = np.inf if step == 0 else 2 * np.pi / step
    return {"points_per_wave": float(ppw), "required": MIN_POINTS_PER_WAVE,
            "ok": bool(ppw >= MIN_POINTS_PER_WAVE)}


def check_resolution(grid: Grid3, zeta) -> dict:
    g = resolution_guard(grid, zeta)
    if not g["ok"]:
        raise GuardError(f"e^(i zeta.x) has {g['points_per_wave']:.2f} points per oscillation "
                         f"(< {MIN_POINTS_PER_WAVE}); refine the grid or lower tau")
    return g


# --- mollification and cutoff -----------------------------------------------------

def _phi_shape(kind: str):
    """Unit-height profile as a function of s = |x|^2/R^2, and the radius R giving unit mass."""
    if kind == "poly":
        return (lambda s: np.clip(1.0 - s, 0.0, None) ** 3), (315.0 / (64.0 * np.pi)) ** (1 / 3)
    if kind == "smooth":
        def prof(s):
            out = np.zeros_like(s, dtype=float)
            m = s < 1
            out[m] = np.exp(1.0 - 1.0 / (1.0 - s[m]))
            return out
        mass = quad(lambda u: np.exp(1.0 - 1.0 / (1.0 - u * u)) * u * u, 0, 1)[0] * 4 * np.pi
        return prof, mass ** (-1 / 3)
    raise ValueError(f"unknown mollifier kind {kind!r}; use 'poly' or 'smooth'")


def phi(x: np.ndarray, kind: str = "poly") -> np.ndarray:
    """Mollifier profile: 0 <= phi <= 1, integral 1, compact support."""
    prof, R = _phi_shape(kind)
    return prof(np.sum(np.asarray(x) ** 2, axis=0) / R**2)


def mollifier_kernel(h, tau, epsilon=EPSILON, kind="poly", radius=1.0) -> np.ndarray:
    """Samples of Phi_tau(x) = (tau^eps/radius)^3 Phi(tau^eps x/radius), normalized to unit sum*h^3."""
    prof, R = _phi_shape(kind)
    width = radius * tau ** (-epsilon) * R
    h = np.asarray(h, dtype=float)
    m = [int(np.ceil(width / ha)) for ha in h]
    axes = [ha * np.arange(-ma, ma + 1) for ha, ma in zip(h, m)]
    X = np.meshgrid(*axes, indexing="ij")
    K = prof((X[0] ** 2 + X[1] ** 2 + X[2] ** 2) / width**2)
    total = K.sum() * np.prod(h)
    if total == 0:
        K = np.zeros_like(K)
        K[tuple(ma for ma in m)] = 1.0
        total = np.prod(h)
    return K / total


def mollify_array(values: np.ndarray, h, tau, epsilon=EPSILON, kind="poly", radius=1.0,
                  background=0.0) -> np.ndarray:
    K = mollifier_kernel(h, tau, epsilon, kind, radius) * np.prod(h)
    return fftconvolve(values - background, K, mode="same") + background


def mollify(f: ScalarField3, tau, epsilon=EPSILON, phi_kind="poly", radius=1.0,
            background=None) -> ScalarField3:
    """alpha# = alpha * Phi_tau.  ``alpha - background`` must vanish near the grid boundary."""
    vals = f.values
    if background is None:
        background = vals[0, 0, 0]
    out = mollify_array(vals, f.grid.h, tau, epsilon, phi_kind, radius, background)
    if np.all(np.isreal(vals)):
        out = out.real
    return ScalarField3(f.grid, out)


def smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t**3 * (10.0 - 15.0 * t + 6.0 * t * t)


def cutoff(points: np.ndarray, tau, theta=THETA, scale=1.0) -> tuple:
    """chi_tau(x) = chi(tau^-theta x): 1 for |x| <= R/2, 0 for |x| >= R, R = scale*tau^theta.

    Returns (chi, grad chi).
    """
    R = scale * tau**theta
    r = np.sqrt(np.sum(points**2, axis=0))
    t = 2.0 * (1.0 - r / R)
    chi = smoothstep(t)
    tc = np.clip(t, 0.0, 1.0)
    dS = 30.0 * tc**2 * (1.0 - tc) ** 2
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = np.where(r > 0, points / np.where(r > 0, r, 1.0), 0.0)
    return chi, dS * (-2.0 / R) * unit


# --- Cauchy transform ---------------------------------------------------------------

def _plane_frame(rho, tol=1e-10):
    rho = np.asarray(rho, dtype=complex)
    e1, e2 = rho.real.astype(float), rho.imag.astype(float)
    if abs(np.linalg.norm(e1) - 1) > tol or abs(np.linalg.norm(e2) - 1) > tol or abs(e1 @ e2) > tol:
        raise GeometryError("rho needs |Re rho| = |Im rho| = 1 and Re rho . Im rho = 0")
    return e1, e2


def _aligned(e):
    i = int(np.argmax(np.abs(e)))
    if abs(abs(e[i]) - 1) < 1e-12:
        return i, int(np.sign(e[i]))
    return None


def _check_support(values, tol):
    mx = np.max(np.abs(values))
    if mx == 0:
        return 0.0
    edge = 0.0
    for a in range(3):
        sl = [slice(None)] * 3
        for idx in (slice(0, 2), slice(-2, None)):
            sl[a] = idx
            edge = max(edge, float(np.max(np.abs(values[tuple(sl)]))))
    if edge > tol * mx:
        raise DomainError("cauchy_transform: support touches the grid boundary; enlarge the domain")
    return mx


def _cauchy_kernel(d0, d1, h):
    h0, h1 = h
    D0, D1 = np.meshgrid(d0, d1, indexing="ij")
    z = D0 * h0 + 1j * D1 * h1
    with np.errstate(divide="ignore", invalid="ignore"):
        K = h0 * h1 / (2 * np.pi * z)
    K[z == 0] = 0.0
    return K


def _cell_moments(h0, h1):
    """int y1^2/|y|^2 and int y2^2/|y|^2 over the cell [-h0/2, h0/2] x [-h1/2, h1/2]."""
    a, b = h0 / 2, h1 / 2
    m1 = 4 * quad(lambda t: t * np.arctan(b / t) if t > 0 else 0.0, 0, a)[0]
    return m1, 4 * a * b - m1


def _plane_convolve(fin, out_lo, out_n, in_lo, h):
    """Punctured-lattice Cauchy sums of ``fin`` over axes (0, 1).

    ``fin`` occupies lattice indices in_lo + [0, shape); the result covers
    out_lo + [0, out_n) along axes 0, 1 and shares axis 2 with ``fin``.
    """
    Ni = fin.shape[:2]
    d = [np.arange(out_lo[a] - in_lo[a] - (Ni[a] - 1), out_lo[a] - in_lo[a] + out_n[a])
         for a in range(2)]
    K = _cauchy_kernel(d[0], d[1], h)[:, :, None]
    full = fftconvolve(fin, K, axes=(0, 1))
    return full[Ni[0] - 1:Ni[0] - 1 + out_n[0], Ni[1] - 1:Ni[1] - 1 + out_n[1]]


def _centre_correction(fin, h):
    """First-order contribution of the punctured cell around y = 0."""
    m1, m2 = _cell_moments(*h)
    d0 = np.gradient(fin, h[0], axis=0)
    d1 = np.gradient(fin, h[1], axis=1)
    return (-m1 * d0 + 1j * m2 * d1) / (2 * np.pi)


def _support_box(mask, pad, n):
    idx = np.nonzero(mask)
    return [(max(int(i.min()) - pad, 0), min(int(i.max()) + pad + 1, n[a]))
            for a, i in enumerate(idx)]


def _cauchy_aligned(values, grid_h, a, s1, b, s2, tol):
    c = 3 - a - b
    h = (float(grid_h[a]), float(grid_h[b]))
    arr = np.moveaxis(values, (a, b, c), (0, 1, 2))
    if s1 < 0:
        arr = arr[::-1]
    if s2 < 0:
        arr = arr[:, ::-1]
    n = arr.shape
    box = _support_box(np.abs(arr) > tol * np.abs(arr).max(), 3, n)
    fin = arr[box[0][0]:box[0][1], box[1][0]:box[1][1], box[2][0]:box[2][1]]
    out = np.zeros(n, dtype=complex)
    slab = _plane_convolve(fin, (0, 0), n[:2], (box[0][0], box[1][0]), h)
    slab[box[0][0]:box[0][1], box[1][0]:box[1][1]] += _centre_correction(fin, h)
    out[:, :, box[2][0]:box[2][1]] = slab
    if s2 < 0:
        out = out[:, ::-1]
    if s1 < 0:
        out = out[::-1]
    return np.moveaxis(out, (0, 1, 2), (a, b, c))


def _cauchy_rotated(values, grid, e1, e2, tol):
    e3 = np.cross(e1, e2)
    E = np.stack([e1, e2, e3])
    h = float(np.min(grid.h))
    centre = np.array(grid.origin) + 0.5 * np.array(grid.extent)
    mag = np.abs(values)
    pts = grid.points()
    sup = mag > tol * mag.max()
    proj = np.tensordot(E, pts[:, sup] - centre[:, None], axes=1) / h
    in_lo = np.floor(proj.min(axis=1)).astype(int) - 3
    in_hi = np.ceil(proj.max(axis=1)).astype(int) + 3
    corners = np.array([[o + t * e for o, e, t in zip(grid.origin, grid.extent, bits)]
                        for bits in np.ndindex(2, 2, 2)]).T
    cp = (E @ (corners - centre[:, None])) / h
    out_lo = np.floor(cp.min(axis=1)).astype(int) - 2
    out_hi = np.ceil(cp.max(axis=1)).astype(int) + 2
    # resample the input on the rotated lattice
    ax = [np.arange(in_lo[k], in_hi[k] + 1) for k in range(3)]
    P = np.meshgrid(*ax, indexing="ij")
    X = centre.reshape(3, 1, 1, 1) + h * sum(P[k][None] * E[k].reshape(3, 1, 1, 1) for k in range(3))
    frac = (X - np.reshape(grid.origin, (3, 1, 1, 1))) / grid.h.reshape(3, 1, 1, 1)
    fin = (map_coordinates(values.real, frac, order=3, mode="constant", cval=0.0)
           + 1j * map_coordinates(values.imag, frac, order=3, mode="constant", cval=0.0))
    out_n = (out_hi[0] - out_lo[0] + 1, out_hi[1] - out_lo[1] + 1)
    slab = _plane_convolve(fin, out_lo[:2], out_n, in_lo[:2], (h, h))
    o0, o1 = in_lo[0] - out_lo[0], in_lo[1] - out_lo[1]
    slab[o0:o0 + fin.shape[0], o1:o1 + fin.shape[1]] += _centre_correction(fin, (h, h))
    # back to the Cartesian grid
    q = np.tensordot(E, pts - centre.reshape(3, 1, 1, 1), axes=1) / h
    inside = (q[2] >= in_lo[2]) & (q[2] <= in_hi[2])
    coords = np.stack([q[0][inside] - out_lo[0], q[1][inside] - out_lo[1],
                       q[2][inside] - in_lo[2]])
    res = np.zeros(grid.n, dtype=complex)
    res[inside] = (map_coordinates(slab.real, coords, order=3, mode="nearest")
                   + 1j * map_coordinates(slab.imag, coords, order=3, mode="nearest"))
    return res


def cauchy_array(values: np.ndarray, grid: Grid3, rho, support_tol=1e-10) -> np.ndarray:
    e1, e2 = _plane_frame(rho)
    values = np.asarray(values, dtype=complex)
    if _check_support(values, support_tol) == 0:
        return np.zeros(grid.n, dtype=complex)
    a1, a2 = _aligned(e1), _aligned(e2)
    if a1 and a2:
        return _cauchy_aligned(values, grid.h, a1[0], a1[1], a2[0], a2[1], support_tol)
    return _cauchy_rotated(values, grid, e1, e2, support_tol)


def cauchy_transform(f, rho, grid: Grid3 | None = None, support_tol=1e-10):
    """N_rho^{-1} f(x) = (1/2pi) int f(x - y1 Re rho - y2 Im rho)/(y1 + i y2) dy.

    ``f`` is a ScalarField3 (result is a ScalarField3) or a raw array with ``grid``.
    """
    if isinstance(f, ScalarField3):
        return ScalarField3(f.grid, cauchy_array(f.values, f.grid, rho, support_tol))
    if grid is None:
        raise ValueError("cauchy_transform needs a grid for raw arrays")
    return cauchy_array(f, grid, rho, support_tol)


def apply_dbar(u: np.ndarray, grid: Grid3, rho) -> np.ndarray:
    """Finite-difference rho . grad u."""
    rho = np.asarray(rho, dtype=complex)
    return sum(rho[a] * d_axis(u, grid.h, a) for a in range(3))


# --- coefficients -------------------------------------------------------------------

@dataclass
class Coefficients:
    """Exact and mollified log-coefficients with analytic derivatives on a grid."""

    grid: Grid3
    sigma: np.ndarray
    mu: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    grad_alpha: np.ndarray
    grad_beta: np.ndarray
    hess_alpha: np.ndarray
    hess_beta: np.ndarray
    alpha_s: np.ndarray
    beta_s: np.ndarray
    grad_alpha_s: np.ndarray
    grad_beta_s: np.ndarray
    hess_alpha_s: np.ndarray
    hess_beta_s: np.ndarray


def _mollify_tensor(T, h, tau, eps, kind, radius, symmetric=False):
    out = np.empty_like(T)
    if symmetric:
        for i in range(3):
            for j in range(i, 3):
                out[i, j] = mollify_array(T[i, j], h, tau, eps, kind, radius)
                out[j, i] = out[i, j]
        return out
    for idx in np.ndindex(T.shape[:T.ndim - 3]):
        out[idx] = mollify_array(T[idx], h, tau, eps, kind, radius)
    return out


def coefficient_fields(m: MaterialModel, grid: Grid3, tau, epsilon=EPSILON, phi_kind="poly",
                       mollifier_radius=1.0) -> Coefficients:
    h = grid.h
    sig, mu = m.sigma(grid), m.mu(grid)
    al, be = np.log(sig), np.log(mu)
    ga, gb = m.grad_log("sigma", grid), m.grad_log("mu", grid)
    Ha, Hb = m.hess_log("sigma", grid), m.hess_log("mu", grid)
    args = (h, tau, epsilon, phi_kind, mollifier_radius)
    a0, b0 = np.log(m.sigma0), np.log(m.mu0)
    return Coefficients(
        grid, sig, mu, al, be, ga, gb, Ha, Hb,
        mollify_array(al, *args, background=a0), mollify_array(be, *args, background=b0),
        _mollify_tensor(ga, *args), _mollify_tensor(gb, *args),
        _mollify_tensor(Ha, *args, symmetric=True), _mollify_tensor(Hb, *args, symmetric=True))


def transport_phase(alpha_sharp: ScalarField3, beta_sharp: ScalarField3, rho,
                    grad=None) -> ScalarField3:
    """Psi# = -1/2 N_rho^{-1}{conj(rho) . grad(alpha# + beta#)}.

    ``grad`` optionally supplies grad(alpha# + beta#) as a (3, ...) array;
    otherwise it is differenced from the fields.
    """
    grid = alpha_sharp.grid
    if grad is None:
        s = (alpha_sharp.values + beta_sharp.values).real
        grad = np.stack([d_axis(s, grid.h, a) for a in range(3)])
    g = dot(np.conj(rho), grad)
    return ScalarField3(grid, -0.5 * cauchy_array(g, grid, rho))


# --- amplitude ------------------------------------------------------------------------

@dataclass
class CgoAnsatz:
    alpha_sharp: ScalarField3
    beta_sharp: ScalarField3
    psi_sharp: ScalarField3
    chi_tau: ScalarField3
    s0: float
    rho: np.ndarray
    a: VectorField3
    epsilon: float
    theta: float
    tau: float
    form: str = "transport"
    p_sharp: ScalarField3 | None = None
    da: np.ndarray = field(default=None, repr=False)       # da[j] = d_j a, shape (3, 3, ...)
    cutoff_term: np.ndarray = field(default=None, repr=False)
    coeffs: Coefficients = field(default=None, repr=False)


def build_amplitude(m: MaterialModel, grid: Grid3, phase: Phase, s0: float = 0.0,
                    form: str = "transport", epsilon=EPSILON, theta=THETA, phi_kind="poly",
                    mollifier_radius=1.0, cutoff_scale=1.0, coeffs: Coefficients = None) -> CgoAnsatz:
    """Leading amplitude of the CGO and its first derivatives.

    form="literal":   a = e^{-alpha#/2} rho + s0 e^{alpha#/2} e^{chi Psi#} conj(rho)
    form="transport": a = e^{-beta#/2}(1 + chi P#) rho + s0 e^{alpha#/2} conj(rho),
                      P# = -s0 N_rho^{-1}{conj(rho) . grad e^{(alpha#+beta#)/2}}
    The second form solves the transport equation up to the cutoff-gradient term.
    """
    if form not in ("literal", "transport"):
        raise ValueError(f"unknown amplitude form {form!r}")
    tau, rho = phase.tau, np.asarray(phase.rho, dtype=complex)
    rhob = np.conj(rho)
    c = coeffs or coefficient_fields(m, grid, tau, epsilon, phi_kind, mollifier_radius)
    nd = 3
    R, Rb = _bc(rho, nd), _bc(rhob, nd)
    chi, gchi = cutoff(grid.points(), tau, theta, cutoff_scale)
    gsum = c.grad_alpha_s + c.grad_beta_s
    psi = -0.5 * cauchy_array(dot(rhob, gsum), grid, rho)
    ea = np.exp(c.alpha_s / 2)
    P = None
    if form == "literal":
        e_m = np.exp(-c.alpha_s / 2)
        b = ea * np.exp(chi * psi)
        a = e_m * R + s0 * b * Rb
        da = np.empty((3, 3) + grid.n, dtype=complex)
        if s0 != 0:
            Hsum = c.hess_alpha_s + c.hess_beta_s
            dpsi = np.stack([-0.5 * cauchy_array(dot(rhob, Hsum[j]), grid, rho) for j in range(3)])
        else:
            dpsi = np.zeros((3,) + grid.n)
        for j in range(3):
            dchipsi = gchi[j] * psi + chi * dpsi[j]
            da[j] = (-0.5 * c.grad_alpha_s[j] * e_m * R
                     + s0 * (0.5 * c.grad_alpha_s[j] + dchipsi) * b * Rb)
        cut = s0 * 2.0 * dot(rho, gchi) * psi * b * Rb
    else:
        e_mb = np.exp(-c.beta_s / 2)
        if s0 != 0:
            E = np.exp((c.alpha_s + c.beta_s) / 2)
            gE = 0.5 * E * gsum
            HE = 0.5 * E * (c.hess_alpha_s + c.hess_beta_s + 0.5 * gsum[:, None] * gsum[None, :])
            P = -s0 * cauchy_array(dot(rhob, gE), grid, rho)
            dP = np.stack([-s0 * cauchy_array(dot(rhob, HE[j]), grid, rho) for j in range(3)])
        else:
            P = np.zeros(grid.n, dtype=complex)
            dP = np.zeros((3,) + grid.n, dtype=complex)
        pcoef = e_mb * (1.0 + chi * P)
        a = pcoef * R + s0 * ea * Rb
        da = np.empty((3, 3) + grid.n, dtype=complex)
        for j in range(3):
            dp = -0.5 * c.grad_beta_s[j] * pcoef + e_mb * (gchi[j] * P + chi * dP[j])
            da[j] = dp * R + s0 * 0.5 * c.grad_alpha_s[j] * ea * Rb
        cut = 2.0 * e_mb * P * dot(rho, gchi) * R
        P = ScalarField3(grid, P)
    return CgoAnsatz(ScalarField3(grid, c.alpha_s), ScalarField3(grid, c.beta_s),
                     ScalarField3(grid, psi), ScalarField3(grid, chi), float(s0), rho,
                     VectorField3(grid, a), epsilon, theta, tau, form, P, da, cut, c)


def transport_combination(ans: CgoAnsatz) -> np.ndarray:
    """2 rho.grad a + (grad beta# . a) rho + grad alpha# x (rho x a)."""
    c, a, rho = ans.coeffs, ans.a.components, ans.rho
    ra = 2 * sum(rho[j] * ans.da[j] for j in range(3))
    return ra + dot(c.grad_beta_s, a) * _bc(rho, 3) + cross(c.grad_alpha_s, cross(rho, a))


# --- spectral operators on the twisted periodic box ---------------------------------

class TwistedSpectral:
    """FFT representation of e^{i k0.x} x (periodic) fields with conjugated derivatives."""

    def __init__(self, grid: Grid3, zeta, floor=SYMBOL_FLOOR):
        self.grid = grid
        self.zeta = np.asarray(zeta, dtype=complex)
        L = _period(grid)
        self.k0 = np.pi / L
        self.kappa = [2 * np.pi * sfft.fftfreq(grid.n[a], d=grid.h[a]) + self.k0[a]
                      for a in range(3)]
        shp = [(-1, 1, 1), (1, -1, 1), (1, 1, -1)]
        self.K = [self.kappa[a].reshape(shp[a]) for a in range(3)]
        self.tw = [np.exp(1j * self.k0[a] * grid.axis(a)).reshape(shp[a]) for a in range(3)]
        S = (self.K[0] ** 2 + self.K[1] ** 2 + self.K[2] ** 2
             + 2 * (self.zeta[0] * self.K[0] + self.zeta[1] * self.K[1] + self.zeta[2] * self.K[2]))
        fl = floor * float(np.sum(np.abs(self.zeta) ** 2))
        small = np.abs(S) < fl
        self.floor_count = int(small.sum())
        self.floor_locations = [tuple(float(self.kappa[a][i[a]]) for a in range(3))
                                for i in zip(*np.nonzero(small))][:16]
        if self.floor_count:
            S = np.where(small, fl * np.exp(1j * np.angle(S)), S)
            S = np.where(S == 0, fl, S)
        self.symbol = S
        self.workers = _workers()

    def _twist(self, u, sign):
        t = self.tw if sign > 0 else [np.conj(x) for x in self.tw]
        return u * t[0] * t[1] * t[2]

    def fwd(self, u):
        return sfft.fftn(self._twist(u, -1), axes=(-3, -2, -1), workers=self.workers)

    def inv(self, U):
        return self._twist(sfft.ifftn(U, axes=(-3, -2, -1), workers=self.workers), +1)

    def solve(self, f):
        """G_0 f: inverse of -Delta_zeta."""
        return self.inv(self.fwd(f) / self.symbol)

    def apply(self, u):
        """-Delta_zeta u."""
        return self.inv(self.fwd(u) * self.symbol)

    def dzeta_hat(self, U, a):
        return 1j * (self.K[a] + self.zeta[a]) * U

    def grad_zeta(self, u):
        U = self.fwd(u)
        return np.stack([self.inv(self.dzeta_hat(U, a)) for a in range(3)])

    def curl_zeta(self, u):
        U = self.fwd(u)
        D = [lambda V, a=a: self.dzeta_hat(V, a) for a in range(3)]
        return np.stack([self.inv(D[1](U[2]) - D[2](U[1])),
                         self.inv(D[2](U[0]) - D[0](U[2])),
                         self.inv(D[0](U[1]) - D[1](U[0]))])

    def div_zeta(self, u):
        U = self.fwd(u)
        return self.inv(sum(self.dzeta_hat(U[a], a) for a in range(3)))

    def grad(self, u):
        """Plain derivatives (zeta-free)."""
        U = self.fwd(u)
        return np.stack([self.inv(1j * self.K[a] * U) for a in range(3)])


# --- Krylov with Neumann fallback --------------------------------------------------------

@dataclass
class SolveReport:
    method: str
    iterations: int
    converged: bool
    relative_residual: float


def solve_fixed_point(K, b, tol=KRYLOV_TOL, method="krylov", restart=20, maxiter=15,
                      neumann_maxiter=200) -> tuple:
    """Solve x - K x = b for flat complex vectors."""
    n = b.size
    count = [0]
    bn = np.linalg.norm(b)
    if bn == 0:
        return np.zeros_like(b), SolveReport(method, 0, True, 0.0)

    def res(x):
        return np.linalg.norm(x - K(x) - b) / bn

    if method == "krylov":
        def mv(x):
            count[0] += 1
            return x - K(x)
        A = LinearOperator((n, n), matvec=mv, dtype=complex)
        x, info = gmres(A, b, rtol=tol, atol=0.0, restart=restart, maxiter=maxiter)
        r = res(x)
        if info == 0 or r <= 10 * tol:
            return x, SolveReport("krylov", count[0], True, float(r))
    x = b.copy()
    prev = np.inf
    growth = 0
    for it in range(1, neumann_maxiter + 1):
        xn = b + K(x)
        step = np.linalg.norm(xn - x)
        x = xn
        if step <= tol * max(np.linalg.norm(x), bn):
            return x, SolveReport("neumann", count[0] + it, True, float(res(x)))
        growth = growth + 1 if step > prev else 0
        if growth >= 3 or not np.isfinite(step):
            raise TauTooSmallError(
                "fixed-point iteration diverges; |zeta| is too small for this potential")
        prev = step
    raise TauTooSmallError("fixed-point iteration did not converge; increase |zeta|")


# --- Faddeev-type solve --------------------------------------------------------------------

@dataclass
class FaddeevResult:
    u: object
    residual: float
    scaling: float
    report: SolveReport
    floor_count: int


def _second_derivative_sum(u, h):
    return sum(np.gradient(np.gradient(u, h[a], axis=a, edge_order=2), h[a], axis=a,
                           edge_order=2) for a in range(3))


def faddeev_solve(gamma, zeta, f, delta=-0.5, grid: Grid3 | None = None, tol=KRYLOV_TOL,
                  method="krylov", q=None) -> FaddeevResult:
    """Solve (-Delta_zeta - grad log gamma . grad_zeta) u = f on the periodic box.

    Uses gamma^{1/2} u =: v with (-Delta_zeta + q) v = gamma^{1/2} f,
    q = gamma^{-1/2} Delta gamma^{1/2}.  ``gamma`` may be None/scalar (constant)
    or a ScalarField3; ``f`` a ScalarField3, VectorField3 or raw array.
    """
    params = WeightedNormParams(delta)
    if isinstance(f, (ScalarField3, VectorField3)):
        grid = f.grid
        arr = f.values if isinstance(f, ScalarField3) else f.components
    else:
        arr = np.asarray(f, dtype=complex)
    if grid is None:
        raise ValueError("faddeev_solve needs a grid for raw arrays")
    sp = TwistedSpectral(grid, zeta)
    if gamma is None or np.isscalar(gamma):
        g_half = np.ones(grid.n)
        qv = np.zeros(grid.n)
    else:
        gv = gamma.values.real if isinstance(gamma, ScalarField3) else np.asarray(gamma).real
        if np.min(gv) <= 0:
            raise DomainError("faddeev_solve needs gamma > 0")
        g_half = np.sqrt(gv)
        qv = _second_derivative_sum(g_half, grid.h) / g_half if q is None else q
    rhs = g_half * arr
    shape = rhs.shape
    if np.any(qv != 0):
        def K(x):
            return -sp.solve(qv * x.reshape(shape)).ravel()
        b = sp.solve(rhs).ravel()
        v, rep = solve_fixed_point(K, b, tol=tol, method=method)
        v = v.reshape(shape)
    else:
        v = sp.solve(rhs)
        rep = SolveReport("direct", 0, True, 0.0)
    u = v / g_half
    r = sp.apply(v) + qv * v - rhs
    rn = float(np.linalg.norm(r) / max(np.linalg.norm(rhs), 1e-300))
    fn = weighted_norm(arr, params, shifted=True, grid=grid)
    un = weighted_norm(u, params, grid=grid)
    scaling = un * float(np.linalg.norm(np.abs(zeta))) / fn if fn > 0 else 0.0
    out = u
    if isinstance(f, ScalarField3):
        out = ScalarField3(grid, u)
    elif isinstance(f, VectorField3):
        out = VectorField3(grid, u)
    return FaddeevResult(out, rn, float(scaling), rep, sp.floor_count)


# --- source term and correction -------------------------------------------------------------

def source_term(m: MaterialModel, ans: CgoAnsatz, phase: Phase, omega: float) -> np.ndarray:
    """f = e^{-i zeta.x} L(e^{i zeta.x} a) with the exact coefficients.

    The O(tau) part is assembled from the transport combination and the
    mollification error so that cancellations happen analytically.
    """
    c, grid = ans.coeffs, ans.a.grid
    a, da = ans.a.components, ans.da
    h = grid.h
    tau, rho = phase.tau, np.asarray(phase.rho)
    z1 = phase.remainder
    lap = sum(np.gradient(da[j], h[j], axis=j + 1, edge_order=2) for j in range(3))
    curl_a = np.stack([da[1][2] - da[2][1], da[2][0] - da[0][2], da[0][1] - da[1][0]])
    grad_ba = matvec3(c.hess_beta, a) + sum(c.grad_beta[k] * da[:, k] for k in range(3))
    ga, gb = c.grad_alpha, c.grad_beta
    sm = c.sigma * c.mu - m.sigma0 * m.mu0
    z1da = sum(z1[j] * da[j] for j in range(3))
    f = (-lap - grad_ba - cross(ga, curl_a) - 1j * omega * sm * a
         - 2j * z1da - 1j * dot(gb, a) * _bc(z1, 3) - cross(ga, cross(1j * z1, a)))
    f = f - 1j * tau * (dot(gb - c.grad_beta_s, a) * _bc(rho, 3)
                        + cross(ga - c.grad_alpha_s, cross(rho, a)))
    f = f - 1j * tau * transport_combination(ans)
    return f


@dataclass
class CorrectionOperators:
    """Potentials of the correction system on the grid."""

    V1: np.ndarray
    V2: np.ndarray
    q_mu: np.ndarray
    q_sigma: np.ndarray
    grad_log_sigma_mu: np.ndarray
    grad_sigma_mu: np.ndarray

    @classmethod
    def build(cls, m: MaterialModel, c: Coefficients, omega: float) -> "CorrectionOperators":
        eye = np.eye(3).reshape((3, 3, 1, 1, 1))
        sm = c.sigma * c.mu
        pot = 1j * omega * (sm - m.sigma0 * m.mu0)
        lap_a = np.trace(c.hess_alpha)
        lap_b = np.trace(c.hess_beta)
        V1 = c.hess_beta + pot * eye
        V2 = c.hess_alpha + (pot - lap_a) * eye
        q_mu = 0.5 * lap_b + 0.25 * np.sum(c.grad_beta**2, axis=0)
        q_sigma = 0.5 * lap_a + 0.25 * np.sum(c.grad_alpha**2, axis=0)
        g = c.grad_alpha + c.grad_beta
        return cls(V1, V2, q_mu, q_sigma, g, sm * g)


def cgo_correction(m: MaterialModel, phase: Phase, ans: CgoAnsatz, omega: float,
                   f: np.ndarray | None = None, method="direct", tol=KRYLOV_TOL,
                   krylov="krylov") -> tuple:
    """Correction r (and Q = grad_zeta x r) such that L(e^{i zeta.x}(a + r)) = 0.

    method="direct":  reduced r-equation, Q computed as grad_zeta x r.
    method="coupled": the (r, Q) system with G_{zeta,mu} and G_{zeta,sigma}.
    Returns (r, Q, diagnostics).
    """
    grid, c = ans.a.grid, ans.coeffs
    if f is None:
        f = source_term(m, ans, phase, omega)
    sp = TwistedSpectral(grid, phase.zeta)
    ops = CorrectionOperators.build(m, c, omega)
    mu_h, sg_h = np.sqrt(c.mu), np.sqrt(c.sigma)
    g = ops.grad_log_sigma_mu
    gb = c.grad_beta
    pot_r = 1j * omega * (c.sigma * c.mu - m.sigma0 * m.mu0) - ops.q_mu
    shape = (3,) + grid.n
    N = int(np.prod(shape))

    if method == "direct":
        def Mop(rt):
            cz = sp.curl_zeta(rt) - 0.5 * cross(gb, rt)
            return cross(g, cz) + matvec3(c.hess_beta, rt) + pot_r * rt

        def K(x):
            return sp.solve(Mop(x.reshape(shape))).ravel()

        b = -sp.solve(mu_h * f).ravel()
        x, rep = solve_fixed_point(K, b, tol=tol, method=krylov)
        r = x.reshape(shape) / mu_h
        Q = sp.curl_zeta(r)
        mismatch = 0.0
    elif method == "coupled":
        curl_f = sp.curl_zeta(f)
        pot_q = -ops.q_sigma

        def K(x):
            rt, qt = x[:N].reshape(shape), x[N:].reshape(shape)
            r_ = rt / mu_h
            q_ = qt / sg_h
            mr = -ops.q_mu * rt + mu_h * (cross(g, q_) + matvec3(ops.V1, r_))
            mq = pot_q * qt + sg_h * (matvec3(ops.V2, q_)
                                      + 1j * omega * cross(ops.grad_sigma_mu, r_))
            return np.concatenate([sp.solve(mr).ravel(), sp.solve(mq).ravel()])

        b = np.concatenate([-sp.solve(mu_h * f).ravel(), -sp.solve(sg_h * curl_f).ravel()])
        x, rep = solve_fixed_point(K, b, tol=tol, method=krylov)
        r = x[:N].reshape(shape) / mu_h
        Q = x[N:].reshape(shape) / sg_h
        cz = sp.curl_zeta(r)
        mismatch = float(np.linalg.norm(Q - cz) / max(np.linalg.norm(Q), 1e-300))
    else:
        raise ValueError(f"unknown correction method {method!r}")

    # residual of the reduced r-equation with spectral derivatives
    Gr = sp.grad_zeta(r)
    res = (sp.apply(r) - sum(gb[j] * Gr[j] for j in range(3)) - cross(g, sp.curl_zeta(r))
           - matvec3(ops.V1, r) + f)
    fn = float(np.linalg.norm(f))
    diag = {"method": method, "solver": rep.method, "iterations": rep.iterations,
            "converged": rep.converged, "krylov_residual": rep.relative_residual,
            "pde_residual": float(np.linalg.norm(res) / fn) if fn > 0 else 0.0,
            "q_mismatch": mismatch, "floor_count": sp.floor_count,
            "floor_locations": sp.floor_locations}
    return r, Q, diag


# --- assembled solution ---------------------------------------------------------------------

@dataclass
class CgoSolution:
    H: VectorField3
    r: VectorField3
    Q: VectorField3
    f: VectorField3
    ansatz: CgoAnsatz
    phase: Phase
    diagnostics: dict

    def to_record(self) -> dict:
        d = self.diagnostics
        return {"tau": self.phase.tau,
                "norms": {k: d[k] for k in ("norm_r", "norm_curlzeta_r", "norm_f",
                                            "norm_f_over_tau", "norm_curlzeta_r_over_tau",
                                            "norm_div_muH", "norm_muH", "div_ratio")},
                "residuals": {k: d[k] for k in ("pde_residual", "krylov_residual",
                                                "curlcurl_residual", "transport_residual")},
                "solver": {k: d[k] for k in ("method", "solver", "iterations", "converged",
                                             "floor_count")},
                "guard_status": d["guard"]}


def _exp_weight(grid: Grid3, zeta):
    """|e^{i zeta.x}| normalized to max 1 (avoids overflow in norm ratios)."""
    e = -np.tensordot(np.imag(zeta), grid.points(), axes=1)
    return np.exp(e - e.max()), e.max()


def _region(grid: Grid3, radius):
    if radius is None:
        return np.ones(grid.n, dtype=bool)
    return grid.radius_squared() <= radius**2


def conjugated_residual(c: Coefficients, grid: Grid3, zeta, a, da, r, omega,
                        sp: TwistedSpectral | None = None, curl_r=None) -> tuple:
    """Residual of grad_zeta x (sigma^-1 grad_zeta x (a + r)) - i omega mu (a + r).

    ``da[j]`` holds the analytic derivative d_j a; r is differentiated spectrally.
    Returns the residual and the pointwise scale |zeta|^2 |(a + r)/sigma|^2
    against which it is measured.
    """
    zeta = np.asarray(zeta)
    sp = sp or TwistedSpectral(grid, zeta)
    if curl_r is None:
        curl_r = sp.curl_zeta(r)
    curl_a = np.stack([da[1][2] - da[2][1], da[2][0] - da[0][2],
                       da[0][1] - da[1][0]]) + 1j * cross(zeta, a)
    Ca = curl_a / c.sigma
    cc_a = np.stack([d_axis(Ca[(k + 2) % 3], grid.h, (k + 1) % 3)
                     - d_axis(Ca[(k + 1) % 3], grid.h, (k + 2) % 3) for k in range(3)])
    cc_a = cc_a + 1j * cross(zeta, Ca)
    cc_r = (sp.curl_zeta(curl_r) - cross(c.grad_alpha, curl_r)) / c.sigma
    mass = 1j * omega * c.mu * (a + r)
    # each term of the operator is O(|zeta|^2 |H|); measure the residual on that scale
    scale = float(np.sum(np.abs(zeta) ** 2)) ** 2 * np.sum(np.abs((a + r) / c.sigma) ** 2, axis=0)
    return cc_a + cc_r - mass, scale


def build_cgo(m: MaterialModel, phase: Phase, grid: Grid3, omega: float, s0: float = 0.0,
              form: str = "transport", method: str = "direct", epsilon=EPSILON, theta=THETA,
              phi_kind="poly", mollifier_radius=1.0, cutoff_scale=1.0, delta=-0.5,
              region_radius=None, guard="raise", tol=KRYLOV_TOL) -> CgoSolution:
    """Assemble H = e^{i zeta.x}(a + r) and its diagnostics.

    ``region_radius`` restricts the divergence and curl-curl ratios to a ball
    (default: the whole box).  ``guard`` is "raise" or "report".
    """
    gstat = resolution_guard(grid, phase.zeta)
    if guard == "raise" and not gstat["ok"]:
        check_resolution(grid, phase.zeta)
    ans = build_amplitude(m, grid, phase, s0, form, epsilon, theta, phi_kind,
                          mollifier_radius, cutoff_scale)
    f = source_term(m, ans, phase, omega)
    r, Q, diag = cgo_correction(m, phase, ans, omega, f=f, method=method, tol=tol)
    params = WeightedNormParams(delta)
    tau = phase.tau
    c = ans.coeffs
    a = ans.a.components
    zeta = np.asarray(phase.zeta)
    sp = TwistedSpectral(grid, zeta)
    curl_r = sp.curl_zeta(r)
    # divergence of mu H in the conjugated frame
    div_a = sum(ans.da[j][j] for j in range(3)) + 1j * dot(zeta, a)
    w = c.mu * (div_a + sp.div_zeta(r) + dot(c.grad_beta, a + r))
    wt, _ = _exp_weight(grid, zeta)
    reg = _region(grid, region_radius)
    muH = c.mu * (a + r)
    nd = float(np.sqrt(np.sum((np.abs(w) * wt)[reg] ** 2)))
    nm = float(np.sqrt(np.sum((np.sum(np.abs(muH) ** 2, axis=0) * wt**2)[reg])))
    ccres, scale = conjugated_residual(c, grid, zeta, a, ans.da, r, omega, sp, curl_r)
    num = float(np.sqrt(np.sum((np.sum(np.abs(ccres) ** 2, axis=0) * wt**2)[reg])))
    den = float(np.sqrt(np.sum((scale * wt**2)[reg])))
    T = transport_combination(ans)
    Tn = weighted_norm(T - ans.cutoff_term, params, shifted=True, grid=grid)
    diag.update({
        "tau": tau, "omega": omega, "s0": s0, "form": form,
        "norm_r": weighted_norm(r, params, grid=grid),
        "norm_Q": weighted_norm(Q, params, grid=grid),
        "norm_curlzeta_r": weighted_norm(curl_r, params, grid=grid),
        "norm_f": weighted_norm(f, params, shifted=True, grid=grid),
        "norm_a": weighted_norm(a, params, grid=grid),
        "norm_div_muH": nd, "norm_muH": nm,
        "div_ratio": nd / nm if nm > 0 else 0.0,
        "curlcurl_residual": num / den if den > 0 else 0.0,
        "transport_residual": Tn,
        "psi_sup": float(np.max(np.abs(ans.psi_sharp.values))),
        "guard": gstat,
    })
    diag["norm_f_over_tau"] = diag["norm_f"] / tau
    diag["norm_curlzeta_r_over_tau"] = diag["norm_curlzeta_r"] / tau
    ph = np.exp(1j * np.tensordot(zeta, grid.points(), axes=1))
    H = VectorField3(grid, ph * (a + r))
    return CgoSolution(H, VectorField3(grid, r), VectorField3(grid, Q), VectorField3(grid, f),
                       ans, phase, diag)


# --- standard model ----------------------------------------------------------------------

# The oscillation of e^{i zeta.x} runs along rho1 = e1, so only that axis is
# refined: 256 x 32 x 32 has as many points as a 64^3 grid.
STANDARD_BOX = 1.5
STANDARD_SHAPE = (256, 32, 32)
STANDARD_MOLLIFIER_RADIUS = 0.1
STANDARD_OMEGA = 1.0
STANDARD_XI = (0.0, 0.0, 2.0)


def standard_cgo_grid(shape=STANDARD_SHAPE, length=STANDARD_BOX) -> Grid3:
    return periodic_grid(length, shape)


def standard_phase(tau, xi=STANDARD_XI, omega=STANDARD_OMEGA, sigma0=1.0, mu0=1.0) -> PhasePair:
    return build_phase_pair(xi, (1.0, 0.0, 0.0), (0.0, 1.0, 0.0), tau, omega, sigma0, mu0)


def cgo_ladder(m: MaterialModel, taus=(8, 32, 128), grid: Grid3 | None = None,
               omega=STANDARD_OMEGA, s0=0.0, xi=STANDARD_XI, member=1,
               mollifier_radius=STANDARD_MOLLIFIER_RADIUS, **kw) -> list:
    """Diagnostics records of build_cgo along a tau ladder."""
    grid = grid or standard_cgo_grid()
    out = []
    for tau in taus:
        pp = standard_phase(tau, xi, omega, m.sigma0, m.mu0)
        sol = build_cgo(m, pp.member(member), grid, omega, s0=s0,
                        mollifier_radius=mollifier_radius, **kw)
        out.append(sol.to_record())
        del sol
    return out
