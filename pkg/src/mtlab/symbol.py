"""Boundary symbol of the impedance map, boundary sigma recovery and apparent resistivity.

Coordinates are boundary adapted: the face is ``x3 = 0`` of a box lying in
``x3 > 0`` with outward normal ``nu = (0, 0, -1)``, so the tangential trace is
``nu x H = (H2, -H1)``.  On a box face the two tangential axes play the roles of
``x1, x2`` and the inward normal axis plays ``x3``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import solve_banded

from .errors import (GeometryError, GuardError, MaterialError, PreconditionError,
                     SingularFrequencyError, StructureWarning)
from .fields import (FACES, Grid3, TangentialTrace, VectorField3, cross_normal, face_axis_side,
                     face_normal, face_tangent_axes)
from .forward import ForwardProblem, ImpedanceMatrix
from .io import write_csv
from .material import MaterialModel

STRUCTURE_TOL = 0.2
RESOLVE_LIMIT = np.pi / 4   # largest tangential phase step per cell (8 points per wavelength)
DECAY_LIMIT = 1.0           # largest normal decay per cell


# --- symbols ------------------------------------------------------------------

@dataclass(frozen=True)
class SymbolMatrix:
    """Matrix-valued symbol a(x', xi') at a fixed boundary point.

    ``evaluate`` maps a tangential frequency to a ``size x size`` array;
    ``degree`` is the positive homogeneity degree in xi' (None if not homogeneous).
    """

    size: int
    evaluate: Callable
    degree: float | None = None
    point: tuple | None = None

    def __call__(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        if xi.shape != (2,):
            raise ValueError("tangential frequency must be a 2-vector")
        out = np.asarray(self.evaluate(xi), dtype=complex)
        if out.shape != (self.size, self.size):
            raise ValueError(f"symbol returned shape {out.shape}, expected {(self.size,) * 2}")
        return out

    @classmethod
    def linear(cls, A1, A2, point=None) -> "SymbolMatrix":
        """Symbol A1 xi_1 + A2 xi_2."""
        A1, A2 = np.asarray(A1, dtype=complex), np.asarray(A2, dtype=complex)
        return cls(A1.shape[0], lambda xi: A1 * xi[0] + A2 * xi[1], 1.0, point)


def _xi_norm(xi) -> tuple:
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (2,) or not np.all(np.isfinite(xi)):
        raise ValueError("tangential frequency must be a finite 2-vector")
    r = float(np.hypot(xi[0], xi[1]))
    if r == 0.0:
        raise SingularFrequencyError("the boundary symbol is singular at xi' = 0")
    return xi, r


def principal_symbol_Z(sigma_boundary: float, xi_prime) -> np.ndarray:
    """(1/(sigma |xi'|)) [[xi1 xi2, xi2^2], [-xi1^2, -xi1 xi2]]."""
    if not sigma_boundary > 0:
        raise MaterialError("boundary conductivity must be positive")
    (x1, x2), r = _xi_norm(xi_prime)
    return np.array([[x1 * x2, x2 * x2], [-x1 * x1, -x1 * x2]], dtype=complex) / (
        sigma_boundary * r)


def principal_symbol_B(xi_prime) -> np.ndarray:
    """Principal symbol -|xi'| I of the factor with d3 H = B H at the boundary."""
    _, r = _xi_norm(xi_prime)
    return -r * np.eye(3, dtype=complex)


def z_symbol(sigma_boundary: float, point=None) -> SymbolMatrix:
    return SymbolMatrix(2, lambda xi: principal_symbol_Z(sigma_boundary, xi), 1.0, point)


def exact_halfspace_symbol(sigma: float, mu: float, omega: float, xi_prime) -> np.ndarray:
    """Full symbol of Z for constant coefficients on the half-space x3 > 0.

    A mode e^{i xi'.x'} e^{-gamma x3} with gamma^2 = |xi'|^2 - i omega sigma mu,
    Re gamma > 0.  Tends to the principal symbol as |xi'| grows.
    """
    (x1, x2), r = _xi_norm(xi_prime)
    k2 = 1j * omega * sigma * mu
    gam = np.sqrt(r * r - k2 + 0j)
    return np.array([[x1 * x2, x2 * x2 - k2], [-x1 * x1 + k2, -x1 * x2]]) / (sigma * gam)


def boundary_matrices(m, boundary_point, form: str = "literal") -> tuple:
    """First-order coefficient matrices of the operator at a boundary point.

    Returns ``(M, N)``: M is the 3x3 symbol linear in xi' (D_j replaced by xi_j),
    N the numeric matrix multiplying D_3, built from the log-gradients of sigma
    (alpha) and mu (beta).  ``form="literal"`` sets
    N_33 = -d3 beta; ``form="operator"`` uses +d3 beta, which is what the
    first-order part of -grad(grad beta . H) - grad alpha x curl H gives.
    """
    if form not in ("literal", "operator"):
        raise ValueError(f"unknown form {form!r}")
    x = np.asarray(boundary_point, dtype=float).reshape(3, 1)
    ga = np.asarray(m.grad_log("sigma", x), dtype=float).reshape(3)
    gb = np.asarray(m.grad_log("mu", x), dtype=float).reshape(3)
    a1, a2, a3 = ga
    b1, b2, b3 = gb
    A1 = np.array([[b1, b2 + a2, b3 + a3],
                   [0.0, -a1, 0.0],
                   [0.0, 0.0, -a1]])
    A2 = np.array([[-a2, 0.0, 0.0],
                   [b1 + a1, b2, b3 + a3],
                   [0.0, 0.0, -a2]])
    n33 = -b3 if form == "literal" else b3
    N = np.array([[-a3, 0.0, 0.0],
                  [0.0, -a3, 0.0],
                  [b1 + a1, b2 + a2, n33]])
    return SymbolMatrix.linear(A1, A2, tuple(x.ravel())), N


# --- face modes -----------------------------------------------------------------

def _face_geometry(face: str, grid: Grid3) -> tuple:
    axis, side = face_axis_side(face)
    a, b = face_tangent_axes(face)
    return axis, side, a, b


def mode_frequencies(k: int, l: int, face: str, grid: Grid3, discrete: bool = False) -> np.ndarray:
    """Tangential frequency of the face mode (k, l): (k pi / L_a, l pi / L_b).

    With ``discrete`` the three-point symbol (2/h) sin(xi h / 2) is returned instead.
    """
    _, _, a, b = _face_geometry(face, grid)
    xi = np.array([k * np.pi / grid.extent[a], l * np.pi / grid.extent[b]])
    if discrete:
        h = np.array([grid.h[a], grid.h[b]])
        xi = 2.0 / h * np.sin(xi * h / 2.0)
    return xi


def resolved(xi, face: str, grid: Grid3, limit: float = RESOLVE_LIMIT) -> bool:
    _, _, a, b = _face_geometry(face, grid)
    return bool(max(abs(xi[0]) * grid.h[a], abs(xi[1]) * grid.h[b]) <= limit)


def _fold(n: int, k: int) -> float:
    """2 * int_0^1 cos(n pi s) sin(k pi s) ds."""
    if (n + k) % 2 == 0:
        return 0.0
    return 2.0 * k * 2.0 / (np.pi * (k * k - n * n))


def synthetic_impedance(sigma_boundary: float, grid: Grid3, basis_size: int, face: str = "z-",
                        discrete: bool = True) -> ImpedanceMatrix:
    """Impedance matrix of the principal symbol alone on one face's sine basis.

    The xi_a^2 and xi_b^2 entries act diagonally on sine modes; the xi_a xi_b
    entries map sin.sin to cos.cos, whose sine coefficients couple modes of
    opposite parity.  ``omega`` of the result is 0 (no frequency dependence).
    """
    from .forward import trace_basis
    basis = trace_basis(basis_size, (face,))
    Z = np.zeros((len(basis), len(basis)), dtype=complex)
    for j, ej in enumerate(basis):
        xa, xb = mode_frequencies(ej["k"], ej["l"], face, grid, discrete)
        r = np.hypot(xa, xb)
        p = np.array([[xa * xb, xb * xb], [-xa * xa, -xa * xb]]) / (sigma_boundary * r)
        for i, ei in enumerate(basis):
            ci, cj = ei["component"], ej["component"]
            if ci != cj:
                if (ei["k"], ei["l"]) == (ej["k"], ej["l"]):
                    Z[i, j] = p[ci, cj]
            else:
                # D_a D_b maps sin.sin to -xi_a xi_b cos.cos
                Z[i, j] = -p[ci, cj] * _fold(ej["k"], ei["k"]) * _fold(ej["l"], ei["l"])
    return ImpedanceMatrix(basis, Z, 0.0)


# --- boundary sigma -------------------------------------------------------------

@dataclass
class SigmaEstimate:
    face: str
    modes: list
    xi: np.ndarray
    estimates: np.ndarray
    entrywise: np.ndarray
    masked: list
    sigma: float
    top_mode: tuple


def recover_boundary_sigma(Z: ImpedanceMatrix, face: str, grid: Grid3, xi_prime_ladder=None,
                           discrete: bool = True, mask_tol: float = 1e-10,
                           resolve_limit: float = RESOLVE_LIMIT) -> SigmaEstimate:
    """Boundary conductivity from the same-mode, component-swapping entries of Z.

    For a sine mode (k, l) the principal symbol gives Z[(k,l,0),(k,l,1)] =
    xi_b^2/(sigma |xi'|) and Z[(k,l,1),(k,l,0)] = -xi_a^2/(sigma |xi'|), so their
    difference is |xi'|/sigma.  The difference is used because the individual
    entries carry box-edge contamination that largely cancels in it.
    ``xi_prime_ladder`` lists (k, l) modes (default: the diagonal modes (k, k)).
    The returned ``sigma`` is the estimate at the highest resolved frequency.
    """
    idx = {(e["k"], e["l"], e["component"]): i for i, e in enumerate(Z.basis)
           if e["face"] == face}
    if not idx:
        raise PreconditionError(f"impedance matrix has no basis functions on face {face!r}")
    if xi_prime_ladder is None:
        ks = sorted({k for (k, l, _) in idx if k == l})
        xi_prime_ladder = [(k, k) for k in ks]
    modes, xis, est, entry, masked = [], [], [], [], []
    scale = np.max(np.abs(Z.entries)) if Z.entries.size else 0.0
    for k, l in xi_prime_ladder:
        if (k, l, 0) not in idx or (k, l, 1) not in idx:
            raise PreconditionError(f"mode {(k, l)} is not in the basis of face {face!r}")
        xa, xb = mode_frequencies(k, l, face, grid, discrete)
        r = np.hypot(xa, xb)
        z01 = Z.entries[idx[k, l, 0], idx[k, l, 1]].real
        z10 = Z.entries[idx[k, l, 1], idx[k, l, 0]].real
        d = z01 - z10
        modes.append((k, l))
        xis.append(mode_frequencies(k, l, face, grid, False))
        if abs(d) <= mask_tol * max(scale, 1e-300):
            masked.append((k, l))
            est.append(np.nan)
        else:
            est.append(r / d)
        e01 = xb * xb / (r * z01) if abs(z01) > mask_tol * scale else np.nan
        e10 = -xa * xa / (r * z10) if abs(z10) > mask_tol * scale else np.nan
        entry.append((e01, e10))
    xis = np.array(xis)
    est = np.array(est, dtype=float)
    norms = np.hypot(xis[:, 0], xis[:, 1])
    ok = [i for i in range(len(modes)) if np.isfinite(est[i])
          and resolved(xis[i], face, grid, resolve_limit)]
    if not ok:
        raise GuardError("no resolved, unmasked mode in the ladder")
    top = max(ok, key=lambda i: norms[i])
    return SigmaEstimate(face, modes, xis, est, np.array(entry, dtype=float), masked,
                         float(est[top]), modes[top])


# --- factorization probe ----------------------------------------------------------

def separable_mode(face: str, grid: Grid3, xi) -> VectorField3:
    """Tangential profile of the box mode with tangential frequency ``xi``.

    H_a = cos(xi_a s_a) sin(xi_b s_b), H_b = sin(xi_a s_a) cos(xi_b s_b) (s measured
    from the face corner).  With the normal component sin.sin this pattern meets
    the tangential and divergence conditions on every side face.
    """
    _, _, a, b = _face_geometry(face, grid)
    X = grid.mesh()
    sa = X[a] - grid.origin[a]
    sb = X[b] - grid.origin[b]
    H = np.zeros((3,) + grid.n, dtype=complex)
    H[a] = np.cos(xi[0] * sa) * np.sin(xi[1] * sb)
    H[b] = np.sin(xi[0] * sa) * np.cos(xi[1] * sb)
    return VectorField3(grid, H)


def mode_trace(face: str, grid: Grid3, xi) -> TangentialTrace:
    H = separable_mode(face, grid, xi).components
    from .fields import face_index
    samples = H[(slice(None),) + face_index(face, grid)]
    t = cross_normal(face_normal(face), samples)
    a, b = face_tangent_axes(face)
    return TangentialTrace(face, np.stack([t[a], t[b]]), grid)


def discrete_rate(q: complex, h: float) -> complex:
    """Rate kappa of a grid mode H_j ~ q^j under the three-point second difference.

    Solves (q + 1/q - 2)/h^2 = kappa^2 with Re kappa >= 0, so for a decaying
    mode kappa plays the role of -d3 H / H.
    """
    kap = np.sqrt(complex(q + 1.0 / q - 2.0)) / h
    return -kap if kap.real < 0 else kap


def mode_decay_oracle(xi_norm: float, sigma: float, mu: float, omega: float,
                      depth: float) -> complex:
    """-d3 H / H at x3 = 0 for H'' = (|xi'|^2 - i omega sigma mu) H, H(depth) = 0."""
    gam = np.sqrt(xi_norm**2 - 1j * omega * sigma * mu + 0j)
    return gam / np.tanh(gam * depth)


@dataclass
class ProbeReport:
    face: str
    point: tuple
    modes: list
    xi: np.ndarray
    rates: np.ndarray
    deviation: np.ndarray
    oracle: np.ndarray
    slope: float
    decreasing: bool
    details: dict = field(default_factory=dict)


def _nearest(grid: Grid3, axis: int, value: float) -> int:
    x = grid.origin[axis] + grid.h[axis] * np.arange(grid.n[axis])
    return int(np.argmin(np.abs(x - value)))


def factorization_probe(m, boundary_point, xi_prime_ladder, grid: Grid3 | None = None,
                        omega: float = 1.0, face: str = "z-", problem: ForwardProblem | None = None,
                        resolve_limit: float = RESOLVE_LIMIT) -> ProbeReport:
    """Measure d3 H / H at a boundary point for high-frequency tangential data.

    Each rung |xi'| is rounded to the diagonal box mode (k, k) nearest to it.  The
    face data is the trace of :func:`separable_mode`; the rate is read from the
    first two node layers through :func:`discrete_rate` and compared with the
    discrete tangential symbol, so that grid dispersion does not masquerade as a
    departure from -|xi'|.  ``deviation`` is the largest relative departure over
    the field components that are not negligible at the point.
    """
    grid = grid or Grid3.cube(64, -1.0, 1.0)
    axis, side, a, b = _face_geometry(face, grid)
    p = np.asarray(boundary_point, dtype=float)
    ia, ib = _nearest(grid, a, p[a]), _nearest(grid, b, p[b])
    inward = 1 if side == 0 else -1
    i0 = 0 if side == 0 else grid.n[axis] - 1
    hn = grid.h[axis]
    prob = problem or ForwardProblem(m, omega, grid)
    depth = grid.extent[axis]
    unit = np.pi * np.hypot(1.0 / grid.extent[a], 1.0 / grid.extent[b])
    modes, xis, rates, devs, oracle = [], [], [], [], []
    for target in xi_prime_ladder:
        k = max(1, int(round(target / unit)))
        xi = mode_frequencies(k, k, face, grid)
        if not resolved(xi, face, grid, resolve_limit):
            raise GuardError(f"|xi'| = {np.hypot(*xi):.3g} is not resolved on this grid "
                             f"(phase step above {resolve_limit:.3g} per cell)")
        s = np.hypot(*mode_frequencies(k, k, face, grid, discrete=True))
        if s * hn > DECAY_LIMIT:
            raise GuardError(f"decay length 1/|xi'| = {1 / s:.3g} is below the normal spacing")
        sol = prob.solve(boundary={face: mode_trace(face, grid, xi)})
        H = sol.H.components
        row = []
        for c in range(3):
            idx0, idx1 = [slice(None)] * 3, [slice(None)] * 3
            idx0[a] = idx1[a] = ia
            idx0[b] = idx1[b] = ib
            idx0[axis], idx1[axis] = i0, i0 + inward
            h0, h1 = H[c][tuple(idx0)], H[c][tuple(idx1)]
            if abs(h0) < 1e-8 * np.max(np.abs(H[c])) or h1 == 0:
                row.append(np.nan + 0j)
            else:
                row.append(discrete_rate(h1 / h0, hn))
        row = np.array(row)
        dev = np.abs(row - s) / s
        modes.append((k, k))
        xis.append(np.hypot(*xi))
        rates.append(row)
        devs.append(np.nanmax(dev))
        if isinstance(m, MaterialModel) and not m.bumps:
            orc = mode_decay_oracle(np.hypot(*xi), m.sigma0, m.mu0, omega, depth)
            oracle.append(abs(orc - np.hypot(*xi)) / np.hypot(*xi))
        else:
            oracle.append(np.nan)
    xis, devs = np.array(xis), np.array(devs)
    slope = float(np.polyfit(np.log(xis), np.log(devs), 1)[0]) if len(xis) > 1 else np.nan
    return ProbeReport(face, tuple(p), modes, xis, np.array(rates), devs, np.array(oracle),
                       slope, bool(np.all(np.diff(devs) < 0)),
                       {"omega": float(omega), "grid_n": list(grid.n)})


# --- layered media ------------------------------------------------------------------

@dataclass(frozen=True)
class LayeredModel:
    """Horizontally layered conductivity with smoothed interfaces, constant mu.

    ``sigmas[j]`` holds between interface depths ``interfaces[j-1]`` and
    ``interfaces[j]`` measured from ``surface`` along +x3.  log sigma steps by a
    tanh of half-width ``width`` so the model has smooth log-gradients.
    """

    sigmas: tuple
    interfaces: tuple = ()
    surface: float = 0.0
    width: float = 0.02
    mu0: float = 1.0
    bumps: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "sigmas", tuple(float(s) for s in self.sigmas))
        object.__setattr__(self, "interfaces", tuple(float(d) for d in self.interfaces))
        if len(self.sigmas) != len(self.interfaces) + 1:
            raise MaterialError("need one more layer conductivity than interfaces")
        if min(self.sigmas) <= 0 or self.mu0 <= 0:
            raise MaterialError("layer conductivities and mu must be positive")
        if any(np.diff(self.interfaces) <= 0) or any(d <= 0 for d in self.interfaces):
            raise MaterialError("interface depths must be positive and increasing")
        if self.width <= 0:
            raise MaterialError("interface width must be positive")

    @property
    def sigma0(self) -> float:
        return self.sigmas[0]

    @property
    def thicknesses(self) -> tuple:
        return tuple(np.diff((0.0,) + self.interfaces))

    def _depth(self, where):
        x = where.points() if isinstance(where, Grid3) else np.asarray(where, dtype=float)
        return x, x[2] - self.surface

    def log_sigma_depth(self, d) -> np.ndarray:
        d = np.asarray(d, dtype=float)
        logs = np.log(self.sigmas)
        out = np.full(d.shape, logs[0])
        for j, dj in enumerate(self.interfaces):
            out = out + (logs[j + 1] - logs[j]) * 0.5 * (1.0 + np.tanh((d - dj) / self.width))
        return out

    def sigma_depth(self, d) -> np.ndarray:
        return np.exp(self.log_sigma_depth(d))

    def sigma(self, where) -> np.ndarray:
        return self.sigma_depth(self._depth(where)[1])

    def mu(self, where) -> np.ndarray:
        x, _ = self._depth(where)
        return np.full(x.shape[1:], self.mu0)

    def coefficient(self, target, where):
        return self.sigma(where) if target == "sigma" else self.mu(where)

    def grad_log(self, target: str, where) -> np.ndarray:
        x, d = self._depth(where)
        g = np.zeros(x.shape)
        if target == "sigma":
            logs = np.log(self.sigmas)
            for j, dj in enumerate(self.interfaces):
                g[2] += (logs[j + 1] - logs[j]) * 0.5 / self.width / np.cosh((d - dj) / self.width) ** 2
        return g

    def check_on(self, grid: Grid3) -> None:
        return None


def _background(m):
    if isinstance(m, LayeredModel):
        return m
    return LayeredModel((m.sigma0,), (), 0.0, 1.0, m.mu0)


def layered_impedance(sigmas, thicknesses, omega: float, mu: float = 1.0,
                      convention: str = "geophysics") -> complex:
    """Surface impedance E/H of a layered half-space by the classical recursion.

    Bottom-up: Z_N = zeta_N, Z_j = zeta_j (Z_{j+1} + zeta_j t_j) / (zeta_j + Z_{j+1} t_j)
    with t_j = tanh(gamma_j d_j), gamma_j = sqrt(-i omega mu sigma_j) (Re > 0) and
    zeta_j = gamma_j / sigma_j in the curl E = i omega mu H convention.
    """
    sigmas = [float(s) for s in sigmas]
    if len(thicknesses) != len(sigmas) - 1:
        raise ValueError("need len(sigmas) - 1 thicknesses")
    gam = [np.sqrt(-1j * omega * mu * s) for s in sigmas]
    zeta = [g / s for g, s in zip(gam, sigmas)]
    Z = zeta[-1]
    for j in range(len(sigmas) - 2, -1, -1):
        t = np.tanh(gam[j] * thicknesses[j])
        Z = zeta[j] * (Z + zeta[j] * t) / (zeta[j] + Z * t)
    if convention == "geophysics":
        return complex(np.conj(Z))
    if convention != "native":
        raise ValueError(f"unknown convention {convention!r}")
    return complex(Z)


def column_profile(m, omega: float, depths, skin_depths: float = 8.0,
                   points: int = 4000) -> np.ndarray:
    """H(d) of the one-dimensional field with H(0) = 1, decaying with depth.

    Solves -(sigma^-1 H')' = i omega mu H by conservative finite differences on
    a fine column reaching ``skin_depths`` skin depths into the bottom layer,
    with H = 0 at its end, and interpolates to ``depths``.
    """
    lm = _background(m)
    depths = np.asarray(depths, dtype=float)
    bottom = max(lm.interfaces, default=0.0)
    skin = np.sqrt(2.0 / (omega * lm.mu0 * lm.sigmas[-1]))
    D = max(float(np.max(depths)), bottom) + skin_depths * skin
    skin_top = np.sqrt(2.0 / (omega * lm.mu0 * max(lm.sigmas)))
    points = int(max(points, D / min(skin_top / 50.0, lm.width / 5.0)))
    z = np.linspace(0.0, D, points)
    h = z[1] - z[0]
    inv = 1.0 / lm.sigma_depth(0.5 * (z[1:] + z[:-1]))
    n = points - 2
    ab = np.zeros((3, n), dtype=complex)
    ab[0, 1:] = -inv[1:-1] / h**2
    ab[1] = (inv[:-1] + inv[1:]) / h**2 - 1j * omega * lm.mu0
    ab[2, :-1] = -inv[1:-1] / h**2
    rhs = np.zeros(n, dtype=complex)
    rhs[0] = inv[0] / h**2
    H = np.concatenate([[1.0], solve_banded((1, 1), ab, rhs), [0.0]])
    return np.interp(depths, z, H.real) + 1j * np.interp(depths, z, H.imag)


def column_field(m, omega: float, grid: Grid3, polarization: int, face: str = "z-") -> VectorField3:
    """Primary one-dimensional field polarized along ``polarization`` (0 or 1)."""
    if face != "z-":
        raise GeometryError("layered soundings use the z- face as the surface")
    if polarization not in (0, 1):
        raise ValueError("polarization must be 0 or 1")
    surface = getattr(m, "surface", grid.origin[2])
    z = grid.origin[2] + grid.h[2] * np.arange(grid.n[2])
    if np.min(z) < surface - 1e-12:
        raise GeometryError("grid extends above the layered model's surface")
    prof = column_profile(m, omega, z - surface)
    H = np.zeros((3,) + grid.n, dtype=complex)
    H[polarization] = prof[None, None, :]
    return VectorField3(grid, H)


def impedance_tensor(m, omega: float, grid: Grid3, face: str = "z-",
                     convention: str = "geophysics", problem: ForwardProblem | None = None
                     ) -> np.ndarray:
    """2x2 surface impedance tensor [[Zxx, Zxy], [Zyx, Zyy]] from two forward solves.

    Each solve takes the one-dimensional background field of one polarization as
    data on all faces; E and H are averaged over the central face samples and
    Z solves E_t = Z H_t.
    """
    prob = problem or ForwardProblem(m, omega, grid)
    from .fields import face_index
    idx = face_index(face, grid)
    ca, cb = grid.n[0] // 2, grid.n[1] // 2
    win = (slice(max(ca - 1, 0), ca + 2), slice(max(cb - 1, 0), cb + 2))
    E = np.zeros((2, 2), dtype=complex)
    Hm = np.zeros((2, 2), dtype=complex)
    for p in (0, 1):
        sol = prob.solve(boundary=column_field(m, omega, grid, p, face))
        e = sol.E.components[(slice(None),) + idx]
        hh = sol.H.components[(slice(None),) + idx]
        for c in (0, 1):
            E[c, p] = np.mean(e[c][win])
            Hm[c, p] = np.mean(hh[c][win])
    Z = E @ np.linalg.inv(Hm)
    if convention == "geophysics":
        return np.conj(Z)
    if convention != "native":
        raise ValueError(f"unknown convention {convention!r}")
    return Z


# --- apparent resistivity ------------------------------------------------------------

def _offdiag(Z, structure_tol: float):
    Z = np.asarray(Z, dtype=complex)
    if Z.ndim >= 2 and Z.shape[-2:] == (2, 2):
        off = 0.5 * (Z[..., 0, 1] - Z[..., 1, 0])
        diag = np.maximum(np.abs(Z[..., 0, 0]), np.abs(Z[..., 1, 1]))
        leak = diag / np.maximum(np.abs(off), 1e-300)
        if np.any(leak > structure_tol):
            warnings.warn(f"diagonal impedance leakage {np.max(leak):.3g} exceeds "
                          f"{structure_tol:.3g}; scalar impedance is not well defined",
                          StructureWarning, stacklevel=3)
        return off
    return Z


def apparent_resistivity(Z, omega, mu_boundary: float = 1.0,
                         structure_tol: float = STRUCTURE_TOL) -> np.ndarray:
    """rho_a = |Z_off|^2 / (omega mu) for scalar impedances or 2x2 tensors.

    For tensors the off-diagonal scalar (Zxy - Zyx)/2 is used; diagonal entries
    above ``structure_tol`` times it raise a :class:`StructureWarning`.
    """
    omega = np.asarray(omega, dtype=float)
    if np.any(omega <= 0) or mu_boundary <= 0:
        raise ValueError("omega and mu must be positive")
    z = _offdiag(Z, structure_tol)
    return np.abs(z) ** 2 / (omega * mu_boundary)


def impedance_phase(Z, structure_tol: float = STRUCTURE_TOL) -> np.ndarray:
    """Phase of the (off-diagonal) impedance in degrees, geophysics convention."""
    return np.degrees(np.angle(_offdiag(Z, structure_tol)))


def sounding(m, omegas, grid: Grid3) -> list:
    """Rows (omega, rho_a, phase) from forward-solver impedance tensors."""
    rows = []
    for w in omegas:
        Z = impedance_tensor(m, w, grid)
        rows.append((float(w), float(apparent_resistivity(Z, w, m.mu0)),
                     float(impedance_phase(Z))))
    return rows


def layered_sounding(sigmas, thicknesses, omegas, mu: float = 1.0) -> list:
    rows = []
    for w in omegas:
        Z = layered_impedance(sigmas, thicknesses, w, mu)
        rows.append((float(w), float(apparent_resistivity(Z, w, mu)), float(impedance_phase(Z))))
    return rows


def write_sounding_csv(path, rows):
    return write_csv(path, ["omega", "rho_a", "phase"], rows)
