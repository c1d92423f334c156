"""Bilinear integral identity between two materials and the Fourier functionals it yields.

For Maxwell solutions H1 (material 1) and H2 (material 2) with equal
boundary impedance data,

    int (mu1 - mu2) H1.H2 + (1/(i omega)) int (sigma1 - sigma2)/(sigma1 sigma2) curl H1 . curl H2 = 0.

With CGO pairs the products only carry e^{i xi.x}, so the identity is
evaluated in the conjugated frame and split into the terms of its large-tau
expansion.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid

from .cgo import (CgoSolution, TwistedSpectral, cauchy_array, cross, orthonormal_frame,
                  periodic_grid)
from .errors import GridSizeError, ValidationError
from .fields import (Grid3, ScalarField3, VectorField3, curl_array, face_index, face_normal,
                     face_tangent_axes, integrate)
from .material import MaterialModel

WEIGHT_FLOOR = 1e-8


@dataclass
class IdentityReport:
    value: complex
    term_breakdown: dict
    tau: float | None = None
    quadrature_error: float = 0.0

    @property
    def scaled(self) -> complex:
        """value / tau^2 (the quantity whose large-tau limit is the Fourier functional)."""
        return self.value / self.tau**2 if self.tau else self.value


@dataclass
class FourierScan:
    xi_grid: np.ndarray
    values_sigma: np.ndarray | None = None
    values_mu: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.xi_grid = np.atleast_2d(np.asarray(self.xi_grid, dtype=float))
        for v in (self.values_sigma, self.values_mu):
            if v is not None and len(v) != len(self.xi_grid):
                raise ValidationError("FourierScan values must match xi_grid in length")


def _same_grid(a: Grid3, b: Grid3):
    if a != b:
        raise GridSizeError("fields must live on a common grid")


def _integrate_with_error(vals: np.ndarray, grid: Grid3) -> tuple:
    """Trapezoid value and a coarse-grid (every second point) error estimate."""
    full = complex(integrate(vals, grid))
    sub = vals[::2, ::2, ::2]
    if min(sub.shape) >= 4:
        g2 = Grid3(grid.origin, tuple(np.array(grid.h) * 2 * (np.array(sub.shape) - 1)), sub.shape)
        coarse = complex(integrate(sub, g2))
        err = abs(full - coarse) / 3.0
    else:
        err = float("nan")
    return full, err


def _dotv(u, v):
    return np.sum(u * v, axis=0)


def integral_identity(m1: MaterialModel, m2: MaterialModel, H1, H2, omega: float) -> IdentityReport:
    """Left-hand side of the two-material identity.

    ``H1``/``H2`` are VectorField3 samples (curls by finite differences) or
    CgoSolution objects (conjugated frame, curls of the corrections spectral).
    """
    if isinstance(H1, CgoSolution) and isinstance(H2, CgoSolution):
        return _cgo_identity(m1, m2, H1, H2, omega)
    if isinstance(H1, CgoSolution) or isinstance(H2, CgoSolution):
        raise ValidationError("pass either two CgoSolution objects or two VectorField3")
    _same_grid(H1.grid, H2.grid)
    grid = H1.grid
    dmu = m1.mu(grid) - m2.mu(grid)
    s1, s2 = m1.sigma(grid), m2.sigma(grid)
    wsig = (s1 - s2) / (s1 * s2) / (1j * omega)
    c1 = curl_array(H1.components, grid.h)
    c2 = curl_array(H2.components, grid.h)
    mu_t, e1 = _integrate_with_error(dmu * _dotv(H1.components, H2.components), grid)
    sg_t, e2 = _integrate_with_error(wsig * _dotv(c1, c2), grid)
    return IdentityReport(mu_t + sg_t, {"mu": mu_t, "sigma": sg_t}, None, e1 + e2)


def _cgo_pieces(sol: CgoSolution) -> dict:
    """Amplitude, correction and the three parts of the conjugated-frame curl."""
    ans, ph = sol.ansatz, sol.phase
    a, r = ans.a.components, sol.r.components
    da = ans.da
    curl_a = np.stack([da[1][2] - da[2][1], da[2][0] - da[0][2], da[0][1] - da[1][0]])
    z1 = ph.remainder
    sp = TwistedSpectral(sol.r.grid, ph.zeta)
    return {"a": a, "r": r,
            "lead": 1j * ph.tau * cross(ph.rho, a),
            "sub": 1j * cross(z1, a) + curl_a,
            "r_curl": sp.curl_zeta(r)}


def _cgo_identity(m1, m2, S1: CgoSolution, S2: CgoSolution, omega) -> IdentityReport:
    grid = S1.H.grid
    _same_grid(grid, S2.H.grid)
    z = np.asarray(S1.phase.zeta) + np.asarray(S2.phase.zeta)
    phase = np.exp(1j * np.tensordot(z, grid.points(), axes=1))
    dmu = (m1.mu(grid) - m2.mu(grid)) * phase
    s1, s2 = m1.sigma(grid), m2.sigma(grid)
    wsig = (s1 - s2) / (s1 * s2) / (1j * omega) * phase
    p1, p2 = _cgo_pieces(S1), _cgo_pieces(S2)
    terms, err = {}, 0.0
    for i in ("a", "r"):
        for j in ("a", "r"):
            v, e = _integrate_with_error(dmu * _dotv(p1[i], p2[j]), grid)
            terms[f"mu_{i}{j}"] = v
            err += e
    names = {"lead": "lead", "sub": "sub", "r_curl": "r"}
    for i, ni in names.items():
        for j, nj in names.items():
            v, e = _integrate_with_error(wsig * _dotv(p1[i], p2[j]), grid)
            terms[f"sigma_{ni}_{nj}"] = v
            err += e
    terms["b1b2"] = terms["sigma_lead_lead"]
    value = sum(v for k, v in terms.items() if k != "b1b2")
    tau = S1.phase.tau
    return IdentityReport(complex(value), terms, tau, err)


# --- Fourier functionals -----------------------------------------------------------

def quadrature_grid(models, xi_max: float = 0.0, n_min: int = 32) -> Grid3:
    """Periodic cube covering the supports with at least 4 points per shortest wavelength."""
    R = max(m.support_radius for m in models)
    L = 2.5 * max(R, 1e-3)
    n = max(n_min, int(np.ceil(L * xi_max / (2 * np.pi) * 4)))
    n += n % 2
    return periodic_grid(L, n)


def limit_phase(m: MaterialModel, grid: Grid3, rho, m_sigma: MaterialModel | None = None) -> np.ndarray:
    """Psi(x, rho) = -N_rho^{-1}{conj(rho) . grad log(sigma mu)^{1/2}} with exact gradients.

    ``m_sigma`` optionally supplies sigma from another model (mu is taken from ``m``).
    """
    ms = m if m_sigma is None else m_sigma
    g = 0.5 * (ms.grad_log("sigma", grid) + m.grad_log("mu", grid))
    return -cauchy_array(np.sum(np.conj(rho).reshape(3, 1, 1, 1) * g, axis=0), grid, rho)


def _fourier_sum(g: np.ndarray, grid: Grid3, xis: np.ndarray, chunk: int = 256) -> np.ndarray:
    """int e^{i xi.x} g(x) dx for many xi by separable summation."""
    ax = [grid.axis(a) for a in range(3)]
    w = float(np.prod(grid.h))
    out = np.empty(len(xis), dtype=complex)
    for s in range(0, len(xis), chunk):
        X = xis[s:s + chunk]
        E = [np.exp(1j * np.outer(X[:, a], ax[a])) for a in range(3)]
        T = np.tensordot(E[0], g, axes=(1, 0))               # (K, n2, n3)
        T = np.einsum("kj,kjl->kl", E[1], T)
        out[s:s + chunk] = np.einsum("kl,kl->k", E[2], T) * w
    return out


def _sigma_integrand(m1, m2, grid):
    s1, s2 = m1.sigma(grid), m2.sigma(grid)
    return (s1 - s2) / np.sqrt(s1 * s2)


def fourier_functional(m1: MaterialModel, m2: MaterialModel, xi_grid, target: str = "sigma",
                       grid: Grid3 | None = None, phase_weight: bool = False) -> FourierScan:
    """Weighted Fourier transforms of the material differences.

    sigma: int e^{i xi.x} (sigma1 - sigma2)/(sigma1 sigma2)^{1/2} W dx
    mu:    int e^{i xi.x} (mu1 - mu2) W dx
    With ``phase_weight=True`` W is e^{Psi1 + Psi2} (sigma) or e^{Psi} (mu), the
    weights of the amplitude with the Psi phase; rho follows
    orthonormal_frame(xi) and one Cauchy transform is needed per distinct rho.
    With ``phase_weight=False`` W = 1 (sigma) or (sigma1/mu1)^{1/2} (mu): the
    limits produced by the transport-consistent amplitude.
    """
    if target not in ("sigma", "mu", "both"):
        raise ValueError(f"unknown target {target!r}")
    xis = np.atleast_2d(np.asarray(xi_grid, dtype=float))
    if grid is None:
        grid = quadrature_grid((m1, m2), float(np.max(np.abs(xis))) if xis.size else 0.0)
    vs = vm = None
    if target in ("sigma", "both"):
        base = _sigma_integrand(m1, m2, grid)
        if phase_weight:
            vs = _phase_weighted(base, xis, grid,
                                 lambda rho: limit_phase(m1, grid, rho) + limit_phase(m2, grid, rho))
        else:
            vs = _fourier_sum(base, grid, xis)
    if target in ("mu", "both"):
        dmu = m1.mu(grid) - m2.mu(grid)
        if phase_weight:
            vm = _phase_weighted(dmu, xis, grid, lambda rho: limit_phase(m2, grid, rho, m_sigma=m1))
        else:
            vm = _fourier_sum(dmu * np.sqrt(m1.sigma(grid) / m1.mu(grid)), grid, xis)
    return FourierScan(xis, vs, vm, {"phase_weight": phase_weight, "grid_n": list(grid.n),
                                     "grid_extent": list(grid.extent)})


def _phase_weighted(base, xis, grid, psi_of_rho):
    out = np.empty(len(xis), dtype=complex)
    cache = {}
    if not np.any(base):
        return np.zeros(len(xis), dtype=complex)
    for k, xi in enumerate(xis):
        r1, r2 = orthonormal_frame(xi)
        key = tuple(np.round(np.concatenate([r1, r2]), 12))
        if key not in cache:
            cache[key] = np.exp(psi_of_rho(r1 + 1j * r2))
        out[k] = _fourier_sum(base * cache[key], grid, xi[None])[0]
    return out


def fourier_lattice(n: int = 16, period: float = 2.0) -> np.ndarray:
    """Full xi-lattice 2 pi k / period, k in [-n/2, n/2)^3, as an (n^3, 3) array (k1 slowest)."""
    k = np.arange(-n // 2, n - n // 2)
    K = np.stack(np.meshgrid(k, k, k, indexing="ij"), axis=-1).reshape(-1, 3)
    return 2 * np.pi * K / period


def _lattice_shape(xis):
    vals = [np.unique(np.round(xis[:, a], 10)) for a in range(3)]
    n = [len(v) for v in vals]
    if int(np.prod(n)) != len(xis):
        raise ValidationError("xi_grid is not a full regular lattice")
    steps = [np.diff(v) for v in vals]
    for s in steps:
        if len(s) == 0 or not np.allclose(s, s[0]):
            raise ValidationError("xi_grid is not a full regular lattice")
    return vals, [float(s[0]) for s in steps]


def recover_sigma_difference(scan: FourierScan, weight_model: MaterialModel,
                             weight: str = "exact", rho=None) -> ScalarField3:
    """Estimate sigma1 - sigma2 from a full-lattice sigma scan.

    The inverse DFT of the scan gives g = (sigma1 - sigma2) W on the dual
    x-lattice.  With weight="exact" (scan without the Psi phase) W is
    (sigma1 sigma2)^{-1/2} and g is inverted pointwise using sigma1 from
    ``weight_model`` alone.  weight="divide" divides by the weight evaluated
    from ``weight_model`` with sigma2 = sigma1 (and e^{2 Psi1} for phase-
    weighted scans, with the given reference ``rho``).  Samples whose weight
    falls below 1e-8 are set to zero.
    """
    if scan.values_sigma is None:
        raise ValidationError("scan has no sigma values")
    vals, steps = _lattice_shape(scan.xi_grid)
    n = [len(v) for v in vals]
    period = [2 * np.pi / s for s in steps]
    order = np.lexsort((scan.xi_grid[:, 2], scan.xi_grid[:, 1], scan.xi_grid[:, 0]))
    F = scan.values_sigma[order].reshape(n)
    xs = [period[a] * (np.arange(n[a]) - n[a] // 2) / n[a] for a in range(3)]
    E = [np.exp(-1j * np.outer(xs[a], vals[a])) for a in range(3)]
    g = np.einsum("ia,jb,kc,abc->ijk", E[0], E[1], E[2], F) / float(np.prod(period))
    grid = Grid3(tuple(x[0] for x in xs), tuple(x[-1] - x[0] for x in xs), tuple(n))
    s1 = weight_model.sigma(grid)
    if weight == "exact":
        gr = g.real
        est = s1 * (gr * np.sqrt(gr * gr + 4.0) - gr * gr) / 2.0
    elif weight == "divide":
        w = 1.0 / s1
        if scan.meta.get("phase_weight"):
            if rho is None:
                rho = np.array([1.0, 1j, 0.0])
            w = w * np.exp(2 * limit_phase(weight_model, grid, np.asarray(rho)))
        small = np.abs(w) < WEIGHT_FLOOR
        est = np.where(small, 0.0, g / np.where(small, 1.0, w))
    else:
        raise ValueError(f"unknown weight mode {weight!r}")
    return ScalarField3(grid, est)


# --- limits and consistency ------------------------------------------------------------

def identity_limit(m1, m2, xi, omega, s0=0.5, kind="sigma", grid=None, phase_weight=False,
                   s0_second=None) -> complex:
    """Large-tau limit of the scaled identity for a CGO pair.

    kind="sigma": limit of value/tau^2 = 4 s0^2/(i omega) times the sigma functional.
    kind="mu" (sigma1 = sigma2, first CGO with s0 = 0, second with ``s0_second``):
    limit of value = -2 s0_second times the mu functional.
    """
    if kind == "sigma":
        scan = fourier_functional(m1, m2, [xi], "sigma", grid, phase_weight)
        return complex(4 * s0**2 / (1j * omega) * scan.values_sigma[0])
    s2 = s0 if s0_second is None else s0_second
    scan = fourier_functional(m1, m2, [xi], "mu", grid, phase_weight)
    return complex(-2 * s2 * scan.values_mu[0])


def green_pairing(U: VectorField3, V: VectorField3) -> dict:
    """Both sides of int (curl U).V - U.(curl V) = surface int (nu x U).V over the grid box."""
    _same_grid(U.grid, V.grid)
    grid = U.grid
    u, v = U.components, V.components
    vol = complex(integrate(_dotv(curl_array(u, grid.h), v) - _dotv(u, curl_array(v, grid.h)),
                            grid))
    bnd = 0.0 + 0.0j
    for face in ("x-", "x+", "y-", "y+", "z-", "z+"):
        nu = face_normal(face)
        idx = (slice(None),) + face_index(face, grid)
        us, vs = u[idx], v[idx]
        t = np.stack([nu[1] * us[2] - nu[2] * us[1], nu[2] * us[0] - nu[0] * us[2],
                      nu[0] * us[1] - nu[1] * us[0]])
        a, b = face_tangent_axes(face)
        s = _dotv(t, vs)
        bnd += complex(trapezoid(trapezoid(s, dx=grid.h[b], axis=1), dx=grid.h[a], axis=0))
    scale = max(abs(vol), abs(bnd), 1e-300)
    return {"volume": vol, "boundary": bnd, "difference": abs(vol - bnd), "relative": abs(vol - bnd) / scale}


def identity_consistency(m1, m2, omega, grid, data1, data2) -> dict:
    """Volume pairing of the matched-trace construction versus its boundary pairing.

    H1 solves material 1 with tangential data ``data1``; H' solves material 2
    with the same data; (H2, E2) solves material 2 with ``data2``.  The
    volume pairing int curl(H' - H1).E2 - i omega mu2 (H' - H1).H2 equals the
    boundary pairing of t(H' - H1) with E2, which vanishes because the
    traces match; the discrete volume value is therefore O(h^2).
    """
    from .forward import ForwardProblem
    P1 = ForwardProblem(m1, omega, grid, check_conditioning=False)
    P2 = ForwardProblem(m2, omega, grid, check_conditioning=False)
    H1 = P1.solve(boundary=data1).H
    Hp = P2.solve(boundary=data1).H
    s2 = P2.solve(boundary=data2)
    D = Hp.components - H1.components
    mu2 = m2.mu(grid)
    vol = complex(integrate(_dotv(curl_array(D, grid.h), s2.E.components)
                            - 1j * omega * mu2 * _dotv(D, s2.H.components), grid))
    pairing = green_pairing(VectorField3(grid, D), s2.E)
    ref = complex(integrate(_dotv(curl_array(H1.components, grid.h), s2.E.components), grid))
    return {"volume": vol, "boundary": pairing["boundary"], "reference": abs(ref),
            "relative": abs(vol - pairing["boundary"]) / max(abs(ref), 1e-300)}
