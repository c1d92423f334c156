"""Finite-difference time-harmonic Maxwell solver and impedance-map assembly.

The system is  curl E = i w mu H + J_m,  curl H = sigma E + J_e  on a box,
with tangential data nu x H prescribed on the faces.  H is computed from the
elliptic second-order form

    -Lap H - grad(grad(beta).H) - grad(alpha) x curl H - i w sigma mu H
        = sigma (J_m + curl(J_e / sigma)) - grad(g / mu),

(alpha = log sigma, beta = log mu, g = div(mu H) = -div(J_m)/(i w)), which is
sigma times the curl-curl equation plus a grad-div term that vanishes on
solutions.  Its boundary conditions are the tangential data together with
div(mu H) = g, imposed through a ghost node for the normal component.
E is then recovered as (curl H - J_e) / sigma.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import GridSizeError, MaterialError, ResonanceError
from .fields import (FACES, Grid3, TangentialTrace, VectorField3, cross_normal, curl_array,
                     div_array, face_axis_side, face_index, face_normal, face_tangent_axes,
                     grad_array, integrate, l2_norm, tangential_trace)
from .material import MaterialModel

RESONANCE_THRESHOLD = 1e10
DIRECT_LIMIT = 4_000
KRYLOV_RTOL = 1e-10


# --- sparse stencils ---------------------------------------------------------

def first_derivative_1d(n: int, h: float) -> sp.csr_matrix:
    """Sparse twin of numpy.gradient(edge_order=2)."""
    D = sp.lil_matrix((n, n))
    for i in range(1, n - 1):
        D[i, i - 1], D[i, i + 1] = -0.5 / h, 0.5 / h
    D[0, 0:3] = np.array([-1.5, 2.0, -0.5]) / h
    D[n - 1, n - 3:n] = np.array([0.5, -2.0, 1.5]) / h
    return D.tocsr()


def second_difference_1d(n: int, h: float, neumann: bool) -> sp.csr_matrix:
    """Three-point second difference; end rows use the ghost-node form if ``neumann``."""
    main = np.full(n, -2.0)
    lower = np.ones(n - 1)
    upper = np.ones(n - 1)
    if neumann:
        upper[0] = 2.0
        lower[-1] = 2.0
    else:
        main[0] = main[-1] = 0.0
        upper[0] = lower[-1] = 0.0
    return (sp.diags([lower, main, upper], [-1, 0, 1]) / h**2).tocsr()


def along(op: sp.spmatrix, axis: int, n) -> sp.csr_matrix:
    eyes = [sp.identity(k, format="csr") for k in n]
    eyes[axis] = op
    return sp.kron(eyes[0], sp.kron(eyes[1], eyes[2])).tocsr()


def _diag(v) -> sp.dia_matrix:
    return sp.diags(np.asarray(v).ravel())


class Stencils:
    """Sparse derivative matrices acting on C-ordered flattened grid arrays."""

    def __init__(self, grid: Grid3):
        self.grid = grid
        n, h = grid.n, grid.h
        self.D = [along(first_derivative_1d(n[a], h[a]), a, n) for a in range(3)]

    def curl(self) -> sp.csr_matrix:
        Dx, Dy, Dz = self.D
        return sp.bmat([[None, -Dz, Dy], [Dz, None, -Dx], [-Dy, Dx, None]]).tocsr()

    def cross(self, a: np.ndarray) -> sp.csr_matrix:
        """Matrix of v -> a x v for a sampled vector field ``a``."""
        a1, a2, a3 = (_diag(c) for c in a)
        return sp.bmat([[None, -a3, a2], [a3, None, -a1], [-a2, a1, None]]).tocsr()


def dirichlet_mask(grid: Grid3, c: int) -> np.ndarray:
    """Nodes where component ``c`` is tangential to some face (data prescribed)."""
    mask = np.zeros(grid.n, dtype=bool)
    for d in range(3):
        if d == c:
            continue
        idx = [slice(None)] * 3
        idx[d] = 0
        mask[tuple(idx)] = True
        idx[d] = grid.n[d] - 1
        mask[tuple(idx)] = True
    return mask


def ghost_sign(grid: Grid3, c: int) -> np.ndarray:
    """+1 on the lower c-face, -1 on the upper c-face, 0 elsewhere."""
    s = np.zeros(grid.n)
    idx = [slice(None)] * 3
    idx[c] = 0
    s[tuple(idx)] = 1.0
    idx[c] = grid.n[c] - 1
    s[tuple(idx)] = -1.0
    return s


# --- operator assembly ------------------------------------------------------

def _coefficients(m: MaterialModel, grid: Grid3):
    m.check_on(grid)
    sigma, mu = m.sigma(grid), m.mu(grid)
    return sigma, mu, m.grad_log("sigma", grid), m.grad_log("mu", grid)


def assemble_curlcurl(m: MaterialModel, omega: float, grid: Grid3, gauge: str = "augmented",
                      boundary_rows: bool = True) -> sp.csr_matrix:
    """Sparse operator on stacked (Hx, Hy, Hz).

    ``gauge="none"`` gives the plain discretization of curl(sigma^-1 curl H) - i w mu H
    (composition of the sparse curl stencils).  ``gauge="augmented"`` gives the
    elliptic form used by the solver (see module docstring); with
    ``boundary_rows`` its face rows carry the boundary conditions.
    """
    if omega <= 0:
        raise ValueError("omega must be positive")
    try:
        sigma, mu, ga, gb = _coefficients(m, grid)
    except MaterialError:
        raise
    st = Stencils(grid)
    N = grid.size
    if gauge == "none":
        C = st.curl()
        inv_s = sp.block_diag([_diag(1.0 / sigma)] * 3)
        A = C @ inv_s @ C - 1j * omega * sp.block_diag([_diag(mu)] * 3)
    elif gauge == "augmented":
        A = _augmented(st, sigma, mu, ga, gb, omega, boundary_rows)
    else:
        raise ValueError(f"unknown gauge {gauge!r}")
    A = A.tocsr()
    if boundary_rows:
        rows = np.concatenate([c * N + np.flatnonzero(dirichlet_mask(grid, c).ravel())
                               for c in range(3)])
        keep = np.ones(3 * N)
        keep[rows] = 0.0
        ident = np.zeros(3 * N)
        ident[rows] = 1.0
        A = (_diag(keep) @ A + _diag(ident)).tocsr()
    A.eliminate_zeros()
    return A


def _augmented(st: Stencils, sigma, mu, ga, gb, omega, boundary_rows):
    grid = st.grid
    n, h = grid.n, grid.h
    N = grid.size
    D = st.D
    blocks = [[None] * 3 for _ in range(3)]
    shift = _diag(1j * omega * sigma * mu)
    beta_rows = [_diag(gb[d]) for d in range(3)]
    cross_curl = st.cross(ga) @ st.curl()
    for c in range(3):
        lap = sum(along(second_difference_1d(n[a], h[a], neumann=(a == c and boundary_rows)), a, n)
                  for a in range(3))
        for d in range(3):
            blk = -D[c] @ beta_rows[d] - cross_curl[c * N:(c + 1) * N, d * N:(d + 1) * N]
            if d == c:
                blk = blk - lap - shift
            if boundary_rows:
                # ghost-node elimination of d_c H_c from div(mu H) = g
                gs = _diag(ghost_sign(grid, c) * 2.0 / h[c])
                g_term = -beta_rows[d] if d == c else -(beta_rows[d] + D[d])
                blk = blk + gs @ g_term
            blocks[c][d] = blk
    return sp.bmat(blocks)


# --- preconditioner ---------------------------------------------------------

def _axis_symbol(n: int, h: float, neumann: bool) -> np.ndarray:
    if neumann:
        k = np.arange(n)
        return (2.0 - 2.0 * np.cos(np.pi * k / (n - 1))) / h**2
    m = n - 2
    k = np.arange(1, m + 1)
    return (2.0 - 2.0 * np.cos(np.pi * k / (m + 1))) / h**2


class FastShiftedLaplace:
    """Exact inverse of the boundary-adapted shifted Laplacian, via DCT-I / DST-I.

    Component c is Neumann (ghost-node) along axis c and Dirichlet along the
    other two axes; the interior solve is separable and diagonalized by
    type-I trigonometric transforms.
    """

    def __init__(self, A: sp.csr_matrix, grid: Grid3, shift: complex):
        self.A, self.grid, self.shift = A, grid, shift
        N = grid.size
        self.dir_idx = np.concatenate(
            [c * N + np.flatnonzero(dirichlet_mask(grid, c).ravel()) for c in range(3)])
        self.A_sub = A[:, self.dir_idx]
        self.symbols = []
        for c in range(3):
            lam = [_axis_symbol(grid.n[a], grid.h[a], a == c) for a in range(3)]
            self.symbols.append(lam[0][:, None, None] + lam[1][None, :, None]
                                + lam[2][None, None, :] - shift)

    def _interior(self, c):
        return tuple(slice(None) if a == c else slice(1, -1) for a in range(3))

    def apply(self, r: np.ndarray) -> np.ndarray:
        grid = self.grid
        N = grid.size
        x = np.zeros_like(r, dtype=complex)
        x[self.dir_idx] = r[self.dir_idx]
        res = r - self.A_sub @ r[self.dir_idx]
        for c in range(3):
            rc = res[c * N:(c + 1) * N].reshape(grid.n)
            sl = self._interior(c)
            y = rc[sl]
            for a in range(3):
                y = sfft.dct(y, type=1, axis=a) if a == c else sfft.dst(y, type=1, axis=a)
            y = y / self.symbols[c]
            for a in range(3):
                y = sfft.idct(y, type=1, axis=a) if a == c else sfft.idst(y, type=1, axis=a)
            xc = x[c * N:(c + 1) * N].reshape(grid.n)
            xc[sl] = y
        return x

    def operator(self) -> spla.LinearOperator:
        n = self.A.shape[0]
        return spla.LinearOperator((n, n), matvec=self.apply, dtype=complex)


# --- solutions ----------------------------------------------------------------

@dataclass
class MaxwellSolution:
    E: VectorField3
    H: VectorField3
    omega: float
    residual_report: dict = field(default_factory=dict)


def condition_estimate(A: sp.spmatrix, lu=None) -> float:
    """1-norm condition estimate: exact ||A||_1 times Hager's estimate of ||A^-1||_1."""
    A = sp.csc_matrix(A)
    if lu is None:
        lu = spla.splu(A)
    n = A.shape[0]
    inv = spla.LinearOperator((n, n), matvec=lu.solve, rmatvec=lambda v: lu.solve(v, trans="H"),
                              dtype=complex)
    return float(spla.norm(A, 1) * spla.onenormest(inv, t=1))


def traces_of(H: VectorField3, faces=FACES) -> dict:
    """Tangential traces of ``H`` on the requested faces."""
    return {f: tangential_trace(H, f) for f in faces}


class ForwardProblem:
    """Assembled operator for one (material, omega, grid); solves many data sets.

    Small systems are factorized once with SuperLU; larger ones use GMRES
    preconditioned by :class:`FastShiftedLaplace`.
    """

    def __init__(self, m: MaterialModel, omega: float, grid: Grid3,
                 direct_limit: int = DIRECT_LIMIT, check_conditioning: bool = True):
        if min(grid.n) < 4:
            raise GridSizeError("forward solves need n >= 4 per axis")
        self.m, self.omega, self.grid = m, float(omega), grid
        self.sigma, self.mu, self.grad_alpha, self.grad_beta = _coefficients(m, grid)
        self.A = assemble_curlcurl(m, omega, grid)
        self.direct = self.A.shape[0] <= direct_limit
        self.condition = None
        if self.direct:
            self._lu = spla.splu(self.A.tocsc())
            if check_conditioning:
                self.condition = condition_estimate(self.A, self._lu)
                if not np.isfinite(self.condition) or self.condition > RESONANCE_THRESHOLD:
                    raise ResonanceError(
                        f"operator condition estimate {self.condition:.3e} exceeds "
                        f"{RESONANCE_THRESHOLD:.0e} at omega={omega}", self.condition)
        else:
            shift = 1j * self.omega * m.sigma0 * m.mu0
            self._pre = FastShiftedLaplace(self.A, grid, shift).operator()

    def _linear_solve(self, b: np.ndarray) -> np.ndarray:
        if self.direct:
            x = self._lu.solve(b)
            if not np.all(np.isfinite(x)):
                raise ResonanceError("direct solve produced non-finite values", self.condition)
            return x
        x, info = spla.gmres(self.A, b, rtol=KRYLOV_RTOL, atol=0.0, restart=60, maxiter=20,
                             M=self._pre)
        if info != 0:
            rel = np.linalg.norm(self.A @ x - b) / max(np.linalg.norm(b), 1e-300)
            raise ResonanceError(
                f"GMRES did not converge (info={info}, relative residual {rel:.2e}) "
                f"at omega={self.omega}", None)
        return x

    def rhs(self, boundary=None, J_e=None, J_m=None) -> np.ndarray:
        grid, N = self.grid, self.grid.size
        w, sigma, mu = self.omega, self.sigma, self.mu
        b = np.zeros((3,) + grid.n, dtype=complex)
        g = np.zeros(grid.n, dtype=complex)
        if J_m is not None or J_e is not None:
            Jm = np.zeros_like(b) if J_m is None else _arr(J_m)
            Je = np.zeros_like(b) if J_e is None else _arr(J_e)
            src = Jm + curl_array(Je / sigma, grid.h)
            g = -div_array(Jm, grid.h) / (1j * w)
            b = sigma * src - grad_array(g / mu, grid.h)
        for c in range(3):
            b[c] = b[c] - ghost_sign(grid, c) * 2.0 / grid.h[c] * g / mu
        b = b.reshape(3, N)
        dvals = self.dirichlet_values(boundary)
        for c in range(3):
            mask = dirichlet_mask(grid, c).ravel()
            b[c, mask] = dvals[c].ravel()[mask]
        return b.ravel()

    def dirichlet_values(self, boundary) -> np.ndarray:
        """Tangential H on the faces from traces nu x H (H_tan = -nu x t)."""
        grid = self.grid
        out = np.zeros((3,) + grid.n, dtype=complex)
        if boundary is None:
            return out
        if isinstance(boundary, VectorField3):
            boundary = traces_of(boundary)
        if isinstance(boundary, TangentialTrace):
            boundary = {boundary.face: boundary}
        items = boundary.values() if isinstance(boundary, dict) else boundary
        for t in items:
            nu = face_normal(t.face)
            htan = -cross_normal(nu, t.as_vector())
            idx = face_index(t.face, grid)
            for a in face_tangent_axes(t.face):
                out[(a,) + idx] = htan[a]
        return out

    def solve(self, boundary=None, J_e=None, J_m=None) -> MaxwellSolution:
        grid = self.grid
        b = self.rhs(boundary, J_e, J_m)
        if not np.any(b):
            x = np.zeros_like(b)
        else:
            x = self._linear_solve(b)
        H = x.reshape((3,) + grid.n)
        Je = 0.0 if J_e is None else _arr(J_e)
        Jm = 0.0 if J_m is None else _arr(J_m)
        E = (curl_array(H, grid.h) - Je) / self.sigma
        res_m = curl_array(E, grid.h) - 1j * self.omega * self.mu * H - Jm
        res_e = curl_array(H, grid.h) - self.sigma * E - Je
        bn = float(np.linalg.norm(b))
        report = {
            "linear": float(np.linalg.norm(self.A @ x - b)) / bn if bn > 0 else 0.0,
            "faraday": l2_norm(res_m, grid),
            "ampere": l2_norm(res_e, grid),
            "faraday_interior": (l2_norm(_interior(res_m, 2), _interior_grid(grid, 2))
                                 if min(grid.n) >= 8 else None),
            "div_muH": l2_norm(div_array(self.mu * H, grid.h)
                               + (0.0 if J_m is None else div_array(_arr(J_m), grid.h)
                                  / (1j * self.omega)), grid),
            "condition_estimate": self.condition,
            "solver": "splu" if self.direct else "gmres",
        }
        return MaxwellSolution(VectorField3(grid, E), VectorField3(grid, H), self.omega, report)


def _arr(f):
    return f.components if isinstance(f, VectorField3) else np.asarray(f, dtype=complex)


def _interior(arr, k):
    return arr[(Ellipsis,) + (slice(k, -k),) * 3]


def _interior_grid(grid: Grid3, k):
    h = grid.h
    return Grid3(tuple(o + k * hh for o, hh in zip(grid.origin, h)),
                 tuple(e - 2 * k * hh for e, hh in zip(grid.extent, h)),
                 tuple(n - 2 * k for n in grid.n))


def solve_forward(m: MaterialModel, omega: float, f, grid: Grid3 | None = None,
                  **kw) -> MaxwellSolution:
    """Solve the homogeneous system with tangential data ``f`` (dict face -> trace).

    ``f`` may also be a VectorField3, whose traces on all faces are used.
    """
    if grid is None:
        if isinstance(f, VectorField3):
            grid = f.grid
        else:
            grid = next(iter(f.values())).grid
    return ForwardProblem(m, omega, grid, **kw).solve(boundary=f)


def solve_forward_sources(m: MaterialModel, omega: float, J_e, J_m, grid: Grid3 | None = None,
                          **kw) -> MaxwellSolution:
    """Solve the inhomogeneous system with zero tangential data."""
    if grid is None:
        grid = (J_e if isinstance(J_e, VectorField3) else J_m).grid
    return ForwardProblem(m, omega, grid, **kw).solve(J_e=J_e, J_m=J_m)


# --- impedance map ------------------------------------------------------------

@dataclass
class ImpedanceMatrix:
    basis: list
    entries: np.ndarray
    omega: float


def face_unit_coords(face: str, grid: Grid3) -> tuple:
    a, b = face_tangent_axes(face)
    s = np.linspace(0.0, 1.0, grid.n[a])
    t = np.linspace(0.0, 1.0, grid.n[b])
    return np.meshgrid(s, t, indexing="ij")


def basis_trace(entry: dict, grid: Grid3) -> TangentialTrace:
    """Tensor sine mode sin(k pi s) sin(l pi t) in one tangential trace component."""
    S, T = face_unit_coords(entry["face"], grid)
    vals = np.zeros((2,) + S.shape, dtype=complex)
    vals[entry["component"]] = np.sin(entry["k"] * np.pi * S) * np.sin(entry["l"] * np.pi * T)
    return TangentialTrace(entry["face"], vals, grid)


def trace_basis(basis_size: int, faces=FACES) -> list:
    """Ordered basis: faces, then mode pairs (k, l) in 1..basis_size, then component."""
    out = []
    for f in faces:
        for k in range(1, basis_size + 1):
            for l in range(1, basis_size + 1):
                for comp in (0, 1):
                    out.append({"face": f, "k": k, "l": l, "component": comp})
    return out


def face_inner(u: np.ndarray, v: np.ndarray, face: str, grid: Grid3) -> complex:
    a, b = face_tangent_axes(face)
    from scipy.integrate import trapezoid
    return trapezoid(trapezoid(u * np.conj(v), dx=grid.h[b], axis=1), dx=grid.h[a], axis=0)


def project_traces(traces: dict, basis: list, grid: Grid3) -> np.ndarray:
    out = np.zeros(len(basis), dtype=complex)
    for i, e in enumerate(basis):
        phi = basis_trace(e, grid).values[e["component"]]
        t = traces[e["face"]].values[e["component"]]
        out[i] = face_inner(t, phi, e["face"], grid) / face_inner(phi, phi, e["face"], grid)
    return out


def impedance_map(m: MaterialModel, omega: float, basis_size: int, grid: Grid3,
                  faces=FACES, problem: ForwardProblem | None = None) -> ImpedanceMatrix:
    """Galerkin matrix of t(H) -> t(E) over the per-face sine basis, column by column."""
    basis = trace_basis(basis_size, faces)
    prob = problem or ForwardProblem(m, omega, grid)
    Z = np.zeros((len(basis), len(basis)), dtype=complex)
    for j, e in enumerate(basis):
        try:
            sol = prob.solve(boundary={e["face"]: basis_trace(e, grid)})
        except ResonanceError as err:
            raise ResonanceError(f"column {j}: {err}", err.condition_estimate, column=j) from err
        Z[:, j] = project_traces(traces_of(sol.E, faces), basis, grid)
    return ImpedanceMatrix(basis, Z, float(omega))


def resonance_probe(m: MaterialModel, omega_list, grid: Grid3,
                    threshold: float = RESONANCE_THRESHOLD) -> list:
    """Per-omega condition estimates of the assembled operator, flagged above ``threshold``."""
    report = []
    for w in omega_list:
        A = assemble_curlcurl(m, w, grid)
        try:
            cond = condition_estimate(A)
        except RuntimeError:
            cond = np.inf
        report.append({"omega": float(w), "condition": cond,
                       "flagged": bool(not np.isfinite(cond) or cond > threshold)})
    return report


# --- one-dimensional references ------------------------------------------------

def plane_wave_H(grid: Grid3, omega: float, sigma0: float, mu0: float, depth_axis: int = 2,
                 polarization: int = 1) -> VectorField3:
    """Downward-decaying plane wave H = e_p exp(i k x_d), k = sqrt(i w mu sigma)."""
    k = np.sqrt(1j * omega * mu0 * sigma0)
    X = grid.mesh()
    depth = X[depth_axis] - grid.origin[depth_axis]
    H = np.zeros((3,) + grid.n, dtype=complex)
    H[polarization] = np.exp(1j * k * depth)
    return VectorField3(grid, H)


def scalar_impedance(sol: MaxwellSolution, face: str = "z-", convention: str = "geophysics"):
    """Surface ratio Z = E_1 / H_2 averaged over the central face samples.

    With the curl E = i w mu H sign convention this is sqrt(-i w mu / sigma) for
    a uniform half-space.  ``convention="geophysics"`` returns the complex
    conjugate, matching the exp(+i w t) convention where Z = sqrt(i w mu / sigma).
    """
    grid = sol.H.grid
    axis, _ = face_axis_side(face)
    a, b = face_tangent_axes(face)
    idx = face_index(face, grid)
    E = sol.E.components[(slice(None),) + idx]
    H = sol.H.components[(slice(None),) + idx]
    ca, cb = E.shape[1] // 2, E.shape[2] // 2
    win = (slice(max(ca - 1, 0), ca + 2), slice(max(cb - 1, 0), cb + 2))
    z = np.mean(E[a][win] / H[b][win])
    if convention == "geophysics":
        z = np.conj(z)
    elif convention != "native":
        raise ValueError(f"unknown convention {convention!r}")
    return complex(z)
