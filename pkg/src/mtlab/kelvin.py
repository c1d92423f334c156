"""Kelvin inversion, the ball-to-half-space map and pullbacks of vector fields.

Points are arrays of shape (3, ...) and Jacobians (3, 3, ...).  The inversion
maps have the form F(y) = c_x + s K(y - c_y) with K(z) = z/|z|^2 and s = +-1,
so that DF = s DK(y - c_y) = s(|z|^-2 I - 2|z|^-4 z z^T), z = y - c_y.  For
s = -1 this is the Jacobian -|z|^-2 I + 2|z|^-4 z z^T with

    det DF = |z|^-6,   DF DF^T = |z|^-4 I,   DF = DF^T,   (D F^-1)(F(y)) = |z|^4 DF.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.ndimage import map_coordinates

from .errors import DomainError, PreconditionError, SingularityError
from .fields import Grid3, VectorField3, curl_array
from .material import MaterialModel

SINGULAR_TOL = 1e-12
DEFAULT_X0 = (0.0, 0.0, 0.5)


def _col(v, ndim):
    return np.asarray(v, dtype=float).reshape((3,) + (1,) * ndim)


def _eye(ndim):
    return np.eye(3).reshape((3, 3) + (1,) * ndim)


def matvec(M, v):
    return np.einsum("ij...,j...->i...", M, v)


def matmul(A, B):
    return np.einsum("ij...,jk...->ik...", A, B)


def transpose(M):
    return np.swapaxes(M, 0, 1)


def _norm2(z):
    return np.sum(np.abs(z) ** 2, axis=0)


def kelvin_point(x) -> np.ndarray:
    """K(x) = x/|x|^2; K is its own inverse."""
    x = np.asarray(x, dtype=float)
    r2 = _norm2(x)
    if np.any(r2 < SINGULAR_TOL**2):
        raise SingularityError("Kelvin transform evaluated at |x| < 1e-12")
    return x / r2


kelvin_inverse = kelvin_point


def kelvin_jacobian(z) -> np.ndarray:
    """DK(z) = |z|^-2 I - 2 |z|^-4 z z^T."""
    z = np.asarray(z, dtype=float)
    r2 = _norm2(z)
    if np.any(r2 < SINGULAR_TOL**2):
        raise SingularityError("Kelvin Jacobian evaluated at |z| < 1e-12")
    return _eye(z.ndim - 1) / r2 - 2 * z[:, None] * z[None, :] / r2**2


@dataclass(frozen=True)
class ConformalMap:
    """A map F: Omega~ -> Omega with its inverse and Jacobian.

    ``kind`` is one of kelvin, sphere_to_halfspace, centre_inversion,
    reflection_composite, rigid or composite.  Inversion maps carry the pole
    c_y (where F is singular); ``pole_distance`` is |y - c_y|.
    """

    kind: str
    x0: tuple = DEFAULT_X0
    F: Callable = field(repr=False, compare=False, default=None)
    Finv: Callable = field(repr=False, compare=False, default=None)
    DF: Callable = field(repr=False, compare=False, default=None)
    DFinv: Callable = field(repr=False, compare=False, default=None)
    pole: tuple | None = None

    # -- constructors --------------------------------------------------------------
    @classmethod
    def inversion(cls, kind, sign, cx, cy, x0=DEFAULT_X0) -> "ConformalMap":
        cx, cy = np.asarray(cx, float), np.asarray(cy, float)

        def F(y):
            y = np.asarray(y, float)
            return _col(cx, y.ndim - 1) + sign * kelvin_point(y - _col(cy, y.ndim - 1))

        def Finv(x):
            x = np.asarray(x, float)
            return _col(cy, x.ndim - 1) + sign * kelvin_point(x - _col(cx, x.ndim - 1))

        def DF(y):
            y = np.asarray(y, float)
            return sign * kelvin_jacobian(y - _col(cy, y.ndim - 1))

        def DFinv(x):
            x = np.asarray(x, float)
            return sign * kelvin_jacobian(x - _col(cx, x.ndim - 1))

        return cls(kind, tuple(float(v) for v in x0), F, Finv, DF, DFinv, tuple(cy.tolist()))

    @classmethod
    def kelvin(cls) -> "ConformalMap":
        return cls.inversion("kelvin", 1.0, (0, 0, 0), (0, 0, 0), (0, 0, 0))

    @classmethod
    def sphere_to_halfspace(cls, x0=DEFAULT_X0) -> "ConformalMap":
        """F(y) = K(2 x0 - y) for the ball B0 = B(x0, |x0|), whose boundary passes through 0.

        F^-1(x) = 2 x0 - K(x) sends B0 into {y3 < 0} and its boundary sphere
        (minus the origin) into the plane {y3 = 0} when x0 = (0, 0, r).
        """
        x0 = np.asarray(x0, float)
        return cls.inversion("sphere_to_halfspace", -1.0, (0, 0, 0), 2 * x0, x0)

    @classmethod
    def centre_inversion(cls, x0=DEFAULT_X0) -> "ConformalMap":
        """F(y) = x0 - K(y), inversion about the ball centre (pole at y = 0)."""
        return cls.inversion("centre_inversion", -1.0, x0, (0, 0, 0), x0)

    @classmethod
    def rigid(cls, A, b=(0.0, 0.0, 0.0)) -> "ConformalMap":
        """F(y) = A y + b for a similarity matrix A."""
        A = np.asarray(A, float)
        b = np.asarray(b, float)
        Ai = np.linalg.inv(A)

        def F(y):
            y = np.asarray(y, float)
            return matvec(A.reshape((3, 3) + (1,) * (y.ndim - 1)), y) + _col(b, y.ndim - 1)

        def Finv(x):
            x = np.asarray(x, float)
            return matvec(Ai.reshape((3, 3) + (1,) * (x.ndim - 1)), x - _col(b, x.ndim - 1))

        def DF(y):
            y = np.asarray(y, float)
            return np.broadcast_to(A.reshape((3, 3) + (1,) * (y.ndim - 1)), (3, 3) + y.shape[1:])

        def DFinv(x):
            x = np.asarray(x, float)
            return np.broadcast_to(Ai.reshape((3, 3) + (1,) * (x.ndim - 1)), (3, 3) + x.shape[1:])

        return cls("rigid", DEFAULT_X0, F, Finv, DF, DFinv, None)

    @classmethod
    def reflection(cls) -> "ConformalMap":
        """R(y) = (y1, y2, -y3)."""
        return cls.rigid(np.diag([1.0, 1.0, -1.0]))

    @classmethod
    def similarity(cls, center, radius, x0=DEFAULT_X0) -> "ConformalMap":
        """Scaling plus translation taking B(x0, |x0|) onto B(center, radius)."""
        s = radius / float(np.linalg.norm(x0))
        c, x0 = np.asarray(center, float), np.asarray(x0, float)
        return cls.rigid(s * np.eye(3), c - s * x0)

    def compose(self, inner: "ConformalMap", kind="composite") -> "ConformalMap":
        """self o inner: y -> self.F(inner.F(y))."""
        outer = self
        return ConformalMap(
            kind, self.x0,
            lambda y: outer.F(inner.F(y)),
            lambda x: inner.Finv(outer.Finv(x)),
            lambda y: matmul(outer.DF(inner.F(y)), inner.DF(y)),
            lambda x: matmul(inner.DFinv(outer.Finv(x)), outer.DFinv(x)),
            None)

    @classmethod
    def reflection_composite(cls, x0=DEFAULT_X0) -> "ConformalMap":
        """Reflection across the sphere bounding B0: F o R o F^-1 with F = sphere_to_halfspace."""
        F = cls.sphere_to_halfspace(x0)
        R = cls.reflection()
        Finv = ConformalMap("inverse", F.x0, F.Finv, F.F, F.DFinv, F.DF, None)
        return F.compose(R.compose(Finv), kind="reflection_composite")

    # -- derived quantities --------------------------------------------------------------
    def pole_distance(self, y) -> np.ndarray:
        if self.pole is None:
            raise PreconditionError(f"{self.kind} map has no pole")
        y = np.asarray(y, float)
        return np.sqrt(_norm2(y - _col(self.pole, y.ndim - 1)))

    def det(self, y) -> np.ndarray:
        J = self.DF(y)
        return np.linalg.det(np.moveaxis(J, (0, 1), (-2, -1)))

    def scale(self, y) -> np.ndarray:
        """Conformal factor lambda with DF^T DF = lambda^2 I (lambda = |det DF|^(1/3))."""
        return np.abs(self.det(y)) ** (1.0 / 3.0)

    def material_factor(self, y) -> np.ndarray:
        """det(DF)/lambda^2: the factor multiplying sigma o F and mu o F after pullback."""
        return self.det(y) / self.scale(y) ** 2

    def check_regular(self, y) -> None:
        if self.pole is not None and np.any(self.pole_distance(y) < SINGULAR_TOL):
            raise SingularityError(f"{self.kind} map is singular at a requested point")


def jacobian(cmap: ConformalMap, y) -> np.ndarray:
    cmap.check_regular(y)
    return cmap.DF(y)


def jacobian_identities(cmap: ConformalMap, y) -> dict:
    """Largest relative defects of det DF = |z|^-6, DF DF^T = |z|^-4 I, DF = DF^T and
    (D F^-1)(F(y)) = |z|^4 DF, z = y - pole."""
    y = np.asarray(y, float)
    cmap.check_regular(y)
    nd = y.ndim - 1
    r = cmap.pole_distance(y)
    J = cmap.DF(y)
    JJ = matmul(J, transpose(J))
    Jinv = cmap.DFinv(cmap.F(y))
    scale = r ** -2
    return {
        "det": float(np.max(np.abs(cmap.det(y) * r**6 - 1.0))),
        "orthogonality": float(np.max(np.abs(JJ * r**4 - _eye(nd)))),
        "symmetry": float(np.max(np.abs(J - transpose(J)) / scale)),
        "inverse": float(np.max(np.abs(Jinv - r**4 * J) / r**2)),
    }


def fd_jacobian(cmap: ConformalMap, y, h: float = 1e-5) -> np.ndarray:
    """Central-difference Jacobian of F at the points y."""
    y = np.asarray(y, float)
    cols = []
    for j in range(3):
        e = np.zeros_like(y)
        e[j] = h
        cols.append((cmap.F(y + e) - cmap.F(y - e)) / (2 * h))
    return np.stack(cols, axis=1)


# --- pullbacks ---------------------------------------------------------------------

def sample_field(u: VectorField3, x: np.ndarray) -> np.ndarray:
    """Trilinear interpolation of a sampled field at physical points x (3, ...)."""
    g = u.grid
    idx = np.stack([(x[a] - g.origin[a]) / g.h[a] for a in range(3)])
    tol = 1e-9
    for a in range(3):
        if np.any(idx[a] < -tol) or np.any(idx[a] > g.n[a] - 1 + tol):
            raise DomainError("mapped points fall outside the source grid")
    idx = np.clip(idx, 0, np.array(g.n).reshape((3,) + (1,) * (x.ndim - 1)) - 1)
    flat = idx.reshape(3, -1)
    out = np.empty((3, flat.shape[1]), dtype=complex)
    for c in range(3):
        re = map_coordinates(u.components[c].real, flat, order=1)
        im = map_coordinates(u.components[c].imag, flat, order=1)
        out[c] = re + 1j * im
    return out.reshape((3,) + x.shape[1:])


def _values_at(u, x):
    if isinstance(u, VectorField3):
        return sample_field(u, x)
    return np.asarray(u(x), dtype=complex)


def pullback_values(cmap: ConformalMap, u, y) -> np.ndarray:
    """(F*u)(y) = DF(y)^T u(F(y)); ``u`` is a VectorField3 or a callable of points."""
    y = np.asarray(y, float)
    cmap.check_regular(y)
    return matvec(transpose(cmap.DF(y)), _values_at(u, cmap.F(y)))


def pullback_vector(cmap: ConformalMap, u, target: Grid3) -> VectorField3:
    return VectorField3(target, pullback_values(cmap, u, target.points()))


def pointwise_curl(u: Callable, x: np.ndarray, h: float) -> np.ndarray:
    """Central-difference curl of a callable field at the points x."""
    x = np.asarray(x, float)

    def d(c, j):
        e = np.zeros_like(x)
        e[j] = h
        return (u(x + e)[c] - u(x - e)[c]) / (2 * h)

    return np.stack([d(2, 1) - d(1, 2), d(0, 2) - d(2, 0), d(1, 0) - d(0, 1)])


def curl_transformation(cmap: ConformalMap, u, target: Grid3, curl_u: Callable | None = None,
                        h_src: float | None = None) -> dict:
    """Both sides of curl~(F*u) = (det DF (DF)^-1 curl u) o F on the target grid.

    The left side is a difference curl of the sampled pullback; the right side
    uses ``curl_u`` if given, else a central-difference curl of ``u``.
    """
    y = target.points()
    lhs = curl_array(pullback_values(cmap, u, y), target.h)
    x = cmap.F(y)
    if curl_u is None:
        if isinstance(u, VectorField3):
            cu = sample_field(VectorField3(u.grid, curl_array(u.components, u.grid.h)), x)
        else:
            cu = pointwise_curl(u, x, h_src or float(min(target.h)))
    else:
        cu = np.asarray(curl_u(x), dtype=complex)
    Jinv = cmap.DFinv(x)
    rhs = cmap.det(y) * matvec(Jinv, cu)
    return _compare(lhs, rhs)


def _compare(lhs, rhs, interior=1):
    sl = (slice(None),) + (slice(interior, -interior),) * (lhs.ndim - 1) if interior else ...
    d = np.abs(lhs - rhs)[sl]
    top = float(np.max(np.abs(rhs[sl])))
    return {"lhs": lhs, "rhs": rhs, "max_error": float(np.max(d)),
            "relative": float(np.max(d)) / top if top > 0 else float(np.max(d))}


def cross_product_lemma(cmap: ConformalMap, u: Callable, v: Callable, y) -> float:
    """Max relative defect of F*u x F*v = det(DF) ((DF)^-1 (u x v)) o F at points y."""
    y = np.asarray(y, float)
    pu, pv = pullback_values(cmap, u, y), pullback_values(cmap, v, y)
    x = cmap.F(y)
    uv = np.cross(u(x), v(x), axis=0)
    rhs = cmap.det(y) * matvec(cmap.DFinv(x), uv)
    lhs = np.cross(pu, pv, axis=0)
    return float(np.max(np.abs(lhs - rhs)) / max(np.max(np.abs(rhs)), 1e-300))


# --- material and residual transformation ------------------------------------------------

@dataclass(frozen=True)
class PulledBackMaterial:
    """(c sigma o F, c mu o F) with c = det(DF)/lambda^2 (= |y - pole|^-2 for F)."""

    base: MaterialModel
    cmap: ConformalMap

    def _pts(self, where):
        return where.points() if isinstance(where, Grid3) else np.asarray(where, float)

    def factor(self, where) -> np.ndarray:
        y = self._pts(where)
        self.cmap.check_regular(y)
        return self.cmap.material_factor(y)

    def sigma(self, where) -> np.ndarray:
        y = self._pts(where)
        return self.factor(y) * self.base.sigma(self.cmap.F(y))

    def mu(self, where) -> np.ndarray:
        y = self._pts(where)
        return self.factor(y) * self.base.mu(self.cmap.F(y))


def transform_material(m: MaterialModel, cmap: ConformalMap) -> PulledBackMaterial:
    if cmap.kind not in ("sphere_to_halfspace", "centre_inversion", "kelvin", "rigid"):
        raise PreconditionError(f"material transformation is not set up for {cmap.kind} maps")
    return PulledBackMaterial(m, cmap)


def residual_law(cmap: ConformalMap, m: MaterialModel, E: Callable, H: Callable, omega: float,
                 target: Grid3, law: str = "faraday") -> dict:
    """Both sides of Res~ = c DF (Res o F) for arbitrary smooth fields E, H.

    faraday: Res = curl E - i omega mu H; ampere: Res = curl H - sigma E.  The
    left side is computed on the target grid from the sampled pullbacks and
    the transformed material, the right side from a central-difference curl
    at the mapped points.
    """
    if law == "faraday":
        A, B, coef, k = E, H, "mu", 1j * omega
    elif law == "ampere":
        A, B, coef, k = H, E, "sigma", 1.0
    else:
        raise ValueError(f"law must be 'faraday' or 'ampere', got {law!r}")
    pm = transform_material(m, cmap)
    y = target.points()
    pa, pb = pullback_values(cmap, A, y), pullback_values(cmap, B, y)
    lhs = curl_array(pa, target.h) - k * getattr(pm, coef)(y) * pb
    x = cmap.F(y)
    res = pointwise_curl(A, x, float(min(target.h))) - k * getattr(m, coef)(x) * B(x)
    rhs = cmap.material_factor(y) * matvec(cmap.DF(y), res)
    return _compare(lhs, rhs)


# --- normals and traces -------------------------------------------------------------------

def transform_trace(cmap: ConformalMap, y, trace) -> np.ndarray:
    """F* of tangential data nu x H given at x = F(y): DF(y)^T trace."""
    y = np.asarray(y, float)
    cmap.check_regular(y)
    return matvec(transpose(cmap.DF(y)), np.asarray(trace))


def outward_normal(grad_rho: np.ndarray) -> np.ndarray:
    """nu = -grad rho/|grad rho| for a defining function positive inside."""
    return -grad_rho / np.sqrt(_norm2(grad_rho))


def pulled_back_normal(cmap: ConformalMap, rho: Callable, y, h: float | None = None,
                       grad_rho: Callable | None = None) -> np.ndarray:
    """Outward normal of {rho o F > 0} at y.

    With ``grad_rho`` the chain rule DF^T (grad rho) o F is used; otherwise a
    central difference of rho o F with step ``h``.
    """
    y = np.asarray(y, float)
    if grad_rho is not None:
        g = matvec(transpose(cmap.DF(y)), grad_rho(cmap.F(y)))
    else:
        cols = []
        for j in range(3):
            e = np.zeros_like(y)
            e[j] = h
            cols.append((rho(cmap.F(y + e)) - rho(cmap.F(y - e))) / (2 * h))
        g = np.stack(cols)
    return outward_normal(g)


def normal_law(cmap: ConformalMap, grad_rho: Callable, y) -> float:
    """max |nu~ - |z|^2 F* nu| with nu~ from the chain rule."""
    y = np.asarray(y, float)
    nu_t = pulled_back_normal(cmap, None, y, grad_rho=grad_rho)
    nu = outward_normal(grad_rho(cmap.F(y)))
    r = cmap.pole_distance(y)
    return float(np.max(np.abs(nu_t - r**2 * transform_trace(cmap, y, nu))))


def trace_law(cmap: ConformalMap, H: Callable, rho: Callable, grad_rho: Callable, y,
              h: float) -> dict:
    """nu~ x F*H (difference normal, step h) against F*(nu x H) at boundary points y."""
    y = np.asarray(y, float)
    nu_t = pulled_back_normal(cmap, rho, y, h=h)
    lhs = np.cross(nu_t, pullback_values(cmap, H, y), axis=0)
    x = cmap.F(y)
    nu = outward_normal(grad_rho(x))
    rhs = transform_trace(cmap, y, np.cross(nu, H(x), axis=0))
    d = np.abs(lhs - rhs)
    top = float(np.max(np.abs(rhs)))
    return {"max_error": float(np.max(d)), "relative": float(np.max(d)) / top}


# --- geometry of B0 -------------------------------------------------------------------------

def sphere_points(n: int, x0=DEFAULT_X0, seed: int = 0, exclude: float = 1e-3) -> np.ndarray:
    """Random points on the boundary of B(x0, |x0|), away from the origin."""
    rng = np.random.default_rng(seed)
    x0 = np.asarray(x0, float)
    R = float(np.linalg.norm(x0))
    out = []
    while len(out) < n:
        v = rng.normal(size=3)
        p = x0 + R * v / np.linalg.norm(v)
        if np.linalg.norm(p) > exclude:
            out.append(p)
    return np.array(out).T


def ball_defining_function(center, radius):
    """rho = r^2 - |x - c|^2 and its gradient."""
    c = np.asarray(center, float)

    def rho(x):
        x = np.asarray(x, float)
        return radius**2 - _norm2(x - _col(c, x.ndim - 1))

    def grad_rho(x):
        x = np.asarray(x, float)
        return -2 * (x - _col(c, x.ndim - 1))

    return rho, grad_rho
