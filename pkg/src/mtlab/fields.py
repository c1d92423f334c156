"""Grids, sampled complex fields, finite-difference operators and weighted norms.

Arrays are stored with shape ``grid.n`` indexed as ``[i, j, k]`` for the
three Cartesian axes.  Vector fields stack their components on a leading
axis of length 3.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.integrate import trapezoid

from .errors import DomainError, GridSizeError, PreconditionError

FACES = ("x-", "x+", "y-", "y+", "z-", "z+")
DEFAULT_DELTA = -0.5


@dataclass(frozen=True)
class Grid3:
    """Uniform Cartesian grid of ``n[a]`` points spanning ``origin + [0, extent]``."""

    origin: tuple
    extent: tuple
    n: tuple

    def __post_init__(self):
        origin = tuple(float(v) for v in self.origin)
        extent = tuple(float(v) for v in self.extent)
        n = tuple(int(v) for v in self.n)
        if len(origin) != 3 or len(extent) != 3 or len(n) != 3:
            raise GridSizeError("Grid3 needs 3-vectors for origin, extent and n")
        if min(n) < 4:
            raise GridSizeError(f"Grid3 needs at least 4 points per axis, got n={n}")
        if min(extent) <= 0:
            raise GridSizeError(f"Grid3 extent must be positive, got {extent}")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "extent", extent)
        object.__setattr__(self, "n", n)

    @classmethod
    def cube(cls, n: int, lo: float = -1.0, hi: float = 1.0) -> "Grid3":
        return cls((lo, lo, lo), (hi - lo,) * 3, (n, n, n))

    @property
    def h(self) -> np.ndarray:
        return np.array(self.extent) / (np.array(self.n) - 1)

    @property
    def shape(self) -> tuple:
        return self.n

    @property
    def size(self) -> int:
        return int(np.prod(self.n))

    def axis(self, a: int) -> np.ndarray:
        return self.origin[a] + self.h[a] * np.arange(self.n[a])

    def mesh(self) -> tuple:
        return np.meshgrid(self.axis(0), self.axis(1), self.axis(2), indexing="ij")

    def points(self) -> np.ndarray:
        """Coordinates as an array of shape (3, *n)."""
        return np.stack(self.mesh())

    def radius_squared(self) -> np.ndarray:
        X = self.mesh()
        return X[0] ** 2 + X[1] ** 2 + X[2] ** 2

    def refined(self, n) -> "Grid3":
        if np.isscalar(n):
            n = (n, n, n)
        return Grid3(self.origin, self.extent, n)


@dataclass
class ScalarField3:
    grid: Grid3
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != self.grid.n:
            raise GridSizeError(
                f"values of shape {self.values.shape} do not match grid {self.grid.n}")
        if not np.all(np.isfinite(self.values)):
            raise DomainError("ScalarField3 values must be finite")


@dataclass
class VectorField3:
    grid: Grid3
    components: np.ndarray

    def __post_init__(self):
        self.components = np.asarray(self.components, dtype=complex)
        if self.components.shape != (3,) + self.grid.n:
            raise GridSizeError(
                f"components of shape {self.components.shape} do not match grid {self.grid.n}")
        if not np.all(np.isfinite(self.components)):
            raise DomainError("VectorField3 components must be finite")

    @classmethod
    def zeros(cls, grid: Grid3) -> "VectorField3":
        return cls(grid, np.zeros((3,) + grid.n, dtype=complex))

    def __getitem__(self, c):
        return self.components[c]


Field = Union[ScalarField3, VectorField3]


@dataclass(frozen=True)
class WeightedNormParams:
    """Weight exponent of the norm (int (1+|x|^2)^delta |f|^2)^(1/2)."""

    delta: float = DEFAULT_DELTA

    def __post_init__(self):
        if not -1.0 < self.delta < 0.0:
            raise DomainError(
                f"WeightedNormParams.delta must lie in (-1, 0), got {self.delta}")


# --- raw array differential operators -------------------------------------

def _check(shape):
    if min(shape) < 4:
        raise GridSizeError(f"difference stencils need n >= 4 per axis, got {shape}")


def d_axis(u: np.ndarray, h, axis: int) -> np.ndarray:
    """Second-order derivative along ``axis`` (central inside, one-sided at faces)."""
    return np.gradient(u, h[axis], axis=axis, edge_order=2)


def grad_array(u: np.ndarray, h) -> np.ndarray:
    _check(u.shape)
    return np.stack([d_axis(u, h, a) for a in range(3)])


def div_array(v: np.ndarray, h) -> np.ndarray:
    _check(v.shape[1:])
    return d_axis(v[0], h, 0) + d_axis(v[1], h, 1) + d_axis(v[2], h, 2)


def curl_array(v: np.ndarray, h) -> np.ndarray:
    _check(v.shape[1:])
    return np.stack([
        d_axis(v[2], h, 1) - d_axis(v[1], h, 2),
        d_axis(v[0], h, 2) - d_axis(v[2], h, 0),
        d_axis(v[1], h, 0) - d_axis(v[0], h, 1),
    ])


def grad(u: ScalarField3) -> VectorField3:
    return VectorField3(u.grid, grad_array(u.values, u.grid.h))


def div(v: VectorField3) -> ScalarField3:
    return ScalarField3(v.grid, div_array(v.components, v.grid.h))


def curl(v: VectorField3) -> VectorField3:
    return VectorField3(v.grid, curl_array(v.components, v.grid.h))


def diff_ops(f: Field, which: str) -> Field:
    """Apply ``grad``, ``curl`` or ``div`` to a sampled field."""
    if which == "grad":
        if not isinstance(f, ScalarField3):
            raise TypeError("grad needs a ScalarField3")
        return grad(f)
    if which == "curl":
        return curl(f)
    if which == "div":
        return div(f)
    raise ValueError(f"unknown operator {which!r}")


# --- quadrature and norms ---------------------------------------------------

def integrate(values: np.ndarray, grid: Grid3):
    """Trapezoid rule over the grid box."""
    out = values
    for a in (2, 1, 0):
        out = trapezoid(out, dx=grid.h[a], axis=a)
    return out


def weight(grid: Grid3, exponent: float) -> np.ndarray:
    return (1.0 + grid.radius_squared()) ** exponent


def weighted_norm(f, params: WeightedNormParams | None = None, shifted: bool = False,
                  grid: Grid3 | None = None) -> float:
    """Weighted L2 norm with weight (1+|x|^2)^delta, or delta+1 if ``shifted``.

    ``f`` may be a field or a raw array (scalar or stacked vector) together
    with ``grid``.
    """
    if params is None:
        params = WeightedNormParams()
    if isinstance(f, ScalarField3):
        grid, sq = f.grid, np.abs(f.values) ** 2
    elif isinstance(f, VectorField3):
        grid, sq = f.grid, np.sum(np.abs(f.components) ** 2, axis=0)
    else:
        arr = np.asarray(f)
        sq = np.abs(arr) ** 2
        if arr.ndim == 4:
            sq = sq.sum(axis=0)
    exponent = params.delta + 1.0 if shifted else params.delta
    return float(np.sqrt(max(integrate(weight(grid, exponent) * sq, grid).real, 0.0)))


def l2_norm(arr: np.ndarray, grid: Grid3) -> float:
    """Unweighted trapezoid L2 norm of a scalar or stacked vector array."""
    sq = np.abs(arr) ** 2
    if sq.ndim == 4:
        sq = sq.sum(axis=0)
    return float(np.sqrt(integrate(sq, grid)))


# --- faces and tangential traces ---------------------------------------------

def face_axis_side(face: str) -> tuple:
    if face not in FACES:
        raise ValueError(f"unknown face {face!r}; expected one of {FACES}")
    return "xyz".index(face[0]), (1 if face[1] == "+" else 0)


def face_normal(face: str) -> np.ndarray:
    axis, side = face_axis_side(face)
    nu = np.zeros(3)
    nu[axis] = 1.0 if side else -1.0
    return nu


def face_tangent_axes(face: str) -> tuple:
    axis, _ = face_axis_side(face)
    return tuple(a for a in range(3) if a != axis)


def face_index(face: str, grid: Grid3) -> tuple:
    """Index tuple selecting the face nodes from a ``grid.n`` array."""
    axis, side = face_axis_side(face)
    idx = [slice(None)] * 3
    idx[axis] = grid.n[axis] - 1 if side else 0
    return tuple(idx)


def face_spacing(face: str, grid: Grid3) -> tuple:
    return tuple(grid.h[a] for a in face_tangent_axes(face))


@dataclass
class TangentialTrace:
    """nu x u on one box face, stored by its two tangential components."""

    face: str
    values: np.ndarray
    grid: Grid3 | None = None
    normal: np.ndarray = field(init=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        self.normal = face_normal(self.face)
        if self.values.ndim != 3 or self.values.shape[0] != 2:
            raise GridSizeError("trace values must have shape (2, m, n)")

    def as_vector(self) -> np.ndarray:
        """Reconstructed 3-vector samples, shape (3, m, n); normal part is zero."""
        out = np.zeros((3,) + self.values.shape[1:], dtype=complex)
        a, b = face_tangent_axes(self.face)
        out[a], out[b] = self.values[0], self.values[1]
        return out


def cross_normal(nu: np.ndarray, u: np.ndarray) -> np.ndarray:
    return np.stack([
        nu[1] * u[2] - nu[2] * u[1],
        nu[2] * u[0] - nu[0] * u[2],
        nu[0] * u[1] - nu[1] * u[0],
    ])


def tangential_trace(u: VectorField3, face: str) -> TangentialTrace:
    nu = face_normal(face)
    samples = u.components[(slice(None),) + face_index(face, u.grid)]
    t = cross_normal(nu, samples)
    a, b = face_tangent_axes(face)
    return TangentialTrace(face, np.stack([t[a], t[b]]), u.grid)


def surface_divergence(t: TangentialTrace, h=None) -> np.ndarray:
    """Two-dimensional divergence of a trace over its face."""
    if h is None:
        if t.grid is None:
            raise PreconditionError("surface_divergence needs face spacings or a grid")
        h = face_spacing(t.face, t.grid)
    if min(t.values.shape[1:]) < 4:
        raise GridSizeError("face grid needs n >= 4 per axis")
    return (np.gradient(t.values[0], h[0], axis=0, edge_order=2)
            + np.gradient(t.values[1], h[1], axis=1, edge_order=2))
