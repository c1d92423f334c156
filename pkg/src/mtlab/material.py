"""Piecewise-smooth conductivity/permeability models built from C^2 bumps."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MaterialError
from .fields import Grid3


@dataclass(frozen=True)
class Bump:
    """Profile ``amplitude * (1 - |x-c|^2/R^2)^3`` inside the ball B(c, R)."""

    center: tuple
    radius: float
    amplitude: float
    target: str = "sigma"

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        if self.target not in ("sigma", "mu"):
            raise MaterialError(f"bump target must be 'sigma' or 'mu', got {self.target!r}")
        if self.radius <= 0:
            raise MaterialError("bump radius must be positive")
        if self.amplitude < 0:
            raise MaterialError("bump amplitude must be non-negative so that sigma >= sigma0")

    def _s(self, x):
        c = np.asarray(self.center).reshape((3,) + (1,) * (x.ndim - 1))
        d = x - c
        return d, np.sum(d * d, axis=0) / self.radius**2

    def value(self, x: np.ndarray) -> np.ndarray:
        _, s = self._s(x)
        return self.amplitude * np.clip(1.0 - s, 0.0, None) ** 3

    def gradient(self, x: np.ndarray) -> np.ndarray:
        d, s = self._s(x)
        w = np.clip(1.0 - s, 0.0, None)
        return -6.0 * self.amplitude * w**2 * d / self.radius**2

    def hessian(self, x: np.ndarray) -> np.ndarray:
        d, s = self._s(x)
        w = np.clip(1.0 - s, 0.0, None)
        R2 = self.radius**2
        out = 24.0 * self.amplitude * w * d[:, None] * d[None, :] / R2**2
        eye = np.eye(3).reshape((3, 3) + (1,) * (x.ndim - 1))
        return out - 6.0 * self.amplitude * w**2 * eye / R2


@dataclass(frozen=True)
class MaterialModel:
    """sigma = sigma0 + sum of sigma bumps, mu = mu0 + sum of mu bumps."""

    sigma0: float = 1.0
    mu0: float = 1.0
    bumps: tuple = field(default_factory=tuple)
    support_radius: float | None = None

    def __post_init__(self):
        if not (self.sigma0 > 0 and self.mu0 > 0):
            raise MaterialError(
                f"background constants must be positive, got sigma0={self.sigma0}, mu0={self.mu0}")
        bumps = tuple(b if isinstance(b, Bump) else Bump(**b) for b in self.bumps)
        object.__setattr__(self, "bumps", bumps)
        reach = max((np.linalg.norm(b.center) + b.radius for b in bumps), default=0.0)
        if self.support_radius is None:
            object.__setattr__(self, "support_radius", float(reach))
        elif reach > self.support_radius + 1e-12:
            raise MaterialError(
                f"bumps reach radius {reach:.4g} beyond support_radius {self.support_radius}")

    @classmethod
    def constant(cls, sigma0=1.0, mu0=1.0) -> "MaterialModel":
        return cls(sigma0, mu0, ())

    def _sum(self, target, method, x, base):
        out = np.zeros_like(base, dtype=float) + base
        for b in self.bumps:
            if b.target == target:
                out = out + getattr(b, method)(x)
        return out

    def _points(self, where):
        return where.points() if isinstance(where, Grid3) else np.asarray(where, dtype=float)

    def sigma(self, where) -> np.ndarray:
        x = self._points(where)
        return self._sum("sigma", "value", x, np.full(x.shape[1:], self.sigma0))

    def mu(self, where) -> np.ndarray:
        x = self._points(where)
        return self._sum("mu", "value", x, np.full(x.shape[1:], self.mu0))

    def coefficient(self, target, where) -> np.ndarray:
        return self.sigma(where) if target == "sigma" else self.mu(where)

    def grad_log(self, target: str, where) -> np.ndarray:
        """Analytic gradient of log sigma or log mu, shape (3, ...)."""
        x = self._points(where)
        c = self.coefficient(target, x)
        g = self._sum(target, "gradient", x, np.zeros(x.shape))
        return g / c

    def hess_log(self, target: str, where) -> np.ndarray:
        """Analytic Hessian of log sigma or log mu, shape (3, 3, ...)."""
        x = self._points(where)
        c = self.coefficient(target, x)
        g = self._sum(target, "gradient", x, np.zeros(x.shape))
        H = self._sum(target, "hessian", x, np.zeros((3,) + x.shape))
        return H / c - g[:, None] * g[None, :] / c**2

    def check_on(self, grid: Grid3) -> None:
        s, m = self.sigma(grid), self.mu(grid)
        if not (np.all(s > 0) and np.all(m > 0)):
            raise MaterialError("sigma and mu must be positive on the grid")

    def with_sigma_scaled(self, c: float) -> "MaterialModel":
        bumps = tuple(Bump(b.center, b.radius, b.amplitude * c, b.target) if b.target == "sigma"
                      else b for b in self.bumps)
        return MaterialModel(self.sigma0 * c, self.mu0, bumps, self.support_radius)

    @classmethod
    def from_dict(cls, d: dict) -> "MaterialModel":
        return cls(d.get("sigma0", 1.0), d.get("mu0", 1.0), tuple(d.get("bumps", ())),
                   d.get("support_radius"))

    def to_dict(self) -> dict:
        return {"sigma0": self.sigma0, "mu0": self.mu0, "support_radius": self.support_radius,
                "bumps": [{"center": list(b.center), "radius": b.radius,
                           "amplitude": b.amplitude, "target": b.target} for b in self.bumps]}


def standard_bump_model(sigma0: float = 1.0, mu0: float = 1.0) -> MaterialModel:
    """Overlapping sigma and mu bumps, off-centre, supported in |x| < 0.36."""
    return MaterialModel(sigma0, mu0, (
        Bump((0.05, -0.03, 0.0), 0.3, 0.6 * sigma0, "sigma"),
        Bump((-0.05, 0.04, 0.03), 0.28, 0.4 * mu0, "mu"),
    ), support_radius=0.36)
