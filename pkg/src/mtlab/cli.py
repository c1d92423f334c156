"""Experiment runner: strict YAML configs, one subcommand per experiment, JSON summaries.

Every run writes its artifacts, ``summary.json`` and an ``index.json`` manifest
(with SHA-256 digests) into the output directory.  Nothing time- or host-
dependent is recorded, so identical configs give byte-identical files.
"""
from __future__ import annotations

import argparse
import hashlib
import os
import platform
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import __version__
from .errors import MtlabError, ValidationError
from .fields import FACES, Grid3, ScalarField3, VectorField3, WeightedNormParams
from .io import dump_json, write_csv, write_field, write_matrix_bin, write_matrix_csv
from .material import Bump, MaterialModel, standard_bump_model

EXPERIMENTS = {
    "forward": "forward",
    "impedance": "impedance",
    "cgo": "cgo_ladder",
    "identity": "identity_scan",
    "mirror": "mirror",
    "kelvin": "kelvin_checks",
    "symbol": "symbol_probe",
    "sounding": "apparent_resistivity",
}

# --- configuration ---------------------------------------------------------------

NUM = (int, float)
_MATERIAL = {"sigma0": NUM, "mu0": NUM, "bumps": list, "support_radius": NUM, "standard": bool}
_BUMP = {"center": list, "radius": NUM, "amplitude": NUM, "target": str}
SCHEMA = {
    "experiment": str,
    "seed": int,
    "grid": {"n": (int, list), "lo": (int, float, list), "hi": (int, float, list),
             "length": NUM},
    "material": _MATERIAL,
    "material2": _MATERIAL,
    "omega": NUM,
    "omegas": list,
    "taus": list,
    "xi": list,
    "s0": NUM,
    "xi_lattice": {"n": int, "period": NUM},
    "norm": {"delta": NUM},
    "boundary": {"kind": str, "polarization": int},
    "basis": {"size": int, "faces": list},
    "layers": {"sigmas": list, "interfaces": list, "width": NUM},
    "probe": {"ladder": list, "point": list, "recover": bool, "basis_size": int},
    "points": int,
    "tolerances": dict,
    "output": {"dir": str},
}

DEFAULT_TOLERANCES = {
    "zero_field": 0.0,
    "residual": 1e-6,
    "div_ratio": 1e-2,
    "peak_cells": 1.0,
    "amplitude": 0.2,
    "stencil": 1e-10,
    "eta_spread": 0.1,
    "jacobian": 1e-10,
    "cross_lemma": 1e-8,
    "rho_a": 0.05,
    "roundtrip": 0.0,
}


def _check(value, spec, path):
    if isinstance(spec, dict):
        if not isinstance(value, dict):
            raise ValidationError(f"{path}: expected a mapping, got {type(value).__name__}")
        for k, v in value.items():
            if k not in spec:
                raise ValidationError(f"{path}.{k}: unknown key" if path else f"{k}: unknown key")
            _check(v, spec[k], f"{path}.{k}" if path else k)
        return
    if spec is dict:
        if not isinstance(value, dict):
            raise ValidationError(f"{path}: expected a mapping")
        return
    types = spec if isinstance(spec, tuple) else (spec,)
    ok = isinstance(value, types) and not (isinstance(value, bool) and bool not in types)
    if not ok:
        names = "/".join(t.__name__ for t in types)
        raise ValidationError(f"{path}: expected {names}, got {type(value).__name__}")


def _number_list(vals, path, length=None, positive=False):
    if not all(isinstance(v, NUM) and not isinstance(v, bool) for v in vals):
        raise ValidationError(f"{path}: expected a list of numbers")
    if length is not None and len(vals) != length:
        raise ValidationError(f"{path}: expected {length} entries, got {len(vals)}")
    if positive and any(v <= 0 for v in vals):
        raise ValidationError(f"{path}: entries must be positive")
    return [float(v) for v in vals]


@dataclass
class RunConfig:
    experiment: str
    seed: int = 0
    grid: dict = field(default_factory=dict)
    material: dict | None = None
    material2: dict | None = None
    omega: float = 1.0
    omegas: list | None = None
    taus: list | None = None
    xi: list | None = None
    s0: float | None = None
    xi_lattice: dict = field(default_factory=dict)
    norm: dict = field(default_factory=dict)
    boundary: dict = field(default_factory=dict)
    basis: dict = field(default_factory=dict)
    layers: dict | None = None
    probe: dict = field(default_factory=dict)
    points: int = 100
    tolerances: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def tol(self, name: str) -> float:
        return float(self.tolerances.get(name, DEFAULT_TOLERANCES[name]))


def _material(d: dict | None, path: str, default: MaterialModel) -> MaterialModel:
    if d is None:
        return default
    if d.get("standard"):
        extra = set(d) - {"standard", "sigma0", "mu0"}
        if extra:
            raise ValidationError(f"{path}.{sorted(extra)[0]}: not allowed with standard: true")
        return standard_bump_model(d.get("sigma0", 1.0), d.get("mu0", 1.0))
    bumps = []
    for i, b in enumerate(d.get("bumps", [])):
        _check(b, _BUMP, f"{path}.bumps[{i}]")
        _number_list(b.get("center", []), f"{path}.bumps[{i}].center", 3)
        try:
            bumps.append(Bump(**b))
        except (TypeError, MtlabError) as err:
            raise ValidationError(f"{path}.bumps[{i}]: {err}") from err
    try:
        return MaterialModel(d.get("sigma0", 1.0), d.get("mu0", 1.0), tuple(bumps),
                             d.get("support_radius"))
    except MtlabError as err:
        raise ValidationError(f"{path}: {err}") from err


def validate(raw: dict, experiment: str | None = None) -> RunConfig:
    """Check a parsed config against the schema and module preconditions."""
    if raw is None:
        raw = {}
    _check(raw, SCHEMA, "")
    exp = raw.get("experiment", experiment)
    if exp is None:
        raise ValidationError("experiment: missing")
    if exp in EXPERIMENTS:
        exp = EXPERIMENTS[exp]
    if exp not in EXPERIMENTS.values():
        raise ValidationError(f"experiment: unknown experiment {exp!r}")
    if experiment is not None and EXPERIMENTS.get(experiment, experiment) != exp:
        raise ValidationError(f"experiment: config says {exp!r} but the subcommand is {experiment!r}")
    cfg = RunConfig(exp, **{k: v for k, v in raw.items() if k != "experiment"})
    if cfg.omega <= 0:
        raise ValidationError("omega: must be positive")
    for name in ("omegas", "taus"):
        if getattr(cfg, name) is not None:
            setattr(cfg, name, _number_list(getattr(cfg, name), name, positive=True))
    if cfg.xi is not None:
        cfg.xi = _number_list(cfg.xi, "xi", 3)
    if "delta" in cfg.norm:
        try:
            WeightedNormParams(float(cfg.norm["delta"]))
        except MtlabError as err:
            raise ValidationError(f"norm.delta: {err}") from err
    for k, v in cfg.tolerances.items():
        if k not in DEFAULT_TOLERANCES:
            raise ValidationError(f"tolerances.{k}: unknown tolerance")
        if not isinstance(v, NUM) or isinstance(v, bool) or v < 0:
            raise ValidationError(f"tolerances.{k}: must be a non-negative number")
    if cfg.boundary.get("kind", "zero") not in ("zero", "plane_wave"):
        raise ValidationError("boundary.kind: must be 'zero' or 'plane_wave'")
    if cfg.boundary.get("polarization", 1) not in (0, 1):
        raise ValidationError("boundary.polarization: must be 0 or 1")
    for f in cfg.basis.get("faces", []):
        if f not in FACES:
            raise ValidationError(f"basis.faces: unknown face {f!r}")
    if cfg.basis.get("size", 1) < 1:
        raise ValidationError("basis.size: must be at least 1")
    if cfg.points < 1:
        raise ValidationError("points: must be at least 1")
    if cfg.xi_lattice.get("n", 2) < 2:
        raise ValidationError("xi_lattice.n: must be at least 2")
    if cfg.xi_lattice.get("period", 1.0) <= 0:
        raise ValidationError("xi_lattice.period: must be positive")
    if "ladder" in cfg.probe:
        cfg.probe["ladder"] = _number_list(cfg.probe["ladder"], "probe.ladder", positive=True)
    if "point" in cfg.probe:
        cfg.probe["point"] = _number_list(cfg.probe["point"], "probe.point", 3)
    if cfg.layers is not None:
        s = _number_list(cfg.layers.get("sigmas", []), "layers.sigmas", positive=True)
        d = _number_list(cfg.layers.get("interfaces", []), "layers.interfaces", positive=True)
        if len(s) != len(d) + 1:
            raise ValidationError("layers.sigmas: need one more conductivity than interfaces")
    g = cfg.grid
    if "n" in g:
        ns = g["n"] if isinstance(g["n"], list) else [g["n"]]
        if not all(isinstance(v, int) and v >= 4 for v in ns) or len(ns) not in (1, 3):
            raise ValidationError("grid.n: must be an integer >= 4 or three of them")
    for key in ("lo", "hi"):
        if key in g and isinstance(g[key], list):
            _number_list(g[key], f"grid.{key}", 3)
    cfg.material_model = _material(cfg.material, "material", _default_material(exp))
    cfg.material2_model = _material(cfg.material2, "material2", MaterialModel.constant(
        cfg.material_model.sigma0, cfg.material_model.mu0))
    return cfg


def _default_material(exp: str) -> MaterialModel:
    if exp in ("cgo_ladder", "mirror"):
        return standard_bump_model()
    if exp == "identity_scan":
        return MaterialModel(1.0, 1.0, (Bump((0.25, -0.125, 0.125), 0.45, 0.5, "sigma"),))
    return MaterialModel.constant()


def load_config(path) -> dict:
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise ValidationError(f"config: cannot parse {path}: {err}") from err
    if data is not None and not isinstance(data, dict):
        raise ValidationError("config: top level must be a mapping")
    return data or {}


def _box_grid(cfg: RunConfig, n=16, lo=-1.0, hi=1.0) -> Grid3:
    g = cfg.grid
    nn = g.get("n", n)
    nn = tuple(nn) if isinstance(nn, (list, tuple)) else (nn,) * 3
    lo3 = g.get("lo", lo)
    hi3 = g.get("hi", hi)
    lo3 = np.broadcast_to(np.asarray(lo3, float), (3,))
    hi3 = np.broadcast_to(np.asarray(hi3, float), (3,))
    if np.any(hi3 <= lo3):
        raise ValidationError("grid.hi: must exceed grid.lo on every axis")
    return Grid3(tuple(lo3), tuple(hi3 - lo3), nn)


def workers() -> int:
    raw = os.environ.get("MTLAB_THREADS", "1")
    try:
        n = int(raw)
    except ValueError as err:
        raise ValidationError(f"MTLAB_THREADS: expected a positive integer, got {raw!r}") from err
    if n < 1:
        raise ValidationError(f"MTLAB_THREADS: expected a positive integer, got {raw!r}")
    return n


def sweep(fn, items) -> list:
    """Map over sweep points with at most MTLAB_THREADS workers, results in input order."""
    items = list(items)
    n = min(workers(), max(len(items), 1))
    if n == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))


# --- artifacts ----------------------------------------------------------------------

class Artifacts:
    """Collects files written into one directory, in declaration order."""

    def __init__(self, out: Path):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.entries = []

    def _add(self, paths, kind):
        for p in paths:
            p = Path(p)
            self.entries.append({"path": p.name, "kind": kind,
                                 "sha256": hashlib.sha256(p.read_bytes()).hexdigest()})

    def field(self, name, f):
        self._add(write_field(f, self.out / f"{name}.bin"), "field")

    def matrix(self, name, Z):
        self._add([write_matrix_csv(Z.entries, self.out / f"{name}.csv")], "matrix_csv")
        self._add(write_matrix_bin(Z.entries, self.out / f"{name}.bin", Z.basis, Z.omega),
                  "matrix_bin")

    def table(self, name, header, rows):
        self._add([write_csv(self.out / f"{name}.csv", header, rows)], "csv")


def emit(artifacts: Artifacts) -> Path:
    path = artifacts.out / "index.json"
    dump_json({"artifacts": artifacts.entries}, path)
    return path


# --- experiments --------------------------------------------------------------------

def _forward(cfg: RunConfig, art: Artifacts):
    from .forward import ForwardProblem, plane_wave_H
    m = cfg.material_model
    grid = _box_grid(cfg)
    prob = ForwardProblem(m, cfg.omega, grid)
    kind = cfg.boundary.get("kind", "zero")
    checks, diag = {}, {}
    if kind == "zero":
        sol = prob.solve()
        peak = float(max(np.max(np.abs(sol.H.components)), np.max(np.abs(sol.E.components))))
        diag["max_abs_field"] = peak
        checks["zero_data_zero_field"] = peak <= cfg.tol("zero_field")
    else:
        ref = plane_wave_H(grid, cfg.omega, m.sigma0, m.mu0,
                           polarization=cfg.boundary.get("polarization", 1))
        sol = prob.solve(boundary=ref)
        err = float(np.max(np.abs(sol.H.components - ref.components)))
        diag["max_error_vs_plane_wave"] = err
        if not m.bumps:
            checks["plane_wave_reproduced"] = err <= 1e-2
    rep = {k: v for k, v in sol.residual_report.items() if k != "condition_estimate"}
    diag["residuals"] = rep
    scale = max(1.0, float(np.max(np.abs(sol.H.components))))
    checks["linear_residual"] = rep["linear"] <= cfg.tol("residual")
    checks["ampere_residual"] = rep["ampere"] <= cfg.tol("residual") * scale
    art.field("H", sol.H)
    art.field("E", sol.E)
    return diag, checks


def _impedance(cfg: RunConfig, art: Artifacts):
    from .forward import impedance_map
    from .io import read_matrix_bin, read_matrix_csv
    grid = _box_grid(cfg, n=9)
    faces = tuple(cfg.basis.get("faces", ["z-"]))
    Z = impedance_map(cfg.material_model, cfg.omega, cfg.basis.get("size", 2), grid, faces)
    art.matrix("impedance", Z)
    back_csv = read_matrix_csv(art.out / "impedance.csv")
    back_bin = read_matrix_bin(art.out / "impedance.bin")[0]
    checks = {
        "finite": bool(np.all(np.isfinite(Z.entries))),
        "binary_roundtrip": bool(np.array_equal(back_bin, Z.entries)),
        "csv_roundtrip": bool(np.allclose(back_csv, Z.entries, rtol=1e-12, atol=0)),
    }
    diag = {"size": len(Z.basis), "faces": list(faces),
            "max_abs_entry": float(np.max(np.abs(Z.entries)))}
    return diag, checks


def _cgo(cfg: RunConfig, art: Artifacts):
    from .cgo import STANDARD_MOLLIFIER_RADIUS, build_cgo, periodic_grid, standard_cgo_grid, \
        standard_phase
    m = cfg.material_model
    if "n" in cfg.grid:
        n = cfg.grid["n"]
        grid = periodic_grid(float(cfg.grid.get("length", 1.5)),
                             tuple(n) if isinstance(n, list) else (n, n, n))
    else:
        grid = standard_cgo_grid(length=float(cfg.grid.get("length", 1.5)))
    taus = cfg.taus or [8.0, 32.0, 128.0]
    xi = cfg.xi or [0.0, 0.0, 2.0]
    delta = float(cfg.norm.get("delta", -0.5))
    s0 = float(cfg.s0 or 0.0)

    def one(tau):
        pp = standard_phase(tau, tuple(xi), cfg.omega, m.sigma0, m.mu0)
        sol = build_cgo(m, pp.member(1), grid, cfg.omega, s0=s0, delta=delta,
                        mollifier_radius=STANDARD_MOLLIFIER_RADIUS)
        return sol.to_record()

    recs = sweep(one, taus)
    cols = ("norm_r", "norm_f_over_tau", "norm_curlzeta_r_over_tau", "div_ratio")
    rows = [[r["tau"]] + [r["norms"][c] for c in cols] for r in recs]
    art.table("cgo_ladder", ["tau", *cols], rows)
    checks = {f"{c}_decreasing": bool(all(b[i + 1] < a[i + 1] for a, b in zip(rows, rows[1:])))
              for i, c in enumerate(cols[:3])}
    checks["div_ratio_top"] = rows[-1][4] <= cfg.tol("div_ratio")
    return {"ladder": recs}, checks


def _identity(cfg: RunConfig, art: Artifacts):
    from .cgo import periodic_grid
    from .identity import fourier_functional, fourier_lattice, recover_sigma_difference
    m1, m2 = cfg.material_model, cfg.material2_model
    n = cfg.xi_lattice.get("n", 16)
    period = float(cfg.xi_lattice.get("period", 2.0))
    xis = fourier_lattice(n, period)
    qn = cfg.grid.get("n", 64)
    qgrid = periodic_grid(period, tuple(qn) if isinstance(qn, list) else (qn,) * 3)
    scan = fourier_functional(m1, m2, xis, "sigma", grid=qgrid)
    est = recover_sigma_difference(scan, m1)
    art.table("fourier_scan", ["xi1", "xi2", "xi3", "re", "im"],
              [list(x) + [v.real, v.imag] for x, v in zip(xis, scan.values_sigma)])
    art.field("sigma_difference", est)
    diag = {"lattice_n": n, "period": period}
    sig_bumps = [b for b in m1.bumps if b.target == "sigma"]
    checks = {}
    if len(sig_bumps) == 1 and not m2.bumps and m2.sigma0 == m1.sigma0:
        b = sig_bumps[0]
        v = est.values.real
        i = np.unravel_index(np.argmax(v), v.shape)
        peak = np.array([est.grid.origin[a] + est.grid.h[a] * i[a] for a in range(3)])
        cells = float(np.max(np.abs(peak - np.array(b.center)) / np.array(est.grid.h)))
        amp = float(abs(v.max() - b.amplitude) / b.amplitude)
        diag.update({"peak": peak, "peak_offset_cells": cells, "amplitude_error": amp})
        checks["peak_within_cells"] = cells <= cfg.tol("peak_cells")
        checks["amplitude"] = amp <= cfg.tol("amplitude")
    return diag, checks


def _mirror(cfg: RunConfig, art: Artifacts):
    from .mirror import mirror_grid, mirror_phase, phase_split, reflection_identities
    n = cfg.grid.get("n", 16)
    n = n[0] if isinstance(n, list) else n
    grid = mirror_grid((n, n, 2 * (n // 2) + 1), float(cfg.grid.get("length", 1.5)))
    X = grid.mesh()
    beta = ScalarField3(grid, 1.0 + X[0] ** 2 - 0.5 * X[1] * X[2] + 0.3 * X[2] ** 2)
    V = VectorField3(grid, np.stack([X[0] * X[2] + X[1] ** 2, 1.0 - X[2] ** 2 + X[0],
                                     X[0] * X[1] + 0.2 * X[2]]))
    ids = reflection_identities(beta, V)
    taus = cfg.taus or [10.0, 100.0, 1000.0, 10000.0]
    m = cfg.material_model
    rows = []
    for tau in taus:
        ps = phase_split(mirror_phase(tau, tuple(cfg.xi or (0.0, 2.0, 0.0)), cfg.omega,
                                      m.sigma0, m.mu0))
        rows.append([tau, abs(ps.eta_rate), abs(ps.eta_rate) * tau])
    art.table("eta_scaling", ["tau", "eta_rate", "eta_rate_times_tau"], rows)
    prod = np.array([r[2] for r in rows])
    spread = float((prod.max() - prod.min()) / prod.mean())
    checks = {f"identity_{k}": v <= cfg.tol("stencil") for k, v in ids.items()}
    checks["eta_tau_constant"] = spread <= cfg.tol("eta_spread")
    return {"reflection_identities": ids, "eta_tau_spread": spread}, checks


def _kelvin(cfg: RunConfig, art: Artifacts):
    from .kelvin import ConformalMap, cross_product_lemma, jacobian_identities
    rng = np.random.default_rng(cfg.seed)
    cmap = ConformalMap.sphere_to_halfspace()
    pts = rng.uniform(-1.0, 1.0, size=(3, cfg.points)) + np.array([[0.0], [0.0], [1.0]])
    far = np.linalg.norm(pts - np.reshape(cmap.pole, (3, 1)), axis=0) > 0.1
    pts = pts[:, far]
    ids = jacobian_identities(cmap, pts)

    def u(x):
        return np.stack([np.sin(x[1]) + x[2], x[0] * x[2], np.cos(x[0] - x[1])])

    def v(x):
        return np.stack([x[1] ** 2, 1.0 + x[0] * x[1], np.exp(-x[2])])

    cross = cross_product_lemma(cmap, u, v, pts)
    art.table("kelvin_points", ["y1", "y2", "y3"], pts.T.tolist())
    checks = {f"jacobian_{k}": val <= cfg.tol("jacobian") for k, val in ids.items()}
    checks["cross_product_lemma"] = cross <= cfg.tol("cross_lemma")
    return {"jacobian_identities": ids, "cross_product_lemma": cross,
            "points": int(pts.shape[1])}, checks


def _symbol(cfg: RunConfig, art: Artifacts):
    from .symbol import factorization_probe, principal_symbol_Z, recover_boundary_sigma
    m = cfg.material_model
    grid = _box_grid(cfg, n=32)
    ladder = cfg.probe.get("ladder", [4.0, 8.0])
    point = cfg.probe.get("point", [0.1, 0.2, grid.origin[2]])
    rep = factorization_probe(m, point, ladder, grid, cfg.omega)
    art.table("factorization_probe", ["xi", "deviation", "oracle"],
              [[x, d, o] for x, d, o in zip(rep.xi, rep.deviation, rep.oracle)])
    P = principal_symbol_Z(2.0, (1.0, 0.0))
    checks = {
        "deviation_decreasing": rep.decreasing,
        "symbol_example": bool(np.array_equal(P, 0.5 * np.array([[0, 0], [-1, 0]]))),
    }
    diag = {"xi": rep.xi, "deviation": rep.deviation, "slope": rep.slope}
    if cfg.probe.get("recover", False):
        from .forward import impedance_map
        g2 = _box_grid(cfg, n=17)
        Z = impedance_map(m, cfg.omega, cfg.probe.get("basis_size", 3), g2, ("z-",))
        est = recover_boundary_sigma(Z, "z-", g2)
        x = np.array(point, float).reshape(3, 1)
        truth = float(m.sigma(x)[0])
        diag.update({"sigma_estimates": est.estimates, "sigma_top": est.sigma,
                     "sigma_boundary": truth})
        checks["sigma_recovery"] = abs(est.sigma - truth) / truth <= 0.1
    return diag, checks


def _sounding(cfg: RunConfig, art: Artifacts):
    from .symbol import LayeredModel, layered_sounding, sounding
    lay = cfg.layers or {"sigmas": [1.0, 0.1], "interfaces": [0.5]}
    sig = [float(s) for s in lay["sigmas"]]
    itf = [float(d) for d in lay.get("interfaces", [])]
    width = float(lay.get("width", 0.0125))
    grid = _box_grid(cfg, n=[9, 9, 161], lo=[-0.5, -0.5, 0.0], hi=[0.5, 0.5, 1.0])
    m = LayeredModel(tuple(sig), tuple(itf), grid.origin[2], width, float(cfg.material_model.mu0))
    omegas = cfg.omegas or [1.0, 4.0, 16.0]
    rows = [r for chunk in sweep(lambda w: sounding(m, [w], grid), omegas) for r in chunk]
    thick = list(np.diff([0.0] + itf))
    ref = layered_sounding(sig, thick, omegas, m.mu0)
    art.table("sounding", ["omega", "rho_a", "phase"], rows)
    art.table("sounding_oracle", ["omega", "rho_a", "phase"], ref)
    err = [abs(r[1] / q[1] - 1.0) for r, q in zip(rows, ref)]
    return {"relative_error": err}, {"rho_a_vs_layered": max(err) <= cfg.tol("rho_a")}


RUNNERS = {
    "forward": _forward,
    "impedance": _impedance,
    "cgo_ladder": _cgo,
    "identity_scan": _identity,
    "mirror": _mirror,
    "kelvin_checks": _kelvin,
    "symbol_probe": _symbol,
    "apparent_resistivity": _sounding,
}


def versions() -> dict:
    return {"mtlab": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def run(cfg: RunConfig, out) -> dict:
    """Run one validated config; write artifacts, summary.json and index.json."""
    art = Artifacts(out)
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            diag, checks = RUNNERS[cfg.experiment](cfg, art)
    except MtlabError as err:
        raise type(err)(f"{cfg.experiment}: {err}") from err
    summary = {
        "config": {k: v for k, v in cfg.to_dict().items()},
        "versions": versions(),
        "diagnostics": diag,
        "checks": checks,
        "warnings": sorted({str(w.message) for w in caught}),
        "status": "pass" if all(checks.values()) else "fail",
    }
    dump_json(summary, art.out / "summary.json")
    art._add([art.out / "summary.json"], "summary")
    emit(art)
    return summary


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mtlab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, exp in EXPERIMENTS.items():
        s = sub.add_parser(name, help=f"run the {exp} experiment")
        s.add_argument("--config", type=Path, help="YAML config file")
        s.add_argument("--out", type=Path, help="output directory (overrides output.dir)")
        s.add_argument("--grid-n", type=int, help="grid points per axis (overrides grid.n)")
        s.add_argument("--seed", type=int, help="random seed (overrides seed)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw = load_config(args.config) if args.config else {}
        if args.grid_n is not None:
            raw.setdefault("grid", {})
            if not isinstance(raw["grid"], dict):
                raise ValidationError("grid: expected a mapping")
            raw["grid"]["n"] = args.grid_n
        if args.seed is not None:
            raw["seed"] = args.seed
        cfg = validate(raw, args.command)
        out = args.out or Path(cfg.output.get("dir", f"mtlab-{args.command}"))
        summary = run(cfg, out)
    except ValidationError as err:
        print(f"validation error: {err}", file=sys.stderr)
        return 2
    except MtlabError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    for name, ok in summary["checks"].items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    print(f"{summary['status']}: {out}")
    return 0 if summary["status"] == "pass" else 3


if __name__ == "__main__":
    sys.exit(main())
