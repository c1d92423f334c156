"""On-disk formats: binary complex blobs with JSON sidecars, CSV tables, JSON records."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .fields import Grid3, ScalarField3, VectorField3


def dump_json(obj, path) -> None:
    """Deterministic JSON: sorted keys, fixed indentation, trailing newline."""
    text = json.dumps(obj, sort_keys=True, indent=2, default=_json_default)
    Path(path).write_text(text + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _pack(arr: np.ndarray) -> bytes:
    flat = np.asarray(arr, dtype=complex)
    pairs = np.empty(flat.shape + (2,), dtype="<f8")
    pairs[..., 0] = flat.real
    pairs[..., 1] = flat.imag
    return pairs.tobytes()


def _unpack(raw: bytes, count: int) -> np.ndarray:
    pairs = np.frombuffer(raw, dtype="<f8")
    if pairs.size != 2 * count:
        raise ValueError(f"expected {count} complex values, found {pairs.size / 2}")
    return pairs[0::2] + 1j * pairs[1::2]


def write_field(f, path) -> list:
    """Write ``path`` (binary) and ``path.json`` (sidecar); returns written paths.

    Each component is written in x-fastest order, components one after another.
    """
    path = Path(path)
    comps = f.components if isinstance(f, VectorField3) else f.values[None]
    blob = b"".join(_pack(c.ravel(order="F")) for c in comps)
    path.write_bytes(blob)
    side = path.with_name(path.name + ".json")
    g = f.grid
    dump_json({"origin": list(g.origin), "extent": list(g.extent), "n": list(g.n),
               "components": len(comps)}, side)
    return [path, side]


def read_field(path):
    path = Path(path)
    meta = json.loads(path.with_name(path.name + ".json").read_text())
    grid = Grid3(meta["origin"], meta["extent"], meta["n"])
    nc = int(meta["components"])
    vals = _unpack(path.read_bytes(), nc * grid.size).reshape(nc, -1)
    comps = np.stack([v.reshape(grid.n, order="F") for v in vals])
    if nc == 1:
        return ScalarField3(grid, comps[0])
    return VectorField3(grid, comps)


def write_matrix_csv(mat: np.ndarray, path) -> Path:
    """Row-major CSV; each matrix cell becomes a ``re,im`` column pair."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in np.asarray(mat, dtype=complex):
            cells = []
            for z in row:
                cells += [repr(float(z.real)), repr(float(z.imag))]
            w.writerow(cells)
    return path


def read_matrix_csv(path) -> np.ndarray:
    rows = []
    with Path(path).open() as fh:
        for rec in csv.reader(fh):
            v = np.array([float(x) for x in rec])
            rows.append(v[0::2] + 1j * v[1::2])
    return np.array(rows, dtype=complex)


def write_matrix_bin(mat: np.ndarray, path, basis, omega: float) -> list:
    path = Path(path)
    mat = np.asarray(mat, dtype=complex)
    path.write_bytes(_pack(mat.ravel(order="C")))
    side = path.with_name(path.name + ".json")
    dump_json({"basis": basis, "omega": float(omega), "n": list(mat.shape)}, side)
    return [path, side]


def read_matrix_bin(path) -> tuple:
    path = Path(path)
    meta = json.loads(path.with_name(path.name + ".json").read_text())
    shape = tuple(meta["n"])
    mat = _unpack(path.read_bytes(), int(np.prod(shape))).reshape(shape)
    return mat, meta


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) for x in r])
    return path


def read_csv(path) -> tuple:
    with Path(path).open() as fh:
        rd = csv.reader(fh)
        header = next(rd)
        data = np.array([[float(x) for x in r] for r in rd])
    return header, data
