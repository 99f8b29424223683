"""Snapshot and log files.

Snapshots hold interior nodes only, one ``x y re im`` row each in global
(lexicographic, x fastest) order, printed with 17 significant digits.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import InputError
from .mesh import Mesh


def header_lines(config_lines, extra: dict | None = None) -> str:
    lines = [f"# {line}" for line in config_lines]
    lines += [f"# {k} = {v!r}" for k, v in (extra or {}).items()]
    return "\n".join(lines) + ("\n" if lines else "")


def write_snapshot(path, mesh: Mesh, c: np.ndarray, t: float, config_lines=()) -> Path:
    path = Path(path)
    x, y = mesh.interior_coords()
    c = np.asarray(c, dtype=complex)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(header_lines(config_lines, {"time": float(t), "n_interior": mesh.n_interior}))
        fh.write("# x y re im\n")
        for row in zip(x, y, c.real, c.imag):
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")
    return path


def read_snapshot(path, mesh: Mesh | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(x, y, c)``; with ``mesh`` given, check the node layout matches."""
    data = np.loadtxt(path, comments="#", ndmin=2)
    if data.shape[1] != 4:
        raise InputError(f"{path}: expected 4 columns, got {data.shape[1]}")
    x, y, c = data[:, 0], data[:, 1], data[:, 2] + 1j * data[:, 3]
    if mesh is not None:
        mx, my = mesh.interior_coords()
        if x.shape != mx.shape or not (np.allclose(x, mx, rtol=0, atol=1e-12) and np.allclose(y, my, rtol=0, atol=1e-12)):
            raise InputError(f"{path}: node layout does not match the mesh")
    return x, y, c


def write_norm_log(path, norms, config_lines=()) -> Path:
    """CSV ``step,t,norm,relative_drift`` from ``(step, t, norm)`` triples."""
    path = Path(path)
    n0 = norms[0][2] if norms else 1.0
    with path.open("w", encoding="utf-8") as fh:
        fh.write(header_lines(config_lines))
        fh.write("step,t,norm,relative_drift\n")
        for step, t, nrm in norms:
            fh.write(f"{step},{t!r},{nrm!r},{(nrm - n0) / n0!r}\n")
    return path
