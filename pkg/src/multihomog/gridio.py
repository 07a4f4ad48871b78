"""Binary grid files for fields and corrector tables.

Layout (little endian)::

    magic   8 bytes  b"MHGRID\\x00\\x01"
    hlen    uint32   length of the header
    header  hlen     UTF-8 JSON: d, n, h, shape, slow_points, plus kind-specific keys
    payload          float64 samples, row-major, shape given in the header
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .cell import CorrectorField, ReiteratedTable
from .discretize import Grid
from .elliptic import GridField
from .errors import InvalidInput

MAGIC = b"MHGRID\x00\x01"


def _write(path, header: dict, payload: np.ndarray) -> None:
    payload = np.ascontiguousarray(payload, dtype="<f8")
    header = {**header, "shape": list(payload.shape)}
    text = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(text)))
        fh.write(text)
        fh.write(payload.tobytes(order="C"))


def _read(path) -> tuple[dict, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise InvalidInput(f"{path}: not a grid file")
    (hlen,) = struct.unpack("<I", data[8:12])
    header = json.loads(data[12:12 + hlen].decode())
    shape = tuple(header["shape"])
    payload = np.frombuffer(data, dtype="<f8", offset=12 + hlen)
    if payload.size != int(np.prod(shape)):
        raise InvalidInput(f"{path}: payload has {payload.size} samples, header says {shape}")
    return header, payload.reshape(shape).astype(float)


def write_field(path, field: GridField) -> None:
    g = field.grid
    _write(path, {"type": "field", "d": g.dim, "n": 0, "h": g.h, "slow_points": [],
                  "lower": list(g.lower), "cells": g.cells, "periodic": g.periodic,
                  "kind": field.kind, "location": field.location}, field.values)


def read_field(path) -> GridField:
    header, values = _read(path)
    if header.get("type") != "field":
        raise InvalidInput(f"{path}: not a field file")
    grid = Grid(lower=tuple(header["lower"]), cells=header["cells"], h=header["h"],
                periodic=header["periodic"])
    return GridField(grid, values, kind=header["kind"], location=header["location"])


def write_corrector_table(path, table: ReiteratedTable) -> None:
    """Effective matrices per slow point, followed by the correctors when stored.

    Payload rows are slow points; each row holds the d*d matrix entries and,
    if present, the corrector values and gradients flattened row-major.
    """
    S = table.matrices.shape[0]
    d = table.dim
    rows = [table.matrices.reshape(S, -1)]
    grad_shape = []
    if table.correctors is not None:
        vals = np.stack([c.values for c in table.correctors])
        grads = np.stack([c.gradient for c in table.correctors])
        grad_shape = list(grads.shape[1:])
        rows += [vals.reshape(S, -1), grads.reshape(S, -1)]
    header = {"type": "corrector_table", "d": d, "n": table.slow_points.shape[1] + 1, "h": table.h,
              "slow_points": table.slow_points.reshape(S, -1).tolist(), "lattice": table.lattice,
              "gradient_shape": grad_shape}
    _write(path, header, np.concatenate(rows, axis=1))


def read_corrector_table(path) -> ReiteratedTable:
    header, payload = _read(path)
    if header.get("type") != "corrector_table":
        raise InvalidInput(f"{path}: not a corrector table")
    d, n = header["d"], header["n"]
    S = payload.shape[0]
    mats = payload[:, : d * d].reshape(S, d, d)
    slow = np.asarray(header["slow_points"], dtype=float).reshape(S, n - 1, d)
    correctors = None
    if header["gradient_shape"]:
        gshape = tuple(header["gradient_shape"])
        vshape = gshape[1:]
        nv = int(np.prod(vshape))
        vals = payload[:, d * d: d * d + nv].reshape((S,) + vshape)
        grads = payload[:, d * d + nv:].reshape((S,) + gshape)
        correctors = [CorrectorField(h=header["h"], values=v, gradient=g,
                                     mean_residual=np.abs(v.reshape(d, -1).mean(axis=1)))
                      for v, g in zip(vals, grads)]
    return ReiteratedTable(slow_points=slow, matrices=mats, h=header["h"], correctors=correctors,
                           lattice=header["lattice"])
