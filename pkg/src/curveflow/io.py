"""CSV readers and writers for curves, coordinate series and estimates."""

from __future__ import annotations

import csv
import io
import os
from typing import Sequence

import numpy as np

from .errors import DataFormatError
from .function_space import Curve, Grid
from .projection_dynamics import CoordSeries

NODE_TOL = 1e-9
STEP_TOL = 1e-9


def fmt(v: float) -> str:
    return format(float(v), ".17g")


def _rows(path: str, header: Sequence[str] | None = None, prefix: str | None = None):
    """Yield ``(line_number, floats)`` after validating the header row."""
    if not os.path.isfile(path):
        raise DataFormatError("file not found", path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            head = next(reader)
        except StopIteration:
            raise DataFormatError("empty file", path, 1) from None
        head = [h.strip() for h in head]
        if header is not None and head != list(header):
            raise DataFormatError(f"expected header {','.join(header)}, got {','.join(head)}", path, 1)
        if prefix is not None:
            expected = ["t"] + [f"{prefix}{i + 1}" for i in range(len(head) - 1)]
            if len(head) < 2 or head != expected:
                raise DataFormatError(f"expected header t,{prefix}1,...; got {','.join(head)}", path, 1)
        yield head
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(head):
                raise DataFormatError(f"expected {len(head)} fields, got {len(row)}", path, line)
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise DataFormatError(f"non-numeric field in {row!r}", path, line) from None
            if not all(np.isfinite(vals)):
                raise DataFormatError("non-finite value", path, line)
            yield line, vals


def read_curve(path: str, grid: Grid, *, resample: bool = False) -> Curve:
    """Read an ``x,value`` CSV onto ``grid``.

    Without ``resample`` the file's abscissae must match the grid nodes within
    1e-9; with it the samples are linearly interpolated onto the grid.
    """
    rows = _rows(path, header=("x", "value"))
    next(rows)
    data = list(rows)
    if len(data) < 2:
        raise DataFormatError("need at least two rows", path)
    lines = [ln for ln, _ in data]
    xy = np.array([v for _, v in data])
    x, y = xy[:, 0], xy[:, 1]
    bad = np.nonzero(np.diff(x) <= 0)[0]
    if bad.size:
        raise DataFormatError("x must be strictly increasing", path, lines[bad[0] + 1])
    if resample:
        if x[0] > grid.nodes[0] + NODE_TOL or x[-1] < grid.nodes[-1] - NODE_TOL:
            raise DataFormatError(f"curve does not cover [0, {grid.t_max}]", path)
        return Curve(grid, np.interp(grid.nodes, x, y))
    if x.size != grid.size:
        raise DataFormatError(
            f"{x.size} rows but the grid has {grid.size} nodes (use --resample)", path
        )
    off = np.nonzero(np.abs(x - grid.nodes) > NODE_TOL)[0]
    if off.size:
        raise DataFormatError(
            f"x={x[off[0]]!r} does not match grid node {grid.nodes[off[0]]!r}", path, lines[off[0]]
        )
    return Curve(grid, y)


def write_curve(path: str, curve: Curve) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("x,value\n")
        for x, v in zip(curve.x, curve.values):
            fh.write(f"{fmt(x)},{fmt(v)}\n")


def series_to_csv(series: CoordSeries) -> str:
    buf = io.StringIO()
    n = series.n
    buf.write(",".join(["t"] + [f"z{i + 1}" for i in range(n)]) + "\n")
    for t, z in zip(series.times, series.z):
        buf.write(",".join([fmt(t)] + [fmt(v) for v in z]) + "\n")
    return buf.getvalue()


def write_series(path: str, series: CoordSeries) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(series_to_csv(series))


def read_series(path: str) -> CoordSeries:
    """Read a ``t,z1,...,zn`` CSV; times must be equally spaced within 1e-9."""
    rows = _rows(path, prefix="z")
    next(rows)
    data = list(rows)
    if len(data) < 2:
        raise DataFormatError("need at least two observations", path)
    lines = [ln for ln, _ in data]
    arr = np.array([v for _, v in data])
    t = arr[:, 0]
    steps = np.diff(t)
    delta = steps[0]
    if not delta > 0:
        raise DataFormatError("time step must be positive", path, lines[1])
    off = np.nonzero(np.abs(steps - delta) > STEP_TOL)[0]
    if off.size:
        raise DataFormatError("time step is not constant", path, lines[off[0] + 1])
    return CoordSeries(float(delta), arr[:, 1:], {"source": path})


def write_estimates(path: str, names: Sequence[str], estimate, round0) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("name,estimate,round0_estimate\n")
        for name, e, r in zip(names, estimate, round0):
            fh.write(f"{name},{fmt(e)},{fmt(r)}\n")
