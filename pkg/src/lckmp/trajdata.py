"""Demonstration containers, CSV ingestion and time grids.

The demonstration CSV layout is::

    demo_id,t,x1,...,xO[,xd1,...,xdO]

with a mandatory header row. Rows sharing a ``demo_id`` form one
trajectory and must be sorted by time.
"""

import csv
import re
from dataclasses import dataclass

import numpy as np

from ._validation import as_float_array, check_finite, check_increasing
from .exceptions import DataFileError, ValidationError

_STAGE = "ingest"


def _frozen(arr):
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Strictly increasing sequence of at least two finite times (seconds)."""

    points: np.ndarray

    def __post_init__(self):
        pts = as_float_array(self.points, "grid points", ndim=1, stage=_STAGE)
        if pts.size < 2:
            raise ValidationError("a time grid needs at least 2 points", _STAGE)
        check_finite(pts, "grid points", _STAGE)
        check_increasing(pts, "grid points", stage=_STAGE)
        object.__setattr__(self, "points", _frozen(pts))

    def __len__(self):
        return self.points.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.points, dtype=dtype)


@dataclass(frozen=True, eq=False)
class DemoSet:
    """M demonstrations sharing length N and output dimension O.

    Attributes
    ----------
    times : ndarray, shape (M, N)
    xi : ndarray, shape (M, N, O)
        Positions.
    xi_dot : ndarray, shape (M, N, O)
        First derivatives of ``xi``.
    """

    times: np.ndarray
    xi: np.ndarray
    xi_dot: np.ndarray

    def __post_init__(self):
        self.validate()
        for name in ("times", "xi", "xi_dot"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    def validate(self):
        times = as_float_array(self.times, "times", ndim=2, stage=_STAGE)
        xi = as_float_array(self.xi, "xi", ndim=3, stage=_STAGE)
        xi_dot = as_float_array(self.xi_dot, "xi_dot", ndim=3, stage=_STAGE)
        m, n = times.shape
        if m < 1 or n < 1:
            raise ValidationError("a demonstration set cannot be empty", _STAGE)
        if xi.shape[:2] != (m, n) or xi_dot.shape != xi.shape:
            raise ValidationError(
                f"ragged demonstrations: times {times.shape}, xi {xi.shape}, "
                f"xi_dot {xi_dot.shape}",
                _STAGE,
            )
        if xi.shape[2] < 1:
            raise ValidationError("output dimension must be positive", _STAGE)
        for arr, name in ((times, "times"), (xi, "xi"), (xi_dot, "xi_dot")):
            check_finite(arr, name, _STAGE)
        for k in range(m):
            check_increasing(times[k], f"timestamps of demo {k}", stage=_STAGE)
        return self

    @property
    def n_demos(self):
        return self.times.shape[0]

    @property
    def length(self):
        return self.times.shape[1]

    @property
    def output_dim(self):
        return self.xi.shape[2]

    def joint_samples(self):
        """Stack every record as a row ``[t, xi, xi_dot]`` of length ``1 + 2O``."""
        m, n, o = self.xi.shape
        return np.column_stack(
            [self.times.reshape(-1), self.xi.reshape(m * n, o), self.xi_dot.reshape(m * n, o)]
        )


def numerical_derivative(times, positions):
    """Per-point derivative of a sampled trajectory.

    Central differences at interior points and first-order one-sided
    differences at both endpoints, so affine signals are differentiated
    exactly everywhere.

    Parameters
    ----------
    times : array_like, shape (N,)
    positions : array_like, shape (N,) or (N, O)

    Returns
    -------
    ndarray with the shape of ``positions``.
    """
    t = as_float_array(times, "times", ndim=1, stage=_STAGE)
    x = as_float_array(positions, "positions", stage=_STAGE)
    if t.size < 2:
        raise ValidationError("numerical_derivative needs at least 2 points", _STAGE)
    if x.shape[0] != t.size:
        raise ValidationError("times and positions differ in length", _STAGE)
    check_increasing(t, stage=_STAGE)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    d = np.empty_like(x)
    d[0] = (x[1] - x[0]) / (t[1] - t[0])
    d[-1] = (x[-1] - x[-2]) / (t[-1] - t[-2])
    if t.size > 2:
        d[1:-1] = (x[2:] - x[:-2]) / (t[2:] - t[:-2])[:, None]
    return d[:, 0] if squeeze else d


def uniform_grid(t_start, t_end, n):
    """``n`` equally spaced times from ``t_start`` to ``t_end`` inclusive."""
    t_start, t_end = float(t_start), float(t_end)
    if int(n) != n or n < 2:
        raise ValidationError(f"grid size must be an integer >= 2, got {n}", _STAGE)
    if not (np.isfinite(t_start) and np.isfinite(t_end)) or t_end <= t_start:
        raise ValidationError(f"invalid grid range [{t_start}, {t_end}]", _STAGE)
    return TimeGrid(np.linspace(t_start, t_end, int(n)))


def resample(times, values, grid):
    """Linearly interpolate each column of ``values`` onto ``grid``."""
    values = np.asarray(values, dtype=float)
    pts = np.asarray(grid, dtype=float)
    return np.column_stack([np.interp(pts, times, values[:, j]) for j in range(values.shape[1])])


_POS_COL = re.compile(r"^x(\d+)$")
_VEL_COL = re.compile(r"^xd(\d+)$")


def _parse_header(header, has_derivatives):
    cols = [h.strip() for h in header]
    if len(cols) < 3 or cols[0] != "demo_id" or cols[1] != "t":
        raise ValidationError(
            "line 1: header must start with 'demo_id,t' followed by x1..xO", _STAGE
        )
    pos = [i for i, c in enumerate(cols) if _POS_COL.match(c)]
    vel = [i for i, c in enumerate(cols) if _VEL_COL.match(c)]
    o = len(pos)
    if o == 0 or [cols[i] for i in pos] != [f"x{k + 1}" for k in range(o)]:
        raise ValidationError("line 1: position columns must be named x1..xO in order", _STAGE)
    unknown = set(range(len(cols))) - set(pos) - set(vel) - {0, 1}
    if unknown:
        j = min(unknown)
        raise ValidationError(f"line 1, column {j + 1}: unexpected column {cols[j]!r}", _STAGE)
    if has_derivatives:
        if [cols[i] for i in vel] != [f"xd{k + 1}" for k in range(o)]:
            raise ValidationError(
                f"line 1: has_derivatives requires columns xd1..xd{o}", _STAGE
            )
    return pos, vel


def load_demos(path, has_derivatives=False, resample_n=None):
    """Read a demonstration CSV into a validated :class:`DemoSet`.

    Parameters
    ----------
    path : str or path-like
    has_derivatives : bool
        Use the ``xd*`` columns as velocities. Otherwise velocities are
        estimated with :func:`numerical_derivative`.
    resample_n : int, optional
        Linearly resample demos of differing lengths onto a shared grid of
        this many points spanning the common time range.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataFileError(f"cannot read {path}: {exc}", _STAGE) from exc
    if not rows:
        raise ValidationError(f"{path}: empty file", _STAGE)
    pos_cols, vel_cols = _parse_header(rows[0], has_derivatives)
    width = len(rows[0])

    order, groups = [], {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != width:
            raise ValidationError(
                f"line {lineno}: expected {width} columns, found {len(row)}", _STAGE
            )
        values = []
        for j, cell in enumerate(row[1:], start=2):
            try:
                values.append(float(cell))
            except ValueError:
                raise ValidationError(
                    f"line {lineno}, column {j}: not a number: {cell!r}", _STAGE
                ) from None
        demo_id = row[0].strip()
        if demo_id not in groups:
            order.append(demo_id)
            groups[demo_id] = []
        groups[demo_id].append((lineno, values))

    if not order:
        raise ValidationError(f"{path}: no data rows", _STAGE)

    demos = []
    for demo_id in order:
        recs = groups[demo_id]
        linenos = [r[0] for r in recs]
        arr = np.array([r[1] for r in recs])
        t = arr[:, 0]
        bad = np.flatnonzero(np.diff(t) <= 0)
        if bad.size:
            raise ValidationError(
                f"line {linenos[bad[0] + 1]}, column 2: timestamps of demo "
                f"{demo_id!r} are not strictly increasing",
                _STAGE,
            )
        if not np.all(np.isfinite(arr)):
            i, j = np.argwhere(~np.isfinite(arr))[0]
            raise ValidationError(f"line {linenos[i]}, column {j + 2}: non-finite value", _STAGE)
        x = arr[:, [c - 1 for c in pos_cols]]
        xd = arr[:, [c - 1 for c in vel_cols]] if has_derivatives else None
        demos.append((demo_id, t, x, xd))

    lengths = {len(d[1]) for d in demos}
    if len(lengths) > 1 and resample_n is None:
        detail = ", ".join(f"{d[0]!r}: {len(d[1])}" for d in demos)
        raise ValidationError(f"ragged trajectories (rows per demo: {detail})", _STAGE)

    if resample_n is not None:
        grid = uniform_grid(max(d[1][0] for d in demos), min(d[1][-1] for d in demos), resample_n)
        demos = [
            (
                did,
                grid.points,
                resample(t, x, grid),
                None if xd is None else resample(t, xd, grid),
            )
            for did, t, x, xd in demos
        ]

    times = np.array([d[1] for d in demos])
    xi = np.array([d[2] for d in demos])
    if has_derivatives:
        xi_dot = np.array([d[3] for d in demos])
    else:
        if times.shape[1] < 2:
            raise ValidationError("derivative estimation needs at least 2 rows per demo", _STAGE)
        xi_dot = np.array([numerical_derivative(t, x) for t, x in zip(times, xi)])
    return DemoSet(times, xi, xi_dot)


def write_demos(demos, path):
    """Write a :class:`DemoSet` in the CSV layout, velocities included."""
    o = demos.output_dim
    header = ["demo_id", "t"] + [f"x{k + 1}" for k in range(o)] + [f"xd{k + 1}" for k in range(o)]
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for m in range(demos.n_demos):
                for n in range(demos.length):
                    row = [demos.times[m, n], *demos.xi[m, n], *demos.xi_dot[m, n]]
                    writer.writerow([str(m)] + [repr(float(v)) for v in row])
    except OSError as exc:
        raise DataFileError(f"cannot write {path}: {exc}", _STAGE) from exc
