"""Discrete curves on a uniform time-to-maturity grid.

Curves represent elements of the Sobolev space H^1(0, T*) by their nodal
values with a piecewise-linear interpolant in between.  Two structural
operators drive everything downstream: prefix integration (the running
integral from 0) and the transport shift with a right-end clamp, which is
how a curve indexed by time-to-maturity ages.

The module-level ``*_values`` helpers operate on plain ndarrays whose last
axis is the node axis.  They are shared by the ``Curve`` methods and by the
vectorized path stepper so that a single path and a batch of paths go
through bit-identical arithmetic.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "Grid",
    "Curve",
    "integrate_prefix",
    "shift",
    "derivative",
    "h1_norm",
    "sup_norm",
]

# Tolerance (in node units) below which a shift offset is snapped to an
# integer number of nodes, so that dt == dx never falls into the
# interpolating branch through floating-point noise.
_ALIGN_TOL = 1e-9


@dataclass(frozen=True)
class Grid:
    """Uniform grid on [0, horizon] with nodes at k * dx."""

    n_nodes: int
    horizon: float

    def __post_init__(self):
        if self.n_nodes < 3:
            raise ValueError(f"grid needs at least 3 nodes, got {self.n_nodes}")
        if not (self.horizon > 0.0 and np.isfinite(self.horizon)):
            raise ValueError(f"horizon must be positive and finite, got {self.horizon}")

    @property
    def dx(self) -> float:
        return self.horizon / (self.n_nodes - 1)

    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.n_nodes)


class Curve:
    """Nodal values on a :class:`Grid`, read as a piecewise-linear function.

    Instances are immutable: the value array is copied on construction and
    marked read-only, so curves can be shared freely between workers.
    """

    __slots__ = ("grid", "values")

    def __init__(self, grid: Grid, values):
        vals = np.array(values, dtype=np.float64)
        if vals.shape != (grid.n_nodes,):
            raise ValueError(
                f"expected {grid.n_nodes} nodal values, got shape {vals.shape}"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("curve values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", vals)

    def __setattr__(self, name, value):
        raise AttributeError("Curve is immutable")

    def __repr__(self):
        v = self.values
        return (
            f"Curve(n={self.grid.n_nodes}, horizon={self.grid.horizon}, "
            f"values=[{v[0]:.6g} .. {v[-1]:.6g}])"
        )

    def at(self, x: float) -> float:
        """Evaluate the piecewise-linear interpolant at ``x`` in [0, horizon]."""
        return float(interp_values(self.values, x, self.grid))

    @classmethod
    def constant(cls, grid: Grid, value: float) -> "Curve":
        return cls(grid, np.full(grid.n_nodes, float(value)))

    # -- serialization ----------------------------------------------------

    def to_json_dict(self) -> dict:
        return {"horizon": self.grid.horizon, "values": self.values.tolist()}

    @classmethod
    def from_json_dict(cls, payload: dict) -> "Curve":
        values = payload["values"]
        grid = Grid(n_nodes=len(values), horizon=float(payload["horizon"]))
        return cls(grid, values)

    def to_csv(self, path) -> None:
        nodes = self.grid.nodes()
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x", "value"])
            for x, v in zip(nodes, self.values):
                writer.writerow([repr(float(x)), repr(float(v))])

    @classmethod
    def from_csv(cls, path) -> "Curve":
        xs, values = [], []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[:2] != ["x", "value"]:
                raise ValueError(f"unexpected curve CSV header: {header}")
            for row in reader:
                xs.append(float(row[0]))
                values.append(float(row[1]))
        grid = Grid(n_nodes=len(values), horizon=xs[-1])
        return cls(grid, values)

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict()))

    @classmethod
    def from_json(cls, path) -> "Curve":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# Array kernels (last axis = nodes).
# ---------------------------------------------------------------------------


def prefix_integral_values(values: np.ndarray, dx: float) -> np.ndarray:
    """Running trapezoid integral from node 0 along the last axis.

    Exact for the piecewise-linear interpolant the nodal values represent.
    The output has the same shape as the input and starts at 0.
    """
    cells = (values[..., :-1] + values[..., 1:]) * (0.5 * dx)
    out = np.empty_like(values)
    out[..., 0] = 0.0
    np.cumsum(cells, axis=-1, out=out[..., 1:])
    return out


def shift_values(values: np.ndarray, offset_nodes: float) -> np.ndarray:
    """Transport along the node axis by ``offset_nodes`` (>= 0) with clamp.

    Entry k of the result is the interpolant evaluated at node k + offset,
    clamped to the last node: positions past the right end repeat the final
    value exactly.  Integer offsets (within a snapping tolerance) are pure
    index moves with no interpolation.
    """
    if offset_nodes < 0:
        raise ValueError(f"shift offset must be nonnegative, got {offset_nodes}")
    n = values.shape[-1]
    nearest = round(offset_nodes)
    if abs(offset_nodes - nearest) <= _ALIGN_TOL:
        q = min(int(nearest), n - 1)
        out = np.empty_like(values)
        out[..., : n - q] = values[..., q:]
        out[..., n - q :] = values[..., -1:]
        return out
    q = int(np.floor(offset_nodes))
    r = offset_nodes - q
    idx0 = np.minimum(np.arange(n) + q, n - 1)
    idx1 = np.minimum(idx0 + 1, n - 1)
    out = (1.0 - r) * values[..., idx0] + r * values[..., idx1]
    # Clamped region: repeat the right-end value exactly instead of taking
    # a floating-point convex combination of it with itself.
    tail = idx0 >= n - 1
    out[..., tail] = values[..., -1:]
    return out


def derivative_values(values: np.ndarray, dx: float) -> np.ndarray:
    """Central differences inside, one-sided at the ends (exact on linears)."""
    out = np.empty_like(values)
    out[..., 1:-1] = (values[..., 2:] - values[..., :-2]) / (2.0 * dx)
    out[..., 0] = (values[..., 1] - values[..., 0]) / dx
    out[..., -1] = (values[..., -1] - values[..., -2]) / dx
    return out


def h1_norm_values(values: np.ndarray, dx: float) -> np.ndarray:
    """Discrete H^1 norm: trapezoid L^2 norm plus forward-difference slope L^2."""
    sq = values * values
    l2_sq = np.trapezoid(sq, dx=dx, axis=-1)
    diffs = np.diff(values, axis=-1)
    slope_sq = np.sum(diffs * diffs, axis=-1) / dx
    return np.sqrt(l2_sq + slope_sq)


def interp_values(values: np.ndarray, x: float, grid: Grid):
    """Linear interpolation of nodal values at a point of [0, horizon]."""
    if not (-1e-12 <= x <= grid.horizon * (1 + 1e-12)):
        raise ValueError(f"x={x} outside [0, {grid.horizon}]")
    pos = min(max(x, 0.0), grid.horizon) / grid.dx
    i = min(int(np.floor(pos)), grid.n_nodes - 2)
    w = pos - i
    if w <= _ALIGN_TOL:
        return values[..., i]
    if w >= 1.0 - _ALIGN_TOL:
        return values[..., i + 1]
    return (1.0 - w) * values[..., i] + w * values[..., i + 1]


# ---------------------------------------------------------------------------
# Curve-level operations.
# ---------------------------------------------------------------------------


def integrate_prefix(f: Curve) -> Curve:
    """Prefix integral g with g[x] = integral of f from 0 to x; g[0] = 0."""
    return Curve(f.grid, prefix_integral_values(f.values, f.grid.dx))


def shift(f: Curve, t: float) -> Curve:
    """Age the curve by ``t``: result[x] = f[x + t], clamped at the horizon.

    This is the transport semigroup of the model: values roll toward the
    short end and the right end is held at f[horizon].
    """
    if t < 0:
        raise ValueError(f"shift time must be nonnegative, got {t}")
    return Curve(f.grid, shift_values(f.values, t / f.grid.dx))


def derivative(f: Curve) -> Curve:
    return Curve(f.grid, derivative_values(f.values, f.grid.dx))


def h1_norm(f: Curve) -> float:
    return float(h1_norm_values(f.values, f.grid.dx))


def sup_norm(f: Curve) -> float:
    return float(np.max(np.abs(f.values)))
