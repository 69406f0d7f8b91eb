"""Discretized weighted Hilbert space of curves on ``[0, T0]``.

Curves are nodal samples on a shared :class:`Grid`.  Integrals are evaluated
with the grid's quadrature weights, so the weighted inner product

    <u, v> = int_0^T0 u(x) v(x) w(x) dx

reduces to ``sum(u * v * w * quad_weights)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .errors import IncompatibleGrid, InvalidArgument

TRAPEZOID = "trapezoid-uniform"
GAUSS4 = "composite-gauss-4"
RULES = (TRAPEZOID, GAUSS4)

WEIGHT_KINDS = ("constant", "exp_increasing", "exp_decreasing", "custom")

# 4-point Gauss-Lobatto rule on [-1, 1]; keeps panel endpoints as nodes.
_LOBATTO_NODES = np.array([-1.0, -1.0 / np.sqrt(5.0), 1.0 / np.sqrt(5.0), 1.0])
_LOBATTO_WEIGHTS = np.array([1.0 / 6.0, 5.0 / 6.0, 5.0 / 6.0, 1.0 / 6.0])


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Grid:
    """Quadrature nodes over ``[0, t_max]``."""

    t_max: float
    nodes: np.ndarray
    quad_weights: np.ndarray
    rule: str = TRAPEZOID

    def __post_init__(self):
        object.__setattr__(self, "nodes", _frozen(self.nodes))
        object.__setattr__(self, "quad_weights", _frozen(self.quad_weights))
        x, q = self.nodes, self.quad_weights
        if x.ndim != 1 or x.shape != q.shape or x.size < 2:
            raise InvalidArgument("nodes and quad_weights must be 1-d arrays of equal length")
        if np.any(np.diff(x) <= 0):
            raise InvalidArgument("grid nodes must be strictly increasing")
        if x[0] != 0.0 or x[-1] != self.t_max:
            raise InvalidArgument("grid must start at 0 and end at t_max")
        if np.any(q <= 0):
            raise InvalidArgument("quadrature weights must be positive")

    @property
    def size(self) -> int:
        return self.nodes.size

    def same_as(self, other: "Grid") -> bool:
        return self is other or (
            self.t_max == other.t_max
            and np.array_equal(self.nodes, other.nodes)
            and np.array_equal(self.quad_weights, other.quad_weights)
        )

    def check(self, other: "Grid") -> None:
        if not self.same_as(other):
            raise IncompatibleGrid("curves live on different grids")

    def curve(self, values) -> "Curve":
        """Wrap samples (array or callable of x) as a curve on this grid."""
        if callable(values):
            values = values(self.nodes)
        values = np.broadcast_to(np.asarray(values, dtype=float), self.nodes.shape)
        return Curve(self, values)

    def __repr__(self) -> str:
        return f"Grid(t_max={self.t_max}, p={self.size}, rule={self.rule!r})"


def make_grid(t_max: float, p: int, rule: str = TRAPEZOID) -> Grid:
    """Build a quadrature grid on ``[0, t_max]`` with ``p`` nodes.

    ``composite-gauss-4`` uses panels of the 4-point Gauss-Lobatto rule, so
    ``p - 1`` must be a multiple of 3.
    """
    if not np.isfinite(t_max) or t_max <= 0:
        raise InvalidArgument(f"t_max must be positive, got {t_max}")
    if int(p) != p or p < 4:
        raise InvalidArgument(f"need at least 4 nodes, got {p}")
    p = int(p)
    if rule == TRAPEZOID:
        nodes = np.linspace(0.0, t_max, p)
        h = t_max / (p - 1)
        weights = np.full(p, h)
        weights[0] = weights[-1] = 0.5 * h
    elif rule == GAUSS4:
        if (p - 1) % 3:
            raise InvalidArgument(f"{GAUSS4} needs p = 3k + 1 nodes, got {p}")
        panels = (p - 1) // 3
        edges = np.linspace(0.0, t_max, panels + 1)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[:-1] + edges[1:])
        local = mid[:, None] + half[:, None] * _LOBATTO_NODES[None, :]
        local_w = half[:, None] * _LOBATTO_WEIGHTS[None, :]
        nodes = np.empty(p)
        weights = np.zeros(p)
        for j in range(panels):
            nodes[3 * j : 3 * j + 4] = local[j]
            weights[3 * j : 3 * j + 4] += local_w[j]
        nodes[0], nodes[-1] = 0.0, t_max
    else:
        raise InvalidArgument(f"unknown quadrature rule {rule!r}; expected one of {RULES}")
    return Grid(float(t_max), nodes, weights, rule)


@dataclass(frozen=True, eq=False)
class Curve:
    """Real samples of a function at the nodes of ``grid``."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = _frozen(self.values)
        if v.shape != self.grid.nodes.shape:
            raise InvalidArgument(
                f"curve has {v.size} samples but grid has {self.grid.size} nodes"
            )
        if not np.all(np.isfinite(v)):
            raise InvalidArgument("curve values must be finite")
        object.__setattr__(self, "values", v)

    @property
    def x(self) -> np.ndarray:
        return self.grid.nodes

    def __add__(self, other: "Curve") -> "Curve":
        return curve_axpy(1.0, self, other)

    def __sub__(self, other: "Curve") -> "Curve":
        return curve_axpy(-1.0, other, self)

    def __mul__(self, a: float) -> "Curve":
        return Curve(self.grid, a * self.values)

    __rmul__ = __mul__

    def __neg__(self) -> "Curve":
        return Curve(self.grid, -self.values)


@dataclass(frozen=True, eq=False)
class WeightFunction:
    """Positive bounded weight ``w(x)`` sampled on a grid."""

    grid: Grid
    values: np.ndarray
    kind: str = "custom"
    _quad: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        v = _frozen(np.broadcast_to(np.asarray(self.values, dtype=float), self.grid.nodes.shape))
        if not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise InvalidArgument("weight values must be finite and positive")
        if self.kind not in WEIGHT_KINDS:
            raise InvalidArgument(f"unknown weight kind {self.kind!r}")
        object.__setattr__(self, "values", v)
        # w * quadrature weight, the only form the inner product needs
        object.__setattr__(self, "_quad", _frozen(v * self.grid.quad_weights))

    @property
    def quad(self) -> np.ndarray:
        return self._quad


def make_weight(grid: Grid, kind: str = "constant", gamma: float | None = None) -> WeightFunction:
    """Weight presets: ``constant`` (1), ``exp_increasing`` (e^{gx}), ``exp_decreasing`` (e^{-gx})."""
    if kind == "constant":
        return WeightFunction(grid, np.ones(grid.size), "constant")
    if kind in ("exp_increasing", "exp_decreasing"):
        if gamma is None or not gamma > 0:
            raise InvalidArgument(f"{kind} weight needs gamma > 0")
        sign = 1.0 if kind == "exp_increasing" else -1.0
        return WeightFunction(grid, np.exp(sign * gamma * grid.nodes), kind)
    raise InvalidArgument(f"unknown weight preset {kind!r}")


def unit_weight(grid: Grid) -> WeightFunction:
    return make_weight(grid, "constant")


def _weight_quad(grid: Grid, w: WeightFunction | None) -> np.ndarray:
    if w is None:
        return grid.quad_weights
    grid.check(w.grid)
    return w.quad


def inner_product(u: Curve, v: Curve, w: WeightFunction | None = None) -> float:
    """Quadrature approximation of ``int u v w dx``; ``w=None`` means w = 1."""
    u.grid.check(v.grid)
    # u*v first: elementwise products commute exactly, so the result is symmetric
    return float(np.dot(u.values * v.values, _weight_quad(u.grid, w)))


def norm_h(v: Curve, w: WeightFunction | None = None) -> float:
    """``sqrt(<v, v>_w)``, rescaled by ``max |v|`` so tiny curves do not underflow."""
    scale = float(np.max(np.abs(v.values)))
    if scale == 0.0 or not np.isfinite(scale):
        return float(np.sqrt(inner_product(v, v, w)))
    u = v.values / scale
    return scale * float(np.sqrt(np.dot(u * u, _weight_quad(v.grid, w))))


def derivative_x(v: Curve) -> Curve:
    """Second-order finite differences; one-sided at both endpoints."""
    return Curve(v.grid, dx_values(v.values, v.grid))


def antiderivative(v: Curve) -> Curve:
    """Cumulative trapezoid integral from 0."""
    return Curve(v.grid, cumint_values(v.values, v.grid))


def dx_values(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Array form of :func:`derivative_x`, differentiating along the last axis."""
    if grid.rule != TRAPEZOID:
        return np.gradient(values, grid.nodes, axis=-1, edge_order=2)
    # written in differences so that constants give exact zeros
    f = np.asarray(values, dtype=float)
    h = grid.t_max / (grid.size - 1)
    out = np.empty(f.shape)
    out[..., 1:-1] = (f[..., 2:] - f[..., :-2]) / (2.0 * h)
    out[..., 0] = (4.0 * (f[..., 1] - f[..., 0]) - (f[..., 2] - f[..., 0])) / (2.0 * h)
    out[..., -1] = ((f[..., -3] - f[..., -1]) - 4.0 * (f[..., -2] - f[..., -1])) / (2.0 * h)
    return out


def cumint_values(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Array form of :func:`antiderivative` along the last axis."""
    return cumulative_trapezoid(values, grid.nodes, axis=-1, initial=0.0)


def curve_axpy(a: float, x: Curve, y: Curve) -> Curve:
    x.grid.check(y.grid)
    return Curve(y.grid, a * x.values + y.values)


def pointwise_mul(u: Curve, v: Curve) -> Curve:
    u.grid.check(v.grid)
    return Curve(u.grid, u.values * v.values)
