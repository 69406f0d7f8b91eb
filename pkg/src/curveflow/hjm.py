"""HJM forward-curve dynamics in the Musiela parametrization.

Forward curves evolve as ``dr = mu_ito(r) dt + sum_i sigma_i(r) dW_i`` with
the no-arbitrage drift

    mu_ito(r)(x) = dr/dx + sum_i sigma_i(r)(x) * int_0^x sigma_i(r)(u) du.

The Stratonovich drift subtracts half the Frechet derivative of each factor in
its own direction.  Everything here works on arrays whose last axis is the
maturity grid, with thin :class:`Curve` wrappers on top.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidArgument, NumericalBlowup
from .function_space import Curve, Grid, cumint_values, dx_values

VOL_KINDS = ("constant", "exp_decay", "proportional", "proportional_exp")
SPEC_TAGS = VOL_KINDS + ("custom",)

SigmaFn = Callable[[np.ndarray, Grid], np.ndarray]
FrechetFn = Callable[[np.ndarray, np.ndarray, int, Grid], np.ndarray]


@dataclass(frozen=True, eq=False)
class VolatilitySpec:
    """Volatility fields ``sigma_i(r, .)`` for ``m`` Brownian factors.

    ``sigma_fn(R, grid)`` maps curve samples ``(..., P)`` to ``(..., m, P)``.
    When ``state_free`` is set the fields do not depend on ``r`` and
    ``sigma_fn`` may return a plain ``(m, P)`` array.  ``frechet_fn(R, H, i,
    grid)`` is the analytic directional derivative of factor ``i``.
    """

    m: int
    sigma_fn: SigmaFn
    theta: np.ndarray = ()
    names: tuple[str, ...] = ()
    frechet_fn: FrechetFn | None = None
    spec_tag: str = "custom"
    state_free: bool = False

    def __post_init__(self):
        if self.m < 1:
            raise InvalidArgument("need at least one Brownian factor")
        if self.spec_tag not in SPEC_TAGS:
            raise InvalidArgument(f"unknown volatility tag {self.spec_tag!r}")
        theta = np.array(self.theta, dtype=float)
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    def sigma_values(self, R: np.ndarray, grid: Grid) -> np.ndarray:
        """``(..., P) -> (..., m, P)``; ``(m, P)`` for state-free specs."""
        out = np.asarray(self.sigma_fn(R, grid), dtype=float)
        if not self.state_free and out.shape != R.shape[:-1] + (self.m, grid.size):
            raise InvalidArgument(f"sigma_fn returned shape {out.shape}")
        return out

    def sigma(self, r: Curve, i: int) -> Curve:
        return Curve(r.grid, self.sigma_values(r.values, r.grid)[..., i, :])

    def frechet_values(self, R: np.ndarray, H: np.ndarray, i: int, grid: Grid) -> np.ndarray:
        """Directional derivative of factor ``i`` at ``R`` in direction ``H``."""
        if self.state_free:
            return np.zeros(np.broadcast_shapes(R.shape, H.shape))
        if self.frechet_fn is not None:
            return self.frechet_fn(R, H, i, grid)
        q = grid.quad_weights
        r_norm = np.sqrt(np.sum(R * R * q, axis=-1, keepdims=True))
        h_norm = np.sqrt(np.sum(H * H * q, axis=-1, keepdims=True))
        eps = 1e-5 * (1.0 + r_norm) / (1.0 + h_norm)
        up = self.sigma_values(R + eps * H, grid)[..., i, :]
        dn = self.sigma_values(R - eps * H, grid)[..., i, :]
        return (up - dn) / (2.0 * eps)

    def without_analytic_frechet(self) -> "VolatilitySpec":
        return VolatilitySpec(
            self.m, self.sigma_fn, self.theta, self.names, None, self.spec_tag, self.state_free
        )


def make_vol(kind: str, sigma0, decay: float | None = None) -> VolatilitySpec:
    """Built-in volatility catalog.

    ``sigma0`` is a scalar (one factor) or one level per factor.  Parameter
    vector layout: ``sigma0_1..sigma0_m`` followed by ``decay`` for the
    ``*_exp``/``exp_decay`` kinds.
    """
    s = np.atleast_1d(np.asarray(sigma0, dtype=float))
    if s.ndim != 1 or s.size == 0 or not np.all(np.isfinite(s)):
        raise InvalidArgument("sigma0 must be a finite scalar or 1-d sequence")
    m = s.size
    names = tuple(f"sigma0_{i + 1}" for i in range(m)) if m > 1 else ("sigma0",)
    uses_decay = kind in ("exp_decay", "proportional_exp")
    if uses_decay:
        if decay is None or not np.isfinite(decay) or decay <= 0:
            raise InvalidArgument(f"{kind} volatility needs decay > 0")
        theta = np.append(s, decay)
        names = names + ("decay",)
    else:
        theta = s.copy()
    col = s[:, None]

    if kind == "constant":
        def sigma_fn(R, grid):
            return np.broadcast_to(col, (m, grid.size))

        return VolatilitySpec(m, sigma_fn, theta, names, None, kind, state_free=True)

    if kind == "exp_decay":
        def sigma_fn(R, grid):
            return col * np.exp(-decay * grid.nodes)

        return VolatilitySpec(m, sigma_fn, theta, names, None, kind, state_free=True)

    if kind == "proportional":
        def sigma_fn(R, grid):
            return col * R[..., None, :]

        def frechet_fn(R, H, i, grid):
            return s[i] * np.broadcast_to(H, np.broadcast_shapes(R.shape, H.shape))

        return VolatilitySpec(m, sigma_fn, theta, names, frechet_fn, kind)

    if kind == "proportional_exp":
        def sigma_fn(R, grid):
            return col * (R * np.exp(-decay * grid.nodes))[..., None, :]

        def frechet_fn(R, H, i, grid):
            out = s[i] * H * np.exp(-decay * grid.nodes)
            return np.broadcast_to(out, np.broadcast_shapes(R.shape, out.shape))

        return VolatilitySpec(m, sigma_fn, theta, names, frechet_fn, kind)

    raise InvalidArgument(f"unknown volatility kind {kind!r}; expected one of {VOL_KINDS}")


def vol_from_theta(kind: str, m: int, theta: Sequence[float]) -> VolatilitySpec:
    """Inverse of the ``make_vol`` parameter layout."""
    theta = np.asarray(theta, dtype=float)
    uses_decay = kind in ("exp_decay", "proportional_exp")
    expected = m + (1 if uses_decay else 0)
    if theta.shape != (expected,):
        raise InvalidArgument(f"{kind} with {m} factors takes {expected} parameters")
    sigma0 = theta[:m] if m > 1 else theta[0]
    return make_vol(kind, sigma0, theta[m] if uses_decay else None)


# ------------------------------------------------------------------ drift terms


def hjm_vol_term(R: np.ndarray, vol: VolatilitySpec, grid: Grid) -> np.ndarray:
    """``sum_i sigma_i * int_0^x sigma_i``; ``(P,)`` for state-free specs."""
    sig = vol.sigma_values(R, grid)
    return np.sum(sig * cumint_values(sig, grid), axis=-2)


def strat_correction_values(R: np.ndarray, vol: VolatilitySpec, grid: Grid) -> np.ndarray:
    """``(1/2) sum_i sigma_i'(r)[sigma_i(r)]``."""
    if vol.state_free:
        return np.zeros(grid.size)
    sig = vol.sigma_values(R, grid)
    total = vol.frechet_values(R, sig[..., 0, :], 0, grid)
    for i in range(1, vol.m):
        total = total + vol.frechet_values(R, sig[..., i, :], i, grid)
    return 0.5 * total


def ito_drift_values(R: np.ndarray, vol: VolatilitySpec, grid: Grid) -> np.ndarray:
    return dx_values(R, grid) + hjm_vol_term(R, vol, grid)


def strat_drift_values(R: np.ndarray, vol: VolatilitySpec, grid: Grid) -> np.ndarray:
    return ito_drift_values(R, vol, grid) - strat_correction_values(R, vol, grid)


def ito_drift(r: Curve, vol: VolatilitySpec) -> Curve:
    """No-arbitrage Ito drift of the forward curve ``r``."""
    return Curve(r.grid, ito_drift_values(r.values, vol, r.grid))


def frechet_directional(vol: VolatilitySpec, r: Curve, h: Curve, i: int) -> Curve:
    r.grid.check(h.grid)
    return Curve(r.grid, vol.frechet_values(r.values, h.values, i, r.grid))


def strat_correction(vol: VolatilitySpec, r: Curve) -> Curve:
    return Curve(r.grid, strat_correction_values(r.values, vol, r.grid))


def strat_drift(r: Curve, vol: VolatilitySpec) -> Curve:
    """Drift of the Stratonovich form: Ito drift minus the Frechet correction."""
    return Curve(r.grid, strat_drift_values(r.values, vol, r.grid))


# ------------------------------------------------------------------- simulation


def gaussian_increments(
    seed: int, path_id: int, steps: int, m: int, dt: float
) -> np.ndarray:
    """Brownian increments ``(steps, m)`` with variance ``dt``.

    Drawn from a Philox counter-based stream keyed by ``(seed, path_id)``;
    entry ``[j, i]`` is the increment of factor ``i`` over step ``j``.
    """
    if seed < 0 or path_id < 0:
        raise InvalidArgument("seed and path id must be non-negative integers")
    bitgen = np.random.Philox(key=np.array([seed, path_id], dtype=np.uint64))
    z = np.random.Generator(bitgen).standard_normal((steps, m))
    return np.sqrt(dt) * z


@dataclass(frozen=True, eq=False)
class HjmPath:
    """Forward curves on a fixed time grid plus the increments that drove them."""

    grid: Grid
    times: np.ndarray
    values: np.ndarray  # (K + 1, P)
    noise: np.ndarray  # (K, m)

    @property
    def curves(self) -> list[Curve]:
        return [Curve(self.grid, v) for v in self.values]

    def curve(self, j: int) -> Curve:
        return Curve(self.grid, self.values[j])


def simulate_hjm(
    r0: Curve,
    vol: VolatilitySpec,
    dt: float,
    k: int,
    seed: int = 0,
    *,
    path_id: int = 0,
    noise: np.ndarray | None = None,
    form: str = "ito",
) -> HjmPath:
    """Explicit Euler method-of-lines simulation of the forward curve.

    ``form="stratonovich"`` steps with the Stratonovich drift instead of the
    Ito drift (the one-step discretization used by the orthogonality check).
    Explicit ``noise`` of shape ``(k, m)`` overrides the seeded stream.
    """
    if not dt > 0 or k < 1:
        raise InvalidArgument("need dt > 0 and at least one step")
    if form not in ("ito", "stratonovich"):
        raise InvalidArgument(f"unknown drift form {form!r}")
    grid = r0.grid
    if noise is None:
        noise = gaussian_increments(seed, path_id, k, vol.m, dt)
    noise = np.asarray(noise, dtype=float)
    if noise.shape != (k, vol.m):
        raise InvalidArgument(f"noise must have shape {(k, vol.m)}, got {noise.shape}")
    drift = ito_drift_values if form == "ito" else strat_drift_values
    values = np.empty((k + 1, grid.size))
    values[0] = r0.values
    r = r0.values
    for j in range(k):
        with np.errstate(over="ignore", invalid="ignore"):  # blow-up is reported below
            sig = vol.sigma_values(r, grid)
            r = r + drift(r, vol, grid) * dt + noise[j] @ sig
        if not np.all(np.isfinite(r)):
            raise NumericalBlowup("forward curve became non-finite", j + 1)
        values[j + 1] = r
    times = dt * np.arange(k + 1)
    return HjmPath(grid, times, values, noise)
