"""Coordinate dynamics of the forward curve projected onto a curve family.

For a family ``G`` the coordinates follow the Stratonovich SDE

    dz = A(z) dt + B(z) o dW,
    A(z) = Lambda^{-1} <mu(G(z)), dG/dz^j>,
    B(z)[:, l] = Lambda^{-1} <sigma_l(G(z)), dG/dz^j>,

where ``mu`` is the Stratonovich HJM drift.  The estimation-facing Ito form
adds ``(1/2) sum_l (dB^l/dz) B^l`` to the drift.

Coefficient functions accept one coordinate vector ``(n,)`` or a batch
``(K, n)`` and return matching shapes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import InvalidArgument, NumericalBlowup
from .function_space import Curve, Grid, WeightFunction, dx_values, norm_h, inner_product
from .hjm import (
    HjmPath,
    VolatilitySpec,
    gaussian_increments,
    hjm_vol_term,
    simulate_hjm,
    strat_correction_values,
    strat_drift_values,
)
from .manifold import ManifoldFamily, TangentFrame, fd_step, tangent_frame

SCHEMES = ("euler_ito", "heun_strat")


@dataclass(frozen=True, eq=False)
class CoordSDE:
    fam: ManifoldFamily
    vol: VolatilitySpec
    grid: Grid
    w: WeightFunction | None = None

    @property
    def n(self) -> int:
        return self.fam.n

    @property
    def m(self) -> int:
        return self.vol.m

    @cached_property
    def _shared_frame(self) -> TangentFrame | None:
        if not self.fam.is_affine:
            return None
        return tangent_frame(self.fam, np.zeros(self.n), self.grid, self.w)

    @property
    def diffusion_is_constant(self) -> bool:
        """True when ``B`` cannot depend on ``z`` (affine family, r-free volatility)."""
        return self.fam.is_affine and self.vol.state_free

    def frame(self, Z: np.ndarray) -> TangentFrame:
        if self._shared_frame is not None:
            return self._shared_frame
        return tangent_frame(self.fam, Z, self.grid, self.w)

    def with_vol(self, vol: VolatilitySpec) -> "CoordSDE":
        """Same geometry, new volatility; reuses the cached affine frame."""
        out = CoordSDE(self.fam, vol, self.grid, self.w)
        if "_shared_frame" in self.__dict__:
            out.__dict__["_shared_frame"] = self.__dict__["_shared_frame"]
        return out


def _batch(z) -> tuple[np.ndarray, bool]:
    z = np.asarray(z, dtype=float)
    return np.atleast_2d(z), z.ndim == 1


def transport_coeff(sde: CoordSDE, Z: np.ndarray, frame: TangentFrame | None = None) -> np.ndarray:
    """Projected ``d/dx G(z)``: the volatility-free part of ``A`` for a ``(K, n)`` batch."""
    frame = frame or sde.frame(Z)
    R = sde.fam.values(Z, sde.grid)
    return frame.coords(dx_values(R, sde.grid))


def _vol_drift(sde: CoordSDE, Z: np.ndarray, frame: TangentFrame) -> np.ndarray:
    """Projected ``sum sigma int sigma - (1/2) sigma' sigma`` for a batch."""
    vol, grid = sde.vol, sde.grid
    if vol.state_free:
        term = hjm_vol_term(np.zeros(grid.size), vol, grid)
        if frame.shared:
            return np.broadcast_to(frame.coords(term), Z.shape)
        return frame.coords(np.broadcast_to(term, (Z.shape[0], grid.size)))
    R = sde.fam.values(Z, grid)
    term = hjm_vol_term(R, vol, grid) - strat_correction_values(R, vol, grid)
    return frame.coords(term)


def _diffusion(sde: CoordSDE, Z: np.ndarray, frame: TangentFrame) -> np.ndarray:
    """``B`` for a ``(K, n)`` batch, shape ``(K, n, m)``."""
    vol, grid = sde.vol, sde.grid
    K = Z.shape[0]
    if vol.state_free:
        sig = vol.sigma_values(np.zeros(grid.size), grid)  # (m, P)
        if frame.shared:
            B = frame.coords(sig).T  # (n, m)
            return np.broadcast_to(B, (K, sde.n, sde.m))
        sig = np.broadcast_to(sig, (K,) + sig.shape)
    else:
        sig = vol.sigma_values(sde.fam.values(Z, grid), grid)  # (K, m, P)
    return np.swapaxes(frame.coords(sig), -1, -2)


def _correction(sde: CoordSDE, Z: np.ndarray, B: np.ndarray) -> np.ndarray:
    """``(1/2) sum_l J_l B^l`` with ``J_l`` the central-difference Jacobian of column ``l``."""
    K, n = Z.shape
    if sde.diffusion_is_constant:
        return np.zeros((K, n))
    h = fd_step(Z)
    eye = np.eye(n)
    up = (Z[:, None, :] + h[:, :, None] * eye).reshape(K * n, n)
    dn = (Z[:, None, :] - h[:, :, None] * eye).reshape(K * n, n)
    probes = np.concatenate([up, dn])
    Bp = _diffusion(sde, probes, sde.frame(probes))
    # dB[k, j] = dB/dz^j at point k, shape (K, n_j, n_i, m)
    dB = (Bp[: K * n] - Bp[K * n :]).reshape(K, n, n, sde.m) / (2.0 * h[:, :, None, None])
    return 0.5 * np.einsum("kjil,kjl->ki", dB, B)


def coefficients(
    sde: CoordSDE,
    z,
    *,
    ito: bool = True,
    transport: np.ndarray | None = None,
    frame: TangentFrame | None = None,
):
    """Drift and diffusion at ``z``.

    Returns ``(drift, B)`` where ``drift`` is ``A + ito_correction`` when
    ``ito`` is set and plain ``A`` otherwise.  ``transport`` and ``frame`` may
    carry precomputed :func:`transport_coeff` / tangent frame for the same batch.
    """
    Z, single = _batch(z)
    frame = frame or sde.frame(Z)
    if transport is None:
        transport = transport_coeff(sde, Z, frame)
    A = transport + _vol_drift(sde, Z, frame)
    B = _diffusion(sde, Z, frame)
    if ito:
        A = A + _correction(sde, Z, B)
    if single:
        return A[0], B[0]
    return A, B


def drift_coeff(sde: CoordSDE, z) -> np.ndarray:
    """Stratonovich drift ``A(z)`` of the coordinates."""
    return coefficients(sde, z, ito=False)[0]


def diffusion_coeff(sde: CoordSDE, z) -> np.ndarray:
    """Diffusion matrix ``B(z)``, one column per Brownian factor."""
    Z, single = _batch(z)
    B = _diffusion(sde, Z, sde.frame(Z))
    return B[0] if single else np.asarray(B)


def ito_correction(sde: CoordSDE, z) -> np.ndarray:
    Z, single = _batch(z)
    B = _diffusion(sde, Z, sde.frame(Z))
    corr = _correction(sde, Z, B)
    return corr[0] if single else corr


def ito_drift_coeff(sde: CoordSDE, z) -> np.ndarray:
    """``A(z) + ito_correction(z)``."""
    return coefficients(sde, z, ito=True)[0]


def step_euler_ito(sde: CoordSDE, z, delta: float, eps) -> np.ndarray:
    """One Euler step of the Ito-form coordinate SDE."""
    z = np.asarray(z, dtype=float)
    drift, B = coefficients(sde, z, ito=True)
    return z + drift * delta + np.einsum("...im,...m->...i", B, np.asarray(eps, dtype=float))


def step_heun_strat(sde: CoordSDE, z, delta: float, eps) -> np.ndarray:
    """Stratonovich Heun predictor-corrector step."""
    z = np.asarray(z, dtype=float)
    eps = np.asarray(eps, dtype=float)
    A0, B0 = coefficients(sde, z, ito=False)
    pred = z + A0 * delta + np.einsum("...im,...m->...i", B0, eps)
    sde.fam.check(pred)
    A1, B1 = coefficients(sde, pred, ito=False)
    return (
        z
        + 0.5 * (A0 + A1) * delta
        + np.einsum("...im,...m->...i", 0.5 * (B0 + B1), eps)
    )


@dataclass(frozen=True, eq=False)
class CoordSeries:
    """Equally spaced coordinate observations ``z[k]`` at times ``k * delta``."""

    delta: float
    z: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        z = np.array(self.z, dtype=float)
        if z.ndim != 2 or z.shape[0] < 1:
            raise InvalidArgument("coordinate series must be a (N, n) array")
        if not np.all(np.isfinite(z)):
            raise InvalidArgument("coordinate series must be finite")
        if not self.delta > 0:
            raise InvalidArgument("series step must be positive")
        z.setflags(write=False)
        object.__setattr__(self, "z", z)

    @property
    def n(self) -> int:
        return self.z.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.delta * np.arange(self.z.shape[0])

    def __len__(self) -> int:
        return self.z.shape[0]


def simulate_paths(
    sde: CoordSDE,
    z0,
    delta: float,
    k: int,
    seed: int = 0,
    *,
    path_ids=(0,),
    scheme: str = "euler_ito",
    noise: np.ndarray | None = None,
) -> list[CoordSeries]:
    """Simulate several coordinate paths in lockstep.

    Path ``p`` is driven by the ``(seed, p)`` increment stream, the same one
    :func:`curveflow.hjm.simulate_hjm` uses, unless ``noise`` of shape
    ``(paths, k, m)`` is given.
    """
    if scheme not in SCHEMES:
        raise InvalidArgument(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    if k < 1:
        raise InvalidArgument("need at least one step")
    if not delta >= 0:
        raise InvalidArgument("step must be non-negative")
    path_ids = list(path_ids)
    z0 = sde.fam.check(np.asarray(z0, dtype=float), 0)
    if noise is None:
        noise = np.stack([gaussian_increments(seed, p, k, sde.m, delta) for p in path_ids])
    noise = np.asarray(noise, dtype=float)
    if noise.shape != (len(path_ids), k, sde.m):
        raise InvalidArgument(f"noise must have shape {(len(path_ids), k, sde.m)}")
    step = step_euler_ito if scheme == "euler_ito" else step_heun_strat
    out = np.empty((len(path_ids), k + 1, sde.n))
    Z = np.broadcast_to(z0, (len(path_ids), sde.n)).copy()
    out[:, 0] = Z
    for j in range(k):
        with np.errstate(over="ignore", invalid="ignore"):
            Z = step(sde, Z, delta, noise[:, j])
        if not np.all(np.isfinite(Z)):
            raise NumericalBlowup("coordinates became non-finite", j + 1)
        sde.fam.check(Z, j + 1)
        out[:, j + 1] = Z
    return [
        CoordSeries(delta, out[i], {"seed": seed, "path_id": p, "scheme": scheme})
        for i, p in enumerate(path_ids)
    ]


def simulate_coords(
    sde: CoordSDE,
    z0,
    delta: float,
    k: int,
    seed: int = 0,
    scheme: str = "euler_ito",
    *,
    path_id: int = 0,
    noise: np.ndarray | None = None,
) -> CoordSeries:
    """Simulate one coordinate path; deterministic in ``(seed, path_id)``."""
    if noise is not None:
        noise = np.asarray(noise, dtype=float)[None]
    return simulate_paths(
        sde, z0, delta, k, seed, path_ids=(path_id,), scheme=scheme, noise=noise
    )[0]


def reconstruct_curve(fam: ManifoldFamily, z, grid: Grid) -> Curve:
    return fam.eval(z, grid)


@dataclass(frozen=True)
class PairedStep:
    """Outcome of one paired HJM/coordinate step from a curve on the family."""

    ratios: np.ndarray  # |<residual, g_j>| / (||residual|| ||g_j||)
    residual: Curve
    z_next: np.ndarray
    hjm: HjmPath | None = None

    @property
    def max_ratio(self) -> float:
        return float(np.max(self.ratios))


def paired_step(sde: CoordSDE, z0, dt: float, eps) -> PairedStep:
    """Step the grid HJM model and the projected coordinates with the same increment.

    Both sides use one Euler step of the Stratonovich drift and no Ito
    correction.  Only affine families are accepted since only then is
    ``G(z + dz) - G(z)`` exactly linear in ``dz``; that identity also lets the
    residual be formed from the increments, away from the curve level.
    """
    fam, grid = sde.fam, sde.grid
    if not fam.is_affine:
        raise InvalidArgument(f"paired step check needs an affine family, got {fam.family_tag}")
    z0 = fam.check(z0)
    eps = np.asarray(eps, dtype=float).reshape(1, sde.m)
    r0 = fam.eval(z0, grid)
    path = simulate_hjm(r0, sde.vol, dt, 1, noise=eps, form="stratonovich")
    vol = sde.vol
    dr = strat_drift_values(r0.values, vol, grid) * dt + eps[0] @ vol.sigma_values(r0.values, grid)
    A, B = coefficients(sde, z0, ito=False)
    dz = A * dt + B @ eps[0]
    basis = fam.affine_parts(grid)[1]
    residual = Curve(grid, dr - dz @ basis)
    res_norm = norm_h(residual, sde.w)
    z1 = z0 + dz
    if res_norm <= 1e-13 * norm_h(Curve(grid, dr), sde.w):
        # nothing left but round-off; the ratios would be noise over noise
        return PairedStep(np.zeros(fam.n), residual, z1, path)
    ratios = []
    for g in basis:
        gc = Curve(grid, g)
        ip = abs(inner_product(residual, gc, sde.w))
        ratios.append(0.0 if ip == 0 else ip / (res_norm * norm_h(gc, sde.w)))
    return PairedStep(np.array(ratios), residual, z1, path)
