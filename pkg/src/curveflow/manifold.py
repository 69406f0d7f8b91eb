"""Finite-dimensional curve families ``z -> G(z, .)`` and projection onto their tangent spaces.

A family is evaluated on any :class:`~curveflow.function_space.Grid`.  All
array-level helpers take coordinate batches ``Z`` of shape ``(K, n)`` and
return samples with the node axis last, so the dynamics code can push many
coordinate vectors through one call.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import cho_solve

from .errors import DegenerateBasis, FitFailed, IncompatibleGrid, InvalidArgument, OutOfDomain
from .function_space import Curve, Grid, WeightFunction, _weight_quad, inner_product

FAMILY_TAGS = ("affine", "nelson_siegel", "exp_basis", "exp_rate", "custom")

MAX_GRAM_COND = 1e12

ValueFn = Callable[[np.ndarray, Grid], np.ndarray]
AffineFn = Callable[[Grid], "tuple[np.ndarray, np.ndarray]"]


def fd_step(z: np.ndarray) -> np.ndarray:
    """Central-difference step used for derivatives with respect to coordinates."""
    return 1e-5 * (1.0 + np.abs(z))


@dataclass(frozen=True, eq=False)
class ManifoldFamily:
    """A parametrized family of curves with coordinates in a box ``[lower, upper]``.

    Exactly one of ``affine_fn`` / ``value_fn`` drives evaluation.
    ``affine_fn(grid)`` returns ``(g0, basis)`` with shapes ``(P,)`` and
    ``(n, P)``; ``value_fn(Z, grid)`` maps ``(K, n)`` coordinates to
    ``(K, P)`` samples.  ``tangent_fn(Z, grid) -> (K, n, P)`` is optional for
    non-affine families; central differences are used without it.
    """

    n: int
    lower: np.ndarray
    upper: np.ndarray
    family_tag: str = "custom"
    affine_fn: AffineFn | None = None
    value_fn: ValueFn | None = None
    tangent_fn: ValueFn | None = None
    _memo: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        lo = np.broadcast_to(np.asarray(self.lower, dtype=float), (self.n,)).copy()
        hi = np.broadcast_to(np.asarray(self.upper, dtype=float), (self.n,)).copy()
        if np.any(lo >= hi):
            raise InvalidArgument("family bounds need lower < upper")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if (self.affine_fn is None) == (self.value_fn is None):
            raise InvalidArgument("a family needs exactly one of affine_fn or value_fn")
        if self.family_tag not in FAMILY_TAGS:
            raise InvalidArgument(f"unknown family tag {self.family_tag!r}")

    @property
    def is_affine(self) -> bool:
        return self.affine_fn is not None

    def affine_parts(self, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
        """``(g0, basis)`` sampled on ``grid``; cached per grid object."""
        if not self.is_affine:
            raise InvalidArgument(f"{self.family_tag} family is not affine")
        key = id(grid)
        hit = self._memo.get(key)
        if hit is None or hit[0] is not grid:
            g0, basis = self.affine_fn(grid)
            g0 = np.array(np.broadcast_to(g0, grid.nodes.shape), dtype=float)
            basis = np.array(basis, dtype=float).reshape(self.n, grid.size)
            g0.setflags(write=False)
            basis.setflags(write=False)
            hit = (grid, g0, basis)
            self._memo[key] = hit
        return hit[1], hit[2]

    def check(self, z, step: int | None = None) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if z.shape[-1:] != (self.n,):
            raise InvalidArgument(f"expected {self.n} coordinates, got shape {z.shape}")
        if not np.all(np.isfinite(z)):
            raise OutOfDomain("non-finite coordinates", step)
        if np.any(z < self.lower) or np.any(z > self.upper):
            raise OutOfDomain(
                f"coordinates outside [{self.lower}, {self.upper}]", step
            )
        return z

    def values(self, Z: np.ndarray, grid: Grid) -> np.ndarray:
        """Samples of ``G(z, .)``: ``(K, n) -> (K, P)`` (or ``(n,) -> (P,)``)."""
        Z = np.asarray(Z, dtype=float)
        if self.is_affine:
            g0, basis = self.affine_parts(grid)
            return g0 + Z @ basis
        single = Z.ndim == 1
        out = self.value_fn(np.atleast_2d(Z), grid)
        return out[0] if single else out

    def tangent_values(self, Z: np.ndarray, grid: Grid) -> np.ndarray:
        """Samples of the partials ``dG/dz^k``: ``(K, n) -> (K, n, P)``.

        Affine families return the shared ``(n, P)`` basis instead.
        """
        if self.is_affine:
            return self.affine_parts(grid)[1]
        Z = np.asarray(Z, dtype=float)
        single = Z.ndim == 1
        Z = np.atleast_2d(Z)
        if self.tangent_fn is not None:
            out = self.tangent_fn(Z, grid)
        else:
            out = self._fd_tangents(Z, grid)
        return out[0] if single else out

    def _fd_tangents(self, Z: np.ndarray, grid: Grid) -> np.ndarray:
        K, n = Z.shape
        h = fd_step(Z)  # (K, n)
        eye = np.eye(n)
        up = (Z[:, None, :] + h[:, :, None] * eye).reshape(K * n, n)
        dn = (Z[:, None, :] - h[:, :, None] * eye).reshape(K * n, n)
        diff = self.value_fn(up, grid) - self.value_fn(dn, grid)
        return diff.reshape(K, n, grid.size) / (2.0 * h[:, :, None])

    def eval(self, z, grid: Grid) -> Curve:
        z = self.check(z)
        return Curve(grid, self.values(z, grid))

    def without_analytic_tangents(self) -> "ManifoldFamily":
        """Same family driven through ``value_fn`` with finite-difference tangents."""
        if self.is_affine:
            fn = self.affine_fn

            def value_fn(Z, grid):
                g0, basis = fn(grid)
                return np.asarray(g0) + Z @ np.asarray(basis)

        else:
            value_fn = self.value_fn
        return ManifoldFamily(self.n, self.lower, self.upper, self.family_tag, value_fn=value_fn)


@dataclass(frozen=True, eq=False)
class GramMatrix:
    """Pairwise tangent inner products with their Cholesky factor."""

    lam: np.ndarray
    chol: np.ndarray
    cond_estimate: float

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return cho_solve((self.chol, True), rhs)


def _factor(lam: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cholesky factor and condition estimate of one or a stack of Gram matrices."""
    eig = np.linalg.eigvalsh(lam)
    lo, hi = eig[..., 0], eig[..., -1]
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = np.where(lo > 0, hi / lo, np.inf)
    if np.any(~(cond <= MAX_GRAM_COND)):
        raise DegenerateBasis(
            f"tangent curves are not linearly independent (condition {np.max(cond):.3g})"
        )
    try:
        chol = np.linalg.cholesky(lam)
    except np.linalg.LinAlgError as exc:
        raise DegenerateBasis("Gram matrix is not positive definite") from exc
    return chol, cond


def gram_matrix(basis: Sequence[Curve], w: WeightFunction | None = None) -> GramMatrix:
    if not basis:
        raise InvalidArgument("basis must be nonempty")
    grid = basis[0].grid
    for b in basis[1:]:
        grid.check(b.grid)
    T = np.stack([b.values for b in basis])
    lam = (T * _weight_quad(grid, w)) @ T.T
    lam = 0.5 * (lam + lam.T)
    chol, cond = _factor(lam)
    return GramMatrix(lam, chol, float(cond))


@dataclass(frozen=True, eq=False)
class TangentFrame:
    """Tangent samples plus factored Gram matrices for a batch of base points.

    ``shared`` frames (affine families) hold one ``(n, P)`` basis used for every
    point; otherwise ``tangents`` is ``(K, n, P)`` and ``chol`` is ``(K, n, n)``.
    """

    tangents: np.ndarray
    weighted: np.ndarray
    chol: np.ndarray
    shared: bool

    @property
    def n(self) -> int:
        return self.tangents.shape[-2]

    def coords(self, U: np.ndarray) -> np.ndarray:
        """Projection coordinates ``Lambda^{-1} <U, t_j>`` along the last axis of ``U``.

        For batched frames, the leading axis of ``U`` indexes the base point.
        """
        U = np.asarray(U, dtype=float)
        n = self.n
        if self.shared:
            rhs = U @ self.weighted.T
            flat = rhs.reshape(-1, n).T
            return cho_solve((self.chol, True), flat, check_finite=False).T.reshape(rhs.shape)
        K = self.tangents.shape[0]
        rhs = np.einsum("k...p,kjp->k...j", U, self.weighted)
        flat = rhs.reshape(K, -1, n).transpose(0, 2, 1)
        y = np.linalg.solve(self.chol, flat)
        x = np.linalg.solve(np.swapaxes(self.chol, -1, -2), y)
        return x.transpose(0, 2, 1).reshape(rhs.shape)

    def curves(self, coords: np.ndarray) -> np.ndarray:
        """Samples of ``sum_i coords_i t_i``."""
        if self.shared:
            return coords @ self.tangents
        return np.einsum("k...i,kip->k...p", coords, self.tangents)


def tangent_frame(
    fam: ManifoldFamily, Z: np.ndarray, grid: Grid, w: WeightFunction | None = None
) -> TangentFrame:
    wq = _weight_quad(grid, w)
    T = fam.tangent_values(Z, grid)
    Tw = T * wq
    lam = Tw @ np.swapaxes(T, -1, -2)
    lam = 0.5 * (lam + np.swapaxes(lam, -1, -2))
    chol, _ = _factor(lam)
    return TangentFrame(T, Tw, chol, shared=T.ndim == 2)


def tangent_basis(fam: ManifoldFamily, z, grid: Grid) -> list[Curve]:
    z = fam.check(z)
    T = fam.tangent_values(z, grid)
    return [Curve(grid, t) for t in T]


def project(
    v: Curve, fam: ManifoldFamily, z, w: WeightFunction | None = None
) -> tuple[np.ndarray, Curve]:
    """Orthogonal projection of ``v`` onto the tangent space of ``fam`` at ``z``.

    Returns the coordinates in the (generally non-orthogonal) tangent basis and
    the projected curve.
    """
    z = fam.check(z)
    grid = v.grid
    frame = tangent_frame(fam, z, grid, w)
    coords = frame.coords(v.values)
    return coords, Curve(grid, frame.curves(coords))


def fit_curve(
    target: Curve,
    fam: ManifoldFamily,
    z_init,
    w: WeightFunction | None = None,
    *,
    tol: float = 1e-10,
    max_iter: int = 200,
) -> np.ndarray:
    """Coordinates minimizing ``||target - G(z, .)||_H``.

    Affine families are solved in closed form through the weighted normal
    equations.  Other families use Gauss-Newton with Levenberg damping from
    ``z_init``; non-convergence raises :class:`FitFailed` carrying the best
    iterate.
    """
    z = fam.check(z_init).copy()
    grid = target.grid
    wq = _weight_quad(grid, w)
    if fam.is_affine:
        g0, basis = fam.affine_parts(grid)
        frame = tangent_frame(fam, z, grid, w)
        z_hat = frame.coords(target.values - g0)
        if np.any(z_hat < fam.lower) or np.any(z_hat > fam.upper):
            raise FitFailed("least-squares solution lies outside the family bounds", z_hat, 0)
        return z_hat

    def cost(zz):
        r = target.values - fam.values(zz, grid)
        return float(np.dot(r * r, wq)), r

    f, resid = cost(z)
    damping = 1e-3
    for it in range(1, max_iter + 1):
        T = fam.tangent_values(z, grid)
        Tw = T * wq
        lam = Tw @ T.T
        grad = Tw @ resid
        scale = np.diag(lam).copy()
        scale[scale <= 0] = 1.0
        while True:
            try:
                step = np.linalg.solve(lam + damping * np.diag(scale), grad)
            except np.linalg.LinAlgError:
                step = np.full(fam.n, np.nan)
            trial = np.clip(z + step, fam.lower, fam.upper)
            if np.all(np.isfinite(trial)):
                f_trial, r_trial = cost(trial)
            else:
                f_trial = np.inf
            if f_trial <= f:
                moved = np.linalg.norm(trial - z)
                z, f, resid = trial, f_trial, r_trial
                damping = max(damping / 3.0, 1e-12)
                break
            damping *= 4.0
            if damping > 1e16:
                moved = 0.0
                break
        if moved < tol:
            return z
    raise FitFailed(f"Gauss-Newton did not converge in {max_iter} iterations", z, max_iter)


def orthonormalize(basis: Sequence[Curve], w: WeightFunction | None = None) -> list[Curve]:
    """Modified Gram-Schmidt under the weighted inner product."""
    out: list[Curve] = []
    for b in basis:
        v = b.values.copy()
        for _ in range(2):  # re-orthogonalize once for stability
            for q in out:
                v = v - inner_product(Curve(b.grid, v), q, w) * q.values
        nrm = np.sqrt(inner_product(Curve(b.grid, v), Curve(b.grid, v), w))
        if nrm == 0:
            raise DegenerateBasis("cannot orthonormalize a dependent basis")
        out.append(Curve(b.grid, v / nrm))
    return out


# ---------------------------------------------------------------- constructors


def make_affine_family(
    g0: Curve | None,
    basis: Sequence[Curve],
    *,
    lower=-np.inf,
    upper=np.inf,
    tag: str = "affine",
) -> ManifoldFamily:
    """``G(z, x) = g0(x) + sum_k z^k g_k(x)`` from curves sampled on one grid."""
    if not basis:
        raise InvalidArgument("affine family needs at least one basis curve")
    grid = basis[0].grid
    gram_matrix(basis)  # raises DegenerateBasis on dependence
    g0_values = np.zeros(grid.size) if g0 is None else g0.values
    if g0 is not None:
        grid.check(g0.grid)
    B = np.stack([b.values for b in basis])

    def affine_fn(other: Grid):
        if not grid.same_as(other):
            raise IncompatibleGrid("affine family basis was sampled on a different grid")
        return g0_values, B

    return ManifoldFamily(len(basis), lower, upper, tag, affine_fn=affine_fn)


def make_nelson_siegel(lam: float, *, lower=-np.inf, upper=np.inf) -> ManifoldFamily:
    """``G(z, x) = z1 + z2 e^{-lam x} + z3 x e^{-lam x}`` with fixed decay ``lam``."""
    if not lam > 0:
        raise InvalidArgument("Nelson-Siegel decay must be positive")

    def affine_fn(grid: Grid):
        x = grid.nodes
        e = np.exp(-lam * x)
        return np.zeros_like(x), np.stack([np.ones_like(x), e, x * e])

    return ManifoldFamily(3, lower, upper, "nelson_siegel", affine_fn=affine_fn)


def make_exp_basis(rates: Sequence[float], *, lower=-np.inf, upper=np.inf) -> ManifoldFamily:
    """``G(z, x) = sum_k z^k e^{-a_k x}``."""
    rates = np.asarray(rates, dtype=float)
    if rates.ndim != 1 or rates.size == 0 or np.any(rates <= 0):
        raise InvalidArgument("exp_basis needs a nonempty list of positive rates")
    if np.unique(rates).size != rates.size:
        raise DegenerateBasis("exp_basis rates must be distinct")

    def affine_fn(grid: Grid):
        x = grid.nodes
        return np.zeros_like(x), np.exp(-np.outer(rates, x))

    return ManifoldFamily(rates.size, lower, upper, "exp_basis", affine_fn=affine_fn)


def make_exp_rate(*, lower=(-np.inf, 0.0), upper=(np.inf, 50.0)) -> ManifoldFamily:
    """Non-affine two-coordinate family ``G(z, x) = z1 e^{-z2 x}``."""

    def value_fn(Z, grid):
        return Z[:, :1] * np.exp(-np.outer(Z[:, 1], grid.nodes))

    def tangent_fn(Z, grid):
        x = grid.nodes
        e = np.exp(-np.outer(Z[:, 1], x))
        return np.stack([e, -Z[:, :1] * x * e], axis=1)

    return ManifoldFamily(
        2, lower, upper, "exp_rate", value_fn=value_fn, tangent_fn=tangent_fn
    )


def make_custom_family(
    value_fn: ValueFn,
    n: int,
    *,
    lower=-np.inf,
    upper=np.inf,
    tangent_fn: ValueFn | None = None,
) -> ManifoldFamily:
    """Wrap a vectorized ``value_fn(Z (K, n), grid) -> (K, P)`` as a family."""
    return ManifoldFamily(n, lower, upper, "custom", value_fn=value_fn, tangent_fn=tangent_fn)
