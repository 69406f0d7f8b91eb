"""GMM calibration of HJM volatility parameters from projected coordinate series.

The moment vector at step ``k`` is the Euler residual of the Ito-form
coordinate SDE,

    h_k(theta) = z[k+1] - z[k] - (A(z[k], theta) + ito_correction(z[k], theta)) * delta,

which averages to zero at the true parameter.  Estimation runs a least-squares
round followed by Newey-West weighted rounds until the estimate settles.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import minimize

from .errors import CurveflowError, InvalidArgument, InvalidTheta, SingularWeighting
from .function_space import Grid, WeightFunction
from .hjm import VolatilitySpec, vol_from_theta
from .manifold import ManifoldFamily
from .projection_dynamics import CoordSDE, CoordSeries, coefficients, transport_coeff

log = logging.getLogger(__name__)

SIMPLEX_SPREAD = 0.05
XTOL = 1e-8
EVALS_PER_DIM = 500
JITTER = 1e-12
STABLE_RTOL = 1e-6


@dataclass(frozen=True, eq=False)
class ThetaSpace:
    """Named, boxed HJM parameters and the map to a volatility specification."""

    names: tuple[str, ...]
    lower: np.ndarray
    upper: np.ndarray
    build: Callable[[np.ndarray], VolatilitySpec]

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != (len(self.names),) or hi.shape != lo.shape:
            raise InvalidArgument("bounds must match the parameter names")
        if np.any(lo >= hi):
            raise InvalidArgument("parameter bounds need lower < upper")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return len(self.names)

    def check(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise InvalidTheta(f"expected {self.dim} parameters {self.names}, got shape {theta.shape}")
        if not np.all(np.isfinite(theta)) or np.any(theta < self.lower) or np.any(theta > self.upper):
            raise InvalidTheta(f"theta {theta} outside bounds [{self.lower}, {self.upper}]")
        return theta


def theta_space_for(kind: str, m: int = 1, *, lower=None, upper=None) -> ThetaSpace:
    """Parameter space of a built-in volatility kind (layout as in :func:`make_vol`)."""
    names = [f"sigma0_{i + 1}" for i in range(m)] if m > 1 else ["sigma0"]
    lo = [0.0] * m
    hi = [10.0] * m
    if kind in ("exp_decay", "proportional_exp"):
        names.append("decay")
        lo.append(1e-6)
        hi.append(50.0)
    space = ThetaSpace(
        tuple(names),
        np.asarray(lower if lower is not None else lo, dtype=float),
        np.asarray(upper if upper is not None else hi, dtype=float),
        lambda theta: vol_from_theta(kind, m, theta),
    )
    vol_from_theta(kind, m, space.upper)  # fail early on an unknown kind
    return space


@dataclass(frozen=True, eq=False)
class MomentSeries:
    h: np.ndarray  # (N - 1, n)
    theta_at: np.ndarray


@dataclass(frozen=True, eq=False)
class LongRunCov:
    s: np.ndarray
    q: int


@dataclass(eq=False)
class MomentModel:
    """Moment functions of one coordinate series under a parametrized HJM model.

    Everything that does not depend on ``theta`` (family samples, tangent
    frames, the projected transport term) is computed once here.
    """

    space: ThetaSpace
    fam: ManifoldFamily
    grid: Grid
    series: CoordSeries
    w: WeightFunction | None = None
    _base: CoordSDE = field(init=False, repr=False)

    def __post_init__(self):
        if self.series.n != self.fam.n:
            raise InvalidArgument(
                f"series has {self.series.n} coordinates, family expects {self.fam.n}"
            )
        if len(self.series) < 2:
            raise InvalidArgument("need at least two observations")
        Z = self.series.z[:-1]
        self._Z = Z
        self._dz = np.diff(self.series.z, axis=0)
        probe = self.space.build(self.space.lower + 0.5 * (self.space.upper - self.space.lower))
        self._base = CoordSDE(self.fam, probe, self.grid, self.w)
        self._frame = self._base.frame(Z)
        self._transport = transport_coeff(self._base, Z, self._frame)

    @property
    def n_moments(self) -> int:
        return self._Z.shape[0]

    def sde(self, theta) -> CoordSDE:
        theta = self.space.check(theta)
        return self._base.with_vol(self.space.build(theta))

    def _h(self, theta) -> np.ndarray:
        sde = self.sde(theta)
        drift, _ = coefficients(sde, self._Z, ito=True, transport=self._transport, frame=self._frame)
        return self._dz - drift * self.series.delta

    def moments(self, theta) -> MomentSeries:
        theta = self.space.check(theta)
        return MomentSeries(self._h(theta), theta.copy())

    def moment(self, theta, k: int) -> np.ndarray:
        """``h_k`` for ``0 <= k < N - 1`` (0-based step index)."""
        if not 0 <= k < self.n_moments:
            raise InvalidArgument(f"moment index {k} outside [0, {self.n_moments})")
        sde = self.sde(theta)
        z = self._Z[k]
        drift, _ = coefficients(sde, z, ito=True)
        return self._dz[k] - drift * self.series.delta

    def sample_average(self, theta) -> np.ndarray:
        return self._h(theta).mean(axis=0)

    def gamma_hat(self, nu: int, theta) -> np.ndarray:
        return gamma_hat(self._h(theta), nu)

    def newey_west(self, theta, q: int | None = None) -> LongRunCov:
        return newey_west(self._h(theta), q)


# ------------------------------------------------------------------ covariances


def gamma_hat(h: np.ndarray, nu: int) -> np.ndarray:
    """Sample autocovariance ``(1/N) sum_{k>=nu} h_k h_{k-nu}^T`` (no centering)."""
    h = np.atleast_2d(np.asarray(h, dtype=float))
    N = h.shape[0]
    if int(nu) != nu or not 0 <= nu <= N - 1:
        raise InvalidArgument(f"lag {nu} outside [0, {N - 1}]")
    nu = int(nu)
    return h[nu:].T @ h[: N - nu] / N


def default_lag(n_obs: int) -> int:
    """Conventional Newey-West bandwidth ``floor(4 (N/100)^(2/9))``."""
    return int(math.floor(4.0 * (n_obs / 100.0) ** (2.0 / 9.0)))


def newey_west(h: np.ndarray, q: int | None = None) -> LongRunCov:
    """Bartlett-kernel long-run covariance of the moment sequence ``h``."""
    h = np.atleast_2d(np.asarray(h, dtype=float))
    N = h.shape[0]
    if q is None:
        q = min(default_lag(N), max(N - 1, 0))
    if int(q) != q or not 0 <= q <= N - 1:
        raise InvalidArgument(f"truncation lag {q} outside [0, {N - 1}]")
    q = int(q)
    s = gamma_hat(h, 0)
    for nu in range(1, q + 1):
        g = gamma_hat(h, nu)
        s = s + (1.0 - nu / (q + 1.0)) * (g + g.T)
    s = 0.5 * (s + s.T)
    tr = np.trace(s)
    if np.linalg.eigvalsh(s)[0] < -1e-10 * max(tr, 0.0):
        raise CurveflowError("Newey-West estimate is not positive semidefinite")
    return LongRunCov(s, q)


def weighting_factor(s: np.ndarray):
    """Cholesky factor of ``S + 1e-12 trace(S) I``."""
    s = np.asarray(s, dtype=float)
    reg = s + JITTER * np.trace(s) * np.eye(s.shape[0])
    try:
        return cho_factor(reg, lower=True)
    except np.linalg.LinAlgError as exc:
        raise SingularWeighting("weighting matrix is singular after regularization") from exc


# ------------------------------------------------------------------- estimators


@dataclass(frozen=True, eq=False)
class GmmFit:
    theta: np.ndarray
    objective: float
    converged: bool
    n_evals: int
    trace: np.ndarray = field(repr=False)


def _initial_simplex(theta0: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    dim = theta0.size
    sim = np.tile(theta0, (dim + 1, 1))
    for i in range(dim):
        step = SIMPLEX_SPREAD * theta0[i] if theta0[i] != 0 else 0.00025
        v = theta0[i] + step
        if v > upper[i] or v < lower[i]:
            v = theta0[i] - step
        sim[i + 1, i] = np.clip(v, lower[i], upper[i])
    return sim


def _nelder_mead(fun, theta0: np.ndarray, space: ThetaSpace, max_evals: int | None) -> GmmFit:
    trace: list[float] = []

    def wrapped(th):
        val = fun(th)
        trace.append(val)
        return val

    dim = theta0.size
    maxfev = max_evals or EVALS_PER_DIM * dim
    res = minimize(
        wrapped,
        theta0,
        method="Nelder-Mead",
        bounds=list(zip(space.lower, space.upper)),
        options={
            "initial_simplex": _initial_simplex(theta0, space.lower, space.upper),
            "xatol": XTOL,
            "fatol": np.inf,
            "maxfev": maxfev,
            "maxiter": 10**9,
        },
    )
    theta = np.clip(res.x, space.lower, space.upper)
    return GmmFit(theta, float(res.fun), res.status == 0, int(res.nfev), np.array(trace))


def ls_estimate(model: MomentModel, theta_init, *, max_evals: int | None = None) -> GmmFit:
    """Minimize ``f_N . f_N`` by bounded Nelder-Mead from ``theta_init``."""
    theta_init = model.space.check(theta_init)

    def objective(th):
        f = model.sample_average(th)
        return float(np.dot(f, f))

    fit = _nelder_mead(objective, theta_init, model.space, max_evals)
    if not fit.converged:
        log.warning("least-squares GMM hit the evaluation budget (%d)", fit.n_evals)
    return fit


def weighted_estimate(
    model: MomentModel, theta_init, s: np.ndarray, *, max_evals: int | None = None
) -> GmmFit:
    """Minimize ``f_N S^{-1} f_N`` for a fixed weighting matrix ``S``."""
    theta_init = model.space.check(theta_init)
    factor = weighting_factor(s)

    def objective(th):
        f = model.sample_average(th)
        return float(np.dot(f, cho_solve(factor, f)))

    return _nelder_mead(objective, theta_init, model.space, max_evals)


@dataclass(frozen=True, eq=False)
class OptimalGmmResult:
    theta: np.ndarray
    s_n: np.ndarray
    rounds_used: int
    converged: bool
    ls: GmmFit
    rounds: list[GmmFit] = field(repr=False)
    q: int = 0


def optimal_gmm(
    model: MomentModel,
    theta_init,
    q: int | None = None,
    max_rounds: int = 10,
    *,
    max_evals: int | None = None,
) -> OptimalGmmResult:
    """Iterated efficient GMM.

    Round 0 is :func:`ls_estimate`; each further round re-estimates the
    Newey-West matrix at the previous estimate and minimizes the weighted
    objective, stopping once ``|theta_r - theta_{r-1}| < 1e-6 (1 + |theta_r|)``.
    ``converged`` reports whether the final round met the simplex tolerance and
    the rounds stabilized; intermediate rounds may exhaust their budget.
    """
    if max_rounds < 1:
        raise InvalidArgument("max_rounds must be at least 1")
    ls = ls_estimate(model, theta_init, max_evals=max_evals)
    theta = ls.theta
    converged = ls.converged
    rounds: list[GmmFit] = []
    s = np.zeros((model.fam.n, model.fam.n))
    lag = q if q is not None else min(default_lag(model.n_moments), model.n_moments - 1)
    for r in range(1, max_rounds + 1):
        h = model.moments(theta).h
        if not np.any(h):
            # every moment vanishes: theta is a fixed point of any weighting
            return OptimalGmmResult(theta, s, r, converged, ls, rounds, lag)
        cov = newey_west(h, lag)
        s = cov.s
        fit = weighted_estimate(model, theta, s, max_evals=max_evals)
        rounds.append(fit)
        converged = fit.converged
        stable = np.linalg.norm(fit.theta - theta) < STABLE_RTOL * (1.0 + np.linalg.norm(fit.theta))
        log.debug("GMM round %d: theta=%s objective=%.6g", r, fit.theta, fit.objective)
        theta = fit.theta
        if stable:
            return OptimalGmmResult(theta, s, r, converged, ls, rounds, lag)
    log.warning("optimal GMM did not stabilize within %d rounds", max_rounds)
    return OptimalGmmResult(theta, s, max_rounds, False, ls, rounds, lag)


def moment_function(model: MomentModel, theta, k: int) -> np.ndarray:
    return model.moment(theta, k)


def sample_average(model: MomentModel, theta) -> np.ndarray:
    return model.sample_average(theta)
