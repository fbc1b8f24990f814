"""Gaussian-process surrogate: fitting, hyperparameter search and the joint
posterior of function values and gradients at query points."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize
from scipy.stats import qmc

from .domain import BoxDomain
from .kernels import InvalidInputError, KernelParams, matern52, matern52_grad_y, matern52_hess_xy

JITTER_SCHEDULE = (1e-10, 1e-9, 1e-8, 1e-7, 1e-6)
VARIANCE_FLOOR_FACTOR = 100.0


class IllConditionedKernelError(np.linalg.LinAlgError):
    """A covariance matrix could not be factorised even after jitter escalation."""


class HyperparameterWarning(UserWarning):
    pass


def robust_cholesky(C: np.ndarray, schedule=JITTER_SCHEDULE):
    """Lower Cholesky factor of ``C + j * s * I`` for the first jitter ``j`` that works.

    ``s`` is the mean diagonal of ``C`` so the schedule is scale free. Returns
    ``(L, jitter)`` where ``jitter`` is the absolute value added. A matrix with
    an all-zero diagonal yields a zero factor.
    """
    C = np.asarray(C, dtype=float)
    scale = float(np.mean(np.diag(C))) if C.size else 0.0
    if scale <= 0.0:
        if np.allclose(C, 0.0):
            return np.zeros_like(C), 0.0
        raise IllConditionedKernelError("covariance has non-positive diagonal")
    eye = np.eye(C.shape[0])
    for j in schedule:
        try:
            return np.linalg.cholesky(C + j * scale * eye), j * scale
        except np.linalg.LinAlgError:
            continue
    raise IllConditionedKernelError(
        f"factorisation failed after jitter escalation up to {schedule[-1]:g}"
    )


class Dataset:
    """Append-only collection of evaluated points."""

    def __init__(self, inputs, targets, domain: BoxDomain):
        X = np.atleast_2d(np.asarray(inputs, dtype=float))
        y = np.asarray(targets, dtype=float).ravel()
        if X.shape[0] != y.shape[0]:
            raise InvalidInputError("inputs and targets differ in length")
        if X.shape[0] and X.shape[1] != domain.dim:
            raise InvalidInputError("input dimension does not match the domain")
        if not domain.contains(X, tol=1e-12):
            raise InvalidInputError("dataset inputs must lie inside the domain")
        self.domain = domain
        self._X = [row.copy() for row in X]
        self._y = [float(v) for v in y]

    def __len__(self):
        return len(self._y)

    @property
    def inputs(self) -> np.ndarray:
        return np.array(self._X).reshape(len(self._X), self.domain.dim)

    @property
    def targets(self) -> np.ndarray:
        return np.array(self._y)

    def append(self, inputs, targets):
        X = np.atleast_2d(np.asarray(inputs, dtype=float))
        y = np.asarray(targets, dtype=float).ravel()
        if X.shape[0] != y.shape[0]:
            raise InvalidInputError("inputs and targets differ in length")
        if not self.domain.contains(X, tol=1e-12):
            raise InvalidInputError("appended inputs must lie inside the domain")
        self._X.extend(row.copy() for row in X)
        self._y.extend(float(v) for v in y)

    def finite(self) -> "Dataset":
        """Copy restricted to entries with finite targets."""
        keep = np.isfinite(self.targets)
        return Dataset(self.inputs[keep], self.targets[keep], self.domain)


@dataclass(frozen=True)
class GpPosterior:
    inputs: np.ndarray
    targets: np.ndarray
    kernel_params: KernelParams
    gram_factor: np.ndarray
    alpha_weights: np.ndarray
    offset: float
    incumbent: float
    jitter: float = 0.0

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def predict(self, Z):
        """Posterior mean and marginal variance of f at ``Z``."""
        mean, cov = self.predict_cov(Z)
        return mean, np.clip(np.diag(cov).copy(), 0.0, None)

    def predict_cov(self, Z):
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        p = self.kernel_params
        Kxz = matern52(self.inputs, Z, p)
        V = solve_triangular(self.gram_factor, Kxz, lower=True)
        mean = Kxz.T @ self.alpha_weights + self.offset
        cov = matern52(Z, Z, p) - V.T @ V
        cov = 0.5 * (cov + cov.T)
        # variances below the conditioning jitter (or round-off relative to the
        # prior variance) are numerically zero: pin those points
        floor = VARIANCE_FLOOR_FACTOR * max(self.jitter, 1e-10 * p.amplitude)
        pinned = np.diag(cov) <= floor
        cov[pinned, :] = 0.0
        cov[:, pinned] = 0.0
        return mean, cov


def fit_gp(data: Dataset, p: KernelParams) -> GpPosterior:
    if len(data) == 0:
        raise InvalidInputError("cannot fit a GP to an empty dataset")
    X, y = data.inputs, data.targets
    if not np.all(np.isfinite(y)):
        raise InvalidInputError("targets must be finite; filter with Dataset.finite()")
    offset = float(np.mean(y))
    K = matern52(X, X, p) + p.noise_variance * np.eye(len(y))
    # exact factorisation first: any jitter biases the fit at the data by jitter * |alpha|
    L, jitter = robust_cholesky(K, schedule=(0.0,) + JITTER_SCHEDULE)
    alpha = cho_solve((L, True), y - offset)
    return GpPosterior(
        inputs=X, targets=y, kernel_params=p, gram_factor=L, alpha_weights=alpha,
        offset=offset, incumbent=float(np.min(y)), jitter=jitter,
    )


def log_marginal_likelihood(data: Dataset, p: KernelParams) -> float:
    """Exact log evidence of the centred targets; ``-inf`` if unfactorisable."""
    try:
        gp = fit_gp(data, p)
    except IllConditionedKernelError:
        return -np.inf
    yc = gp.targets - gp.offset
    n = len(yc)
    return float(
        -0.5 * yc @ gp.alpha_weights
        - np.sum(np.log(np.diag(gp.gram_factor)))
        - 0.5 * n * np.log(2.0 * np.pi)
    )


def default_hyperparameter_bounds(data: Dataset, with_noise: bool) -> dict:
    var = max(float(np.var(data.targets)), 1e-12)
    width = float(np.max(data.domain.width))
    bounds = {
        "amplitude": (1e-2 * var, 1e2 * var),
        "lengthscale": (1e-2 * width, 2.0 * width),
    }
    if with_noise:
        bounds["noise_variance"] = (1e-8 * var, var)
    return bounds


def optimize_hyperparameters(
    data: Dataset,
    bounds: dict,
    restarts: int,
    rng: np.random.Generator,
    initial: KernelParams | None = None,
) -> KernelParams:
    """Multi-start Nelder-Mead maximisation of the log marginal likelihood in log space.

    ``bounds`` maps parameter names to positive ``(low, high)`` intervals; a
    parameter absent from ``bounds`` is held at its ``initial`` value (this is
    how the white-noise variance is frozen). The result is never worse than
    ``initial``.
    """
    initial = initial or KernelParams()
    if restarts <= 0:
        return initial
    if len(data) < 2:
        raise InvalidInputError("hyperparameter optimisation needs at least two points")
    names = [n for n in ("amplitude", "lengthscale", "noise_variance") if n in bounds]
    lo = np.log([bounds[n][0] for n in names])
    hi = np.log([bounds[n][1] for n in names])
    if np.any(~np.isfinite(lo)) or np.any(lo > hi):
        raise InvalidInputError(f"invalid hyperparameter bounds {bounds!r}")
    base = initial.to_dict()

    def params_of(theta) -> KernelParams:
        d = dict(base)
        d.update(zip(names, np.exp(theta)))
        return KernelParams(**d)

    def objective(theta):
        value = log_marginal_likelihood(data, params_of(theta))
        return 1e25 if not np.isfinite(value) else -value

    best_params, best_value = initial, log_marginal_likelihood(data, initial)
    sampler = qmc.LatinHypercube(d=len(names), seed=rng)
    starts = qmc.scale(sampler.random(restarts), lo, hi) if np.all(hi > lo) else np.tile(lo, (restarts, 1))
    found = False
    for theta0 in starts:
        res = minimize(objective, theta0, method="Nelder-Mead", bounds=list(zip(lo, hi)),
                       options={"xatol": 1e-4, "fatol": 1e-6, "maxiter": 400})
        if res.fun >= 1e25:
            continue
        found = True
        if -res.fun > best_value:
            best_params, best_value = params_of(res.x), -res.fun
    if not found and not np.isfinite(best_value):
        warnings.warn("all hyperparameter restarts failed to factorise; keeping incoming parameters",
                      HyperparameterWarning, stacklevel=2)
    return best_params


@dataclass(frozen=True)
class JointPosterior:
    """Gaussian over ``[f(z_1..z_m), grad f(z_1), ..., grad f(z_m)]``."""

    query_points: np.ndarray
    mean: np.ndarray
    covariance: np.ndarray

    @property
    def m(self) -> int:
        return self.query_points.shape[0]

    @property
    def dim(self) -> int:
        return self.query_points.shape[1]


@dataclass(frozen=True)
class JointSample:
    f_draws: np.ndarray      # (M, m)
    grad_draws: np.ndarray   # (M, m, d)

    @property
    def M(self) -> int:
        return self.f_draws.shape[0]


def prior_joint_covariance(Z, p: KernelParams) -> np.ndarray:
    m, d = Z.shape
    Kzz = matern52(Z, Z, p)
    Gzz = matern52_grad_y(Z, Z, p).reshape(m, m * d)
    Hzz = matern52_hess_xy(Z, Z, p).transpose(0, 2, 1, 3).reshape(m * d, m * d)
    return np.block([[Kzz, Gzz], [Gzz.T, Hzz]])


def joint_posterior(gp: GpPosterior, query) -> JointPosterior:
    Z = np.atleast_2d(np.asarray(query, dtype=float))
    m, d = Z.shape
    if d != gp.dim:
        raise InvalidInputError("query dimension does not match the GP")
    p = gp.kernel_params
    X = gp.inputs
    n = X.shape[0]
    Kstar = np.hstack([matern52(X, Z, p), matern52_grad_y(X, Z, p).reshape(n, m * d)])
    V = solve_triangular(gp.gram_factor, Kstar, lower=True)
    mean = Kstar.T @ gp.alpha_weights
    mean[:m] += gp.offset
    cov = prior_joint_covariance(Z, p) - V.T @ V
    return JointPosterior(Z, mean, 0.5 * (cov + cov.T))


def sample_joint(jp: JointPosterior, M: int, rng: np.random.Generator) -> JointSample:
    if M < 1:
        raise InvalidInputError("need at least one draw")
    L, _ = robust_cholesky(jp.covariance)
    z = rng.standard_normal((M, jp.mean.size))
    draws = jp.mean + z @ L.T
    m, d = jp.m, jp.dim
    return JointSample(draws[:, :m], draws[:, m:].reshape(M, m, d))


def sample_f(gp: GpPosterior, points, S: int, rng: np.random.Generator) -> np.ndarray:
    """``S`` joint posterior draws of f at ``points`` (no gradients), shape ``(S, q)``."""
    mean, cov = gp.predict_cov(points)
    L, _ = robust_cholesky(cov)
    return mean + rng.standard_normal((S, mean.size)) @ L.T
