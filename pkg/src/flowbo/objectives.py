"""Benchmark objectives and the Lorenz-63 calibration misfit."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numba
import numpy as np
from scipy.linalg import cho_solve

from .domain import BoxDomain
from .gp import JITTER_SCHEDULE, robust_cholesky
from .kernels import InvalidInputError

__all__ = [
    "BoxDomain", "Objective", "ackley", "griewank", "LorenzSetup", "LorenzDivergenceError",
    "lorenz_trajectory", "lorenz_phi", "lorenz_forward", "estimate_model_covariance",
    "lorenz_misfit", "lorenz_misfit_batch", "make_lorenz_setup", "benchmark_objective", "lorenz_objective",
]


def ackley(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(
        -20.0 * np.exp(-0.2 * np.sqrt(np.mean(x * x)))
        - np.exp(np.mean(np.cos(2.0 * np.pi * x)))
        + 20.0 + np.e
    )


def griewank(x) -> float:
    x = np.asarray(x, dtype=float)
    i = np.arange(1, x.size + 1)
    return float(1.0 + np.sum(x * x) / 4000.0 - np.prod(np.cos(x / np.sqrt(i))))


@dataclass(frozen=True)
class Objective:
    """Batch black-box objective: ``evaluate(X, rng) -> values`` with ``+inf`` marking failures."""

    name: str
    domain: BoxDomain
    evaluate: Callable
    true_min: float = 0.0

    def __call__(self, X, rng=None) -> np.ndarray:
        return np.asarray(self.evaluate(np.atleast_2d(X), rng), dtype=float)


def _pointwise(fn):
    def evaluate(X, rng=None):
        return np.array([fn(x) for x in X])
    return evaluate


def benchmark_objective(name: str, domain: BoxDomain) -> Objective:
    fns = {"ackley": ackley, "griewank": griewank}
    if name not in fns:
        raise InvalidInputError(f"unknown benchmark {name!r}")
    return Objective(name, domain, _pointwise(fns[name]), true_min=0.0)


# --------------------------------------------------------------------------- Lorenz-63


class LorenzDivergenceError(RuntimeError):
    def __init__(self, time: float):
        super().__init__(f"Lorenz trajectory diverged at t = {time:.4g}")
        self.time = time


@numba.njit(cache=True)
def _rk4(u0, r, b, sigma, dt, n_steps):
    B = u0.shape[0]
    out = np.empty((n_steps, B, 3))
    blowup = -np.ones(B, dtype=np.int64)
    for k in range(B):
        x, y, z = u0[k, 0], u0[k, 1], u0[k, 2]
        rk, bk = r[k], b[k]
        for n in range(n_steps):
            k1x = sigma * (y - x)
            k1y = rk * x - y - x * z
            k1z = x * y - bk * z
            x2, y2, z2 = x + 0.5 * dt * k1x, y + 0.5 * dt * k1y, z + 0.5 * dt * k1z
            k2x = sigma * (y2 - x2)
            k2y = rk * x2 - y2 - x2 * z2
            k2z = x2 * y2 - bk * z2
            x3, y3, z3 = x + 0.5 * dt * k2x, y + 0.5 * dt * k2y, z + 0.5 * dt * k2z
            k3x = sigma * (y3 - x3)
            k3y = rk * x3 - y3 - x3 * z3
            k3z = x3 * y3 - bk * z3
            x4, y4, z4 = x + dt * k3x, y + dt * k3y, z + dt * k3z
            k4x = sigma * (y4 - x4)
            k4y = rk * x4 - y4 - x4 * z4
            k4z = x4 * y4 - bk * z4
            x = x + dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
            y = y + dt / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
            z = z + dt / 6.0 * (k1z + 2.0 * k2z + 2.0 * k3z + k4z)
            if not (np.isfinite(x) and np.isfinite(y) and np.isfinite(z)) and blowup[k] < 0:
                blowup[k] = n
            out[n, k, 0] = x
            out[n, k, 1] = y
            out[n, k, 2] = z
    return out, blowup


def lorenz_trajectory(theta, u0, n_steps: int, dt: float, sigma: float = 10.0):
    """Fixed-step RK4 states after each of ``n_steps`` steps.

    ``theta`` is ``(r, b)`` or a ``(B, 2)`` batch, ``u0`` a 3-vector or
    ``(B, 3)``. Returns ``(states, blowup)`` where ``states`` has shape
    ``(n_steps, B, 3)`` and ``blowup[k]`` is the first non-finite step of
    trajectory ``k`` (``-1`` if none).
    """
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    u0 = np.atleast_2d(np.asarray(u0, dtype=float))
    if theta.shape[0] != u0.shape[0]:
        theta = np.broadcast_to(theta, (u0.shape[0], 2))
    if dt <= 0:
        raise InvalidInputError("dt must be positive")
    with np.errstate(all="ignore"):
        return _rk4(np.ascontiguousarray(u0), np.ascontiguousarray(theta[:, 0]),
                    np.ascontiguousarray(theta[:, 1]), float(sigma), float(dt), int(n_steps))


def lorenz_phi(states) -> np.ndarray:
    """First and second moments ``(x, y, z, x^2, y^2, z^2, xy, yz, xz)`` along the last axis."""
    x, y, z = states[..., 0], states[..., 1], states[..., 2]
    return np.stack([x, y, z, x * x, y * y, z * z, x * y, y * z, x * z], axis=-1)


@dataclass(frozen=True)
class LorenzSetup:
    sigma: float = 10.0
    window: float = 10.0
    dt: float = 0.01
    burn_in: float = 20.0
    phi_dim: int = 9
    true_theta: tuple = (28.0, 8.0 / 3.0)
    model_cov: np.ndarray | None = None
    data_vector: np.ndarray | None = None
    temper: float = 0.3
    obs_cov: np.ndarray | None = None
    n_windows: int = 500

    @property
    def window_steps(self) -> int:
        return int(round(self.window / self.dt))

    @property
    def burn_steps(self) -> int:
        return int(round(self.burn_in / self.dt))

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("sigma", "window", "dt", "burn_in", "temper", "n_windows")}
        d["true_theta"] = list(self.true_theta)
        if self.data_vector is not None:
            d["data_vector"] = [float(v) for v in self.data_vector]
        if self.model_cov is not None:
            d["model_cov"] = np.asarray(self.model_cov).tolist()
        return d


def random_initial_state(rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    shape = (3,) if size is None else (size, 3)
    return rng.normal(0.0, 1.0, shape) + np.array([0.0, 0.0, 25.0])


def _window_average(theta, u0, setup: LorenzSetup, trajectory=lorenz_trajectory):
    theta = np.atleast_2d(theta)
    u0 = np.atleast_2d(u0)
    states, blowup = trajectory(theta, u0, setup.burn_steps + setup.window_steps, setup.dt, setup.sigma)
    G = lorenz_phi(states[setup.burn_steps:]).mean(axis=0)
    return G, blowup


def lorenz_forward(theta, u0, setup: LorenzSetup, rng=None, trajectory=lorenz_trajectory) -> np.ndarray:
    """Window average of the moment map after burn-in, starting from ``u0``.

    ``u0=None`` draws a fresh initial condition from ``rng``.
    """
    if u0 is None:
        u0 = random_initial_state(rng)
    G, blowup = _window_average(theta, u0, setup, trajectory)
    if blowup[0] >= 0 or not np.all(np.isfinite(G)):
        step = blowup[0] if blowup[0] >= 0 else setup.burn_steps + setup.window_steps
        raise LorenzDivergenceError(step * setup.dt)
    return G[0]


def estimate_model_covariance(theta_ref, n_windows: int, setup: LorenzSetup, rng,
                              trajectory=lorenz_trajectory) -> np.ndarray:
    """Sample covariance of consecutive window averages along one long run."""
    if n_windows < 10:
        raise InvalidInputError("need at least 10 windows")
    u0 = random_initial_state(rng)
    n = setup.window_steps
    states, blowup = trajectory(np.asarray(theta_ref, dtype=float), u0,
                                setup.burn_steps + n_windows * n, setup.dt, setup.sigma)
    if blowup[0] >= 0:
        raise LorenzDivergenceError(blowup[0] * setup.dt)
    phi = lorenz_phi(states[setup.burn_steps:, 0, :])
    windows = phi.reshape(n_windows, n, setup.phi_dim).mean(axis=1)
    cov = np.cov(windows, rowvar=False)
    cov = 0.5 * (cov + cov.T)
    scale = float(np.mean(np.diag(cov)))
    cov = cov + 1e-10 * (scale if scale > 0 else 1.0) * np.eye(setup.phi_dim)
    _, extra = robust_cholesky(cov)
    return cov + extra * np.eye(setup.phi_dim)


def make_lorenz_setup(rng: np.random.Generator, **overrides) -> LorenzSetup:
    """Estimate the model covariance at the true parameters and draw one synthetic data vector."""
    setup = LorenzSetup(**overrides)
    if setup.model_cov is None:
        setup = replace(setup, model_cov=estimate_model_covariance(setup.true_theta, setup.n_windows, setup, rng))
    if setup.data_vector is None:
        setup = replace(setup, data_vector=lorenz_forward(setup.true_theta, None, setup, rng))
    return setup


def _quadratic_misfit(residuals, setup: LorenzSetup) -> np.ndarray:
    cov = np.asarray(setup.model_cov, dtype=float)
    if setup.obs_cov is not None:
        cov = cov + np.asarray(setup.obs_cov, dtype=float)
    # the stored covariance is already jittered; factor it as is when possible
    L, _ = robust_cholesky(cov, schedule=(0.0,) + JITTER_SCHEDULE)
    R = np.atleast_2d(residuals)
    quad = np.einsum("ij,ij->i", R, cho_solve((L, True), R.T).T)
    return (0.5 * np.maximum(quad, 0.0)) ** setup.temper


def lorenz_misfit(theta, setup: LorenzSetup, rng=None, u0=None, trajectory=lorenz_trajectory) -> float:
    """Tempered synthetic-likelihood misfit; ``+inf`` if the trajectory blows up."""
    if setup.data_vector is None or setup.model_cov is None:
        raise InvalidInputError("setup requires data_vector and model_cov")
    try:
        G = lorenz_forward(theta, u0, setup, rng, trajectory)
    except LorenzDivergenceError:
        return float("inf")
    return float(_quadratic_misfit(np.asarray(setup.data_vector) - G, setup)[0])


def lorenz_misfit_batch(thetas, setup: LorenzSetup, rng) -> np.ndarray:
    thetas = np.atleast_2d(thetas)
    u0 = random_initial_state(rng, thetas.shape[0])
    G, blowup = _window_average(thetas, u0, setup)
    out = np.full(thetas.shape[0], np.inf)
    ok = (blowup < 0) & np.all(np.isfinite(G), axis=1)
    if np.any(ok):
        out[ok] = _quadratic_misfit(np.asarray(setup.data_vector) - G[ok], setup)
    return out


LORENZ_DOMAIN = BoxDomain((20.0, 0.0), (40.0, 10.0))


def lorenz_objective(setup: LorenzSetup, domain: BoxDomain = LORENZ_DOMAIN) -> Objective:
    def evaluate(X, rng):
        return lorenz_misfit_batch(X, setup, rng)
    # no known minimum: regret is the raw log misfit, which is non-negative before the log
    return Objective("lorenz63", domain, evaluate, true_min=0.0)
