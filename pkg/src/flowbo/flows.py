"""Particle gradient flows for the batch acquisition functional.

Both flows draw ``M`` joint (f, grad f) posterior samples at the current
particle positions once per step and reuse them for every index tuple.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import comb

import numpy as np

from .acquisition import accumulated_expected_gradients, tuple_expected_gradients
from .domain import BoxDomain
from .gp import GpPosterior, JointSample, joint_posterior, sample_joint
from .kernels import InvalidInputError, KernelParams, matern52, matern52_grad_y

MAX_TUPLES = 10_000


@dataclass(frozen=True)
class ParticleEnsemble:
    positions: np.ndarray
    domain: BoxDomain

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if X.shape[1] != self.domain.dim:
            raise InvalidInputError("particle dimension does not match the domain")
        if not np.all(np.isfinite(X)):
            raise InvalidInputError("particle positions must be finite")
        object.__setattr__(self, "positions", X)

    @property
    def N(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True)
class SteinConfig:
    step_size: float = 0.5
    alpha: float = 0.02
    stein_kernel: KernelParams = field(default_factory=lambda: KernelParams(1.0, 0.5, 0.0))
    inner_steps: int = 3000
    samples: int = 500
    batch_order: int = 3
    include_zero_term: bool = True
    max_tuples: int = MAX_TUPLES

    def __post_init__(self):
        if self.step_size < 0 or self.alpha < 0:
            raise InvalidInputError("step_size and alpha must be non-negative")
        if min(self.inner_steps, self.samples, self.batch_order) < 1:
            raise InvalidInputError("inner_steps, samples and batch_order must be >= 1")


@dataclass(frozen=True)
class WassersteinConfig:
    step_size: float = 0.5
    noise_scale: float = 0.01
    inner_steps: int = 1500
    samples: int = 500
    batch_order: int = 3
    include_zero_term: bool = True
    allow_self_in_tuple: bool = False
    max_tuples: int = MAX_TUPLES

    def __post_init__(self):
        if self.step_size < 0 or self.noise_scale < 0:
            raise InvalidInputError("step_size and noise_scale must be non-negative")
        if min(self.inner_steps, self.samples) < 1 or self.batch_order < 2:
            raise InvalidInputError("inner_steps, samples must be >= 1 and batch_order >= 2")


def combinations(N: int, q: int) -> list:
    """All increasing ``q``-subsets of ``range(N)`` in lexicographic order."""
    if q < 0 or q > N:
        raise InvalidInputError(f"cannot choose {q} of {N}")
    if q == 0:
        raise InvalidInputError("tuple size must be positive")
    return list(itertools.combinations(range(N), q))


def _tuple_array(N: int, q: int, max_tuples: int, rng) -> np.ndarray:
    total = comb(N, q)
    if total <= max_tuples or rng is None:
        return np.array(combinations(N, q), dtype=int).reshape(-1, q)
    # uniform subsample of distinct q-subsets
    rows = {tuple(sorted(rng.choice(N, size=q, replace=False))) for _ in range(4 * max_tuples)}
    rows = sorted(rows)[:max_tuples]
    return np.array(rows, dtype=int)


def clamp_to_box(positions, domain: BoxDomain) -> np.ndarray:
    return np.clip(np.asarray(positions, dtype=float), domain.lo, domain.hi)


def repulsion_field(positions, z, kernel: KernelParams, alpha: float) -> np.ndarray:
    """``(alpha / N) sum_i grad_{x_i} k(x_i, z)`` for every row of ``z``."""
    X = np.atleast_2d(positions)
    # grad wrt the first argument is minus the grad wrt the second
    return -alpha * matern52_grad_y(X, np.atleast_2d(z), kernel).mean(axis=0)


def stein_update_field(ens: ParticleEnsemble, js: JointSample, f_star: float, cfg: SteinConfig,
                       rng=None) -> np.ndarray:
    """Stein update direction evaluated at every particle, shape ``(N, d)``.

    The objective part averages, over all ``q``-subsets of particles, the
    expected smoothed gradients smeared onto the evaluation point by the
    Stein kernel; the repulsion part is the mean kernel gradient scaled by
    ``alpha``.
    """
    X = ens.positions
    N, q = ens.N, cfg.batch_order
    if N < q:
        raise InvalidInputError("ensemble smaller than the batch order")
    tuples = _tuple_array(N, q, cfg.max_tuples, rng)
    A = accumulated_expected_gradients(js, f_star, tuples, cfg.include_zero_term)
    K = matern52(X, X, cfg.stein_kernel)              # K[p, z] = k(x_p, x_z)
    objective = K.T @ A / len(tuples)
    return objective + repulsion_field(X, X, cfg.stein_kernel, cfg.alpha)


def wasserstein_drift(js: JointSample, f_star: float, q: int, target: int, members=None,
                      include_zero_term: bool = True) -> np.ndarray:
    """Drift ``q * mean_gamma E[dg/dx_q](x_gamma, z)`` at the sampled point ``target``.

    ``members`` lists the indices (into the sampled points) that form the
    ensemble; by default every point except ``target``. The ``(q-1)``-subsets
    of ``members`` are enumerated and ``target`` occupies the final slot.
    """
    m = js.f_draws.shape[1]
    if members is None:
        members = [i for i in range(m) if i != target]
    members = list(members)
    if len(members) < q - 1:
        raise InvalidInputError("not enough ensemble members for the batch order")
    subsets = itertools.combinations(members, q - 1)
    tuples = np.array([s + (target,) for s in subsets], dtype=int).reshape(-1, q)
    G = tuple_expected_gradients(js, f_star, tuples, include_zero_term)
    return q * G[:, -1, :].mean(axis=0)


def wasserstein_field(ens: ParticleEnsemble, js: JointSample, f_star: float, cfg: WassersteinConfig,
                      rng=None) -> np.ndarray:
    """Drift at every particle, shape ``(N, d)``; equal to ``wasserstein_drift`` per particle."""
    N, q = ens.N, cfg.batch_order
    if cfg.allow_self_in_tuple:
        return np.array([
            wasserstein_drift(js, f_star, q, i, range(N), cfg.include_zero_term) for i in range(N)
        ])
    if N < q:
        raise InvalidInputError("ensemble smaller than the batch order")
    # Each q-subset containing i is one (q-1)-subset of the others plus i, and
    # by permutation equivariance the slot order inside a tuple is irrelevant.
    tuples = _tuple_array(N, q, cfg.max_tuples, rng)
    A = accumulated_expected_gradients(js, f_star, tuples, cfg.include_zero_term)
    counts = np.bincount(tuples.ravel(), minlength=N).astype(float)
    return q * A / np.maximum(counts, 1.0)[:, None]


def _draw(ens: ParticleEnsemble, gp: GpPosterior, M: int, rng) -> JointSample:
    return sample_joint(joint_posterior(gp, ens.positions), M, rng)


def stein_step(ens: ParticleEnsemble, gp: GpPosterior, cfg: SteinConfig, rng: np.random.Generator,
               return_field: bool = False):
    js = _draw(ens, gp, cfg.samples, rng)
    phi = stein_update_field(ens, js, gp.incumbent, cfg, rng)
    new = ParticleEnsemble(clamp_to_box(ens.positions + cfg.step_size * phi, ens.domain), ens.domain)
    return (new, phi) if return_field else new


def wasserstein_update(positions, drift, cfg: WassersteinConfig, domain: BoxDomain,
                       rng: np.random.Generator) -> np.ndarray:
    """Euler-Maruyama move ``x + eps_w * drift / q + alpha_w * Z`` followed by clamping."""
    positions = np.asarray(positions, dtype=float)
    noise = rng.standard_normal(positions.shape)
    moved = positions + cfg.step_size * np.asarray(drift) / cfg.batch_order + cfg.noise_scale * noise
    return clamp_to_box(moved, domain)


def wasserstein_step(ens: ParticleEnsemble, gp: GpPosterior, cfg: WassersteinConfig,
                     rng: np.random.Generator, return_field: bool = False):
    js = _draw(ens, gp, cfg.samples, rng)
    drift = wasserstein_field(ens, js, gp.incumbent, cfg, rng)
    new = ParticleEnsemble(wasserstein_update(ens.positions, drift, cfg, ens.domain, rng), ens.domain)
    return (new, drift) if return_field else new


def evolve(ens: ParticleEnsemble, gp: GpPosterior, cfg, rng: np.random.Generator, steps: int | None = None):
    """Run ``steps`` (default ``cfg.inner_steps``) flow steps; returns the final
    ensemble and the mean per-particle norm of the update field at each step."""
    step = stein_step if isinstance(cfg, SteinConfig) else wasserstein_step
    norms = []
    for _ in range(cfg.inner_steps if steps is None else steps):
        ens, vec = step(ens, gp, cfg, rng, return_field=True)
        norms.append(float(np.linalg.norm(vec, axis=1).mean()))
    return ens, np.array(norms)
