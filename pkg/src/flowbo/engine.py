"""Outer batch Bayesian-optimisation loop and the repeated-run experiment protocol."""
from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.stats import qmc

from .domain import BoxDomain
from .flows import ParticleEnsemble, SteinConfig, WassersteinConfig, evolve
from .gp import (Dataset, IllConditionedKernelError, default_hyperparameter_bounds, fit_gp,
                 optimize_hyperparameters)
from .kernels import InvalidInputError, KernelParams
from .objectives import Objective, benchmark_objective, lorenz_objective, make_lorenz_setup, LorenzSetup

log = logging.getLogger(__name__)

REGRET_FLOOR = 1e-16
FLOWS = ("stein", "wasserstein", "none")


class ConfigFieldError(InvalidInputError):
    """Invalid configuration value; ``field`` names the offending key."""

    def __init__(self, field_name: str, message: str):
        super().__init__(message)
        self.field = field_name


@dataclass
class RunConfig:
    objective: str = "ackley"
    dim: int = 2
    domain: BoxDomain = field(default_factory=lambda: BoxDomain.cube(-5.0, 5.0, 2))
    starting_points: int = 10
    n_particles: int = 10
    batch_order: int = 3
    samples: int = 500
    inner_steps: int = 3000
    iterations: int = 15
    flow: str = "stein"
    step_size: float = 0.5
    alpha: float = 0.02
    stein_lengthscale: float = 0.5
    step_size_w: float = 0.5
    noise_scale_w: float = 0.01
    gp_noise: bool = False
    seed: int = 0
    refit_hyperparameters: bool = True
    hyper_restarts: int = 3
    inner_init: str = "lhs"
    include_zero_term: bool = True
    allow_self_in_tuple: bool = False
    max_tuples: int = 10_000
    lorenz: dict = field(default_factory=dict)
    experiment: str | None = None

    def __post_init__(self):
        if isinstance(self.domain, dict):
            try:
                self.domain = BoxDomain.from_dict(self.domain)
            except (InvalidInputError, KeyError, TypeError) as exc:
                raise ConfigFieldError("domain", f"invalid domain: {exc}") from exc
        self.validate()

    _INTS = ("dim", "starting_points", "n_particles", "batch_order", "samples", "inner_steps",
             "iterations", "seed", "hyper_restarts", "max_tuples")
    _FLOATS = ("step_size", "alpha", "stein_lengthscale", "step_size_w", "noise_scale_w")
    _BOOLS = ("gp_noise", "refit_hyperparameters", "include_zero_term", "allow_self_in_tuple")

    def validate(self):
        for name in self._INTS:
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
                raise ConfigFieldError(name, f"{name} must be an integer, got {v!r}")
        for name in self._FLOATS:
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float, np.floating)):
                raise ConfigFieldError(name, f"{name} must be a number, got {v!r}")
        for name in self._BOOLS:
            if not isinstance(getattr(self, name), bool):
                raise ConfigFieldError(name, f"{name} must be true or false")
        if not isinstance(self.lorenz, dict):
            raise ConfigFieldError("lorenz", "lorenz must be an object")
        for name in ("dim", "starting_points", "n_particles", "batch_order", "samples", "inner_steps"):
            if int(getattr(self, name)) < 1:
                raise ConfigFieldError(name, f"{name} must be >= 1")
        if self.iterations < 0:
            raise ConfigFieldError("iterations", "iterations must be >= 0")
        if self.flow not in FLOWS:
            raise ConfigFieldError("flow", f"flow must be one of {FLOWS}, got {self.flow!r}")
        if self.batch_order > self.n_particles:
            raise ConfigFieldError("batch_order", "batch_order must not exceed n_particles")
        if self.flow == "wasserstein" and self.batch_order < 2:
            raise ConfigFieldError("batch_order", "the Wasserstein drift needs batch_order >= 2")
        if self.domain.dim != self.dim:
            raise ConfigFieldError("domain", "domain dimension does not match dim")
        if self.inner_init not in ("lhs", "uniform"):
            raise ConfigFieldError("inner_init", "inner_init must be 'lhs' or 'uniform'")
        for name in ("step_size", "alpha", "stein_lengthscale", "step_size_w", "noise_scale_w"):
            if not getattr(self, name) >= 0:
                raise ConfigFieldError(name, f"{name} must be non-negative")
        if self.stein_lengthscale <= 0:
            raise ConfigFieldError("stein_lengthscale", "stein_lengthscale must be positive")

    def flow_config(self):
        if self.flow == "stein":
            return SteinConfig(
                step_size=self.step_size, alpha=self.alpha,
                stein_kernel=KernelParams(1.0, self.stein_lengthscale, 0.0),
                inner_steps=self.inner_steps, samples=self.samples, batch_order=self.batch_order,
                include_zero_term=self.include_zero_term, max_tuples=self.max_tuples,
            )
        if self.flow == "wasserstein":
            return WassersteinConfig(
                step_size=self.step_size_w, noise_scale=self.noise_scale_w,
                inner_steps=self.inner_steps, samples=self.samples, batch_order=self.batch_order,
                include_zero_term=self.include_zero_term, allow_self_in_tuple=self.allow_self_in_tuple,
                max_tuples=self.max_tuples,
            )
        return None

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["domain"] = self.domain.to_dict()
        d["lorenz"] = dict(self.lorenz)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigFieldError(unknown[0], f"unknown config keys: {unknown}")
        return cls(**d)


@dataclass
class IterationRecord:
    iteration: int
    points: np.ndarray
    values: np.ndarray
    best_so_far: float
    log_regret: float
    timings: dict = field(default_factory=dict)
    field_norms: np.ndarray | None = None


@dataclass
class RunRecord:
    config: dict
    true_min: float
    iterations: list = field(default_factory=list)
    dataset: Dataset | None = None
    status: str = "ok"
    seed_entropy: int | None = None

    @property
    def best_series(self) -> np.ndarray:
        return np.array([it.best_so_far for it in self.iterations])

    @property
    def failed(self) -> bool:
        return self.status != "ok"

    def history_rows(self):
        """One row per evaluation: ``(iteration, eval_index, *x, value, best_so_far, log_regret)``."""
        best = np.inf
        k = 0
        for it in self.iterations:
            for x, v in zip(it.points, it.values):
                if np.isfinite(v):
                    best = min(best, float(v))
                yield (it.iteration, k, *map(float, x), float(v), best, regret(best, self.true_min))
                k += 1


def regret(best: float, true_min: float) -> float:
    if not np.isfinite(best):
        return float("inf")
    return float(np.log(max(best - true_min, REGRET_FLOOR)))


def log_regret(record: RunRecord, true_min: float | None = None) -> np.ndarray:
    """Per-iteration ``log(max(best - true_min, 1e-16))``."""
    true_min = record.true_min if true_min is None else true_min
    return np.array([regret(b, true_min) for b in record.best_series])


def lhs_init(domain: BoxDomain, n: int, rng: np.random.Generator) -> np.ndarray:
    """Latin hypercube design of ``n`` points, jittered uniformly within strata."""
    if n < 1:
        raise InvalidInputError("design size must be >= 1")
    unit = qmc.LatinHypercube(d=domain.dim, seed=rng).random(n)
    return qmc.scale(unit, domain.lo, domain.hi)


def uniform_init(domain: BoxDomain, n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(domain.lo, domain.hi, size=(n, domain.dim))


def initial_kernel_params(data: Dataset, with_noise: bool) -> KernelParams:
    var = max(float(np.var(data.targets)), 1e-6)
    return KernelParams(var, 0.2 * float(np.mean(data.domain.width)), 1e-3 * var if with_noise else 0.0)


def _best(values, previous=np.inf) -> float:
    finite = np.asarray(values)[np.isfinite(values)]
    return float(min(previous, finite.min())) if finite.size else float(previous)


def run_batch_bo(cfg: RunConfig, objective: Objective, rng: np.random.Generator,
                 initial_design=None) -> RunRecord:
    """Evaluate an initial design, then run ``cfg.iterations`` rounds of fit / flow / evaluate.

    ``cfg.flow == "none"`` skips the inner flow so each round evaluates a fresh
    space-filling design (batched random search).
    """
    domain = cfg.domain
    record = RunRecord(config=cfg.to_dict(), true_min=objective.true_min)
    t0 = time.perf_counter()
    design = lhs_init(domain, cfg.starting_points, rng) if initial_design is None else np.asarray(initial_design, float)
    values = objective(design, rng)
    best = _best(values)
    record.iterations.append(IterationRecord(0, design, values, best, regret(best, objective.true_min),
                                             {"evaluate": time.perf_counter() - t0}))
    data = Dataset(design, values, domain)
    record.dataset = data
    flow_cfg = cfg.flow_config()
    params = None
    for i in range(1, cfg.iterations + 1):
        timings = {}
        t0 = time.perf_counter()
        fit_data = data.finite()
        if len(fit_data) == 0:
            record.status = f"failed at iteration {i}: no finite observations"
            break
        if params is None:
            params = initial_kernel_params(fit_data, cfg.gp_noise)
        try:
            if cfg.refit_hyperparameters and len(fit_data) >= 2:
                bounds = default_hyperparameter_bounds(fit_data, cfg.gp_noise)
                params = optimize_hyperparameters(fit_data, bounds, cfg.hyper_restarts, rng, initial=params)
            gp = fit_gp(fit_data, params)
            timings["fit"] = time.perf_counter() - t0
            t0 = time.perf_counter()
            init = lhs_init if cfg.inner_init == "lhs" else uniform_init
            ens = ParticleEnsemble(init(domain, cfg.n_particles, rng), domain)
            norms = None
            if flow_cfg is not None:
                ens, norms = evolve(ens, gp, flow_cfg, rng)
            timings["flow"] = time.perf_counter() - t0
        except IllConditionedKernelError as exc:
            record.status = f"failed at iteration {i}: {exc}"
            log.warning("GP failure, aborting run: %s", exc)
            break
        t0 = time.perf_counter()
        new_values = objective(ens.positions, rng)
        timings["evaluate"] = time.perf_counter() - t0
        data.append(ens.positions, new_values)
        best = _best(new_values, best)
        record.iterations.append(IterationRecord(i, ens.positions, new_values, best,
                                                 regret(best, objective.true_min), timings, norms))
        log.info("iteration %d: best %.6g", i, best)
    return record


# --------------------------------------------------------------------------- objectives from configs


def build_objective(cfg: RunConfig, setup_rng: np.random.Generator | None = None,
                    setup: LorenzSetup | None = None) -> tuple:
    """Objective plus the Lorenz setup it uses (``None`` for benchmarks)."""
    if cfg.objective in ("ackley", "griewank"):
        return benchmark_objective(cfg.objective, cfg.domain), None
    if cfg.objective == "lorenz63":
        if setup is None:
            overrides = dict(cfg.lorenz)
            for key in ("model_cov", "data_vector"):
                if key in overrides and overrides[key] is not None:
                    overrides[key] = np.asarray(overrides[key], dtype=float)
            if "true_theta" in overrides:
                overrides["true_theta"] = tuple(overrides["true_theta"])
            setup = make_lorenz_setup(setup_rng, **overrides)
        return lorenz_objective(setup, cfg.domain), setup
    raise InvalidInputError(f"unknown objective {cfg.objective!r}")


def seed_streams(seed: int):
    """``(setup_seq, run_seq)`` child seed sequences for a master seed."""
    return np.random.SeedSequence(seed).spawn(2)


def run_from_config(cfg: RunConfig, setup: LorenzSetup | None = None):
    setup_seq, run_seq = seed_streams(cfg.seed)
    objective, setup = build_objective(cfg, np.random.default_rng(setup_seq), setup)
    return run_batch_bo(cfg, objective, np.random.default_rng(run_seq)), setup


# --------------------------------------------------------------------------- experiment protocol


@dataclass
class ExperimentResult:
    iterations: np.ndarray
    q10: np.ndarray
    median: np.ndarray
    q90: np.ndarray
    init_medians: np.ndarray
    records: list
    n_failed: int = 0

    def rows(self):
        for row in zip(self.iterations, self.q10, self.median, self.q90):
            yield (int(row[0]), float(row[1]), float(row[2]), float(row[3]))


def _run_job(args):
    cfg_dict, setup, design, seq = args
    cfg = RunConfig.from_dict(cfg_dict)
    objective, _ = build_objective(cfg, setup=setup)
    return run_batch_bo(cfg, objective, np.random.default_rng(seq), initial_design=design)


def aggregate(series_by_init: list) -> tuple:
    """Median over repeats per initial design, then (q10, median, q90) over designs.

    ``series_by_init`` is a list (one per design) of lists of per-iteration
    log-regret series from successful repeats.
    """
    medians = np.array([np.median(np.vstack(s), axis=0) for s in series_by_init if len(s)])
    q10, med, q90 = np.quantile(medians, [0.1, 0.5, 0.9], axis=0)
    return medians, q10, med, q90


def run_experiment(cfg: RunConfig, n_inits: int = 10, n_repeats: int = 5, workers: int = 1,
                   setup: LorenzSetup | None = None) -> tuple:
    """Repeat the optimisation ``n_repeats`` times from each of ``n_inits`` initial designs.

    Returns ``(ExperimentResult, setup)``. Results do not depend on ``workers``.
    """
    if n_inits < 1 or n_repeats < 1:
        raise InvalidInputError("n_inits and n_repeats must be >= 1")
    setup_seq, run_seq = seed_streams(cfg.seed)
    _, setup = build_objective(cfg, np.random.default_rng(setup_seq), setup)
    jobs = []
    for init_seq in run_seq.spawn(n_inits):
        design_seq, *repeat_seqs = init_seq.spawn(1 + n_repeats)
        design = lhs_init(cfg.domain, cfg.starting_points, np.random.default_rng(design_seq))
        jobs.extend((cfg.to_dict(), setup, design, s) for s in repeat_seqs)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_job, jobs))
    else:
        records = [_run_job(j) for j in jobs]
    n_iter = cfg.iterations + 1
    by_init, n_failed = [], 0
    for k in range(n_inits):
        ok = []
        for rec in records[k * n_repeats:(k + 1) * n_repeats]:
            if rec.failed or len(rec.iterations) != n_iter:
                n_failed += 1
            else:
                ok.append(log_regret(rec))
        by_init.append(ok)
    if not any(by_init):
        raise RuntimeError("every run in the experiment failed")
    medians, q10, med, q90 = aggregate(by_init)
    result = ExperimentResult(np.arange(n_iter), q10, med, q90, medians, records, n_failed)
    return result, setup
