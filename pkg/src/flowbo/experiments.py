"""Named experiment presets (benchmark settings for each objective and flow)."""
from __future__ import annotations

from .domain import BoxDomain
from .engine import RunConfig
from .kernels import InvalidInputError

# Per-flow inner step counts are keyed by flow; everything else is shared.
PRESETS = {
    "ackley2": dict(
        objective="ackley", dim=2, domain=BoxDomain.cube(-5.0, 5.0, 2), starting_points=10,
        n_particles=10, batch_order=3, samples=500, inner_steps={"stein": 3000, "wasserstein": 1500},
        alpha=0.02, stein_lengthscale=0.5, step_size=0.5, noise_scale_w=0.01, step_size_w=0.5,
        gp_noise=False, iterations=15,
    ),
    "ackley5": dict(
        objective="ackley", dim=5, domain=BoxDomain.cube(-3.0, 3.0, 5), starting_points=50,
        n_particles=10, batch_order=3, samples=1000, inner_steps={"stein": 3000, "wasserstein": 1500},
        alpha=0.01, stein_lengthscale=0.5, step_size=0.5, noise_scale_w=5e-3, step_size_w=0.5,
        gp_noise=False, iterations=15,
    ),
    "griewank2": dict(
        objective="griewank", dim=2, domain=BoxDomain.cube(-500.0, 500.0, 2), starting_points=10,
        n_particles=10, batch_order=3, samples=500, inner_steps={"stein": 5000, "wasserstein": 2000},
        alpha=1e-3, stein_lengthscale=0.5, step_size=0.3, noise_scale_w=1e-3, step_size_w=0.3,
        gp_noise=True, iterations=15,
    ),
    "griewank5": dict(
        objective="griewank", dim=5, domain=BoxDomain.cube(-500.0, 500.0, 5), starting_points=50,
        n_particles=10, batch_order=3, samples=1000, inner_steps={"stein": 5000, "wasserstein": 3000},
        alpha=1e-4, stein_lengthscale=0.5, step_size=0.5, noise_scale_w=5e-4, step_size_w=0.5,
        gp_noise=True, iterations=15,
    ),
    "lorenz63": dict(
        objective="lorenz63", dim=2, domain=BoxDomain((20.0, 0.0), (40.0, 10.0)), starting_points=5,
        n_particles=10, batch_order=3, samples=500, inner_steps={"stein": 6000, "wasserstein": 3000},
        alpha=0.05, stein_lengthscale=1.0, step_size=0.5, noise_scale_w=5e-3, step_size_w=0.5,
        gp_noise=True, iterations=10,
    ),
}


def experiment_config(name: str, flow: str = "stein", **overrides) -> RunConfig:
    """Resolve a preset for ``flow`` (``stein``, ``wasserstein`` or ``none``) and apply overrides."""
    if name not in PRESETS:
        raise InvalidInputError(f"unknown experiment {name!r}; choose from {sorted(PRESETS)}")
    d = dict(PRESETS[name])
    steps = d.pop("inner_steps")
    d["inner_steps"] = steps.get(flow, steps["stein"])
    d.update(flow=flow, experiment=name)
    d.update(overrides)
    return RunConfig(**d)
