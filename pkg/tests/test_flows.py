import itertools
from math import comb

import numpy as np
import pytest

from flowbo.acquisition import smoothed_qei, smoothed_qei_gradients
from flowbo.domain import BoxDomain
from flowbo.flows import (ParticleEnsemble, SteinConfig, WassersteinConfig, _tuple_array, clamp_to_box,
                          combinations, evolve, stein_step, stein_update_field, wasserstein_drift,
                          wasserstein_field, wasserstein_step, wasserstein_update)
from flowbo.gp import Dataset, JointSample, fit_gp
from flowbo.kernels import InvalidInputError, KernelParams, matern52_eval

SQ5 = np.sqrt(5.0)


def grad_x_kernel(x, z, p):
    """d/dx of the Matern 5/2 kernel, written out independently of the library."""
    r = np.linalg.norm(x - z)
    s = SQ5 * r / p.lengthscale
    return -p.amplitude * 5.0 / (3.0 * p.lengthscale**2) * (1.0 + s) * np.exp(-s) * (x - z)


def synthetic_sample(N, d, seed, scale=1.0):
    rng = np.random.default_rng(seed)
    return JointSample(scale * rng.normal(size=(1, N)), rng.normal(size=(1, N, d)))


def brute_stein(X, js, f_star, cfg):
    N, q = X.shape[0], cfg.batch_order
    f, G = js.f_draws[0], js.grad_draws[0]
    out = np.zeros_like(X)
    subsets = list(itertools.combinations(range(N), q))
    for zi in range(N):
        z = X[zi]
        total = np.zeros(X.shape[1])
        for gamma in subsets:
            grads = smoothed_qei_gradients(f[list(gamma)], G[list(gamma)], f_star)
            for slot, idx in enumerate(gamma):
                total += grads[slot] * matern52_eval(X[idx], z, cfg.stein_kernel)
        rep = sum(grad_x_kernel(X[i], z, cfg.stein_kernel) for i in range(N))
        out[zi] = total / len(subsets) + cfg.alpha / N * rep
    return out


def brute_drift(js, f_star, q, target, members):
    f, G = js.f_draws[0], js.grad_draws[0]
    subsets = list(itertools.combinations(members, q - 1))
    total = 0.0
    for gamma in subsets:
        idx = list(gamma) + [target]
        total = total + smoothed_qei_gradients(f[idx], G[idx], f_star)[-1]
    return q * total / len(subsets)


# ------------------------------------------------------------------ combinations and clamping


def test_combinations():
    assert combinations(3, 3) == [(0, 1, 2)]
    assert combinations(3, 2) == [(0, 1), (0, 2), (1, 2)]
    assert len(combinations(10, 3)) == 120
    with pytest.raises(InvalidInputError):
        combinations(2, 3)


def test_tuple_subsampling_cap():
    rng = np.random.default_rng(0)
    T = _tuple_array(30, 4, 500, rng)
    assert T.shape == (500, 4)
    assert len({tuple(r) for r in T}) == 500
    assert np.all(np.diff(T, axis=1) > 0)
    assert _tuple_array(10, 3, 500, rng).shape == (120, 3)


def test_clamp_examples():
    dom = BoxDomain.cube(-5, 5, 2)
    np.testing.assert_array_equal(clamp_to_box([[6.0, -7.0]], dom), [[5.0, -5.0]])
    np.testing.assert_array_equal(clamp_to_box([[1.0, -2.0]], dom), [[1.0, -2.0]])
    np.testing.assert_array_equal(clamp_to_box([[5.0, -5.0]], dom), [[5.0, -5.0]])


# ------------------------------------------------------------------ U-statistic oracles


@pytest.mark.parametrize("q", [2, 3])
def test_stein_field_matches_brute_force(q):
    rng = np.random.default_rng(q)
    dom = BoxDomain.cube(-2, 2, 2)
    X = rng.uniform(-1, 1, size=(4, 2))
    js = synthetic_sample(4, 2, 10 + q)
    cfg = SteinConfig(alpha=0.3, stein_kernel=KernelParams(1.2, 0.8), batch_order=q)
    got = stein_update_field(ParticleEnsemble(X, dom), js, 0.2, cfg)
    np.testing.assert_allclose(got, brute_stein(X, js, 0.2, cfg), rtol=0, atol=1e-12)


@pytest.mark.parametrize("q", [2, 3])
def test_wasserstein_drift_matches_enumeration(q):
    N = 4
    js = synthetic_sample(N + 1, 2, 20 + q)
    # ensemble = first N sampled points, z = last sampled point
    got = wasserstein_drift(js, 0.1, q, target=N, members=range(N))
    np.testing.assert_allclose(got, brute_drift(js, 0.1, q, N, range(N)), rtol=0, atol=1e-12)
    # per-particle field (self excluded) equals the drift at each particle
    js = synthetic_sample(N, 2, 30 + q)
    dom = BoxDomain.cube(-1, 1, 2)
    ens = ParticleEnsemble(np.zeros((N, 2)), dom)
    field = wasserstein_field(ens, js, 0.1, WassersteinConfig(batch_order=q))
    for i in range(N):
        others = [j for j in range(N) if j != i]
        np.testing.assert_allclose(field[i], brute_drift(js, 0.1, q, i, others), rtol=0, atol=1e-12)
        np.testing.assert_allclose(field[i], wasserstein_drift(js, 0.1, q, i), rtol=0, atol=1e-12)


def test_wasserstein_self_inclusion_switch():
    N, q = 4, 3
    js = synthetic_sample(N, 1, 3)
    ens = ParticleEnsemble(np.zeros((N, 1)), BoxDomain.cube(-1, 1, 1))
    field = wasserstein_field(ens, js, 0.0, WassersteinConfig(batch_order=q, allow_self_in_tuple=True))
    for i in range(N):
        np.testing.assert_allclose(field[i], brute_drift(js, 0.0, q, i, range(N)), atol=1e-12)
    assert len(list(itertools.combinations(range(N), q - 1))) == comb(N, q - 1)


def test_wasserstein_drift_single_tuple_and_zero():
    js = synthetic_sample(2, 3, 4)
    expected = 2 * smoothed_qei_gradients(js.f_draws[0], js.grad_draws[0], 0.5)[1]
    np.testing.assert_allclose(wasserstein_drift(js, 0.5, 2, target=1, members=[0]), expected, rtol=1e-15)
    zero = JointSample(js.f_draws, np.zeros_like(js.grad_draws))
    np.testing.assert_array_equal(wasserstein_drift(zero, 0.5, 2, target=1), 0.0)


def test_u_statistic_unbiasedness_small():
    rng = np.random.default_rng(0)
    f = rng.normal(size=4)

    def h(i, j):
        return smoothed_qei(f[[i, j]], 0.3)

    u = np.mean([h(i, j) for i, j in combinations(4, 2)])
    ordered = np.mean([h(i, j) for i in range(4) for j in range(4) if i != j])
    assert u == pytest.approx(ordered, rel=1e-15)


def test_stein_zero_gradients_zero_alpha():
    js = JointSample(np.zeros((1, 4)), np.zeros((1, 4, 2)))
    ens = ParticleEnsemble(np.random.default_rng(0).uniform(size=(4, 2)), BoxDomain.cube(0, 1, 2))
    np.testing.assert_array_equal(stein_update_field(ens, js, 0.0, SteinConfig(alpha=0.0, batch_order=2)), 0.0)


# ------------------------------------------------------------------ field properties


def test_pure_repulsion_antisymmetry():
    dom = BoxDomain.cube(-2, 2, 2)
    X = np.array([[-0.3, 0.1], [0.4, 0.5]])
    js = JointSample(np.zeros((1, 2)), np.zeros((1, 2, 2)))
    phi = stein_update_field(ParticleEnsemble(X, dom), js, 0.0, SteinConfig(alpha=0.7, batch_order=2))
    np.testing.assert_array_equal(phi[0], -phi[1])
    u = X[1] - X[0]
    # along the joining line, pointing away from the partner
    assert abs(phi[0][0] * u[1] - phi[0][1] * u[0]) < 1e-15
    assert phi[0] @ u < 0 < phi[1] @ u


def test_stein_field_linear_in_alpha():
    dom = BoxDomain.cube(-2, 2, 2)
    X = np.random.default_rng(1).uniform(-1, 1, size=(5, 2))
    js = synthetic_sample(5, 2, 2)
    ens = ParticleEnsemble(X, dom)
    base = stein_update_field(ens, js, 0.0, SteinConfig(alpha=0.0))
    d1 = stein_update_field(ens, js, 0.0, SteinConfig(alpha=0.1)) - base
    d3 = stein_update_field(ens, js, 0.0, SteinConfig(alpha=0.3)) - base
    np.testing.assert_allclose(d3, 3 * d1, rtol=1e-10, atol=1e-15)


def test_permutation_equivariance_of_fields():
    dom = BoxDomain.cube(-2, 2, 2)
    rng = np.random.default_rng(7)
    X = rng.uniform(-1, 1, size=(6, 2))
    js = synthetic_sample(6, 2, 8)
    perm = rng.permutation(6)
    js_p = JointSample(js.f_draws[:, perm], js.grad_draws[:, perm])
    a = stein_update_field(ParticleEnsemble(X, dom), js, 0.1, SteinConfig())
    b = stein_update_field(ParticleEnsemble(X[perm], dom), js_p, 0.1, SteinConfig())
    np.testing.assert_allclose(b, a[perm], rtol=0, atol=1e-14)
    a = wasserstein_field(ParticleEnsemble(X, dom), js, 0.1, WassersteinConfig())
    b = wasserstein_field(ParticleEnsemble(X[perm], dom), js_p, 0.1, WassersteinConfig())
    np.testing.assert_allclose(b, a[perm], rtol=0, atol=1e-14)


# ------------------------------------------------------------------ steps


def small_gp(seed=0):
    rng = np.random.default_rng(seed)
    dom = BoxDomain.cube(-2, 2, 2)
    X = rng.uniform(-2, 2, size=(12, 2))
    return fit_gp(Dataset(X, np.sin(X).sum(axis=1), dom), KernelParams(1.0, 0.8)), dom


def test_zero_step_size_is_identity():
    gp, dom = small_gp()
    ens = ParticleEnsemble(np.random.default_rng(1).uniform(-2, 2, size=(5, 2)), dom)
    out = stein_step(ens, gp, SteinConfig(step_size=0.0, samples=20), np.random.default_rng(0))
    np.testing.assert_array_equal(out.positions, ens.positions)
    out = wasserstein_step(ens, gp, WassersteinConfig(step_size=0.0, noise_scale=0.0, samples=20),
                           np.random.default_rng(0))
    np.testing.assert_array_equal(out.positions, ens.positions)


def test_stein_step_clamps_and_is_deterministic():
    gp, dom = small_gp(2)
    ens = ParticleEnsemble(np.random.default_rng(3).uniform(-2, 2, size=(5, 2)), dom)
    cfg = SteinConfig(step_size=50.0, samples=20, inner_steps=4)
    a, _ = evolve(ens, gp, cfg, np.random.default_rng(5))
    b, _ = evolve(ens, gp, cfg, np.random.default_rng(5))
    np.testing.assert_array_equal(a.positions, b.positions)
    assert dom.contains(a.positions)
    assert np.any(np.isin(a.positions, [-2.0, 2.0]))


def test_drift_only_step_composition():
    gp, dom = small_gp(4)
    ens = ParticleEnsemble(np.random.default_rng(6).uniform(-1, 1, size=(5, 2)), dom)
    cfg = WassersteinConfig(step_size=0.3, noise_scale=0.0, samples=30)
    new, drift = wasserstein_step(ens, gp, cfg, np.random.default_rng(9), return_field=True)
    expected = clamp_to_box(ens.positions + cfg.step_size * drift / cfg.batch_order, dom)
    np.testing.assert_array_equal(new.positions, expected)


def test_noise_only_variance():
    alpha_w = 0.01
    cfg = WassersteinConfig(step_size=0.5, noise_scale=alpha_w)
    dom = BoxDomain.cube(-1e3, 1e3, 2)
    rng = np.random.default_rng(0)
    x = np.zeros((1, 2))
    steps = np.empty((100_000, 2))
    for t in range(steps.shape[0]):
        nxt = wasserstein_update(x, np.zeros_like(x), cfg, dom, rng)
        steps[t] = nxt[0] - x[0]
        x = nxt
    var = steps.var(axis=0, ddof=1)
    assert np.all(np.abs(var / alpha_w**2 - 1.0) < 0.05)


# ------------------------------------------------------------------ drift-norm decay


def frozen_unimodal_gp():
    # Dense noise-free design of a quadratic; a tiny amplitude leaves the mean
    # unchanged and makes the posterior draws practically deterministic.
    dom = BoxDomain.cube(-2, 2, 2)
    g = np.linspace(-2, 2, 9)
    X = np.array([(a, b) for a in g for b in g])
    return fit_gp(Dataset(X, ((X - 0.3) ** 2).sum(axis=1), dom), KernelParams(1e-12, 2.0)), dom


def decays(norms, band=0.1):
    tail = norms[len(norms) // 2:]
    return bool(np.all(tail <= (1 + band) * np.minimum.accumulate(tail)))


@pytest.mark.parametrize("flow", ["stein", "wasserstein"])
def test_drift_norm_decay(flow):
    gp, dom = frozen_unimodal_gp()
    if flow == "stein":
        cfg = SteinConfig(step_size=0.1, alpha=0.02, stein_kernel=KernelParams(1.0, 1.0),
                          samples=50, inner_steps=300)
    else:
        cfg = WassersteinConfig(step_size=0.1, noise_scale=0.0, samples=50, inner_steps=300)
    for seed in range(3):
        ens = ParticleEnsemble(np.random.default_rng(seed).uniform(-0.7, 1.3, size=(6, 2)), dom)
        _, norms = evolve(ens, gp, cfg, np.random.default_rng(seed + 1))
        assert norms[-1] < norms[0]
        assert decays(norms)
