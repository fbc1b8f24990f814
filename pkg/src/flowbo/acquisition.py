"""Expected-improvement quantities.

The batch acquisition smooths ``max(0, f* - min_i f(x_i))`` by
``g = log(1 + sum_i exp(f* - f(x_i)))``, whose partial derivatives are softmax
weighted gradients of the sampled function.
"""
from __future__ import annotations

import itertools

import numpy as np
from scipy.stats import norm

from .gp import GpPosterior, JointSample, sample_f
from .kernels import InvalidInputError


def smoothed_weights(f_vals, f_star, include_zero_term: bool = True) -> np.ndarray:
    """Softmax weights ``exp(f* - f_i) / (1 + sum_k exp(f* - f_k))`` along the last axis.

    Evaluated with a max-shift so that large improvements do not overflow.
    With ``include_zero_term=False`` the leading ``1`` is dropped from the
    denominator (plain softmax over the batch).
    """
    a = f_star - np.asarray(f_vals, dtype=float)
    shift = np.max(a, axis=-1, keepdims=True)
    if include_zero_term:
        shift = np.maximum(shift, 0.0)
    e = np.exp(a - shift)
    # sorted summation keeps the result exactly permutation equivariant
    denom = np.sum(np.sort(e, axis=-1), axis=-1, keepdims=True)
    if include_zero_term:
        denom = denom + np.exp(-shift)
    return e / denom


def smoothed_qei(f_vals, f_star) -> np.ndarray:
    """``log(1 + sum_i exp(f* - f_i))`` along the last axis."""
    a = f_star - np.asarray(f_vals, dtype=float)
    zeros = np.zeros(a.shape[:-1] + (1,))
    return np.logaddexp.reduce(np.concatenate([zeros, a], axis=-1), axis=-1)


def smoothed_qei_gradients(f_vals, grad_vals, f_star, include_zero_term: bool = True) -> np.ndarray:
    """Gradient of the smoothed batch improvement with respect to each batch point.

    Parameters
    ----------
    f_vals : (q,) function values at the batch points
    grad_vals : (q, d) gradients of f at the batch points
    f_star : incumbent value

    Returns
    -------
    (q, d) array, row ``i`` is ``-w_i * grad f(x_i)``.
    """
    f_vals = np.asarray(f_vals, dtype=float)
    grad_vals = np.asarray(grad_vals, dtype=float)
    if not (np.all(np.isfinite(f_vals)) and np.all(np.isfinite(grad_vals)) and np.isfinite(f_star)):
        raise InvalidInputError("smoothed_qei_gradients requires finite inputs")
    w = smoothed_weights(f_vals, f_star, include_zero_term)
    return -w[..., None] * grad_vals


def tuple_expected_gradients(js: JointSample, f_star, tuples, include_zero_term: bool = True) -> np.ndarray:
    """Monte Carlo expected smoothed gradients for many index tuples at once.

    ``tuples`` is an integer array of shape ``(C, q)``; the result has shape
    ``(C, q, d)`` with entry ``[c, i]`` the draw-average of the gradient with
    respect to batch slot ``i`` of tuple ``c``. All tuples share the same draws.
    """
    tuples = np.asarray(tuples, dtype=int)
    F = js.f_draws[:, tuples]                         # (M, C, q)
    W = smoothed_weights(F, f_star, include_zero_term)
    G = js.grad_draws[:, tuples, :]                   # (M, C, q, d)
    return -np.einsum("mcq,mcqd->cqd", W, G) / js.M


def accumulated_expected_gradients(js: JointSample, f_star, tuples, include_zero_term: bool = True) -> np.ndarray:
    """Per-point sum over tuples of the expected slot gradient, shape ``(m, d)``.

    Equal to scattering :func:`tuple_expected_gradients` onto the point that
    occupies each slot, but computed without materialising the
    ``(M, C, q, d)`` tensor: with one shift per draw, the weight of point
    ``p`` in tuple ``c`` is ``e_p / D_c``, so the sum over tuples holding ``p``
    is ``e_p * sum_c 1 / D_c``.
    """
    tuples = np.asarray(tuples, dtype=int)
    C, q = tuples.shape
    m = js.f_draws.shape[1]
    a = f_star - js.f_draws                               # (M, m)
    shift = np.max(a, axis=1, keepdims=True)
    if include_zero_term:
        shift = np.maximum(shift, 0.0)
    E = np.exp(a - shift)
    denom = E[:, tuples].sum(axis=2)                      # (M, C)
    if include_zero_term:
        denom = denom + np.exp(-shift)
    if np.any(denom < 1e-250):
        # a single shared shift underflowed for some tuple; use per-tuple shifts
        G = tuple_expected_gradients(js, f_star, tuples, include_zero_term)
        A = np.zeros((m, G.shape[-1]))
        np.add.at(A, tuples.ravel(), G.reshape(-1, G.shape[-1]))
        return A
    incidence = np.zeros((C, m))
    np.add.at(incidence, (np.repeat(np.arange(C), q), tuples.ravel()), 1.0)
    R = (1.0 / denom) @ incidence                          # (M, m)
    return -np.einsum("mp,mpd->pd", E * R, js.grad_draws) / js.M


def expected_smoothed_gradients(js: JointSample, f_star, tuple_idx, include_zero_term: bool = True) -> np.ndarray:
    """Draw-average of :func:`smoothed_qei_gradients` on one tuple of query indices, shape ``(q, d)``."""
    return tuple_expected_gradients(js, f_star, np.asarray(tuple_idx, dtype=int)[None, :], include_zero_term)[0]


def qei_monte_carlo(gp: GpPosterior, points, S: int, rng: np.random.Generator):
    """Monte Carlo batch expected improvement with its standard error."""
    if S < 2:
        raise InvalidInputError("need at least two samples for a standard error")
    draws = sample_f(gp, points, S, rng)
    improvement = np.maximum(0.0, gp.incumbent - draws.min(axis=1))
    return float(improvement.mean()), float(improvement.std(ddof=1) / np.sqrt(S))


def ei_closed_form(gp: GpPosterior, x) -> float:
    mean, var = gp.predict(np.atleast_2d(x))
    return expected_improvement(gp.incumbent, float(mean[0]), float(np.sqrt(var[0])))


def expected_improvement(f_star: float, mu: float, sd: float) -> float:
    gap = f_star - mu
    if sd < 1e-12:
        return max(0.0, gap)
    z = gap / sd
    return float(gap * norm.cdf(z) + sd * norm.pdf(z))


def _product_functional(grid_draws, weights, q, f_star) -> float:
    S, G = grid_draws.shape
    total = 0.0
    for tup in itertools.product(range(G), repeat=q):
        prob = float(np.prod(weights[list(tup)]))
        if prob == 0.0:
            continue
        gain = np.maximum(0.0, f_star - grid_draws[:, tup].min(axis=1))
        total += prob * gain.mean()
    return total


def concavity_probe(grid_draws, mu0, mu1, lam: float, q: int, f_star: float):
    """Compare the product-measure batch EI at a mixture against the mixture of values.

    The functional is computed exactly over the ``G**q`` grid tuples, using the
    same ``S`` realisations for every measure. Returns ``(lhs, rhs)`` with
    ``lhs = F[lam mu1 + (1 - lam) mu0]`` and ``rhs = lam F[mu1] + (1 - lam) F[mu0]``.
    """
    grid_draws = np.atleast_2d(np.asarray(grid_draws, dtype=float))
    mu0 = np.asarray(mu0, dtype=float)
    mu1 = np.asarray(mu1, dtype=float)
    G = grid_draws.shape[1]
    for w in (mu0, mu1):
        if w.shape != (G,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise InvalidInputError("measure weights must be non-negative and sum to one")
    if not 0.0 <= lam <= 1.0:
        raise InvalidInputError("lambda must lie in [0, 1]")
    if G ** q > 8 ** 3:
        raise InvalidInputError("grid too large to enumerate")
    mix = lam * mu1 + (1.0 - lam) * mu0
    lhs = _product_functional(grid_draws, mix, q, f_star)
    rhs = lam * _product_functional(grid_draws, mu1, q, f_star) + (1.0 - lam) * _product_functional(grid_draws, mu0, q, f_star)
    return lhs, rhs
