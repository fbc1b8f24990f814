"""Isotropic Matérn 5/2 kernel with the cross-derivatives used for joint
(f, grad f) Gaussian-process inference.

With ``u = x - y``, ``r = |u|`` and ``s = sqrt(5) r / l``::

    k(x, y)          = a (1 + s + s^2 / 3) exp(-s)
    dk/dy            = A(r) u,            A(r) = a 5 / (3 l^2) (1 + s) exp(-s)
    d^2k / dx dy     = A(r) I - B(r) u u^T,  B(r) = a 25 / (3 l^4) exp(-s)

Both derivative expressions are regular at ``r = 0``, so no special-casing of
the diagonal is required beyond what the formulae already give.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

SQRT5 = np.sqrt(5.0)


class InvalidInputError(ValueError):
    """Raised for non-finite or malformed numerical inputs."""


@dataclass(frozen=True)
class KernelParams:
    amplitude: float = 1.0
    lengthscale: float = 1.0
    noise_variance: float = 0.0

    def __post_init__(self):
        for name in ("amplitude", "lengthscale", "noise_variance"):
            value = getattr(self, name)
            if not np.isfinite(value):
                raise InvalidInputError(f"{name} must be finite, got {value!r}")
        if self.amplitude <= 0 or self.lengthscale <= 0:
            raise InvalidInputError("amplitude and lengthscale must be positive")
        if self.noise_variance < 0:
            raise InvalidInputError("noise_variance must be non-negative")

    def to_dict(self) -> dict:
        return {k: float(v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "KernelParams":
        return cls(**{k: float(d[k]) for k in ("amplitude", "lengthscale", "noise_variance") if k in d})


def _as_points(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("kernel inputs must be finite")
    return X


def _differences(X, Y):
    X, Y = _as_points(X), _as_points(Y)
    if X.shape[1] != Y.shape[1]:
        raise InvalidInputError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    U = X[:, None, :] - Y[None, :, :]
    R = np.sqrt(np.einsum("ijk,ijk->ij", U, U))
    return U, R


def matern52(X, Y, p: KernelParams) -> np.ndarray:
    """Covariance matrix ``k(X_i, Y_j)`` of shape ``(n, m)``."""
    _, R = _differences(X, Y)
    S = SQRT5 * R / p.lengthscale
    return p.amplitude * (1.0 + S + S * S / 3.0) * np.exp(-S)


def matern52_grad_y(X, Y, p: KernelParams) -> np.ndarray:
    """``dk(X_i, Y_j)/dY_j`` with shape ``(n, m, d)``.

    The gradient with respect to the first argument is the negative of this.
    """
    U, R = _differences(X, Y)
    S = SQRT5 * R / p.lengthscale
    A = p.amplitude * 5.0 / (3.0 * p.lengthscale**2) * (1.0 + S) * np.exp(-S)
    return A[..., None] * U


def matern52_hess_xy(X, Y, p: KernelParams) -> np.ndarray:
    """``d^2 k(X_i, Y_j) / dX_i dY_j`` with shape ``(n, m, d, d)``."""
    U, R = _differences(X, Y)
    S = SQRT5 * R / p.lengthscale
    E = np.exp(-S)
    A = p.amplitude * 5.0 / (3.0 * p.lengthscale**2) * (1.0 + S) * E
    B = p.amplitude * 25.0 / (3.0 * p.lengthscale**4) * E
    d = U.shape[-1]
    return A[..., None, None] * np.eye(d) - B[..., None, None] * U[..., :, None] * U[..., None, :]


def matern52_eval(x, y, p: KernelParams) -> float:
    """Kernel value for a single pair of points (no white-noise term)."""
    return float(matern52(x, y, p)[0, 0])


def matern52_derivatives(x, y, p: KernelParams):
    """Return ``(dk/dy, d^2k/dxdy)`` for a single pair of points."""
    return matern52_grad_y(x, y, p)[0, 0], matern52_hess_xy(x, y, p)[0, 0]
