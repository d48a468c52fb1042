"""Analytic benchmark systems with known cycles."""
from __future__ import annotations

import numpy as np

from .sde_core import Diffusion, VectorField


def hopf_normal_form() -> VectorField:
    """x' = x - y - x r^2, y' = x + y - y r^2: unit-circle cycle, period 2 pi."""

    def drift(x):
        x = np.asarray(x)
        a, b = x[..., 0], x[..., 1]
        r2 = a * a + b * b
        return np.stack([a - b - a * r2, a + b - b * r2], axis=-1)

    def jacobian(x):
        x = np.asarray(x)
        a, b = x[..., 0], x[..., 1]
        out = np.empty(x.shape[:-1] + (2, 2), dtype=np.result_type(x, float))
        out[..., 0, 0] = 1 - 3 * a * a - b * b
        out[..., 0, 1] = -1 - 2 * a * b
        out[..., 1, 0] = 1 - 2 * a * b
        out[..., 1, 1] = 1 - a * a - 3 * b * b
        return out

    return VectorField(dim=2, drift=drift, jacobian=jacobian, name="hopf")


def linear_focus(rate: float = 0.5, omega: float = 1.0) -> VectorField:
    """Stable linear focus: no periodic orbit."""
    M = np.array([[-rate, -omega], [omega, -rate]])

    def drift(x):
        return np.asarray(x) @ M.T

    return VectorField(dim=2, drift=drift, jacobian=lambda x: np.broadcast_to(M, np.shape(x)[:-1] + (2, 2)),
                       name="focus")


def hopf_diffusion() -> Diffusion:
    return Diffusion.identity(2)
