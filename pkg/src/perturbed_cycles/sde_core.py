"""Fixed-step integrators for ODEs and Ito SDEs, plus section-crossing detection.

Vector fields are evaluated on arrays whose last axis is the state, so the same
callable serves a single state ``(m,)`` and an ensemble ``(R, m)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

Array = np.ndarray


class IntegrationDiverged(RuntimeError):
    """Raised when an integrator produces a non-finite state."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"integration diverged at step {step}")


def complex_step_jacobian(drift: Callable[[Array], Array], h: float = 1e-30):
    """Jacobian of an analytic drift via complex-step differentiation.

    All ``m`` perturbed states are evaluated in one batched drift call.
    """

    def jac(x):
        x = np.asarray(x, dtype=float)
        m = x.shape[-1]
        pert = x[..., None, :] + 1j * h * np.eye(m)
        # rows of `out` are d f / d x_j; transpose to J[i, j] = d f_i / d x_j
        out = drift(pert)
        return np.swapaxes(out.imag / h, -1, -2)

    return jac


@dataclass(frozen=True)
class VectorField:
    """Autonomous drift ``f`` on R^m with its Jacobian.

    ``drift`` must accept arrays of shape ``(..., m)``. If ``jacobian`` is
    omitted it is built by complex-step differentiation, which requires the
    drift to be analytic (no ``abs``/``max``/comparisons on the state).
    """

    dim: int
    drift: Callable[[Array], Array]
    jacobian: Optional[Callable[[Array], Array]] = None
    name: str = ""

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if self.jacobian is None:
            object.__setattr__(self, "jacobian", complex_step_jacobian(self.drift))

    def __call__(self, x):
        return self.drift(x)

    def check_jacobian(self, points: Array, rtol: float = 1e-4) -> float:
        """Largest relative mismatch between ``jacobian`` and central differences.

        Step is ``1e-6 * (1 + |x|)`` per probe point. Raises ``ValueError`` if the
        mismatch exceeds ``rtol``.
        """
        worst = 0.0
        for x in np.atleast_2d(points):
            step = 1e-6 * (1.0 + np.linalg.norm(x))
            fd = np.empty((self.dim, self.dim))
            for j in range(self.dim):
                e = np.zeros(self.dim)
                e[j] = step
                fd[:, j] = (self.drift(x + e) - self.drift(x - e)) / (2 * step)
            jac = self.jacobian(x)
            scale = max(np.abs(fd).max(), 1e-12)
            worst = max(worst, np.abs(jac - fd).max() / scale)
        if worst > rtol:
            raise ValueError(f"jacobian mismatch {worst:.3g} exceeds {rtol:g}")
        return worst


@dataclass(frozen=True)
class Diffusion:
    """State-dependent noise matrix ``P(x)``.

    ``constant`` holds the matrix when it does not depend on the state; the
    integrators then skip per-state evaluation.
    """

    matrix: Callable[[Array], Array]
    constant: Optional[Array] = None

    @classmethod
    def from_constant(cls, mat) -> "Diffusion":
        mat = np.array(mat, dtype=float)
        mat.setflags(write=False)
        return cls(matrix=lambda x: np.broadcast_to(mat, np.shape(x)[:-1] + mat.shape), constant=mat)

    @classmethod
    def identity(cls, dim: int) -> "Diffusion":
        return cls.from_constant(np.eye(dim))

    def __call__(self, x):
        return self.matrix(x)

    def min_singular_value(self, points: Array) -> float:
        """Smallest singular value of ``P`` over the probe points (0 means degenerate)."""
        return float(min(np.linalg.svd(self.matrix(x), compute_uv=False).min() for x in np.atleast_2d(points)))


@dataclass
class Path:
    times: Array
    states: Array
    seed: Optional[int] = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.times.ndim != 1 or len(self.times) != len(self.states):
            raise ValueError("times and states must have matching length")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    def __len__(self):
        return len(self.times)


def _grid(t_span, dt):
    t0, t1 = map(float, t_span)
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not t1 > t0:
        raise ValueError("t_span must satisfy t1 > t0")
    n = int(np.ceil((t1 - t0) / dt - 1e-9))
    return t0 + dt * np.arange(n + 1), n


def rk4_step(f, x, h):
    k1 = f(x)
    k2 = f(x + 0.5 * h * k1)
    k3 = f(x + 0.5 * h * k2)
    k4 = f(x + h * k3)
    return x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate_deterministic(field: VectorField, x0, t_span, dt: float) -> Path:
    """Classical RK4 on a fixed grid; the last step is shortened to hit ``t1``."""
    times, n = _grid(t_span, dt)
    times[-1] = float(t_span[1])
    x = np.array(x0, dtype=float)
    states = np.empty((n + 1, x.size))
    states[0] = x
    for k in range(n):
        x = rk4_step(field.drift, x, times[k + 1] - times[k])
        if not np.all(np.isfinite(x)):
            raise IntegrationDiverged(k + 1)
        states[k + 1] = x
    return Path(times, states)


# --- random streams -------------------------------------------------------

def stream(seed, *key: int) -> np.random.Generator:
    """Independent generator for ``(seed, *key)``, e.g. ``(master, batch_index)``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key)))


class GaussianBlocks:
    """Serves ``N(0, 1)`` draws of a fixed shape one step at a time from a generator.

    Draws are generated in blocks; the sequence a step receives does not depend on
    the block size, since the generator fills arrays in C order.
    """

    def __init__(self, rng: np.random.Generator, shape: tuple, block: int = 256):
        self.rng = rng
        self.shape = tuple(shape)
        self.block = block
        self._buf = None
        self._i = block

    def next(self) -> Array:
        if self._i == self.block:
            self._buf = self.rng.standard_normal((self.block,) + self.shape)
            self._i = 0
        out = self._buf[self._i]
        self._i += 1
        return out


def _noise_term(diff: Diffusion, x, dw):
    if diff.constant is not None:
        return dw @ diff.constant.T
    return np.einsum("...ij,...j->...i", diff.matrix(x), dw)


def integrate_sde(field: VectorField, diff: Diffusion, x0, t_span, dt: float,
                  sigma: float, seed=None, *, rng: Optional[np.random.Generator] = None) -> Path:
    """Euler-Maruyama for ``dx = f(x) dt + sigma P(x) dW`` (Ito).

    Strong order 0.5, weak order 1. With ``sigma == 0`` this is exactly explicit
    Euler, one order below :func:`integrate_deterministic`; convergence is checked
    by refining ``dt``.
    """
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    times, n = _grid(t_span, dt)
    x = np.array(x0, dtype=float)
    m = x.size
    if rng is None:
        rng = stream(0 if seed is None else seed)
    steps = np.full(n, float(dt))
    steps[-1] = float(t_span[1]) - times[-2]
    times[-1] = float(t_span[1])
    noise = GaussianBlocks(rng, (m,))
    states = np.empty((n + 1, m))
    states[0] = x
    for k in range(n):
        h = steps[k]
        dw = noise.next() * np.sqrt(h)
        x = x + field.drift(x) * h
        if sigma > 0:
            x = x + sigma * _noise_term(diff, states[k], dw)
        if not np.all(np.isfinite(x)):
            raise IntegrationDiverged(k + 1)
        states[k + 1] = x
    return Path(times, states, seed=seed)


def euler_maruyama_ensemble(field: VectorField, diff: Diffusion, x0, n_steps: int, dt: float,
                            sigma: float, rng: np.random.Generator, *, record_every: int = 1,
                            observe: Optional[Sequence[int]] = None):
    """Advance an ensemble ``x0`` of shape ``(R, m)`` by ``n_steps`` EM steps.

    Returns ``(final_state, record)`` where ``record`` has shape
    ``(n_steps // record_every + 1, R, len(observe))`` (all coordinates if
    ``observe`` is None).
    """
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    x = np.array(x0, dtype=float)
    R, m = x.shape
    cols = list(range(m)) if observe is None else list(observe)
    rec = np.empty((n_steps // record_every + 1, R, len(cols)))
    rec[0] = x[:, cols]
    noise = GaussianBlocks(rng, (R, m), block=max(1, min(256, 2 ** 22 // max(R * m, 1))))
    sq = np.sqrt(dt)
    for k in range(1, n_steps + 1):
        dw = noise.next() * sq
        drift = field.drift(x)
        if sigma > 0:
            x = x + drift * dt + sigma * _noise_term(diff, x, dw)
        else:
            x = x + drift * dt
        if k % record_every == 0:
            if not np.all(np.isfinite(x)):
                raise IntegrationDiverged(k)
            rec[k // record_every] = x[:, cols]
    return x, rec


def detect_section_crossings(path: Path, normal, point, direction: int = 1):
    """Crossings of the hyperplane ``normal . (x - point) = 0`` in ``direction``.

    Each crossing is located by linear interpolation between the bracketing
    samples. Returns a list of ``(time, state)``.
    """
    if direction not in (1, -1):
        raise ValueError("direction must be +1 or -1")
    if len(path) < 2:
        return []
    s = (path.states - np.asarray(point, dtype=float)) @ np.asarray(normal, dtype=float)
    s = direction * s
    idx = np.nonzero((s[:-1] < 0) & (s[1:] >= 0))[0]
    out = []
    for k in idx:
        lam = s[k] / (s[k] - s[k + 1])
        t = path.times[k] + lam * (path.times[k + 1] - path.times[k])
        x = path.states[k] + lam * (path.states[k + 1] - path.states[k])
        out.append((float(t), x))
    return out
