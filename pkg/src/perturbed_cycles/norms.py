"""Adapted norm in which a stable matrix is a strict contraction.

For ``rho(A) < r = 1 - epsilon`` the series norm

    |x|' = sum_{k=0}^{K} |A^k x| / r^k

satisfies ``|A x|' <= r |x|'`` exactly once ``||A^{K+1}|| <= r^{K+1}``, and
``|x| <= |x|' <= gamma2 |x|``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

Array = np.ndarray

TAIL_TOL = 1e-12


class NotContracting(ValueError):
    """Spectral radius does not leave room for the requested contraction factor."""


@dataclass(frozen=True)
class NormOracle:
    A: Array
    epsilon: float
    r: float
    K: int
    gamma1: float
    gamma2: float
    tail_bound: float
    powers: Array  # A^k / r^k for k = 0..K

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    def __call__(self, x) -> Array:
        return self.norm(x)

    def norm(self, x) -> Array:
        """Adapted norm of ``x`` with shape ``(..., d)``."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ValueError(f"expected last axis {self.dim}, got {x.shape[-1]}")
        if self.dim == 1:
            return np.abs(x[..., 0]) * self._scalar_factor
        images = np.einsum("kij,...j->...ki", self.powers, x)
        return np.linalg.norm(images, axis=-1).sum(axis=-1)

    @property
    def _scalar_factor(self) -> float:
        return float(np.abs(self.powers[:, 0, 0]).sum())

    def operator_norm(self, M, n_starts: int = 20, seed: int = 0) -> float:
        """``sup |M x|' / |x|'`` by multistart local maximization (a lower estimate).

        Exact in one dimension.
        """
        M = np.atleast_2d(np.asarray(M, dtype=float))
        if self.dim == 1:
            return float(abs(M[0, 0]))
        rng = np.random.default_rng(seed)
        ratio = lambda x: self.norm(M @ x) / max(self.norm(x), 1e-300)
        best = 0.0
        for _ in range(n_starts):
            x0 = rng.standard_normal(self.dim)
            res = minimize(lambda x: -ratio(x), x0, method="Nelder-Mead",
                           options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 4000})
            best = max(best, -res.fun, ratio(x0))
        return float(best)

    def operator_norm_bound(self, M) -> float:
        """Rigorous upper bound ``gamma2 ||M||_2 / gamma1`` on ``||M||'``."""
        return float(self.gamma2 * np.linalg.norm(np.atleast_2d(M), 2) / self.gamma1)


def _tail_parameters(A: Array, r: float):
    """Block length ``q`` with ``c = ||A^q|| / r^q <= 1/2`` and the partial sum over one block."""
    d = A.shape[0]
    P = np.eye(d)
    block = []
    for q in range(1, 100_000):
        block.append(np.linalg.norm(P, 2))
        P = (P @ A) / r
        c = np.linalg.norm(P, 2)
        if c <= 0.5:
            return q, c, float(sum(block))
    raise NotContracting("powers of A / r do not decay")


def adapted_norm(A, epsilon: float, margin: float = 1e-9) -> NormOracle:
    """Build the series norm for ``A`` with contraction factor ``1 - epsilon``.

    Parameters
    ----------
    A : (d, d) array
    epsilon : float in (0, 1)
    margin : float
        Required gap ``1 - epsilon - rho(A)``.

    Raises
    ------
    NotContracting
        If ``rho(A) > 1 - epsilon - margin``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("A must be square")
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    r = 1.0 - epsilon
    rho = float(np.abs(np.linalg.eigvals(A)).max())
    if rho > r - margin:
        raise NotContracting(f"spectral radius {rho:.6g} exceeds 1 - epsilon - margin = {r - margin:.6g}")

    d = A.shape[0]
    if not np.any(A):
        powers = np.eye(d)[None]
        return NormOracle(A=A, epsilon=epsilon, r=r, K=0, gamma1=1.0, gamma2=1.0, tail_bound=0.0,
                          powers=powers)

    # Tail: for k = jq + i, ||A^k||/r^k <= c^j ||A^i||/r^i, so the sum over j >= J
    # is at most block * c^J / (1 - c).
    q, c, block = _tail_parameters(A, r)
    if c == 0.0:
        J = 1
    else:
        J = max(1, int(np.ceil(np.log(TAIL_TOL * (1 - c) / block) / np.log(c))))
    K = J * q - 1

    powers = [np.eye(d)]
    scaled = A / r
    for _ in range(K):
        powers.append(powers[-1] @ scaled)
    # exact contraction needs ||A^{K+1}|| / r^{K+1} <= 1
    nxt = powers[-1] @ scaled
    while np.linalg.norm(nxt, 2) > 1.0:
        powers.append(nxt)
        nxt = nxt @ scaled
    powers = np.array(powers)
    K = len(powers) - 1
    tail = block * c ** J / (1 - c) if c > 0 else 0.0
    gamma2 = float(sum(np.linalg.norm(p, 2) for p in powers) + tail)
    return NormOracle(A=A, epsilon=epsilon, r=r, K=K, gamma1=1.0, gamma2=gamma2, tail_bound=float(tail),
                      powers=powers)


def in_domain(x, oracle: NormOracle, h: float):
    """Membership in the closed ball ``|x|' <= h``."""
    if not h > 0:
        raise ValueError("h must be positive")
    return oracle.norm(x) <= h


def equivalence_constants(oracle: NormOracle) -> tuple[float, float]:
    return oracle.gamma1, oracle.gamma2
