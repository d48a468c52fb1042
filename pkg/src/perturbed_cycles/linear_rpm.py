"""Random Poincare maps: the linearized map, the Kesten iteration and the full return map.

The linearized map is

    rho_n = A (I + sigma zeta_n B) rho_{n-1} + sigma eta_n,

with ``(zeta_n, eta_n)`` IID Gaussian of covariance ``Sigma``. The full map is
realized by integrating the SDE between returns to the section through ``u(0)``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np
from scipy.linalg import sqrtm

from .cycle_geometry import FrameBundle, LimitCycle
from .norms import NormOracle
from .sde_core import Diffusion, GaussianBlocks, VectorField, rk4_step

Array = np.ndarray


def psd_factor(S: Array, tol: float = 1e-10) -> Array:
    """``L`` with ``L L^T = S`` for symmetric positive semidefinite ``S``.

    Cholesky when possible, otherwise a clipped eigendecomposition.
    """
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if not np.allclose(S, S.T, rtol=0, atol=tol * max(1.0, np.abs(S).max())):
        raise ValueError("covariance must be symmetric")
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    if w.min() < -tol * max(1.0, np.abs(w).max()):
        raise ValueError(f"covariance is not positive semidefinite (eigenvalue {w.min():.3g})")
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        return V * np.sqrt(np.clip(w, 0.0, None))


@dataclass(frozen=True)
class LinearPMSpec:
    """Linearized Poincare map; ``Sigma`` is the covariance of ``(zeta, eta)``, zeta first."""

    A: Array
    B: Array
    sigma: float
    Sigma: Array
    seed: Optional[int] = None
    factor: Array = field(init=False, repr=False)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        S = np.atleast_2d(np.asarray(self.Sigma, dtype=float))
        d = A.shape[0]
        if A.shape != (d, d) or B.shape != (d, d):
            raise ValueError(f"A and B must be {d}x{d}, got {A.shape} and {B.shape}")
        if S.shape != (d + 1, d + 1):
            raise ValueError(f"Sigma must be {(d + 1, d + 1)} for transverse dim {d}, got {S.shape}")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "Sigma", S)
        object.__setattr__(self, "factor", psd_factor(S))

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    @classmethod
    def from_coefficients(cls, coeffs, sigma: float, seed=None) -> "LinearPMSpec":
        return cls(A=coeffs.A, B=coeffs.B, sigma=sigma, Sigma=coeffs.Sigma, seed=seed)


@dataclass(frozen=True)
class KestenSpec:
    """``y_n = A (I + sigma xi_n B) y_{n-1} + delta G eta_n`` with standard normal ``xi, eta``.

    A ``G`` that is not symmetric positive definite is replaced by
    ``(G G^T)^{1/2}``, which leaves the law of ``G eta`` unchanged.
    """

    A: Array
    B: Array
    G: Array
    sigma: float
    delta: float
    seed: Optional[int] = None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        G = np.atleast_2d(np.asarray(self.G, dtype=float))
        d = A.shape[0]
        for name, M in (("A", A), ("B", B), ("G", G)):
            if M.shape != (d, d):
                raise ValueError(f"{name} must be {d}x{d}, got {M.shape}")
        if self.sigma < 0 or self.delta < 0:
            raise ValueError("sigma and delta must be non-negative")
        if np.linalg.matrix_rank(G) < d:
            raise ValueError("G must be nondegenerate")
        if not _is_spd(G):
            G = np.real(sqrtm(G @ G.T))
            G = 0.5 * (G + G.T)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "G", G)

    @property
    def dim(self) -> int:
        return self.A.shape[0]


def _is_spd(G: Array) -> bool:
    if not np.allclose(G, G.T, rtol=0, atol=1e-12 * max(1.0, np.abs(G).max())):
        return False
    return bool(np.linalg.eigvalsh(0.5 * (G + G.T)).min() > 0)


def draw_pm_noise(spec: LinearPMSpec, rng: np.random.Generator, size=()) -> tuple[Array, Array]:
    """Joint draws ``(zeta, eta)`` with leading shape ``size``."""
    size = tuple(np.atleast_1d(size)) if size != () else ()
    z = rng.standard_normal(size + (spec.dim + 1,)) @ spec.factor.T
    return z[..., 0], z[..., 1:]


def _linear_update(state, zeta, eta, spec: LinearPMSpec):
    Bx = state @ spec.B.T
    return (state + spec.sigma * zeta[..., None] * Bx) @ spec.A.T + spec.sigma * eta


def step_linear(state, spec: LinearPMSpec, rng: np.random.Generator) -> Array:
    """One step of the linearized map for a state of shape ``(..., d)``."""
    state = np.asarray(state, dtype=float)
    zeta, eta = draw_pm_noise(spec, rng, state.shape[:-1])
    return _linear_update(state, zeta, eta, spec)


def step_kesten(y, spec: KestenSpec, rng: np.random.Generator) -> Array:
    y = np.asarray(y, dtype=float)
    xi = rng.standard_normal(y.shape[:-1])
    eta = rng.standard_normal(y.shape)
    return (y + spec.sigma * xi[..., None] * (y @ spec.B.T)) @ spec.A.T + spec.delta * eta @ spec.G.T


# --- Lyapunov exponent -------------------------------------------------------

@dataclass(frozen=True)
class LyapunovEstimate:
    alpha: float
    stderr: float
    n_steps: int
    sufficient_bound: Optional[float] = None  # log((1 - eps)(1 + sigma c)), c = ||B||' sqrt(2/pi)


def lyapunov_top(spec: KestenSpec, n_steps: int, rng: Optional[np.random.Generator] = None, *,
                 oracle: Optional[NormOracle] = None, n_batches: int = 50) -> LyapunovEstimate:
    """Top Lyapunov exponent of ``prod A (I + sigma xi_k B)`` by QR re-orthogonalization.

    The standard error comes from batch means of the per-step log growth of the
    leading direction. With an ``oracle`` the report includes the sufficient
    bound ``log((1 - eps)(1 + sigma ||B||' sqrt(2/pi)))``.
    """
    if n_steps < n_batches:
        raise ValueError("n_steps must be at least n_batches")
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    d = spec.dim
    xi = rng.standard_normal(n_steps)
    if d == 1:
        a, b = spec.A[0, 0], spec.B[0, 0]
        with np.errstate(divide="ignore"):
            incr = np.log(np.abs(a * (1.0 + spec.sigma * xi * b)))
    else:
        incr = np.empty(n_steps)
        Q = np.eye(d)
        eye = np.eye(d)
        for k in range(n_steps):
            M = spec.A @ (eye + spec.sigma * xi[k] * spec.B)
            Q, Rm = np.linalg.qr(M @ Q)
            # sign-fix so the leading diagonal tracks a single direction
            s = np.sign(np.diag(Rm))
            s[s == 0] = 1.0
            Q = Q * s
            Rm = s[:, None] * Rm
            incr[k] = np.log(abs(Rm[0, 0])) if Rm[0, 0] != 0 else -np.inf
    alpha = float(np.mean(incr))
    usable = n_steps - n_steps % n_batches
    means = incr[:usable].reshape(n_batches, -1).mean(axis=1)
    se = float(np.std(means, ddof=1) / np.sqrt(n_batches)) if np.all(np.isfinite(means)) else float("nan")
    bound = None
    if oracle is not None:
        c = oracle.operator_norm(spec.B) * np.sqrt(2.0 / np.pi)
        bound = float(np.log((1.0 - oracle.epsilon) * (1.0 + spec.sigma * c)))
    return LyapunovEstimate(alpha=alpha, stderr=se, n_steps=n_steps, sufficient_bound=bound)


def sigma_threshold(oracle: NormOracle, B) -> float:
    """Largest sigma for which the sufficient Lyapunov bound is negative: ``eps / (c (1 - eps))``."""
    c = oracle.operator_norm(B) * np.sqrt(2.0 / np.pi)
    return float(oracle.epsilon / (c * (1.0 - oracle.epsilon))) if c > 0 else float("inf")


# --- exit times ----------------------------------------------------------------

EXIT, CENSORED, ESCAPE, LOST = 0, 1, 2, 3
KIND_NAMES = {EXIT: "exit", CENSORED: "censored", ESCAPE: "global_escape", LOST: "no_return"}


@dataclass
class ExitRun:
    """Exit times of a replicate ensemble; ``tau`` equals ``max_n`` for censored records."""

    tau: Array
    censored: Array
    kind: Array
    max_n: int
    rho: Optional[list] = None  # per-replicate transverse coordinates at each return

    def __len__(self):
        return len(self.tau)

    @staticmethod
    def concat(runs: Iterable["ExitRun"]) -> "ExitRun":
        runs = list(runs)
        rho = None
        if all(r.rho is not None for r in runs):
            rho = [x for r in runs for x in r.rho]
        return ExitRun(tau=np.concatenate([r.tau for r in runs]),
                       censored=np.concatenate([r.censored for r in runs]),
                       kind=np.concatenate([r.kind for r in runs]), max_n=runs[0].max_n, rho=rho)


def simulate_exit_linear(spec: LinearPMSpec, oracle: NormOracle, h: float, start, max_n: int,
                         rng: np.random.Generator, n_replicates: int = 1) -> ExitRun:
    """First ``n`` with ``|rho_n|' > h`` for ``n_replicates`` independent chains.

    Chains still inside the closed ball after ``max_n`` steps are censored.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    if max_n < 1:
        raise ValueError("max_n must be positive")
    start = np.asarray(start, dtype=float).reshape(spec.dim)
    if oracle.norm(start) > h:
        raise ValueError("start lies outside D_h")
    tau = np.full(n_replicates, max_n, dtype=np.int64)
    censored = np.ones(n_replicates, dtype=bool)
    alive = np.arange(n_replicates)
    x = np.tile(start, (n_replicates, 1))
    for n in range(1, max_n + 1):
        if len(alive) == 0:
            break
        z = rng.standard_normal((len(alive), spec.dim + 1)) @ spec.factor.T
        x = _linear_update(x, z[:, 0], z[:, 1:], spec)
        out = oracle.norm(x) > h
        if out.any():
            tau[alive[out]] = n
            censored[alive[out]] = False
            keep = ~out
            alive, x = alive[keep], x[keep]
    kind = np.where(censored, CENSORED, EXIT)
    return ExitRun(tau=tau, censored=censored, kind=kind, max_n=max_n)


def simulate_exit_kesten(spec: KestenSpec, oracle: NormOracle, h: float, start, max_n: int,
                         rng: np.random.Generator, n_replicates: int = 1) -> ExitRun:
    """Exit from the ball ``|y|' <= h`` for the Kesten iteration."""
    if not h > 0:
        raise ValueError("h must be positive")
    start = np.asarray(start, dtype=float).reshape(spec.dim)
    tau = np.full(n_replicates, max_n, dtype=np.int64)
    censored = np.ones(n_replicates, dtype=bool)
    alive = np.arange(n_replicates)
    y = np.tile(start, (n_replicates, 1))
    for n in range(1, max_n + 1):
        if len(alive) == 0:
            break
        y = step_kesten(y, spec, rng)
        out = oracle.norm(y) > h
        if out.any():
            tau[alive[out]] = n
            censored[alive[out]] = False
            alive, y = alive[~out], y[~out]
    kind = np.where(censored, CENSORED, EXIT)
    return ExitRun(tau=tau, censored=censored, kind=kind, max_n=max_n)


@dataclass(frozen=True)
class Section:
    """Hyperplane through ``u(0)`` with normal ``v(0)``, coordinates ``rho = Z(0)^T (x - u(0))``."""

    point: Array
    normal: Array
    Z: Array
    period_T: float
    locality: float

    @classmethod
    def from_cycle(cls, cycle: LimitCycle, frame: FrameBundle, locality: Optional[float] = None) -> "Section":
        if locality is None:
            locality = 0.25 * float(np.linalg.norm(np.ptp(cycle.u, axis=0)))
        return cls(point=cycle.u[0].copy(), normal=frame.v[0].copy(), Z=frame.Z[0].copy(),
                   period_T=cycle.period_T, locality=locality)


def simulate_exit_full(field: VectorField, diff: Diffusion, cycle: LimitCycle, frame: FrameBundle,
                       oracle: NormOracle, sigma: float, h: float, max_returns: int,
                       rng: np.random.Generator, *, n_replicates: int = 1, dt: Optional[float] = None,
                       start=None, box: Optional[tuple] = None, no_return_factor: float = 3.0,
                       record_rho: bool = False, section: Optional[Section] = None,
                       scheme: str = "rk4-em") -> ExitRun:
    """Exit from ``D_h`` of the full random return map, by Euler-Maruyama in original time.

    A return is an upward crossing of the section at distance below
    ``section.locality`` from ``u(0)``, at least half a period after the previous
    return. The run of a replicate ends when

    * ``|rho|' > h`` at a return (``kind == EXIT``),
    * the state leaves ``box = (lower, upper)`` (``ESCAPE``),
    * no return occurs within ``no_return_factor`` periods (``LOST``), or
    * ``max_returns`` returns stay inside ``D_h`` (``CENSORED``).

    ``tau`` is the index of the return at which the run ended; an escape or a
    missing return between returns ``n - 1`` and ``n`` is recorded as ``n``.

    ``scheme="em"`` is plain Euler-Maruyama. The default ``"rk4-em"`` advances
    the drift by an RK4 step and adds the same left-point noise increment; plain
    EM displaces the discrete cycle by O(dt), which biases the returns.
    """
    if scheme not in ("em", "rk4-em"):
        raise ValueError("scheme must be 'em' or 'rk4-em'")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if not h > 0:
        raise ValueError("h must be positive")
    sec = section or Section.from_cycle(cycle, frame)
    T = sec.period_T
    if dt is None:
        dt = T / 1000.0
    d = sec.Z.shape[1]
    start = np.zeros(d) if start is None else np.asarray(start, dtype=float).reshape(d)
    R = n_replicates
    x = np.tile(sec.point + sec.Z @ start, (R, 1))
    since = np.zeros(R)
    count = np.zeros(R, dtype=np.int64)
    tau = np.full(R, max_returns, dtype=np.int64)
    kind = np.full(R, CENSORED, dtype=np.int64)
    rho_log = [[] for _ in range(R)] if record_rho else None
    alive = np.arange(R)
    s_prev = (x - sec.point) @ sec.normal
    guard = 0.5 * T
    timeout = no_return_factor * T
    sq = np.sqrt(dt)
    lo, hi = (None, None) if box is None else (np.asarray(box[0], float), np.asarray(box[1], float))
    noise = None
    while len(alive):
        if noise is None or noise.shape[0] != len(alive):
            noise = GaussianBlocks(rng, (len(alive), field.dim), block=64)
        dw = noise.next() * sq
        if scheme == "em":
            x_new = x + field.drift(x) * dt
        else:
            x_new = rk4_step(field.drift, x, dt)
        if sigma > 0:
            if diff.constant is not None:
                x_new += sigma * dw @ diff.constant.T
            else:
                x_new += sigma * np.einsum("rij,rj->ri", diff.matrix(x), dw)
        since += dt
        s_new = (x_new - sec.point) @ sec.normal
        done = np.zeros(len(alive), dtype=bool)

        if lo is not None:
            esc = np.any((x_new < lo) | (x_new > hi), axis=1) | ~np.all(np.isfinite(x_new), axis=1)
        else:
            esc = ~np.all(np.isfinite(x_new), axis=1)
        if esc.any():
            idx = alive[esc]
            tau[idx] = count[esc] + 1
            kind[idx] = ESCAPE
            done |= esc

        cross = (s_prev < 0) & (s_new >= 0) & (since >= guard) & ~done
        if cross.any():
            lam = s_prev[cross] / (s_prev[cross] - s_new[cross])
            xc = x[cross] + lam[:, None] * (x_new[cross] - x[cross])
            near = np.linalg.norm(xc - sec.point, axis=1) <= sec.locality
            ci = np.nonzero(cross)[0][near]
            if len(ci):
                rho = (xc[near] - sec.point) @ sec.Z
                count[ci] += 1
                since[ci] = 0.0
                if record_rho:
                    for j, r_ in zip(ci, rho):
                        rho_log[alive[j]].append(r_)
                out = oracle.norm(rho) > h
                ex = ci[out]
                tau[alive[ex]] = count[ex]
                kind[alive[ex]] = EXIT
                done[ex] = True
                full = ci[~out][count[ci[~out]] >= max_returns]
                tau[alive[full]] = max_returns
                done[full] = True  # kind stays CENSORED

        lost = (since > timeout) & ~done
        if lost.any():
            tau[alive[lost]] = count[lost] + 1
            kind[alive[lost]] = LOST
            done |= lost

        s_prev = s_new
        x = x_new
        if done.any():
            keep = ~done
            alive, x, s_prev, since, count = alive[keep], x[keep], s_prev[keep], since[keep], count[keep]
            noise = None
    censored = kind == CENSORED
    rho_out = [np.array(r).reshape(-1, d) for r in rho_log] if record_rho else None
    return ExitRun(tau=tau, censored=censored, kind=kind, max_n=max_returns, rho=rho_out)


def one_return_statistics(field: VectorField, diff: Diffusion, cycle: LimitCycle, frame: FrameBundle,
                          sigma: float, rng: np.random.Generator, n_replicates: int,
                          dt: Optional[float] = None, scheme: str = "rk4-em") -> Array:
    """Transverse coordinate ``rho_1`` after one return from ``rho_0 = 0`` (rows = replicates).

    Replicates lost before returning are dropped.
    """
    from .norms import adapted_norm

    oracle = adapted_norm(np.zeros((cycle.dim - 1,) * 2), 0.5)
    run = simulate_exit_full(field, diff, cycle, frame, oracle, sigma, np.inf, 1, rng,
                             n_replicates=n_replicates, dt=dt, record_rho=True, scheme=scheme)
    rows = [r[0] for r in run.rho if len(r)]
    return np.array(rows).reshape(-1, cycle.dim - 1)


def write_exit_csv(path, run: ExitRun, seed, *, header_line: Optional[str] = None, start_id: int = 0,
                   extra: Optional[dict] = None, append: bool = False):
    """Stream ``(replicate, tau, censored, kind, seed)`` rows, plus constant ``extra`` columns.

    With ``append=True`` rows are added to an existing file without a header.
    """
    extra = dict(extra or {})
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.writer(fh)
        if not append:
            if header_line is not None:
                fh.write(f"# {header_line}\n")
            w.writerow(["replicate", "tau", "censored", "kind", "seed", *extra])
        tail = [repr(v) if isinstance(v, float) else v for v in extra.values()]
        for i, (t, c, k) in enumerate(zip(run.tau, run.censored, run.kind)):
            w.writerow([start_id + i, int(t), int(bool(c)), KIND_NAMES[int(k)], seed, *tail])
