"""Limit cycle, moving frame and the coefficients of the randomly perturbed Poincare map.

Everything here lives on the rescaled clock: if the cycle of ``x' = f(x)`` has
period ``T``, the stored orbit solves ``x' = T f(x)`` and has period exactly 1.
A noise term ``sigma P dW`` becomes ``sigma sqrt(T) P dW`` on that clock.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import expm, logm, lu_factor, lu_solve
from scipy.optimize import linear_sum_assignment

from .sde_core import Diffusion, VectorField

Array = np.ndarray


class CycleNotFound(RuntimeError):
    pass


class TangentDegenerate(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


class NonHyperbolicCycleWarning(UserWarning):
    pass


class IllConditionedWarning(UserWarning):
    pass


@dataclass(frozen=True)
class LimitCycle:
    """Periodic orbit sampled on ``theta_k = k/N``; ``u`` has N+1 rows (closing point last)."""

    theta_grid: Array
    u: Array
    period_T: float
    field: VectorField
    monodromy: Array
    newton_residual: float
    newton_iterations: int = 0

    @property
    def n_grid(self) -> int:
        return len(self.theta_grid)

    @property
    def dim(self) -> int:
        return self.u.shape[1]

    @property
    def closure_error(self) -> float:
        return float(np.abs(self.u[-1] - self.u[0]).max())

    def rescaled_drift(self, x):
        return self.period_T * self.field.drift(x)


@dataclass(frozen=True)
class FrameBundle:
    """Unit tangent ``v`` (N, m) and orthonormal complement ``Z`` (N, m, m-1).

    ``holonomy`` is the mismatch ``Z_transported(0)^T Z_transported(1)`` that was
    smeared back along the grid; ``Z_end`` is the corrected frame evaluated at the
    closing point of the orbit.
    """

    v: Array
    Z: Array
    holonomy: Array
    v_end: Array
    Z_end: Array

    def orthonormality_error(self) -> float:
        m1 = self.Z.shape[2]
        gram = np.einsum("kij,kil->kjl", self.Z, self.Z) - np.eye(m1)
        cross = np.einsum("ki,kij->kj", self.v, self.Z)
        unit = np.einsum("ki,ki->k", self.v, self.v) - 1.0
        return float(max(np.abs(gram).max(), np.abs(cross).max(), np.abs(unit).max()))

    def periodicity_error(self) -> float:
        return float(np.abs(self.Z_end - self.Z[0]).max())

    def max_step_change(self) -> float:
        """Largest column change between neighbouring grid points, divided by the spacing."""
        n = len(self.Z)
        dz = np.diff(np.concatenate([self.Z, self.Z[:1]]), axis=0)
        return float(np.linalg.norm(dz, axis=1).max() * n)


@dataclass(frozen=True)
class PMCoefficients:
    """Reduced-system data on the theta grid plus the Poincare-map matrices.

    ``X`` and ``b`` have N+1 rows (theta = 0 .. 1 inclusive); the periodic
    coefficients ``a, R, h, H`` have N rows. ``Sigma`` is the covariance of
    ``(zeta, eta)`` with ``zeta`` first. ``to_end[k] = X(1) X(theta_k)^{-1}``.
    """

    theta: Array
    a: Array
    R: Array
    h: Array
    H: Array
    b: Array
    X: Array
    A: Array
    B: Array
    Sigma: Array
    to_end: Array
    period_T: float
    R_end: Array
    sigma_quadrature_error: float = 0.0

    @property
    def transverse_dim(self) -> int:
        return self.A.shape[0]

    @property
    def cov_eta(self) -> Array:
        return self.Sigma[1:, 1:]

    def liouville_error(self) -> float:
        """max_theta |log|det X(theta)| - int_0^theta tr R| using a spectral antiderivative."""
        tr = np.trace(self.R, axis1=1, axis2=2)
        integral = periodic_antiderivative(tr)
        _, logdet = np.linalg.slogdet(self.X)
        return float(np.abs(logdet - integral).max())

    def conjugacy_error(self) -> float:
        """Relative residual of ``X(1) B = R(0) X(1)``."""
        lhs = self.A @ self.B
        rhs = self.R[0] @ self.A
        scale = max(np.linalg.norm(self.R[0]) * np.linalg.norm(self.A), 1e-300)
        return float(np.linalg.norm(lhs - rhs) / scale)


@dataclass(frozen=True)
class StabilityReport:
    moduli: Array
    spectral_radius: float
    epsilon_max: float
    stable: bool
    verdict: str

    def satisfies(self, epsilon: float) -> bool:
        return self.spectral_radius < 1.0 - epsilon


# --- spectral helpers on the periodic grid --------------------------------

def periodic_derivative(values: Array) -> Array:
    """d/dtheta of samples on ``k/N``, period 1, by FFT (Nyquist mode dropped)."""
    n = values.shape[0]
    k = np.fft.fftfreq(n, d=1.0 / n)
    if n % 2 == 0:
        k[n // 2] = 0.0
    spec = np.fft.fft(values, axis=0)
    shape = (n,) + (1,) * (values.ndim - 1)
    return np.fft.ifft(2j * np.pi * k.reshape(shape) * spec, axis=0).real


def centered_derivative(values: Array) -> Array:
    n = values.shape[0]
    return (np.roll(values, -1, axis=0) - np.roll(values, 1, axis=0)) * (n / 2.0)


def periodic_antiderivative(g: Array) -> Array:
    """int_0^theta g on ``theta = k/N, k = 0..N`` for periodic samples ``g`` (N,)."""
    n = len(g)
    spec = np.fft.fft(g) / n
    k = np.fft.fftfreq(n, d=1.0 / n)
    theta = np.arange(n + 1) / n
    out = spec[0].real * theta
    nz = k != 0
    if n % 2 == 0:
        nz &= np.abs(k) != n // 2
    phase = np.exp(2j * np.pi * np.outer(theta, k[nz])) - 1.0
    out = out + (phase @ (spec[nz] / (2j * np.pi * k[nz]))).real
    return out


def shift_resample(values: Array, c: float) -> Array:
    """Trigonometric interpolation of periodic samples to ``(k + c)/N``."""
    n = values.shape[0]
    k = np.fft.fftfreq(n, d=1.0 / n)
    shift = np.exp(2j * np.pi * k * c / n)
    if n % 2 == 0:
        shift[n // 2] = np.cos(np.pi * c)  # real interpolant of the Nyquist mode
    shape = (n,) + (1,) * (values.ndim - 1)
    spec = np.fft.fft(values, axis=0)
    return np.fft.ifft(spec * shift.reshape(shape), axis=0).real


def midpoint_resample(values: Array) -> Array:
    return shift_resample(values, 0.5)


# --- cycle ------------------------------------------------------------------

def _flow_variational(field: VectorField, x0, T: float, n: int, store: bool = False):
    """RK4 over the rescaled clock [0, 1] with n steps for ``y' = T f(y)`` and its variational matrix."""
    m = field.dim
    h = 1.0 / n
    y = np.array(x0, dtype=float)
    phi = np.eye(m)
    traj = np.empty((n + 1, m)) if store else None
    if store:
        traj[0] = y

    def rhs(y, phi):
        return T * field.drift(y), T * (field.jacobian(y) @ phi)

    for k in range(n):
        k1, K1 = rhs(y, phi)
        k2, K2 = rhs(y + 0.5 * h * k1, phi + 0.5 * h * K1)
        k3, K3 = rhs(y + 0.5 * h * k2, phi + 0.5 * h * K2)
        k4, K4 = rhs(y + h * k3, phi + h * K3)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        phi = phi + (h / 6.0) * (K1 + 2 * K2 + 2 * K3 + K4)
        if not np.all(np.isfinite(y)):
            raise CycleNotFound(f"orbit diverged during shooting (step {k + 1})")
        if store:
            traj[k + 1] = y
    return y, phi, traj


def _transient(field: VectorField, guess, dt: float, max_transient: float, coarse_tol: float):
    """Integrate until two successive returns to a re-anchored section agree."""
    from .sde_core import rk4_step

    x = np.array(guess, dtype=float)
    scale = 1.0 + np.abs(x).max()
    anchor = x.copy()
    fa = field.drift(anchor)
    if np.linalg.norm(fa) < 1e-12 * scale:
        raise CycleNotFound("initial guess is an equilibrium")
    normal = fa / np.linalg.norm(fa)
    t, t_anchor = 0.0, 0.0
    s_prev = 0.0
    last_gap = None
    last_size = None
    n_steps = int(np.ceil(max_transient / dt))
    min_gap = 5 * dt
    window = 100 * dt
    lo, hi = x.copy(), x.copy()
    for _ in range(n_steps):
        x_new = rk4_step(field.drift, x, dt)
        t += dt
        if not np.all(np.isfinite(x_new)):
            raise CycleNotFound("trajectory diverged during transient")
        lo, hi = np.minimum(lo, x_new), np.maximum(hi, x_new)
        s_new = normal @ (x_new - anchor)
        if s_prev < 0 <= s_new and t - t_anchor > min_gap:
            lam = s_prev / (s_prev - s_new)
            xc = x + lam * (x_new - x)
            tc = t - dt + lam * dt
            gap = tc - t_anchor
            # relative to the loop size: small cycles near a focus converge slowly
            shift = np.abs(xc - anchor).max()
            size = float((hi - lo).max())
            # an outward spiral off an unstable focus can return almost to the same point;
            # its loop size still grows
            rel = shift / max(size, 1e-300)
            settled = last_size is not None and abs(size - last_size) < coarse_tol * size
            if rel < coarse_tol and settled:
                return xc, gap, True
            fc = field.drift(xc)
            if np.linalg.norm(fc) < 1e-10 * scale:
                raise CycleNotFound("trajectory settled on an equilibrium")
            anchor, normal, t_anchor, last_gap = xc, fc / np.linalg.norm(fc), tc, gap
            last_size = size
            lo, hi = x_new.copy(), x_new.copy()
            s_new = normal @ (x_new - anchor)
        elif t - t_anchor > window:
            # section missed the attractor; move it to the current state
            fc = field.drift(x_new)
            if np.linalg.norm(fc) < 1e-10 * (1.0 + np.abs(x_new).max()):
                raise CycleNotFound("trajectory settled on an equilibrium")
            anchor, normal, t_anchor = x_new.copy(), fc / np.linalg.norm(fc), t
            window *= 2
            last_size = None
            s_new = 0.0
        s_prev = s_new
        x = x_new
    if last_gap is None:
        raise CycleNotFound("no returns to the section during the transient")
    return anchor, last_gap, False


def find_limit_cycle(field: VectorField, guess, tol_newton: float = 1e-9, max_transient: float = 100.0,
                     *, dt: Optional[float] = None, period_guess: Optional[float] = None,
                     n_grid: int = 2048, coarse_tol: float = 1e-3, max_iter: int = 40,
                     multiplier_tol: float = 1e-6) -> LimitCycle:
    """Locate an attracting cycle by a transient run followed by Newton shooting.

    Newton solves ``Phi_T(x) - x = 0`` with the phase fixed by the section through
    the transient's last return point. The orbit is then resampled on the
    ``n_grid``-step RK4 grid of the rescaled clock, so the stored cycle is a
    fixed point of that discrete flow.
    """
    if n_grid % 2:
        raise ValueError("n_grid must be even")
    if dt is None:
        dt = (period_guess or 1.0) / 500.0
    x, T, _ = _transient(field, guess, dt, max_transient, coarse_tol)
    x_ref = x.copy()
    f_ref = field.drift(x_ref)
    normal = f_ref / np.linalg.norm(f_ref)
    m = field.dim
    scale = 1.0 + np.abs(x).max()

    def evaluate(x, T, n):
        if not (np.isfinite(T) and T > 0):
            return None
        try:
            y, phi, traj = _flow_variational(field, x, T, n, store=True)
        except CycleNotFound:
            return None
        r = np.concatenate([y - x, [normal @ (x - x_ref)]])
        return y, phi, r, traj

    def newton(x, T, n, tol):
        state = evaluate(x, T, n)
        if state is None:
            raise CycleNotFound("flow from the transient end point failed")
        residual = np.inf
        for it in range(1, max_iter + 1):
            y, phi, r, traj = state
            residual = float(np.abs(r[:m]).max())
            if residual <= tol:
                return x, T, it, state
            jac = np.zeros((m + 1, m + 1))
            jac[:m, :m] = phi - np.eye(m)
            jac[:m, m] = field.drift(y)
            jac[m, :m] = normal
            if not np.all(np.isfinite(jac)):
                raise CycleNotFound("non-finite shooting Jacobian")
            lu = lu_factor(jac, check_finite=False)
            if np.abs(np.diag(lu[0])).min() == 0.0:
                raise CycleNotFound("singular shooting system")
            step = lu_solve(lu, -r)
            weights = np.append(np.full(m, scale), T)
            norm0 = np.linalg.norm(step / weights)
            # natural-level damping: the simplified correction under the old Jacobian must shrink.
            # A residual-norm merit stalls here because near-neutral multipliers inflate |r|.
            lam = min(1.0, 0.1 / (np.abs(step[:m]).max() / scale)) if norm0 > 0 else 1.0
            for _ in range(12):
                trial = evaluate(x + lam * step[:m], T + lam * step[m], n)
                if trial is not None:
                    corr = np.linalg.norm(lu_solve(lu, -trial[2]) / weights)
                    if corr <= (1.0 - 0.25 * lam) * norm0:
                        break
                lam *= 0.5
            else:
                raise CycleNotFound(f"Newton line search failed (residual {residual:.3g})")
            x = x + lam * step[:m]
            T = T + lam * step[m]
            state = trial
        raise CycleNotFound(f"Newton shooting did not converge (residual {residual:.3g})")

    # cheap global phase on a coarse grid; the fine grid then needs one or two steps
    n_coarse = max(512, n_grid // 8)
    if n_coarse < n_grid:
        x, T, _, _ = newton(x, T, n_coarse, max(tol_newton, 1e-7 * scale))
    x, T, it, (y, phi, _, traj) = newton(x, T, n_grid, tol_newton)
    speeds = np.linalg.norm(field.drift(traj), axis=1)
    amplitude = np.ptp(traj, axis=0).max()
    if speeds.min() < 1e-9 * (1.0 + np.abs(traj).max()) or amplitude < 1e-9 * (1.0 + np.abs(traj).max()):
        raise CycleNotFound("shooting collapsed onto an equilibrium")
    cyc = LimitCycle(theta_grid=np.arange(n_grid) / n_grid, u=traj, period_T=float(T), field=field,
                     monodromy=phi, newton_residual=float(np.abs(y - x).max()), newton_iterations=it)
    mults = np.linalg.eigvals(phi)
    trivial = np.argmin(np.abs(mults - 1.0))
    others = np.delete(mults, trivial)
    if np.any(np.abs(np.abs(others) - 1.0) < multiplier_tol):
        warnings.warn("nontrivial Floquet multiplier on the unit circle", NonHyperbolicCycleWarning)
    return cyc


# --- frame ------------------------------------------------------------------

def _polar(M: Array) -> Array:
    u, _, vt = np.linalg.svd(M, full_matrices=False)
    return u @ vt


def _complement(v: Array) -> Array:
    m = len(v)
    q, _ = np.linalg.qr(np.column_stack([v, np.eye(m)]))
    z = q[:, 1:m]
    if np.linalg.det(np.column_stack([v, z])) < 0:
        z[:, -1] *= -1
    return z


def build_frame(cycle: LimitCycle, speed_tol: float = 1e-12) -> FrameBundle:
    """Moving frame by continuity transport with the holonomy smeared along the grid."""
    fu = cycle.field.drift(cycle.u)
    speed = np.linalg.norm(fu, axis=1)
    if speed.min() <= speed_tol * (1.0 + np.abs(cycle.u).max()):
        raise TangentDegenerate(f"|f(u(theta))| = {speed.min():.3g} on the grid")
    v_all = fu / speed[:, None]
    n = cycle.n_grid
    m = cycle.dim
    Z = np.empty((n + 1, m, m - 1))
    Z[0] = _complement(v_all[0])
    for k in range(1, n + 1):
        vk = v_all[k]
        proj = Z[k - 1] - np.outer(vk, vk @ Z[k - 1])
        Z[k] = _polar(proj)
    Q = Z[0].T @ Z[n]
    Q = _polar(Q)
    if m - 1 > 1:
        L = logm(Q)
        L = np.real(L)
        L = 0.5 * (L - L.T)
    else:
        if Q[0, 0] < 0:
            raise TangentDegenerate("frame transport reversed orientation around the cycle")
        L = np.zeros((1, 1))
    theta = np.arange(n + 1) / n
    for k in range(n + 1):
        Z[k] = Z[k] @ expm(-theta[k] * L)
    return FrameBundle(v=v_all[:n].copy(), Z=Z[:n].copy(), holonomy=Q, v_end=v_all[n].copy(), Z_end=Z[n].copy())


# --- coefficients -------------------------------------------------------------

_GAUSS = (0.5 - np.sqrt(15.0) / 10.0, 0.5, 0.5 + np.sqrt(15.0) / 10.0)


def _comm(X, Y):
    return X @ Y - Y @ X


def _magnus6(R: Array):
    """Step propagators ``exp(Omega_k)`` for ``X' = R X`` on the grid.

    Sixth-order Magnus expansion on three Gauss-Legendre nodes per step; ``R``
    at the nodes comes from trigonometric interpolation of the grid samples.
    The trace of ``Omega_k`` is the Gauss rule for ``tr R``, so ``det X``
    follows Liouville's formula to quadrature accuracy.
    """
    n = len(R)
    h = 1.0 / n
    R1, R2, R3 = (shift_resample(R, c) for c in _GAUSS)
    a1 = h * R2
    a2 = (np.sqrt(15.0) * h / 3.0) * (R3 - R1)
    a3 = (10.0 * h / 3.0) * (R3 - 2.0 * R2 + R1)
    c1 = _comm(a1, a2)
    c2 = -(1.0 / 60.0) * _comm(a1, 2.0 * a3 + c1)
    omega = a1 + a3 / 12.0 + (1.0 / 240.0) * _comm(-20.0 * a1 - a3 + c1, a2 + c2)
    return np.array([expm(o) for o in omega])


def compute_coefficients(cycle: LimitCycle, frame: FrameBundle, diff: Optional[Diffusion],
                         derivative: str = "spectral") -> PMCoefficients:
    """All reduced-system coefficients, the map matrices ``A, B`` and ``Sigma``.

    ``diff=None`` means zero diffusion (h, H and Sigma vanish).
    """
    n = cycle.n_grid
    m = cycle.dim
    if frame.Z.shape != (n, m, m - 1):
        raise DimensionMismatch(f"Z has shape {frame.Z.shape}, expected {(n, m, m - 1)}")
    T = cycle.period_T
    u = cycle.u[:n]
    f = T * cycle.field.drift(u)
    J = T * cycle.field.jacobian(u)
    if J.shape != (n, m, m):
        raise DimensionMismatch(f"Df has shape {J.shape[1:]}, expected {(m, m)}")
    Z, v = frame.Z, frame.v
    speed = np.linalg.norm(f, axis=1)

    if derivative == "spectral":
        dZ = periodic_derivative(Z)
    elif derivative == "centered":
        dZ = centered_derivative(Z)
    else:
        raise ValueError("derivative must be 'spectral' or 'centered'")

    Zt = np.swapaxes(Z, 1, 2)
    R = Zt @ J @ Z - Zt @ dZ
    sym = 0.5 * (J + np.swapaxes(J, 1, 2))
    a = 2.0 * np.einsum("ki,kij,kjl->kl", v, sym, Z) / speed[:, None]

    if diff is None:
        P = np.zeros((n, m, m))
    else:
        P = np.sqrt(T) * np.asarray(diff.matrix(u), dtype=float)
        if P.shape != (n, m, m):
            raise DimensionMismatch(f"P has shape {P.shape[1:]}, expected {(m, m)}")
    Pt = np.swapaxes(P, 1, 2)
    h_coef = np.einsum("kij,kj->ki", Pt, f) / (speed ** 2)[:, None]
    H = Pt @ Z

    # transverse principal solution
    steps = _magnus6(R)
    d = m - 1
    X = np.empty((n + 1, d, d))
    X[0] = np.eye(d)
    for k in range(n):
        X[k + 1] = steps[k] @ X[k]
    to_end = np.empty_like(X)
    to_end[n] = np.eye(d)
    for k in range(n - 1, -1, -1):
        to_end[k] = to_end[k + 1] @ steps[k]
    A = X[n].copy()

    # R at theta = 1 from the closing point of the orbit
    u_end = cycle.u[n]
    J_end = T * cycle.field.jacobian(u_end)
    R_end = frame.Z_end.T @ J_end @ frame.Z_end - frame.Z_end.T @ dZ[0]
    AB = R_end @ A
    if np.linalg.cond(A) < 1e12:
        B = np.linalg.solve(A, AB)
    else:
        # B = A^{-1} R(1) A has entries of order cond(A); only the product A B is reliable
        warnings.warn(f"A is ill-conditioned (cond {np.linalg.cond(A):.2g}); B is a least-squares "
                      "solution and only A @ B is accurate", IllConditionedWarning)
        B = np.linalg.lstsq(A, AB, rcond=None)[0]

    # b(theta)^T = -int_0^theta a^T X ds  X(theta)^{-1}
    hgrid = 1.0 / n
    aX = np.einsum("ki,kij->kj", np.concatenate([a, a[:1]]), X)
    cum = np.concatenate([np.zeros((1, d)), np.cumsum(0.5 * hgrid * (aX[1:] + aX[:-1]), axis=0)])
    try:
        b = -np.linalg.solve(np.swapaxes(X, 1, 2), cum[..., None])[..., 0]
    except np.linalg.LinAlgError:
        warnings.warn("X(theta) is numerically singular; b is a least-squares solution",
                      IllConditionedWarning)
        b = -np.einsum("kij,kj->ki", np.linalg.pinv(np.swapaxes(X, 1, 2)), cum)

    # covariance of (xi, eta) by trapezoid quadrature, then zeta = xi - b(1)^T eta
    H_full = np.concatenate([H, H[:1]])
    g = np.concatenate([h_coef, h_coef[:1]])
    F = to_end @ np.swapaxes(H_full, 1, 2)

    def trap(vals, stride=1):
        v_ = vals[::stride]
        w = np.full(len(v_), 1.0)
        w[0] = w[-1] = 0.5
        return np.tensordot(w, v_, axes=(0, 0)) * hgrid * stride

    def joint(stride=1):
        cov_eta = trap(np.einsum("kij,klj->kil", F, F), stride)
        cov_xe = trap(np.einsum("kij,kj->ki", F, g), stride)
        var_xi = trap(np.einsum("ki,ki->k", g, g), stride)
        b1 = b[n]
        var_zeta = var_xi - 2 * b1 @ cov_xe + b1 @ cov_eta @ b1
        cov_ze = cov_xe - cov_eta @ b1
        S = np.empty((d + 1, d + 1))
        S[0, 0] = var_zeta
        S[0, 1:] = S[1:, 0] = cov_ze
        S[1:, 1:] = cov_eta
        return 0.5 * (S + S.T)

    Sigma = joint(1)
    quad_err = float(np.abs(Sigma - joint(2)).max() / 3.0) if n % 2 == 0 else 0.0
    return PMCoefficients(theta=np.arange(n + 1) / n, a=a, R=R, h=h_coef, H=H, b=b, X=X, A=A, B=B,
                          Sigma=Sigma, to_end=to_end, period_T=T, R_end=R_end,
                          sigma_quadrature_error=quad_err)


def floquet_stability(coeffs, epsilon: Optional[float] = None) -> StabilityReport:
    """Moduli of the multipliers of ``A`` and the largest admissible epsilon = 1 - rho(A).

    Accepts a :class:`PMCoefficients` or a bare matrix.
    """
    A = coeffs.A if isinstance(coeffs, PMCoefficients) else np.atleast_2d(np.asarray(coeffs, dtype=float))
    moduli = np.sort(np.abs(np.linalg.eigvals(A)))[::-1]
    rho = float(moduli[0]) if len(moduli) else 0.0
    stable = rho < 1.0
    if epsilon is not None and stable:
        verdict = "stable" if rho < 1.0 - epsilon else "stable (epsilon margin violated)"
    else:
        verdict = "stable" if stable else "unstable"
    return StabilityReport(moduli=moduli, spectral_radius=rho, epsilon_max=1.0 - rho, stable=stable,
                           verdict=verdict)


def monodromy_check(cycle: LimitCycle, coeffs: PMCoefficients, floor: float = 1e-10):
    """Compare the full-space multipliers with ``{1} U spec(A)``.

    Returns ``(trivial_error, relative_errors)``; each nontrivial multiplier is
    matched to an eigenvalue of ``A`` by minimum total distance. Relative errors
    use ``max(|mu|, floor)`` in the denominator: multipliers below ``floor`` are
    at the resolution limit of a matrix with entries of order one.
    """
    full = np.linalg.eigvals(cycle.monodromy)
    i1 = np.argmin(np.abs(full - 1.0))
    trivial_err = float(abs(full[i1] - 1.0))
    rest = np.delete(full, i1)
    red = np.linalg.eigvals(coeffs.A)
    cost = np.abs(rest[:, None] - red[None, :])
    r, c = linear_sum_assignment(cost)
    rel = cost[r, c] / np.maximum(np.abs(red[c]), floor)
    return trivial_err, rel


def sample_pm_noise(coeffs: PMCoefficients, n_paths: int, rng: np.random.Generator, chunk: int = 2000):
    """Draw ``(zeta, eta)`` by Ito sums of the stochastic integrals over one return.

    Brownian increments live on the theta grid (left-point rule). This is the
    brute-force counterpart of the quadrature ``Sigma``.
    """
    n = len(coeffs.theta) - 1
    d = coeffs.transverse_dim
    m = coeffs.h.shape[1]
    F = coeffs.to_end[:n] @ np.swapaxes(coeffs.H, 1, 2)  # (n, d, m)
    g = coeffs.h  # (n, m)
    b1 = coeffs.b[n]
    out = np.empty((n_paths, d + 1))
    sq = np.sqrt(1.0 / n)
    done = 0
    while done < n_paths:
        p = min(chunk, n_paths - done)
        dw = rng.standard_normal((p, n, m)) * sq
        xi = np.einsum("pkm,km->p", dw, g)
        eta = np.einsum("pkm,kjm->pj", dw, F)
        out[done:done + p, 0] = xi - eta @ b1
        out[done:done + p, 1:] = eta
        done += p
    return out
