"""Hazard estimation for right-censored exit times and checks of geometric tails and scaling laws."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats
from statsmodels.stats.proportion import proportion_confint

Array = np.ndarray

PASS, FAIL, INCONCLUSIVE = "pass", "fail", "inconclusive"


class EmptySample(ValueError):
    pass


@dataclass(frozen=True)
class ExitSample:
    tau: int
    censored: bool = False
    meta: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.tau < 1:
            raise ValueError("tau must be at least 1")


@dataclass(frozen=True)
class HazardEstimate:
    n: int
    p_hat: float
    ci_low: float
    ci_high: float
    at_risk: int
    events: int


def as_arrays(samples) -> Tuple[Array, Array]:
    """``(tau, censored)`` from a list of :class:`ExitSample`, a pair of arrays or any object with those attributes."""
    if hasattr(samples, "tau") and hasattr(samples, "censored"):
        tau, cens = samples.tau, samples.censored
    elif isinstance(samples, tuple) and len(samples) == 2:
        tau, cens = samples
    else:
        samples = list(samples)
        tau = [s.tau for s in samples]
        cens = [s.censored for s in samples]
    tau = np.asarray(tau, dtype=np.int64)
    cens = np.asarray(cens, dtype=bool)
    if tau.shape != cens.shape:
        raise ValueError("tau and censored must have equal length")
    if len(tau) and tau.min() < 1:
        raise ValueError("exit times must be at least 1")
    return tau, cens


def samples_from_arrays(tau, censored, meta: Optional[Mapping] = None) -> list:
    meta = dict(meta or {})
    return [ExitSample(int(t), bool(c), meta) for t, c in zip(tau, censored)]


def wilson_interval(events, trials, alpha: float = 0.05):
    low, high = proportion_confint(np.asarray(events), np.asarray(trials), alpha=alpha, method="wilson")
    return np.asarray(low, dtype=float), np.asarray(high, dtype=float)


def _risk_table(tau: Array, cens: Array):
    n_max = int(tau.max())
    ev = np.bincount(tau[~cens], minlength=n_max + 1)
    leave = np.bincount(tau, minlength=n_max + 1)
    at_risk = len(tau) - np.concatenate([[0], np.cumsum(leave)[:-1]])
    return ev, at_risk


def hazard_curve(samples, alpha: float = 0.05) -> list:
    """Per-step hazard ``#{tau = n, exit} / #{tau >= n}`` with Wilson intervals.

    A record censored at ``c`` stays in the risk set through step ``c`` without
    an event there. Steps with an empty risk set are omitted.
    """
    tau, cens = as_arrays(samples)
    if len(tau) == 0:
        raise EmptySample("no exit samples")
    if np.all(cens):
        raise EmptySample("all samples are censored")
    ev, at_risk = _risk_table(tau, cens)
    ns = np.arange(1, len(ev))
    ev, at_risk = ev[1:], at_risk[1:]
    keep = at_risk > 0
    lo, hi = wilson_interval(ev[keep], at_risk[keep], alpha)
    p = ev[keep] / at_risk[keep]
    return [HazardEstimate(int(n), float(pp), float(min(l, pp)), float(max(u, pp)), int(r), int(e))
            for n, pp, l, u, r, e in zip(ns[keep], p, lo, hi, at_risk[keep], ev[keep])]


def empirical_pmf(samples) -> Tuple[Array, Array, float]:
    """``(n, P(tau = n, exit), P(censored))``; the masses sum to one exactly in count terms."""
    tau, cens = as_arrays(samples)
    if len(tau) == 0:
        raise EmptySample("no exit samples")
    counts = np.bincount(tau[~cens], minlength=int(tau.max()) + 1)[1:]
    return np.arange(1, len(counts) + 1), counts / len(tau), float(cens.sum() / len(tau))


@dataclass(frozen=True)
class FlatnessReport:
    flat: bool
    n_points: int
    common_low: float
    common_high: float
    n0: int
    alpha: float


def hazard_flatness(curve: Sequence[HazardEstimate], n0: int = 1, min_at_risk: int = 100,
                    alpha: float = 0.05) -> FlatnessReport:
    """Do the hazard intervals for ``n >= n0`` (with ``at_risk >= min_at_risk``) share a common value?

    Intervals are Wilson intervals at the Bonferroni level ``alpha / k`` for the
    ``k`` steps tested, so the check holds simultaneously at level ``alpha``.
    """
    pts = [c for c in curve if c.n >= n0 and c.at_risk >= min_at_risk]
    if not pts:
        return FlatnessReport(False, 0, np.nan, np.nan, n0, alpha)
    ev = np.array([c.events for c in pts])
    risk = np.array([c.at_risk for c in pts])
    lo, hi = wilson_interval(ev, risk, alpha / len(pts))
    low, high = float(lo.max()), float(hi.min())
    return FlatnessReport(low <= high, len(pts), low, high, n0, alpha)


# --- geometric tail -----------------------------------------------------------------

@dataclass(frozen=True)
class GeometricFit:
    p_mle: float
    stderr: float
    ks_stat: float
    p_value: float
    status: str
    n0: int
    n_tail: int
    events: int

    @property
    def passed(self) -> bool:
        return self.status == PASS


def _km_cdf(k: Array, cens: Array, support: int) -> Array:
    """Kaplan-Meier estimate of ``P(K <= j)`` for ``j = 1..support``."""
    ev = np.bincount(k[~cens], minlength=support + 1)[1:support + 1]
    leave = np.bincount(k, minlength=support + 1)[1:support + 1]
    risk = len(k) - np.concatenate([[0], np.cumsum(leave)[:-1]])
    with np.errstate(invalid="ignore", divide="ignore"):
        q = np.where(risk > 0, 1.0 - ev / np.maximum(risk, 1), 1.0)
    return 1.0 - np.cumprod(q)


def _ks_geometric(k: Array, cens: Array, p: float) -> float:
    support = int(k.max())
    km = _km_cdf(k, cens, support)
    j = np.arange(1, support + 1)
    geo = -np.expm1(j * np.log1p(-p)) if p < 1 else np.ones(support)
    return float(np.abs(km - geo).max())


def _mle(k: Array, cens: Array) -> float:
    return float((~cens).sum() / k.sum())


def geometric_tail_fit(samples, n0: int = 1, *, n_boot: int = 999, seed: int = 0, min_events: int = 20,
                       level: float = 0.01) -> GeometricFit:
    """Geometric fit of the law of ``tau - n0 + 1`` given ``tau >= n0``.

    The MLE under right censoring is events / total exposure. Goodness of fit
    is the sup distance between the Kaplan-Meier CDF and the fitted geometric
    CDF, calibrated by a parametric bootstrap that refits ``p`` on each
    resample and reuses the observed censoring limit. Fewer than
    ``min_events`` tail events gives status ``"inconclusive"``.
    """
    tau, cens = as_arrays(samples)
    if n0 < 1:
        raise ValueError("n0 must be at least 1")
    sel = tau >= n0
    k = tau[sel] - n0 + 1
    c = cens[sel]
    events = int((~c).sum())
    if events < min_events:
        return GeometricFit(np.nan, np.nan, np.nan, np.nan, INCONCLUSIVE, n0, int(sel.sum()), events)
    p = _mle(k, c)
    se = float(p * np.sqrt(max(1.0 - p, 0.0) / events))
    if p >= 1.0:
        # every tail record exits at its first step: geometric with p = 1
        return GeometricFit(1.0, 0.0, 0.0, 1.0, PASS, n0, len(k), events)
    d_obs = _ks_geometric(k, c, p)
    limit = int(k[c].max()) if c.any() else None
    rng = np.random.default_rng(seed)
    n = len(k)
    exceed = 0
    for _ in range(n_boot):
        kb = rng.geometric(p, size=n)
        cb = np.zeros(n, dtype=bool)
        if limit is not None:
            cb = kb > limit
            kb = np.minimum(kb, limit)
        if not (~cb).any():
            exceed += 1
            continue
        pb = _mle(kb, cb)
        if _ks_geometric(kb, cb, pb) >= d_obs:
            exceed += 1
    pval = (1 + exceed) / (n_boot + 1)
    return GeometricFit(p, se, d_obs, float(pval), PASS if pval > level else FAIL, n0, n, events)


def _trend_p_value(ev: Array, at_risk: Array, steps: Array) -> float:
    """Two-sided Cochran-Armitage test for a linear trend of the hazard in ``steps``."""
    if len(steps) < 2:
        return 1.0
    pbar = ev.sum() / at_risk.sum()
    sbar = (at_risk * steps).sum() / at_risk.sum()
    var = pbar * (1.0 - pbar) * (at_risk * (steps - sbar) ** 2).sum()
    if var <= 0:
        return 1.0
    z = (ev * (steps - sbar)).sum() / np.sqrt(var)
    return float(2.0 * stats.norm.sf(abs(z)))


def tail_start(samples, min_at_risk: int = 100, level: float = 0.05) -> int:
    """Default ``n0`` for the geometric tail fit.

    Scans forward from one step past the mode and returns the first ``n0`` whose
    hazards (steps with ``at_risk >= min_at_risk``) show no linear trend at
    ``level``. A hazard still climbing toward its limit fails the trend test long
    after Bonferroni interval overlap stops noticing it. Falls back to the last
    step with enough records at risk.
    """
    tau, cens = as_arrays(samples)
    n, pmf, _ = empirical_pmf((tau, cens))
    mode = int(n[np.argmax(pmf)]) if len(pmf) else 1
    ev, at_risk = _risk_table(tau, cens)
    steps = np.arange(len(ev), dtype=float)
    ok = np.nonzero(at_risk[1:] >= min_at_risk)[0] + 1
    if len(ok) == 0:
        return 1
    last = int(ok[-1])
    for n0 in range(max(1, mode + 1), last + 1):
        sel = ok[ok >= n0]
        if _trend_p_value(ev[sel], at_risk[sel], steps[sel]) > level:
            return n0
    return last


# --- scaling laws ---------------------------------------------------------------------

def _point_hazard(value, n0: int) -> Tuple[float, int]:
    """``(p_hat, events)`` from a float hazard or from exit samples (geometric tail MLE)."""
    if np.isscalar(value):
        return float(value), -1
    tau, cens = as_arrays(value)
    sel = tau >= n0
    k, c = tau[sel] - n0 + 1, cens[sel]
    if len(k) == 0:
        return 0.0, 0
    return _mle(k, c), int((~c).sum())


@dataclass(frozen=True)
class ScalingReport:
    slope: float
    intercept: float
    r2: float
    slope_negative: bool
    status: str
    sigmas: Array
    p_hat: Array
    message: str = ""


def sigma_scaling_report(runs: Mapping[float, object], n0: int = 1, min_points: int = 4,
                         min_events: int = 10, r2_min: float = 0.9) -> ScalingReport:
    """Regress ``log(p_hat / sigma)`` on ``sigma^-2``.

    ``runs`` maps sigma to exit samples or directly to a hazard value. Points
    with fewer than ``min_events`` exits are dropped; with fewer than
    ``min_points`` usable sigmas the report is inconclusive. Status is
    ``"pass"`` when the slope is negative and ``R^2 >= r2_min``.
    """
    sig, ph = [], []
    for s, val in sorted(runs.items()):
        p, ev = _point_hazard(val, n0)
        if p > 0 and s > 0 and (ev < 0 or ev >= min_events):
            sig.append(float(s))
            ph.append(p)
    sig, ph = np.array(sig), np.array(ph)
    if len(sig) < min_points:
        return ScalingReport(np.nan, np.nan, np.nan, False, INCONCLUSIVE, sig, ph,
                             f"only {len(sig)} estimable sigma values")
    fit = stats.linregress(sig ** -2.0, np.log(ph / sig))
    r2 = float(fit.rvalue ** 2)
    neg = bool(fit.slope < 0)
    status = PASS if (neg and r2 >= r2_min) else FAIL
    msg = "" if neg else "hazard does not decrease with sigma^-2"
    return ScalingReport(float(fit.slope), float(fit.intercept), r2, neg, status, sig, ph, msg)


@dataclass(frozen=True)
class UpperShapeReport:
    exponent: float
    exponent_stderr: float
    C_hat: float
    all_below: bool
    x: Array  # sigma h^2
    p_hat: Array


def hazard_upper_shape(runs: Mapping[Tuple[float, float], object], n0: int = 1,
                       power: float = 2.0 / 3.0) -> UpperShapeReport:
    """Fit ``log p_hat`` against ``log(sigma h^2)`` and test ``p_hat <= C (sigma h^2)^power``.

    ``C_hat`` is the largest observed ratio, so the envelope check is a
    diagnostic of shape, not of a constant.
    """
    xs, ps = [], []
    for (s, h), val in sorted(runs.items()):
        p, _ = _point_hazard(val, n0)
        xs.append(float(s) * float(h) ** 2)
        ps.append(p)
    xs, ps = np.array(xs), np.array(ps)
    pos = (ps > 0) & (xs > 0)
    if pos.sum() >= 2:
        fit = stats.linregress(np.log(xs[pos]), np.log(ps[pos]))
        expo, se = float(fit.slope), float(fit.stderr)
    else:
        expo, se = np.nan, np.nan
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(xs > 0, ps / xs ** power, 0.0)
    C = float(ratio.max()) if len(ratio) else 0.0
    env = C * np.where(xs > 0, xs, 0.0) ** power
    below = bool(np.all(ps <= env * (1 + 1e-12) + 1e-300))
    return UpperShapeReport(expo, se, C, below, xs, ps)
