"""Conductance-based neuron models with noise in the voltage equations, and spike segmentation.

Three models are provided:

``inapik_burster``
    persistent sodium plus two potassium currents (v, n, y); ms clock.
``beta_cell_pair``
    two electrically coupled pancreatic beta-cells (v1, n1, y1, v2, n2, y2);
    the conductances are rates in s^-1, so this model runs on a seconds clock.
``hh_mmo``
    Hodgkin-Huxley variant near a Hopf bifurcation (v, n, h); ms clock.

Noise enters the voltage equations only: the diffusion matrix is the constant
selector ``P = diag(1/C_m)`` on the voltage coordinates, zero elsewhere.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from .sde_core import Diffusion, GaussianBlocks, Path, VectorField, rk4_step

Array = np.ndarray

INAPIK_DEFAULTS = MappingProxyType(dict(
    g_NaP=20.0, g_K=10.0, g_KM=5.0, g_L=8.0, E_NaP=60.0, E_K=-90.0, E_L=-80.0,
    tau_n=0.152, tau_y=20.0, I=5.0, a_m=-20.0, a_n=-25.0, a_y=-10.0, b_m=15.0, b_n=5.0, b_y=5.0,
    C_m=1.0, sigma=1.0,
))

# g = 170 makes the transverse monodromy numerically singular (multipliers near
# e^-88), so the map matrices cannot be resolved; 20 keeps the same synchronous cycle.
BETA_DEFAULTS = MappingProxyType(dict(
    g_NaCa=1800.0, E_NaCa=100.0, g_K=1700.0, E_K=-75.0, k_C=12.0 / 18.0, g_l=7.0, E_l=-40.0,
    g_KCa=12.0, E_Ca=100.0, eps=0.03, C_m=1.0, sigma=10.0, g=20.0, tau_scale=230.0,
))

# I is an added applied current; at I = 0 these values give a stable rest state and no cycle.
# Hopf of the rest state near I = 6.04; a stable small cycle persists up to about 6.10.
HH_DEFAULTS = MappingProxyType(dict(
    g_Na=120.0, g_K=36.0, g_l=0.3, E_Na=115.0, E_K=-12.0, E_l=10.5999, tau_n_bar=20.0, tau_h_bar=1.0,
    C_m=1.0, sigma=5e-4, I=6.1,
))

DEFAULTS = {"inapik_burster": INAPIK_DEFAULTS, "beta_cell_pair": BETA_DEFAULTS, "hh_mmo": HH_DEFAULTS}

_NONNEGATIVE = {"g_NaP", "g_K", "g_KM", "g_L", "g_NaCa", "g_l", "g_KCa", "g_Na", "g", "tau_n", "tau_y",
                "eps", "tau_scale", "tau_n_bar", "tau_h_bar", "sigma"}


class UnknownModel(KeyError):
    pass


@dataclass(frozen=True)
class NeuroModelSpec:
    """Model name, full parameter map (table defaults plus overrides) and noise placement."""

    name: str
    params: Mapping[str, float]
    noise_sigma: float
    noise_shape: tuple

    @classmethod
    def create(cls, name: str, overrides: Optional[Mapping[str, float]] = None) -> "NeuroModelSpec":
        if name not in DEFAULTS:
            raise UnknownModel(f"unknown model {name!r}; choose from {sorted(DEFAULTS)}")
        base = dict(DEFAULTS[name])
        for k, v in (overrides or {}).items():
            if k not in base:
                raise KeyError(f"unknown parameter {k!r} for model {name}")
            base[k] = float(v)
        for k, v in base.items():
            if k in _NONNEGATIVE and v < 0:
                raise ValueError(f"parameter {k} must be non-negative")
        if base["C_m"] <= 0:
            raise ValueError("C_m must be positive")
        shape = (0, 3) if name == "beta_cell_pair" else (0,)
        return cls(name=name, params=MappingProxyType(base), noise_sigma=base["sigma"], noise_shape=shape)

    def build(self):
        return BUILDERS[self.name](self.params)

    def to_dict(self) -> dict:
        return {"name": self.name, "params": dict(self.params), "noise_sigma": self.noise_sigma,
                "noise_shape": list(self.noise_shape)}


def _require(params: Mapping[str, float], defaults: Mapping[str, float]) -> Dict[str, float]:
    missing = [k for k in defaults if k not in params]
    if missing:
        raise KeyError(f"missing parameter(s): {', '.join(missing)}")
    return {k: float(params[k]) for k in defaults}


def _selector(dim: int, coords: Sequence[int], C_m: float) -> Diffusion:
    P = np.zeros((dim, dim))
    for c in coords:
        P[c, c] = 1.0 / C_m
    return Diffusion.from_constant(P)


def sigmoid(v, a, b):
    """``(1 + exp((a - v) / b))^{-1}``."""
    return 1.0 / (1.0 + np.exp((a - v) / b))


def _vtrap(x):
    """``x / (1 - exp(-x))`` with the removable singularity at 0 filled in (complex safe)."""
    small = np.abs(x) < 1e-6
    safe = np.where(small, 1.0, x)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = safe / (-np.expm1(-safe))
    return np.where(small, 1.0 + x / 2.0 + x * x / 12.0, out)


# --- model 1 -------------------------------------------------------------------

def model_inapik(params: Mapping[str, float] = INAPIK_DEFAULTS):
    """Persistent-sodium / potassium burster; returns ``(VectorField, Diffusion)``."""
    p = _require(params, INAPIK_DEFAULTS)

    def drift(x):
        v, n, y = x[..., 0], x[..., 1], x[..., 2]
        m_inf = sigmoid(v, p["a_m"], p["b_m"])
        i_ion = (p["g_NaP"] * m_inf * (v - p["E_NaP"]) + p["g_K"] * n * (v - p["E_K"])
                 + p["g_KM"] * y * (v - p["E_K"]) + p["g_L"] * (v - p["E_L"]))
        dv = (-i_ion + p["I"]) / p["C_m"]
        dn = (sigmoid(v, p["a_n"], p["b_n"]) - n) / p["tau_n"]
        dy = (sigmoid(v, p["a_y"], p["b_y"]) - y) / p["tau_y"]
        return np.stack([dv, dn, dy], axis=-1)

    return VectorField(dim=3, drift=drift, name="inapik_burster"), _selector(3, [0], p["C_m"])


# --- model 2 -------------------------------------------------------------------

def _beta_rates(v):
    am = _vtrap(0.1 * (v + 25.0))
    bm = 4.0 * np.exp(-(v + 50.0) / 18.0)
    ah = 0.07 * np.exp(-0.05 * (v + 50.0))
    bh = 1.0 / (1.0 + np.exp(-0.1 * (v + 20.0)))
    an = 0.1 * _vtrap(0.1 * (v + 20.0))
    bn = 0.125 * np.exp(-(v + 30.0) / 80.0)
    return am, bm, ah, bh, an, bn


def model_beta_pair(params: Mapping[str, float] = BETA_DEFAULTS):
    """Two coupled beta-cells, state ``(v1, n1, y1, v2, n2, y2)``, time in seconds.

    Currents are written as ``g (E - v)`` and enter the voltage equation with a
    plus sign, so each current drives ``v`` toward its reversal potential.
    """
    p = _require(params, BETA_DEFAULTS)

    def cell(v, n, y):
        am, bm, ah, bh, an, bn = _beta_rates(v)
        m_inf = am / (am + bm)
        h_inf = ah / (ah + bh)
        n_inf = an / (an + bn)
        tau = 1.0 / (p["tau_scale"] * (an + bn))
        gate = m_inf ** 3 * h_inf
        i_ion = (p["g_NaCa"] * gate * (p["E_NaCa"] - v) + p["g_KCa"] * y / (1.0 + y) * (p["E_K"] - v)
                 + p["g_K"] * n ** 4 * (p["E_K"] - v) + p["g_l"] * (p["E_l"] - v))
        i_ca = gate * (p["E_Ca"] - v)
        return i_ion, (n_inf - n) / tau, p["eps"] * (i_ca - p["k_C"] * y)

    def drift(x):
        v1, v2 = x[..., 0], x[..., 3]
        i1, dn1, dy1 = cell(v1, x[..., 1], x[..., 2])
        i2, dn2, dy2 = cell(v2, x[..., 4], x[..., 5])
        dv1 = (i1 + p["g"] * (v2 - v1)) / p["C_m"]
        dv2 = (i2 + p["g"] * (v1 - v2)) / p["C_m"]
        return np.stack([dv1, dn1, dy1, dv2, dn2, dy2], axis=-1)

    return VectorField(dim=6, drift=drift, name="beta_cell_pair"), _selector(6, [0, 3], p["C_m"])


# --- model 3 -------------------------------------------------------------------

def hh_rates(v):
    am = _vtrap(0.1 * (v - 25.0))
    bm = 4.0 * np.exp(-v / 18.0)
    ah = 0.07 * np.exp(-0.05 * v)
    bh = 1.0 / (1.0 + np.exp(0.1 * (30.0 - v)))
    an = 0.1 * _vtrap(0.1 * (v - 10.0))
    bn = 0.125 * np.exp(-v / 80.0)
    return am, bm, ah, bh, an, bn


def model_hh_mmo(params: Mapping[str, float] = HH_DEFAULTS):
    """Hodgkin-Huxley variant ``(v, n, h)`` with time constants ``tau_bar_f * tau_f(v)``."""
    p = _require(params, HH_DEFAULTS)

    def drift(x):
        v, n, h = x[..., 0], x[..., 1], x[..., 2]
        am, bm, ah, bh, an, bn = hh_rates(v)
        m_inf = am / (am + bm)
        i_ion = (p["g_Na"] * m_inf ** 3 * h * (v - p["E_Na"]) + p["g_K"] * n ** 4 * (v - p["E_K"])
                 + p["g_l"] * (v - p["E_l"]))
        dv = (-i_ion + p["I"]) / p["C_m"]
        # (f_inf - f) / (tau_bar tau_f) = (alpha - (alpha + beta) f) / tau_bar
        dn = (an - (an + bn) * n) / p["tau_n_bar"]
        dh = (ah - (ah + bh) * h) / p["tau_h_bar"]
        return np.stack([dv, dn, dh], axis=-1)

    return VectorField(dim=3, drift=drift, name="hh_mmo"), _selector(3, [0], p["C_m"])


BUILDERS = {"inapik_burster": model_inapik, "beta_cell_pair": model_beta_pair, "hh_mmo": model_hh_mmo}


# --- segmentation ----------------------------------------------------------------

def detect_spikes(path: Path, v_index: int, up_threshold: float, down_threshold: float) -> Array:
    """Upward crossings of ``up_threshold`` after the signal was below ``down_threshold``.

    Times are interpolated linearly between samples. The detector starts armed
    if the first sample lies below ``down_threshold``.
    """
    if not up_threshold > down_threshold:
        raise ValueError("up_threshold must exceed down_threshold")
    det = SpikeDetector(1, up_threshold, down_threshold, path.states[0, v_index][None])
    v = path.states[:, v_index]
    for k in range(1, len(v)):
        det.update(path.times[k - 1], path.times[k], v[k - 1:k], v[k:k + 1])
    return np.array(det.events[0])


class SpikeDetector:
    """Streaming hysteresis detector for ``R`` signals advanced one sample at a time."""

    def __init__(self, n: int, up: float, down: float, v0):
        if not up > down:
            raise ValueError("up_threshold must exceed down_threshold")
        self.up, self.down = float(up), float(down)
        self.armed = np.asarray(v0, dtype=float) < down
        self.events: List[List[float]] = [[] for _ in range(n)]

    def update(self, t0: float, t1: float, v_old: Array, v_new: Array, index: Optional[Array] = None):
        fire = self.armed & (v_old < self.up) & (v_new >= self.up)
        if fire.any():
            lam = (self.up - v_old[fire]) / (v_new[fire] - v_old[fire])
            times = t0 + lam * (t1 - t0)
            rows = np.nonzero(fire)[0] if index is None else index[fire]
            for r, t in zip(rows, times):
                self.events[r].append(float(t))
        self.armed = (self.armed & ~fire) | (v_new < self.down)


@dataclass
class EventCounts:
    counts: Array
    boundaries: Array  # (n_epochs, 2) start/end times

    def __len__(self):
        return len(self.counts)


def count_per_epoch(events, mode: str = "spikes_per_burst", gap_factor: float = 3.0,
                    small_events=None) -> EventCounts:
    """Epoch counts from spike times.

    ``spikes_per_burst``: a new burst starts when an interspike interval exceeds
    ``gap_factor`` times the median interval; the first and last bursts are
    discarded because they may be truncated.

    ``small_osc_between_spikes``: ``events`` are the large spikes and
    ``small_events`` the secondary detector's events; each interval between
    consecutive large spikes yields the number of small events inside it (zero
    is possible).
    """
    ev = np.sort(np.asarray(events, dtype=float))
    if mode == "spikes_per_burst":
        if len(ev) < 2:
            return EventCounts(np.zeros(0, dtype=np.int64), np.zeros((0, 2)))
        isi = np.diff(ev)
        cut = np.nonzero(isi > gap_factor * np.median(isi))[0]
        starts = np.concatenate([[0], cut + 1])
        ends = np.concatenate([cut, [len(ev) - 1]])
        sizes = ends - starts + 1
        bounds = np.column_stack([ev[starts], ev[ends]])
        if len(sizes) <= 2:
            return EventCounts(np.zeros(0, dtype=np.int64), np.zeros((0, 2)))
        return EventCounts(sizes[1:-1].astype(np.int64), bounds[1:-1])
    if mode == "small_osc_between_spikes":
        if small_events is None:
            raise ValueError("small_osc_between_spikes needs small_events")
        if len(ev) < 2:
            return EventCounts(np.zeros(0, dtype=np.int64), np.zeros((0, 2)))
        small = np.sort(np.asarray(small_events, dtype=float))
        idx = np.searchsorted(small, ev)
        counts = np.diff(idx).astype(np.int64)
        return EventCounts(counts, np.column_stack([ev[:-1], ev[1:]]))
    raise ValueError("mode must be 'spikes_per_burst' or 'small_osc_between_spikes'")


# --- simulation presets --------------------------------------------------------------

@dataclass(frozen=True)
class Protocol:
    """Numerical settings for simulating and segmenting a model."""

    initial_guess: tuple
    dt: float
    cycle_dt: float
    mode: str
    gap_factor: float = 3.0
    small_fraction: float = 0.3  # small-oscillation hysteresis as a fraction of cycle amplitude
    time_unit: str = "ms"
    n_grid: int = 2048
    max_transient: float = 2000.0


PROTOCOLS = {
    # intra-burst ISIs stretch to ~5x the median at burst ends; quiet phases exceed 15x
    "inapik_burster": Protocol(initial_guess=(-40.0, 0.2, 0.2), dt=0.005, cycle_dt=0.01,
                               mode="spikes_per_burst", gap_factor=8.0, n_grid=4096),
    "beta_cell_pair": Protocol(initial_guess=(-40.0, 0.2, 0.35, -40.0, 0.2, 0.35), dt=2.5e-4,
                               cycle_dt=2.5e-4, mode="spikes_per_burst", gap_factor=3.0, time_unit="s",
                               n_grid=8192, max_transient=20.0),
    # guess on the small cycle; from elsewhere the orbit may settle on a coexisting period-6 loop
    "hh_mmo": Protocol(initial_guess=(3.778, 0.3771, 0.476), dt=0.02, cycle_dt=0.05,
                       mode="small_osc_between_spikes", max_transient=6000.0),
}


@dataclass(frozen=True)
class Thresholds:
    up: float
    down: float
    small_up: Optional[float] = None
    small_down: Optional[float] = None


def thresholds_from_cycle(name: str, u: Array, protocol: Optional[Protocol] = None) -> Thresholds:
    """Spike thresholds derived from the deterministic cycle's voltage range.

    Bursters: up = midpoint of the cycle's v range, down = up - 10 mV. For the
    mixed-mode model the large-spike threshold sits far above the small cycle
    and the small-oscillation detector uses the cycle midpoint with a hysteresis
    band of ``small_fraction`` times the cycle amplitude.
    """
    protocol = protocol or PROTOCOLS[name]
    v = u[:, 0]
    lo, hi = float(v.min()), float(v.max())
    mid = 0.5 * (lo + hi)
    if protocol.mode == "spikes_per_burst":
        return Thresholds(up=mid, down=mid - 10.0)
    amp = hi - lo
    band = protocol.small_fraction * amp
    return Thresholds(up=50.0, down=mid, small_up=mid + 0.5 * band, small_down=mid - 0.5 * band)


@dataclass
class NeuroRun:
    counts: Array
    spikes: List[Array]
    small: Optional[List[Array]]
    trace_times: Array
    trace: Array  # first replicate's recorded states
    duration: float
    replicates: int


def simulate_counts(field: VectorField, diff: Diffusion, sigma: float, x0, duration: float, dt: float,
                    rng: np.random.Generator, n_replicates: int, thresholds: Thresholds, mode: str,
                    gap_factor: float = 3.0, *, v_index: int = 0, trace_every: int = 0,
                    trace_limit: int = 200_000) -> NeuroRun:
    """Simulate an ensemble with the RK4-drift / Ito-noise scheme and segment online."""
    x = np.tile(np.asarray(x0, dtype=float), (n_replicates, 1))
    n_steps = int(round(duration / dt))
    P = diff.constant
    if P is None:
        raise ValueError("simulate_counts expects a constant diffusion matrix")
    cols = np.nonzero(np.any(P != 0, axis=0))[0]
    Pc = P[:, cols]
    big = SpikeDetector(n_replicates, thresholds.up, thresholds.down, x[:, v_index])
    small = None
    if mode == "small_osc_between_spikes":
        small = SpikeDetector(n_replicates, thresholds.small_up, thresholds.small_down, x[:, v_index])
    noise = GaussianBlocks(rng, (n_replicates, len(cols)), block=128)
    sq = np.sqrt(dt)
    tt, tr = [], []
    for k in range(n_steps):
        v_old = x[:, v_index].copy()
        x = rk4_step(field.drift, x, dt)
        if sigma > 0:
            x += sigma * sq * (noise.next() @ Pc.T)
        t0, t1 = k * dt, (k + 1) * dt
        v_new = x[:, v_index]
        big.update(t0, t1, v_old, v_new)
        if small is not None:
            small.update(t0, t1, v_old, v_new)
        if trace_every and k % trace_every == 0 and len(tt) < trace_limit:
            tt.append(t1)
            tr.append(x[0].copy())
        if k % 256 == 0 and not np.all(np.isfinite(x)):
            raise FloatingPointError(f"simulation diverged near step {k}")
    spikes = [np.array(e) for e in big.events]
    smalls = [np.array(e) for e in small.events] if small is not None else None
    counts = []
    for r in range(n_replicates):
        ec = count_per_epoch(spikes[r], mode, gap_factor, None if smalls is None else smalls[r])
        counts.append(ec.counts)
    return NeuroRun(counts=np.concatenate(counts) if counts else np.zeros(0, np.int64), spikes=spikes,
                    small=smalls, trace_times=np.array(tt), trace=np.array(tr).reshape(len(tt), x.shape[1]),
                    duration=duration, replicates=n_replicates)


def epoch_samples(run: NeuroRun, mode: str, gap_factor: float = 3.0):
    """``(counts, censored)`` over replicates.

    A replicate without a complete epoch contributes one censored record: the
    events seen after its last large spike (or in total, for bursters).
    """
    counts, cens = [], []
    for r in range(run.replicates):
        small = None if run.small is None else run.small[r]
        ec = count_per_epoch(run.spikes[r], mode, gap_factor, small)
        if len(ec):
            counts.append(ec.counts)
            cens.append(np.zeros(len(ec), dtype=bool))
            continue
        if small is None:
            seen = len(run.spikes[r])
        else:
            last = run.spikes[r][-1] if len(run.spikes[r]) else -np.inf
            seen = int((np.asarray(small) > last).sum())
        counts.append(np.array([seen], dtype=np.int64))
        cens.append(np.ones(1, dtype=bool))
    if not counts:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=bool)
    return np.concatenate(counts), np.concatenate(cens)
