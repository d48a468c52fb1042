"""Command-line front end: validated JSON configs, cycle artifacts and CSV/JSON outputs.

Subcommands ``find-cycle``, ``exit-times``, ``neuro`` and ``fit``. Exit codes:
0 success, 1 configuration error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import importlib
import json
import sys
import warnings
from dataclasses import asdict, fields
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .benchmarks import hopf_diffusion, hopf_normal_form
from .cycle_geometry import (CycleNotFound, FrameBundle, LimitCycle, PMCoefficients, build_frame,
                             compute_coefficients, find_limit_cycle, floquet_stability)
from .ensemble import run_batches
from .exit_stats import (INCONCLUSIVE, EmptySample, geometric_tail_fit, hazard_curve, hazard_flatness,
                         hazard_upper_shape, sigma_scaling_report, tail_start)
from .linear_rpm import (KIND_NAMES, ExitRun, KestenSpec, LinearPMSpec, simulate_exit_full,
                         simulate_exit_kesten, simulate_exit_linear, write_exit_csv)
from .neuro_models import (DEFAULTS, PROTOCOLS, NeuroModelSpec, UnknownModel, epoch_samples,
                           simulate_counts, thresholds_from_cycle)
from .norms import NotContracting, adapted_norm
from .sde_core import IntegrationDiverged

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2
SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


# --- configuration ---------------------------------------------------------------

class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class CycleConfig(_Strict):
    """Which field to use and how to locate its cycle.

    ``model`` is ``"hopf"``, a neuron model name, or ``"package.module:callable"``
    returning ``(VectorField, Diffusion)``.
    """

    model: str = "hopf"
    params: Dict[str, float] = Field(default_factory=dict)
    guess: Optional[List[float]] = None
    n_grid: Optional[int] = Field(None, ge=64)
    max_transient: Optional[float] = Field(None, gt=0)
    dt: Optional[float] = Field(None, gt=0)
    epsilon: Optional[float] = Field(None, gt=0, lt=1)


class MatrixConfig(_Strict):
    """Explicit linearized map (``Sigma`` covariance of ``(zeta, eta)``) or Kesten data (``G``)."""

    A: List[List[float]]
    B: Optional[List[List[float]]] = None
    Sigma: Optional[List[List[float]]] = None
    G: Optional[List[List[float]]] = None


class ExitTimesConfig(_Strict):
    mode: Literal["linear", "kesten", "full"] = "linear"
    cycle: CycleConfig = Field(default_factory=CycleConfig)
    artifact: Optional[str] = None
    matrices: Optional[MatrixConfig] = None
    sigma: Union[float, List[float]] = Field(default_factory=lambda: [0.1])
    h: Union[float, List[float]] = Field(default_factory=lambda: [0.06])
    delta: Optional[float] = Field(None, ge=0)
    epsilon: float = Field(0.5, gt=0, lt=1)
    max_n: int = Field(10_000, ge=1)
    steps_per_period: int = Field(1000, ge=50)
    n_boot: int = Field(999, ge=0)
    batch_size: int = Field(4096, ge=1)

    @field_validator("sigma", "h")
    @classmethod
    def _grid(cls, v):
        vals = [v] if isinstance(v, (int, float)) else list(v)
        if not vals:
            raise ValueError("grid must not be empty")
        return vals


class NeuroConfig(_Strict):
    model: str
    params: Dict[str, float] = Field(default_factory=dict)
    sigma: Optional[float] = Field(None, ge=0)
    duration: float = Field(10_000.0, gt=0)
    dt: Optional[float] = Field(None, gt=0)
    start: Literal["cycle", "guess"] = "cycle"
    trace_every: int = Field(10, ge=0)
    n0: Optional[int] = Field(None, ge=1)
    n_boot: int = Field(999, ge=0)
    batch_size: int = Field(64, ge=1)


class FitConfig(_Strict):
    input: str
    select: Dict[str, float] = Field(default_factory=dict)  # keep rows whose columns equal these values
    n0: Optional[int] = Field(None, ge=1)
    n_boot: int = Field(999, ge=0)


class RunConfig(_Strict):
    schema_version: Literal[1] = 1
    seed: int = Field(0, ge=0)
    replicates: int = Field(1000, ge=1)
    threads: int = Field(1, ge=1)
    out: str = "out"
    header_timestamp: bool = True
    find_cycle: Optional[CycleConfig] = None
    exit_times: Optional[ExitTimesConfig] = None
    neuro: Optional[NeuroConfig] = None
    fit: Optional[FitConfig] = None


def load_config(path: Optional[str], overrides: Optional[dict] = None) -> RunConfig:
    """Read and validate a JSON config; command-line ``overrides`` replace top-level keys."""
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


# --- artifacts ---------------------------------------------------------------------

def _encode(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return value


def _timestamp() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def resolve_model(cfg: CycleConfig):
    """``(field, diffusion, guess, options)`` for a cycle config."""
    if cfg.model == "hopf":
        if cfg.params:
            raise ConfigError("the hopf model takes no parameters")
        return hopf_normal_form(), hopf_diffusion(), [2.0, 0.0], {}
    if cfg.model in DEFAULTS:
        try:
            spec = NeuroModelSpec.create(cfg.model, cfg.params)
        except KeyError as exc:
            raise ConfigError(str(exc)) from exc
        field, diff = spec.build()
        pr = PROTOCOLS[cfg.model]
        opts = dict(dt=pr.cycle_dt, n_grid=pr.n_grid, max_transient=pr.max_transient)
        return field, diff, list(pr.initial_guess), opts
    if ":" in cfg.model:
        mod, _, name = cfg.model.partition(":")
        try:
            factory = getattr(importlib.import_module(mod), name)
        except (ImportError, AttributeError) as exc:
            raise ConfigError(f"cannot import field {cfg.model}: {exc}") from exc
        field, diff = factory(**cfg.params)
        return field, diff, None, {}
    raise ConfigError(f"unknown model {cfg.model!r}; choose hopf, {', '.join(sorted(DEFAULTS))} "
                      "or module:callable")


def compute_cycle(cfg: CycleConfig):
    field, diff, guess, opts = resolve_model(cfg)
    guess = cfg.guess if cfg.guess is not None else guess
    if guess is None:
        raise ConfigError("a user field needs an initial guess")
    if len(guess) != field.dim:
        raise ConfigError(f"guess has {len(guess)} entries, field dimension is {field.dim}")
    for key in ("dt", "n_grid", "max_transient"):
        if getattr(cfg, key) is not None:
            opts[key] = getattr(cfg, key)
    cycle = find_limit_cycle(field, guess, **opts)
    frame = build_frame(cycle)
    coeffs = compute_coefficients(cycle, frame, diff)
    return field, diff, cycle, frame, coeffs


def save_artifact(path, cfg: CycleConfig, cycle: LimitCycle, frame: FrameBundle, coeffs: PMCoefficients,
                  timestamp: bool = True) -> dict:
    rep = floquet_stability(coeffs, cfg.epsilon)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": "cycle_artifact",
        "source": cfg.model_dump(),
        "cycle": {f.name: _encode(getattr(cycle, f.name)) for f in fields(cycle) if f.name != "field"},
        "frame": {f.name: _encode(getattr(frame, f.name)) for f in fields(frame)},
        "coefficients": {f.name: _encode(getattr(coeffs, f.name)) for f in fields(coeffs)},
        "floquet": {"moduli": _encode(rep.moduli), "spectral_radius": rep.spectral_radius,
                    "epsilon_max": rep.epsilon_max, "stable": rep.stable, "verdict": rep.verdict},
        "checks": {"orthonormality": frame.orthonormality_error(), "periodicity": frame.periodicity_error(),
                   "liouville": coeffs.liouville_error(), "conjugacy": coeffs.conjugacy_error()},
    }
    if timestamp:
        doc["created"] = _timestamp()
    Path(path).write_text(json.dumps(doc, indent=1))
    return doc


def load_artifact(path):
    """``(cycle, frame, coeffs, source)``; matrices come back bit-identical to the saved ones."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read artifact {path}: {exc}") from exc
    if doc.get("schema_version") != SCHEMA_VERSION or doc.get("kind") != "cycle_artifact":
        raise ConfigError(f"{path} is not a version-{SCHEMA_VERSION} cycle artifact")
    source = CycleConfig.model_validate(doc["source"])
    field, _, _, _ = resolve_model(source)

    def arrays(d, cls):
        out = {}
        for f in fields(cls):
            v = d[f.name]
            out[f.name] = np.array(v, dtype=float) if isinstance(v, list) else v
        return out

    c = doc["cycle"]
    cyc_kw = {f.name: (np.array(c[f.name], dtype=float) if isinstance(c[f.name], list) else c[f.name])
              for f in fields(LimitCycle) if f.name != "field"}
    cycle = LimitCycle(field=field, **cyc_kw)
    frame = FrameBundle(**arrays(doc["frame"], FrameBundle))
    coeffs = PMCoefficients(**arrays(doc["coefficients"], PMCoefficients))
    return cycle, frame, coeffs, source


# --- reports -------------------------------------------------------------------------

def _fit_dict(fit) -> dict:
    d = asdict(fit)
    d["passed"] = fit.passed
    return {k: (None if isinstance(v, float) and not np.isfinite(v) else v) for k, v in d.items()}


def _curve_rows(curve):
    return [asdict(c) for c in curve]


def _write_json(path, doc, timestamp: bool):
    if timestamp:
        doc = {"created": _timestamp(), **doc}

    def clean(v):
        if isinstance(v, dict):
            return {k: clean(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [clean(x) for x in v]
        v = _encode(v)
        if isinstance(v, float) and not np.isfinite(v):
            return None
        if isinstance(v, list):
            return clean(v)
        return v

    Path(path).write_text(json.dumps(clean(doc), indent=1))


def _header(cfg: RunConfig, what: str) -> str:
    return f"{what} created {_timestamp()}" if cfg.header_timestamp else None


def _warn(msg: str):
    print(f"warning: {msg}", file=sys.stderr)


# --- commands ---------------------------------------------------------------------

def cmd_find_cycle(cfg: RunConfig) -> dict:
    cc = cfg.find_cycle or CycleConfig()
    _, _, cycle, frame, coeffs = compute_cycle(cc)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = save_artifact(out / "cycle.json", cc, cycle, frame, coeffs, cfg.header_timestamp)
    fl = doc["floquet"]
    print(f"model {cc.model}: period {cycle.period_T:.10g}, newton residual {cycle.newton_residual:.2e}")
    print("multiplier moduli: " + " ".join(f"{m:.6e}" for m in fl["moduli"]))
    print(f"verdict: {fl['verdict']} (epsilon_max = {fl['epsilon_max']:.6g})")
    if coeffs.transverse_dim == 1:
        print(f"A = {coeffs.A[0, 0]:.12e}, B = {coeffs.B[0, 0]:.12e}")
    return doc


def _exit_source(ec: ExitTimesConfig):
    """Coefficients (or explicit matrices) and, for full runs, the cycle data."""
    if ec.matrices is not None:
        if ec.mode == "full":
            raise ConfigError("mode 'full' needs a cycle, not explicit matrices")
        return ec.matrices, None
    if ec.artifact is not None:
        cycle, frame, coeffs, source = load_artifact(ec.artifact)
        _, diff, _, _ = resolve_model(source)
        return coeffs, (cycle.field, diff, cycle, frame)
    field, diff, cycle, frame, coeffs = compute_cycle(ec.cycle)
    return coeffs, (field, diff, cycle, frame)


def _exit_worker(ec: ExitTimesConfig, data, full, oracle, sigma: float, h: float):
    d = oracle.A.shape[0]
    if ec.mode == "linear":
        if isinstance(data, MatrixConfig):
            if data.Sigma is None:
                raise ConfigError("linear mode with explicit matrices needs Sigma")
            spec = LinearPMSpec(A=data.A, B=data.B if data.B is not None else np.zeros((d, d)),
                                sigma=sigma, Sigma=data.Sigma)
        else:
            spec = LinearPMSpec.from_coefficients(data, sigma)
        return lambda rng, n, j: simulate_exit_linear(spec, oracle, h, np.zeros(d), ec.max_n, rng, n)
    if ec.mode == "kesten":
        if isinstance(data, MatrixConfig):
            G = data.G if data.G is not None else np.eye(d)
            B = data.B if data.B is not None else np.zeros((d, d))
        else:
            pd = np.linalg.eigvalsh(data.cov_eta).min() > 0
            G = np.linalg.cholesky(data.cov_eta) if pd else np.eye(d)
            B = data.B
        delta = sigma if ec.delta is None else ec.delta
        spec = KestenSpec(A=oracle.A, B=B, G=G, sigma=sigma, delta=delta)
        return lambda rng, n, j: simulate_exit_kesten(spec, oracle, h, np.zeros(d), ec.max_n, rng, n)
    field, diff, cycle, frame = full
    dt = cycle.period_T / ec.steps_per_period
    return lambda rng, n, j: simulate_exit_full(field, diff, cycle, frame, oracle, sigma, h, ec.max_n, rng,
                                                n_replicates=n, dt=dt)


def cmd_exit_times(cfg: RunConfig) -> dict:
    ec = cfg.exit_times or ExitTimesConfig()
    data, full = _exit_source(ec)
    A = np.atleast_2d(np.asarray(data.A, dtype=float))
    oracle = adapted_norm(A, ec.epsilon)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "exit_samples.csv"
    header = _header(cfg, "exit samples")
    points, runs_by_h, grid_runs = [], {}, {}
    n_points = len(ec.sigma) * len(ec.h)
    first = True
    for i, sigma in enumerate(ec.sigma):
        for j, h in enumerate(ec.h):
            worker = _exit_worker(ec, data, full, oracle, float(sigma), float(h))
            seed = [cfg.seed, i, j]
            run = ExitRun.concat(run_batches(worker, cfg.replicates, seed, batch_size=ec.batch_size,
                                             threads=cfg.threads))
            write_exit_csv(csv_path, run, cfg.seed, header_line=header, append=not first,
                           start_id=0, extra={"sigma": float(sigma), "h": float(h)})
            first = False
            try:
                curve = hazard_curve(run)
            except EmptySample:
                curve = []  # every replicate censored: no exit to estimate from
            fit = geometric_tail_fit(run, 1, n_boot=ec.n_boot, seed=cfg.seed)
            if fit.status == INCONCLUSIVE:
                _warn(f"sigma={sigma}, h={h}: only {fit.events} exits; hazard fit inconclusive")
            kinds = {KIND_NAMES[k]: int((run.kind == k).sum()) for k in KIND_NAMES}
            points.append({"sigma": float(sigma), "h": float(h), "replicates": len(run), "kinds": kinds,
                           "geometric_fit": _fit_dict(fit),
                           # family-wise level over the whole (sigma, h) grid
                           "flatness": asdict(hazard_flatness(curve, alpha=0.05 / n_points)),
                           "inconclusive": fit.status == INCONCLUSIVE,
                           "hazard_curve": _curve_rows(curve)})
            runs_by_h.setdefault(float(h), {})[float(sigma)] = run
            grid_runs[(float(sigma), float(h))] = run
    report = {"schema_version": SCHEMA_VERSION, "mode": ec.mode, "seed": cfg.seed,
              "epsilon": ec.epsilon, "gamma": [oracle.gamma1, oracle.gamma2], "points": points}
    scaling = {}
    for h, runs in runs_by_h.items():
        if len(runs) >= 4:
            rep = sigma_scaling_report(runs)
            scaling[repr(h)] = asdict(rep)
            print(f"h={h}: log(p/sigma) vs sigma^-2 slope {rep.slope:.4g}, R^2 {rep.r2:.3f} [{rep.status}]")
    if scaling:
        report["sigma_scaling"] = scaling
    if ec.mode == "full" and len(grid_runs) >= 2:
        report["upper_shape"] = asdict(hazard_upper_shape(grid_runs))
    _write_json(out / "hazard_report.json", report, cfg.header_timestamp)
    for p in points:
        g = p["geometric_fit"]
        ph = "nan" if g["p_mle"] is None else f"{g['p_mle']:.5g}"
        print(f"sigma={p['sigma']:g} h={p['h']:g}: p_hat={ph} status={g['status']}")
    return report


def cmd_neuro(cfg: RunConfig) -> dict:
    nc = cfg.neuro
    if nc is None:
        raise ConfigError("the neuro command needs a 'neuro' section (at least a model name)")
    if nc.model not in DEFAULTS:
        raise ConfigError(f"unknown model {nc.model!r}; choose from {', '.join(sorted(DEFAULTS))}")
    try:
        spec = NeuroModelSpec.create(nc.model, nc.params)
    except (KeyError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    pr = PROTOCOLS[nc.model]
    field, diff = spec.build()
    sigma = spec.noise_sigma if nc.sigma is None else nc.sigma
    dt = nc.dt or pr.dt
    cycle = find_limit_cycle(field, pr.initial_guess, dt=pr.cycle_dt, n_grid=pr.n_grid,
                             max_transient=pr.max_transient)
    th = thresholds_from_cycle(nc.model, cycle.u, pr)
    x0 = cycle.u[0] if nc.start == "cycle" else np.asarray(pr.initial_guess, dtype=float)

    def worker(rng, n, j):
        return simulate_counts(field, diff, sigma, x0, nc.duration, dt, rng, n, th, pr.mode, pr.gap_factor,
                               trace_every=nc.trace_every if j == 0 else 0)

    runs = run_batches(worker, cfg.replicates, cfg.seed, batch_size=nc.batch_size, threads=cfg.threads)
    counts, cens = [], []
    for r in runs:
        k, c = epoch_samples(r, pr.mode, pr.gap_factor)
        counts.append(k)
        cens.append(c)
    counts, cens = np.concatenate(counts), np.concatenate(cens)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    header = _header(cfg, f"{nc.model} sigma={sigma!r}")
    tr = runs[0]
    with open(out / "trace.csv", "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x{i}" for i in range(field.dim)])
        for t, x in zip(tr.trace_times, tr.trace):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in x])
    with open(out / "counts.csv", "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh)
        w.writerow(["epoch", "count", "censored"])
        for i, (k, c) in enumerate(zip(counts, cens)):
            w.writerow([i, int(k), int(c)])
    done = counts[~cens]
    hist = np.bincount(done) if len(done) else np.zeros(0, dtype=int)
    with open(out / "histogram.csv", "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh)
        w.writerow(["count", "frequency", "density"])
        for k, f in enumerate(hist):
            w.writerow([k, int(f), repr(float(f / len(done)))])
    # geometric on {1, 2, ...}: shift counts, which may be zero, by one
    samples = (counts + 1, cens)
    if (~cens).any():
        n0 = nc.n0 or tail_start(samples)
        fit = geometric_tail_fit(samples, n0, n_boot=nc.n_boot, seed=cfg.seed)
    else:
        fit = geometric_tail_fit(samples, 1, n_boot=0)
    if fit.status == INCONCLUSIVE:
        _warn(f"{fit.events} complete epochs in the tail; geometric fit inconclusive")
    doc = {"schema_version": SCHEMA_VERSION, "model": spec.to_dict(), "sigma": sigma, "dt": dt,
           "duration": nc.duration, "time_unit": pr.time_unit, "replicates": cfg.replicates,
           "seed": cfg.seed, "mode": pr.mode, "thresholds": asdict(th), "cycle_period": cycle.period_T,
           "epochs": int(len(counts)), "censored_epochs": int(cens.sum()),
           "count_offset": 1, "geometric_fit": _fit_dict(fit)}
    _write_json(out / "fit.json", doc, cfg.header_timestamp)
    print(f"{nc.model}: {len(done)} complete epochs, mean count "
          f"{done.mean() if len(done) else float('nan'):.4g}; fit {fit.status} (p={fit.p_value})")
    return doc


def read_samples_csv(path, select: Optional[dict] = None):
    """``(tau, censored)`` from an exit-sample CSV or ``(count + 1, censored)`` from a counts CSV."""
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise ConfigError(f"{path} is empty")
    head, body = rows[0], rows[1:]
    col = {name: i for i, name in enumerate(head)}
    for key, value in (select or {}).items():
        if key not in col:
            raise ConfigError(f"{path} has no column {key!r}")
        body = [r for r in body if float(r[col[key]]) == value]
    if not body:
        raise ConfigError(f"no rows of {path} match {select}")
    if "tau" in col:
        tau = np.array([int(r[col["tau"]]) for r in body], dtype=np.int64)
    elif "count" in col:
        tau = np.array([int(r[col["count"]]) + 1 for r in body], dtype=np.int64)
    else:
        raise ConfigError(f"{path} has neither a 'tau' nor a 'count' column")
    cens = (np.array([r[col["censored"]] == "1" for r in body], dtype=bool) if "censored" in col
            else np.zeros(len(tau), dtype=bool))
    return tau, cens


def cmd_fit(cfg: RunConfig) -> dict:
    fc = cfg.fit
    if fc is None:
        raise ConfigError("the fit command needs a 'fit' section with an input path")
    tau, cens = read_samples_csv(fc.input, fc.select)
    n0 = fc.n0 or tail_start((tau, cens))
    fit = geometric_tail_fit((tau, cens), n0, n_boot=fc.n_boot, seed=cfg.seed)
    curve = hazard_curve((tau, cens))
    doc = {"schema_version": SCHEMA_VERSION, "input": fc.input, "n": int(len(tau)),
           "geometric_fit": _fit_dict(fit), "flatness": asdict(hazard_flatness(curve, n0)),
           "hazard_curve": _curve_rows(curve)}
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "fit.json", doc, cfg.header_timestamp)
    print(f"n0={n0}: p_hat={fit.p_mle:.5g} +- {fit.stderr:.2g}, KS p={fit.p_value}, {fit.status}")
    return doc


COMMANDS = {"find-cycle": cmd_find_cycle, "exit-times": cmd_exit_times, "neuro": cmd_neuro, "fit": cmd_fit}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="perturbed-cycles", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--replicates", type=int)
        p.add_argument("--threads", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--no-header-timestamp", action="store_true",
                       help="omit creation timestamps so outputs are byte-reproducible")
        if name == "neuro":
            p.add_argument("--model")
        if name == "fit":
            p.add_argument("--input")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    overrides = {"seed": args.seed, "replicates": args.replicates, "threads": args.threads, "out": args.out}
    if args.no_header_timestamp:
        overrides["header_timestamp"] = False
    try:
        cfg = load_config(args.config, overrides)
        if args.command == "neuro" and args.model:
            section = cfg.neuro.model_dump() if cfg.neuro else {}
            cfg = cfg.model_copy(update={"neuro": NeuroConfig.model_validate({**section, "model": args.model})})
        if args.command == "fit" and args.input:
            section = cfg.fit.model_dump() if cfg.fit else {}
            cfg = cfg.model_copy(update={"fit": FitConfig.model_validate({**section, "input": args.input})})
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            COMMANDS[args.command](cfg)
    except (ConfigError, ValidationError, UnknownModel, EmptySample) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CycleNotFound, NotContracting, IntegrationDiverged, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
