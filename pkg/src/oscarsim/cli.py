"""Command-line entry point: configuration, runs, manifests and replay.

Every run reads one JSON configuration, writes its outputs into ``--out``
and finishes by atomically writing ``manifest.json``. The manifest echoes
the resolved configuration (seed included), so ``oscarsim replay <dir>``
can re-run it and compare output hashes.

Exit codes: 0 success, 10 invalid configuration, 20 basis truncation,
30 numerical failure (including a replay mismatch).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import platform
import sys
import tempfile
import time
import warnings
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .analysis import (crossing_intervals, fig6_experiment, peak_areas, spin_field_projection)
from .estimates import adiabaticity_window, dimensionless_frequency_shift, estimate_report
from .hilbert import PositionGrid, TruncationError, save_state
from .master import (MasterSpec, benchmark_density, cat_density, count_peaks_2d,
                     evolve_master, four_peak_times)
from .noise import RfGateSchedule, sample_telegraph
from .params import (DT_BOUND, ExperimentalParams, SimParams, default_n_max, min_n_max,
                     to_dimensionless)
from .record import TrajectoryRecord, load_snapshots, save_snapshots
from .schrodinger import (LEAKAGE_LIMIT, EvolutionSpec, NumericalError, evolve,
                          initial_benchmark_state, run_cat_split)

__all__ = ["main", "run", "validate", "load_config", "resolve_config", "RunConfig",
           "Diagnostic", "ConfigError", "replay", "EXIT_OK", "EXIT_VALIDATION",
           "EXIT_TRUNCATION", "EXIT_NUMERICAL", "THREADS_ENV"]

EXIT_OK = 0
EXIT_VALIDATION = 10
EXIT_TRUNCATION = 20
EXIT_NUMERICAL = 30

THREADS_ENV = "OSCARSIM_THREADS"
MANIFEST = "manifest.json"
MODES = ("estimate", "schrodinger", "master", "analyze", "fig6", "cat-split")
#: Largest basis the CLI will attempt; larger requests are desk-infeasible.
MAX_N_MAX = 4096

_REQUIRED = object()
TOP_KEYS = ("mode", "units", "params", "numerics", "run", "gates", "seed", "outputs", "inputs")
LAB_KEYS = {f.name for f in fields(ExperimentalParams)}
SIM_KEYS = {f.name for f in fields(SimParams)}
NUMERICS_KEYS = {"n_max": None, "dt": None, "noise_from_thermal": False}
OUTPUT_KEYS = {"format": "csv", "density_snapshots": False, "save_state": False}
GATE_KEYS = ("kind", "t_start", "period", "duration", "t_first", "windows", "anchor")

_EVOLVE = {"t_end": _REQUIRED, "sample_every": 0.05, "integrator": "rk4", "dt": None}
RUN_KEYS = {
    "estimate": {"t_col": None, "delta_x": None, "P1": 1.0, "P2": 0.0},
    "schrodinger": {**_EVOLVE, "theta": 0.0, "x0": None, "track_peaks": False,
                    "label_branches": False, "density_every": 1, "leakage_limit": LEAKAGE_LIMIT},
    "master": {**_EVOLVE, "sample_every": 0.5, "integrator": "ifrk4", "theta": 0.0,
               "cat_x0": None, "dissipation": True, "band": 3.0, "matrix_every": 0,
               "leakage_limit": 1e-4, "trace_limit": 1e-3},
    "fig6": {**_EVOLVE, "Delta0_list": [0.0, 0.3, 0.5], "seeds": 10, "split_floor": None,
             "density_every": 1},
    "cat-split": {**_EVOLVE, "thetas": [math.pi / 3, math.pi / 2], "density_every": 1},
    "analyze": {"min_crossings": 3, "peak_floor": 0.05, "density_time": None},
}
INPUT_KEYS = ("trajectory", "densities", "matrices")


class ConfigError(ValueError):
    """Configuration rejected; ``diagnostics`` lists every error found."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(d.message for d in self.diagnostics if d.level == "error"))


@dataclass(frozen=True)
class Diagnostic:
    level: str      # "error" or "warning"
    code: str
    message: str

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunConfig:
    """A validated configuration ready to run."""

    mode: str
    units: str
    seed: int
    run: dict
    outputs: dict
    lab: ExperimentalParams | None = None
    sim: SimParams | None = None
    gates: RfGateSchedule | None = None
    inputs: dict = field(default_factory=dict)
    echo: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)


# -- configuration -------------------------------------------------------------

def load_config(path) -> dict:
    text = Path(path).read_text()
    if not text.strip():
        return {}
    data = json.loads(text)
    if not isinstance(data, dict):
        raise ConfigError([Diagnostic("error", "config", "configuration must be a JSON object")])
    return data


def _fill(section: str, given, defaults: dict, errors: list) -> dict:
    given = {} if given is None else given
    if not isinstance(given, dict):
        errors.append(Diagnostic("error", section, f"'{section}' must be an object"))
        return {}
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        errors.append(Diagnostic("error", "unknown-key",
                                 f"unknown {section} keys: {', '.join(unknown)}"))
    out = {}
    for key, default in defaults.items():
        if key in given:
            out[key] = given[key]
        elif default is _REQUIRED:
            errors.append(Diagnostic("error", "missing-key", f"{section}.{key} is required"))
        else:
            out[key] = default
    return out


def _units(raw: dict, params, errors: list) -> str:
    units = raw.get("units")
    if isinstance(params, str):
        return "lab"
    keys = set(params or {})
    lab_only, sim_only = keys & (LAB_KEYS - SIM_KEYS), keys & (SIM_KEYS - LAB_KEYS)
    if units is None:
        if lab_only and sim_only:
            errors.append(Diagnostic(
                "error", "mixed-units",
                f"params mix laboratory keys ({', '.join(sorted(lab_only))}) with "
                f"dimensionless keys ({', '.join(sorted(sim_only))})"))
        return "lab" if lab_only else "sim"
    if units not in ("lab", "sim"):
        errors.append(Diagnostic("error", "units", f"units must be 'lab' or 'sim', got {units!r}"))
        return "sim"
    wrong = sim_only if units == "lab" else lab_only
    if wrong:
        errors.append(Diagnostic(
            "error", "mixed-units",
            f"units={units!r} but params contain {', '.join(sorted(wrong))}"))
    return units


def _sim_diagnostics(data: dict, errors: list) -> SimParams | None:
    """Build SimParams, turning the basis and step checks into targeted messages."""
    data = dict(data)
    try:
        A = float(data["A"])
    except (KeyError, TypeError, ValueError):
        errors.append(Diagnostic("error", "params", "params.A is required and must be a number"))
        return None
    n_max = data.get("n_max")
    if n_max is not None and A > 0 and n_max < min_n_max(A):
        errors.append(Diagnostic(
            "error", "n_max",
            f"n_max={n_max} is below the coherent-state requirement for A={A:g} "
            f"(minimum {min_n_max(A)}); suggested n_max={default_n_max(A)}"))
        data["n_max"] = default_n_max(A)
    dt = data.pop("dt", None)
    try:
        sim = SimParams(**data)
    except (TypeError, ValueError) as exc:
        errors.append(Diagnostic("error", "params", str(exc)))
        return None
    if sim.n_max > MAX_N_MAX:
        errors.append(Diagnostic(
            "error", "n_max", f"n_max={sim.n_max} exceeds the supported maximum {MAX_N_MAX}"))
        return None
    if dt is not None:
        if not (isinstance(dt, (int, float)) and dt > 0):
            errors.append(Diagnostic("error", "dt", f"dt must be a positive number, got {dt!r}"))
            return None
        if dt * sim.e_max > DT_BOUND * (1 + 1e-12):
            errors.append(Diagnostic(
                "error", "dt",
                f"dt={dt:.4g} gives dt*E_max={dt * sim.e_max:.4g}, violating the bound "
                f"dt*E_max <= {DT_BOUND} (E_max={sim.e_max:.4g}); use dt <= {DT_BOUND / sim.e_max:.4g}"))
            return None
        sim = replace(sim, dt=float(dt))
    return sim


def _adiabatic_warnings(p) -> list[Diagnostic]:
    if isinstance(p, SimParams) and p.eps == 0:
        return []
    win = adiabaticity_window(p)
    lab = isinstance(p, ExperimentalParams)
    lower = "GA/B1" if lab else "2*eta*A/eps"
    upper = "f_R/f_c" if lab else "eps"
    out = []
    if not win.full_reversal:
        out.append(Diagnostic(
            "warning", "full-reversal",
            f"full spin reversal needs {lower} >> 1 but {lower} = {win.lower_ratio:.3g}"
            + ("" if lab else f" (2*eta*A = {2 * p.eta * p.A:.3g} vs eps = {p.eps:.3g})")))
    if not win.adiabatic:
        out.append(Diagnostic(
            "warning", "adiabaticity",
            f"adiabatic following needs {lower} << {upper} but {lower} = {win.lower_ratio:.3g}, "
            f"{upper} = {win.upper_ratio:.3g}"))
    return out


def _gates(spec, errors: list) -> RfGateSchedule | None:
    if spec is None:
        return None
    if not isinstance(spec, dict):
        errors.append(Diagnostic("error", "gates", "'gates' must be an object"))
        return None
    unknown = sorted(set(spec) - set(GATE_KEYS))
    if unknown:
        errors.append(Diagnostic("error", "unknown-key", f"unknown gates keys: {', '.join(unknown)}"))
        return None
    kind = spec.get("kind")
    anchor = spec.get("anchor", "fixed")
    try:
        if kind == "pi_pulse":
            sched = RfGateSchedule.pi_pulse(float(spec["t_start"]))
        elif kind == "half_pi_pulse":
            sched = RfGateSchedule.half_pi_pulse(float(spec["t_start"]))
        elif kind == "periodic":
            return {"period": float(spec["period"]), "duration": float(spec.get("duration", math.pi)),
                    "t_first": float(spec.get("t_first", 0.0)), "anchor": anchor}
        elif kind == "windows":
            sched = RfGateSchedule(tuple(spec["windows"]), mode="windows")
        else:
            errors.append(Diagnostic(
                "error", "gates",
                f"gates.kind must be pi_pulse, half_pi_pulse, periodic or windows, got {kind!r}"))
            return None
        return replace(sched, anchor=anchor)
    except (KeyError, TypeError, ValueError) as exc:
        errors.append(Diagnostic("error", "gates", f"invalid gate schedule: {exc}"))
        return None


def _check_seed(seed, errors: list) -> int:
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        errors.append(Diagnostic("error", "seed", f"seed must be an unsigned 64-bit integer, got {seed!r}"))
        return 0
    return seed


def resolve_config(raw: dict, *, mode: str | None = None, seed: int | None = None,
                   fmt: str | None = None, base_dir=".") -> tuple[RunConfig | None, list[Diagnostic]]:
    """Validate ``raw`` and return ``(config, diagnostics)``.

    ``config`` is ``None`` whenever any diagnostic is an error. Command-line
    ``mode``, ``seed`` and ``fmt`` override the file. Never mutates ``raw``.
    """
    errors: list[Diagnostic] = []
    if not raw:
        return None, [Diagnostic("error", "empty", "configuration is empty")]
    unknown = sorted(set(raw) - set(TOP_KEYS))
    if unknown:
        errors.append(Diagnostic("error", "unknown-key", f"unknown top-level keys: {', '.join(unknown)}"))
    file_mode = raw.get("mode")
    if mode is not None and file_mode is not None and file_mode != mode:
        errors.append(Diagnostic("error", "mode", f"config mode {file_mode!r} differs from command {mode!r}"))
    mode = mode or file_mode
    if mode not in MODES:
        errors.append(Diagnostic("error", "mode", f"mode must be one of {', '.join(MODES)}, got {mode!r}"))
        return None, errors
    seed = _check_seed(raw.get("seed", 0) if seed is None else seed, errors)
    run_opts = _fill("run", raw.get("run"), RUN_KEYS[mode], errors)
    outputs = _fill("outputs", raw.get("outputs"), OUTPUT_KEYS, errors)
    if fmt is not None:
        outputs["format"] = fmt
    if outputs.get("format") not in ("csv", "json"):
        errors.append(Diagnostic("error", "format", "outputs.format must be 'csv' or 'json'"))

    cfg = RunConfig(mode=mode, units="sim", seed=seed, run=run_opts, outputs=outputs)
    params = raw.get("params")
    if mode == "analyze":
        cfg.inputs = _inputs(raw.get("inputs"), Path(base_dir), errors)
        if params is not None:
            cfg.units = _units(raw, params, errors)
            if cfg.units == "sim" and isinstance(params, dict):
                cfg.sim = _sim_diagnostics(params, errors)
    else:
        if raw.get("inputs") is not None:
            errors.append(Diagnostic("error", "inputs", f"'inputs' is only used by analyze, not {mode}"))
        if params is None:
            errors.append(Diagnostic("error", "params", "params are required"))
            return None, errors
        if not isinstance(params, (dict, str)):
            errors.append(Diagnostic("error", "params", "params must be an object or 'reference'"))
            return None, errors
        cfg.units = _units(raw, params, errors)
        if any(d.code == "mixed-units" for d in errors):
            return None, errors
        numerics = _fill("numerics", raw.get("numerics"), NUMERICS_KEYS, errors)
        if raw.get("numerics") is not None and cfg.units != "lab":
            errors.append(Diagnostic("error", "mixed-units", "'numerics' applies to lab units only"))
        if cfg.units == "lab":
            cfg.lab = _lab_params(params, errors)
            if cfg.lab is not None and mode != "estimate":
                sim = to_dimensionless(cfg.lab, noise_from_thermal=bool(numerics["noise_from_thermal"]))
                data = {**sim.to_dict(), "n_max": numerics["n_max"], "dt": numerics["dt"]}
                cfg.sim = _sim_diagnostics(data, errors)
        elif isinstance(params, dict):
            cfg.sim = _sim_diagnostics(params, errors)
        cfg.gates = _gates(raw.get("gates"), errors)
        if raw.get("gates") is not None and mode not in ("schrodinger",):
            errors.append(Diagnostic("error", "gates", "rf gating is only supported in schrodinger mode"))
        if not errors and mode != "estimate":
            _check_run(cfg, errors)
    warns = []
    if cfg.lab is not None:
        warns += _adiabatic_warnings(cfg.lab)
    elif cfg.sim is not None:
        warns += _adiabatic_warnings(cfg.sim)
    cfg.warnings = warns
    cfg.echo = _echo(raw, cfg)
    diags = errors + warns
    return (None if errors else cfg), diags


def _lab_params(params, errors) -> ExperimentalParams | None:
    if params == "reference":
        return ExperimentalParams.reference()
    if isinstance(params, str):
        errors.append(Diagnostic("error", "params", f"unknown parameter preset {params!r}"))
        return None
    try:
        return ExperimentalParams.from_dict(params)
    except (TypeError, ValueError) as exc:
        errors.append(Diagnostic("error", "params", str(exc)))
        return None


def _inputs(spec, base: Path, errors: list) -> dict:
    if not isinstance(spec, dict) or not spec:
        errors.append(Diagnostic("error", "inputs", "analyze needs an 'inputs' object"))
        return {}
    unknown = sorted(set(spec) - set(INPUT_KEYS))
    if unknown:
        errors.append(Diagnostic("error", "unknown-key", f"unknown inputs keys: {', '.join(unknown)}"))
    out = {}
    for key in INPUT_KEYS:
        if key not in spec:
            continue
        path = (base / spec[key]).resolve()
        probe = path if key == "trajectory" else path.with_suffix(".json")
        if not probe.exists():
            errors.append(Diagnostic("error", "missing-file", f"inputs.{key}: {probe} does not exist"))
        out[key] = str(path)
    return out


def _build_spec(cfg: RunConfig, sim: SimParams | None = None):
    r = cfg.run
    sim = sim or cfg.sim
    if cfg.mode == "master":
        return MasterSpec(sim, float(r["t_end"]), sample_every=float(r["sample_every"]),
                          integrator=r["integrator"], dt=r["dt"], dissipation=bool(r["dissipation"]),
                          matrix_every=int(r["matrix_every"]), band=float(r["band"]),
                          leakage_limit=float(r["leakage_limit"]), trace_limit=float(r["trace_limit"]))
    gates = cfg.gates
    if isinstance(gates, dict):
        gates = RfGateSchedule.periodic(gates["period"], float(r["t_end"]), gates["duration"],
                                        gates["t_first"], gates["anchor"])
    extra = {}
    if cfg.mode == "schrodinger":
        extra = dict(track_peaks=bool(r["track_peaks"]) or bool(r["label_branches"]),
                     label_branches=bool(r["label_branches"]),
                     record_density=bool(cfg.outputs["density_snapshots"]),
                     density_every=int(r["density_every"]), leakage_limit=float(r["leakage_limit"]))
    elif cfg.mode in ("fig6", "cat-split"):
        extra = dict(density_every=int(r["density_every"]))
    return EvolutionSpec(sim, float(r["t_end"]), sample_every=float(r["sample_every"]), gates=gates,
                         integrator=r["integrator"], seed=cfg.seed, dt=r["dt"], **extra)


def _check_run(cfg: RunConfig, errors: list) -> None:
    if cfg.sim is None:
        return
    try:
        _build_spec(cfg)
        r = cfg.run
        if cfg.mode == "fig6":
            _seed_list(r["seeds"], cfg.seed)
            if not r["Delta0_list"] or any(d < 0 for d in r["Delta0_list"]):
                raise ValueError("run.Delta0_list must be a non-empty list of non-negative amplitudes")
            if cfg.sim.eps <= 0:
                raise ValueError("fig6 needs eps > 0 (the telegraph period is set by eps)")
        if cfg.mode == "cat-split" and any(not 0 <= th <= math.pi for th in r["thetas"]):
            raise ValueError("run.thetas must lie in [0, pi]")
    except (TypeError, ValueError) as exc:
        errors.append(Diagnostic("error", "run", str(exc)))


def _seed_list(seeds, base: int) -> list[int]:
    if isinstance(seeds, bool):
        raise ValueError("run.seeds must be a count or a list of seeds")
    if isinstance(seeds, int):
        if seeds < 1:
            raise ValueError("run.seeds must be >= 1")
        return [(base + k) % 2**64 for k in range(seeds)]
    if isinstance(seeds, list) and seeds and all(isinstance(s, int) and 0 <= s < 2**64 for s in seeds):
        return list(seeds)
    raise ValueError("run.seeds must be a count or a list of unsigned 64-bit seeds")


def _echo(raw: dict, cfg: RunConfig) -> dict:
    echo = {k: raw[k] for k in TOP_KEYS if k in raw}
    echo.update(mode=cfg.mode, units=cfg.units, seed=cfg.seed, run=cfg.run, outputs=cfg.outputs)
    if cfg.inputs:
        echo["inputs"] = cfg.inputs
    if cfg.sim is not None:
        echo["resolved_sim"] = cfg.sim.to_dict()
    return json.loads(json.dumps(echo, default=_jsonable))


def validate(raw: dict, **kw) -> list[Diagnostic]:
    """Diagnostics for ``raw`` without running anything."""
    try:
        return resolve_config(raw, **kw)[1]
    except ConfigError as exc:
        return exc.diagnostics


# -- outputs ---------------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _finite(obj):
    """Replace non-finite floats by strings so the JSON stays standard."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def _write_json(path: Path, data) -> None:
    text = json.dumps(_finite(json.loads(json.dumps(data, default=_jsonable))), indent=1)
    path.write_text(text + "\n")


def _atomic_json(path: Path, data) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".manifest-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(json.dumps(_finite(json.loads(json.dumps(data, default=_jsonable))), indent=1) + "\n")
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _write_table(path: Path, header, rows, fmt: str) -> Path:
    path = path.with_suffix("." + fmt)
    rows = [list(r) for r in rows]
    if fmt == "json":
        _write_json(path, {"columns": list(header), "rows": rows})
        return path
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(v if isinstance(v, str) else f"{v:.17g}" for v in r) + "\n")
    return path


def _write_trajectory(out: Path, record: TrajectoryRecord, fmt: str, extra) -> Path:
    path = out / f"trajectory.{fmt}"
    (record.to_json if fmt == "json" else record.to_csv)(path, tuple(extra))
    return path


def _peak_rows(times, reports):
    for t, rep in zip(times, reports):
        for j, p in enumerate(rep.peaks):
            yield [float(t), j, p.position, p.height, p.width, p.area, p.label or "",
                   int(rep.resolvable)]


PEAK_HEADER = ("t", "peak", "position", "height", "width", "area", "label", "resolvable")


# -- mode runners ------------------------------------------------------------------

def _run_estimate(cfg: RunConfig, out: Path, threads: int) -> dict:
    r = cfg.run
    if cfg.lab is not None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            report = estimate_report(cfg.lab, t_col=r["t_col"], delta_x=r["delta_x"],
                                     P1=r["P1"], P2=r["P2"])
        _write_json(out / "estimates.json", report.to_dict())
        (out / "estimates.txt").write_text(report.format_table() + "\n")
    else:
        s = cfg.sim
        win = adiabaticity_window(s)
        data = {"dimensionless_shift": dimensionless_frequency_shift(s.eps, s.eta, s.A),
                "full_reversal": win.full_reversal, "adiabatic": win.adiabatic,
                "reversal_ratio": win.lower_ratio, "eps": win.upper_ratio}
        _write_json(out / "estimates.json", data)
        width = max(map(len, data))
        (out / "estimates.txt").write_text(
            "\n".join(f"{k:<{width}}  {v if isinstance(v, bool) else format(v, '.6g'):>14}"
                      for k, v in data.items()) + "\n")
    return {"invariants": {}}


def _run_schrodinger(cfg: RunConfig, out: Path, threads: int) -> dict:
    r, sim, fmt = cfg.run, cfg.sim, cfg.outputs["format"]
    spec = _build_spec(cfg)
    psi0 = initial_benchmark_state(sim, float(r["theta"]), r["x0"])
    record, final = evolve(psi0, spec)
    _write_trajectory(out, record, fmt, ("eps", "delta", "leakage", "energy"))
    _write_json(out / "events.json", {"events": record.events,
                                      "flip_times": record.extras["flip_times"],
                                      "gate_windows": record.extras["gate_windows"]})
    if spec.track_peaks:
        _write_table(out / "peaks", PEAK_HEADER,
                     _peak_rows(record.extras["density_times"], record.series["peaks"]), fmt)
    if spec.record_density:
        save_snapshots(out / "density", record.densities, record.extras["density_times"],
                       record.grid, quantity="P(x)")
    if cfg.outputs["save_state"]:
        save_state(out / "final_state", final, {"t": spec.t_end})
    energy = np.asarray(record.series["energy"])
    inv = {"norm_drift": record.extras["norm_drift"], "max_leakage": float(record.leakage.max()),
           "energy_drift": float(np.max(np.abs(energy - energy[0]))), "integrator": spec.integrator,
           "dt": record.extras["dt"], "steps": record.extras["steps"]}
    return {"invariants": inv, "flip_times": record.extras["flip_times"]}


def _run_master(cfg: RunConfig, out: Path, threads: int) -> dict:
    r, sim, fmt = cfg.run, cfg.sim, cfg.outputs["format"]
    spec = _build_spec(cfg)
    if r["cat_x0"] is not None:
        rho0 = cat_density(float(r["cat_x0"]), sim.n_max)
    else:
        rho0 = benchmark_density(sim, float(r["theta"]))
    record, final = evolve_master(rho0, spec)
    extra = ("leakage", "purity", "hermiticity", "min_diag", "off_diag_mass", "peaks_2d",
             "cross_peak", "cross_is_peak", "cross_height")
    _write_trajectory(out, record, fmt, extra)
    _write_json(out / "events.json", {"events": record.events,
                                      "four_peak_times": four_peak_times(record)})
    _write_table(out / "peaks", PEAK_HEADER, _peak_rows(record.times, record.series["diag_peaks"]), fmt)
    if record.extras["matrices"]:
        save_snapshots(out / "rho_abs", np.asarray(record.extras["matrices"]),
                       record.extras["matrix_times"], record.grid, quantity="|rho(x, x')|")
    if cfg.outputs["save_state"]:
        save_state(out / "final_state", final, {"t": spec.t_end})
    inv = {k: record.extras[k] for k in ("trace_drift", "max_hermiticity_error", "positivity_breaches")}
    inv.update(max_leakage=float(record.leakage.max()),
               min_diagonal=float(np.min(record.series["min_diag"])),
               positivity_log=[e for e in record.events if e["kind"] == "positivity"],
               integrator=spec.integrator, dt=record.extras["dt"], steps=record.extras["steps"])
    return {"invariants": inv}


def _run_fig6(cfg: RunConfig, out: Path, threads: int) -> dict:
    r, fmt = cfg.run, cfg.outputs["format"]
    spec = _build_spec(cfg)
    seeds = _seed_list(r["seeds"], cfg.seed)
    result = fig6_experiment(r["Delta0_list"], seeds, spec, threads=threads,
                             split_floor=r["split_floor"])
    _write_json(out / "fig6.json", result.to_dict())
    rows, ens = [], []
    for d0, curve in result.curves.items():
        for seed, rep in curve.per_seed.items():
            for j, (t, s) in enumerate(zip(rep.crossing_times[1:], rep.shifts)):
                rows.append([d0, seed, j, t, s])
        idx, mean = curve.ensemble()
        ens.extend([d0, int(j), m] for j, m in zip(idx, mean))
    _write_table(out / "fig6_shifts", ("Delta0", "seed", "crossing", "t", "shift"), rows, fmt)
    _write_table(out / "fig6_ensemble", ("Delta0", "crossing", "mean_shift"), ens, fmt)
    flips = {repr(d0): {str(s): sample_telegraph(d0, spec.sim.T_R, s, spec.t_end).flip_times
                        for s in seeds} for d0 in r["Delta0_list"] if d0 > 0}
    return {"invariants": {"ordering_fraction": result.ordering_fraction}, "flip_times": flips}


def _run_cat_split(cfg: RunConfig, out: Path, threads: int) -> dict:
    r, fmt = cfg.run, cfg.outputs["format"]
    spec = _build_spec(cfg)
    summary, rows = [], []
    for theta in r["thetas"]:
        res = run_cat_split(float(theta), spec)
        summary.append({"theta": theta, "split_time": res.split_time, "areas": res.areas,
                        "expected": {"anti": math.cos(theta / 2) ** 2,
                                     "parallel": math.sin(theta / 2) ** 2},
                        "norm_drift": res.record.extras["norm_drift"]})
        rows.extend([theta] + row for row in _peak_rows(*zip(*res.peak_history)))
    _write_json(out / "cat_split.json", {"runs": summary})
    _write_table(out / "peaks", ("theta",) + PEAK_HEADER, rows, fmt)
    return {"invariants": {"max_norm_drift": max(s["norm_drift"] for s in summary)}}


def _run_analyze(cfg: RunConfig, out: Path, threads: int) -> dict:
    r, fmt, inputs = cfg.run, cfg.outputs["format"], cfg.inputs
    report = {}
    if "trajectory" in inputs:
        rec = TrajectoryRecord.read(inputs["trajectory"])
        try:
            cr = crossing_intervals(rec, min_crossings=int(r["min_crossings"]))
            report["crossings"] = {"crossing_times": cr.crossing_times, "intervals": cr.intervals,
                                   "shifts": cr.shifts, "mean_shift": cr.mean_shift,
                                   "implied_domega": cr.implied_domega}
            _write_table(out / "crossings", ("crossing", "t", "interval", "shift"),
                         ([j, t, i, s] for j, (t, i, s) in
                          enumerate(zip(cr.crossing_times[1:], cr.intervals, cr.shifts))), fmt)
        except ValueError as exc:
            report["crossings"] = {"error": str(exc)}
        if cfg.sim is not None and np.all(np.isfinite(rec.eps)):
            pr = spin_field_projection(rec, cfg.sim)
            report["projection"] = {"breaches": pr.breaches, "min": float(np.nanmin(np.abs(pr.projection)))}
            _write_table(out / "projection", ("t", "projection"), zip(pr.times, pr.projection), fmt)
    if "densities" in inputs:
        values, times, grid, _ = load_snapshots(inputs["densities"])
        reps = [peak_areas(PositionGrid(grid, v), floor=r["peak_floor"], prominence=r["peak_floor"])
                for v in values]
        _write_table(out / "density_peaks", PEAK_HEADER, _peak_rows(times, reps), fmt)
        k = len(times) - 1 if r["density_time"] is None else int(np.argmin(np.abs(times - r["density_time"])))
        _write_table(out / "density_profile", ("x", "P"), zip(grid, values[k]), fmt)
        report["densities"] = {"profile_time": float(times[k]),
                               "first_resolvable": next((float(t) for t, p in zip(times, reps)
                                                         if p.resolvable), None)}
    if "matrices" in inputs:
        values, times, grid, _ = load_snapshots(inputs["matrices"])
        counts = [count_peaks_2d(v) for v in values]
        _write_table(out / "matrix_peaks", ("t", "peaks_2d"), zip(times, counts), fmt)
        report["matrices"] = {"peaks_2d": counts}
    _write_json(out / "analysis.json", report)
    return {"invariants": {}}


RUNNERS = {"estimate": _run_estimate, "schrodinger": _run_schrodinger, "master": _run_master,
           "fig6": _run_fig6, "cat-split": _run_cat_split, "analyze": _run_analyze}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run(cfg: RunConfig, out_dir, *, threads: int = 1) -> dict:
    """Execute ``cfg`` into ``out_dir`` and return the manifest written there."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    info = RUNNERS[cfg.mode](cfg, out, threads)
    wall = time.perf_counter() - start
    outputs = {p.name: _sha256(p) for p in sorted(out.iterdir())
               if p.is_file() and p.name != MANIFEST and not p.name.startswith(".")}
    manifest = {
        "tool": "oscarsim", "version": __version__, "mode": cfg.mode, "seed": cfg.seed,
        "config": cfg.echo, "warnings": [w.to_dict() for w in cfg.warnings],
        "flip_times": info.get("flip_times", []), "invariants": info["invariants"],
        "wall_time_s": wall, "outputs": outputs,
        "platform": {"python": platform.python_version(), "numpy": np.__version__,
                     "scipy": scipy.__version__, "machine": platform.machine()},
    }
    _atomic_json(out / MANIFEST, manifest)
    return manifest


def replay(run_dir, *, threads: int = 1) -> tuple[bool, dict]:
    """Re-run the manifest in ``run_dir`` and compare output hashes.

    Returns ``(identical, {file: (recorded, replayed)})`` for mismatches.
    """
    run_dir = Path(run_dir)
    manifest = json.loads((run_dir / MANIFEST).read_text())
    echo = dict(manifest["config"])
    echo.pop("resolved_sim", None)
    cfg, diags = resolve_config(echo)
    if cfg is None:
        raise ConfigError([d for d in diags if d.level == "error"])
    with tempfile.TemporaryDirectory() as tmp:
        fresh = run(cfg, tmp, threads=threads)
    recorded = manifest["outputs"]
    diff = {name: (recorded.get(name), fresh["outputs"].get(name))
            for name in sorted(set(recorded) | set(fresh["outputs"]))
            if recorded.get(name) != fresh["outputs"].get(name)}
    return not diff, diff


# -- command line --------------------------------------------------------------------

def _thread_default() -> int:
    value = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(value))
    except ValueError:
        return 1


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oscarsim", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--config", required=True, type=Path, help="JSON run configuration")
        p.add_argument("--seed", type=_u64, help="override the configured seed")
        if needs_out:
            p.add_argument("--out", type=Path, default=Path("run"), help="output directory")
            p.add_argument("--threads", type=int, default=None,
                           help=f"worker threads (default ${THREADS_ENV} or 1)")
            p.add_argument("--format", choices=("csv", "json"), help="tabular output format")

    for mode in MODES:
        common(sub.add_parser(mode, help=f"run in {mode} mode"))
    common(sub.add_parser("run", help="run the mode named in the config"))
    common(sub.add_parser("validate", help="print configuration diagnostics"), needs_out=False)
    rp = sub.add_parser("replay", help="re-run a manifest and compare outputs")
    rp.add_argument("run_dir", type=Path)
    rp.add_argument("--threads", type=int, default=None)
    return parser


def _report(diags, stream=sys.stderr) -> None:
    for d in diags:
        print(f"{d.level}: [{d.code}] {d.message}", file=stream)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = getattr(args, "threads", None) or _thread_default()
    try:
        if args.command == "replay":
            same, diff = replay(args.run_dir, threads=threads)
            for name, (old, new) in diff.items():
                print(f"mismatch: {name} recorded={old} replayed={new}", file=sys.stderr)
            print("replay identical" if same else "replay differs")
            return EXIT_OK if same else EXIT_NUMERICAL
        try:
            raw = load_config(args.config)
        except (OSError, json.JSONDecodeError) as exc:
            _report([Diagnostic("error", "config", f"cannot read {args.config}: {exc}")])
            return EXIT_VALIDATION
        mode = None if args.command in ("run", "validate") else args.command
        kw = dict(mode=mode, seed=args.seed, base_dir=args.config.parent)
        if args.command == "validate":
            diags = validate(raw, **kw)
            print(json.dumps([d.to_dict() for d in diags], indent=1))
            return EXIT_VALIDATION if any(d.level == "error" for d in diags) else EXIT_OK
        cfg, diags = resolve_config(raw, fmt=args.format, **kw)
        _report(diags)
        if cfg is None:
            return EXIT_VALIDATION
        manifest = run(cfg, args.out, threads=threads)
        print(f"{cfg.mode} finished in {manifest['wall_time_s']:.2f} s; outputs in {args.out}")
        return EXIT_OK
    except ConfigError as exc:
        _report(exc.diagnostics)
        return EXIT_VALIDATION
    except TruncationError as exc:
        print(f"truncation: {exc}", file=sys.stderr)
        return EXIT_TRUNCATION
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
