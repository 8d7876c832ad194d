"""Configuration files, snapshot persistence, run manifests and the command line.

Config files are TOML with the sections ``[grid]``, ``[material]``,
``[run]``, ``[experiment]`` and ``[diagnostics]``.  Unknown sections or keys
are rejected.  A run manifest (JSON) embeds the fully resolved config and can
be passed back wherever a config path is expected.

Snapshot file layout (all integers little-endian)::

    bytes 0..7    magic b"VFSNAP01"
    bytes 8..15   uint64 header length L
    bytes 16..    L bytes of UTF-8 JSON header
    then          payload: float64 little-endian, fields in header order,
                  each row-major over (component, i1, i2)

The header records ``n1``, ``n2``, ``t`` (as a C99 hex float string so it
round-trips exactly), the field list, the endianness, the config hash and the
SHA-256 of the payload.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import struct
import sys
import tempfile
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .constitutive import MaterialParams
from .diagnostics import LAYER_DELTAS, M_DIAG_DEFAULT, diagnose
from .dynamics import (
    DEFAULT_CLOSURE,
    INTEGRATORS,
    FlowState,
    RunAborted,
    RunConfig,
    Snapshot,
    equilibrium_state,
    simulate,
    well_prepared_initial,
)
from .experiments import (
    ALPHA_MIN,
    DEFAULT_EPS,
    ENERGY_FACTOR,
    LAYER_DELTA,
    R2_MIN,
    R_BOUND,
    SweepConfig,
    ablation_config,
    layer_study,
    mms_order_study,
    viscosity_sweep,
)
from .geometry import GeometryCache, geo_diff_residual, metric_decomp_residual, piola_residual
from .grid_ops import CLOSURES, Grid
from .mms import SOLUTIONS

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

MAGIC = b"VFSNAP01"
SNAPSHOT_FORMAT = 1
CSV_SCHEMA_VERSION = 1
RNG_ALGORITHM = "numpy.random.PCG64"
PIOLA_EXIT_TOL = 1e-10

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_ABORTED = 3
EXIT_ACCEPTANCE = 4


class ConfigError(ValueError):
    """A config file violates the schema; the message names key and constraint."""

    def __init__(self, key: str, constraint: str):
        super().__init__(f"{key}: {constraint}")
        self.key = key
        self.constraint = constraint


class CorruptSnapshotError(ValueError):
    """A snapshot file is truncated, malformed or fails its checksum."""


# -- configuration ----------------------------------------------------------------------

_MATERIAL_KEYS = {
    "gamma": "gamma",
    "A_pressure": "A_pressure",
    "mu": "mu",
    "lambda": "lam",
    "epsilon": "epsilon",
    "sigma": "sigma",
    "p_e": "p_e",
    "rho0": "rho0",
    "elastic_flux": "elastic_flux",
    "c0": "c0",
    "C0": "C0",
}

_RUN_DEFAULTS: dict[str, Any] = {
    "t_end": 1.0,
    "cfl": 0.5,
    "integrator": "rk4",
    "output_interval": None,
    "dt": None,
    "j_drift_bound": None,
    "history_depth": 5,
    "check_piola": False,
    "piola_tol": 1e-10,
    "closure": DEFAULT_CLOSURE,
}

_EXPERIMENT_DEFAULTS: dict[str, Any] = {
    "initial": "equilibrium",
    "amplitude": 0.001,
    "seed": None,
    "eps_list": list(DEFAULT_EPS),
    "sweep_output_interval": 0.01,
    "ablation": True,
    "mms_solution": "oscillatory",
    "mms_mode": "continuous",
    "mms_closure": "second_order",
    "mms_grids": [[32, 17], [64, 33], [128, 65]],
    "mms_t_end": 0.5,
    "order_min": 1.9,
    "order_max": 2.2,
}

_DIAGNOSTICS_DEFAULTS: dict[str, Any] = {
    "m_diag": M_DIAG_DEFAULT,
    "deltas": list(LAYER_DELTAS),
    "layer_delta": LAYER_DELTA,
    "r_bound": R_BOUND,
    "alpha_min": ALPHA_MIN,
    "r2_min": R2_MIN,
    "energy_factor": ENERGY_FACTOR,
    "trace_ratio_limit": 4.0,
    "korn_ratio_limit": 10.0,
}

_GRID_DEFAULTS = {"n1": 64, "n2": 33}

_SECTIONS = ("grid", "material", "run", "experiment", "diagnostics")


def _material_defaults() -> dict[str, Any]:
    base = MaterialParams()
    return {k: getattr(base, attr) for k, attr in _MATERIAL_KEYS.items()}


def _merge(section: str, given: dict, defaults: dict) -> dict:
    if not isinstance(given, dict):
        raise ConfigError(section, "must be a table")
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        raise ConfigError(f"{section}.{unknown[0]}", f"unknown key (allowed: {', '.join(sorted(defaults))})")
    out = dict(defaults)
    out.update(given)
    return out


def _number(section: str, key: str, value, kind=float, allow_none: bool = False):
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{section}.{key}", f"must be a number, got {value!r}")
    if kind is int and (not float(value).is_integer()):
        raise ConfigError(f"{section}.{key}", f"must be an integer, got {value!r}")
    return kind(value)


@dataclass(frozen=True)
class ResolvedConfig:
    """A validated config with every default expanded."""

    grid: Grid
    params: MaterialParams
    run: RunConfig
    sections: dict

    @property
    def experiment(self) -> dict:
        return self.sections["experiment"]

    @property
    def diagnostics(self) -> dict:
        return self.sections["diagnostics"]

    def to_dict(self) -> dict:
        return json.loads(json.dumps(self.sections))

    @property
    def config_hash(self) -> str:
        return config_hash(self.sections)

    def with_seed(self, seed: int | None) -> "ResolvedConfig":
        if seed is None:
            return self
        sections = self.to_dict()
        sections["experiment"]["seed"] = int(seed)
        return resolve_config(sections)

    def initial_state(self) -> FlowState:
        exp = self.experiment
        if exp["initial"] == "equilibrium":
            return equilibrium_state(self.grid)
        return well_prepared_initial(self.grid, self.params, exp["amplitude"], exp["seed"])

    def sweep_config(self, threads: int = 1) -> SweepConfig:
        exp, diag = self.experiment, self.diagnostics
        return SweepConfig(
            grid=self.grid,
            params=self.params,
            t_end=self.run.t_end,
            eps_list=tuple(float(e) for e in exp["eps_list"]),
            cfl=self.run.cfl,
            amplitude=exp["amplitude"],
            seed=exp["seed"],
            initial=exp["initial"],
            output_interval=exp["sweep_output_interval"],
            closure=self.run.closure,
            m_diag=diag["m_diag"],
            deltas=tuple(float(d) for d in diag["deltas"]),
            history_depth=self.run.history_depth,
            j_drift_bound=self.run.j_drift_bound,
            threads=threads,
        )


def config_hash(sections: dict) -> str:
    blob = json.dumps(sections, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def resolve_config(doc: dict) -> ResolvedConfig:
    """Validate a parsed document and expand defaults."""
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "must be a table")
    unknown = sorted(set(doc) - set(_SECTIONS))
    if unknown:
        raise ConfigError(unknown[0], f"unknown section (allowed: {', '.join(_SECTIONS)})")

    g = _merge("grid", doc.get("grid", {}), _GRID_DEFAULTS)
    g = {k: _number("grid", k, v, int) for k, v in g.items()}
    try:
        grid = Grid(g["n1"], g["n2"])
    except ValueError as exc:
        raise ConfigError("grid", str(exc)) from None

    m = _merge("material", doc.get("material", {}), _material_defaults())
    for k, v in m.items():
        if k == "elastic_flux":
            if not isinstance(v, bool):
                raise ConfigError("material.elastic_flux", f"must be a boolean, got {v!r}")
        else:
            m[k] = _number("material", k, v)
    try:
        params = MaterialParams(**{_MATERIAL_KEYS[k]: v for k, v in m.items()})
    except ValueError as exc:
        raise ConfigError(f"material.{_failed_key(str(exc))}", str(exc)) from None

    r = _merge("run", doc.get("run", {}), _RUN_DEFAULTS)
    for k in ("t_end", "cfl", "piola_tol"):
        r[k] = _number("run", k, r[k])
    for k in ("output_interval", "dt", "j_drift_bound"):
        r[k] = _number("run", k, r[k], allow_none=True)
    r["history_depth"] = _number("run", "history_depth", r["history_depth"], int)
    if r["integrator"] not in INTEGRATORS:
        raise ConfigError("run.integrator", f"must be one of {INTEGRATORS}")
    if r["closure"] not in CLOSURES:
        raise ConfigError("run.closure", f"must be one of {CLOSURES}")
    if not isinstance(r["check_piola"], bool):
        raise ConfigError("run.check_piola", "must be a boolean")
    for k in ("output_interval", "dt", "j_drift_bound"):
        if r[k] is not None and not r[k] > 0:
            raise ConfigError(f"run.{k}", "must be positive")
    try:
        run = RunConfig(grid=grid, params=params, **r)
    except ValueError as exc:
        raise ConfigError(f"run.{_failed_key(str(exc))}", str(exc)) from None

    e = _merge("experiment", doc.get("experiment", {}), _EXPERIMENT_DEFAULTS)
    if e["initial"] not in ("equilibrium", "well_prepared"):
        raise ConfigError("experiment.initial", "must be 'equilibrium' or 'well_prepared'")
    e["amplitude"] = _number("experiment", "amplitude", e["amplitude"])
    if e["seed"] is not None:
        e["seed"] = _number("experiment", "seed", e["seed"], int)
        if e["seed"] < 0:
            raise ConfigError("experiment.seed", "must be non-negative")
    eps = [_number("experiment", "eps_list", x) for x in e["eps_list"]]
    if len(eps) < 4 or eps[-1] != 0 or any(a <= b for a, b in zip(eps, eps[1:])):
        raise ConfigError("experiment.eps_list", "must be strictly decreasing, end with 0 and hold at least 3 positive values")
    e["eps_list"] = eps
    e["sweep_output_interval"] = _number("experiment", "sweep_output_interval", e["sweep_output_interval"], allow_none=True)
    if not isinstance(e["ablation"], bool):
        raise ConfigError("experiment.ablation", "must be a boolean")
    if e["mms_solution"] not in SOLUTIONS:
        raise ConfigError("experiment.mms_solution", f"must be one of {sorted(SOLUTIONS)}")
    if e["mms_mode"] not in ("continuous", "discrete"):
        raise ConfigError("experiment.mms_mode", "must be 'continuous' or 'discrete'")
    if e["mms_closure"] not in CLOSURES:
        raise ConfigError("experiment.mms_closure", f"must be one of {CLOSURES}")
    grids = e["mms_grids"]
    if not isinstance(grids, list) or len(grids) < 3 or any(not isinstance(p, list) or len(p) != 2 for p in grids):
        raise ConfigError("experiment.mms_grids", "must be a list of at least 3 [n1, n2] pairs")
    e["mms_grids"] = [[_number("experiment", "mms_grids", x, int) for x in p] for p in grids]
    for k in ("mms_t_end", "order_min", "order_max"):
        e[k] = _number("experiment", k, e[k])

    d = _merge("diagnostics", doc.get("diagnostics", {}), _DIAGNOSTICS_DEFAULTS)
    d["m_diag"] = _number("diagnostics", "m_diag", d["m_diag"], int)
    if d["m_diag"] not in (1, 2):
        raise ConfigError("diagnostics.m_diag", "must be 1 or 2")
    d["deltas"] = [_number("diagnostics", "deltas", x) for x in d["deltas"]]
    for k in ("layer_delta", "r_bound", "alpha_min", "r2_min", "energy_factor", "trace_ratio_limit", "korn_ratio_limit"):
        d[k] = _number("diagnostics", k, d[k])
    if any(not 0 < x < 0.25 for x in d["deltas"]) or d["layer_delta"] not in d["deltas"]:
        raise ConfigError("diagnostics.deltas", "each delta must lie in (0, 0.25) and include layer_delta")

    sections = {"grid": g, "material": m, "run": r, "experiment": e, "diagnostics": d}
    return ResolvedConfig(grid=grid, params=params, run=run, sections=json.loads(json.dumps(sections)))


def _failed_key(message: str) -> str:
    """Best guess at the offending key from a validation message."""
    if message.startswith("mu + lambda"):
        return "lambda"
    if message.startswith("need 0 < c0"):
        return "c0"
    return message.split()[0] if message else "?"


def parse_config(path) -> ResolvedConfig:
    """Load a TOML config, or the config embedded in a run manifest (``.json``)."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(str(path), "file does not exist")
    try:
        if path.suffix == ".json":
            doc = json.loads(path.read_text())
            if not isinstance(doc, dict) or "config" not in doc:
                raise ConfigError(str(path), "manifest has no embedded config")
            doc = doc["config"]
        else:
            doc = tomllib.loads(path.read_text())
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(str(path), f"not parseable: {exc}") from None
    return resolve_config(doc)


# -- snapshots ----------------------------------------------------------------------------


def write_snapshot(path, state: FlowState, grid: Grid, config: ResolvedConfig | None = None) -> Path:
    path = Path(path)
    payload = b"".join(np.ascontiguousarray(f, dtype="<f8").tobytes() for f in (state.eta, state.v))
    header = {
        "format": SNAPSHOT_FORMAT,
        "n1": grid.n1,
        "n2": grid.n2,
        "t": float(state.t).hex(),
        "fields": [{"name": "eta", "components": 2}, {"name": "v", "components": 2}],
        "endianness": "little",
        "dtype": "float64",
        "config_hash": config.config_hash if config is not None else None,
        "config": config.to_dict() if config is not None else None,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    _atomic_write(path, MAGIC + struct.pack("<Q", len(hbytes)) + hbytes + payload)
    return path


def read_snapshot_header(path) -> dict:
    return _read_snapshot(Path(path))[0]


def read_snapshot(path) -> tuple[FlowState, Grid, dict]:
    header, state, grid = _read_snapshot(Path(path))
    return state, grid, header


def _read_snapshot(path: Path):
    blob = path.read_bytes()
    if len(blob) < 16 or blob[:8] != MAGIC:
        raise CorruptSnapshotError(f"{path}: bad magic or truncated header")
    (hlen,) = struct.unpack("<Q", blob[8:16])
    if 16 + hlen > len(blob):
        raise CorruptSnapshotError(f"{path}: header length {hlen} exceeds file size")
    try:
        header = json.loads(blob[16 : 16 + hlen])
        n1, n2 = int(header["n1"]), int(header["n2"])
        t = float.fromhex(header["t"])
        comps = [int(f["components"]) for f in header["fields"]]
        digest = header["payload_sha256"]
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptSnapshotError(f"{path}: malformed header ({exc})") from None
    if header.get("endianness") != "little" or header.get("dtype") != "float64":
        raise CorruptSnapshotError(f"{path}: unsupported encoding")
    payload = blob[16 + hlen :]
    expected = sum(comps) * n1 * n2 * 8
    if len(payload) != expected:
        raise CorruptSnapshotError(f"{path}: payload has {len(payload)} bytes, expected {expected}")
    if hashlib.sha256(payload).hexdigest() != digest:
        raise CorruptSnapshotError(f"{path}: payload checksum mismatch")
    arrays, off = [], 0
    for c in comps:
        size = c * n1 * n2 * 8
        arrays.append(np.frombuffer(payload[off : off + size], dtype="<f8").reshape(c, n1, n2).astype(float))
        off += size
    grid = Grid(n1, n2)
    return header, FlowState(arrays[0], arrays[1], t), grid


# -- manifests and CSV --------------------------------------------------------------------


def _current_umask() -> int:
    mask = os.umask(0)
    os.umask(mask)
    return mask


_UMASK = _current_umask()


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.chmod(tmp, 0o666 & ~_UMASK)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "%.17g" % float(x)
    return str(x)


def write_csv(path, header: list[str], rows: list[list]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])
    return path


@dataclass
class RunManifest:
    command: str
    config: dict
    config_hash: str
    code_version: str = __version__
    rng_algorithm: str = RNG_ALGORITHM
    csv_schema_version: int = CSV_SCHEMA_VERSION
    start_time: float = field(default_factory=time.time)
    end_time: float | None = None
    csv_path: str | None = None
    exit_status: int | None = None
    violation: dict | None = None
    results: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def write(self, path) -> Path:
        self.end_time = time.time()
        path = Path(path)
        _atomic_write(path, json.dumps(_jsonable(self.to_dict()), indent=2, sort_keys=True).encode())
        return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# -- commands ------------------------------------------------------------------------------


def _monitor_breaches(monitors: dict[str, float], diag: dict) -> list[str]:
    limits = {"trace_ratio_v": diag["trace_ratio_limit"], "korn_ratio_v": diag["korn_ratio_limit"]}
    out = []
    for key, limit in limits.items():
        val = monitors.get(key, 0.0)
        if not math.isfinite(val) or val > limit:
            out.append(f"{key} = {val:.6g} exceeds {limit:g}")
    return out


def _finish_monitors(breaches: list[str], strict: bool, manifest: RunManifest) -> int:
    manifest.results["monitor_warnings"] = breaches
    for b in breaches:
        log.warning("monitored ratio: %s", b)
    return EXIT_ACCEPTANCE if strict and breaches else EXIT_OK


def cmd_simulate(cfg: ResolvedConfig, out: Path, strict: bool) -> int:
    manifest = RunManifest("simulate", cfg.to_dict(), cfg.config_hash)
    initial = cfg.initial_state()
    diag = cfg.diagnostics
    try:
        traj = simulate(cfg.run, initial)
    except RunAborted as exc:
        manifest.violation = {"reason": exc.reason, "step": exc.step}
        if exc.last_good is not None:
            write_snapshot(out / "last_good.vfs", exc.last_good, cfg.grid, cfg)
        manifest.exit_status = EXIT_ABORTED
        manifest.write(out / "manifest.json")
        print(f"run aborted: {exc.reason}")
        return EXIT_ABORTED
    rows, header, breaches = [], None, []
    for snap in traj.snapshots:
        report = diagnose(snap, cfg.params, cfg.grid, traj.closure, diag["m_diag"], diag["layer_delta"])
        row = report.row()
        header = header or list(row)
        rows.append([row[k] for k in header])
        breaches += [f"t={snap.t:.6g}: {b}" for b in _monitor_breaches(report.monitors, diag)]
    csv_path = write_csv(out / "trace.csv", header, rows)
    manifest.csv_path = str(csv_path)
    fin = traj.final
    write_snapshot(out / "final.vfs", fin, cfg.grid, cfg)
    drift = float(np.max(np.abs(fin.eta - cfg.grid.identity_map())) + np.max(np.abs(fin.v)))
    manifest.results.update({"steps": traj.steps, "dt": traj.dt, "final_drift": drift, "max_j_drift": traj.max_j_drift})
    status = _finish_monitors(breaches, strict, manifest)
    manifest.exit_status = status
    manifest.write(out / "manifest.json")
    print(f"steps {traj.steps}  dt {traj.dt:.6g}  final drift |eta - x|_inf + |v|_inf = {drift:.3e}")
    return status


def cmd_sweep(cfg: ResolvedConfig, out: Path, threads: int) -> int:
    manifest = RunManifest("sweep", cfg.to_dict(), cfg.config_hash)
    diag = cfg.diagnostics
    sc = cfg.sweep_config(threads)
    res = viscosity_sweep(sc)
    results = {"viscoelastic": _sweep_summary(res, diag)}
    runs = [("viscoelastic", res)]
    if cfg.experiment["ablation"]:
        abl = viscosity_sweep(ablation_config(sc))
        results["ablation"] = _sweep_summary(abl, diag)
        runs.append(("ablation", abl))
    for name, r in runs:
        if r.ok:
            head, rows = r.csv_rows()
            write_csv(out / f"sweep_{name}.csv", head, rows)
    manifest.csv_path = str(out / "sweep_viscoelastic.csv")
    manifest.results = results
    if not all(r.ok for _, r in runs):
        manifest.violation = {name: r.failure for name, r in runs if not r.ok}
        status = EXIT_ABORTED
    else:
        ve = results["viscoelastic"]
        checks = [ve["rate_pass"], ve["energy_pass"], ve["layer_verdict"] == "NO_LAYER"]
        if "ablation" in results:
            checks.append(results["ablation"]["layer_growth"] > ve["layer_growth"])
        status = EXIT_OK if all(checks) else EXIT_ACCEPTANCE
    manifest.exit_status = status
    manifest.write(out / "manifest.json")
    for name, s in results.items():
        print(
            f"{name}: status {s['status']}  alpha {s['alpha']:.4g}  R2 {s['r2']:.4g}  "
            f"energy ratio {s['energy_ratio']:.4g}  layer {s['layer_verdict']} (growth {s['layer_growth']:.4g})"
        )
    return status


def _sweep_summary(res, diag: dict) -> dict:
    if not res.ok:
        return {"status": res.status, "failed_eps": res.failed_eps, "failure": res.failure,
                "alpha": math.nan, "r2": math.nan, "energy_ratio": math.nan,
                "layer_verdict": "n/a", "layer_growth": math.nan}
    lv = layer_study(res, diag["layer_delta"], diag["r_bound"])
    fit = res.fit
    return {
        "status": res.status,
        "alpha": fit.slope if fit else math.nan,
        "r2": fit.r2 if fit else math.nan,
        "fit_status": fit.status if fit else "n/a",
        "monotone": res.monotone(),
        "rate_pass": res.rate_verdict(diag["alpha_min"], diag["r2_min"]),
        "energy_ratio": res.uniform_energy_ratio(),
        "energy_pass": res.uniform_energy_verdict(diag["energy_factor"]),
        "layer_verdict": lv.verdict,
        "layer_growth": lv.growth,
        "layer_exponent": lv.exponent,
        "result_sha256": hashlib.sha256(res.to_bytes()).hexdigest(),
    }


def cmd_mms(cfg: ResolvedConfig, out: Path) -> int:
    exp = cfg.experiment
    manifest = RunManifest("mms", cfg.to_dict(), cfg.config_hash)
    try:
        study = mms_order_study(
            exp["mms_grids"], exp["mms_solution"], cfg.params, exp["mms_t_end"],
            exp["mms_mode"], exp["mms_closure"], cfg.run.cfl,
        )
    except RunAborted as exc:
        manifest.violation = {"reason": exc.reason, "step": exc.step}
        manifest.exit_status = EXIT_ABORTED
        manifest.write(out / "manifest.json")
        print(f"run aborted: {exc.reason}")
        return EXIT_ABORTED
    rows = [[n1, n2, e1, e0, s] for (n1, n2), e1, e0, s in zip(study.grids, study.errors_H1, study.errors_L2, study.steps)]
    manifest.csv_path = str(write_csv(out / "mms.csv", ["n1", "n2", "error_H1", "error_L2", "steps"], rows))
    ok = study.within(exp["order_min"], exp["order_max"])
    manifest.results = {"order": study.order, "local_orders": study.local_orders, "status": study.status, "pass": ok}
    manifest.exit_status = EXIT_OK if ok else EXIT_ACCEPTANCE
    manifest.write(out / "manifest.json")
    print(f"fitted H1 order {study.order:.4f} (local {', '.join(f'{p:.3f}' for p in study.local_orders)})")
    return manifest.exit_status


def _snapshot_params(header: dict, config_path) -> tuple[MaterialParams, str, dict]:
    if config_path is not None:
        cfg = parse_config(config_path)
    elif header.get("config"):
        cfg = resolve_config(header["config"])
    else:
        return MaterialParams(), DEFAULT_CLOSURE, dict(_DIAGNOSTICS_DEFAULTS)
    return cfg.params, cfg.run.closure, cfg.diagnostics


def cmd_diagnose(path: Path, out: Path, config_path, strict: bool) -> int:
    state, grid, header = read_snapshot(path)
    params, closure, diag = _snapshot_params(header, config_path)
    report = diagnose(Snapshot(state, []), params, grid, closure, diag["m_diag"], diag["layer_delta"])
    row = report.row()
    write_csv(out / "diagnose.csv", list(row), [list(row.values())])
    width = max(len(k) for k in row)
    for k, v in row.items():
        print(f"{k:<{width}}  {_fmt(v)}")
    breaches = _monitor_breaches(report.monitors, diag)
    for b in breaches:
        log.warning("monitored ratio: %s", b)
    return EXIT_ACCEPTANCE if strict and breaches else EXIT_OK


def identity_table(state: FlowState, grid: Grid) -> dict[str, float]:
    cache = GeometryCache.build(state.eta, grid, "second_order", j_floor=None)
    prod = np.einsum("ik...,jk...->ij...", cache.a, cache.grad_eta)
    eye = np.eye(2)[:, :, None, None] * cache.J
    scale = max(1.0, float(np.max(np.abs(cache.J))))
    return {
        "piola_interior": piola_residual(cache.a, grid, "interior"),
        "piola_boundary": piola_residual(cache.a, grid, "boundary"),
        "metric_decomposition": metric_decomp_residual(cache.a, cache.grad_eta),
        "cofactor_product": float(np.max(np.abs(prod - eye))) / scale,
        "jacobi_spatial": geo_diff_residual(state.eta, grid),
        "min_J": float(np.min(cache.J)),
    }


def cmd_identities(path: Path) -> int:
    state, grid, _ = read_snapshot(path)
    table = identity_table(state, grid)
    for k, v in table.items():
        print(f"{k:<22}{v:.3e}")
    return EXIT_ABORTED if table["piola_interior"] > PIOLA_EXIT_TOL else EXIT_OK


# -- entry point ------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--output-dir", type=Path, default=Path("viscofree_out"), help="directory for CSV, snapshots and manifest")
    common.add_argument("--threads", type=int, default=1, help="worker processes for sweeps")
    common.add_argument("--strict", action="store_true", help="treat monitored-ratio warnings as errors")
    common.add_argument("--seed", type=int, default=None, help="seed for perturbed initial data")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="viscofree", description="Free-boundary viscoelastic fluid simulator.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("simulate", "run one configuration and write a diagnostics trace"),
        ("sweep", "vanishing-viscosity sweep plus ablation"),
        ("mms", "manufactured-solution spatial order study"),
    ):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("config", type=Path, help="TOML config or run manifest")
    for name, helptext in (
        ("diagnose", "diagnostics report for a snapshot"),
        ("identities", "geometry identity residuals for a snapshot"),
    ):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("snapshot", type=Path)
        if name == "diagnose":
            s.add_argument("--config", type=Path, default=None, help="material config overriding the snapshot header")
    return p


def cli(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    out = args.output_dir
    try:
        if args.command in ("diagnose", "identities"):
            if not args.snapshot.is_file():
                print(f"error: no such snapshot {args.snapshot}", file=sys.stderr)
                return EXIT_USAGE
            if args.command == "identities":
                return cmd_identities(args.snapshot)
            return cmd_diagnose(args.snapshot, out, args.config, args.strict)
        cfg = parse_config(args.config).with_seed(args.seed)
        if args.command == "simulate":
            return cmd_simulate(cfg, out, args.strict)
        if args.command == "sweep":
            return cmd_sweep(cfg, out, args.threads)
        return cmd_mms(cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CorruptSnapshotError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def main() -> None:
    sys.exit(cli())
