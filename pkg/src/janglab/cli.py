"""jang-lab: run pipeline stages from a JSON or YAML config.

    jang-lab <stage> --config run.yaml [--out DIR] [--fixed-clock]

Exit codes: 0 success, 2 invalid config or input outside the supported
domain, 3 solver failure.  The report is ``report.json`` in the output
directory, next to CSV series for the stages that produce them.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .errors import DomainError, JangLabError
from .geometry import ModelData
from .jang import SolverConfig
from .pipeline import STAGES, Run

SCHEMA_VERSION = "1.0"
FIXED_CLOCK = "1970-01-01T00:00:00+00:00"
EXIT_OK, EXIT_INVALID, EXIT_SOLVER = 0, 2, 3

log = logging.getLogger("janglab")

_TOP_KEYS = {"model", "mesh", "tau", "newton", "stages", "output", "barriers", "verify"}
_MESH_KEYS = {"N": "N", "R_list": "R_list", "grading": "beta", "beta": "beta"}
_TAU_KEYS = {"start": "tau_start", "factor": "tau_factor", "min": "tau_min", "final_zero": "final_tau_zero"}
_NEWTON_KEYS = {"tol": "newton_tol", "max_iter": "newton_max_iter", "min_damping": "min_damping"}


class ConfigError(DomainError):
    pass


@dataclass
class RunConfig:
    model: ModelData
    solver: dict = field(default_factory=dict)
    stages: list = field(default_factory=list)
    output: str | None = None
    barrier_r_max: float = 1e3
    mesh_check: bool = True
    raw: dict = field(default_factory=dict)

    def solver_config(self):
        return SolverConfig.for_model(self.model, **self.solver)


def _zonal(table, n, what):
    """A zonal trace profile from {theta: [...], values: [...]} (values are
    the barred quantity; the trace is (n-1) times it)."""
    try:
        th = np.asarray(table["theta"], dtype=float)
        v = np.asarray(table["values"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{what}: a zonal table needs numeric 'theta' and 'values' lists") from exc
    if th.shape != v.shape or th.size < 2 or np.any(np.diff(th) <= 0):
        raise ConfigError(f"{what}: theta must increase and match values in length")
    if not (np.isclose(th[0], 0.0) and np.isclose(th[-1], np.pi)):
        raise ConfigError(f"{what}: the table must span theta in [0, pi]")

    def trace(theta):
        return (n - 1) * np.interp(theta, th, v)

    return trace


def _number(x, what):
    if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
        raise ConfigError(f"{what} must be a finite number, got {x!r}")
    return float(x)


def _section(cfg, name, keys):
    sec = cfg.get(name) or {}
    if not isinstance(sec, dict):
        raise ConfigError(f"'{name}' must be a mapping")
    unknown = set(sec) - set(keys)
    if unknown:
        raise ConfigError(f"unknown keys in '{name}': {sorted(unknown)}")
    return sec


def parse_config(cfg):
    """Validate a loaded config mapping and build a RunConfig."""
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a mapping")
    unknown = set(cfg) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    mod = _section(cfg, "model", {"n", "m_bar", "p_bar"})
    if "n" not in mod:
        raise ConfigError("model.n is required")
    n = mod["n"]
    if isinstance(n, bool) or not isinstance(n, int):
        raise ConfigError(f"model.n must be an integer, got {n!r}")
    if not 4 <= n <= 7:
        raise ConfigError(f"dimension n={n} outside the supported range 4-7")
    traces = []
    for key in ("m_bar", "p_bar"):
        v = mod.get(key, 0.0)
        traces.append(_zonal(v, n, f"model.{key}") if isinstance(v, dict) else (n - 1) * _number(v, f"model.{key}"))
    model = ModelData(n, *traces)

    solver = {}
    for name, keys in (("mesh", _MESH_KEYS), ("tau", _TAU_KEYS), ("newton", _NEWTON_KEYS)):
        for k, v in _section(cfg, name, keys).items():
            if k == "R_list":
                if not isinstance(v, (list, tuple)) or not v:
                    raise ConfigError("mesh.R_list must be a non-empty list")
                v = tuple(_number(x, "mesh.R_list entry") for x in v)
                if any(b <= a for a, b in zip(v, v[1:])):
                    raise ConfigError("mesh.R_list must increase")
            elif k == "N" or k == "max_iter":
                if isinstance(v, bool) or not isinstance(v, int) or v < 8:
                    raise ConfigError(f"{name}.{k} must be an integer >= 8")
            elif k == "final_zero":
                v = bool(v)
            elif v is not None:
                v = _number(v, f"{name}.{k}")
            solver[keys[k]] = v

    stages = cfg.get("stages") or []
    if not isinstance(stages, list) or any(s not in STAGES for s in stages):
        raise ConfigError(f"stages must be a list drawn from {list(STAGES)}")
    bar = _section(cfg, "barriers", {"r_max"})
    ver = _section(cfg, "verify", {"mesh_doubling"})
    out = cfg.get("output")
    if out is not None and not isinstance(out, str):
        raise ConfigError("output must be a directory path")
    rc = RunConfig(model, solver, stages, out, _number(bar.get("r_max", 1e3), "barriers.r_max"),
                   bool(ver.get("mesh_doubling", True)), cfg)
    try:
        rc.solver_config()
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc
    return rc


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return parse_config(data)


def _plain(x):
    """JSON-safe copy: numpy scalars and arrays to Python, NaN/inf to None."""
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_plain(v) for v in x.tolist()]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def _write_csv(path, columns):
    names = list(columns)
    rows = zip(*(np.asarray(columns[k], dtype=float) for k in names))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in rows:
            w.writerow([repr(float(v)) for v in row])


def _series(run, outdir):
    written = []
    c = run.cache
    if "barriers" in c:
        t = c["barriers"]["barriers"].table()
        _write_csv(outdir / "barriers.csv", {k: t[k] for k in ("r", "k_plus", "k_minus", "f_plus", "f_minus")})
        written.append("barriers.csv")
    if "mass" in c:
        pairs = c["mass"]["mass"].flux_pairs
        _write_csv(outdir / "mass_flux.csv", {"R": [p[0] for p in pairs], "E_R": [p[1] for p in pairs]})
        written.append("mass_flux.csv")
    if "jang" in c:
        f = c["jang"]["f"]
        _write_csv(outdir / "jang.csv", {"r": f.r, "f": f.values, "f_prime": f.d1})
        written.append("jang.csv")
    if "conformal" in c:
        _write_csv(outdir / "conformal.csv", c["conformal"]["series"])
        written.append("conformal.csv")
    return written


def run_stage(stage, rc, outdir, fixed_clock=False, threads=1):
    """Run one stage (with its prerequisites); returns (exit code, report)."""
    run = Run(rc.model, rc.solver_config(), rc.barrier_r_max, mesh_check=rc.mesh_check, threads=threads)
    report = {
        "schema_version": SCHEMA_VERSION,
        "tool": "jang-lab",
        "version": __version__,
        "generated_at": FIXED_CLOCK if fixed_clock else _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "stage": stage,
        "config": rc.raw,
    }
    code = EXIT_OK
    current = stage
    try:
        stages = rc.stages if stage == "pipeline" and rc.stages else [stage]
        results = {}
        for s in stages:
            current = s
            results[s] = run.report(s)
        report["results"] = results
        report["status"] = "ok"
    except DomainError as exc:
        code = EXIT_INVALID
        report["status"] = "invalid"
        report["error"] = f"[{current}] {exc}"
    except (JangLabError, ArithmeticError, np.linalg.LinAlgError) as exc:
        code = EXIT_SOLVER
        report["status"] = "solver-error"
        report["error"] = f"[{current}] {exc}"
    if not fixed_clock:
        report["timings"] = dict(sorted(run.timings.items()))
    outdir.mkdir(parents=True, exist_ok=True)
    report["series"] = _series(run, outdir)
    with open(outdir / "report.json", "w") as fh:
        json.dump(_plain(report), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return code, report


def _threads():
    v = os.environ.get("JANGLAB_THREADS", "1")
    try:
        return max(1, int(v))
    except ValueError:
        raise ConfigError(f"JANGLAB_THREADS must be an integer, got {v!r}") from None


def build_parser():
    p = argparse.ArgumentParser(prog="jang-lab", description="Jang-equation reduction pipeline for Wang model data.")
    p.add_argument("stage", choices=STAGES, help="stage to run; prerequisites run automatically")
    p.add_argument("--config", required=True, help="JSON or YAML run configuration")
    p.add_argument("--out", help="output directory (default: config 'output' or the current directory)")
    p.add_argument("--fixed-clock", action="store_true", help="fixed timestamp, no timings; reports are byte-identical")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        rc = load_config(args.config)
        threads = _threads()
    except DomainError as exc:
        print(f"jang-lab: {exc}", file=sys.stderr)
        return EXIT_INVALID
    outdir = Path(args.out or rc.output or ".")
    code, report = run_stage(args.stage, rc, outdir, args.fixed_clock, threads)
    if code:
        print(f"jang-lab: {report['error']}", file=sys.stderr)
    else:
        print(f"jang-lab: {args.stage} ok; report in {outdir / 'report.json'}")
    return code


if __name__ == "__main__":
    sys.exit(main())
