"""Command-line orchestration: validated configs, manifests, CSV/JSON emission.

Every subcommand reads its parameters from flags, from a plain-text
key-value config (``--config``), or both (flags win).  The effective
science parameters are serialized into a canonical manifest whose hash is
stamped into every output file; re-running any subcommand from its
manifest alone reproduces the outputs byte for byte.  Output location and
worker count are deliberately not part of the manifest.

Exit codes: 0 success, 1 domain or I/O failure, 2 usage or config
validation failure, 3 success with quality flags (outputs still written).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import __version__
from .chains import pooled_two_point, run_ensemble, sample_configurations
from .fields import (clt_diagnostics, estimate_field_covariance,
                     estimate_process_covariance, line_average_samples)
from .fitting import fit_exponentials, gap_check
from .gp import (GPSpec, build_nodes, empirical_cov, roughness_exponent,
                 sample_path)
from .kernels import (KernelContext, field_covariance, oz_field_ratio,
                      oz_process_ratio, process_covariance)
from .lattice import LatticeSpec, read_snapshot, write_snapshot
from .measures import MassSpectralMeasure, read_measure

__all__ = ["main", "run", "validate_config", "RunConfig", "normalize_config"]

_COMMANDS = ("simulate", "estimate", "spectral", "gp-sample", "fit",
             "asymptotics", "pipeline")

_EXIT_OK = 0
_EXIT_DOMAIN = 1
_EXIT_USAGE = 2
_EXIT_FLAGGED = 3


# --------------------------------------------------------------------------
# Config schema and parsing


@dataclass(frozen=True)
class _Field:
    parse: Callable[[str], object]
    required: bool = False
    default: object = None
    help: str = ""


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("true", "1", "yes"):
        return True
    if v in ("false", "0", "no"):
        return False
    raise ValueError(f"expected true/false, got {s!r}")


def _parse_pos_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise ValueError(f"expected a positive integer, got {s!r}")
    return v


def _parse_nonneg_int(s: str) -> int:
    v = int(s)
    if v < 0:
        raise ValueError(f"expected a nonnegative integer, got {s!r}")
    return v


def _parse_nonneg_float(s: str) -> float:
    v = float(s)
    if not (v >= 0.0 and math.isfinite(v)):
        raise ValueError(f"expected a nonnegative number, got {s!r}")
    return v


def _parse_pos_float(s: str) -> float:
    v = float(s)
    if not (v > 0.0 and math.isfinite(v)):
        raise ValueError(f"expected a positive number, got {s!r}")
    return v


def _parse_algorithm(s: str) -> str:
    if s not in ("wolff", "metropolis", "mixed"):
        raise ValueError(f"algorithm must be wolff, metropolis, or mixed, got {s!r}")
    return s


def _parse_window(s: str) -> tuple[float, float]:
    parts = s.split(":")
    if len(parts) != 2:
        raise ValueError(f"expected lo:hi, got {s!r}")
    lo, hi = float(parts[0]), float(parts[1])
    if not lo < hi:
        raise ValueError(f"window must have lo < hi, got {s!r}")
    return lo, hi


def _parse_range(s: str) -> tuple[float, float, float]:
    parts = s.split(":")
    if len(parts) != 3:
        raise ValueError(f"expected lo:step:hi, got {s!r}")
    lo, step, hi = (float(p) for p in parts)
    if step <= 0 or hi < lo:
        raise ValueError(f"expected lo:step:hi with step > 0 and hi >= lo, got {s!r}")
    return lo, step, hi


def _parse_time_grid(s: str) -> tuple[float, float, int]:
    parts = s.split(",")
    if len(parts) != 3:
        raise ValueError(f"expected t0,dt,n, got {s!r}")
    t0, dt, n = float(parts[0]), float(parts[1]), int(parts[2])
    if dt <= 0 or n < 2:
        raise ValueError(f"need dt > 0 and n >= 2, got {s!r}")
    return t0, dt, n


def _parse_float_list(s: str) -> tuple[float, ...]:
    vals = tuple(float(p) for p in s.split(",") if p.strip())
    if not vals:
        raise ValueError("expected a comma-separated list of numbers")
    return vals


_COMMON = {
    "seed": _Field(_parse_nonneg_int, default=0, help="generator seed"),
    "version": _Field(str, default=None, help="code version (manifest echo)"),
}

_SIM_KEYS = {
    "n": _Field(_parse_pos_int, required=True, help="lattice side"),
    "h": _Field(_parse_nonneg_float, default=0.0, help="renormalized field"),
    "chains": _Field(_parse_pos_int, default=1, help="independent chains"),
    "samples": _Field(_parse_pos_int, required=True, help="samples per chain"),
    "thin": _Field(_parse_pos_int, default=1, help="steps between samples"),
    "therm": _Field(_parse_nonneg_int, default=None,
                    help="thermalization steps (default max(256, samples/4))"),
    "algorithm": _Field(_parse_algorithm, default="mixed", help="update scheme"),
    "snapshots": _Field(_parse_bool, default=False,
                        help="write binary spin snapshots"),
}

_EST_KEYS = {
    "run": _Field(str, required=True, help="simulate output directory"),
    "grid": _Field(str, default=None, help="displacement grid file (s y rows)"),
    "eps": _Field(_parse_pos_float, default=None,
                  help="time-mollifier variance (default 4a)"),
    "block": _Field(_parse_pos_int, default=4, help="coarse-grain block width"),
    "strips": _Field(_parse_float_list, default=None,
                     help="strip half-widths (default 4 and 32 blocks)"),
}

_SPEC_KEYS = {
    "measure": _Field(str, required=True, help="spectral measure file"),
    "k_grid": _Field(_parse_range, default=None, help="s grid lo:step:hi for K"),
    "h_grid": _Field(str, default=None, help="file of s y rows for H"),
}

_GP_KEYS = {
    "measure": _Field(str, required=True, help="covariance measure file"),
    "grid": _Field(_parse_time_grid, required=True, help="time grid t0,dt,n"),
    "paths": _Field(_parse_pos_int, required=True, help="number of paths"),
    "nodes": _Field(_parse_pos_int, default=64, help="initial nodes per piece"),
}

_FIT_KEYS = {
    "in": _Field(str, required=True, help="input K.csv"),
    "terms": _Field(_parse_pos_int, required=True, help="exponential terms"),
    "window": _Field(_parse_window, default=None, help="fit window lo:hi"),
}

_ASY_KEYS = {
    "measure": _Field(str, required=True, help="spectral measure file"),
    "t": _Field(_parse_pos_float, required=True, help="separation"),
}

_PIPE_KEYS = {
    **{k: v for k, v in _SIM_KEYS.items()},
    "eps": _EST_KEYS["eps"],
    "block": _EST_KEYS["block"],
    "strips": _EST_KEYS["strips"],
    "grid": _EST_KEYS["grid"],
    "terms": _Field(_parse_pos_int, default=None,
                    help="fit stage terms (omit to skip the fit stage)"),
    "window": _FIT_KEYS["window"],
}

_SCHEMAS: dict[str, dict[str, _Field]] = {
    "simulate": {**_COMMON, **_SIM_KEYS},
    "estimate": {**_COMMON, **_EST_KEYS},
    "spectral": {**_COMMON, **_SPEC_KEYS},
    "gp-sample": {**_COMMON, **_GP_KEYS},
    "fit": {**_COMMON, **_FIT_KEYS},
    "asymptotics": {**_COMMON, **_ASY_KEYS},
    "pipeline": {**_COMMON, **_PIPE_KEYS},
}


@dataclass(frozen=True)
class RunConfig:
    """Validated parameter set for one subcommand."""

    command: str
    params: dict = field(default_factory=dict)

    def serialize(self) -> str:
        """Canonical key-value text: command first, then sorted keys."""
        lines = [f"command = {self.command}"]
        for key in sorted(self.params):
            val = self.params[key]
            if val is None:
                continue
            lines.append(f"{key} = {_format_value(val)}")
        return "\n".join(lines) + "\n"


def _format_value(val) -> str:
    if isinstance(val, bool):
        return "true" if val else "false"
    if isinstance(val, float):
        return repr(val)
    if isinstance(val, tuple):
        if len(val) == 2:
            return f"{_format_value(val[0])}:{_format_value(val[1])}"
        if len(val) == 3 and isinstance(val[2], int):
            return (f"{_format_value(val[0])},{_format_value(val[1])},"
                    f"{_format_value(val[2])}")
        return ":".join(_format_value(v) for v in val)
    return str(val)


def _format_list_value(val: tuple[float, ...]) -> str:
    return ",".join(repr(v) for v in val)


def _scan_config(text: str):
    """Key-value lines -> {key: (raw value, line number)}, plus errors."""
    entries: dict[str, tuple[str, int]] = {}
    errors: list[str] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" in line:
            key, _, value = line.partition("=")
        else:
            parts = line.split(None, 1)
            if len(parts) != 2:
                errors.append(f"line {lineno}: cannot parse {raw.strip()!r}")
                continue
            key, value = parts
        key = key.strip().replace("-", "_")
        value = value.strip()
        if not key or not value:
            errors.append(f"line {lineno}: cannot parse {raw.strip()!r}")
            continue
        if key in entries:
            errors.append(f"line {lineno}: duplicate key {key!r}")
            continue
        entries[key] = (value, lineno)
    return entries, errors


def _blank_overridden(text: str, keys: set) -> str:
    """Blank out config lines whose key is overridden on the command line.

    Lines are replaced rather than removed so that line numbers in error
    messages still point into the original file.
    """
    kept = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        key = ""
        if line:
            if "=" in line:
                key = line.partition("=")[0].strip()
            else:
                parts = line.split(None, 1)
                key = parts[0] if len(parts) == 2 else ""
        kept.append("" if key.replace("-", "_") in keys else raw)
    return "\n".join(kept)


def validate_config(text: str, command: Optional[str] = None):
    """Validate config text; return a RunConfig or the full error list.

    Every violation is reported with its line number; nothing partial is
    accepted.  When ``command`` is given, a ``command`` key in the text
    must agree with it.
    """
    entries, errors = _scan_config(text)
    cmd = command
    if "command" in entries:
        val, lineno = entries.pop("command")
        if val not in _COMMANDS:
            errors.append(f"line {lineno}: unknown command {val!r}")
        elif command is not None and val != command:
            errors.append(
                f"line {lineno}: config is for {val!r}, not {command!r}")
        else:
            cmd = val
    if cmd is None:
        errors.append("no command given")
        return errors
    if cmd not in _SCHEMAS:
        errors.append(f"unknown command {cmd!r}")
        return errors
    schema = _SCHEMAS[cmd]
    params: dict = {}
    for key, (raw, lineno) in entries.items():
        if key not in schema:
            errors.append(f"line {lineno}: unknown key {key!r} for {cmd}")
            continue
        # The strips list serializes with commas; reuse the list parser.
        try:
            params[key] = schema[key].parse(raw)
        except ValueError as exc:
            errors.append(f"line {lineno}: {key}: {exc}")
    for key, spec in schema.items():
        if spec.required and key not in params:
            errors.append(f"missing required key {key!r} for {cmd}")
    if errors:
        return errors
    for key, spec in schema.items():
        if key not in params and spec.default is not None:
            params[key] = spec.default
    return RunConfig(command=cmd, params=params)


def normalize_config(text: str, command: Optional[str] = None) -> str:
    """Canonical serialization of valid config text (validation errors raise)."""
    cfg = validate_config(text, command)
    if isinstance(cfg, list):
        raise ValueError("; ".join(cfg))
    return cfg.serialize()


# --------------------------------------------------------------------------
# Output helpers


def _manifest_params(cfg: RunConfig) -> RunConfig:
    params = dict(cfg.params)
    params["version"] = __version__
    params.pop("threads", None)
    return RunConfig(command=cfg.command, params=params)


def _manifest_hash(manifest_text: str) -> str:
    return hashlib.sha256(manifest_text.encode()).hexdigest()[:12]


def _fmt_cell(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, mhash: str, header: Sequence[str], rows,
               extra_comments: Sequence[str] = ()) -> None:
    lines = [f"# manifest: {mhash}"]
    lines.extend(f"# {c}" for c in extra_comments)
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(_fmt_cell(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def _out_dir(raw: str) -> Path:
    root = os.environ.get("ISINGSPEC_OUT_ROOT")
    p = Path(raw)
    if root and not p.is_absolute():
        p = Path(root) / p
    p.mkdir(parents=True, exist_ok=True)
    return p


def _read_table(path: Path) -> tuple[list[str], np.ndarray]:
    """CSV with # comments and a header row -> (header, float matrix)."""
    header: list[str] = []
    rows: list[list[float]] = []
    for raw in path.read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if not header:
            header = [c.strip() for c in line.split(",")]
            continue
        rows.append([float(c) for c in line.split(",")])
    if not header:
        raise ValueError(f"{path}: no header row")
    return header, np.array(rows, dtype=float)


def _read_grid_file(path: Path) -> list[tuple[float, float]]:
    pts = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected 's y', got {raw.strip()!r}")
        pts.append((float(parts[0]), float(parts[1])))
    if not pts:
        raise ValueError(f"{path}: empty displacement grid")
    return pts


def _require_finite_mass(measure: MassSpectralMeasure) -> None:
    for p in measure.pieces:
        if p.is_infinite and p.exponent >= -1.0:
            raise ValueError(
                f"piece [{p.m_lo:g}, inf) with exponent {p.exponent:g} has "
                "infinite total mass; a covariance measure requires "
                "exponent < -1")


# --------------------------------------------------------------------------
# Subcommand implementations (each returns a set of quality flags)


def _cmd_simulate(cfg: RunConfig, out: Path) -> set:
    p = dict(cfg.params)
    therm = p.get("therm")
    if therm is None:
        therm = max(256, p["samples"] // 4)
    manifest = _manifest_params(RunConfig(cfg.command,
                                          {**cfg.params, "therm": therm}))
    mtext = manifest.serialize()
    mhash = _manifest_hash(mtext)
    (out / "manifest.txt").write_text(mtext)

    spec = LatticeSpec(n=p["n"], h=p["h"])
    stats_list = run_ensemble(
        spec, n_therm=therm, n_samples=p["samples"], thin=p["thin"],
        seed=p["seed"], n_chains=p["chains"], algorithm=p["algorithm"],
        threads=p.get("threads", 1))
    flags: set = set()
    for stats in stats_list:
        flags.update(stats.flags)
        _write_csv(out / f"chain_{stats.chain_index:02d}.csv", mhash,
                   ["sample", "magnetization"],
                   ((k, v) for k, v in enumerate(stats.magnetization)))
    half = spec.n // 2
    disp = [(0, 0)] + [(dx, 0) for dx in range(1, half + 1)] \
        + [(0, dy) for dy in range(1, half + 1)]
    rows = []
    for d in disp:
        est, err = pooled_two_point(stats_list, d)
        rows.append((d[0], d[1], est, err))
    _write_csv(out / "two_point.csv", mhash, ["dx", "dy", "estimate", "stderr"],
               rows)
    if p["snapshots"]:
        snap_dir = out / "snapshots"
        snap_dir.mkdir(exist_ok=True)
        for c in range(p["chains"]):
            configs = sample_configurations(
                spec, n_samples=p["samples"], thin=p["thin"], seed=p["seed"],
                n_therm=therm, chain_index=c, algorithm=p["algorithm"])
            for k, conf in enumerate(configs):
                write_snapshot(snap_dir / f"chain_{c:02d}_{k:05d}.snap", conf)
    return flags


def _load_run(run_dir: Path):
    mpath = run_dir / "manifest.txt"
    if not mpath.exists():
        raise ValueError(f"{run_dir} has no manifest.txt")
    cfg = validate_config(mpath.read_text(), "simulate")
    if isinstance(cfg, list):
        raise ValueError(f"{mpath}: " + "; ".join(cfg))
    spec = LatticeSpec(n=cfg.params["n"], h=cfg.params["h"])
    snap_dir = run_dir / "snapshots"
    files = sorted(snap_dir.glob("*.snap")) if snap_dir.exists() else []
    if not files:
        raise ValueError(f"{run_dir} holds no spin snapshots; re-run simulate "
                         "with snapshots = true")
    configs = [read_snapshot(f) for f in files]
    for c in configs:
        if c.n != spec.n:
            raise ValueError(f"snapshot size {c.n} does not match the run spec")
    return spec, configs


def _resolve_estimate_defaults(spec, block: int, p: dict) -> dict:
    """Fill eps/strips defaults that respect the torus size."""
    out = dict(p)
    if out.get("eps") is None:
        # 6 sigma of the time mollifier must fit inside one period.
        period = spec.n * spec.a
        out["eps"] = min(4.0 * spec.a, (period / 8.0) ** 2)
    if out.get("strips") is None:
        n_coarse = spec.n // block
        k2 = min(32, max(1, n_coarse // 2))
        k1 = max(1, min(4, k2 // 2))
        out["strips"] = (k1 * block * spec.a, k2 * block * spec.a)
    return out


def _estimate_outputs(spec, configs, p: dict, out: Path, mhash: str) -> set:
    flags: set = set()
    block = p["block"]
    eps = p["eps"]
    strips = p["strips"]

    est = estimate_field_covariance(configs, spec, block=block)
    delta = est.block_spacing
    if p.get("grid"):
        grid = _read_grid_file(Path(p["grid"]))
    else:
        half = est.n_coarse // 2
        grid = [(i * delta, j * delta)
                for i in range(half + 1) for j in range(half + 1)]
    _write_csv(out / "H.csv", mhash, ["s", "y", "H", "stderr"],
               ((s, y, *est.at(s, y)) for s, y in grid))

    krows = estimate_process_covariance(est)
    _write_csv(out / "K.csv", mhash, ["s", "K", "stderr", "tail_flag"],
               ((r.s, r.value, r.stderr, r.tail_open) for r in krows))
    if any(r.tail_open for r in krows):
        flags.add("open-tail")

    clt_rows = []
    for L in strips:
        samples = line_average_samples(configs, spec, half_width=L, s=0.0,
                                       variance=eps)
        flags.update(samples.flags)
        clt_rows.append(clt_diagnostics([samples])[0])
    _write_csv(out / "clt.csv", mhash,
               ["L", "skew", "skew_err", "kurt", "kurt_err"],
               ((r.half_width, r.skewness, r.skew_stderr, r.excess_kurtosis,
                 r.kurtosis_stderr) for r in clt_rows))
    for r in clt_rows:
        flags.update(r.flags)
    return flags


def _cmd_estimate(cfg: RunConfig, out: Path) -> set:
    p = dict(cfg.params)
    spec, configs = _load_run(Path(p["run"]))
    p = _resolve_estimate_defaults(spec, p["block"], p)
    resolved = RunConfig(cfg.command, {**cfg.params, "eps": p["eps"],
                                       "strips": p["strips"]})
    manifest = _manifest_params(resolved)
    params = dict(manifest.params)
    params["strips"] = _format_list_value(p["strips"])
    manifest = RunConfig(manifest.command, params)
    mtext = manifest.serialize()
    mhash = _manifest_hash(mtext)
    (out / "manifest.txt").write_text(mtext)
    return _estimate_outputs(spec, configs, p, out, mhash)


def _cmd_spectral(cfg: RunConfig, out: Path) -> set:
    p = cfg.params
    if not p.get("k_grid") and not p.get("h_grid"):
        raise ValueError("spectral needs k_grid and/or h_grid")
    measure = read_measure(p["measure"])
    ctx = KernelContext(measure)
    manifest = _manifest_params(cfg)
    mtext = manifest.serialize()
    mhash = _manifest_hash(mtext)
    (out / "manifest.txt").write_text(mtext)
    if p.get("k_grid"):
        lo, step, hi = p["k_grid"]
        svals = np.arange(lo, hi + 0.5 * step, step)
        _write_csv(out / "K.csv", mhash, ["s", "K"],
                   ((float(s), process_covariance(ctx, float(s)))
                    for s in svals))
    if p.get("h_grid"):
        pts = _read_grid_file(Path(p["h_grid"]))
        _write_csv(out / "H.csv", mhash, ["s", "y", "H"],
                   ((s, y, field_covariance(ctx, s, y)) for s, y in pts))
    return set()


def _cmd_gp_sample(cfg: RunConfig, out: Path) -> set:
    p = cfg.params
    measure = read_measure(p["measure"])
    _require_finite_mass(measure)
    t0, dt, n = p["grid"]
    spec = GPSpec(rho=measure, t0=t0, dt=dt, n=n, seed=p["seed"],
                  nodes_per_piece=p["nodes"])
    manifest = _manifest_params(cfg)
    mtext = manifest.serialize()
    mhash = _manifest_hash(mtext)
    (out / "manifest.txt").write_text(mtext)

    flags: set = set()
    nodes = build_nodes(spec)
    paths = [sample_path(spec, k, nodes) for k in range(p["paths"])]
    times = paths[0].times
    header = ["t"] + [f"path_{k}" for k in range(len(paths))]
    _write_csv(out / "paths.csv", mhash, header,
               ((times[i], *(pp.values[i] for pp in paths))
                for i in range(times.size)),
               extra_comments=["form: wide"])

    if len(paths) >= 100:
        ks = sorted({0, 1, 2} | {int(round(k)) for k in
                                 np.geomspace(1, max(n // 4, 2), 12)})
        lags = [k * dt for k in ks if k < n]
        rows = empirical_cov(paths, lags)
        _write_csv(out / "cov.csv", mhash, ["lag", "estimate", "stderr"],
                   ((r.lag, r.estimate, r.stderr) for r in rows))
    else:
        flags.add("few-paths")

    k_hi = max(n // 8, 2)
    if k_hi >= 32 and len(paths) >= 2:
        deltas = np.geomspace(dt, k_hi * dt, 12)
        fit = roughness_exponent(paths, deltas)
        if fit.smooth_regime:
            flags.add("smooth-regime")
        _write_csv(out / "roughness.csv", mhash,
                   ["lag", "structure", "exponent", "stderr", "smooth_regime"],
                   ((lag, s, fit.exponent, fit.stderr, fit.smooth_regime)
                    for lag, s in zip(fit.lags, fit.structure)))
    else:
        flags.add("short-grid")
    return flags


def _fit_payload(times, values, stderr, p: dict) -> tuple[dict, set]:
    sigma = None
    if stderr is not None and np.all(stderr > 0.0):
        sigma = stderr
    result = fit_exponentials(times, values, p["terms"], sigma=sigma,
                              window=p.get("window"))
    gap = gap_check(result.model)
    payload = {
        "masses": [float(m) for m in result.model.masses],
        "weights": [float(w) for w in result.model.weights],
        "covariance": [[float(c) for c in row] for row in result.covariance],
        "residual_norm": result.residual_norm,
        "condition_number": result.condition_number,
        "iterations": result.iterations,
        "converged": result.converged,
        "requested_terms": result.requested_terms,
        "window": list(result.window) if result.window else None,
        "flags": sorted(result.flags),
        "gap_check": {"ok": gap.ok, "violations": list(gap.violations)},
    }
    return payload, set(result.flags)


def _cmd_fit(cfg: RunConfig, out: Path) -> set:
    p = cfg.params
    header, table = _read_table(Path(p["in"]))
    cols = {name: i for i, name in enumerate(header)}
    if "s" not in cols or "K" not in cols:
        raise ValueError(f"{p['in']}: need columns s and K, got {header}")
    times = table[:, cols["s"]]
    values = table[:, cols["K"]]
    stderr = table[:, cols["stderr"]] if "stderr" in cols else None
    keep = times > 0.0
    payload, flags = _fit_payload(times[keep], values[keep],
                                  None if stderr is None else stderr[keep], p)
    manifest = _manifest_params(cfg)
    mtext = manifest.serialize()
    mhash = _manifest_hash(mtext)
    (out / "manifest.txt").write_text(mtext)
    payload["manifest"] = mhash
    (out / "fit.json").write_text(json.dumps(payload, sort_keys=True, indent=2)
                                  + "\n")
    return flags


def _cmd_asymptotics(cfg: RunConfig, out: Path) -> set:
    p = cfg.params
    measure = read_measure(p["measure"])
    ctx = KernelContext(measure)
    t = p["t"]
    m1 = measure.m1
    atom = measure.atom_at(m1)
    manifest = _manifest_params(cfg)
    mtext = manifest.serialize()
    mhash = _manifest_hash(mtext)
    (out / "manifest.txt").write_text(mtext)
    rows = [("field_ratio", oz_field_ratio(ctx, t)),
            ("process_ratio", oz_process_ratio(ctx, t)),
            ("t", t)]
    if atom is not None:
        # Large-t plateaus exist only when the spectral infimum is an atom.
        rows.insert(1, ("field_limit",
                        atom.weight * math.sqrt(math.pi / (2.0 * m1))))
        rows.insert(3, ("process_limit", math.pi * atom.weight / m1))
    _write_csv(out / "asymptotics.csv", mhash, ["quantity", "value"], rows)
    return set()


def _cmd_pipeline(cfg: RunConfig, out: Path) -> set:
    p = dict(cfg.params)
    spec = LatticeSpec(n=p["n"], h=p["h"])
    therm = p.get("therm")
    if therm is None:
        therm = max(256, p["samples"] // 4)
    p = _resolve_estimate_defaults(spec, p["block"], p)

    manifest = _manifest_params(RunConfig(cfg.command, {**cfg.params,
                                                        "eps": p["eps"],
                                                        "therm": therm}))
    params = dict(manifest.params)
    params["strips"] = _format_list_value(p["strips"])
    manifest = RunConfig(manifest.command, params)
    mtext = manifest.serialize()
    mhash = _manifest_hash(mtext)
    (out / "manifest.txt").write_text(mtext)

    flags: set = set()
    stats_list = run_ensemble(
        spec, n_therm=therm, n_samples=p["samples"], thin=p["thin"],
        seed=p["seed"], n_chains=p["chains"], algorithm=p["algorithm"],
        threads=p.get("threads", 1))
    for stats in stats_list:
        flags.update(stats.flags)
        _write_csv(out / f"chain_{stats.chain_index:02d}.csv", mhash,
                   ["sample", "magnetization"],
                   ((k, v) for k, v in enumerate(stats.magnetization)))
    half = spec.n // 2
    disp = [(0, 0)] + [(dx, 0) for dx in range(1, half + 1)] \
        + [(0, dy) for dy in range(1, half + 1)]
    _write_csv(out / "two_point.csv", mhash, ["dx", "dy", "estimate", "stderr"],
               ((d[0], d[1], *pooled_two_point(stats_list, d)) for d in disp))

    configs: list = []
    for c in range(p["chains"]):
        configs.extend(sample_configurations(
            spec, n_samples=p["samples"], thin=p["thin"], seed=p["seed"],
            n_therm=therm, chain_index=c, algorithm=p["algorithm"], pack=True))
    flags |= _estimate_outputs(spec, configs, p, out, mhash)

    if p.get("terms"):
        header, table = _read_table(out / "K.csv")
        cols = {name: i for i, name in enumerate(header)}
        times = table[:, cols["s"]]
        values = table[:, cols["K"]]
        stderr = table[:, cols["stderr"]]
        keep = times > 0.0
        try:
            payload, fit_flags = _fit_payload(
                times[keep], values[keep], stderr[keep], p)
        except ValueError as exc:
            payload = {"error": str(exc)}
            fit_flags = {"fit-failed"}
        flags |= fit_flags
        payload["manifest"] = mhash
        (out / "fit.json").write_text(
            json.dumps(payload, sort_keys=True, indent=2) + "\n")
    return flags


_RUNNERS = {
    "simulate": _cmd_simulate,
    "estimate": _cmd_estimate,
    "spectral": _cmd_spectral,
    "gp-sample": _cmd_gp_sample,
    "fit": _cmd_fit,
    "asymptotics": _cmd_asymptotics,
    "pipeline": _cmd_pipeline,
}


# --------------------------------------------------------------------------
# Argument handling


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="isingspec", description=__doc__)
    sub = parser.add_subparsers(dest="command")
    flag_names = {
        "k_grid": "--K-grid",
        "h_grid": "--H-grid",
        "in": "--in",
    }
    for cmd in _COMMANDS:
        sp = sub.add_parser(cmd)
        schema = _SCHEMAS[cmd]
        for key, spec in schema.items():
            if key == "version":
                continue
            flag = flag_names.get(key, "--" + key.replace("_", "-"))
            if spec.parse is _parse_bool:
                sp.add_argument(flag, dest=key, action="store_const",
                                const="true", default=None, help=spec.help)
            else:
                sp.add_argument(flag, dest=key, default=None, metavar="V",
                                help=spec.help)
        sp.add_argument("--config", default=None, metavar="FILE",
                        help="key-value config file (flags override)")
        sp.add_argument("--out", default=None, metavar="DIR",
                        help="output directory")
        sp.add_argument("--threads", type=int, default=1, metavar="T",
                        help="worker processes for chain ensembles")
    return parser


def run(argv: Sequence[str]) -> int:
    """Execute one subcommand; returns the process exit code."""
    parser = _build_parser()
    try:
        ns = parser.parse_args(list(argv))
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_USAGE
    if ns.command is None:
        print("error: no command given", file=sys.stderr)
        return _EXIT_USAGE

    overrides = {}
    for key in _SCHEMAS[ns.command]:
        val = getattr(ns, key, None)
        if val is not None:
            overrides[key] = val
    text = ""
    if ns.config:
        try:
            text = Path(ns.config).read_text()
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return _EXIT_DOMAIN
        text = _blank_overridden(text, set(overrides))
    text += "\n" + "\n".join(f"{k} = {v}" for k, v in overrides.items())
    cfg = validate_config(text, ns.command)
    if isinstance(cfg, list):
        for err in cfg:
            print(f"error: {err}", file=sys.stderr)
        return _EXIT_USAGE
    cfg = RunConfig(cfg.command, {**cfg.params, "threads": ns.threads})

    if ns.out is None:
        print("error: --out is required", file=sys.stderr)
        return _EXIT_USAGE
    try:
        out = _out_dir(ns.out)
        flags = _RUNNERS[ns.command](cfg, out)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_DOMAIN
    if flags:
        print("flagged: " + ", ".join(sorted(flags)), file=sys.stderr)
        return _EXIT_FLAGGED
    return _EXIT_OK


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
