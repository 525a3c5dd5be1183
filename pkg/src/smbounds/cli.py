"""Command-line interface.

Subcommands::

    smbounds run DATA [options]        bounds, SEs, CI and diagnostics for a dataset
    smbounds simulate PLAN             Monte Carlo coverage study from a plan file
    smbounds mte-demo                  latent-index bounds for the built-in design
    smbounds export-sample OUT         write a synthetic dataset drawn from a design

Exit status: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

from . import __version__
from .analysis import CASE_MARGIN, analyze
from .core import SelectionSample, identified_primitives
from .diagnostics import sensitivity_curve, tail_smoothness_report, theta_plausibility
from .errors import (
    BadFlag,
    BoundsError,
    ConfigError,
    DataError,
    MissingColumn,
    MissingOutcome,
    ParseError,
)
from .estimate import ClampWarning, flip_direction
from .identify import DgpSpec
from .mte import SETS, build_appendix_dgp, mte_bounds

SCHEMA_VERSION = "1.0"
THREADS_ENV = "SMBOUNDS_THREADS"


# ------------------------------------------------------------------ ingest

def _sniff_delimiter(header: str) -> str:
    return "\t" if "\t" in header else ","


def _flag(value: str, name: str, line: int) -> int:
    v = value.strip()
    try:
        f = float(v)
    except ValueError:
        raise ParseError(line, f"{name}={value!r} is not a number") from None
    if f not in (0.0, 1.0):
        raise BadFlag(f"line {line}: {name}={value!r} is outside {{0, 1}}")
    return int(f)


def ingest(path, mapping: Optional[dict] = None, covariate: Optional[str] = None,
           require_cells: bool = True) -> SelectionSample:
    """Read a comma- or tab-delimited file with a header row.

    ``mapping`` maps the roles ``y``, ``s``, ``d`` (and optionally ``w``) to
    column names.  Outcomes of unselected units may be empty; line numbers in
    errors count the header as line 1.
    """
    mapping = dict(mapping or {})
    cols = {r: mapping.get(r, r) for r in ("y", "s", "d")}
    if covariate:
        cols["w"] = covariate
    elif mapping.get("w"):
        cols["w"] = mapping["w"]
    if len(set(cols.values())) != len(cols):
        raise ConfigError(f"column mapping is not one-to-one: {cols}")
    path = Path(path)
    if not path.exists():
        raise DataError(f"input file {path} does not exist")
    with path.open(newline="") as fh:
        first = fh.readline()
        if not first.strip():
            raise ParseError(1, "missing header row")
        fh.seek(0)
        reader = csv.reader(fh, delimiter=_sniff_delimiter(first))
        header = [h.strip() for h in next(reader)]
        idx = {}
        for role, name in cols.items():
            if name not in header:
                raise MissingColumn(f"column {name!r} (role {role}) not found in header {header}")
            idx[role] = header.index(name)
        ys, ss, ds, ws = [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < len(header):
                raise ParseError(lineno, f"expected {len(header)} fields, found {len(row)}")
            s = _flag(row[idx["s"]], cols["s"], lineno)
            d = _flag(row[idx["d"]], cols["d"], lineno)
            raw_y = row[idx["y"]].strip()
            if raw_y == "" or raw_y.upper() in ("NA", "NAN"):
                if s == 1:
                    raise MissingOutcome(len(ys), line=lineno)
                y = math.nan
            else:
                try:
                    y = float(raw_y)
                except ValueError:
                    raise ParseError(lineno, f"outcome {raw_y!r} is not a number") from None
                if s == 1 and not math.isfinite(y):
                    raise ParseError(lineno, f"outcome {raw_y!r} is not finite")
            ys.append(y)
            ss.append(s)
            ds.append(d)
            if "w" in idx:
                ws.append(row[idx["w"]].strip())
    if not ys:
        raise DataError(f"{path} has no data rows")
    return SelectionSample.from_arrays(
        np.array(ys), np.array(ss), np.array(ds), ws if "w" in idx else None, require_cells=require_cells,
    )


def export_sample(sample: SelectionSample, path, delimiter: str = ",") -> None:
    """Write ``y,s,d[,w]``; unselected outcomes are left empty, floats in round-trip form."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, delimiter=delimiter)
        head = ["y", "s", "d"] + (["w"] if sample.w is not None else [])
        wr.writerow(head)
        for rec in sample.records():
            row = ["" if rec["y"] is None else repr(rec["y"]), rec["s"], rec["d"]]
            if sample.w is not None:
                row.append(rec["w"])
            wr.writerow(row)


# ------------------------------------------------------------------ config

@dataclass
class RunConfig:
    input: str
    columns: dict = field(default_factory=lambda: {"y": "y", "s": "s", "d": "d"})
    theta_L: list = field(default_factory=lambda: [1.0])
    symmetry: bool = False
    direction: str = "standard"
    case: str = "auto"
    level: float = 0.95
    bootstrap: int = 0
    seed: int = 0
    covariate: Optional[str] = None
    sensitivity: bool = False
    fold_check: bool = False
    fold_side: str = "lower"
    mte_demo: bool = False
    kernel: str = "gaussian"
    bandwidth: str = "silverman"
    draws: int = 100_000
    output: Optional[str] = None
    plot_dir: Optional[str] = None
    format: str = "json"
    threads: Optional[int] = None

    def validate(self) -> "RunConfig":
        if isinstance(self.theta_L, (int, float)):
            self.theta_L = [float(self.theta_L)]
        self.theta_L = sorted(float(t) for t in self.theta_L)
        if not self.theta_L or any(not 0 < t <= 1 for t in self.theta_L):
            raise ConfigError(f"theta_L values must lie in (0, 1], got {self.theta_L}")
        if not 0 < self.level < 1:
            raise ConfigError(f"level must lie in (0, 1), got {self.level}")
        if self.direction not in ("standard", "flipped"):
            raise ConfigError("direction must be 'standard' or 'flipped'")
        if self.case not in ("auto", "known", "unknown"):
            raise ConfigError("case must be auto, known or unknown")
        if self.bootstrap and self.bootstrap < 200:
            raise ConfigError("bootstrap replications must be at least 200")
        if self.format not in ("json", "yaml"):
            raise ConfigError("format must be json or yaml")
        if self.fold_side not in ("lower", "upper"):
            raise ConfigError("fold_side must be lower or upper")
        names = [v for v in self.columns.values() if v] + ([self.covariate] if self.covariate else [])
        if len(set(names)) != len(names):
            raise ConfigError("column names must be distinct")
        return self


def load_document(path) -> dict:
    """Read a JSON or YAML mapping."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"configuration file {p} does not exist")
    text = p.read_text()
    try:
        doc = json.loads(text) if p.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot parse {p}: {e}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{p} must contain a mapping")
    return doc


def parse_theta(text) -> list:
    if isinstance(text, (list, tuple)):
        return [float(t) for t in text]
    try:
        return [float(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse theta_L {text!r}") from None


def default_threads() -> Optional[int]:
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return None
    try:
        return max(int(raw), 1)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV}={raw!r} is not an integer") from None


# ------------------------------------------------------------------ output

def _clean(obj):
    """JSON-safe tree: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    return obj


def dump(doc, fmt="json") -> str:
    doc = _clean(doc)
    if fmt == "yaml":
        return yaml.safe_dump(doc, sort_keys=False)
    return json.dumps(doc, indent=2) + "\n"


def _write_table(path, rows):
    rows = list(rows)
    if not rows:
        return
    keys = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, keys)
        wr.writeheader()
        for r in rows:
            wr.writerow({k: ("" if r[k] is None else (repr(float(r[k])) if isinstance(r[k], (float, np.floating)) else r[k]))
                         for k in keys})


def _emit(text, output):
    if output:
        Path(output).write_text(text)
    else:
        sys.stdout.write(text)


# ------------------------------------------------------------------ commands

def mte_demo(theta_L: float = 0.8, grid=None):
    model = build_appendix_dgp()
    bands = {s: mte_bounds(model, grid, theta_L, s) for s in SETS}
    g = bands["monotone"].grid
    rows = []
    for i, v in enumerate(g):
        row = {"v": float(v), "truth": model.truth(float(v))}
        for s, b in bands.items():
            row[f"{s}_lower"], row[f"{s}_upper"] = float(b.lower[i]), float(b.upper[i])
        rows.append(row)
    doc = {
        "design": "latent_index", "theta_L": theta_L,
        "sets": {bands[s].tag: {"lower": bands[s].lower, "upper": bands[s].upper, "s": bands[s].s_of_v} for s in SETS},
        "grid": g,
    }
    return doc, rows


def run(cfg: RunConfig) -> dict:
    """Execute a run configuration and return the report tree."""
    cfg.validate()
    threads = cfg.threads or default_threads()
    sample = ingest(cfg.input, cfg.columns, cfg.covariate)
    if cfg.direction == "flipped":
        sample = flip_direction(sample)
    # a flipped sample already carries relabelled arms, so these primitives
    # and the fold check refer to the arm being trimmed
    prim = identified_primitives(sample, cfg.theta_L[-1])
    kw = dict(case=cfg.case, bootstrap=cfg.bootstrap, seed=cfg.seed, kernel=cfg.kernel,
              bandwidth=cfg.bandwidth, draws=cfg.draws, covariate=bool(cfg.covariate), workers=threads)
    results, warnings = [], []
    for t in cfg.theta_L:
        res = analyze(sample, t, cfg.symmetry, level=cfg.level, **kw)
        results.append(res)
        warnings.extend(f"theta_L={t}: {w}" for w in res.warnings)
    report = {
        "schema_version": SCHEMA_VERSION,
        "tool": {"name": "smbounds", "version": __version__},
        "input": {"path": str(cfg.input), "n": sample.n, "columns": cfg.columns,
                  "covariate": cfg.covariate, "cells": {f"d{d}s{s}": c for (d, s), c in sample.counts.items()}},
        "config": {k: v for k, v in asdict(cfg).items() if k not in ("output", "plot_dir", "threads")},
        "primitives": {
            "alpha_hat": prim.alpha0, "p_s1_d1_hat": prim.p_s1_d1, "q_hat": prim.q0,
            "theta_F_hat": prim.theta_F, "eta_hat": prim.eta0, "p_d1_hat": prim.p_d1,
            "direction": cfg.direction,
        },
        "plausibility": [
            {"theta_L": t, "upper_bound_P_S1_given_S0_eq_0": theta_plausibility(prim, t)} for t in cfg.theta_L
        ],
        "results": [r.to_dict() | {"theta_L": t} for t, r in zip(cfg.theta_L, results)],
        "metadata": {
            "case_margin": CASE_MARGIN, "kernel": cfg.kernel, "bandwidth_rule": cfg.bandwidth,
            "ci_known_case": "imbens_manski", "ci_unknown_case": "gaussian_max",
            "ci_covariates": "bootstrap",
        },
        "warnings": warnings,
    }
    tables = {}
    if cfg.sensitivity or len(cfg.theta_L) > 1:
        curve = sensitivity_curve(sample, cfg.theta_L, cfg.symmetry, cfg.level, **kw)
        tables["sensitivity"] = list(curve.rows())
        report["sensitivity"] = {"rows": tables["sensitivity"], "crossing": curve.crossing}
    if cfg.fold_check:
        fr = tail_smoothness_report(sample, cfg.fold_side, cfg.theta_L[0],
                                    kernel=cfg.kernel, bandwidth=cfg.bandwidth)
        tables["fold"] = list(fr.rows())
        report["fold_check"] = {
            "side": fr.side, "fold_point": fr.fold_point, "violation_measure": fr.violation_measure,
            "flagged": fr.flagged, "bandwidth": fr.bandwidth, "band_level": 0.99,
            "arm": "control" if sample.flipped else "treated",
        }
    if cfg.mte_demo:
        doc, rows = mte_demo()
        report["mte_demo"] = doc
        tables["mte"] = rows
    if cfg.plot_dir:
        Path(cfg.plot_dir).mkdir(parents=True, exist_ok=True)
        for name, rows in tables.items():
            _write_table(Path(cfg.plot_dir) / f"{name}.csv", rows)
        report["plot_data"] = sorted(f"{name}.csv" for name in tables)
    return report


def run_simulation(plan_path, workers: Optional[int] = None) -> dict:
    from .simlab import ReplicationPlan, run_replications

    doc = load_document(plan_path)
    try:
        plan = ReplicationPlan.from_config(doc)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid plan: {e}") from None
    if workers and not plan.workers:
        plan.workers = workers
    rep = run_replications(plan)
    return {
        "schema_version": SCHEMA_VERSION,
        "tool": {"name": "smbounds", "version": __version__},
        "plan": {k: v for k, v in doc.items() if k != "workers"},
        "coverage": rep.to_dict(),
    }


# ------------------------------------------------------------------ argparse

def _parser():
    ap = argparse.ArgumentParser(prog="smbounds", description="Treatment-effect bounds under sample selection.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="estimate bounds for a dataset")
    r.add_argument("input", nargs="?", help="delimited data file with header")
    r.add_argument("--config", help="JSON or YAML run configuration (flags override it)")
    r.add_argument("--y-column", dest="y_col")
    r.add_argument("--s-column", dest="s_col")
    r.add_argument("--d-column", dest="d_col")
    r.add_argument("--covariate-column", dest="covariate")
    r.add_argument("--theta-l", dest="theta_L", help="value or comma-separated grid in (0, 1]")
    sym = r.add_mutually_exclusive_group()
    sym.add_argument("--symmetry", dest="symmetry", action="store_true", default=None)
    sym.add_argument("--no-symmetry", dest="symmetry", action="store_false")
    r.add_argument("--flip-direction", action="store_true", default=None)
    r.add_argument("--case", choices=("auto", "known", "unknown"))
    r.add_argument("--level", type=float)
    r.add_argument("--bootstrap", type=int, help="bootstrap replications (>= 200)")
    r.add_argument("--seed", type=int)
    r.add_argument("--sensitivity", action="store_true", default=None)
    r.add_argument("--fold-check", action="store_true", default=None)
    r.add_argument("--fold-side", choices=("lower", "upper"))
    r.add_argument("--mte-demo", action="store_true", default=None)
    r.add_argument("--kernel", choices=("gaussian", "epanechnikov"))
    r.add_argument("--bandwidth", help="silverman, sheather_jones or a positive number")
    r.add_argument("--draws", type=int)
    r.add_argument("--threads", type=int)
    r.add_argument("-o", "--output")
    r.add_argument("--plot-dir")
    r.add_argument("--format", choices=("json", "yaml"))

    s = sub.add_parser("simulate", help="run a Monte Carlo plan")
    s.add_argument("plan")
    s.add_argument("-o", "--output")
    s.add_argument("--threads", type=int)
    s.add_argument("--format", choices=("json", "yaml"), default="json")

    m = sub.add_parser("mte-demo", help="latent-index bounds for the built-in design")
    m.add_argument("--theta-l", dest="theta_L", type=float, default=0.8)
    m.add_argument("-o", "--output")
    m.add_argument("--plot-dir")
    m.add_argument("--format", choices=("json", "yaml"), default="json")

    e = sub.add_parser("export-sample", help="write a synthetic dataset")
    e.add_argument("output")
    e.add_argument("--dgp", default="example1", help="'example1' or a JSON/YAML design file")
    e.add_argument("--n", type=int, default=5000)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--delimiter", choices=(",", "tab"), default=",")
    return ap


def _run_config(args) -> RunConfig:
    base = load_document(args.config) if args.config else {}
    cols = dict(base.pop("columns", {}) or {})
    for role, attr in (("y", "y_col"), ("s", "s_col"), ("d", "d_col")):
        if getattr(args, attr):
            cols[role] = getattr(args, attr)
        cols.setdefault(role, role)
    if "theta_l" in base:
        base["theta_L"] = base.pop("theta_l")
    if "theta_L" in base:
        base["theta_L"] = parse_theta(base["theta_L"])
    over = {
        "input": args.input, "theta_L": parse_theta(args.theta_L) if args.theta_L else None,
        "symmetry": args.symmetry, "case": args.case, "level": args.level, "bootstrap": args.bootstrap,
        "seed": args.seed, "covariate": args.covariate, "sensitivity": args.sensitivity,
        "fold_check": args.fold_check, "fold_side": args.fold_side, "mte_demo": args.mte_demo,
        "kernel": args.kernel, "bandwidth": args.bandwidth, "draws": args.draws, "output": args.output,
        "plot_dir": args.plot_dir, "format": args.format, "threads": args.threads,
    }
    if args.flip_direction:
        over["direction"] = "flipped"
    base.update({k: v for k, v in over.items() if v is not None})
    base["columns"] = cols
    if not base.get("input"):
        raise ConfigError("no input file given")
    bw = base.get("bandwidth")
    if isinstance(bw, str) and bw not in ("silverman", "sheather_jones"):
        try:
            base["bandwidth"] = float(bw)
        except ValueError:
            raise ConfigError(f"unknown bandwidth {bw!r}") from None
    try:
        return RunConfig(**base).validate()
    except TypeError as e:
        raise ConfigError(f"invalid configuration: {e}") from None


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    with warnings.catch_warnings():
        # clamping is reported in the document itself
        warnings.simplefilter("ignore", ClampWarning)
        return _dispatch(args)


def _dispatch(args) -> int:
    try:
        if args.command == "run":
            cfg = _run_config(args)
            _emit(dump(run(cfg), cfg.format), cfg.output)
        elif args.command == "simulate":
            _emit(dump(run_simulation(args.plan, args.threads or default_threads()), args.format), args.output)
        elif args.command == "mte-demo":
            doc, rows = mte_demo(args.theta_L)
            if args.plot_dir:
                Path(args.plot_dir).mkdir(parents=True, exist_ok=True)
                _write_table(Path(args.plot_dir) / "mte.csv", rows)
            _emit(dump({"schema_version": SCHEMA_VERSION, "mte_demo": doc}, args.format), args.output)
        elif args.command == "export-sample":
            from .simlab import draw_sample

            dgp = DgpSpec.from_config({"preset": "example1"} if args.dgp == "example1" else load_document(args.dgp))
            export_sample(draw_sample(dgp, args.n, args.seed), args.output,
                          "\t" if args.delimiter == "tab" else ",")
    except BoundsError as e:
        print(f"smbounds: error: {e}", file=sys.stderr)
        return e.code
    except ValueError as e:
        print(f"smbounds: error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
