"""Experiment runner: build one problem instance, run a roster of solvers, write tables and traces.

Configuration is a flat ``key = value`` text file. Blank lines and lines
starting with ``#`` are ignored::

    problem = bpdn                 # bpdn, mc, svm, denoise or quadratic
    problem.m = 200                # any keyword of the generator
    problem.n = 512
    problem.k_sparse = 10
    seed = 3
    solvers = r2, r2dh-spec, r2dh-spec-nm
    solver.r2.max_iter = 500       # any SolverOptions field
    out = results
    trace = true

Values parse as bool (``true``/``false``), int, float or string, in that
order. Every parse error names the offending key (or line).
"""

import argparse
import copy
import csv
import inspect
import io
import math
import os
import sys
from dataclasses import dataclass, field, fields, replace
from typing import Optional

from .problems import GENERATORS
from .solvers import RunRecord, SolverOptions, lm_solve, r2_solve, r2dh_solve, r2n_solve

EXIT_OK = 0
EXIT_SOLVER_ERROR = 1
EXIT_CONFIG_ERROR = 2

TABLE_COLUMNS = ("Solver", "f", "h/lambda", "Delta_f_plus_h", "sqrt_xi_over_nu",
                 "num_f", "num_grad_or_J", "num_prox", "time_s")
TRACE_COLUMNS = ("k", "f_plus_h", "sigma", "nu", "measure", "rho", "status")

_OPTION_FIELDS = {f.name: f.type for f in fields(SolverOptions)}


def _runner(family, **kw):
    solve = {"r2": r2_solve, "r2dh": r2dh_solve, "r2n": r2n_solve, "lm": lm_solve}[family]

    def run(prob, h, x0, opts, name):
        return solve(prob, h, x0, opts=opts, name=name, **kw)
    return run


# name -> (table label, runner, default option overrides)
SOLVERS = {
    "r2": ("R2", _runner("r2"), {}),
    "r2dh-spec": ("R2DH-Spec", _runner("r2dh", kind="spectral"), {}),
    "r2dh-spec-nm": ("R2DH-Spec-NM", _runner("r2dh", kind="spectral"), {"memory": 5}),
    "r2dh-psb": ("R2DH-PSB", _runner("r2dh", kind="psb_diag"), {}),
    "r2dh-andrei": ("R2DH-Andrei", _runner("r2dh", kind="andrei_diag"), {}),
    "r2dh-dbfgs": ("R2DH-DBFGS", _runner("r2dh", kind="dbfgs_diag"), {}),
    "r2n-r2": ("R2N-R2", _runner("r2n", subsolver="r2"), {}),
    "r2n-r2dh": ("R2N-R2DH", _runner("r2n", subsolver="r2dh"), {}),
    "lm-r2": ("LM-R2", _runner("lm", subsolver="r2"), {}),
    "lm-r2dh": ("LM-R2DH", _runner("lm", subsolver="r2dh"), {}),
}


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending key."""


@dataclass
class SolverSpec:
    name: str
    options: dict = field(default_factory=dict)


@dataclass
class ExperimentConfig:
    problem: str
    problem_params: dict = field(default_factory=dict)
    seed: Optional[int] = None
    solvers: list = field(default_factory=list)
    out: Optional[str] = None
    trace: bool = False


def parse_value(text):
    t = text.strip()
    low = t.lower()
    if low in ("true", "false"):
        return low == "true"
    for conv in (int, float):
        try:
            return conv(t)
        except ValueError:
            pass
    return t


def _coerce_option(key, name, value):
    kind = _OPTION_FIELDS[name]
    if kind in (bool, "bool"):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true or false, got {value!r}")
        return value
    if kind in (int, "int"):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key}: expected a number, got {value!r}")
    return float(value)


def parse_config(text):
    """Parse flat ``key = value`` text into an :class:`ExperimentConfig`."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in raw:
            raise ConfigError(f"{key}: duplicate key (line {lineno})")
        raw[key] = value
    return config_from_mapping(raw)


def config_from_mapping(raw):
    """Build and validate a config from a mapping of string keys to string (or parsed) values."""
    if "problem" not in raw:
        raise ConfigError("problem: required key is missing")
    problem = str(raw["problem"]).strip()
    if problem not in GENERATORS:
        raise ConfigError(f"problem: unknown family {problem!r}; expected one of {sorted(GENERATORS)}")
    accepted = set(inspect.signature(GENERATORS[problem]).parameters) - {"seed"}

    cfg = ExperimentConfig(problem=problem)
    names = None
    options = {}
    for key, value in raw.items():
        v = parse_value(value) if isinstance(value, str) else value
        if key == "problem":
            continue
        if key == "seed":
            if isinstance(v, bool) or not isinstance(v, int) or v < 0:
                raise ConfigError(f"seed: expected a nonnegative integer, got {value!r}")
            cfg.seed = v
        elif key == "out":
            cfg.out = str(value).strip()
        elif key == "trace":
            if not isinstance(v, bool):
                raise ConfigError(f"trace: expected true or false, got {value!r}")
            cfg.trace = v
        elif key == "solvers":
            names = [s.strip() for s in str(value).split(",") if s.strip()]
            if not names:
                raise ConfigError("solvers: empty solver list")
            for s in names:
                if s not in SOLVERS:
                    raise ConfigError(f"solvers: unknown solver {s!r}; expected one of {list(SOLVERS)}")
            if len(set(names)) != len(names):
                raise ConfigError("solvers: duplicate solver name")
        elif key.startswith("problem."):
            param = key[len("problem."):]
            if param not in accepted:
                raise ConfigError(f"{key}: {problem} generator has no parameter {param!r}")
            cfg.problem_params[param] = v
        elif key.startswith("solver."):
            parts = key.split(".")
            if len(parts) != 3 or parts[1] not in SOLVERS:
                raise ConfigError(f"{key}: expected solver.<name>.<option> with a known solver name")
            if parts[2] not in _OPTION_FIELDS:
                raise ConfigError(f"{key}: unknown solver option {parts[2]!r}")
            options.setdefault(parts[1], {})[parts[2]] = _coerce_option(key, parts[2], v)
        else:
            raise ConfigError(f"{key}: unknown key")

    if names is None:
        raise ConfigError("solvers: required key is missing")
    for sname in options:
        if sname not in names:
            raise ConfigError(f"solver.{sname}: options given for a solver not in the solvers list")
    for sname in names:
        opts = {**SOLVERS[sname][2], **options.get(sname, {})}
        try:
            replace(SolverOptions(), **opts)
        except ValueError as exc:
            raise ConfigError(f"solver.{sname}: {exc}") from exc
        cfg.solvers.append(SolverSpec(sname, opts))
    return cfg


def _error_record(label, exc):
    nan = math.nan
    return RunRecord(solver=label, status="error", x=None, f=nan, h=nan, lam=nan, measure=nan,
                     nf=0, ngrad=0, nprox=0, njprod=0, time_s=0.0, iterations=0, n_success=0,
                     n_fail=0, error=f"{type(exc).__name__}: {exc}")


def build_instance(config):
    params = dict(config.problem_params)
    if config.seed is not None:
        params["seed"] = config.seed
    return GENERATORS[config.problem](**params)


def run_experiment(config, instance=None):
    """Run every configured solver from the same starting point.

    Each solver gets its own copy of the objective (so evaluation counters
    are per solver) and of x0. A solver that raises produces a row with
    status ``"error"``; the remaining solvers still run. ``delta_f_plus_h``
    is measured against the best final f + h over the successful rows.
    """
    if instance is None:
        try:
            instance = build_instance(config)
        except Exception as exc:  # reported per row, as for solver failures
            return [_error_record(SOLVERS[s.name][0], exc) for s in config.solvers]
    records = []
    for spec in config.solvers:
        label, runner, _ = SOLVERS[spec.name]
        prob = copy.deepcopy(instance.objective)
        prob.reset_counters()
        opts = replace(SolverOptions(), **spec.options)
        try:
            rec = runner(prob, instance.regularizer, instance.x0.copy(), opts, label)
        except Exception as exc:
            rec = _error_record(label, exc)
        records.append(rec)
    finite = [r.f_plus_h for r in records if r.error is None and math.isfinite(r.f_plus_h)]
    if finite:
        best = min(finite)
        records = [r if r.error is not None else replace(r, delta_f_plus_h=r.f_plus_h - best)
                   for r in records]
    return records


def _sci(v):
    return f"{v:.2e}"


def table_rows(records, include_time=True):
    rows = []
    for r in records:
        row = [r.solver, _sci(r.f), _sci(r.h_over_lam) if r.error is None else _sci(math.nan),
               _sci(r.delta_f_plus_h), _sci(r.measure), str(r.nf), str(r.num_grad_or_j),
               str(r.nprox)]
        if include_time:
            row.append(_sci(r.time_s))
        rows.append(row)
    return rows


def emit_table(records, fmt="markdown", include_time=True):
    """Statistics table with one row per record, in record order.

    ``fmt`` is ``"markdown"`` or ``"csv"``. Set ``include_time=False`` to drop
    the wall-clock column, the only non-deterministic one.
    """
    records = list(records)
    if not records:
        raise ValueError("emit_table needs at least one record")
    header = list(TABLE_COLUMNS if include_time else TABLE_COLUMNS[:-1])
    rows = table_rows(records, include_time)
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        return buf.getvalue()
    if fmt == "markdown":
        lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
        lines += ["| " + " | ".join(row) + " |" for row in rows]
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown table format {fmt!r}; expected 'markdown' or 'csv'")


def emit_trace(record):
    """Per-iteration CSV of one run, full precision, one row per completed outer iteration."""
    if record.error is not None:
        raise ValueError(f"{record.solver} has no trace: {record.error}")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    for t in record.trace:
        writer.writerow([t.k, repr(t.f_plus_h), repr(t.sigma), repr(t.nu), repr(t.measure),
                         repr(t.rho), t.status])
    return buf.getvalue()


def _slug(label):
    return label.lower().replace(" ", "_")


def write_outputs(records, out_dir, trace=False):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "table.csv"), "w", newline="") as fh:
        fh.write(emit_table(records, "csv"))
    with open(os.path.join(out_dir, "table.md"), "w", newline="") as fh:
        fh.write(emit_table(records, "markdown"))
    if trace:
        tdir = os.path.join(out_dir, "traces")
        os.makedirs(tdir, exist_ok=True)
        for r in records:
            if r.error is None:
                with open(os.path.join(tdir, _slug(r.solver) + ".csv"), "w", newline="") as fh:
                    fh.write(emit_trace(r))


def build_parser():
    p = argparse.ArgumentParser(prog="r2n-bench", description="Run R2N-family solvers on a benchmark problem.")
    p.add_argument("--config", help="flat key = value experiment file")
    p.add_argument("--out", help="output directory (overrides the config's out)")
    p.add_argument("--trace", action="store_true", help="also write per-iteration trace CSVs")
    p.add_argument("--seed", type=int, help="problem seed (overrides the config's seed)")
    p.add_argument("--list-solvers", action="store_true", help="print solver names and exit")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.list_solvers:
        for name in SOLVERS:
            print(name)
        return EXIT_OK
    if not args.config:
        print("error: --config is required", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    try:
        with open(args.config) as fh:
            cfg = parse_config(fh.read())
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError(f"--seed: expected a nonnegative integer, got {args.seed}")
            cfg.seed = args.seed
    except OSError as exc:
        print(f"config error: --config: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    if args.out:
        cfg.out = args.out
    cfg.trace = cfg.trace or args.trace

    records = run_experiment(cfg)
    sys.stdout.write(emit_table(records, "markdown"))
    if cfg.out:
        write_outputs(records, cfg.out, cfg.trace)
    failed = [r for r in records if r.error is not None]
    for r in failed:
        print(f"solver error: {r.solver}: {r.error}", file=sys.stderr)
    return EXIT_SOLVER_ERROR if failed else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
