"""Command-line front end.

Subcommands ``synthesize``, ``table``, ``observability``, ``rates`` and
``duality`` read an optional JSON config, write CSVs into the output directory
and finish with ``manifest.json``.  Exit codes: 0 success, 1 invalid input,
2 the run finished without meeting its target (``max_iters``, a line-search
failure, or a failed numerical check).

Config layout (every section and key optional)::

    {"system":    {"n": 10, "c": 1.0, "T": 1.0, "scheme": "eliminated",
                   "weighted": true, "y0": "gaussian"},
     "dual":      {"p": 1.2, "beta": 2.0, "quad_nodes": 64, ...},
     "optimizer": {"method": "adaptive-gradient", "grad_tol": 1e-8, ...},
     "observability": {"n_list": [10, 20, 40, 80], "n_random": 10000},
     "rates":     {"quantity": "semigroup-consistency",
                   "n_list": [10, 20, 40, 80], "t_eval": 0.5, "n_ref": 640}}

A system given by ``"a_matrix"`` and ``"b_matrix"`` (nested lists) replaces
the heat model; ``y0`` is then a list or ``"ones"``.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from . import __version__
from .analysis import QUANTITIES, rate_fit, sweep_rows, uniformity_sweep
from .dual import DualParameters
from .errors import NotControllableError, ValidationError
from .model import (SemidiscreteSystem, build_heat1d, from_matrices, gaussian_profile,
                    initial_from_vector, sample_initial)
from .optim import OptimizerConfig
from .oracle import duality_gap
from .synthesis import synthesize

EXIT_OK, EXIT_INVALID, EXIT_UNMET = 0, 1, 2
DEFAULT_OUT = "nullctl_out"
DUALITY_RTOL = 1e-6

# published values: name -> (n, phi_norm, h_beta, y_T_norm)
PAPER_TABLES = {
    "table2": (0.16, [("1D-10", 10, 0.1690, 0.6814, 0.4775),
                      ("1D-100", 100, 0.7960, 0.4779, 0.4565),
                      ("1D-500", 500, 2.0570, 0.3699, 0.4273)]),
    "table3": (2.0, [("1D-10", 10, 4.4266, 1e-2, 0.0111),
                     ("1D-100", 100, 4.8933, 1e-4, 1.3467e-4),
                     ("1D-500", 500, 5.0956, 4e-6, 5.5178e-6)]),
}
PAPER_MAX_ITERS = 1000
SCHEME_ORDER = ("eliminated", "paper-verbatim")

_SECTIONS = ("system", "dual", "optimizer", "observability", "rates")
_SYSTEM_KEYS = {"n", "c", "T", "scheme", "weighted", "y0", "a_matrix", "b_matrix", "h", "weight"}
_OBS_KEYS = {"n_list", "n_random"}
_RATE_KEYS = {"quantity", "n_list", "t_eval", "n_ref"}


@dataclass
class ExperimentConfig:
    system: Dict[str, Any] = field(default_factory=dict)
    dual: DualParameters = field(default_factory=DualParameters)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    observability: Dict[str, Any] = field(default_factory=dict)
    rates: Dict[str, Any] = field(default_factory=dict)
    out: Path = Path(DEFAULT_OUT)
    seed: int = 42

    def echo(self) -> Dict[str, Any]:
        return _jsonable({"system": self.system, "dual": asdict(self.dual),
                          "optimizer": asdict(self.optimizer),
                          "observability": self.observability, "rates": self.rates,
                          "out": str(self.out), "seed": self.seed})


def _jsonable(obj):
    """Non-finite floats become strings so the manifest stays strict JSON."""
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _check_keys(section: str, given, allowed) -> None:
    if not isinstance(given, dict):
        raise ValidationError(section, "must be a JSON object")
    extra = sorted(set(given) - set(allowed))
    if extra:
        raise ValidationError(extra[0], f"unknown key in section {section!r}")


def _number(section, key, value, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(key, f"{section}.{key} must be a number, got {value!r}")
    if integer and int(value) != value:
        raise ValidationError(key, f"{section}.{key} must be an integer, got {value!r}")
    return int(value) if integer else float(value)


def load_config(path: Optional[str], out: Optional[str] = None, seed: int = 42) -> ExperimentConfig:
    """Parse and validate a JSON config; any failure raises :class:`ValidationError`."""
    raw: Dict[str, Any] = {}
    if path is not None:
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ValidationError("config", f"cannot read {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ValidationError("config", f"{path} is not valid JSON: {exc}") from None
    _check_keys("config", raw, _SECTIONS)
    system = dict(raw.get("system", {}))
    _check_keys("system", system, _SYSTEM_KEYS)

    dual_raw = dict(raw.get("dual", {}))
    _check_keys("dual", dual_raw, {f.name for f in fields(DualParameters)})
    for k, v in dual_raw.items():
        if v is not None:
            dual_raw[k] = _number("dual", k, v, integer=k in ("quad_nodes", "order"))
    opt_raw = dict(raw.get("optimizer", {}))
    _check_keys("optimizer", opt_raw, {f.name for f in fields(OptimizerConfig)})
    for k, v in opt_raw.items():
        if k != "method":
            opt_raw[k] = _number("optimizer", k, v, integer=k in ("max_iters", "trace_every", "memory"))

    obs = dict(raw.get("observability", {}))
    _check_keys("observability", obs, _OBS_KEYS)
    rates = dict(raw.get("rates", {}))
    _check_keys("rates", rates, _RATE_KEYS)

    if out is None:
        out = os.environ.get("NULLCTL_OUT", DEFAULT_OUT)
    if isinstance(seed, bool) or int(seed) != seed or not 0 <= seed < 2 ** 64:
        raise ValidationError("seed", f"need a 64-bit unsigned integer, got {seed}")
    cfg = ExperimentConfig(system, DualParameters(**dual_raw), OptimizerConfig(**opt_raw),
                           obs, rates, Path(out), int(seed))
    # build once so model preconditions are checked at load time
    build_system(cfg.system)
    return cfg


def build_system(spec: Dict[str, Any]):
    """``(system, y0)`` from the system section."""
    horizon = _number("system", "T", spec.get("T", 1.0))
    if "a_matrix" in spec or "b_matrix" in spec:
        if "a_matrix" not in spec or "b_matrix" not in spec:
            raise ValidationError("b_matrix" if "a_matrix" in spec else "a_matrix",
                                  "matrix systems need both a_matrix and b_matrix")
        try:
            a = np.array(spec["a_matrix"], dtype=float)
            b = np.array(spec["b_matrix"], dtype=float)
        except (TypeError, ValueError):
            raise ValidationError("a_matrix", "matrices must be nested lists of numbers") from None
        system = from_matrices(a, b, horizon, _number("system", "h", spec.get("h", 0.5)),
                               _number("system", "weight", spec.get("weight", 1.0)))
        y0_spec = spec.get("y0", "ones")
    else:
        scheme = spec.get("scheme", "eliminated")
        weighted = spec.get("weighted", True)
        if not isinstance(weighted, bool):
            raise ValidationError("weighted", f"must be true or false, got {weighted!r}")
        system = build_heat1d(_number("system", "n", spec.get("n", 10), integer=True),
                              _number("system", "c", spec.get("c", 1.0)), horizon, scheme, weighted)
        y0_spec = spec.get("y0", "gaussian")
    return system, _initial(system, y0_spec)


def _initial(system: SemidiscreteSystem, spec):
    if isinstance(spec, list):
        return initial_from_vector(system, spec)
    if spec == "zero":
        return initial_from_vector(system, np.zeros(system.n_x))
    if spec == "ones":
        return initial_from_vector(system, np.ones(system.n_x))
    if system.nodes is not None and spec == "gaussian":
        return sample_initial(system, gaussian_profile)
    if system.nodes is not None and spec == "sine":
        return sample_initial(system, lambda x: math.sin(math.pi * x))
    raise ValidationError("y0", f"expected a list, 'zero', 'ones', 'gaussian' or 'sine', got {spec!r}")


# ---------------------------------------------------------------- output


def _write_csv(path: Path, header, rows) -> Path:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(header)
        for row in rows:
            out.writerow([_cell(v) for v in row])
    return path


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


class _Run:
    """Collects output files and metrics for one command, then writes the manifest."""

    def __init__(self, command: str, cfg: ExperimentConfig, extra: Optional[dict] = None):
        self.command = command
        self.cfg = cfg
        self.extra = extra or {}
        self.started = _now()
        self.files: List[Path] = []
        self.metrics: Dict[str, Any] = {}
        cfg.out.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        return self.cfg.out / name

    def add(self, path: Path) -> None:
        self.files.append(Path(path))

    def finish(self, code: int) -> int:
        missing = [str(p) for p in self.files if not p.is_file()]
        if missing:
            raise RuntimeError(f"manifest would reference missing files: {missing}")
        manifest = {
            "command": self.command,
            "arguments": self.extra,
            "version": __version__,
            "started": self.started,
            "finished": _now(),
            "exit_code": code,
            "config": self.cfg.echo(),
            "files": sorted(p.name for p in self.files),
            "metrics": self.metrics,
        }
        with open(self.path("manifest.json"), "w") as fh:
            json.dump(_jsonable(manifest), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return code


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


# ---------------------------------------------------------------- commands


def cmd_synthesize(cfg: ExperimentConfig) -> int:
    system, y0 = build_system(cfg.system)
    run = _Run("synthesize", cfg)
    res = synthesize(system, cfg.dual, y0, cfg.optimizer)
    res.control.to_csv(run.path("control.csv"))
    res.trace.to_csv(run.path("trace.csv"))
    run.add(run.path("control.csv"))
    run.add(run.path("trace.csv"))
    run.metrics = {
        "terminal_residual": res.terminal_residual,
        "y_T_norm": system.norm(res.y_terminal),
        "phi_norm": system.norm(res.phi),
        "h_beta": cfg.dual.penalty_scale(system.h),
        "grad_norm": res.trace.final.grad_norm,
        "j_value": res.trace.final.j_value,
        "stop_reason": res.trace.reason,
        "iterations": res.trace.iterations,
        "lp_control_norm": res.lp_control_norm,
        "lq_control_norm": res.lq_control_norm,
        "m_required": res.estimate_audit.m_required,
        "admissible": cfg.dual.admissible,
    }
    return run.finish(EXIT_OK if res.converged else EXIT_UNMET)


def _table_row(task):
    name, n, scheme, params, opt = task
    system, y0 = build_system({"n": n, "scheme": scheme})
    res = synthesize(system, params, y0, opt)
    return (system.norm(res.phi), params.penalty_scale(system.h), system.norm(res.y_terminal),
            res.trace.reason, res.trace.iterations, res.terminal_residual)


def cmd_table(cfg: ExperimentConfig, which: str, max_n: Optional[int] = None,
              jobs: int = 1, paper_optimizer: bool = True,
              paper_iters: int = PAPER_MAX_ITERS) -> int:
    if which not in PAPER_TABLES:
        raise ValidationError("which", f"expected one of {sorted(PAPER_TABLES)}, got {which!r}")
    beta, rows = PAPER_TABLES[which]
    params = replace(cfg.dual, beta=beta)
    opt = OptimizerConfig.paper(max_iters=paper_iters) if paper_optimizer else cfg.optimizer
    run = _Run("table", cfg, {"which": which, "max_n": max_n, "p": params.p,
                              "optimizer": asdict(opt)})
    tasks, order = [], []
    for name, n, *_ in rows:
        for scheme in SCHEME_ORDER:
            order.append((name, n, scheme))
            if max_n is None or n <= max_n:
                tasks.append((name, n, scheme, params, opt))
    results = _map(_table_row, tasks, jobs)
    done = {(t[0], t[2]): r for t, r in zip(tasks, results)}

    header = ["name", "scheme", "phi_norm", "h_beta", "y_T_norm", "paper_phi_norm",
              "paper_y_T_norm", "status", "stop_reason", "iterations", "terminal_residual"]
    out_rows, unmet = [], False
    paper = {r[0]: r for r in rows}
    for name, n, scheme in order:
        _, _, p_phi, _, p_yt = paper[name]
        r = done.get((name, scheme))
        if r is None:
            h_beta = (1.0 / (n + 1)) ** beta
            out_rows.append([name, scheme, "", h_beta, "", p_phi, p_yt, "skipped", "", "", ""])
            continue
        phi_n, h_beta, yt, reason, iters, resid = r
        unmet |= reason != "grad_tol_met"
        out_rows.append([name, scheme, phi_n, h_beta, yt, p_phi, p_yt, "ok", reason, iters, resid])
    run.add(_write_csv(run.path(f"{which}.csv"), header, out_rows))
    run.metrics = {f"{r[0]}/{r[1]}": {"phi_norm": r[2], "h_beta": r[3], "y_T_norm": r[4],
                                      "status": r[7]} for r in out_rows}
    return run.finish(EXIT_UNMET if unmet else EXIT_OK)


def _map(fn, tasks, jobs):
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, tasks))
    return [fn(t) for t in tasks]


def cmd_observability(cfg: ExperimentConfig, n_list=None, jobs: int = 1) -> int:
    n_list = list(n_list or cfg.observability.get("n_list", [10, 20, 40, 80]))
    if len(n_list) < 3:
        raise ValidationError("n_list", f"need ≥ 3 meshes, got {len(n_list)}")
    n_list = [_number("observability", "n_list", n, integer=True) for n in n_list]
    n_random = _number("observability", "n_random", cfg.observability.get("n_random", 10_000),
                       integer=True)
    spec = cfg.system
    run = _Run("observability", cfg, {"n_list": n_list})
    records = uniformity_sweep(n_list, cfg.dual, _number("system", "c", spec.get("c", 1.0)),
                               _number("system", "T", spec.get("T", 1.0)),
                               spec.get("scheme", "eliminated"), spec.get("weighted", True),
                               n_random, cfg.seed, jobs)
    header, rows = sweep_rows(records)
    run.add(_write_csv(run.path("observability.csv"), header, rows))
    cert_header = ["n", "index", "value"]
    cert_rows = [[r.n, i, v] for r in records for i, v in enumerate(r.certificate)]
    run.add(_write_csv(run.path("certificates.csv"), cert_header, cert_rows))
    lower = np.array([r.constant_estimate for r in records])
    run.metrics = {"c_lower": lower, "c_upper": [r.upper_estimate for r in records],
                   "lower_band": float(lower.max() / lower.min()) if lower.min() > 0 else math.inf,
                   "degenerate": [r.degenerate for r in records]}
    return run.finish(EXIT_OK)


def cmd_rates(cfg: ExperimentConfig, quantity=None, n_list=None) -> int:
    quantity = quantity or cfg.rates.get("quantity", "semigroup-consistency")
    n_list = list(n_list or cfg.rates.get("n_list", [10, 20, 40, 80]))
    default_t = 0.25 if quantity == "dual-observation-bound" else 0.5
    t_eval = _number("rates", "t_eval", cfg.rates.get("t_eval", default_t))
    n_ref = _number("rates", "n_ref", cfg.rates.get("n_ref", 640), integer=True)
    spec = cfg.system
    run = _Run("rates", cfg, {"quantity": quantity, "n_list": n_list, "t_eval": t_eval})
    fit = rate_fit(quantity, n_list, t_eval, cfg.dual, n_ref=n_ref,
                   c=_number("system", "c", spec.get("c", 1.0)),
                   horizon=_number("system", "T", spec.get("T", 1.0)))
    rows = [[n, h, e] for n, h, e in zip(n_list, fit.h_values, fit.errors)]
    run.add(_write_csv(run.path(f"rates_{quantity}.csv"), ["n", "h", "value"], rows))
    run.metrics = {"quantity": quantity, "slope": fit.slope, "intercept": fit.intercept,
                   "expected_slope": fit.expected_slope, "richardson_change": fit.richardson_change,
                   "ratio": fit.ratio, "passed": fit.passed}
    return run.finish(EXIT_OK if fit.passed else EXIT_UNMET)


def cmd_duality(cfg: ExperimentConfig) -> int:
    system, y0 = build_system(cfg.system)
    run = _Run("duality", cfg)
    rep = duality_gap(system, cfg.dual, y0)
    tol = DUALITY_RTOL * (1 + abs(rep.dual_value))
    ok = abs(rep.gap) <= tol and rep.steering_ok
    header = ["t"] + [f"u_{j + 1}" for j in range(system.n_u)]
    run.add(_write_csv(run.path("duality_control.csv"), header,
                       [[t, *u] for t, u in zip(rep.times, rep.control)]))
    run.add(_write_csv(run.path("duality.csv"),
                       ["primal", "dual", "gap", "tolerance", "young_residual", "y_T_norm",
                        "steering_ok"],
                       [[rep.primal_value, rep.dual_value, rep.gap, tol,
                         rep.young_equality_residual, system.norm(rep.y_terminal), rep.steering_ok]]))
    run.metrics = {"primal": rep.primal_value, "dual": rep.dual_value, "gap": rep.gap,
                   "y_T_norm": system.norm(rep.y_terminal), "steering_ok": rep.steering_ok,
                   "passed": ok}
    return run.finish(EXIT_OK if ok else EXIT_UNMET)


# ---------------------------------------------------------------- entry point


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    # defaults are filled in by main(); SUPPRESS keeps a flag given before the
    # subcommand from being reset by the subparser's copy
    quiet = argparse.SUPPRESS
    common.add_argument("--config", metavar="PATH", default=quiet, help="JSON experiment config")
    common.add_argument("--out", metavar="DIR", default=quiet,
                        help=f"output directory (default $NULLCTL_OUT or {DEFAULT_OUT})")
    common.add_argument("--jobs", type=int, metavar="N", default=quiet,
                        help="parallel sweep members (default 1)")
    common.add_argument("--seed", type=int, metavar="S", default=quiet,
                        help="seed for random checks (default 42)")
    common.add_argument("--max-n", type=int, metavar="N", default=quiet,
                        help="skip meshes larger than N in the table")

    ap = argparse.ArgumentParser(prog="nullctl", parents=[common],
                                 description="Minimal-norm null controls by penalized duality.")
    ap.add_argument("--version", action="version", version=f"nullctl {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("synthesize", parents=[common], help="minimise J, build and audit the control")
    tab = sub.add_parser("table", parents=[common], help="replicate the published 1D tables")
    tab.add_argument("which", choices=sorted(PAPER_TABLES))
    tab.add_argument("--optimizer", choices=("paper", "config"), default="paper",
                     help="fixed-step settings of the published runs, or the config's optimizer")
    obs = sub.add_parser("observability", parents=[common], help="observability constants per mesh")
    obs.add_argument("--n-list", type=int, nargs="+", metavar="N")
    rat = sub.add_parser("rates", parents=[common], help="mesh-convergence rate fit")
    rat.add_argument("--quantity", choices=QUANTITIES)
    rat.add_argument("--n-list", type=int, nargs="+", metavar="N")
    sub.add_parser("duality", parents=[common], help="primal/dual gap on a small system")
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    ns = _parser().parse_args(argv)
    for name, value in (("config", None), ("out", None), ("jobs", 1), ("seed", 42), ("max_n", None)):
        if not hasattr(ns, name):
            setattr(ns, name, value)
    try:
        if ns.jobs < 1:
            raise ValidationError("jobs", f"need at least 1, got {ns.jobs}")
        if ns.max_n is not None and ns.max_n < 2:
            raise ValidationError("max_n", f"need at least 2, got {ns.max_n}")
        cfg = load_config(ns.config, ns.out, ns.seed)
        if ns.command == "synthesize":
            return cmd_synthesize(cfg)
        if ns.command == "table":
            return cmd_table(cfg, ns.which, ns.max_n, ns.jobs, ns.optimizer == "paper")
        if ns.command == "observability":
            return cmd_observability(cfg, ns.n_list, ns.jobs)
        if ns.command == "rates":
            return cmd_rates(cfg, ns.quantity, ns.n_list)
        return cmd_duality(cfg)
    except (ValidationError, NotControllableError) as exc:
        print(f"nullctl: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
