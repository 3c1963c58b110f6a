"""Command-line front end.

Exit codes: 0 success, 1 a verification check failed, 2 invalid input,
3 a kernel that must be canonical is not.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import replace
from importlib import resources

import jsonschema
import numpy as np

from .bounds import (
    iid_sup_norms,
    iid_tail_bound,
    index_pairs,
    moment_bound,
    sup_norms,
    tail_from_norms,
    write_csv,
)
from .exceptions import (
    BudgetExceededError,
    CanonicalityError,
    UnsupportedMethodError,
    UStatBoundsError,
    ValidationError,
)
from .kernels import (
    DEFAULT_BUDGET,
    KernelEnsemble,
    canonicalize,
    require_canonical,
    worst_conditional_mean,
)
from .montecarlo import (
    exact_distribution,
    fit_constant,
    fit_tail_constant,
    law_from_samples,
    sample_ustatistic,
    verify_moment_bound,
    verify_tail_bound,
)
from .partitions import Partition
from .poisson import (
    ProcessSpec,
    StepKernel,
    poisson_threshold_bound,
    sup_stepkernel_norm,
    verify_poisson_bound,
)
from .tensor import METHODS, MultiIndexArray, NormConfig, partition_norm

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_CANONICAL = 0, 1, 2, 3

KIND_ALIASES = {"6": "moment", "7": "tail", "cor3": "iid-tail", "8": "poisson"}
KINDS = ("moment", "tail", "iid-tail", "poisson")

_N_LIST = {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schemaVersion", "kernel"],
    "properties": {
        "schemaVersion": {"const": 1},
        "name": {"type": "string", "pattern": "^[A-Za-z0-9._-]+$"},
        "kernel": {"type": "string"},
        "checks": {"type": "array", "items": {"enum": ["moment", "tail"]},
                   "minItems": 1, "uniqueItems": True},
        "calibration": {"type": "object", "additionalProperties": False,
                        "properties": {"n": _N_LIST}},
        "validation": {"type": "object", "additionalProperties": False,
                       "properties": {"n": _N_LIST}},
        "seeds": {"type": "object", "additionalProperties": False,
                  "properties": {"calibration": {"type": "integer", "minimum": 0},
                                 "validation": {"type": "integer", "minimum": 0}}},
        "N": {"type": "integer", "minimum": 1},
        "pList": {"type": "array", "items": {"type": "number", "minimum": 2}, "minItems": 1},
        "tGrid": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                  "minItems": 1},
        "constant": {"type": "number", "exclusiveMinimum": 0},
    },
}


class InputError(Exception):
    """Bad command-line input that is not tied to a library type."""


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=False, default=_json_default) + "\n"


def _json_default(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialize {type(x).__name__}")


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path} is not valid JSON: {exc}") from exc


def _load_array(path) -> MultiIndexArray:
    obj = _read_json(path)
    if isinstance(obj, list):
        return MultiIndexArray(np.asarray(obj, dtype=float))
    return MultiIndexArray.from_json(obj)


def _load_kernel(path) -> KernelEnsemble:
    return KernelEnsemble.from_json(_read_json(path))


def _norm_config(args) -> NormConfig:
    cfg = NormConfig(seed=args.seed, threads=args.threads)
    if getattr(args, "restarts", None) is not None:
        cfg = replace(cfg, restarts=args.restarts)
    if getattr(args, "samples", None) is not None:
        cfg = replace(cfg, samples=args.samples)
    return cfg


def _fmt_set(I) -> str:
    return "{" + ",".join(map(str, I)) + "}"


def _emit(text: str, path=None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="") as fh:
            fh.write(text)


# -- norm / canonicalize ---------------------------------------------------------

def cmd_norm(args) -> int:
    A = _load_array(args.array)
    J = Partition.parse(args.partition)
    cert = partition_norm(A, J, args.method, _norm_config(args))
    out = cert.to_json()
    out["partition"] = str(J)
    out["method"] = cert.method
    _emit(_dump(out))
    return EXIT_OK


def cmd_canonicalize(args) -> int:
    K = _load_kernel(args.kernel)
    axis, index, value = worst_conditional_mean(K)
    C = canonicalize(K)
    print(f"largest conditional mean before: {value:.6g} (axis {axis}, index {index})",
          file=sys.stderr)
    _emit(_dump(C.to_json()), args.output)
    return EXIT_OK


# -- bound -----------------------------------------------------------------------

def _dominant(rep):
    dom = rep.dominant_term
    return (None, None) if dom is None else (_fmt_set(dom.I), str(dom.J))


def _tail_csv_rows(reports):
    rows = []
    for rep in reports:
        I, J = _dominant(rep)
        exponent = rep.exponent if rep.exponent is not None and math.isfinite(rep.exponent) else None
        rows.append({"t": rep.t, "exponent": exponent, "dominantI": I,
                     "dominantJ": J, "bound": rep.bound})
    return rows


def cmd_bound(args) -> int:
    kind = KIND_ALIASES.get(args.kind, args.kind)
    if kind == "poisson":
        return _bound_poisson(args)
    K = _load_kernel(args.kernel)
    if not args.allow_noncanonical:
        require_canonical(K)
    cfg = _norm_config(args)
    if kind == "moment":
        if not args.p:
            raise InputError("--p is required for moment bounds")
        reports = [moment_bound(K, p, args.constant, mode=args.mode,
                                n_samples=args.mc_samples, seed=args.seed,
                                budget=args.budget, method=args.method, config=cfg)
                   for p in args.p]
        rows = []
        for rep in reports:
            I, J = _dominant(rep)
            rows.append({"p": rep.p, "total": rep.total, "dominantI": I, "dominantJ": J})
    else:
        if not args.t:
            raise InputError("--t is required for tail bounds")
        if kind == "iid-tail":
            if args.n is None:
                raise InputError("--n is required for i.i.d. tail bounds")
            reports = [iid_tail_bound(K, args.n, t, args.constant, args.method, cfg)
                       for t in args.t]
        else:
            norms = sup_norms(K, args.method, cfg, args.budget)
            reports = [tail_from_norms(norms, K.d, t, args.constant) for t in args.t]
        rows = _tail_csv_rows(reports)
    if args.csv:
        write_csv(rows, args.csv)
    _emit(_dump({"kind": kind, "reports": [r.to_json() for r in reports]}))
    return EXIT_OK


def _load_process(args, h: StepKernel) -> ProcessSpec:
    if args.process:
        spec = ProcessSpec.from_json(_read_json(args.process))
        spec.check_kernel(h)
        return spec
    return ProcessSpec.for_kernel(h, args.rate)


def _bound_poisson(args) -> int:
    h = StepKernel.from_json(_read_json(args.kernel))
    spec = _load_process(args, h)
    cfg = _norm_config(args)
    if not args.p and not args.t:
        raise InputError("give --p or --t for the threshold bound")
    norms = [(I, J, sup_stepkernel_norm(h, spec, I, J, args.method, cfg))
             for I, J in index_pairs(h.d)]
    reports = [poisson_threshold_bound(h, spec, p=p, constant=args.constant, norms=norms)
               for p in args.p or ()]
    reports += [poisson_threshold_bound(h, spec, t=t, constant=args.constant, norms=norms)
                for t in args.t or ()]
    if args.csv:
        rows = []
        for rep in reports:
            I, J = _dominant(rep)
            rows.append({"p": rep.p, "t": rep.t, "threshold": rep.total,
                         "bound": rep.bound, "dominantI": I, "dominantJ": J})
        write_csv(rows, args.csv)
    _emit(_dump({"kind": "poisson", "reports": [r.to_json() for r in reports]}))
    return EXIT_OK


# -- poisson ---------------------------------------------------------------------

def cmd_poisson(args) -> int:
    h = StepKernel.from_json(_read_json(args.stepkernel))
    spec = _load_process(args, h)
    cfg = _norm_config(args)
    norms = [{"I": list(I), "J": str(J),
              "supNorm": sup_stepkernel_norm(h, spec, I, J, args.method, cfg)}
             for I, J in index_pairs(h.d)]
    out = {"d": h.d, "norms": norms}
    code = EXIT_OK
    if args.verify:
        report = verify_poisson_bound(h, spec, args.constant, args.seed, args.verify,
                                      args.p, args.threads, args.method, cfg)
        out["verification"] = report
        if args.csv:
            write_csv(report["rows"], args.csv)
        if not report["pass"]:
            code = EXIT_FAIL
        _warn_unresolvable(report["rows"])
    else:
        table = [(I, J, v["supNorm"]) for (I, J), v in zip(index_pairs(h.d), norms)]
        reps = [poisson_threshold_bound(h, spec, p=p, constant=args.constant, norms=table)
                for p in args.p]
        out["thresholds"] = [{"p": r.p, "threshold": r.total, "bound": r.bound} for r in reps]
        if args.csv:
            write_csv(out["thresholds"], args.csv)
    _emit(_dump(out))
    return code


def _warn_unresolvable(rows) -> None:
    bad = [r for r in rows if r["status"] == "unresolvable"]
    if bad:
        print(f"warning: {len(bad)} level(s) unresolvable at this sample size",
              file=sys.stderr)


# -- verify ----------------------------------------------------------------------

def load_config(path) -> dict:
    cfg = _read_json(path)
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(map(str, exc.absolute_path)) or "<root>"
        raise InputError(f"config {path} is invalid at {where}: {exc.message}") from exc
    return cfg


def _law(K: KernelEnsemble, budget: int, seed: int, N: int, threads: int):
    """Exact law when enumerable, else the empirical law of a calibration run."""
    try:
        return exact_distribution(K, budget), "exact"
    except BudgetExceededError:
        run = sample_ustatistic(K, seed, N, threads=threads, keep_samples=True)
        return law_from_samples(run.samples), "montecarlo"


def run_verify(cfg: dict, base_dir: str, seed: int = 0, threads: int = 1,
               budget: int = DEFAULT_BUDGET) -> dict:
    """Calibrate constants, then check held-out runs against the fitted bounds.

    With ``calibration.n`` and ``validation.n`` the kernel is a shared base
    kernel expanded to each ``n``; otherwise the kernel is used as given.
    """
    K = KernelEnsemble.from_json(_read_json(os.path.join(base_dir, cfg["kernel"])))
    require_canonical(K)
    checks = cfg.get("checks", ["moment", "tail"])
    seeds = cfg.get("seeds", {})
    cal_seed = seeds.get("calibration", seed)
    val_seed = seeds.get("validation", seed + 1)
    N = cfg.get("N", 100_000)
    p_list = [float(p) for p in cfg.get("pList", [2, 4])]
    t_grid = [float(t) for t in cfg.get("tGrid", [1, 2, 4])]
    cal_n = cfg.get("calibration", {}).get("n")
    val_n = cfg.get("validation", {}).get("n")
    if (cal_n is None) != (val_n is None):
        raise InputError("give n lists for both calibration and validation, or neither")
    cal_kernels = [K.iid(n) for n in cal_n] if cal_n else [K]
    val_kernels = [K.iid(n) for n in val_n] if val_n else [K]
    laws = [_law(k, budget, cal_seed, N, threads) for k in cal_kernels]
    fixed = cfg.get("constant")
    report = {"schemaVersion": 1, "name": cfg.get("name", "verify"),
              "N": N, "seeds": {"calibration": cal_seed, "validation": val_seed}}
    moment_rows, tail_rows_ = [], []
    passed = True

    if "moment" in checks:
        if fixed is None:
            inst = [(law.moment(p), moment_bound(k, p, budget=budget).total)
                    for k, (law, _) in zip(cal_kernels, laws) for p in p_list]
            fit = fit_constant(inst)
            constant = fit.constant
        else:
            fit, constant = None, float(fixed)
        for k in val_kernels:
            res = verify_moment_bound(k, p_list, constant, mode="montecarlo",
                                      seed=val_seed, N=N, threads=threads, budget=budget)
            for row in res["rows"]:
                moment_rows.append({"n": k.n, "p": row["p"], "lhs": row["lhs"],
                                    "lhsSE": row["lhsSE"], "rhs": row["rhs"],
                                    "ratio": row["ratio"],
                                    "status": "pass" if row["pass"] else "fail"})
            passed &= res["pass"]
        report["moment"] = {"constant": constant,
                            "fit": None if fit is None else fit.to_json(),
                            "calibrationLaws": [src for _, src in laws],
                            "rows": moment_rows}

    if "tail" in checks:
        if fixed is None:
            cases = []
            for k, (law, _) in zip(cal_kernels, laws):
                norms = iid_sup_norms(K, k.n) if cal_n else sup_norms(k, budget=budget)
                cases.append((law, norms, K.d, t_grid))
            fit = fit_tail_constant(cases)
            constant = fit.constant
        else:
            fit, constant = None, float(fixed)
        for k in val_kernels:
            res = verify_tail_bound(K, t_grid, constant, val_seed, N,
                                    n=k.n if val_n else None, threads=threads)
            for row in res["rows"]:
                tail_rows_.append({"n": k.n, **row})
            passed &= res["pass"]
        report["tail"] = {"constant": constant,
                          "fit": None if fit is None else fit.to_json(),
                          "rows": tail_rows_}
    report["pass"] = bool(passed)
    return report


def _manifest(name: str, files: dict) -> dict:
    plots = []
    if "tail" in files:
        plots.append({"title": "empirical tail vs bound", "data": files["tail"],
                      "x": "t", "y": ["empirical", "ciHigh", "bound"],
                      "groupBy": "n", "yScale": "log"})
    if "moment" in files:
        plots.append({"title": "moment ratio", "data": files["moment"],
                      "x": "p", "y": ["ratio"], "groupBy": "n", "yScale": "log"})
    return {"schemaVersion": 1, "name": name, "plots": plots}


def cmd_verify(args) -> int:
    cfg = load_config(args.config)
    base = os.path.dirname(os.path.abspath(args.config))
    report = run_verify(cfg, base, args.seed, args.threads, args.budget)
    if args.output_dir:
        os.makedirs(args.output_dir, exist_ok=True)
        name = report["name"]
        files = {}
        for key in ("moment", "tail"):
            if key in report:
                files[key] = f"{name}-{key}.csv"
                write_csv(report[key]["rows"], os.path.join(args.output_dir, files[key]))
        _emit(_dump(_manifest(name, files)),
              os.path.join(args.output_dir, f"{name}-plots.json"))
        _emit(_dump(report), os.path.join(args.output_dir, f"{name}-report.json"))
    _emit(_dump(report))
    _warn_unresolvable(report.get("tail", {}).get("rows", []))
    return EXIT_OK if report["pass"] else EXIT_FAIL


# -- entry point -------------------------------------------------------------------

def bundled_config(name: str = "rademacher-d2.json") -> str:
    """Filesystem path of a configuration shipped with the package."""
    return str(resources.files("ustatbounds").joinpath("configs", name))


def _add_globals(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--seed", type=int, default=d(0), help="base random seed")
    p.add_argument("--threads", type=int, default=d(1), help="worker threads")
    p.add_argument("--budget", type=int, default=d(DEFAULT_BUDGET),
                   help="largest exact enumeration allowed")


def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0 or not math.isfinite(v):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ustatbounds",
        description="Partition norms and moment/tail bounds for U-statistics and chaoses.")
    _add_globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        _add_globals(p, suppress=True)
        return p

    def add_method(p):
        p.add_argument("--method", choices=METHODS, default="auto")
        p.add_argument("--restarts", type=int, help="alternating-maximization restarts")
        p.add_argument("--samples", type=int, help="oracle sample count")

    p = add("norm", "partition norm of an array")
    p.add_argument("array", help="array JSON {order, shape, values} or nested list")
    p.add_argument("partition", help='partition such as "{1,3}|{2}"')
    add_method(p)
    p.set_defaults(func=cmd_norm)

    p = add("canonicalize", "project a kernel onto its canonical part")
    p.add_argument("kernel")
    p.add_argument("--output", "-o")
    p.set_defaults(func=cmd_canonicalize)

    p = add("bound", "evaluate a moment, tail or Poisson bound")
    p.add_argument("kernel", help="kernel JSON (step kernel JSON for --kind poisson)")
    p.add_argument("--kind", required=True, choices=KINDS + tuple(KIND_ALIASES))
    p.add_argument("--p", type=float, nargs="+")
    p.add_argument("--t", type=float, nargs="+")
    p.add_argument("--n", type=int, help="sample size for the i.i.d. tail bound")
    p.add_argument("--constant", type=_positive_float, default=1.0)
    p.add_argument("--mode", choices=("exact", "montecarlo"), default="exact")
    p.add_argument("--mc-samples", type=int, default=100_000)
    p.add_argument("--process", help="process JSON for --kind poisson")
    p.add_argument("--rate", type=float, default=1.0,
                   help="homogeneous Poisson rate when no process file is given")
    p.add_argument("--csv")
    p.add_argument("--allow-noncanonical", action="store_true")
    add_method(p)
    p.set_defaults(func=cmd_bound)

    p = add("verify", "calibrate constants and check held-out runs")
    p.add_argument("config", help="experiment config JSON")
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_verify)

    p = add("poisson", "step-kernel norms, thresholds and sampling checks")
    p.add_argument("stepkernel")
    p.add_argument("--process")
    p.add_argument("--rate", type=float, default=1.0)
    p.add_argument("--p", type=float, nargs="+", default=[2.0, 3.0, 4.0])
    p.add_argument("--constant", type=_positive_float, default=1.0)
    p.add_argument("--verify", type=int, metavar="N",
                   help="sample N integrals and check the threshold bound")
    p.add_argument("--csv")
    add_method(p)
    p.set_defaults(func=cmd_poisson)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    try:
        return args.func(args)
    except CanonicalityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(f"offending conditional mean: axis j={exc.axis}, index i={exc.index}, "
              f"value={exc.value!r}", file=sys.stderr)
        return EXIT_CANONICAL
    except (InputError, ValidationError, BudgetExceededError, UnsupportedMethodError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except UStatBoundsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
