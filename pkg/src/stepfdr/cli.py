"""Command-line interface: ``stepfdr {apply,simulate,shapes,check}``.

Data goes to files or standard output, diagnostics to standard error.
Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from stepfdr.conditions import (
    check_self_consistency,
    dc_estimate,
    monotonicity_probe,
    prds_curve_estimate,
    procedure_sampler,
)
from stepfdr.core import HypothesisSpace, weighted_pvalues
from stepfdr.procedures import FactorizedThresholds, Procedure
from stepfdr.shape import holm_reference, parse_shape, shape_table
from stepfdr.simulation import (
    DependenceModel,
    ExperimentConfig,
    reports_to_csv,
    reports_to_json,
    run_experiment,
)

log = logging.getLogger("stepfdr")

__all__ = ["ExperimentConfig", "main", "parse_procedure_spec"]


def parse_procedure_spec(s: str, alpha: float = 0.05) -> Procedure:
    """Parse a procedure spec string such as ``su:linear`` or ``rank:bl_rs``."""
    return Procedure.parse(s, alpha)


def _fmt(x: float) -> str:
    x = float(x)
    return str(int(x)) if x.is_integer() else repr(x)


def read_pvalue_csv(path: str | Path):
    """Read ``id,p[,pi,lambda,is_null]``; returns (space, p, null mask or None)."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        if "id" not in fields or "p" not in fields:
            raise ValueError(f"{path}: header must contain 'id' and 'p', got {fields}")
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path}: no p-values")
    m = len(rows)

    def col(name: str, default: float) -> np.ndarray:
        if name not in fields:
            return np.full(m, default)
        vals = [r[name].strip() if r[name] is not None else "" for r in rows]
        return np.array([float(v) if v else default for v in vals])

    ids = [r["id"] for r in rows]
    p = np.array([float(r["p"]) for r in rows])
    space = HypothesisSpace(tuple(ids), col("lambda", 1.0), col("pi", 1.0 / m))
    nulls = None
    if "is_null" in fields:
        flags = [r["is_null"].strip() for r in rows]
        if any(f not in ("0", "1") for f in flags):
            raise ValueError(f"{path}: is_null must be 0 or 1")
        nulls = np.array([f == "1" for f in flags])
    return space, p, nulls


def _write(text: str, path: str | None) -> None:
    if path and path != "-":
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _procedure_arg(s: str) -> str:
    try:
        Procedure.parse(s)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None
    return s


def _shape_arg(s: str) -> str:
    try:
        parse_shape(s, 10)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None
    return s


def _float_list(s: str) -> list[float]:
    try:
        return [float(x) for x in s.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {s!r}") from None


def _threads(s: str) -> int:
    if s == "auto":
        return os.cpu_count() or 1
    try:
        n = int(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"--threads takes an integer or 'auto', got {s!r}") from None
    if n < 1:
        raise argparse.ArgumentTypeError("--threads must be at least 1")
    return n


def _seed(s: str) -> int:
    n = int(s)
    if not 0 <= n < 2**64:
        raise argparse.ArgumentTypeError("--seed must be an unsigned 64-bit integer")
    return n


def _resolve(args) -> Procedure:
    # --shape fills in the shape only when the spec string leaves it out
    return Procedure.parse(args.procedure, args.alpha, default_shape=args.shape or "linear")


def cmd_apply(args) -> int:
    space, p, _ = read_pvalue_csv(args.input)
    proc = _resolve(args)
    res = proc.run(p, space)
    wp = weighted_pvalues(p, space)
    lines = ["id,p,weighted_p,rejected"]
    for i, lab in enumerate(space.labels):
        lines.append(f"{lab},{float(p[i])!r},{float(wp[i])!r},{int(res.rejected.mask[i])}")
    pihat = "NA" if res.pihat0 is None else _fmt(res.pihat0)
    lines.append(f"# r_hat={_fmt(res.rejected.volume)} pihat0={pihat}")
    _write("\n".join(lines) + "\n", args.output)
    log.info("%s rejected %d of %d hypotheses (volume %s)", proc.spec, res.rejected.count,
             space.m, _fmt(res.rejected.volume))
    log.info("note: FDR <= alpha * Pi(H) = %s * %s", _fmt(proc.alpha), _fmt(space.pi_total))
    return 0


def cmd_simulate(args) -> int:
    cfg = ExperimentConfig.from_json(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    reports = run_experiment(cfg, threads=args.threads)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = Path(cfg.csv_path) if cfg.csv_path else out_dir / "report.csv"
    json_path = Path(cfg.json_path) if cfg.json_path else out_dir / "report.json"
    csv_path.write_text(reports_to_csv(reports))
    json_path.write_text(reports_to_json(reports))
    log.info("wrote %d cells to %s and %s", len(reports), csv_path, json_path)
    return 0


def cmd_shapes(args) -> int:
    specs = [s.strip() for s in args.shapes.split(",") if s.strip()]
    holm = "holm" in specs
    shapes = [parse_shape(s, args.m, continuous=args.continuous) for s in specs if s != "holm"]
    table = shape_table(shapes, args.m)
    if holm:
        # keep the column order given on the command line
        table.columns = {
            s: holm_reference(args.m, table.r) if s == "holm" else table.columns[s] for s in specs
        }
    _write(table.to_csv(), args.out)
    return 0


def _model(args) -> DependenceModel:
    rho = args.rho
    if rho == "min":
        rho = -1.0 / (args.m - 1)
    return DependenceModel(args.kind, args.m, args.m if args.m0 is None else args.m0,
                           float(rho), args.mu1)


def cmd_check(args) -> int:
    seed = 0 if args.seed is None else args.seed
    proc = _resolve(args)
    out: dict = {"mode": args.mode, "procedure": proc.spec, "alpha": proc.alpha}
    if args.mode in ("sc", "mono"):
        if not args.input:
            raise ValueError(f"--mode {args.mode} needs --input")
        space, p, _ = read_pvalue_csv(args.input)
        if args.mode == "sc":
            coll = proc.collection(space)
            if proc.kind not in ("su", "sd", "sud") or not isinstance(coll, FactorizedThresholds):
                raise ValueError("--mode sc needs a factorized procedure (su, sd or sud)")
            rej = proc(p, space)
            ok, witness = check_self_consistency(rej, coll, p, space)
            out.update(volume=rej.volume, self_consistent=ok, witness=witness, passed=ok)
        else:
            v = monotonicity_probe(proc, p, space, args.n_perturb, seed)
            out.update(n_perturb=args.n_perturb, violations=v, passed=v == 0)
    else:
        model = _model(args)
        out["model"] = model.description
        space = HypothesisSpace.standard(model.m)
        if args.mode == "dc":
            beta = parse_shape(args.dc_shape, model.m)
            ests = dc_estimate(procedure_sampler(proc, model, args.hyp, space), beta,
                               args.c_grid, args.n, seed)
            out["shape"] = args.dc_shape
            out["estimates"] = [
                {"c": e.c, "estimate": e.estimate, "se": e.se, "n": e.n,
                 "violations": e.violations, "lower": e.lower, "lower_se": e.lower_se,
                 "passed": not (e.exceeds(3.0) or e.violated(3.0) or e.violations)}
                for e in ests
            ]
            out["passed"] = all(x["passed"] for x in out["estimates"])
        else:
            curve = prds_curve_estimate(model, proc, args.hyp, args.r, args.u_grid, args.n,
                                        seed, space)
            out.update(curve.to_dict(), r=args.r, passed=curve.nondecreasing)
    _write(json.dumps(out, indent=2, sort_keys=True) + "\n", args.output)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=_seed, default=argparse.SUPPRESS,
                        help="master seed (unsigned 64-bit)")
    common.add_argument("--threads", type=_threads, default=argparse.SUPPRESS,
                        help="worker threads for simulations, integer or 'auto'")
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS,
                        help="suppress diagnostics")

    parser = argparse.ArgumentParser(prog="stepfdr", parents=[common],
                                     description="Step-wise FDR procedures and checks.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_procedure_args(p: argparse.ArgumentParser, alpha_required: bool) -> None:
        p.add_argument("--procedure", type=_procedure_arg, required=True,
                       help="su|sd|sud:<lambda>|rank:<kind>|adaptive:<a0>,<a1>, "
                            "optionally followed by :<shape>")
        p.add_argument("--alpha", type=float, required=alpha_required,
                       default=None if alpha_required else 0.05)
        p.add_argument("--shape", type=_shape_arg, default=None,
                       help="shape spec, e.g. linear, by, prior:uniform")

    ap = sub.add_parser("apply", parents=[common], help="run a procedure on a CSV of p-values")
    add_procedure_args(ap, alpha_required=True)
    ap.add_argument("--input", required=True)
    ap.add_argument("--output", default=None)
    ap.set_defaults(func=cmd_apply)

    sp = sub.add_parser("simulate", parents=[common], help="Monte-Carlo error rates over a grid")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out-dir", default=".")
    sp.set_defaults(func=cmd_simulate)

    hp = sub.add_parser("shapes", parents=[common], help="tabulate normalized shape functions")
    hp.add_argument("--m", type=int, required=True)
    hp.add_argument("--shapes", required=True, help="comma-separated shape specs; 'holm' adds "
                                                    "the Holm reference curve")
    hp.add_argument("--continuous", action="store_true",
                    help="evaluate continuous priors directly instead of discretizing")
    hp.add_argument("--out", default=None)
    hp.set_defaults(func=cmd_shapes)

    cp = sub.add_parser("check", parents=[common], help="empirical SC/DC/monotonicity/PRDS checks")
    cp.add_argument("--mode", choices=("sc", "dc", "mono", "prds"), required=True)
    add_procedure_args(cp, alpha_required=False)
    cp.add_argument("--input", default=None)
    cp.add_argument("--output", default=None)
    cp.add_argument("--n-perturb", type=int, default=1000)
    cp.add_argument("--kind", default="independent")
    cp.add_argument("--m", type=int, default=20)
    cp.add_argument("--m0", type=int, default=None)
    cp.add_argument("--rho", default=0.0)
    cp.add_argument("--mu1", type=float, default=3.0)
    cp.add_argument("--hyp", default="h1", help="true-null hypothesis id")
    cp.add_argument("--dc-shape", default="linear")
    cp.add_argument("--c-grid", type=_float_list, default=[0.01, 0.05, 0.1, 0.5, 1.0])
    cp.add_argument("--n", type=int, default=10_000)
    cp.add_argument("--r", type=float, default=1.0)
    cp.add_argument("--u-grid", type=_float_list, default=[0.1, 0.2, 0.4, 0.6, 0.8, 1.0])
    cp.set_defaults(func=cmd_check)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    for name, default in (("seed", None), ("threads", 1), ("quiet", False)):
        if not hasattr(args, name):
            setattr(args, name, default)
    logging.basicConfig(format="%(message)s", stream=sys.stderr, force=True,
                        level=logging.WARNING if args.quiet else logging.INFO)
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError, RuntimeError) as e:
        log.error("error: %s", e)
        return 1


if __name__ == "__main__":
    sys.exit(main())
