"""Command-line entry point ``indist-kit``.

Exit codes: 0 success, 2 invalid input, 3 numerically degenerate input.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .boost import BoostConfig, boost, level_set_partition
from .data import (ColumnSchema, Dataset, load_dataset, load_partition, load_predictions, read_header,
                   save_partition)
from .errors import BadParam, DegeneracyError, IndistError, MissingColumn, ValidationError
from .expertise import expert_test, fit_subset_regressors, incorporation_gap
from .indist import AuditReport, audit_partition
from .metrics import bootstrap_ci, confusion_rates, mcc, permutation_baseline
from .partition import ClusterSpec, LipschitzSpec, certify_partition, cluster_finite_class, epsilon_net_partition
from .pipeline import run_pipeline
from .report import dumps, render_table
from .robustness import audit_product_class, evaluate_policies, gen_policy_class
from .synth import GENERATORS, SynthSpec, generate


def _csv_list(text: Optional[str]):
    return None if text is None else [t for t in text.split(",") if t]


def _schema(args, header: list[str]) -> ColumnSchema:
    expert = None if args.expert.lower() == "none" else args.expert
    if expert is not None and expert not in header:
        expert = None
    row_id = args.row_id if args.row_id in header else None
    if args.outcome not in header:
        raise MissingColumn(args.outcome)
    feats = _csv_list(args.features)
    if feats is None:
        feats = [h for h in header if h not in (args.outcome, expert, args.row_id, args.expert)]
    return ColumnSchema(tuple(feats), args.outcome, expert, (), row_id)


def _dataset(args) -> Dataset:
    if not args.data:
        raise BadParam("--data is required")
    return load_dataset(args.data, _schema(args, read_header(args.data)))


def _preds(args, ds: Dataset):
    if not args.preds:
        raise BadParam("--preds is required")
    return load_predictions(args.preds, ds, _csv_list(args.pred_columns))


def _partition(args, ds: Dataset):
    if not args.partition:
        raise BadParam("--partition is required")
    return load_partition(args.partition, ds)


def _emit(args, name: str, payload: dict, table: str) -> None:
    text = dumps(payload)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{name}.json").write_text(text, encoding="utf-8")
    sys.stdout.write(table if args.format == "table" else text)


# ---------------------------------------------------------------- verbs

def cmd_synth(args) -> None:
    spec = SynthSpec(args.generator, n=args.n, d=args.d, effect=args.effect, seed=args.seed, K=args.K,
                     m=args.m, noise=args.noise, expert=not args.no_expert)
    res = generate(spec)
    paths = res.save(args.out or ".")
    payload = {"spec": spec.to_dict(), "files": paths}
    table = render_table([{"file": k, "path": v} for k, v in paths.items()], ["file", "path"], "synthetic data")
    sys.stdout.write(table if args.format == "table" else dumps(payload))


def cmd_partition(args) -> None:
    ds = _dataset(args)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    info: dict = {"method": args.method}
    if args.method == "cluster":
        preds = _preds(args, ds)
        k = args.k if args.k is not None or args.diameter is not None else 2
        part = cluster_finite_class(preds, ClusterSpec(k=k, diameter=args.diameter, seed=args.cluster_seed))
        info["certified_alpha"] = certify_partition(preds, part)
    elif args.method == "net":
        if args.radius is not None:
            spec = LipschitzSpec(args.L, args.radius, args.metric)
        elif args.alpha is not None:
            spec = LipschitzSpec.from_alpha(args.alpha, args.L, args.metric)
        else:
            raise BadParam("net partitions need --radius or --alpha")
        part = epsilon_net_partition(ds.features, spec)
        info.update(radius=spec.radius, certified_alpha=spec.certified_alpha)
    else:
        cfg = BoostConfig(alpha=args.alpha if args.alpha is not None else 0.05, max_rounds=args.max_rounds,
                          min_cell=args.min_cell, seed=args.seed, max_depth=args.max_depth)
        predictor = boost(ds, cfg)
        predictor.save(out / "predictor.json")
        part = level_set_partition(predictor, ds)
        info.update(rounds=predictor.rounds, converged=predictor.converged, bins=list(part.labels),
                    predictor=str(out / "predictor.json"))
    save_partition(part, out / "partition.csv", ds.row_ids)
    info.update(K=part.K, cell_sizes=part.cell_sizes, file=str(out / "partition.csv"))
    rows = [{"cell": k, "n": int(part.cell_sizes[k])} for k in range(part.K)]
    sys.stdout.write(render_table(rows, ["cell", "n"], f"{args.method} partition") if args.format == "table"
                     else dumps(info))


def _audit_table(rep: AuditReport) -> str:
    rows = [{"cell": c.cell, "n": c.n, "max|cov|": c.max_abs_cov, "degenerate": c.degenerate} for c in rep.per_cell]
    return render_table(rows, ["cell", "n", "max|cov|", "degenerate"], f"audit: alpha_hat = {rep.alpha_hat:.6g}")


def cmd_audit(args) -> None:
    ds = _dataset(args)
    rep = audit_partition(ds, _preds(args, ds), _partition(args, ds), strict=args.strict)
    _emit(args, "audit", rep.to_dict(), _audit_table(rep))


def _alpha(args, ds, part) -> float:
    if args.alpha is not None:
        return args.alpha
    if args.audit:
        return AuditReport.from_dict(json.loads(Path(args.audit).read_text())).alpha_hat
    if args.preds:
        return audit_partition(ds, _preds(args, ds), part).alpha_hat
    raise BadParam("give --alpha, --audit or --preds")


def cmd_expert_test(args) -> None:
    ds = _dataset(args)
    part = _partition(args, ds)
    rep = expert_test(ds, part, _alpha(args, ds, part))
    rows = [c.to_dict() for c in rep.per_cell]
    _emit(args, "expert_test", rep.to_dict(),
          render_table(rows, ["cell", "n", "cov", "threshold", "informative"], f"expert test ({rep.scope})"))


def cmd_incorporate(args) -> None:
    ds = _dataset(args)
    part = _partition(args, ds)
    regs = fit_subset_regressors(ds, part, args.kind, args.threads)
    payload = {"kind": args.kind, "regressors": [r.to_dict() for r in regs]}
    if args.preds:
        preds = _preds(args, ds)
        alpha = audit_partition(ds, preds, part).alpha_hat
        payload["alpha"] = alpha
        payload["in_sample_bound"] = [g.to_dict() for g in incorporation_gap(ds, preds, part, regs, alpha)]
    rows = [r.to_dict() for r in regs]
    _emit(args, "incorporation", payload, render_table(rows, ["cell", "kind", "n", "gamma", "beta", "degenerate"],
                                                         "per-cell regressors"))


def _policy_arg(text: str) -> tuple[str, int]:
    kind, _, count = text.partition(":")
    kind = {"stumps": "stump", "trees": "tree"}.get(kind, kind)
    try:
        return kind, int(count or 1)
    except ValueError:
        raise BadParam(f"bad --policies value {text!r}; expected KIND:COUNT") from None


def cmd_robustness(args) -> None:
    ds = _dataset(args)
    preds = _preds(args, ds)
    part = _partition(args, ds)
    kind, count = _policy_arg(args.policies)
    policies = gen_policy_class(kind, ds.features, count, args.seed)
    pa = audit_product_class(ds, preds, policies, part)
    rep = evaluate_policies(ds, preds, part, policies, pa.alpha, args.threads)
    payload = {**pa.to_dict(), **rep.to_dict()}
    table = (f"alpha_pi = {pa.alpha_pi:.6g}, alpha_prod = {pa.alpha_prod:.6g}\n"
             f"{len(rep.rows)} rows, {len(rep.violations)} violations, {len(rep.vacuous_rows)} vacuous\n")
    _emit(args, "robustness", payload, table)


def cmd_report(args) -> None:
    ds = _dataset(args)
    y = ds.outcome
    if args.score in (None, "expert"):
        if not ds.has_expert:
            raise BadParam("dataset has no expert column; pass --score MODEL with --preds")
        s, name = ds.expert, "expert"
    else:
        preds = _preds(args, ds)
        if args.score not in preds.model_names:
            raise MissingColumn(args.score)
        s, name = preds.preds[:, preds.model_names.index(args.score)], args.score
    payload = {"predictor": name,
               "mse": bootstrap_ci("mse", s, y, n_boot=args.n_boot, seed=args.seed, workers=args.threads).to_dict()}
    row = {"predictor": name, "mse": payload["mse"]["point"]}
    if np.isin(y, (0.0, 1.0)).all():
        b = (s >= args.threshold).astype(np.float64)
        boot = bootstrap_ci("mcc", b, y, n_boot=args.n_boot, seed=args.seed, workers=args.threads)
        perm = permutation_baseline(b, y, args.n_perm, args.seed, workers=args.threads)
        rates = confusion_rates(b, y)
        payload.update(mcc=boot.to_dict(), mcc_degenerate=mcc(b, y).degenerate, rates=rates.to_dict(),
                       mcc_permutation=perm.to_dict())
        row.update(mcc=boot.point, ci_low=boot.ci_low, ci_high=boot.ci_high, tpr=rates.tpr, tnr=rates.tnr,
                   null_low=perm.ci_low, null_high=perm.ci_high)
    _emit(args, "report", payload, render_table([row], ["predictor", "mse", "mcc", "ci_low", "ci_high", "tpr",
                                                       "tnr", "null_low", "null_high"], "metrics"))


def cmd_pipeline(args) -> None:
    res = run_pipeline(args.config, args.out or "report", threads=args.threads)
    if args.format == "table":
        sys.stdout.write(res.summary)
    else:
        sys.stdout.write(dumps({"out_dir": str(res.out_dir), "files": list(res.files)}))


# ---------------------------------------------------------------- parser

def _globals(suppress: bool) -> argparse.ArgumentParser:
    # verb-level copies must not reset values given before the verb
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parent = argparse.ArgumentParser(add_help=False)
    g = parent.add_argument_group("global")
    g.add_argument("--seed", type=int, default=d(0))
    g.add_argument("--out", help="output directory", default=d(None))
    g.add_argument("--format", choices=("json", "table"), default=d("json"))
    g.add_argument("--threads", type=int, default=d(1))
    return parent


def build_parser() -> argparse.ArgumentParser:
    common = _globals(True)

    cols = argparse.ArgumentParser(add_help=False)
    c = cols.add_argument_group("columns")
    c.add_argument("--data", help="dataset CSV")
    c.add_argument("--preds", help="model predictions CSV")
    c.add_argument("--partition", help="row_id,cell CSV")
    c.add_argument("--features", help="comma-separated feature columns (default: all remaining)")
    c.add_argument("--outcome", default="y")
    c.add_argument("--expert", default="yhat", help="expert column, or 'none'")
    c.add_argument("--row-id", default="row_id")
    c.add_argument("--pred-columns", help="comma-separated subset of prediction columns")

    p = argparse.ArgumentParser(prog="indist-kit", description=__doc__.splitlines()[0], parents=[_globals(False)])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="verb", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate synthetic data")
    s.add_argument("--generator", choices=GENERATORS, required=True)
    s.add_argument("--n", type=int, default=2000)
    s.add_argument("--d", type=int, default=3)
    s.add_argument("--effect", type=float, default=0.15)
    s.add_argument("--K", type=int, default=3)
    s.add_argument("--m", type=int, default=5)
    s.add_argument("--noise", type=float, default=0.03)
    s.add_argument("--no-expert", action="store_true")
    s.set_defaults(fn=cmd_synth)

    s = sub.add_parser("partition", parents=[common, cols], help="learn a partition")
    s.add_argument("method", choices=("cluster", "net", "boost"))
    s.add_argument("--k", type=int, help="cell count (cluster; default 2)")
    s.add_argument("--diameter", type=float, help="diameter budget (cluster)")
    s.add_argument("--radius", type=float, help="net radius (net)")
    s.add_argument("--cluster-seed", type=int)
    s.add_argument("--alpha", type=float)
    s.add_argument("--L", type=float, default=1.0)
    s.add_argument("--metric", choices=("euclidean", "chebyshev"), default="euclidean")
    s.add_argument("--max-rounds", type=int, default=200)
    s.add_argument("--min-cell", type=int, default=10)
    s.add_argument("--max-depth", type=int, default=5)
    s.set_defaults(fn=cmd_partition)

    s = sub.add_parser("audit", parents=[common, cols], help="audit a partition")
    s.add_argument("--strict", action="store_true")
    s.set_defaults(fn=cmd_audit)

    s = sub.add_parser("expert-test", parents=[common, cols], help="per-cell expert certificate")
    s.add_argument("--alpha", type=float)
    s.add_argument("--alpha-from-audit", "--audit", dest="audit", help="audit JSON supplying alpha_hat")
    s.set_defaults(fn=cmd_expert_test)

    s = sub.add_parser("incorporate", parents=[common, cols], help="fit per-cell expert regressors")
    s.add_argument("--kind", choices=("constant", "identity", "linear", "logistic"), default="linear")
    s.set_defaults(fn=cmd_incorporate)

    s = sub.add_parser("robustness", parents=[common, cols], help="noncompliance bound under sampled policies")
    s.add_argument("--policies", default="stumps:20", help="KIND:COUNT with KIND in stumps, trees, always")
    s.set_defaults(fn=cmd_robustness)

    s = sub.add_parser("report", parents=[common, cols], help="metrics with bootstrap and permutation bands")
    s.add_argument("--score", help="'expert' (default) or a prediction column")
    s.add_argument("--threshold", type=float, default=0.5)
    s.add_argument("--n-boot", type=int, default=2000)
    s.add_argument("--n-perm", type=int, default=2000)
    s.set_defaults(fn=cmd_report)

    s = sub.add_parser("pipeline", parents=[common], help="run every stage from a JSON config")
    s.add_argument("config", help="config path or bundled:synthetic")
    s.set_defaults(fn=cmd_pipeline)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except DegeneracyError as e:
        print(f"degenerate: {e}", file=sys.stderr)
        return 3
    except IndistError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except (FileNotFoundError, IsADirectoryError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
