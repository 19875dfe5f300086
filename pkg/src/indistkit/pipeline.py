"""End-to-end run: partition, audit, expert test, incorporation, robustness, metrics.

Every file in the output bundle is a pure function of the inputs, the
configuration and its seeds. Thread count only changes wall time.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import __version__
from .boost import BoostConfig, boost, level_set_partition
from .data import ColumnSchema, Dataset, Partition, PredictionMatrix, load_dataset, load_predictions, read_header, split_indices
from .errors import BadSpec, IndistError
from .expertise import assign_cells, expert_test, fit_subset_regressors, incorporation_gap
from .indist import audit_partition
from .metrics import bootstrap_ci, confusion_rates, mcc, permutation_baseline
from .partition import ClusterSpec, LipschitzSpec, certify_partition, cluster_finite_class, epsilon_net_partition
from .report import dumps, render_table
from .robustness import audit_product_class, evaluate_policies, gen_policy_class
from .synth import generate, spec_from_dict

BUNDLED = {"synthetic": "synthetic.json"}
SECTIONS = ("audit", "expert_test", "incorporation", "robustness", "metrics")


def load_config(source: Union[str, Path, dict]) -> tuple[dict, Path]:
    """Parse a config file, or ``bundled:<name>`` for a packaged one."""
    if isinstance(source, dict):
        return dict(source), Path.cwd()
    s = str(source)
    if s.startswith("bundled:"):
        name = s.split(":", 1)[1]
        if name not in BUNDLED:
            raise BadSpec(f"no bundled config {name!r}; available: {sorted(BUNDLED)}")
        text = resources.files("indistkit").joinpath("configs", BUNDLED[name]).read_text(encoding="utf-8")
        return json.loads(text), Path.cwd()
    path = Path(s)
    try:
        cfg = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise BadSpec(f"config {s!r} not found") from None
    except json.JSONDecodeError as e:
        raise BadSpec(f"config {s!r} is not valid JSON: {e}") from None
    return cfg, path.parent


class _Stage:
    """Tags module errors with the stage that raised them."""

    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if isinstance(exc, IndistError) and not getattr(exc, "stage", None):
            exc.stage = self.name
            exc.args = (f"[{self.name}] {exc.args[0] if exc.args else exc}",) + tuple(exc.args[1:])
        return False


def _load_data(cfg: dict, base: Path, seed: int):
    d = cfg.get("data")
    if not isinstance(d, dict):
        raise BadSpec("config needs a 'data' object")
    if "synth" in d:
        res = generate(spec_from_dict(d["synth"], seed))
        ds, preds = res.dataset, res.preds
        if d.get("drop_expert"):
            ds = ds.without_expert()
        return ds, preds
    path = base / d["path"]
    header = read_header(path)
    outcome = d.get("outcome", "y")
    expert = d.get("expert", "yhat")
    row_id = d.get("row_id", "row_id" if "row_id" in header else None)
    if expert not in header:
        expert = None
    feats = d.get("features") or [h for h in header if h not in (outcome, expert, row_id)]
    ds = load_dataset(path, ColumnSchema(tuple(feats), outcome, expert, (), row_id))
    if "preds" not in d:
        raise BadSpec("data.preds is required")
    preds = load_predictions(base / d["preds"], ds, d.get("pred_columns"))
    return ds, preds


def _build_partition(pcfg: dict, train: Dataset, preds: PredictionMatrix, seed: int):
    method = pcfg.get("method", "cluster")
    if method == "cluster":
        spec = ClusterSpec(k=pcfg.get("k"), diameter=pcfg.get("diameter"), seed=pcfg.get("seed"))
        part = cluster_finite_class(preds, spec)
        return part, None, {"method": method, "k": part.K, "linkage": spec.linkage,
                            "certified_alpha": certify_partition(preds, part)}
    if method == "boost":
        bc = BoostConfig(alpha=pcfg.get("alpha", 0.05), max_rounds=pcfg.get("max_rounds", 200),
                         min_cell=pcfg.get("min_cell", 10), seed=seed, max_depth=pcfg.get("max_depth", 5))
        predictor = boost(train, bc)
        part = level_set_partition(predictor, train)
        return part, predictor, {"method": method, "k": part.K, "rounds": predictor.rounds,
                                 "converged": predictor.converged, "bins": list(part.labels)}
    if method == "net":
        spec = LipschitzSpec.from_alpha(pcfg["alpha"], pcfg.get("L", 1.0), pcfg.get("metric", "euclidean"))
        part = epsilon_net_partition(train.features, spec)
        return part, None, {"method": method, "k": part.K, "radius": spec.radius,
                            "certified_alpha": spec.certified_alpha}
    raise BadSpec(f"unknown partition method {method!r}")


def _binary(v: np.ndarray) -> bool:
    return bool(np.isin(v, (0.0, 1.0)).all())


def _cells_of(part: Partition, predictor, train_preds, eval_preds, eval_ds, metric) -> tuple[np.ndarray, np.ndarray]:
    return assign_cells(part, train_preds=train_preds, test_preds=eval_preds,
                        test_features=eval_ds.features, predictor=predictor, metric=metric)


def _mse(a, b) -> float:
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return math.fsum(d * d) / d.size if d.size else math.nan


@dataclass(frozen=True)
class PipelineResult:
    out_dir: Path
    files: tuple[str, ...]
    sections: dict
    summary: str


def run_pipeline(config: Union[str, Path, dict], out_dir, threads: Optional[int] = None) -> PipelineResult:
    """Run every stage and write the bundle to ``out_dir``.

    Files: ``audit.json``, ``expert_test.json``, ``incorporation.json``,
    ``robustness.json``, ``metrics.json``, ``summary.txt`` and
    ``manifest.json`` (SHA-256 of the others). Expert stages are marked
    ``skipped`` when the data has no expert column.
    """
    cfg, base = load_config(config)
    seed = int(cfg.get("seed", 0))
    workers = int(threads if threads is not None else cfg.get("threads", 1))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    with _Stage("data"):
        ds, preds = _load_data(cfg, base, seed)
        if cfg.get("split"):
            tr, ev = split_indices(ds.n, cfg["split"], seed)
            train, evals = ds.take(tr), ds.take(ev)
            ptrain, peval = preds.take(tr), preds.take(ev)
        else:
            train, evals, ptrain, peval = ds, ds, preds, preds
    pcfg = cfg.get("partition", {"method": "cluster", "k": 3})
    with _Stage("partition"):
        part, predictor, pinfo = _build_partition(pcfg, train, ptrain, seed)
        eval_cells, flagged = _cells_of(part, predictor, ptrain, peval, evals, pcfg.get("metric", "euclidean"))
    sections: dict = {}

    with _Stage("audit"):
        audit = audit_partition(train, ptrain, part)
        sections["audit"] = {"status": "ok", "partition": pinfo, "n_train": train.n, "n_eval": evals.n,
                             "eval_rows_placed_by_fallback": int(flagged.sum()), **audit.to_dict()}
    alpha = audit.alpha_hat
    has_expert = train.has_expert

    with _Stage("expert_test"):
        if has_expert:
            sections["expert_test"] = {"status": "ok", **expert_test(train, part, alpha).to_dict()}
        else:
            sections["expert_test"] = {"status": "skipped", "reason": "no expert column"}

    icfg = cfg.get("incorporate", {})
    kind = icfg.get("kind", "linear")
    canon_train = np.array([math.fsum(train.outcome[part.mask(k)]) / max(1, part.cell_sizes[k])
                            for k in range(part.K)])
    incorporated = None
    with _Stage("incorporation"):
        if has_expert:
            regs = fit_subset_regressors(train, part, kind, workers, strict=False)
            gaps = incorporation_gap(train, ptrain, part, regs, alpha)
            incorporated = np.empty(evals.n)
            for k in np.unique(eval_cells):
                sel = eval_cells == k
                incorporated[sel] = regs[int(k)].predict(evals.expert[sel])
            incorporated = np.clip(incorporated, 0.0, 1.0)
            sections["incorporation"] = {
                "status": "ok", "kind": kind, "alpha": alpha,
                "regressors": [r.to_dict() for r in regs],
                "in_sample_bound": [g.to_dict() for g in gaps],
                "in_sample_bound_holds": all(g.holds for g in gaps),
            }
        else:
            sections["incorporation"] = {"status": "skipped", "reason": "no expert column"}
        canon_eval = canon_train[eval_cells]
        mse = {"canonical": _mse(canon_eval, evals.outcome)}
        if has_expert:
            mse["expert_raw"] = _mse(evals.expert, evals.outcome)
            mse["incorporated"] = _mse(incorporated, evals.outcome)
        for j, name in enumerate(peval.model_names):
            mse[name] = _mse(peval.preds[:, j], evals.outcome)
        sections["incorporation"]["eval_mse"] = mse

    rcfg = cfg.get("robustness", {})
    with _Stage("robustness"):
        policies = gen_policy_class(rcfg.get("policies", "stump"), train.features, int(rcfg.get("count", 20)), seed)
        pa = audit_product_class(train, ptrain, policies, part, strict=False)
        rep = evaluate_policies(train, ptrain, part, policies, pa.alpha, workers)
        sections["robustness"] = {"status": "ok", **pa.to_dict(), **rep.to_dict()}

    mcfg = cfg.get("metrics", {})
    with _Stage("metrics"):
        sections["metrics"] = _metrics(evals, peval, eval_cells, part.K, canon_eval, incorporated, mcfg, seed, workers)

    files = []
    for name in SECTIONS:
        (out / f"{name}.json").write_text(dumps(sections[name]), encoding="utf-8")
        files.append(f"{name}.json")
    summary = _summary(sections)
    (out / "summary.txt").write_text(summary, encoding="utf-8")
    files.append("summary.txt")
    manifest = {
        "version": __version__,
        "seed": seed,
        "config": cfg,
        "files": {f: hashlib.sha256((out / f).read_bytes()).hexdigest() for f in files},
    }
    (out / "manifest.json").write_text(dumps(manifest), encoding="utf-8")
    files.append("manifest.json")
    return PipelineResult(out, tuple(files), sections, summary)


def _metrics(evals: Dataset, peval: PredictionMatrix, cells: np.ndarray, K: int, canon: np.ndarray,
             incorporated, mcfg: dict, seed: int, workers: int) -> dict:
    n_boot = int(mcfg.get("n_boot", 2000))
    n_perm = int(mcfg.get("n_perm", 2000))
    thr = float(mcfg.get("threshold", 0.5))
    y = evals.outcome
    scores = {"canonical": canon}
    if evals.has_expert:
        scores["expert"] = evals.expert
    if incorporated is not None:
        scores["incorporated"] = incorporated
    for j, name in enumerate(peval.model_names):
        scores[name] = peval.preds[:, j]
    out: dict = {"status": "ok", "threshold": thr, "n_eval": evals.n, "n_boot": n_boot, "n_perm": n_perm}
    binary = _binary(y)
    overall = []
    for i, (name, s) in enumerate(scores.items()):
        row = {"predictor": name,
               "mse": bootstrap_ci("mse", s, y, n_boot=n_boot, seed=seed + i, workers=workers).to_dict()}
        if binary:
            b = (s >= thr).astype(np.float64)
            m = mcc(b, y)
            row["mcc"] = bootstrap_ci("mcc", b, y, n_boot=n_boot, seed=seed + i, workers=workers).to_dict()
            row["mcc_degenerate"] = m.degenerate
            row["rates"] = confusion_rates(b, y).to_dict()
            row["mcc_permutation"] = permutation_baseline(b, y, n_perm, seed + i, workers=workers).to_dict()
        overall.append(row)
    out["overall"] = overall
    per_cell = []
    focus = [k for k in ("expert", "incorporated") if k in scores]
    for k in range(K):
        sel = cells == k
        nk = int(sel.sum())
        entry = {"cell": k, "n": nk}
        if nk >= 2:
            entry["base_rate"] = float(y[sel].mean())
            entry["mse"] = {name: _mse(s[sel], y[sel]) for name, s in scores.items()}
            if binary:
                for name in focus:
                    b = (scores[name][sel] >= thr).astype(np.float64)
                    m = mcc(b, y[sel])
                    entry[f"{name}_mcc"] = {"value": m.value, "degenerate": m.degenerate,
                                            **confusion_rates(b, y[sel]).to_dict()}
                    entry[f"{name}_mcc_permutation"] = permutation_baseline(
                        b, y[sel], n_perm, seed + 1000 + k, workers=workers).to_dict()
        per_cell.append(entry)
    out["per_cell"] = per_cell
    return out


def _summary(sections: dict) -> str:
    a = sections["audit"]
    parts = [f"partition: {a['partition']['method']} with {a['partition']['k']} cells; "
             f"audited alpha = {a['alpha_hat']:.6g}\n"]
    rows = [{"cell": c["k"], "n": c["n"], "max|cov|": c["max_abs_cov"], "degenerate": c["degenerate"]}
            for c in a["cells"]]
    parts.append(render_table(rows, ["cell", "n", "max|cov|", "degenerate"], "audit"))
    et = sections["expert_test"]
    if et["status"] == "ok":
        rows = [{"cell": c["cell"], "n": c["n"], "cov": c["cov"], "threshold": c["threshold"],
                 "informative": c["informative"]} for c in et["cells"]]
        parts.append(render_table(rows, ["cell", "n", "cov", "threshold", "informative"],
                                  f"expert test ({et['scope']})"))
    else:
        parts.append("expert test: skipped\n")
    inc = sections["incorporation"]
    rows = [{"predictor": k, "mse": v} for k, v in inc["eval_mse"].items()]
    parts.append(render_table(rows, ["predictor", "mse"], f"incorporation ({inc['status']})"))
    r = sections["robustness"]
    parts.append(f"robustness: alpha = {r['alpha']:.6g}, {r['n_rows']} rows, "
                 f"{r['n_violations']} violations, {r['n_vacuous']} vacuous\n")
    m = sections["metrics"]
    rows = []
    for row in m["overall"]:
        e = {"predictor": row["predictor"], "mse": row["mse"]["point"]}
        if "mcc" in row:
            e.update(mcc=row["mcc"]["point"], ci_low=row["mcc"]["ci_low"], ci_high=row["mcc"]["ci_high"],
                     tpr=row["rates"]["tpr"], tnr=row["rates"]["tnr"], null_mcc=row["mcc_permutation"]["point"])
        rows.append(e)
    parts.append(render_table(rows, ["predictor", "mse", "mcc", "ci_low", "ci_high", "tpr", "tnr", "null_mcc"],
                              "overall metrics"))
    rows = []
    for c in m["per_cell"]:
        e = {"cell": c["cell"], "n": c["n"], "base_rate": c.get("base_rate")}
        for name in ("expert", "incorporated"):
            if f"{name}_mcc" in c:
                e[f"{name}_mcc"] = c[f"{name}_mcc"]["value"]
                e[f"{name}_null_hi"] = c[f"{name}_mcc_permutation"]["ci_high"]
        rows.append(e)
    parts.append(render_table(rows, ["cell", "n", "base_rate", "expert_mcc", "expert_null_hi",
                                     "incorporated_mcc", "incorporated_null_hi"], "per-cell metrics"))
    return "\n".join(parts)
