"""Implementations of the CLI verbs.

Every command reads a :class:`~latentcf.config.RunConfig` and writes only
under ``cfg.out``.  Layout of a run directory::

    data.csv, schema.json, synth.json       synth
    preprocessor.json, split.json           train
    classifier.ckpt, vae.ckpt               train
    training_curve.tsv, training_curve.svg  train
    train_report.json                       train
    selection_n<N>.json                     shared test selection (cached)
    results_<method>.jsonl                  generate
    metrics.{json,tsv,txt}, utilization_<dataset>.svg        evaluate
    ablation.{json,tsv,txt,svg}, ablation_results.jsonl      ablate
    bias_report.{json,tsv,txt}, bias_utilization.svg         bias-report

Result files hold one JSON object per line and nothing that varies between
identical runs (no timings, no absolute paths).
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import cf_baselines, cf_latent, metrics, plotting, synth
from .blackbox import Classifier, train_classifier
from .cf_latent import CFResult
from .checkpoint import CheckpointError
from .config import RunConfig, dump_config
from .dataset import (Preprocessor, RawTable, TableSchema, fit_preprocessor, load_csv, load_schema,
                      save_schema, select_test_instances, train_test_indices, write_csv)
from .vae import TabularVAE, categorical_accuracy, train_vae

log = logging.getLogger(__name__)

METHODS = ("tabcf", "wachter", "dice_like")


class RunError(RuntimeError):
    """A command could not complete; the message is shown to the user."""


# ---------------------------------------------------------------------------
# small file helpers

def _write_text(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


def _write_json(path: Path, obj) -> Path:
    return _write_text(path, json.dumps(obj, indent=2, allow_nan=False) + "\n")


def _tsv(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, delimiter="\t", lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(["-" if v is None or (isinstance(v, float) and math.isnan(v)) else v for v in row])
    return buf.getvalue()


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


# ---------------------------------------------------------------------------
# run state

@dataclass
class Run:
    schema: TableSchema
    table: RawTable
    pre: Preprocessor
    X: np.ndarray
    test_rows: np.ndarray
    classifier: Classifier
    dataset: str

    @property
    def schema_hash(self) -> str:
        return self.schema.digest()


def _dataset_name(cfg: RunConfig) -> str:
    return cfg.data.name or cfg.out_dir.name


def _load_table(cfg: RunConfig) -> RawTable:
    schema_path, csv_path = cfg.schema_path(), cfg.csv_path()
    for p in (schema_path, csv_path):
        if not p.exists():
            raise RunError(f"missing input file {p} (set data.csv/data.schema or run 'synth')")
    return load_csv(csv_path, load_schema(schema_path))


def _require(path: Path) -> Path:
    if not path.exists():
        raise RunError(f"missing checkpoint {path}; run 'train' with the same --out first")
    return path


def load_run(cfg: RunConfig) -> Run:
    """Reload the dataset, preprocessor, split and classifier written by ``train``."""
    run_dir = cfg.out_dir
    pre_path = _require(run_dir / "preprocessor.json")
    split_path = _require(run_dir / "split.json")
    pre_doc = json.loads(pre_path.read_text())
    schema = TableSchema.from_dict(pre_doc["schema"])
    pre = Preprocessor.from_dict(schema, pre_doc["preprocessor"])
    split = json.loads(split_path.read_text())
    try:
        clf = Classifier.load(_require(run_dir / "classifier.ckpt"), schema.digest())
    except CheckpointError as exc:
        raise RunError(str(exc)) from exc
    table = _load_table(cfg)
    if table.schema.digest() != schema.digest():
        raise RunError("schema hash of the data differs from the trained run; retrain")
    return Run(schema, table, pre, pre.encode(table), np.asarray(split["test"], dtype=np.int64), clf,
               split.get("dataset", _dataset_name(cfg)))


def load_vae(cfg: RunConfig, schema_hash: str) -> TabularVAE:
    try:
        return TabularVAE.load(_require(cfg.out_dir / "vae.ckpt"), schema_hash)
    except CheckpointError as exc:
        raise RunError(str(exc)) from exc


def load_evaluation_context(run_dir: Path):
    """Preprocessor and classifier of an arbitrary run directory (for ``evaluate``)."""
    pre_doc = json.loads(_require(run_dir / "preprocessor.json").read_text())
    schema = TableSchema.from_dict(pre_doc["schema"])
    pre = Preprocessor.from_dict(schema, pre_doc["preprocessor"])
    try:
        clf = Classifier.load(_require(run_dir / "classifier.ckpt"), schema.digest())
    except CheckpointError as exc:
        raise RunError(str(exc)) from exc
    return pre, clf


# ---------------------------------------------------------------------------
# synth / train

def cmd_synth(cfg: RunConfig) -> dict:
    spec = cfg.synth_spec()
    table = synth.generate(spec)
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    write_csv(table, out / "data.csv")
    save_schema(table.schema, out / "schema.json")
    _write_json(out / "synth.json", spec.to_dict())
    return {"rows": len(table), "csv": str(out / "data.csv"), "schema": str(out / "schema.json")}


def cmd_train(cfg: RunConfig, progress_every: int = 50) -> dict:
    cfg.validate()
    out = cfg.out_dir
    table = _load_table(cfg)
    schema = table.schema
    train_idx, test_idx = train_test_indices(len(table), cfg.data.test_fraction, cfg.seed, cfg.data.train_cap)
    pre = fit_preprocessor(RawTable(schema, [table.rows[i] for i in train_idx]))
    X, y = pre.encode(table), table.labels()
    out.mkdir(parents=True, exist_ok=True)
    _write_text(out / "config.json", dump_config(cfg))
    _write_json(out / "preprocessor.json", {"schema": schema.to_dict(), "preprocessor": pre.to_dict()})
    _write_json(out / "split.json", {"dataset": _dataset_name(cfg), "seed": cfg.seed,
                                     "train": train_idx.tolist(), "test": test_idx.tolist()})

    t0 = time.perf_counter()
    clf, acc = train_classifier(X[train_idx], y[train_idx], cfg.classifier_config(), X[test_idx], y[test_idx])
    clf.save(out / "classifier.ckpt", schema.digest())
    log.info("classifier: held-out accuracy %.4f (%.1fs)", acc, time.perf_counter() - t0)

    vcfg = cfg.vae_config()

    def progress(epoch, loss, recon, kl):
        if progress_every and (epoch % progress_every == 0 or epoch == vcfg.epochs - 1):
            log.info("vae epoch %d/%d loss %.5f recon %.5f kl %.3f", epoch, vcfg.epochs, loss, recon, kl)

    t0 = time.perf_counter()
    vae, curve = train_vae(X[train_idx], vcfg, len(schema.numerical), schema.category_sizes, progress)
    vae.save(out / "vae.ckpt", schema.digest())
    log.info("vae: %d epochs in %.1fs", vcfg.epochs, time.perf_counter() - t0)

    c = curve.to_dict()
    _write_text(out / "training_curve.tsv",
                _tsv(["epoch", "beta", "loss", "recon", "kl"],
                     [[e, repr(b), repr(lo), repr(r), repr(k)] for e, b, lo, r, k in
                      zip(c["epoch"], c["beta"], c["loss"], c["recon"], c["kl"])]))
    plotting.training_curve(c, out / "training_curve.svg")

    rng = np.random.default_rng(cfg.seed)
    Xt = X[test_idx]
    cat_acc = categorical_accuracy(vae, Xt, rng) if schema.categorical else np.zeros(0)
    n_num = len(schema.numerical)
    rec = vae.reconstruct(Xt, rng=rng)
    num_mae = float(np.abs(rec[:, :n_num] - Xt[:, :n_num]).mean()) if n_num else None
    report = {
        "dataset": _dataset_name(cfg),
        "schema_hash": schema.digest(),
        "n_train": int(len(train_idx)),
        "n_test": int(len(test_idx)),
        "classifier_accuracy": acc,
        "classifier_checksum": clf.checksum(),
        "vae_categorical_accuracy": dict(zip([c.name for c in schema.categorical], cat_acc.tolist())),
        "vae_numerical_mae": num_mae,
        "final_loss": c["loss"][-1],
    }
    _write_json(out / "train_report.json", _jsonable(report))
    return report


# ---------------------------------------------------------------------------
# shared test selection

def shared_selection(cfg: RunConfig, run: Run, n: int) -> np.ndarray:
    """Rows (indices into the full table) of the test instances for ``n``.

    Cached per (dataset, seed, n) under the output directory so every method
    sees the same instances.
    """
    path = cfg.out_dir / f"selection_n{n}.json"
    key = {"seed": cfg.seed, "n": n, "schema_hash": run.schema_hash, "classifier": run.classifier.checksum(),
           "test_rows": _digest(run.test_rows)}
    if path.exists():
        doc = json.loads(path.read_text())
        if doc.get("key") == key:
            return np.asarray(doc["rows"], dtype=np.int64)
        log.info("selection cache %s is stale; recomputing", path)
    pred = run.classifier.predict(run.X[run.test_rows])
    sel = select_test_instances(pred, n, cfg.seed)
    rows = run.test_rows[sel.indices]
    _write_json(path, {"key": key, "rows": rows.tolist(), "shortage": sel.shortage})
    return rows


def _digest(a: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(a, dtype=np.int64).tobytes()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# generate

def result_record(r: CFResult, row: int, run: Run, extra: dict | None = None) -> dict:
    rec = {
        "instance_id": int(r.instance_id),
        "row": int(row),
        "method": r.method,
        "dataset": run.dataset,
        "schema_hash": run.schema_hash,
        "valid": bool(r.valid),
        "steps": int(r.steps),
        "error": r.error,
        "losses": r.losses,
        "summary": r.summary,
        "original": run.pre.decode_row(np.asarray(r.x0)),
        "counterfactual": run.pre.decode_row(np.asarray(r.x_cf)),
        "x0": np.asarray(r.x0).tolist(),
        "x_cf": np.asarray(r.x_cf).tolist(),
    }
    if extra:
        rec.update(extra)
    return _jsonable(rec)


def write_results(path: Path, records: list[dict]) -> Path:
    lines = [json.dumps(rec, allow_nan=False) for rec in records]
    return _write_text(path, "".join(line + "\n" for line in lines))


def read_results(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise RunError(f"result file {path} does not exist")
    out = []
    for k, line in enumerate(path.read_text().splitlines()):
        if not line.strip():
            continue
        try:
            out.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise RunError(f"{path}:{k + 1}: malformed record ({exc})") from exc
    return out


def to_result(rec: dict) -> CFResult:
    return CFResult(rec["instance_id"], rec["method"], np.asarray(rec["x0"], dtype=np.float64),
                    np.asarray(rec["x_cf"], dtype=np.float64), rec["valid"], rec["steps"],
                    rec.get("losses") or {}, rec.get("summary") or {}, rec.get("error"))


def run_method(cfg: RunConfig, run: Run, method: str, rows: np.ndarray) -> list[CFResult]:
    X0 = run.X[rows]
    ids = [int(r) for r in rows]
    chunk = cfg.evaluate.chunk_size
    if method == "tabcf":
        vae = load_vae(cfg, run.schema_hash)
        return cf_latent.batch_generate(X0, vae, run.classifier, cfg.cf_config(), ids, chunk)
    if method in cf_baselines.METHODS:
        return cf_baselines.batch_generate(X0, run.classifier, run.schema, cfg.baseline_config(method), ids, chunk)
    raise RunError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")


def cmd_generate(cfg: RunConfig, method: str) -> dict:
    cfg.validate()
    if method not in METHODS:
        raise RunError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    run = load_run(cfg)
    rows = shared_selection(cfg, run, cfg.evaluate.n_test)
    path = cfg.out_dir / f"results_{method}.jsonl"
    if len(rows) == 0:
        write_results(path, [])
        raise RunError(f"no eligible test instances (n=0) for {method}; wrote empty {path}")
    t0 = time.perf_counter()
    results = run_method(cfg, run, method, rows)
    log.info("%s: %d searches in %.1fs", method, len(results), time.perf_counter() - t0)
    write_results(path, [result_record(r, row, run) for r, row in zip(results, rows)])
    n_val = int(metrics.is_valid(results, run.classifier).sum())
    return {"method": method, "n": len(results), "n_val": n_val, "validity": n_val / len(results),
            "results": str(path)}


# ---------------------------------------------------------------------------
# evaluate

REPORT_HEADER = ["dataset", "method", "n", "n_val", "validity", "sparsity_cat", "sparsity_num", "proximity_num"]


def _report_row(r: metrics.MetricsReport) -> list:
    return [r.dataset, r.method, r.n, r.n_val, r.validity, r.sparsity_cat, r.sparsity_num, r.proximity_num]


def evaluate_file(path, eps_num: float) -> tuple[metrics.MetricsReport, TableSchema]:
    path = Path(path)
    records = read_results(path)
    if not records:
        raise RunError(f"{path}: empty result file (n=0)")
    pre, clf = load_evaluation_context(path.parent)
    want = pre.schema.digest()
    for rec in records:
        if rec.get("schema_hash") != want:
            raise RunError(f"{path}: schema hash {rec.get('schema_hash')} does not match dataset {want}")
    methods = {rec["method"] for rec in records}
    if len(methods) != 1:
        raise RunError(f"{path}: mixes methods {sorted(methods)}")
    results = [to_result(rec) for rec in records]
    dataset = records[0].get("dataset") or path.parent.name
    return metrics.evaluate(results, pre.schema, pre, clf, eps_num=eps_num, dataset=dataset), pre.schema


def cmd_evaluate(cfg: RunConfig, files: list, average: bool = False) -> list[metrics.MetricsReport]:
    if not files:
        raise RunError("evaluate needs at least one result file")
    reports, schemas = [], {}
    for f in files:
        rep, schema = evaluate_file(f, cfg.evaluate.eps_num)
        reports.append(rep)
        schemas[rep.dataset] = schema
    rows = list(reports)
    if average:
        by_method: dict[str, list] = {}
        for r in reports:
            by_method.setdefault(r.method, []).append(r)
        rows += [metrics.average_reports(rs, m) for m, rs in by_method.items()]
    out = cfg.out_dir
    _write_json(out / "metrics.json", {"eps_num": cfg.evaluate.eps_num, "reports": [r.to_dict() for r in rows]})
    _write_text(out / "metrics.tsv", _tsv(REPORT_HEADER, [_report_row(r) for r in rows]))
    _write_text(out / "metrics.txt", metrics.format_table(rows))
    for dataset, schema in schemas.items():
        util = {r.method: r.utilization for r in reports if r.dataset == dataset}
        kinds = {c.name: c.kind for c in schema.features}
        plotting.utilization_bars(util, kinds, out / f"utilization_{dataset}.svg")
    return rows


# ---------------------------------------------------------------------------
# ablation

def cmd_ablate(cfg: RunConfig) -> dict:
    cfg.validate()
    run = load_run(cfg)
    vae = load_vae(cfg, run.schema_hash)
    rows = shared_selection(cfg, run, cfg.ablation.n_test)
    if len(rows) == 0:
        raise RunError("no eligible test instances (n=0) for the ablation")
    values = [float(v) for v in cfg.ablation.values]
    grid = [(a, b) for a in values for b in values]
    t0 = time.perf_counter()
    out_grid = cf_latent.generate_grid(run.X[rows], vae, run.classifier, cfg.cf_config(), grid,
                                       [int(r) for r in rows])
    log.info("ablation: %d cells x %d instances in %.1fs", len(grid), len(rows), time.perf_counter() - t0)
    cells, records = [], []
    for (li, ll), results in out_grid.items():
        rep = metrics.evaluate(results, run.schema, run.pre, run.classifier, "tabcf",
                               cfg.evaluate.eps_num, run.dataset)
        cells.append({
            "lambda_input": li, "lambda_latent": ll,
            "n": rep.n, "n_val": rep.n_val, "validity": rep.validity,
            "sparsity_cat": rep.sparsity_cat, "sparsity_num": rep.sparsity_num,
            "proximity_num": rep.proximity_num,
            "input_l1": metrics.input_l1(results),
            "input_l1_valid": metrics.input_l1(results, run.classifier, only_valid=True),
        })
        records += [result_record(r, row, run, {"lambda_input": li, "lambda_latent": ll})
                    for r, row in zip(results, rows)]
    out = cfg.out_dir
    write_results(out / "ablation_results.jsonl", records)
    cells = _jsonable(cells)
    _write_json(out / "ablation.json", {"values": values, "eps_num": cfg.evaluate.eps_num, "cells": cells})
    keys = list(cells[0])
    _write_text(out / "ablation.tsv", _tsv(keys, [[c[k] for k in keys] for c in cells]))
    panels = {}
    for name in ("validity", "input_l1", "proximity_num", "sparsity_num", "sparsity_cat"):
        g = np.full((len(values), len(values)), np.nan)
        for c in cells:
            v = c[name]
            g[values.index(c["lambda_input"]), values.index(c["lambda_latent"])] = np.nan if v is None else v
        panels[name] = g
    _write_text(out / "ablation.txt", format_heat_tables(panels, values))
    plotting.heat_tables(panels, values, values, out / "ablation.svg")
    return {"cells": cells, "values": values}


def format_heat_tables(panels: dict, values: list[float]) -> str:
    """Text heat tables: rows lambda_input, columns lambda_latent."""
    lines = []
    for name, g in panels.items():
        lines.append(f"{name} (rows: lambda_input, columns: lambda_latent)")
        lines.append("        " + "".join(f"{v:>8g}" for v in values))
        for i, v in enumerate(values):
            cells = "".join(f"{'-':>8}" if not np.isfinite(x) else f"{x:>8.3f}" for x in g[i])
            lines.append(f"{v:>8g}" + cells)
        lines.append("")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# bias report

def cmd_bias_report(cfg: RunConfig, files: list | None = None) -> dict:
    if not files:
        files = [cfg.out_dir / f"results_{m}.jsonl" for m in METHODS
                 if (cfg.out_dir / f"results_{m}.jsonl").exists()]
    per_method: dict[str, metrics.MetricsReport] = {}
    schema = None
    for f in files:
        rep, sch = evaluate_file(f, cfg.evaluate.eps_num)
        if schema is not None and sch.digest() != schema.digest():
            raise RunError("bias-report needs result files from one dataset")
        schema = sch
        per_method[rep.method] = rep
    if "tabcf" not in per_method or len(per_method) < 2:
        raise RunError("bias-report needs a tabcf result file and at least one baseline result file")
    num_names = [c.name for c in schema.numerical]
    cat_names = [c.name for c in schema.categorical]

    def mean_of(util, names):
        return float(np.mean([util[n] for n in names])) if names else None

    summary = {}
    for m, rep in per_method.items():
        summary[m] = {
            "n": rep.n, "n_val": rep.n_val, "validity": rep.validity,
            "numerical_utilization": mean_of(rep.utilization, num_names),
            "categorical_utilization": mean_of(rep.utilization, cat_names),
            "utilization": rep.utilization,
        }
    out = cfg.out_dir
    doc = {"eps_num": cfg.evaluate.eps_num, "features": schema.feature_names, "methods": summary}
    _write_json(out / "bias_report.json", _jsonable(doc))
    header = ["method", "n", "n_val", "validity", "num_util_mean", "cat_util_mean"] + schema.feature_names
    rows = [[m, s["n"], s["n_val"], s["validity"], s["numerical_utilization"], s["categorical_utilization"]]
            + [s["utilization"][f] for f in schema.feature_names] for m, s in summary.items()]
    _write_text(out / "bias_report.tsv", _tsv(header, rows))
    _write_text(out / "bias_report.txt", format_bias(summary, schema))
    plotting.utilization_bars({m: s["utilization"] for m, s in summary.items()},
                              {c.name: c.kind for c in schema.features}, out / "bias_utilization.svg")
    return doc


def format_bias(summary: dict, schema: TableSchema) -> str:
    names = schema.feature_names
    width = max(9, *(len(n) for n in names))

    def cell(v):
        return f"{'-':>{width}}" if v is None else f"{v:>{width}.2f}"

    lines = [f"{'method':<10}{'n_val':>7}" + "".join(f"{n:>{width + 1}}" for n in names)
             + f"{'num_mean':>{width + 1}}{'cat_mean':>{width + 1}}"]
    for m, s in summary.items():
        lines.append(f"{m:<10}{s['n_val']:>7}" + "".join(" " + cell(s["utilization"][n]) for n in names)
                     + " " + cell(s["numerical_utilization"]) + " " + cell(s["categorical_utilization"]))
    return "\n".join(lines) + "\n"
