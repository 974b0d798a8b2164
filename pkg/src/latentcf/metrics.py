"""Validity, sparsity, proximity and feature-utilization metrics for CF sets.

All metrics work on encoded input-space rows (``x0``/``x_cf`` of each
result), never on latents.  A numerical feature counts as changed when its
encoded value moves by more than ``eps_num``; a categorical feature counts
as changed when the one-hot argmax differs.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

EPS_NUM = 1e-4

NOT_APPLICABLE = None


class EmptyResults(ValueError):
    pass


def change_mask(x0: np.ndarray, x_cf: np.ndarray, schema, eps_num: float = EPS_NUM) -> np.ndarray:
    """Per-feature changed flags, numerical features first."""
    n_num = len(schema.numerical)
    num = np.abs(np.asarray(x_cf[:n_num]) - np.asarray(x0[:n_num])) > eps_num
    cat = [np.argmax(x0[b]) != np.argmax(x_cf[b]) for b in schema.blocks()]
    return np.concatenate([num, np.array(cat, dtype=bool)])


def is_valid(results, classifier=None) -> np.ndarray:
    """Validity per result, recomputed with ``classifier`` when given."""
    if classifier is None:
        return np.array([bool(r.valid) for r in results], dtype=bool)
    out = np.zeros(len(results), dtype=bool)
    for i, r in enumerate(results):
        if r.error is None:
            out[i] = classifier.predict(np.asarray(r.x_cf)[None, :])[0] == 1
    return out


def validity(results, classifier=None) -> float:
    if len(results) == 0:
        raise EmptyResults("validity is undefined for an empty result set")
    return float(is_valid(results, classifier).sum()) / len(results)


def _valid_masks(results, schema, eps_num, classifier):
    ok = is_valid(results, classifier)
    return np.array([change_mask(r.x0, r.x_cf, schema, eps_num) for r, v in zip(results, ok) if v],
                    dtype=bool).reshape(-1, schema.n_features)


def sparsity(results, schema, kind: str, eps_num: float = EPS_NUM, classifier=None):
    """Mean fraction of changed features of ``kind`` ('cat' or 'num') over valid CFs.

    Returns ``None`` when the schema has no features of that kind and ``nan``
    when there are no valid CFs.
    """
    n_num = len(schema.numerical)
    if kind == "num":
        cols = slice(0, n_num)
        count = n_num
    elif kind == "cat":
        cols = slice(n_num, schema.n_features)
        count = len(schema.categorical)
    else:
        raise ValueError(f"kind must be 'cat' or 'num', got {kind!r}")
    if count == 0:
        return NOT_APPLICABLE
    masks = _valid_masks(results, schema, eps_num, classifier)
    if len(masks) == 0:
        return math.nan
    return float(np.mean(masks[:, cols].sum(axis=1) / count))


def proximity_num(results, preprocessor, classifier=None) -> float:
    """Mean L1 distance of standardized raw numerical values over valid CFs."""
    schema = preprocessor.schema
    n_num = len(schema.numerical)
    if n_num == 0:
        return NOT_APPLICABLE
    ok = is_valid(results, classifier)
    dists = []
    for r, v in zip(results, ok):
        if not v:
            continue
        a = preprocessor.standardize(preprocessor.to_raw_numerical(np.asarray(r.x0[:n_num])))
        b = preprocessor.standardize(preprocessor.to_raw_numerical(np.asarray(r.x_cf[:n_num])))
        dists.append(float(np.abs(a - b).sum()))
    return float(np.mean(dists)) if dists else math.nan


def feature_utilization(results, schema, eps_num: float = EPS_NUM, classifier=None) -> np.ndarray:
    """Per-feature fraction of valid CFs that change the feature (zeros if none are valid)."""
    masks = _valid_masks(results, schema, eps_num, classifier)
    if len(masks) == 0:
        return np.zeros(schema.n_features)
    return masks.mean(axis=0)


def input_l1(results, classifier=None, only_valid: bool = False) -> float:
    """Mean encoded-space L1 distance |x0 - x_cf|_1."""
    ok = is_valid(results, classifier) if only_valid else np.ones(len(results), dtype=bool)
    d = [float(np.abs(np.asarray(r.x0) - np.asarray(r.x_cf)).sum()) for r, v in zip(results, ok) if v]
    return float(np.mean(d)) if d else math.nan


@dataclass
class MetricsReport:
    method: str
    n: int
    n_val: int
    validity: float
    sparsity_cat: float | None
    sparsity_num: float | None
    proximity_num: float | None
    utilization: dict = field(default_factory=dict)
    eps_num: float = EPS_NUM
    dataset: str = ""

    def to_dict(self) -> dict:
        return {k: _clean(v) for k, v in asdict(self).items()}


def _clean(v):
    if isinstance(v, float) and math.isnan(v):
        return None
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    return v


def evaluate(results, schema, preprocessor, classifier=None, method: str | None = None,
             eps_num: float = EPS_NUM, dataset: str = "") -> MetricsReport:
    if len(results) == 0:
        raise EmptyResults("cannot evaluate an empty result set (n = 0)")
    method = method or results[0].method
    ok = is_valid(results, classifier)
    s_cat = sparsity(results, schema, "cat", eps_num, classifier)
    if method == "wachter":
        # categoricals are clamped by construction; reported as not applicable
        s_cat = NOT_APPLICABLE
    util = feature_utilization(results, schema, eps_num, classifier)
    return MetricsReport(
        method=method,
        n=len(results),
        n_val=int(ok.sum()),
        validity=float(ok.sum()) / len(results),
        sparsity_cat=s_cat,
        sparsity_num=sparsity(results, schema, "num", eps_num, classifier),
        proximity_num=proximity_num(results, preprocessor, classifier),
        utilization=dict(zip(schema.feature_names, util.tolist())),
        eps_num=eps_num,
        dataset=dataset,
    )


def average_reports(reports: list[MetricsReport], method: str | None = None) -> MetricsReport:
    """Cell-wise arithmetic mean (cells that are '-' everywhere stay '-')."""
    if not reports:
        raise EmptyResults("nothing to average")

    def avg(vals):
        vals = [v for v in vals if v is not None and not (isinstance(v, float) and math.isnan(v))]
        return float(np.mean(vals)) if vals else None

    return MetricsReport(
        method=method or reports[0].method,
        n=sum(r.n for r in reports),
        n_val=sum(r.n_val for r in reports),
        validity=avg([r.validity for r in reports]),
        sparsity_cat=avg([r.sparsity_cat for r in reports]),
        sparsity_num=avg([r.sparsity_num for r in reports]),
        proximity_num=avg([r.proximity_num for r in reports]),
        utilization={},
        eps_num=reports[0].eps_num,
        dataset="average",
    )


def _cell(v, fmt="{:.2f}") -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "-"
    return fmt.format(v)


def format_table(reports: list[MetricsReport]) -> str:
    """Aligned text table: Validity | Sparsity Cat | Sparsity Num | Proximity Num."""
    header = ["Dataset", "Method", "n", "n_val", "Validity", "Sparsity Cat", "Sparsity Num", "Proximity Num"]
    rows = [[r.dataset or "-", r.method, str(r.n), str(r.n_val), _cell(r.validity), _cell(r.sparsity_cat),
             _cell(r.sparsity_num), _cell(r.proximity_num)] for r in reports]
    widths = [max(len(h), *(len(row[i]) for row in rows)) if rows else len(h) for i, h in enumerate(header)]
    lines = [f"# eps_num = {reports[0].eps_num:g} (numerical change threshold, encoded space)" if reports else ""]
    lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
    return "\n".join(lines) + "\n"
