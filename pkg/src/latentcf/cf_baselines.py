"""Input-space gradient baselines used for the feature-type bias comparison.

``wachter`` optimizes the numerical block only and keeps every categorical
feature clamped to its original value.  ``dice_like`` optimizes the whole
encoded vector, adds the one-hot regularizer ``| sum(block) - 1 |`` per
categorical block and snaps every block back to an exact one-hot (argmax)
after each step.  Neither implements DiCE's diversity term.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .cf_latent import CFResult, _converged, hinge_yloss
from .tokenizer import one_hot_argmax

METHODS = ("wachter", "dice_like")


@dataclass
class BaselineConfig:
    method: str = "wachter"
    distance_weight: float = 1.0
    reg_weight: float = 1.0
    max_steps: int = 5000
    learning_rate: float = 0.05
    tolerance: float = 1e-5
    window: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown baseline method {self.method!r}")
        if self.distance_weight < 0 or self.reg_weight < 0:
            raise ValueError("weights must be >= 0")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


def discretize_onehot(block: np.ndarray) -> np.ndarray:
    """Exact one-hot at the argmax; ties resolve to the lowest index."""
    block = np.asarray(block, dtype=np.float64)
    if block.shape[-1] == 0:
        raise ValueError("empty categorical block")
    return one_hot_argmax(block)


def onehot_regularizer(block) -> ad.Tensor:
    """| sum(block) - 1 | per row (the 2-norm of a scalar)."""
    block = ad.as_tensor(block)
    return ad.abs_(ad.sum_(block, axis=-1) - 1.0)


def project(X: np.ndarray, n_num: int, blocks) -> np.ndarray:
    """Clip numericals to [0, 1] and snap every categorical block to one-hot."""
    X = X.copy()
    X[:, :n_num] = np.clip(X[:, :n_num], 0.0, 1.0)
    for blk in blocks:
        X[:, blk] = discretize_onehot(X[:, blk])
    return X


def baseline_loss(X, X0: np.ndarray, classifier, cfg: BaselineConfig, blocks):
    x = ad.as_tensor(X)
    logit = classifier.logit(x)
    hinge = hinge_yloss(logit)
    dist = ad.sum_(ad.abs_(x - X0), axis=-1)
    per = hinge + dist * cfg.distance_weight
    reg_total = np.zeros(len(X0))
    if cfg.method == "dice_like" and blocks:
        regs = [onehot_regularizer(x[:, blk]) for blk in blocks]
        reg = regs[0]
        for r in regs[1:]:
            reg = reg + r
        reg_total = reg.values.copy()
        per = per + reg * cfg.reg_weight
    parts = {
        "validity": hinge.values.copy(),
        "input_proximity": dist.values.copy(),
        "regularization": reg_total,
        "total": per.values.copy(),
    }
    return ad.sum_(per), parts, logit


def generate_batch(X0: np.ndarray, classifier, schema, cfg: BaselineConfig, instance_ids=None) -> list[CFResult]:
    X0 = np.atleast_2d(np.asarray(X0, dtype=np.float64))
    n = len(X0)
    if n == 0:
        return []
    ids = list(range(n)) if instance_ids is None else [int(i) for i in instance_ids]
    n_num = len(schema.numerical)
    blocks = schema.blocks()
    start_logit = classifier.predict_logit(X0)
    results: list[CFResult | None] = [None] * n
    todo = []
    for i in range(n):
        if start_logit[i] >= 0:
            results[i] = CFResult(ids[i], cfg.method, X0[i].copy(), X0[i].copy(), False, 0,
                                  error="already target class")
        else:
            todo.append(i)
    if not todo:
        return results
    rows = np.array(todo)
    X = X0[rows].copy()
    Xorig = X0[rows]
    mask = np.zeros(X.shape[1])
    if cfg.method == "wachter":
        mask[:n_num] = 1.0
    else:
        mask[:] = 1.0
    history = [[] for _ in rows]
    done = np.zeros(len(rows), dtype=bool)
    final = {}
    for step in range(cfg.max_steps):
        act = np.flatnonzero(~done)
        if len(act) == 0:
            break
        xt = ad.Tensor(X[act], requires_grad=True)
        total, parts, logit = baseline_loss(xt, Xorig[act], classifier, cfg, blocks)
        valid_now = logit.values >= 0
        stop_local = []
        for j, a in enumerate(act):
            history[a].append(float(parts["total"][j]))
            if valid_now[j] and _converged(history[a], cfg):
                stop_local.append(j)
                final[a] = (X[a].copy(), step, {k: float(v[j]) for k, v in parts.items()}, float(logit.values[j]))
        ad.backward(total)
        keep = np.ones(len(act), dtype=bool)
        keep[stop_local] = False
        upd = act[keep]
        stepped = X[upd] - cfg.learning_rate * xt.grad[keep] * mask
        X[upd] = project(stepped, n_num, blocks)
        done[act[~keep]] = True

    rest = np.flatnonzero(~done)
    if len(rest):
        _, parts, logit = baseline_loss(ad.Tensor(X[rest]), Xorig[rest], classifier, cfg, blocks)
        for j, a in enumerate(rest):
            final[a] = (X[a].copy(), cfg.max_steps, {k: float(v[j]) for k, v in parts.items()}, float(logit.values[j]))

    for a, i in enumerate(rows):
        x_cf, steps, losses, lg = final[a]
        valid = bool(classifier.predict(x_cf[None, :])[0] == 1)
        summary = {"initial_logit": float(start_logit[i]), "final_logit": lg, "converged": steps < cfg.max_steps}
        results[i] = CFResult(ids[i], cfg.method, X0[i].copy(), x_cf, valid, int(steps), losses, summary)
    return results


def wachter_generate(x0, classifier, schema, cfg: BaselineConfig | None = None, instance_id: int = 0) -> CFResult:
    cfg = cfg or BaselineConfig(method="wachter")
    if cfg.method != "wachter":
        raise ValueError("config method must be 'wachter'")
    return generate_batch(np.asarray(x0)[None, :], classifier, schema, cfg, [instance_id])[0]


def dice_like_generate(x0, classifier, schema, cfg: BaselineConfig | None = None, instance_id: int = 0) -> CFResult:
    cfg = cfg or BaselineConfig(method="dice_like")
    if cfg.method != "dice_like":
        raise ValueError("config method must be 'dice_like'")
    return generate_batch(np.asarray(x0)[None, :], classifier, schema, cfg, [instance_id])[0]


def batch_generate(X0, classifier, schema, cfg: BaselineConfig, instance_ids=None, chunk_size: int = 256):
    X0 = np.asarray(X0, dtype=np.float64)
    if X0.size == 0:
        return []
    ids = list(range(len(X0))) if instance_ids is None else list(instance_ids)
    out = []
    for s in range(0, len(X0), chunk_size):
        out.extend(generate_batch(X0[s:s + chunk_size], classifier, schema, cfg, ids[s:s + chunk_size]))
    return out
