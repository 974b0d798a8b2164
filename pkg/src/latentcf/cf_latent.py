"""Counterfactual search by gradient descent in the VAE latent space.

For an instance ``x0`` with latent mean ``z0`` the search minimizes::

    max(0, 1 - logit(f(Dec(z))))
      + lambda_input  * |x0 - Dec(z)|_1
      + lambda_latent * ||z0 - z||_2

Dec(z) is the hard (exactly one-hot) reconstruction whose gradients flow
through the soft Gumbel samples.  Many instances are optimized together as
one batch, but every instance has its own noise stream and stopping state,
so each result depends only on that instance.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .tokenizer import GumbelConfig, draw_noise

log = logging.getLogger(__name__)


class AlreadyTargetClass(ValueError):
    pass


@dataclass
class CFConfig:
    lambda_input: float = 1.0
    lambda_latent: float = 1.0
    max_steps: int = 5000
    learning_rate: float = 0.05
    tolerance: float = 1e-5
    window: int = 10
    seed: int = 0
    gradient_tau: float = 1.0
    latent_norm: str = "l2"
    # what the hinge compares with 1: the target-class log-odds, or its probability
    hinge_input: str = "logit"

    def __post_init__(self):
        if self.hinge_input not in ("logit", "probability"):
            raise ValueError("hinge_input must be 'logit' or 'probability'")
        if self.latent_norm not in ("l2", "squared_l2"):
            raise ValueError("latent_norm must be 'l2' or 'squared_l2'")
        if not self.gradient_tau > 0:
            raise ValueError("gradient_tau must be > 0")
        if self.lambda_input < 0 or self.lambda_latent < 0:
            raise ValueError("loss weights must be >= 0")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")


@dataclass
class CFResult:
    instance_id: int
    method: str
    x0: np.ndarray
    x_cf: np.ndarray
    valid: bool
    steps: int
    losses: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    error: str | None = None


def hinge_yloss(logit) -> Tensor:
    """max(0, 1 - logit) elementwise."""
    return ad.max_with_const(1.0 - ad.as_tensor(logit), 0.0)


def step_rng(seed: int, instance_id: int, step: int) -> np.random.Generator:
    """Generator for the Gumbel draw of one instance at one search step."""
    return np.random.default_rng([int(seed), int(instance_id), int(step)])


def step_noise(cat_sizes, seed: int, instance_ids, step: int) -> list[np.ndarray]:
    """Gumbel noise for a batch at ``step``: one ``(n, C_i)`` array per categorical block.

    Each row depends only on ``(seed, instance_id, step)``, never on which
    other instances share the batch.
    """
    per = [draw_noise(cat_sizes, 1, step_rng(seed, i, step)) for i in instance_ids]
    return [np.concatenate([p[b] for p in per], axis=0) if per else np.zeros((0, c))
            for b, c in enumerate(cat_sizes)]


def cf_loss(z, z0: np.ndarray, x0: np.ndarray, vae, classifier, cfg: CFConfig, noise,
            lambda_input=None, lambda_latent=None):
    """Per-instance loss terms for a batch of latents.

    Returns ``(total, parts, rec, logit)`` where ``total`` is the scalar sum of
    the per-instance losses and ``parts`` holds ``(B,)`` arrays.  The weights
    default to the config values; per-row ``(B,)`` arrays are also accepted.
    """
    lam_in = cfg.lambda_input if lambda_input is None else lambda_input
    lam_lat = cfg.lambda_latent if lambda_latent is None else lambda_latent
    z = ad.as_tensor(z)
    rec = vae.decode(z, noise=noise, gumbel=GumbelConfig(tau=cfg.gradient_tau))
    logit = classifier.logit(rec.x)
    hinge = hinge_yloss(logit if cfg.hinge_input == "logit" else ad.sigmoid(logit))
    prox_in = ad.sum_(ad.abs_(rec.x - x0), axis=-1)
    if cfg.latent_norm == "l2":
        prox_lat = ad.l2_norm(z - z0, axis=-1)
    else:
        prox_lat = ad.sum_(ad.square(z - z0), axis=-1)
    per = hinge + prox_in * lam_in + prox_lat * lam_lat
    parts = {
        "validity": hinge.values.copy(),
        "input_proximity": prox_in.values.copy(),
        "latent_proximity": prox_lat.values.copy(),
        "total": per.values.copy(),
    }
    return ad.sum_(per), parts, rec, logit


def _converged(history: list[float], cfg: CFConfig) -> bool:
    if len(history) <= cfg.window:
        return False
    prev, cur = history[-1 - cfg.window], history[-1]
    return abs(cur - prev) <= cfg.tolerance * max(abs(prev), 1e-12)


def generate_batch(X0: np.ndarray, vae, classifier, cfg: CFConfig, instance_ids=None,
                   method: str = "tabcf", lambdas: np.ndarray | None = None) -> list[CFResult]:
    """Run independent latent-space searches for every row of ``X0``.

    An instance stops once its loss has converged while its hard
    reconstruction is classified as the target class; otherwise it runs for
    ``max_steps`` and is decoded one last time with the noise of step
    ``max_steps``.  The returned ``x_cf`` is always the hard sample whose
    prediction was checked.

    ``lambdas`` optionally gives per-row ``(lambda_input, lambda_latent)``
    pairs, shape ``(n, 2)``, overriding the config weights.
    """
    X0 = np.atleast_2d(np.asarray(X0, dtype=np.float64))
    n = len(X0)
    ids = list(range(n)) if instance_ids is None else [int(i) for i in instance_ids]
    if n == 0:
        return []
    results: list[CFResult | None] = [None] * n
    start_logit = classifier.predict_logit(X0)
    todo = []
    for i in range(n):
        if start_logit[i] >= 0:
            results[i] = CFResult(ids[i], method, X0[i].copy(), X0[i].copy(), False, 0,
                                  error="already target class")
        else:
            todo.append(i)
    if not todo:
        return results
    rows = np.array(todo)
    row_ids = [ids[i] for i in rows]
    if lambdas is None:
        lam = np.tile([cfg.lambda_input, cfg.lambda_latent], (len(rows), 1))
    else:
        lam = np.asarray(lambdas, dtype=np.float64)[rows]
    z0 = vae.encode_mean(X0[rows])
    z = z0.copy()
    history = [[] for _ in rows]
    done = np.zeros(len(rows), dtype=bool)
    final = {}

    def record(a, j, step, rec, parts, logit):
        final[a] = (rec.x.values[j].copy(), step, {k: float(v[j]) for k, v in parts.items()},
                    float(logit.values[j]), z[a].copy())

    for step in range(cfg.max_steps):
        act = np.flatnonzero(~done)
        if len(act) == 0:
            break
        noise = step_noise(vae.cat_sizes, cfg.seed, [row_ids[a] for a in act], step)
        zt = ad.Tensor(z[act], requires_grad=True)
        total, parts, rec, logit = cf_loss(zt, z0[act], X0[rows[act]], vae, classifier, cfg, noise,
                                           lam[act, 0], lam[act, 1])
        valid_now = logit.values >= 0
        keep = np.ones(len(act), dtype=bool)
        for j, a in enumerate(act):
            history[a].append(float(parts["total"][j]))
            if valid_now[j] and _converged(history[a], cfg):
                keep[j] = False
                record(a, j, step, rec, parts, logit)
        ad.backward(total)
        z[act[keep]] -= cfg.learning_rate * zt.grad[keep]
        done[act[~keep]] = True

    rest = np.flatnonzero(~done)
    if len(rest):
        noise = step_noise(vae.cat_sizes, cfg.seed, [row_ids[a] for a in rest], cfg.max_steps)
        _, parts, rec, logit = cf_loss(ad.Tensor(z[rest]), z0[rest], X0[rows[rest]], vae, classifier, cfg, noise,
                                       lam[rest, 0], lam[rest, 1])
        for j, a in enumerate(rest):
            record(a, j, cfg.max_steps, rec, parts, logit)

    for a, i in enumerate(rows):
        x_cf, steps, losses, lg, zf = final[a]
        valid = bool(classifier.predict(x_cf[None, :])[0] == 1)
        summary = {
            "initial_logit": float(start_logit[i]),
            "final_logit": lg,
            "latent_distance": float(np.linalg.norm(zf - z0[a])),
            "converged": steps < cfg.max_steps,
            "noise_seed": [int(cfg.seed), ids[i], int(steps)],
        }
        results[i] = CFResult(ids[i], method, X0[i].copy(), x_cf, valid, int(steps), losses, summary)
    return results


def generate_cf(x0: np.ndarray, vae, classifier, cfg: CFConfig, instance_id: int = 0) -> CFResult:
    x0 = np.asarray(x0, dtype=np.float64)
    if classifier.predict(x0[None, :])[0] == 1:
        raise AlreadyTargetClass("instance is already classified as the target class")
    return generate_batch(x0[None, :], vae, classifier, cfg, [instance_id])[0]


def batch_generate(X0: np.ndarray, vae, classifier, cfg: CFConfig, instance_ids=None,
                   chunk_size: int = 256) -> list[CFResult]:
    """Order-preserving searches over a test pool, processed in chunks."""
    X0 = np.atleast_2d(np.asarray(X0, dtype=np.float64)) if len(X0) else np.zeros((0, vae.width))
    ids = list(range(len(X0))) if instance_ids is None else list(instance_ids)
    out: list[CFResult] = []
    for s in range(0, len(X0), chunk_size):
        out.extend(generate_batch(X0[s:s + chunk_size], vae, classifier, cfg, ids[s:s + chunk_size]))
    return out


def generate_grid(X0: np.ndarray, vae, classifier, cfg: CFConfig, grid, instance_ids=None,
                  chunk_size: int = 2048) -> dict:
    """Searches for every ``(lambda_input, lambda_latent)`` pair in ``grid``.

    All cells share instance ids, hence the same noise streams, so a cell
    matches a separate run with those weights.  Returns ``{pair: results}``.
    """
    X0 = np.atleast_2d(np.asarray(X0, dtype=np.float64))
    ids = list(range(len(X0))) if instance_ids is None else [int(i) for i in instance_ids]
    grid = [(float(a), float(b)) for a, b in grid]
    if len(X0) == 0:
        return {pair: [] for pair in grid}
    X_all = np.concatenate([X0] * len(grid))
    ids_all = ids * len(grid)
    lam_all = np.repeat(np.array(grid), len(X0), axis=0)
    flat: list[CFResult] = []
    for s in range(0, len(X_all), chunk_size):
        sl = slice(s, s + chunk_size)
        flat.extend(generate_batch(X_all[sl], vae, classifier, cfg, ids_all[sl], lambdas=lam_all[sl]))
    n = len(X0)
    return {pair: flat[k * n:(k + 1) * n] for k, pair in enumerate(grid)}
