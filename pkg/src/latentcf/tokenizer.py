"""Per-feature tokenizer and the Gumbel-softmax detokenizer.

Tokens are ordered numerical features first, then categorical features, so a
batch of encoded rows ``(B, k)`` becomes a token tensor ``(B, |N|+|C|, d)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass(frozen=True)
class GumbelConfig:
    tau: float = 1.0
    hard_forward: bool = True
    seed: int = 0

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"Gumbel temperature must be > 0, got {self.tau}")


def _uniform(rng: np.random.Generator, shape, d: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(d)
    return rng.uniform(-bound, bound, size=shape)


class FeatureTokenizer:
    """Linear token per numerical feature, lookup-plus-bias per categorical one."""

    def __init__(self, n_num: int, cat_sizes, d: int, rng: np.random.Generator):
        self.n_num = n_num
        self.cat_sizes = tuple(cat_sizes)
        self.d = d
        self.W_num = ad.parameter(_uniform(rng, (n_num, d), d), "tok.W_num")
        self.b_num = ad.parameter(_uniform(rng, (n_num, d), d), "tok.b_num")
        self.W_cat = [ad.parameter(_uniform(rng, (c, d), d), f"tok.W_cat{i}") for i, c in enumerate(self.cat_sizes)]
        self.b_cat = [ad.parameter(_uniform(rng, (d,), d), f"tok.b_cat{i}") for i in range(len(self.cat_sizes))]

    @property
    def n_tokens(self) -> int:
        return self.n_num + len(self.cat_sizes)

    @property
    def width(self) -> int:
        return self.n_num + sum(self.cat_sizes)

    def parameters(self) -> dict[str, Tensor]:
        out = {"tok.W_num": self.W_num, "tok.b_num": self.b_num}
        for i, (w, b) in enumerate(zip(self.W_cat, self.b_cat)):
            out[f"tok.W_cat{i}"] = w
            out[f"tok.b_cat{i}"] = b
        return out

    def __call__(self, x) -> Tensor:
        return tokenize(x, self)


def tokenize(x, params: FeatureTokenizer) -> Tensor:
    """Encoded rows ``(B, k)`` (or a single row ``(k,)``) -> tokens ``(B, F, d)``."""
    x = ad.as_tensor(x)
    if x.ndim == 1:
        x = ad.reshape(x, (1, x.shape[0]))
    if x.shape[-1] != params.width:
        raise ad.ShapeError(f"tokenize expects width {params.width}, got {x.shape[-1]}")
    tokens = []
    for j in range(params.n_num):
        xj = x[:, j:j + 1]
        tokens.append(xj @ params.W_num[j:j + 1] + params.b_num[j])
    start = params.n_num
    for w, b, size in zip(params.W_cat, params.b_cat, params.cat_sizes):
        tokens.append(x[:, start:start + size] @ w + b)
        start += size
    return ad.stack(tokens, axis=1)


# ---------------------------------------------------------------------------
# Gumbel softmax

def sample_gumbel(rng: np.random.Generator, shape) -> np.ndarray:
    u = rng.uniform(size=shape)
    # uniform() is on [0, 1); keep u strictly inside (0, 1)
    u = np.clip(u, np.finfo(np.float64).tiny, 1.0 - np.finfo(np.float64).eps)
    return -np.log(-np.log(u))


def one_hot_argmax(v: np.ndarray) -> np.ndarray:
    """One-hot at the argmax of the last axis; ties go to the lowest index."""
    idx = np.argmax(v, axis=-1)
    out = np.zeros_like(v, dtype=np.float64)
    np.put_along_axis(out, idx[..., None], 1.0, axis=-1)
    return out


def gumbel_softmax(logits, cfg: GumbelConfig, noise: np.ndarray | None = None,
                   rng: np.random.Generator | None = None):
    """Return ``(hard, soft)`` for a (batch of) logit vectors.

    ``soft = softmax((logits + g) / tau)``; ``hard`` is the one-hot argmax of
    ``soft`` whose forward value is exact and whose gradient flows through
    ``soft`` (straight-through).  ``noise`` overrides the Gumbel draw.
    """
    if not cfg.tau > 0:
        raise ValueError("tau must be > 0")
    logits = ad.as_tensor(logits)
    if noise is None:
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        noise = sample_gumbel(rng, logits.shape)
    soft = ad.softmax_lastdim((logits + noise) * (1.0 / cfg.tau))
    hard = ad.straight_through(one_hot_argmax(soft.values), soft)
    return hard, soft


# ---------------------------------------------------------------------------
# detokenizer

class Detokenizer:
    def __init__(self, n_num: int, cat_sizes, d: int, rng: np.random.Generator):
        self.n_num = n_num
        self.cat_sizes = tuple(cat_sizes)
        self.d = d
        self.W_num = ad.parameter(_uniform(rng, (n_num, d), d), "detok.W_num")
        self.b_num = ad.parameter(_uniform(rng, (n_num,), d), "detok.b_num")
        self.W_cat = [ad.parameter(_uniform(rng, (d, c), d), f"detok.W_cat{i}") for i, c in enumerate(self.cat_sizes)]
        self.b_cat = [ad.parameter(_uniform(rng, (c,), d), f"detok.b_cat{i}") for i, c in enumerate(self.cat_sizes)]

    def parameters(self) -> dict[str, Tensor]:
        out = {"detok.W_num": self.W_num, "detok.b_num": self.b_num}
        for i, (w, b) in enumerate(zip(self.W_cat, self.b_cat)):
            out[f"detok.W_cat{i}"] = w
            out[f"detok.b_cat{i}"] = b
        return out


@dataclass
class Reconstruction:
    """Detokenizer output for a batch.

    ``x`` is the constraint-respecting row (hard one-hots, straight-through
    gradients); ``x_soft`` replaces each one-hot block by its soft sample.
    """

    x: Tensor
    x_soft: Tensor
    numerical: Tensor
    logits: list[Tensor]
    log_probs: list[Tensor]
    noise: list[np.ndarray]


def draw_noise(cat_sizes, batch: int, rng: np.random.Generator) -> list[np.ndarray]:
    return [sample_gumbel(rng, (batch, c)) for c in cat_sizes]


def detokenize(tokens: Tensor, params: Detokenizer, cfg: GumbelConfig,
               noise: list[np.ndarray] | None = None,
               rng: np.random.Generator | None = None) -> Reconstruction:
    """Tokens ``(B, F, d)`` -> reconstruction ``(B, k)``."""
    tokens = ad.as_tensor(tokens)
    n_tok = params.n_num + len(params.cat_sizes)
    if tokens.ndim != 3 or tokens.shape[1] != n_tok or tokens.shape[2] != params.d:
        raise ad.ShapeError(f"detokenize expects (B, {n_tok}, {params.d}), got {tokens.shape}")
    batch = tokens.shape[0]
    if noise is None:
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        noise = draw_noise(params.cat_sizes, batch, rng)
    parts_hard, parts_soft, logits_all, logps = [], [], [], []
    num = None
    if params.n_num:
        pre = ad.sum_(tokens[:, : params.n_num, :] * params.W_num, axis=-1) + params.b_num
        num = ad.sigmoid(pre)
        parts_hard.append(num)
        parts_soft.append(num)
    inv_tau = 1.0 / cfg.tau
    for i, (w, b) in enumerate(zip(params.W_cat, params.b_cat)):
        logits = tokens[:, params.n_num + i, :] @ w + b
        perturbed = (logits + noise[i]) * inv_tau
        soft = ad.softmax_lastdim(perturbed)
        hard = ad.straight_through(one_hot_argmax(soft.values), soft) if cfg.hard_forward else soft
        parts_hard.append(hard)
        parts_soft.append(soft)
        logits_all.append(logits)
        logps.append(ad.log_softmax_lastdim(perturbed))
    x = ad.concat(parts_hard, axis=-1)
    x_soft = ad.concat(parts_soft, axis=-1)
    if num is None:
        num = ad.Tensor(np.zeros((batch, 0)))
    return Reconstruction(x, x_soft, num, logits_all, logps, noise)
