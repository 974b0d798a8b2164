"""Transformer VAE over feature tokens, beta-annealed training and checkpointing."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import CheckpointError, load_into, read_checkpoint, write_checkpoint
from .tokenizer import Detokenizer, FeatureTokenizer, GumbelConfig, Reconstruction, detokenize, tokenize

log = logging.getLogger(__name__)


@dataclass
class VaeTrainConfig:
    epochs: int = 4000
    beta_max: float = 1e-3
    beta_min: float = 1e-5
    learning_rate: float = 1e-2
    batch_size: int = 64
    clip_norm: float = 5.0
    seed: int = 0
    tau: float = 1.0
    n_layers: int = 2
    n_heads: int = 2
    d_token: int = 8
    d_hidden: int = 32
    d_latent: int = 4

    def __post_init__(self):
        if not self.beta_max > self.beta_min > 0:
            raise ValueError("need beta_max > beta_min > 0")
        if self.d_token % self.n_heads:
            raise ValueError("d_token must be divisible by n_heads")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    def architecture(self) -> dict:
        return {k: getattr(self, k) for k in ("n_layers", "n_heads", "d_token", "d_hidden", "d_latent")}


# ---------------------------------------------------------------------------
# transformer blocks

def _init(rng, shape, fan_in):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class TransformerLayer:
    """Post-norm self-attention block: LN(x + MHA(x)) then LN(h + FFN(h))."""

    def __init__(self, d: int, n_heads: int, d_hidden: int, rng: np.random.Generator, prefix: str):
        self.d, self.h = d, n_heads
        self.prefix = prefix
        p = ad.parameter
        self.Wq = p(_init(rng, (d, d), d))
        self.Wk = p(_init(rng, (d, d), d))
        self.Wv = p(_init(rng, (d, d), d))
        self.Wo = p(_init(rng, (d, d), d))
        self.bo = p(np.zeros(d))
        self.g1, self.be1 = p(np.ones(d)), p(np.zeros(d))
        self.W1 = p(_init(rng, (d, d_hidden), d))
        self.b1 = p(np.zeros(d_hidden))
        self.W2 = p(_init(rng, (d_hidden, d), d_hidden))
        self.b2 = p(np.zeros(d))
        self.g2, self.be2 = p(np.ones(d)), p(np.zeros(d))
        self.last_attention: np.ndarray | None = None

    def parameters(self) -> dict[str, Tensor]:
        names = ("Wq", "Wk", "Wv", "Wo", "bo", "g1", "be1", "W1", "b1", "W2", "b2", "g2", "be2")
        return {f"{self.prefix}.{n}": getattr(self, n) for n in names}

    def attention(self, x: Tensor) -> Tensor:
        B, T, d = x.shape
        dh = d // self.h

        def heads(t):
            return ad.swapaxes(ad.reshape(t, (B, T, self.h, dh)), 1, 2)  # (B, H, T, dh)

        q, k, v = heads(x @ self.Wq), heads(x @ self.Wk), heads(x @ self.Wv)
        scores = (q @ ad.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(dh))
        weights = ad.softmax_lastdim(scores)
        self.last_attention = weights.values
        ctx = ad.reshape(ad.swapaxes(weights @ v, 1, 2), (B, T, d))
        return ctx @ self.Wo + self.bo

    def __call__(self, x: Tensor) -> Tensor:
        h = ad.layer_norm_lastdim(x + self.attention(x)) * self.g1 + self.be1
        ff = ad.relu(h @ self.W1 + self.b1) @ self.W2 + self.b2
        return ad.layer_norm_lastdim(h + ff) * self.g2 + self.be2


@dataclass
class LatentState:
    mu: Tensor
    logvar: Tensor
    eps: np.ndarray
    z: Tensor

    def flat(self) -> np.ndarray:
        return self.z.values.reshape(self.z.shape[0], -1)


def reparameterize(mu: Tensor, logvar: Tensor, eps: np.ndarray) -> Tensor:
    return mu + ad.exp(logvar * 0.5) * eps


class TabularVAE:
    def __init__(self, n_num: int, cat_sizes, cfg: VaeTrainConfig, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        self.cfg = cfg
        self.n_num = n_num
        self.cat_sizes = tuple(cat_sizes)
        d, dz = cfg.d_token, cfg.d_latent
        self.gumbel = GumbelConfig(tau=cfg.tau, seed=cfg.seed)
        self.tokenizer = FeatureTokenizer(n_num, self.cat_sizes, d, rng)
        self.encoder = [TransformerLayer(d, cfg.n_heads, cfg.d_hidden, rng, f"enc{i}") for i in range(cfg.n_layers)]
        self.W_mu = ad.parameter(_init(rng, (d, dz), d))
        self.b_mu = ad.parameter(np.zeros(dz))
        self.W_lv = ad.parameter(_init(rng, (d, dz), d))
        self.b_lv = ad.parameter(np.zeros(dz))
        self.W_in = ad.parameter(_init(rng, (dz, d), dz))
        self.b_in = ad.parameter(np.zeros(d))
        self.decoder = [TransformerLayer(d, cfg.n_heads, cfg.d_hidden, rng, f"dec{i}") for i in range(cfg.n_layers)]
        self.detokenizer = Detokenizer(n_num, self.cat_sizes, d, rng)

    @property
    def n_tokens(self) -> int:
        return self.n_num + len(self.cat_sizes)

    @property
    def width(self) -> int:
        return self.n_num + sum(self.cat_sizes)

    @property
    def latent_dim(self) -> int:
        return self.n_tokens * self.cfg.d_latent

    def parameters(self) -> dict[str, Tensor]:
        out = dict(self.tokenizer.parameters())
        for layer in self.encoder:
            out.update(layer.parameters())
        out.update({"W_mu": self.W_mu, "b_mu": self.b_mu, "W_lv": self.W_lv, "b_lv": self.b_lv,
                    "W_in": self.W_in, "b_in": self.b_in})
        for layer in self.decoder:
            out.update(layer.parameters())
        out.update(self.detokenizer.parameters())
        return out

    # -- forward pieces -----------------------------------------------------

    def encode(self, x, eps: np.ndarray | None = None, rng: np.random.Generator | None = None) -> LatentState:
        """Encoded rows ``(B, k)`` -> latent state with per-token ``(mu, logvar)``.

        ``eps`` fixes the reparameterization noise; pass zeros for the mean.
        """
        h = tokenize(x, self.tokenizer)
        for layer in self.encoder:
            h = layer(h)
        mu = h @ self.W_mu + self.b_mu
        logvar = h @ self.W_lv + self.b_lv
        if eps is None:
            rng = rng if rng is not None else np.random.default_rng(self.cfg.seed)
            eps = rng.standard_normal(mu.shape)
        eps = np.broadcast_to(np.asarray(eps, dtype=np.float64), mu.shape)
        return LatentState(mu, logvar, eps, reparameterize(mu, logvar, eps))

    def decode(self, z, noise: list[np.ndarray] | None = None, rng: np.random.Generator | None = None,
               gumbel: GumbelConfig | None = None) -> Reconstruction:
        """Latents ``(B, F, d_z)`` or flattened ``(B, F*d_z)`` -> reconstruction."""
        z = ad.as_tensor(z)
        if z.ndim == 1:
            z = ad.reshape(z, (1, z.shape[0]))
        if z.ndim == 2:
            if z.shape[1] != self.latent_dim:
                raise ad.ShapeError(f"latent width {z.shape[1]} != {self.latent_dim}")
            z = ad.reshape(z, (z.shape[0], self.n_tokens, self.cfg.d_latent))
        elif z.shape[1:] != (self.n_tokens, self.cfg.d_latent):
            raise ad.ShapeError(f"latent shape {z.shape[1:]} != {(self.n_tokens, self.cfg.d_latent)}")
        h = z @ self.W_in + self.b_in
        for layer in self.decoder:
            h = layer(h)
        return detokenize(h, self.detokenizer, gumbel or self.gumbel, noise=noise, rng=rng)

    def encode_mean(self, X: np.ndarray) -> np.ndarray:
        """Deterministic flattened latents (eps = 0) for a batch of encoded rows."""
        X = np.atleast_2d(X)
        st = self.encode(X, eps=np.zeros(1))
        return st.mu.values.reshape(X.shape[0], -1)

    def reconstruct(self, X: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
        z = self.encode_mean(X)
        return self.decode(z, rng=rng).x.values

    # -- persistence --------------------------------------------------------

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.values.copy() for k, v in self.parameters().items()}

    def save(self, path, schema_hash: str = "", extra: dict | None = None) -> None:
        header = {
            "kind": "vae",
            "schema_hash": schema_hash,
            "n_num": self.n_num,
            "cat_sizes": list(self.cat_sizes),
            "config": asdict(self.cfg),
            **(extra or {}),
        }
        write_checkpoint(path, header, {"vae/" + k: v for k, v in self.state().items()})

    @classmethod
    def load(cls, path, schema_hash: str | None = None) -> "TabularVAE":
        header, blocks = read_checkpoint(path)
        if header.get("kind") != "vae":
            raise CheckpointError(f"{path}: not a VAE checkpoint")
        if schema_hash is not None and header.get("schema_hash") != schema_hash:
            raise CheckpointError(f"{path}: schema hash {header.get('schema_hash')} != {schema_hash}")
        model = cls(header["n_num"], header["cat_sizes"], VaeTrainConfig(**header["config"]))
        load_into(model.parameters(), blocks, "vae/")
        return model


# ---------------------------------------------------------------------------
# losses and schedule

def kl_divergence(mu, logvar) -> Tensor:
    """Closed-form KL(N(mu, exp(logvar)) || N(0, I)) summed over latent entries, averaged over the batch."""
    mu, logvar = ad.as_tensor(mu), ad.as_tensor(logvar)
    if mu.shape != logvar.shape:
        raise ad.ShapeError(f"mu {mu.shape} and logvar {logvar.shape} differ")
    batch = mu.shape[0] if mu.ndim > 1 else 1
    term = 1.0 + logvar - ad.square(mu) - ad.exp(logvar)
    return ad.sum_(term) * (-0.5 / batch)


def reconstruction_loss(x: np.ndarray, rec: Reconstruction, n_num: int, blocks) -> Tensor:
    """MSE over the numerical block plus per-block cross-entropy against the soft samples."""
    x = np.asarray(x, dtype=np.float64)
    batch = x.shape[0]
    total = ad.Tensor(np.zeros(1))
    if n_num:
        diff = rec.numerical - x[:, :n_num]
        total = total + ad.sum_(ad.square(diff)) * (1.0 / (batch * n_num))
    for logp, blk in zip(rec.log_probs, blocks):
        total = total - ad.sum_(logp * x[:, blk]) * (1.0 / batch)
    return total


def vae_loss(x, rec: Reconstruction, latent: LatentState, beta: float, n_num: int, blocks):
    if not beta > 0:
        raise ValueError("beta must be > 0")
    recon = reconstruction_loss(x, rec, n_num, blocks)
    kl = kl_divergence(latent.mu, latent.logvar)
    return recon + kl * beta, recon, kl


def beta_schedule(epoch: int, cfg: VaeTrainConfig) -> float:
    """Geometric decay from beta_max at epoch 0 to beta_min at the last epoch."""
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs})")
    if epoch == 0:
        return cfg.beta_max
    if epoch == cfg.epochs - 1:
        return cfg.beta_min
    frac = epoch / (cfg.epochs - 1)
    return float(math.exp((1 - frac) * math.log(cfg.beta_max) + frac * math.log(cfg.beta_min)))


# ---------------------------------------------------------------------------
# training

class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainingCurve:
    epoch: list[int] = field(default_factory=list)
    beta: list[float] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    recon: list[float] = field(default_factory=list)
    kl: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _blocks(n_num: int, cat_sizes) -> list[slice]:
    out, start = [], n_num
    for c in cat_sizes:
        out.append(slice(start, start + c))
        start += c
    return out


def train_vae(X: np.ndarray, cfg: VaeTrainConfig, n_num: int, cat_sizes, progress=None):
    """Minibatch SGD on the beta-VAE loss; returns ``(model, curve)``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("training set must be a non-empty 2-D array")
    rng = np.random.default_rng(cfg.seed)
    model = TabularVAE(n_num, cat_sizes, cfg, rng)
    if X.shape[1] != model.width:
        raise ad.ShapeError(f"training data width {X.shape[1]} != model width {model.width}")
    blocks = _blocks(n_num, cat_sizes)
    params = list(model.parameters().values())
    curve = TrainingCurve()
    n = len(X)
    for epoch in range(cfg.epochs):
        beta = beta_schedule(epoch, cfg)
        order = rng.permutation(n)
        tot = rec_sum = kl_sum = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb = X[idx]
            latent = model.encode(xb, rng=rng)
            rec = model.decode(latent.z, rng=rng)
            loss, recon, kl = vae_loss(xb, rec, latent, beta, n_num, blocks)
            if not np.isfinite(loss.item()):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch rows {idx[:10].tolist()}...")
            ad.backward(loss)
            ad.sgd_step(params, cfg.learning_rate, cfg.clip_norm)
            w = len(idx) / n
            tot += loss.item() * w
            rec_sum += recon.item() * w
            kl_sum += kl.item() * w
        curve.epoch.append(epoch)
        curve.beta.append(beta)
        curve.loss.append(tot)
        curve.recon.append(rec_sum)
        curve.kl.append(kl_sum)
        if progress is not None:
            progress(epoch, tot, rec_sum, kl_sum)
        log.debug("epoch %d beta %.2e loss %.5f recon %.5f kl %.4f", epoch, beta, tot, rec_sum, kl_sum)
    return model, curve


def categorical_accuracy(model: TabularVAE, X: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
    """Per-categorical-feature fraction of rows whose hard reconstruction matches."""
    Xh = model.reconstruct(X, rng=rng)
    blocks = _blocks(model.n_num, model.cat_sizes)
    return np.array([np.mean(np.argmax(Xh[:, b], 1) == np.argmax(X[:, b], 1)) for b in blocks])
