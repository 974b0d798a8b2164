"""Synthetic mixed-type datasets with a known label mechanism.

Generative process, per row:

* numerical feature j ~ Uniform(0, scale_j), rounded to 3 decimals;
* categorical feature i ~ uniform over its ``n_categories`` values;
* score = sum_j w_j * (x_j / scale_j - 0.5) + sum_i v_i[category]
  over the *signal* features only (all others get weight 0);
* label ~ Bernoulli(sigmoid(sharpness * score + bias)); with ``noise = 0``
  the label is the thresholded score.

``noise`` in [0, 1] is the probability that a label is replaced by a fair
coin flip.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import CATEGORICAL, NUMERICAL, Column, RawTable, TableSchema


@dataclass
class SynthSpec:
    n_numerical: int = 3
    n_categorical: int = 3
    n_categories: int = 3
    n_rows: int = 2000
    numerical_signal: list[int] = field(default_factory=lambda: [0, 1])
    categorical_signal: list[int] = field(default_factory=lambda: [0])
    sharpness: float = 6.0
    bias: float = 0.0
    noise: float = 0.0
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown synth fields: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def categorical_only(seed: int = 0, n_rows: int = 2000) -> SynthSpec:
    """Label driven by the first categorical feature alone."""
    return SynthSpec(numerical_signal=[], categorical_signal=[0], n_rows=n_rows, seed=seed)


def generate(spec: SynthSpec) -> RawTable:
    for j in spec.numerical_signal:
        if not 0 <= j < spec.n_numerical:
            raise ValueError(f"numerical signal index {j} out of range")
    for i in spec.categorical_signal:
        if not 0 <= i < spec.n_categorical:
            raise ValueError(f"categorical signal index {i} out of range")
    rng = np.random.default_rng(spec.seed)
    cols = [Column(f"num{j}", NUMERICAL) for j in range(spec.n_numerical)]
    cats = [tuple(f"c{i}_{v}" for v in range(spec.n_categories)) for i in range(spec.n_categorical)]
    cols += [Column(f"cat{i}", CATEGORICAL, cats[i]) for i in range(spec.n_categorical)]
    cols.append(Column("label", CATEGORICAL, ("no", "yes")))
    schema = TableSchema(tuple(cols), "label", "yes")

    scales = 10.0 ** rng.integers(0, 3, size=spec.n_numerical)
    num = np.round(rng.uniform(0.0, 1.0, size=(spec.n_rows, spec.n_numerical)) * scales, 3)
    cat = rng.integers(0, spec.n_categories, size=(spec.n_rows, spec.n_categorical))

    score = np.zeros(spec.n_rows)
    for j in spec.numerical_signal:
        w = rng.choice([-1.0, 1.0]) * rng.uniform(1.0, 2.0)
        score += w * (num[:, j] / scales[j] - 0.5)
    for i in spec.categorical_signal:
        # spread category effects evenly so every value matters
        v = np.linspace(-1.0, 1.0, spec.n_categories)
        rng.shuffle(v)
        score += v[cat[:, i]]
    logit = spec.sharpness * score + spec.bias
    if spec.noise > 0:
        p = 1.0 / (1.0 + np.exp(-logit))
        label = rng.uniform(size=spec.n_rows) < p
        flip = rng.uniform(size=spec.n_rows) < spec.noise
        label = np.where(flip, rng.uniform(size=spec.n_rows) < 0.5, label)
    else:
        label = logit > 0
    rows = []
    for r in range(spec.n_rows):
        row = {f"num{j}": float(num[r, j]) for j in range(spec.n_numerical)}
        row.update({f"cat{i}": cats[i][cat[r, i]] for i in range(spec.n_categorical)})
        row["label"] = "yes" if label[r] else "no"
        rows.append(row)
    return RawTable(schema, rows)
