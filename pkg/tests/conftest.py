"""Shared fixtures: small schemas, encoded data and tiny trained models."""
from __future__ import annotations

import numpy as np
import pytest

from latentcf import synth
from latentcf.blackbox import ClassifierConfig, train_classifier
from latentcf.dataset import CATEGORICAL, NUMERICAL, Column, TableSchema, prepare
from latentcf.vae import TabularVAE, VaeTrainConfig, train_vae


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def mixed_schema():
    cols = (
        Column("age", NUMERICAL),
        Column("hours", NUMERICAL),
        Column("job", CATEGORICAL, ("a", "b", "c")),
        Column("city", CATEGORICAL, ("x", "y")),
        Column("income", CATEGORICAL, ("low", "high")),
    )
    return TableSchema(cols, "income", "high")


def random_encoded(schema, n, rng):
    """Random rows satisfying the encoding constraints of ``schema``."""
    n_num = len(schema.numerical)
    X = np.zeros((n, schema.width))
    X[:, :n_num] = rng.uniform(size=(n, n_num))
    for blk in schema.blocks():
        size = blk.stop - blk.start
        X[np.arange(n), blk.start + rng.integers(0, size, n)] = 1.0
    return X


@pytest.fixture(scope="session")
def tiny_models():
    """A classifier and a briefly trained VAE on a small synthetic table."""
    table = synth.generate(synth.SynthSpec(n_rows=400, seed=3))
    train, test, _ = prepare(table, seed=3)
    clf, _ = train_classifier(train.X, train.y, ClassifierConfig(epochs=30, seed=3))
    schema = train.schema
    cfg = VaeTrainConfig(epochs=15, seed=3, learning_rate=0.05)
    vae, curve = train_vae(train.X, cfg, len(schema.numerical), schema.category_sizes)
    return {"train": train, "test": test, "clf": clf, "vae": vae, "curve": curve, "schema": schema}


@pytest.fixture
def small_vae(mixed_schema):
    s = mixed_schema
    cfg = VaeTrainConfig(epochs=1, d_token=4, n_heads=2, d_hidden=8, d_latent=3, n_layers=1)
    return TabularVAE(len(s.numerical), s.category_sizes, cfg, np.random.default_rng(1))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
