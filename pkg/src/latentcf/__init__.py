"""Latent-space counterfactual explanations for mixed-type tabular data.

The pieces, bottom-up: :mod:`autodiff` (reverse-mode engine on numpy),
:mod:`dataset` (schema, CSV, min-max / one-hot encoding), :mod:`tokenizer`
(feature tokens and the Gumbel-softmax detokenizer), :mod:`vae` (transformer
VAE), :mod:`blackbox` (MLP classifier), :mod:`cf_latent` (latent search),
:mod:`cf_baselines` (input-space baselines) and :mod:`metrics`.
"""
from .blackbox import Classifier, ClassifierConfig, train_classifier
from .cf_baselines import BaselineConfig
from .cf_latent import CFConfig, CFResult, batch_generate, generate_cf
from .dataset import Preprocessor, TableSchema, fit_preprocessor, load_csv, load_schema
from .metrics import MetricsReport, evaluate
from .tokenizer import GumbelConfig
from .vae import TabularVAE, VaeTrainConfig, train_vae

__version__ = "0.1.0"

__all__ = [
    "BaselineConfig", "CFConfig", "CFResult", "Classifier", "ClassifierConfig", "GumbelConfig",
    "MetricsReport", "Preprocessor", "TableSchema", "TabularVAE", "VaeTrainConfig",
    "batch_generate", "evaluate", "fit_preprocessor", "generate_cf", "load_csv", "load_schema",
    "train_classifier", "train_vae",
]
