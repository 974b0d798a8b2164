"""Run configuration: one JSON document shared by every CLI verb.

Grammar (every key optional; omitted keys take the defaults shown by
``latentcf show-config``)::

    {
      "seed": 0,
      "out": "runs/default",
      "data":       {"csv": null, "schema": null, "name": "", "test_fraction": 0.2, "train_cap": 30000},
      "synth":      {"n_numerical": 3, "n_categorical": 3, "n_categories": 3, "n_rows": 2000,
                     "numerical_signal": [0, 1], "categorical_signal": [0],
                     "sharpness": 6.0, "bias": 0.0, "noise": 0.0},
      "classifier": {"hidden": [32, 32], "epochs": 100, "learning_rate": 0.1, "batch_size": 64},
      "vae":        {"epochs": 4000, "beta_max": 0.001, "beta_min": 1e-05, ...},
      "cf":         {"lambda_input": 1.0, "lambda_latent": 1.0, "max_steps": 5000, ...},
      "baseline":   {"distance_weight": 1.0, "reg_weight": 1.0, "max_steps": 5000, ...},
      "evaluate":   {"n_test": 1000, "eps_num": 0.0001, "chunk_size": 256},
      "ablation":   {"values": [0.0, 0.25, 0.5, 0.75, 1.0], "n_test": 100}
    }

The single top-level ``seed`` drives the split, both trainings, the test
selection, the synthetic generator and the Gumbel noise of the searches, so
a run is fully determined by (config, seed).  With ``data.csv`` unset the
files written by ``synth`` under ``out`` are used.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .blackbox import ClassifierConfig
from .cf_baselines import BaselineConfig
from .cf_latent import CFConfig
from .synth import SynthSpec
from .vae import VaeTrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataSection:
    csv: str | None = None
    schema: str | None = None
    name: str = ""
    test_fraction: float = 0.2
    train_cap: int | None = 30000


@dataclass
class EvaluateSection:
    n_test: int = 1000
    eps_num: float = 1e-4
    chunk_size: int = 256


@dataclass
class AblationSection:
    values: list[float] = field(default_factory=lambda: [0.0, 0.25, 0.5, 0.75, 1.0])
    n_test: int = 100


# section name -> (dataclass, fields owned elsewhere)
SECTIONS = {
    "data": (DataSection, ()),
    "synth": (SynthSpec, ("seed",)),
    "classifier": (ClassifierConfig, ("seed",)),
    "vae": (VaeTrainConfig, ("seed",)),
    "cf": (CFConfig, ("seed",)),
    "baseline": (BaselineConfig, ("seed", "method")),
    "evaluate": (EvaluateSection, ()),
    "ablation": (AblationSection, ()),
}


def section_fields(name: str) -> list:
    cls, skip = SECTIONS[name]
    return [f for f in fields(cls) if f.name not in skip]


def _default(f):
    from dataclasses import MISSING
    return f.default_factory() if f.default is MISSING else f.default


def _coerce(path: str, value, default):
    """Check ``value`` against the type of ``default``; returns the coerced value."""
    if value is None:
        if default is None or path in ("data.train_cap",):
            return None
        raise ConfigError(f"config field '{path}' must not be null")
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"config field '{path}' must be true/false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(f"config field '{path}' must be an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config field '{path}' must be a number, got {value!r}")
        return float(value)
    if isinstance(default, str) or default is None:
        if not isinstance(value, str):
            raise ConfigError(f"config field '{path}' must be a string, got {value!r}")
        return value
    if isinstance(default, (list, tuple)):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"config field '{path}' must be a list, got {value!r}")
        return type(default)(value)
    return value


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "runs/default"
    data: DataSection = field(default_factory=DataSection)
    synth: dict = field(default_factory=lambda: _section_defaults("synth"))
    classifier: dict = field(default_factory=lambda: _section_defaults("classifier"))
    vae: dict = field(default_factory=lambda: _section_defaults("vae"))
    cf: dict = field(default_factory=lambda: _section_defaults("cf"))
    baseline: dict = field(default_factory=lambda: _section_defaults("baseline"))
    evaluate: EvaluateSection = field(default_factory=EvaluateSection)
    ablation: AblationSection = field(default_factory=AblationSection)

    # -- typed views -----------------------------------------------------
    def synth_spec(self) -> SynthSpec:
        return _build("synth", SynthSpec, {**self.synth, "seed": self.seed})

    def classifier_config(self) -> ClassifierConfig:
        return _build("classifier", ClassifierConfig, {**self.classifier, "seed": self.seed})

    def vae_config(self) -> VaeTrainConfig:
        return _build("vae", VaeTrainConfig, {**self.vae, "seed": self.seed})

    def cf_config(self) -> CFConfig:
        return _build("cf", CFConfig, {**self.cf, "seed": self.seed})

    def baseline_config(self, method: str) -> BaselineConfig:
        return _build("baseline", BaselineConfig, {**self.baseline, "seed": self.seed, "method": method})

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    def csv_path(self) -> Path:
        return Path(self.data.csv) if self.data.csv else self.out_dir / "data.csv"

    def schema_path(self) -> Path:
        return Path(self.data.schema) if self.data.schema else self.out_dir / "schema.json"

    # -- serialization ---------------------------------------------------
    def to_dict(self) -> dict:
        d = asdict(self)
        d["classifier"]["hidden"] = list(d["classifier"]["hidden"])
        return d

    def validate(self) -> "RunConfig":
        """Build every typed view once so bad values surface early, naming the section."""
        self.synth_spec()
        self.classifier_config()
        self.vae_config()
        self.cf_config()
        for m in ("wachter", "dice_like"):
            self.baseline_config(m)
        if not 0.0 < self.data.test_fraction < 1.0:
            raise ConfigError("config field 'data.test_fraction' must be in (0, 1)")
        if self.evaluate.n_test < 0:
            raise ConfigError("config field 'evaluate.n_test' must be >= 0")
        if self.evaluate.eps_num < 0:
            raise ConfigError("config field 'evaluate.eps_num' must be >= 0")
        if self.ablation.n_test < 0:
            raise ConfigError("config field 'ablation.n_test' must be >= 0")
        if self.evaluate.chunk_size < 1:
            raise ConfigError("config field 'evaluate.chunk_size' must be >= 1")
        return self


def _section_defaults(name: str) -> dict:
    d = {f.name: _default(f) for f in section_fields(name)}
    if name == "classifier":
        d["hidden"] = list(d["hidden"])
    return d


def _build(name, cls, values):
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config section '{name}': {exc}") from exc


def set_field(cfg: RunConfig, path: str, value) -> None:
    """Assign ``section.field`` (or a top-level field) with type checking."""
    parts = path.split(".")
    if len(parts) == 1:
        if path not in ("seed", "out"):
            raise ConfigError(f"unknown config field '{path}'")
        setattr(cfg, path, _coerce(path, value, getattr(RunConfig(), path)))
        return
    if len(parts) != 2 or parts[0] not in SECTIONS:
        raise ConfigError(f"unknown config field '{path}'")
    sec, key = parts
    known = {f.name: f for f in section_fields(sec)}
    if key not in known:
        raise ConfigError(f"unknown config field '{path}'")
    default = _default(known[key])
    if isinstance(default, tuple):
        default = list(default)
    value = _coerce(path, value, default)
    target = getattr(cfg, sec)
    if isinstance(target, dict):
        target[key] = value
    else:
        setattr(cfg, sec, replace(target, **{key: value}))


def from_dict(d: dict) -> RunConfig:
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    cfg = RunConfig()
    for key, value in d.items():
        if key in SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"config field '{key}' must be an object")
            for sub, v in value.items():
                set_field(cfg, f"{key}.{sub}", v)
        else:
            set_field(cfg, key, value)
    return cfg


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return from_dict(d)


def dump_config(cfg: RunConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2) + "\n"


def override_paths() -> list[str]:
    """Every settable ``section.field`` path, for generating CLI flags."""
    out = ["seed", "out"]
    for name in SECTIONS:
        out.extend(f"{name}.{f.name}" for f in section_fields(name))
    return out
