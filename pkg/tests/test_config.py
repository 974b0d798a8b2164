import json

import pytest

from latentcf.config import ConfigError, RunConfig, dump_config, from_dict, load_config, set_field


def test_defaults():
    cfg = RunConfig()
    v = cfg.vae_config()
    assert (v.epochs, v.beta_max, v.beta_min, v.tau) == (4000, 1e-3, 1e-5, 1.0)
    assert cfg.evaluate.n_test == 1000 and cfg.evaluate.eps_num == 1e-4
    assert cfg.ablation.values == [0.0, 0.25, 0.5, 0.75, 1.0]
    c = cfg.cf_config()
    assert (c.lambda_input, c.lambda_latent, c.max_steps) == (1.0, 1.0, 5000)


def test_seed_propagates_everywhere():
    cfg = from_dict({"seed": 7})
    assert {cfg.vae_config().seed, cfg.classifier_config().seed, cfg.cf_config().seed,
            cfg.baseline_config("wachter").seed, cfg.synth_spec().seed} == {7}


def test_roundtrip(tmp_path):
    cfg = from_dict({"seed": 3, "vae": {"epochs": 200}, "classifier": {"hidden": [8]},
                     "data": {"csv": "x.csv", "train_cap": None}})
    p = tmp_path / "c.json"
    p.write_text(dump_config(cfg))
    again = load_config(p)
    assert again.to_dict() == cfg.to_dict()
    assert again.classifier_config().hidden == (8,)
    assert again.data.train_cap is None


@pytest.mark.parametrize("doc,field", [
    ({"vae": {"epochz": 1}}, "vae.epochz"),
    ({"vae": {"epochs": "many"}}, "vae.epochs"),
    ({"cf": {"lambda_input": True}}, "cf.lambda_input"),
    ({"nope": 1}, "nope"),
    ({"vae": {"seed": 1}}, "vae.seed"),
    ({"evaluate": {"n_test": 1.5}}, "evaluate.n_test"),
])
def test_invalid_field_named(doc, field):
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        from_dict(doc)


def test_semantic_validation_names_section():
    cfg = from_dict({"vae": {"beta_min": 1.0}})
    with pytest.raises(ConfigError, match="vae"):
        cfg.validate()
    with pytest.raises(ConfigError, match="data.test_fraction"):
        from_dict({"data": {"test_fraction": 1.5}}).validate()


def test_bad_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(p)
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.json")


def test_set_field_coerces_ints_to_float():
    cfg = RunConfig()
    set_field(cfg, "cf.lambda_input", 0)
    assert cfg.cf_config().lambda_input == 0.0 and isinstance(cfg.cf["lambda_input"], float)
    set_field(cfg, "vae.epochs", 200.0)
    assert cfg.vae["epochs"] == 200


def test_dump_is_json():
    d = json.loads(dump_config(RunConfig()))
    assert d["vae"]["epochs"] == 4000 and "seed" not in d["vae"]
