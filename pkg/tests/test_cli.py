import json
import shutil

import pytest

from latentcf.cli import main

FAST = ["--synth-n-rows", "300", "--epochs", "3", "--classifier-epochs", "10",
        "--cf-max-steps", "40", "--baseline-max-steps", "40", "--n", "8"]


def run(out, *args):
    return main([args[0], "--out", str(out), "--seed", "2", *FAST, *args[1:]])


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "demo"
    assert run(out, "synth") == 0
    assert run(out, "train") == 0
    for m in ("tabcf", "wachter", "dice_like"):
        assert run(out, "generate", "--method", m) == 0
    return out


def test_train_outputs(trained):
    for name in ("classifier.ckpt", "vae.ckpt", "training_curve.tsv", "training_curve.svg", "train_report.json",
                 "preprocessor.json", "split.json", "config.json"):
        assert (trained / name).exists(), name
    lines = (trained / "training_curve.tsv").read_text().splitlines()
    assert lines[0].split("\t") == ["epoch", "beta", "loss", "recon", "kl"] and len(lines) == 4


def test_result_records(trained):
    recs = [json.loads(line) for line in (trained / "results_tabcf.jsonl").read_text().splitlines()]
    assert len(recs) == 8
    r = recs[0]
    for key in ("instance_id", "method", "valid", "steps", "losses", "original", "counterfactual", "x0",
                "x_cf", "schema_hash"):
        assert key in r
    assert set(r["original"]) == {"num0", "num1", "num2", "cat0", "cat1", "cat2"}


def test_methods_share_test_instances(trained):
    ids = {}
    for m in ("tabcf", "wachter", "dice_like"):
        ids[m] = [json.loads(line)["instance_id"] for line in (trained / f"results_{m}.jsonl").read_text().splitlines()]
    assert ids["tabcf"] == ids["wachter"] == ids["dice_like"]


def test_evaluate_and_average(trained, tmp_path, capsys):
    other = tmp_path / "second"
    shutil.copytree(trained, other)
    files = [str(trained / "results_tabcf.jsonl"), str(trained / "results_wachter.jsonl"),
             str(other / "results_tabcf.jsonl")]
    assert main(["evaluate", "--out", str(tmp_path / "ev"), "--average", *files]) == 0
    table = capsys.readouterr().out
    assert "Sparsity Cat" in table and "eps_num" in table
    wachter_line = [ln for ln in table.splitlines() if " wachter " in f" {ln} " and ln.startswith("demo")][0]
    assert wachter_line.split()[5] == "-"
    doc = json.loads((tmp_path / "ev" / "metrics.json").read_text())
    reps = doc["reports"]
    avg = [r for r in reps if r["dataset"] == "average" and r["method"] == "tabcf"][0]
    assert avg["validity"] == pytest.approx(reps[0]["validity"])
    assert (tmp_path / "ev" / "metrics.tsv").read_text().startswith("dataset\tmethod")
    assert (tmp_path / "ev" / "utilization_demo.svg").exists()


def test_schema_hash_mismatch(trained, tmp_path, capsys):
    bad = tmp_path / "bad"
    shutil.copytree(trained, bad)
    path = bad / "results_tabcf.jsonl"
    lines = path.read_text().splitlines()
    rec = json.loads(lines[0])
    rec["schema_hash"] = "0000"
    path.write_text("\n".join([json.dumps(rec)] + lines[1:]) + "\n")
    assert main(["evaluate", "--out", str(bad), str(path)]) == 1
    assert "schema hash" in capsys.readouterr().err


def test_ablate_grid(trained, capsys):
    assert run(trained, "ablate", "--ablation-n-test", "3", "--cf-max-steps", "20") == 0
    doc = json.loads((trained / "ablation.json").read_text())
    assert len(doc["cells"]) == 25
    assert {(c["lambda_input"], c["lambda_latent"]) for c in doc["cells"]} == {
        (a, b) for a in doc["values"] for b in doc["values"]}
    assert (trained / "ablation.svg").exists() and "lambda_input" in capsys.readouterr().out


def test_bias_report(trained, capsys):
    assert run(trained, "bias-report") == 0
    doc = json.loads((trained / "bias_report.json").read_text())
    w = doc["methods"]["wachter"]
    assert w["categorical_utilization"] == 0.0
    assert (trained / "bias_utilization.svg").exists()
    out = capsys.readouterr().out
    assert "cat_mean" in out


def test_bias_report_needs_baseline(trained, tmp_path):
    assert main(["bias-report", "--out", str(tmp_path), str(trained / "results_tabcf.jsonl")]) == 1


def test_determinism_byte_identical(tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"r{k}" / "same"
        assert run(out, "synth") == 0 and run(out, "train") == 0
        assert run(out, "generate", "--method", "tabcf") == 0
        assert run(out, "generate", "--method", "dice_like") == 0
        outs.append(out)
    for name in ("data.csv", "classifier.ckpt", "vae.ckpt", "results_tabcf.jsonl", "results_dice_like.jsonl",
                 "training_curve.svg", "selection_n8.json"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name


def test_missing_checkpoint_error(tmp_path, capsys):
    assert main(["generate", "--out", str(tmp_path / "empty")]) == 1
    assert "missing" in capsys.readouterr().err


def test_empty_pool_reports_n0(trained, capsys):
    assert main(["generate", "--out", str(trained), "--seed", "2", "--n", "0"]) == 1
    assert "n=0" in capsys.readouterr().err
    assert (trained / "results_tabcf.jsonl").exists()
    assert run(trained, "generate", "--method", "tabcf") == 0  # restore for other tests


def test_invalid_config_field(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"vae": {"epochz": 3}}))
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert "vae.epochz" in capsys.readouterr().err
    with pytest.raises(SystemExit) as e:
        main(["train", "--vae-bogus", "1"])
    assert e.value.code != 0


def test_overrides_and_show_config(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seed": 4, "vae": {"epochs": 50}}))
    assert main(["show-config", "--config", str(cfg), "--epochs", "200", "--cf-lambda-input", "0.5",
                 "--classifier-hidden", "[16,16]"]) == 0
    d = json.loads(capsys.readouterr().out)
    assert d["seed"] == 4 and d["vae"]["epochs"] == 200 and d["cf"]["lambda_input"] == 0.5
    assert d["classifier"]["hidden"] == [16, 16]
    assert main(["--seed", "9", "show-config"]) == 0
    assert json.loads(capsys.readouterr().out)["seed"] == 9
