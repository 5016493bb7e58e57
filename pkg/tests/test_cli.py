import json

import pytest

from prepsense.cli import main

from .conftest import write_config


def run_cli(*argv):
    return main([str(a) for a in argv])


@pytest.fixture()
def staged(tmp_path, dataset_files):
    """Paths for a stage-by-stage CLI walk over the fixture corpus."""
    return {
        "src": dataset_files["dir"],
        "dataset": tmp_path / "out" / "dataset.jsonl",
        "cache": tmp_path / "out" / "cache",
        "choices": tmp_path / "out" / "choices.jsonl",
        "models": tmp_path / "out" / "models",
        "report": tmp_path / "out" / "report.json",
        "plots": tmp_path / "out" / "plots",
    }


def test_stagewise_cli_pipeline(staged, capsys):
    assert run_cli("ingest", "--in", staged["src"], "--format", "native_jsonl",
                   "--out", staged["dataset"]) == 0
    out = capsys.readouterr().out
    assert "instances: 65" in out
    assert "prepositions: 4" in out

    assert run_cli("embed", "--dataset", staged["dataset"],
                   "--model", "hash:layers=4,dim=32",
                   "--cache", staged["cache"]) == 0
    assert "computed: 65" in capsys.readouterr().out

    assert run_cli("--seed", "11", "select-layers", "--dataset", staged["dataset"],
                   "--cache", staged["cache"], "--out", staged["choices"],
                   "--hidden", "24", "--max-epochs", "40") == 0
    assert staged["choices"].exists()

    assert run_cli("--seed", "11", "train", "--dataset", staged["dataset"],
                   "--cache", staged["cache"], "--choices", staged["choices"],
                   "--out", staged["models"], "--hidden", "24",
                   "--max-epochs", "40") == 0
    assert len(list(staged["models"].glob("*.ckpt"))) == 4

    assert run_cli("evaluate", "--dataset", staged["dataset"],
                   "--cache", staged["cache"], "--models", staged["models"],
                   "--out", staged["report"]) == 0
    out = capsys.readouterr().out
    assert "macro accuracy:" in out
    payload = json.loads(staged["report"].read_text())
    assert payload["macro_accuracy"] >= 0.8

    assert run_cli("report", "--in", staged["report"], "--plots", staged["plots"],
                   "--choices", staged["choices"]) == 0
    index = json.loads((staged["plots"] / "index.json").read_text())
    assert len(index["figures"]) >= 6  # confusion + layer plot per preposition


def test_embed_idempotent_cli(staged, capsys):
    run_cli("ingest", "--in", staged["src"], "--out", staged["dataset"])
    run_cli("embed", "--dataset", staged["dataset"], "--model", "hash",
            "--cache", staged["cache"])
    capsys.readouterr()
    run_cli("embed", "--dataset", staged["dataset"], "--model", "hash",
            "--cache", staged["cache"])
    assert "computed: 0  skipped: 65" in capsys.readouterr().out


def test_tag_cli_inline_and_json(staged, tmp_path, capsys):
    run_cli("ingest", "--in", staged["src"], "--out", staged["dataset"])
    run_cli("embed", "--dataset", staged["dataset"],
            "--model", "hash:layers=4,dim=32", "--cache", staged["cache"])
    run_cli("--seed", "11", "select-layers", "--dataset", staged["dataset"],
            "--cache", staged["cache"], "--out", staged["choices"],
            "--hidden", "24", "--max-epochs", "40")
    run_cli("--seed", "11", "train", "--dataset", staged["dataset"],
            "--cache", staged["cache"], "--choices", staged["choices"],
            "--out", staged["models"], "--hidden", "24", "--max-epochs", "40")
    capsys.readouterr()

    out_json = tmp_path / "tags.json"
    assert run_cli("tag", "--models", staged["models"],
                   "--model", "hash:layers=4,dim=32",
                   "--text", "he cut bread with a knife",
                   "--out", out_json) == 0
    inline = capsys.readouterr().out
    assert "with[" in inline
    payload = json.loads(out_json.read_text())
    assert payload[0]["annotations"][0]["preposition"] == "with"

    assert run_cli("tag", "--models", staged["models"],
                   "--model", "hash:layers=4,dim=32",
                   "--text", "no prepositions here", "--json") == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["annotations"] == []


def test_augment_cli(tmp_path, capsys):
    dataset = tmp_path / "aug.jsonl"
    dataset.write_text(json.dumps({
        "id": "of.cap.001",
        "tokens": ["Mumbai", "is", "the", "capital", "of", "India"],
        "head": [4, 4], "prep": "of", "sense": "6(3)", "split": "train",
    }) + "\n", encoding="utf-8")
    lexicon = tmp_path / "lexicon.jsonl"
    lexicon.write_text('{"class": "LOCATION", "words": ["Chicago", "Delhi"]}\n')
    rules = tmp_path / "rules.jsonl"
    rules.write_text('{"id": "of.cap.001", "index": 0, "class": "LOCATION"}\n')
    out = tmp_path / "augmented.jsonl"

    assert run_cli("augment", "--dataset", dataset, "--rules", rules,
                   "--lexicon", lexicon, "--out", out, "--cap", "16") == 0
    assert "2 variants added" in capsys.readouterr().out
    lines = [json.loads(line) for line in out.read_text().splitlines()]
    assert len(lines) == 3
    assert all(rec["sense"] == "6(3)" for rec in lines)


def test_ingest_validation_error_exit_code(tmp_path, capsys):
    empty = tmp_path / "empty"
    empty.mkdir()
    code = run_cli("ingest", "--in", empty, "--out", tmp_path / "x.jsonl")
    assert code == 2
    assert "error:" in capsys.readouterr().err


def test_evaluate_stale_cache_exit_code(staged, tmp_path, capsys):
    run_cli("ingest", "--in", staged["src"], "--out", staged["dataset"])
    run_cli("embed", "--dataset", staged["dataset"],
            "--model", "hash:layers=4,dim=32", "--cache", staged["cache"])
    run_cli("--seed", "11", "select-layers", "--dataset", staged["dataset"],
            "--cache", staged["cache"], "--out", staged["choices"],
            "--hidden", "24", "--max-epochs", "40")
    run_cli("--seed", "11", "train", "--dataset", staged["dataset"],
            "--cache", staged["cache"], "--choices", staged["choices"],
            "--out", staged["models"], "--hidden", "24", "--max-epochs", "40")
    capsys.readouterr()
    other_cache = tmp_path / "fresh-cache"
    run_cli("embed", "--dataset", staged["dataset"], "--model",
            "hash:layers=4,dim=32,seed=9", "--cache", other_cache)
    code = run_cli("evaluate", "--dataset", staged["dataset"],
                   "--cache", other_cache, "--models", staged["models"],
                   "--out", tmp_path / "r.json")
    assert code == 3
    assert "stage failure" in capsys.readouterr().err


# -- run-all ------------------------------------------------------------------


def manifest_stages(workdir):
    manifest = json.loads((workdir / "reports" / "manifest.json").read_text())
    return {name: entry["executed"] for name, entry in manifest["stages"].items()}


def test_run_all_fresh_then_skip(tmp_path, dataset_files, capsys):
    config_path = write_config(tmp_path, dataset_files["dir"])
    workdir = tmp_path / "run"

    assert run_cli("--config", config_path, "run-all") == 0
    stages = manifest_stages(workdir)
    assert set(stages) == {"ingest", "embed", "select-layers", "train",
                           "evaluate", "report"}
    assert all(stages.values())
    for artifact in ("dataset.jsonl", "inventory.jsonl", "cache/embed_report.json",
                     "models/train_report.json", "reports/report.json",
                     "reports/plots/index.json"):
        assert (workdir / artifact).exists(), artifact

    # traceability: the manifest ties artifacts to config and encoder identity
    manifest = json.loads((workdir / "reports" / "manifest.json").read_text())
    assert manifest["config"]["encoder"] == "hash:layers=4,dim=32"
    assert manifest["config"]["seed"] == 13
    assert manifest["encoder_fingerprint"]
    report = json.loads((workdir / "reports" / "report.json").read_text())
    assert report["metadata"]["encoder_fingerprint"] == manifest["encoder_fingerprint"]
    for entry in manifest["stages"].values():
        assert entry["outputs"]
    capsys.readouterr()

    assert run_cli("--config", config_path, "run-all") == 0
    stages = manifest_stages(workdir)
    assert not any(stages.values())  # fully up to date


def test_run_all_cache_deletion_triggers_downstream(tmp_path, dataset_files, capsys):
    import shutil

    config_path = write_config(tmp_path, dataset_files["dir"])
    workdir = tmp_path / "run"
    run_cli("--config", config_path, "run-all")
    shutil.rmtree(workdir / "cache")
    capsys.readouterr()

    assert run_cli("--config", config_path, "run-all") == 0
    stages = manifest_stages(workdir)
    assert stages["ingest"] is False
    assert stages["embed"] is True
    assert stages["select-layers"] is True
    assert stages["train"] is True
    assert stages["evaluate"] is True
    assert stages["report"] is True


def test_run_all_without_config_is_validation_error(capsys):
    assert run_cli("run-all") == 2
    assert "needs --config" in capsys.readouterr().err


def test_config_supplies_stage_defaults(tmp_path, dataset_files, capsys):
    """Each stage subcommand can run off the shared config file alone."""
    config_path = write_config(tmp_path, dataset_files["dir"])
    workdir = tmp_path / "run"
    for stage in ("ingest", "embed", "select-layers", "train", "evaluate",
                  "report"):
        assert run_cli("--config", config_path, stage) == 0, stage
    out = capsys.readouterr().out
    assert "macro accuracy:" in out
    assert (workdir / "reports" / "report.json").exists()
    assert (workdir / "reports" / "plots" / "index.json").exists()

    # flags still win over the config
    alt_choices = tmp_path / "alt-choices.jsonl"
    assert run_cli("--config", config_path, "select-layers",
                   "--out", alt_choices) == 0
    assert alt_choices.exists()


def test_missing_required_flag_without_config(capsys):
    assert run_cli("embed") == 2
    assert "missing --dataset" in capsys.readouterr().err


def test_config_rejects_unknown_keys(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"raw_in": "x", "typo_key": 1}', encoding="utf-8")
    assert run_cli("--config", bad, "run-all") == 2
    assert "unknown config keys" in capsys.readouterr().err


def test_seed_flag_accepted_after_subcommand(tmp_path, dataset_files):
    dataset = tmp_path / "d.jsonl"
    assert run_cli("ingest", "--in", dataset_files["dir"], "--out", dataset,
                   "--seed", "21") == 0
    a = dataset.read_text()
    assert run_cli("--seed", "21", "ingest", "--in", dataset_files["dir"],
                   "--out", dataset) == 0
    assert dataset.read_text() == a  # same seed, same carve, either position
