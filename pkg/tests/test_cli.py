import json
import os

import pytest

from fewshot.cli import main, parse_run_config
from fewshot.errors import ConfigError

TINY_RUN = {
    "model": {"widths": [4, 4, 4, 4], "rot_widths": [4, 4], "loc_hidden": 8},
    "train": {"epochs": 2, "iterations_per_epoch": 2, "batch_labeled": 8, "val_episodes": 3,
              "lr": 0.02, "decay_every": 1, "ssl_task": "rotation"},
    "eval": {"num_episodes": 4},
    "seed": 3,
}


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    path = root / "d.fsds"
    assert main(["make-synth", "--out", str(path), "--base", "6", "--val", "5", "--novel", "5",
                 "--per-class", "30", "--seed", "7"]) == 0
    cfg = root / "run.json"
    cfg.write_text(json.dumps(TINY_RUN))
    return root, path, cfg


def read(path):
    with open(path, "rb") as fh:
        return fh.read()


class TestMakeSynth:
    def test_counts_and_determinism(self, data, tmp_path, capsys):
        _, path, _ = data
        again = tmp_path / "again.fsds"
        capsys.readouterr()
        assert main(["make-synth", "--out", str(again), "--base", "6", "--val", "5", "--novel", "5",
                     "--per-class", "30", "--seed", "7"]) == 0
        out = capsys.readouterr().out
        assert "480 images" in out and "base: 6 classes, 180 images" in out
        assert read(again) == read(path)

    def test_capacity_error_exit_2(self, tmp_path):
        assert main(["make-synth", "--out", str(tmp_path / "x.fsds"), "--base", "1000000"]) == 2

    def test_unwritable_exit_3(self, tmp_path):
        assert main(["make-synth", "--out", str(tmp_path / "missing" / "x.fsds"), "--base", "2",
                     "--val", "1", "--novel", "2", "--per-class", "2"]) == 3


class TestTrainEval:
    def test_train_artifacts_and_replay(self, data, tmp_path, capsys):
        _, path, cfg = data
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["train", "--config", str(cfg), "--dataset", str(path), "--out", str(a), "--evaluate"]) == 0
        log = [json.loads(line) for line in (a / "train_log.jsonl").read_text().splitlines()]
        assert [r["epoch"] for r in log] == [0, 1]
        assert {"loss_total", "loss_few", "loss_self", "lr", "val_acc"} <= set(log[0])
        eff = json.loads((a / "effective_config.json").read_text())
        assert eff["train"]["seed"] == 3 and eff["eval"]["base_seed"] == 3
        assert eff["train"]["rotation_augmentation"] is True and eff["model"]["image_size"] == 32
        # replay from the effective config alone
        assert main(["train", "--config", str(a / "effective_config.json"), "--out", str(b), "--evaluate"]) == 0
        for name in ("checkpoint/manifest.json", "checkpoint/params.bin", "eval_report.json",
                     "effective_config.json", "train_log.jsonl"):
            assert read(a / name) == read(b / name), name
        capsys.readouterr()

    def test_eval_output_and_determinism(self, data, tmp_path, capsys):
        _, path, cfg = data
        run = tmp_path / "run"
        assert main(["train", "--config", str(cfg), "--dataset", str(path), "--out", str(run)]) == 0
        capsys.readouterr()
        args = ["eval", "--checkpoint", str(run / "checkpoint"), "--dataset", str(path), "--episodes", "6"]
        assert main(args + ["--out", str(tmp_path / "r.json")]) == 0
        first = capsys.readouterr().out
        assert main(args) == 0
        assert capsys.readouterr().out == first
        summary, body = first.split("\n", 1)
        assert "5-way 1-shot novel" in summary and "±" in summary
        report = json.loads(body)
        assert report == json.loads((tmp_path / "r.json").read_text())
        assert report["protocol"]["m_query"] == 15 and len(report["episode_acc"]) == 6

        assert main(args[:-1] + ["1"]) == 0
        single = capsys.readouterr().out
        rep1 = json.loads(single.split("\n", 1)[1])
        assert rep1["ci95_defined"] is False and rep1["mean"] == rep1["episode_acc"][0]
        assert "undefined" in single.split("\n", 1)[0]

    def test_inspect(self, data, tmp_path, capsys):
        _, path, cfg = data
        run = tmp_path / "run"
        main(["train", "--config", str(cfg), "--dataset", str(path), "--out", str(run)])
        capsys.readouterr()
        assert main(["inspect", "--checkpoint", str(run / "checkpoint")]) == 0
        out = capsys.readouterr().out
        line = next(x for x in out.splitlines() if x.startswith("parameters:"))
        count, analytic = line.split()[1], line.split()[-1].rstrip(")")
        assert count == analytic
        assert main(["inspect", "--dataset", str(path)]) == 0
        assert "novel: 5 classes, 150 images" in capsys.readouterr().out

        params = run / "checkpoint" / "params.bin"
        params.write_bytes(read(params)[:-4])
        assert main(["inspect", "--checkpoint", str(run / "checkpoint")]) == 3
        err = capsys.readouterr().err
        expected = json.loads((run / "checkpoint" / "manifest.json").read_text())["payload_bytes"]
        assert f"{expected - 4} bytes" in err and f"expects {expected}" in err

    def test_exit_codes(self, data, tmp_path, capsys):
        root, path, cfg = data
        bad = root / "bad.json"
        bad.write_text(json.dumps({**TINY_RUN, "extra": 1}))
        assert main(["train", "--config", str(bad), "--dataset", str(path), "--out", str(tmp_path / "x")]) == 2
        assert main(["train", "--config", str(cfg), "--dataset", str(path), "--out", str(tmp_path / "y"),
                     "--set", "train.divergence_threshold=0.001"]) == 4
        assert main(["train", "--config", str(cfg), "--dataset", str(root / "nope.fsds"),
                     "--out", str(tmp_path / "z")]) == 3
        garbage = root / "garbage.fsds"
        garbage.write_bytes(b"not a dataset")
        assert main(["inspect", "--dataset", str(garbage)]) == 3
        bare = tmp_path / "pn"
        assert main(["train", "--config", str(cfg), "--dataset", str(path), "--out", str(bare),
                     "--set", 'train.method="PN"']) == 0
        assert main(["eval", "--checkpoint", str(bare / "checkpoint"), "--dataset", str(path),
                     "--method", "CC", "--episodes", "2"]) == 2
        assert main(["eval", "--checkpoint", str(bare / "checkpoint"), "--dataset", str(path),
                     "--n-way", "9", "--episodes", "2"]) == 2
        capsys.readouterr()


class TestRunConfig:
    def test_defaults_materialized(self):
        cfg = parse_run_config({"seed": 5}, image_size=32)
        d = cfg.to_dict()
        assert d["train"]["lr"] == 0.1 and d["train"]["seed"] == 5 and d["eval"]["num_episodes"] == 2000
        assert d["model"]["widths"] == [64, 64, 64, 64]

    def test_overrides_and_rejections(self):
        cfg = parse_run_config({}, ["train.alpha=0.5", "model.widths=[8,8,8,8]", 'train.ssl_task="location"'])
        assert cfg.train.alpha == 0.5 and cfg.model.widths == [8] * 4 and cfg.train.patch_aux_loss
        for doc, sets in (({"bogus": {}}, ()), ({"train": {"lr_typo": 1}}, ()), ({}, ["noequals"]),
                          ({"seed": -1}, ()), ({"train": {"method": "X"}}, ())):
            with pytest.raises(ConfigError):
                parse_run_config(doc, sets)


def test_module_entry_point():
    import subprocess
    import sys
    out = subprocess.run([sys.executable, "-m", "fewshot", "--help"], capture_output=True, text=True,
                         env={**os.environ})
    assert out.returncode == 0 and "make-synth" in out.stdout


def test_shipped_schema_matches_config_sections(tmp_path):
    from dataclasses import fields
    from pathlib import Path

    from fewshot.cli import DatasetSection
    from fewshot.evaluation import EvalProtocol
    from fewshot.models import ModelConfig
    from fewshot.training import TrainConfig

    schema = json.loads((Path(__file__).parents[1] / "docs" / "run_config.schema.json").read_text())
    props = schema["properties"]
    for name, cls in (("dataset", DatasetSection), ("model", ModelConfig), ("train", TrainConfig),
                      ("eval", EvalProtocol)):
        assert set(props[name]["properties"]) == {f.name for f in fields(cls)}, name
    jsonschema = pytest.importorskip("jsonschema")
    doc = json.loads(parse_run_config(TINY_RUN, image_size=32).to_json())
    jsonschema.validate(doc, schema)
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate({**doc, "extra": 1}, schema)
