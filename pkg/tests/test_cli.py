import csv
import json

import pytest
from filelock import FileLock

from clrnet.arch import preset
from clrnet.backbone import build_network, freeze, state_hash
from clrnet.checkpoint import load_backbone, save_adapter, save_backbone
from clrnet.cli import main
from clrnet.clr import make_adapter
from clrnet.data.synthetic import write_synthetic_idx


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    return {
        "digits": write_synthetic_idx(root, "digits", 120, 60, seed=1),
        "clothing": write_synthetic_idx(root, "clothing", 120, 60, seed=0),
    }


def source(paths):
    return {"format": "idx", **{k: str(v) for k, v in paths.items()}}


def write_config(path, data, out, **extra):
    doc = {
        "out_dir": str(out),
        "global_seed": 3,
        "deterministic": True,
        "backbone": {"arch": "tinynet", "epochs": 1, "batch_size": 32, "dataset": source(data["clothing"])},
        "tasks": {"dataset": source(data["digits"]), "generator": {"kind": "pixel_permute", "n_tasks": 3},
                  "train_size": 40, "test_size": 20},
        "train": {"epochs": 1, "batch_size": 16},
        "report": {"bootstrap": {"t_values": [1, 3], "n_resamples": 500, "with_replacement": False}},
    }
    for key, value in extra.items():
        doc[key] = {**doc.get(key, {}), **value} if isinstance(value, dict) else value
    path.write_text(json.dumps(doc))
    return path


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    monkeypatch.delenv("CLR_OUT_DIR", raising=False)
    monkeypatch.delenv("CLR_SEED", raising=False)


def test_pretrain_epochs_zero_is_seeded_init(tmp_path, data):
    cfg = write_config(tmp_path / "c.json", data, tmp_path / "run", backbone={"epochs": 0, "seed": 4})
    assert main(["pretrain", "--config", str(cfg)]) == 0
    st = load_backbone(tmp_path / "run" / "backbone.ckpt")
    assert state_hash(st) == state_hash(freeze(build_network(preset("tinynet"), 4)))
    assert st.provenance["epochs"] == 0


def test_pretrain_rerun_is_bitwise_identical(tmp_path, data):
    cfg = write_config(tmp_path / "c.json", data, tmp_path / "a")
    assert main(["pretrain", "--config", str(cfg), "--deterministic"]) == 0
    assert main(["pretrain", "--config", str(cfg), "--out", str(tmp_path / "b"), "--deterministic"]) == 0
    assert (tmp_path / "a" / "backbone.ckpt").read_bytes() == (tmp_path / "b" / "backbone.ckpt").read_bytes()
    rows = list(csv.DictReader(open(tmp_path / "a" / "pretrain_log.csv")))
    assert [r["epoch"] for r in rows] == ["1"]


def test_missing_dataset_path_is_usage_error(tmp_path, data, capsys):
    cfg = write_config(tmp_path / "c.json", data, tmp_path / "run")
    doc = json.loads(cfg.read_text())
    doc["backbone"]["dataset"]["train_images"] = str(tmp_path / "nowhere")
    cfg.write_text(json.dumps(doc))
    assert main(["pretrain", "--config", str(cfg)]) == 2
    assert "backbone.dataset.train_images" in capsys.readouterr().err


def test_learn_needs_backbone(tmp_path, data):
    cfg = write_config(tmp_path / "c.json", data, tmp_path / "run")
    assert main(["learn", "--config", str(cfg)]) == 3


@pytest.fixture(scope="module")
def pretrained(tmp_path_factory, data):
    root = tmp_path_factory.mktemp("pre")
    cfg = write_config(root / "c.json", data, root / "run")
    assert main(["pretrain", "--config", str(cfg)]) == 0
    return root / "run" / "backbone.ckpt"


def fresh_run(tmp_path, data, pretrained, name="run", **extra):
    out = tmp_path / name
    out.mkdir()
    (out / "backbone.ckpt").write_bytes(pretrained.read_bytes())
    return write_config(tmp_path / f"{name}.json", data, out, **extra), out


def test_learn_resume_and_report(tmp_path, data, pretrained, capsys):
    cfg_a, run_a = fresh_run(tmp_path, data, pretrained, "a")
    cfg_b, run_b = fresh_run(tmp_path, data, pretrained, "b")
    assert main(["learn", "--config", str(cfg_a)]) == 0
    assert main(["learn", "--config", str(cfg_b), "--stop-after", "2"]) == 0
    assert main(["learn", "--config", str(cfg_b), "--resume"]) == 0
    assert (run_a / "accuracy_matrix.csv").read_bytes() == (run_b / "accuracy_matrix.csv").read_bytes()
    assert sorted(p.name for p in run_a.glob("task*.adapter")) == [f"task00{i}.adapter" for i in range(3)]
    assert (run_a / "tasks.csv").exists() and (run_a / "config.json").exists()

    assert main(["report", str(run_a)]) == 0
    assert "0.59%" in capsys.readouterr().out
    assert len(list(csv.DictReader(open(run_a / "avg_curve.csv")))) == 3
    assert all(float(r["forgetting"]) == 0 for r in csv.DictReader(open(run_a / "forgetting.csv")))
    boot = {r["t"]: r for r in csv.DictReader(open(run_a / "bootstrap.csv"))}
    assert float(boot["3"]["std"]) == 0.0 and boot["3"]["with_replacement"] == "false"


def test_resume_without_prior_state_is_fresh_run(tmp_path, data, pretrained):
    cfg, run = fresh_run(tmp_path, data, pretrained, "r", tasks={"generator": {"kind": "pixel_permute", "n_tasks": 2}})
    assert main(["learn", "--config", str(cfg), "--resume"]) == 0
    assert len((run / "accuracy_matrix.csv").read_text().splitlines()) == 1 + 3


def test_resume_with_changed_config_is_rejected(tmp_path, data, pretrained):
    cfg, run = fresh_run(tmp_path, data, pretrained, "r")
    assert main(["learn", "--config", str(cfg), "--stop-after", "1"]) == 0
    doc = json.loads(cfg.read_text())
    doc["train"]["lr"] = 0.5
    cfg.write_text(json.dumps(doc))
    assert main(["learn", "--config", str(cfg), "--resume"]) == 2


def test_duplicate_task_is_usage_error(tmp_path, data, pretrained):
    entry = {"name": "d", "source": source(data["digits"]), "train_size": 20, "test_size": 10}
    cfg, _ = fresh_run(tmp_path, data, pretrained, "d")
    doc = json.loads(cfg.read_text())
    doc["tasks"] = {"datasets": [entry, entry]}
    cfg.write_text(json.dumps(doc))
    assert main(["learn", "--config", str(cfg)]) == 2


def test_eval_zero_head_and_determinism(tmp_path, data, pretrained, capsys):
    backbone = load_backbone(pretrained)
    ad = make_adapter(backbone, "standard", 10, seed=0, task_id=1)
    ad.head_weight.data[:] = 0
    ad.head_bias.data[:] = 0
    save_adapter(tmp_path / "task001.adapter", ad)
    cfg = write_config(tmp_path / "c.json", data, tmp_path / "unused")
    argv = ["eval", "--config", str(cfg), "--backbone", str(pretrained),
            "--adapter", str(tmp_path / "task001.adapter"), "--task-id", "1"]
    assert main(argv) == 0
    first = capsys.readouterr().out
    assert main(argv) == 0
    assert capsys.readouterr().out == first
    correct, total, acc = first.split()
    assert int(total) == 20 and int(correct) == 2  # class 0 holds 2 of 20 stratified samples
    assert float(acc) == pytest.approx(0.1)

    direct = ["eval", "--backbone", str(pretrained), "--adapter", str(tmp_path / "task001.adapter"),
              "--images", str(data["digits"]["test_images"]), "--labels", str(data["digits"]["test_labels"])]
    assert main(direct) == 0
    c, t, _ = capsys.readouterr().out.split()
    assert (int(c), int(t)) == (6, 60)


def test_eval_arch_mismatch_exit_3(tmp_path, pretrained):
    other = freeze(build_network(preset("tinynet"), 0))
    foreign = freeze(build_network(preset("resnet18-lite", (1, 16, 16), 10), 0))
    save_adapter(tmp_path / "x.adapter", make_adapter(foreign, "standard", 2, seed=0))
    save_backbone(tmp_path / "b.ckpt", other)
    assert main(["eval", "--backbone", str(tmp_path / "b.ckpt"), "--adapter", str(tmp_path / "x.adapter"),
                 "--images", "a", "--labels", "b"]) == 3


def test_corrupt_checkpoint_exit_4(tmp_path, pretrained):
    raw = bytearray(pretrained.read_bytes())
    raw[30] ^= 1
    (tmp_path / "bad.ckpt").write_bytes(bytes(raw))
    assert main(["eval", "--backbone", str(tmp_path / "bad.ckpt"), "--adapter", "x"]) == 4


def test_locked_run_dir_exit_3(tmp_path, data):
    cfg = write_config(tmp_path / "c.json", data, tmp_path / "run")
    (tmp_path / "run").mkdir()
    with FileLock(str(tmp_path / "run" / ".lock")):
        assert main(["pretrain", "--config", str(cfg)]) == 3


def test_env_override_and_usage_errors(tmp_path, data, monkeypatch):
    cfg = write_config(tmp_path / "c.json", data, tmp_path / "ignored", backbone={"epochs": 0})
    monkeypatch.setenv("CLR_OUT_DIR", str(tmp_path / "env"))
    assert main(["pretrain", "--config", str(cfg)]) == 0
    assert (tmp_path / "env" / "backbone.ckpt").exists()
    assert main(["pretrain", "--config", str(tmp_path / "missing.json")]) == 2
    assert main(["frobnicate"]) == 2


def test_synth_subcommand(tmp_path, capsys):
    assert main(["synth", "clothing", str(tmp_path), "--train", "10", "--test", "5"]) == 0
    assert (tmp_path / "clothing-train-images-idx3-ubyte").exists()
