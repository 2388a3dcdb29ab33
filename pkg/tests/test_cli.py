import json
import subprocess
import sys

import cv2
import numpy as np
import pytest

from gioada.cli import RunManifest, main, parse_overrides

SMALL = ["--toy.n_source", "4", "--toy.n_target", "4", "--toy.n_eval", "3", "--toy.image_size=[16, 24]",
         "--train.max_steps", "3", "--model.tiny_width", "8", "--model.transform_width", "4",
         "--model.transform_blocks", "1", "--model.disc_width", "8"]


@pytest.fixture
def run_root(tmp_path, monkeypatch):
    monkeypatch.setenv("GIOADA_RUN_ROOT", str(tmp_path / "runs"))
    return tmp_path / "runs"


@pytest.fixture
def trained(tmp_path, run_root):
    run = tmp_path / "full"
    assert main(["train", "--variant", "full", "--run-dir", str(run), *SMALL]) == 0
    return run


def test_parse_overrides():
    assert parse_overrides(["--train.lr", "0.1", "--seed.x=3"]) == [("train.lr", "0.1"), ("seed.x", "3")]
    from gioada.cli import UsageError
    with pytest.raises(UsageError):
        parse_overrides(["--train.lr"])
    with pytest.raises(UsageError):
        parse_overrides(["stray"])


def test_train_writes_run_directory(trained, capsys):
    files = {p.name for p in trained.iterdir()}
    assert {"manifest.json", "checkpoint.pt", "model.pt", "train_log.jsonl", "metrics.json"} <= files
    manifest = json.loads((trained / "manifest.json").read_text())
    assert manifest["variant"] == "full" and manifest["config"]["train"]["max_steps"] == 3
    assert len((trained / "train_log.jsonl").read_text().splitlines()) == 3
    metrics = json.loads((trained / "metrics.json").read_text())
    assert 0 <= metrics["miou"] <= 1 and set(metrics["per_class"]) == {"sky", "road", "building", "obstacle"}


def test_train_default_run_dir_under_env_root(run_root, capsys):
    assert main(["train", "--variant", "na", *SMALL]) == 0
    (run,) = run_root.iterdir()
    assert run.name.startswith("na-")
    assert "target mIoU" in capsys.readouterr().out


def test_unknown_override_is_usage_error(capsys):
    assert main(["train", "--train.learning_rate", "1"]) == 2
    assert "valid keys" in capsys.readouterr().err


def test_bad_variant_and_argparse_errors(run_root):
    assert main(["train", "--variant", "everything", *SMALL]) == 2
    with pytest.raises(SystemExit) as e:
        main(["no-such-command"])
    assert e.value.code == 2


def test_missing_dataset_is_runtime_error(tmp_path, capsys):
    code = main(["train", "--data.source.layout", "vkitti", "--data.source.root", str(tmp_path / "nope"),
                 "--run-dir", str(tmp_path / "r"), *SMALL])
    assert code == 1 and "does not exist" in capsys.readouterr().err


def test_resume_with_changed_config_refused(trained, capsys):
    code = main(["train", "--variant", "full", "--run-dir", str(trained), "--resume", *SMALL, "--train.lr", "0.01"])
    assert code == 2 and "different configuration" in capsys.readouterr().err


def test_evaluate_outputs(trained, tmp_path, capsys):
    out = tmp_path / "eval"
    assert main(["evaluate", "--model", str(trained / "model.pt"), "--out", str(out), "--dump", "2", *SMALL]) == 0
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["n_images"] == 3
    header = (out / "table.md").read_text().splitlines()[0]
    assert [h.strip() for h in header.split("|")][1:] == ["sky", "road", "building", "obstacle", "mIoU"]
    pred = cv2.imread(str(sorted((out / "pred").iterdir())[0]))
    assert pred.shape == (16, 24, 3)
    assert len(list((out / "gt").iterdir())) == 2


def test_evaluate_class_set_mismatch(trained, capsys):
    assert main(["evaluate", "--model", str(trained / "model.pt"), "--classes", "vkitti"]) == 2
    assert "classes" in capsys.readouterr().err


def test_translate_outputs_8bit_images(trained, tmp_path):
    out = tmp_path / "tr"
    assert main(["translate", "--checkpoint", str(trained / "checkpoint.pt"), "--out", str(out), "--limit", "2",
                 *SMALL]) == 0
    imgs = sorted(out.iterdir())
    assert len(imgs) == 2
    arr = cv2.imread(str(imgs[0]), cv2.IMREAD_UNCHANGED)
    assert arr.dtype == np.uint8 and arr.shape == (16, 24, 3)


def test_translate_needs_transform_network(trained, tmp_path, capsys):
    assert main(["translate", "--checkpoint", str(trained / "model.pt"), "--out", str(tmp_path / "x"), *SMALL]) == 1
    assert "task network" in capsys.readouterr().err
    run = tmp_path / "joint"
    assert main(["train", "--variant", "joint", "--run-dir", str(run), *SMALL]) == 0
    assert main(["translate", "--checkpoint", str(run / "checkpoint.pt"), "--out", str(tmp_path / "y"), *SMALL]) == 1
    assert "no image transform" in capsys.readouterr().err


def test_ablate_caches_runs(run_root, capsys):
    args = ["ablate", "--variants", "na,joint", "--seeds", "0,1", *SMALL]
    assert main(args) == 0
    first = capsys.readouterr().out
    assert first.splitlines()[0].split() == ["na", "joint"]
    runs = sorted(p for p in (run_root / "ablate").iterdir() if p.is_dir())
    assert len(runs) == 4
    stamps = [(p / "checkpoint.pt").stat().st_mtime_ns for p in runs]
    assert main(args) == 0
    assert capsys.readouterr().out == first
    assert [(p / "checkpoint.pt").stat().st_mtime_ns for p in runs] == stamps
    summary = json.loads((run_root / "ablate" / "ablation_output.json").read_text())
    assert len(summary["per_seed"]["joint"]) == 2


def test_manifest_key_tracks_config():
    from gioada.core import load_config
    a = RunManifest("full", load_config())
    b = RunManifest("full", load_config(overrides=[("train.lr", "0.001")]))
    assert a.key() == RunManifest("full", load_config()).key() != b.key()
    assert a.key() != RunManifest("joint", load_config()).key()


def test_gen_toy_roundtrip(tmp_path):
    out = tmp_path / "toy"
    assert main(["gen-toy", "--out", str(out), *SMALL]) == 0
    assert len(list((out / "source" / "images").iterdir())) == 4
    assert not (out / "target" / "depth").exists()
    assert len(list((out / "target_val" / "labels").iterdir())) == 3
    # the written layout is readable back as a folder dataset
    run = tmp_path / "disk"
    code = main(["train", "--variant", "na", "--run-dir", str(run),
                 "--data.source.root", str(out / "source"), "--data.target.root", str(out / "target"),
                 "--data.eval.root", str(out / "target_val"), *SMALL])
    assert code == 0 and json.loads((run / "metrics.json").read_text())["n_images"] == 3


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "gioada.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "ablate" in res.stdout


def test_evaluate_perfect_oracle_scores_one(trained, tmp_path, monkeypatch):
    import gioada.cli as cli
    from gioada.core import load_config
    from gioada.data import toy_benchmark
    config = load_config(overrides=parse_overrides(SMALL))
    truth = {s.image.tobytes(): s.labels for s in toy_benchmark(config)["eval"]}

    def oracle(net, images, *a, **k):
        return np.stack([truth[im.tobytes()] for im in images]), None

    monkeypatch.setattr(cli, "predict_with", oracle)
    out = tmp_path / "oracle"
    assert main(["evaluate", "--model", str(trained / "model.pt"), "--out", str(out), "--dump", "0", *SMALL]) == 0
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["miou"] == 1.0 and metrics["pixel_accuracy"] == 1.0
