import json

import numpy as np
import pytest
from PIL import Image

from bornovit.checkpoint import load_checkpoint, make_checkpoint, save_checkpoint
from bornovit.cli import main
from bornovit.model import ModelConfig, init_params
from bornovit.synthetic import make_glyph_samples, write_image_folder

TOY_CONFIG = {
    "model": {"image_size": 32, "patch_size": 8, "embed_dim": 32, "depth": 2, "num_heads": 2,
              "mlp_hidden_dim": 64},
    "train": {"learning_rate": 5e-4, "batch_size": 8, "max_epochs": 2, "patience_limit": 10},
    "augment": {"enabled": False},
}


@pytest.fixture(scope="module")
def toy_data(tmp_path_factory):
    return write_image_folder(tmp_path_factory.mktemp("data"), make_glyph_samples(3, 8, size=32, seed=0))


@pytest.fixture(scope="module")
def toy_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "run.json"
    path.write_text(json.dumps(TOY_CONFIG))
    return path


@pytest.fixture(scope="module")
def trained(toy_data, toy_config, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    code = main(["train", "--config", str(toy_config), "--data-dir", str(toy_data), "--out", str(out),
                 "--seed", "0"])
    assert code == 0
    return out


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert "train" in capsys.readouterr().out


def test_unknown_subcommand_is_usage_error():
    assert main(["frobnicate"]) == 2


def test_profile_default(capsys):
    assert main(["profile"]) == 0
    out = capsys.readouterr().out
    assert "653,706" in out and "162,294,016" in out


def test_profile_json_for_84_classes(capsys):
    assert main(["profile", "--num-classes", "84", "--json"]) == 0
    report = json.loads(capsys.readouterr().out)
    head = next(r for r in report["rows"] if r["key"] == "head")
    assert head["params"] == 10_836


def test_profile_bad_config(tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"model": {"embdim": 64}}))
    assert main(["profile", "--config", str(cfg)]) == 2


def test_train_writes_fold_artifacts(trained):
    for r in range(5):
        assert load_checkpoint(trained / f"fold{r}.bvit").class_names == ["bar", "pillar", "ring"]
        lines = (trained / f"fold{r}_metrics.jsonl").read_text().splitlines()
        assert len(lines) == 2 and json.loads(lines[0])["fold"] == r
    summary = json.loads((trained / "summary.json").read_text())
    assert summary["k"] == 5 and len(summary["folds"]) == 5
    assert summary["model_config"]["num_classes"] == 3


def test_train_missing_data_dir(tmp_path, toy_config):
    assert main(["train", "--config", str(toy_config), "--data-dir", str(tmp_path / "none"),
                 "--out", str(tmp_path / "o")]) == 3


def test_eval_report(trained, toy_data, tmp_path, capsys):
    assert main(["eval", "--checkpoint", str(trained / "fold0.bvit"), "--data-dir", str(toy_data),
                 "--out", str(tmp_path)]) == 0
    assert "macro avg" in capsys.readouterr().out
    report = json.loads((tmp_path / "report.json").read_text())
    rows = (tmp_path / "confusion.csv").read_text().splitlines()
    confusion = np.array([[int(v) for v in row.split(",")[1:]] for row in rows[1:]])
    assert confusion.sum() == report["total"] == 24
    assert np.trace(confusion) / 24 == pytest.approx(report["accuracy"])
    assert [c["support"] for c in report["classes"]] == confusion.sum(axis=1).tolist()


def test_eval_corrupted_checkpoint(trained, toy_data, tmp_path):
    bad = tmp_path / "bad.bvit"
    bad.write_bytes((trained / "fold0.bvit").read_bytes()[:100])
    assert main(["eval", "--checkpoint", str(bad), "--data-dir", str(toy_data)]) == 2


def test_eval_class_count_mismatch(toy_data, tmp_path, capsys):
    cfg = ModelConfig(image_size=32, patch_size=8, embed_dim=32, depth=1, num_heads=2, mlp_hidden_dim=64,
                      num_classes=5)
    save_checkpoint(tmp_path / "five.bvit", make_checkpoint(init_params(cfg, 0)))
    assert main(["eval", "--checkpoint", str(tmp_path / "five.bvit"), "--data-dir", str(toy_data)]) == 4
    assert "5 classes" in capsys.readouterr().err


def test_gradcam_outputs_are_reproducible(trained, toy_data, tmp_path):
    image = next((toy_data / "ring").iterdir())
    for name in ("a", "b"):
        assert main(["gradcam", "--checkpoint", str(trained / "fold0.bvit"), "--image", str(image),
                     "--out", str(tmp_path / name), "--class", "2"]) == 0
    for png in ("heatmap.png", "overlay.png"):
        assert (tmp_path / "a" / png).read_bytes() == (tmp_path / "b" / png).read_bytes()
        assert Image.open(tmp_path / "a" / png).size == (32, 32)


def test_gradcam_class_out_of_range(trained, toy_data, tmp_path):
    image = next((toy_data / "bar").iterdir())
    assert main(["gradcam", "--checkpoint", str(trained / "fold0.bvit"), "--image", str(image),
                 "--out", str(tmp_path), "--class", "7"]) == 2


def test_crop_page(tmp_path):
    Image.new("L", (600, 1000), 200).save(tmp_path / "page.png")
    assert main(["crop-page", "--image", str(tmp_path / "page.png"), "--out-dir", str(tmp_path / "cells")]) == 0
    cells = sorted((tmp_path / "cells").iterdir())
    assert len(cells) == 60
    assert Image.open(tmp_path / "cells" / "cell_9_5.png").size == (100, 100)


def test_crop_page_missing_image(tmp_path):
    assert main(["crop-page", "--image", str(tmp_path / "nope.png"), "--out-dir", str(tmp_path)]) == 3
