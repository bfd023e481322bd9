import numpy as np
import pytest

from facetf.cli import main
from facetf.config import PRESETS, parse_config_text
from facetf.ppm import read_pnm, save_image
from facetf.tokenizer import ConfigError

SMALL = """\
W = 12
C = 1
P = 4
S = 2
D = 8
heads = 2
depth = 1
mlp_dim = 16
identities = 3
samples_per_identity = 6
epochs = 2
batch_size = 6
base_lr = 1e-3
precision = float64
"""


def write_cfg(tmp_path, text=SMALL, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg = write_cfg(root)
    out = root / "out"
    assert main(["train", "--config", str(cfg), "--out", str(out), "--holdout", "4", "--deterministic"]) == 0
    return out


# ------------------------------------------------------------------- config


def test_parse_config_defaults_and_comments():
    cfg = parse_config_text("# comment\nD = 16  # trailing\nheads = 4\n")
    assert cfg.model.D == 16 and cfg.model.heads == 4 and cfg.model.depth == 20


def test_preset_key_then_override():
    cfg = parse_config_text("preset = vit-p12s8\ndepth = 2\n")
    assert cfg.patch.P == 12 and cfg.model.depth == 2 and cfg.model.D == 512


def test_unknown_key_names_the_key():
    with pytest.raises(ConfigError, match="colour"):
        parse_config_text("colour = blue\n")


def test_presets_encode_reference_configuration():
    for name, P in [("vit-p8s8", 8), ("vit-p10s8", 10), ("vit-p12s8", 12)]:
        pc, mc = PRESETS[name]
        assert (pc.W, pc.C, pc.P, pc.S) == (112, 3, P, 8)
        assert (mc.depth, mc.heads, mc.D, mc.mlp_dim) == (20, 8, 512, 2048)


# ----------------------------------------------------------------- exit codes


def test_unknown_key_exit_2(tmp_path, capsys):
    cfg = write_cfg(tmp_path, SMALL + "learning_rate = 1\n")
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "learning_rate" in capsys.readouterr().err


def test_heads_must_divide_width(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "D = 510\nheads = 8\n")
    assert main(["profile", "--config", str(cfg)]) == 2
    assert "510" in capsys.readouterr().err


def test_missing_config_exit_2(tmp_path):
    assert main(["train", "--config", str(tmp_path / "nope.cfg")]) == 2
    assert main(["train"]) == 2


def test_nan_input_exit_3(tmp_path):
    data = tmp_path / "data"
    data.mkdir()
    rows = ["relative_path,label_id"]
    for i in range(4):
        img = np.full((1, 12, 12), 100.0, dtype="<f4")
        if i == 0:
            img[0, 0, 0] = np.nan
        img.tofile(data / f"x{i}.f32")
        rows.append(f"x{i}.f32,{i % 2}")
    (data / "manifest.csv").write_text("\n".join(rows) + "\n")
    cfg = write_cfg(tmp_path, SMALL + "dataset = data/manifest.csv\n")
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3


# ------------------------------------------------------------------ profile


def test_profile_p8s8_output(capsys):
    assert main(["profile", "--preset", "vit-p8s8"]) == 0
    out = capsys.readouterr().out
    assert "63.2 M params" in out and "13.2 G MACs" in out
    assert "tokens: 196" in out


def test_profile_p12_delta(capsys):
    counts = {}
    for name in ("vit-p8s8", "vit-p12s8"):
        main(["profile", "--preset", name])
        line = [ln for ln in capsys.readouterr().out.splitlines() if ln.startswith("params=")][0]
        counts[name] = int(line.split()[0].split("=")[1])
    assert counts["vit-p12s8"] - counts["vit-p8s8"] == (144 - 64) * 3 * 512


def test_profile_unknown_preset():
    assert main(["profile", "--preset", "vit-p9s9"]) == 2


# ------------------------------------------------------------- train / eval


def test_train_writes_checkpoint_and_report(trained):
    assert (trained / "checkpoint.ftck").exists()
    lines = (trained / "report.csv").read_text().splitlines()
    assert lines[0] == "epoch,step,lr,loss,train_acc" and len(lines) == 3
    assert (trained / "holdout" / "pairs.csv").exists()


def test_eval_is_deterministic(trained, tmp_path, capsys):
    args = ["eval", "--checkpoint", str(trained / "checkpoint.ftck"), "--pairs", str(trained / "holdout" / "pairs.csv"), "--folds", "2"]
    assert main(args + ["--out", str(tmp_path / "a.csv")]) == 0
    assert main(args + ["--out", str(tmp_path / "b.csv")]) == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert "accuracy_2fold" in capsys.readouterr().out
    assert (tmp_path / "a.scores.csv").read_text().startswith("score,label")


def test_eval_empty_pairs_exit_2(trained, tmp_path):
    pairs = tmp_path / "pairs.csv"
    pairs.write_text("path_a,path_b,same\n")
    assert main(["eval", "--checkpoint", str(trained / "checkpoint.ftck"), "--pairs", str(pairs)]) == 2


def test_eval_image_size_mismatch_exit_4(trained, tmp_path):
    for name in ("a.ppm", "b.ppm"):
        save_image(tmp_path / name, np.zeros((16, 16, 1)))
    pairs = tmp_path / "pairs.csv"
    pairs.write_text("a.ppm,b.ppm,1\nb.ppm,a.ppm,0\n")
    assert main(["eval", "--checkpoint", str(trained / "checkpoint.ftck"), "--pairs", str(pairs), "--folds", "2"]) == 4


def test_eval_corrupt_checkpoint_exit_4(trained, tmp_path):
    bad = tmp_path / "bad.ftck"
    bad.write_bytes(b"not a checkpoint at all")
    assert main(["eval", "--checkpoint", str(bad), "--pairs", str(trained / "holdout" / "pairs.csv"), "--folds", "2"]) == 4


# ------------------------------------------------------------------ analyze


def test_analyze_smoke(trained, tmp_path):
    image = trained / "holdout" / "holdout_00000.ppm"
    out = tmp_path / "analysis"
    assert main(["analyze", "--checkpoint", str(trained / "checkpoint.ftck"), "--image", str(image), "--out-dir", str(out)]) == 0
    assert read_pnm(out / "rollout_heatmap.ppm").shape == (12, 12, 3)
    lines = (out / "attention_distance.csv").read_text().splitlines()
    assert lines[0] == "layer,head,mean_distance_px" and len(lines) == 1 + 1 * 2
    grid = np.loadtxt(out / "rollout_class_row.csv", delimiter=",")
    assert grid.shape == (6, 6) and grid.sum() == pytest.approx(1.0)


def test_bench_runs(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    assert main(["bench", "--config", str(cfg), "--batch", "2", "--iters", "1"]) == 0
    assert "img/s" in capsys.readouterr().out
