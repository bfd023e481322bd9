"""Acceptance criteria, one test each.

Every test prints a ``PASS``/``FAIL`` line (collected into the terminal
summary) and then asserts the criterion at its stated tolerance.
"""

import math
import time

import numpy as np
import pytest

from facetf.attn import rollout
from facetf.checkpoint import load_checkpoint, save_checkpoint
from facetf.cli import main
from facetf.config import PRESETS, load_config
from facetf.cosface import MarginHead, cosface_loss
from facetf.encoder import AttentionRecord, FaceModel, ModelConfig
from facetf.evaluate import fold_accuracy, pair_scores, profile, tar_at_far
from facetf.gradcheck import numerical_grad, relative_error
from facetf.tensor import Tape
from facetf.tokenizer import PatchConfig
from facetf.trainer import SyntheticDataset, TrainConfig, make_pairs, normalize_pixels, train
from oracles import tar_bruteforce, threshold_accuracy_bruteforce

RESULTS: list[str] = []


def record(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {number}. {title}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


# -------------------------------------------------------- 1-3: profiling


def test_1_parameter_counts():
    targets = {"vit-p8s8": 63.2e6, "vit-p10s8": 63.3e6, "vit-p12s8": 63.3e6}
    errs = {}
    for name, target in targets.items():
        patch_cfg, model_cfg = PRESETS[name]
        errs[name] = profile(model_cfg, patch_cfg).param_count / target - 1
    ok = all(abs(e) <= 0.03 for e in errs.values())
    record(1, "parameter counts within 3%", ok, ", ".join(f"{k} {v:+.2%}" for k, v in errs.items()))


def test_2_mac_counts():
    targets = {"vit-p8s8": 12.4e9, "vit-p10s8": 12.4e9, "vit-p12s8": 12.5e9}
    errs = {}
    for name, target in targets.items():
        patch_cfg, model_cfg = PRESETS[name]
        errs[name] = profile(model_cfg, patch_cfg).mac_count / target - 1
    ok = all(abs(e) <= 0.15 for e in errs.values())
    record(2, "MAC counts within 15%", ok, ", ".join(f"{k} {v:+.2%}" for k, v in errs.items()))


def test_3_token_grid():
    counts = {name: PRESETS[name][0].N for name in ("vit-p8s8", "vit-p10s8", "vit-p12s8")}
    record(3, "N=196 for every preset", all(n == 196 for n in counts.values()), str(counts))


# ---------------------------------------------------------- 4: gradients


@pytest.mark.slow
def test_4_full_gradient_check():
    start = time.perf_counter()
    cfg = ModelConfig(D=16, heads=2, depth=2, mlp_dim=32)
    pc = PatchConfig(W=12, C=1, P=4, S=2)
    model = FaceModel.create(cfg, pc, seed=0, dtype=np.float64)
    rng = np.random.default_rng(1)
    # move away from the zero / unit initial values so every term is exercised
    for t in model.params:
        t.data = t.data + 0.1 * rng.normal(size=t.shape)
    head = MarginHead.init(3, cfg.D, rng, dtype=np.float64)
    images = rng.normal(size=(3, 12, 12, 1))
    labels = np.array([0, 1, 2])

    def loss():
        return cosface_loss(model.embed(images)[0], head, labels)[0]

    with Tape() as tape:
        value = loss()
    tape.backward(value)
    groups = dict(model.params.named(), **{"head.class_weights": head.class_weights})
    errors = {name: relative_error(t.grad, numerical_grad(lambda: float(loss().data), t)) for name, t in groups.items()}
    worst = max(errors, key=errors.get)
    elapsed = time.perf_counter() - start
    ok = errors[worst] < 1e-4 and elapsed < 60
    record(4, "CosFace loss gradient vs finite differences", ok,
           f"{len(errors)} groups, every entry probed, worst {worst} rel err {errors[worst]:.1e}, {elapsed:.0f}s")


# ------------------------------------------------------ 5: toy training


@pytest.mark.slow
def test_5_toy_training():
    start = time.perf_counter()
    run = load_config("configs/toy.cfg")
    assert run.train.epochs <= 200
    assert (run.data.identities, run.data.samples_per_identity, run.patch.W) == (8, 32, 28)
    assert (run.model.D, run.model.depth) == (32, 3)
    ds = SyntheticDataset(
        seed=run.data.data_seed, num_identities=run.data.identities,
        samples_per_identity=run.data.samples_per_identity, W=run.patch.W, C=run.patch.C,
        noise_sigma=run.data.noise_sigma, max_shift=run.data.max_shift,
    )
    images, labels = ds.generate()
    dtype = run.train.dtype
    model = FaceModel.create(run.model, run.patch, seed=run.train.seed, dtype=dtype)
    head = MarginHead.init(8, run.model.D, np.random.default_rng([run.train.seed, 1]), dtype=dtype)
    report = train(model, head, normalize_pixels(images), labels, run.train)
    train_acc = report.final.train_acc

    held, held_labels = ds.holdout(8)
    emb, _ = model.embed(normalize_pixels(held).astype(dtype))
    scores, same = pair_scores(emb.data, make_pairs(held_labels, np.random.default_rng(0)))
    pair_acc = fold_accuracy(scores, same, folds=2)
    elapsed = time.perf_counter() - start
    ok = train_acc >= 0.95 and pair_acc >= 0.90 and elapsed < 300
    record(5, "toy training", ok,
           f"train acc {train_acc:.3f}, held-out 2-fold pair acc {pair_acc:.3f} on {len(scores)} pairs, "
           f"{report.final.epoch} epochs, {elapsed:.0f}s")


# ------------------------------------------------------ 6: rollout rows


def test_6_rollout_rows_stochastic():
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(100):
        depth, heads, n_tok = rng.integers(1, 9), rng.integers(1, 9), rng.integers(2, 51)
        maps = []
        for _ in range(depth):
            a = rng.random((heads, n_tok, n_tok)) ** rng.uniform(0.5, 8)
            maps.append(a / a.sum(axis=-1, keepdims=True))
        M = rollout(AttentionRecord(maps)).matrix
        worst = max(worst, float(np.abs(M.sum(axis=1) - 1).max()))
    record(6, "rollout rows sum to 1 (100 records)", worst <= 1e-6, f"max deviation {worst:.1e}")


# ----------------------------------------------------- 7: protocol oracles


def test_7_protocol_oracles():
    rng = np.random.default_rng(7)
    mismatches = 0
    fars = [0.01, 0.05, 0.1, 0.25, 0.5]
    for trial in range(50):
        n = int(rng.integers(10, 201))
        # coarse rounding on half the sets forces score ties
        scores = rng.normal(size=n) + rng.random(n)
        if trial % 2:
            scores = np.round(scores, 1)
        same = rng.random(n) < rng.uniform(0.2, 0.8)
        same[:2] = [True, False]
        folds = int(rng.integers(2, min(10, n) + 1))
        if fold_accuracy(scores, same, folds) != threshold_accuracy_bruteforce(list(scores), list(same), folds):
            mismatches += 1
        gen, imp = list(scores[same]), list(scores[~same])
        got = tar_at_far(gen, imp, fars)
        want = [tar_bruteforce(gen, imp, f) for f in fars]
        if not all((math.isnan(a) and math.isnan(b)) or a == b for a, b in zip(got, want)):
            mismatches += 1
    record(7, "fold accuracy and TAR@FAR match enumeration (50 sets)", mismatches == 0, f"{mismatches} mismatches")


# -------------------------------------------------------- 8: determinism


DET_CFG = """\
W = 12
C = 1
P = 4
S = 2
D = 8
heads = 2
depth = 2
mlp_dim = 16
identities = 4
samples_per_identity = 8
epochs = 3
batch_size = 8
base_lr = 1e-3
seed = 5
precision = float32
"""


def test_8_determinism(tmp_path):
    cfg = tmp_path / "det.cfg"
    cfg.write_text(DET_CFG)
    blobs = []
    for run in ("a", "b"):
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / run), "--deterministic"]) == 0
        blobs.append((tmp_path / run / "checkpoint.ftck").read_bytes())
    identical = blobs[0] == blobs[1]
    model, head, _ = load_checkpoint(tmp_path / "a" / "checkpoint.ftck")
    save_checkpoint(tmp_path / "resaved.ftck", model, head)
    lossless = (tmp_path / "resaved.ftck").read_bytes() == blobs[0]
    record(8, "deterministic training and lossless checkpoint", identical and lossless,
           f"runs identical: {identical}, round trip bitwise: {lossless} ({len(blobs[0])} bytes)")


# ------------------------------------------------- 9: overlap exercised


@pytest.mark.parametrize("P,S", [(4, 4), (4, 2)])
def test_9_overlap_configurations_train(P, S):
    ds = SyntheticDataset(seed=0, num_identities=8, samples_per_identity=32, W=28, C=1)
    images, labels = ds.generate()
    pc = PatchConfig(W=28, C=1, P=P, S=S)
    model = FaceModel.create(ModelConfig(D=32, heads=2, depth=3, mlp_dim=64), pc, seed=0, dtype=np.float32)
    head = MarginHead.init(8, 32, np.random.default_rng(1), dtype=np.float32)
    cfg = TrainConfig(seed=0, epochs=3, batch_size=32, base_lr=2e-3)
    report = train(model, head, normalize_pixels(images), labels, cfg)
    ok = report.final.epoch == 3 and math.isfinite(report.final.loss)
    kind = "overlap" if P > S else "no overlap"
    record(9, f"training completes with P={P}, S={S} ({kind})", ok,
           f"N={pc.N}, loss {report.epochs[0].loss:.3f} -> {report.final.loss:.3f}")
