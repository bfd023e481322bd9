"""Exhaustive finite-difference check of the full CosFace training loss on a tiny model."""

import argparse
import time

import numpy as np

from facetf.cosface import MarginHead, cosface_loss
from facetf.encoder import FaceModel, ModelConfig
from facetf.gradcheck import numerical_grad, relative_error
from facetf.tensor import Tape
from facetf.tokenizer import PatchConfig


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jitter", type=float, default=0.1, help="noise added to the initial parameters")
    ap.add_argument("--h", type=float, default=1e-5, help="finite-difference step")
    args = ap.parse_args()

    cfg = ModelConfig(D=16, heads=2, depth=2, mlp_dim=32)
    pc = PatchConfig(W=12, C=1, P=4, S=2)
    model = FaceModel.create(cfg, pc, seed=args.seed, dtype=np.float64)
    rng = np.random.default_rng(args.seed + 1)
    for t in model.params:
        t.data = t.data + args.jitter * rng.normal(size=t.shape)
    head = MarginHead.init(3, cfg.D, rng, dtype=np.float64)
    images = rng.normal(size=(3, pc.W, pc.W, pc.C))
    labels = np.array([0, 1, 2])

    def loss():
        return cosface_loss(model.embed(images)[0], head, labels)[0]

    with Tape() as tape:
        value = loss()
    tape.backward(value)
    start = time.perf_counter()
    groups = dict(model.params.named(), **{"head.class_weights": head.class_weights})
    worst = 0.0
    for name, t in groups.items():
        err = relative_error(t.grad, numerical_grad(lambda: float(loss().data), t, h=args.h))
        worst = max(worst, err)
        print(f"{name:<22} {t.data.size:>5}  rel err {err:.2e}")
    print(f"loss {float(value.data):.6f}; worst {worst:.2e}; {time.perf_counter() - start:.1f}s")


if __name__ == "__main__":
    main()
