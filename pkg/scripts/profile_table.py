"""Parameter / MAC table for the three named presets next to the reference values."""

from facetf.config import PRESETS
from facetf.evaluate import profile

REFERENCE = {"vit-p8s8": (63.2e6, 12.4e9), "vit-p10s8": (63.3e6, 12.4e9), "vit-p12s8": (63.3e6, 12.5e9)}


def main() -> None:
    print(f"{'preset':<10} {'N':>4} {'params':>12} {'ref':>7} {'diff':>7} {'MACs':>15} {'ref':>6} {'diff':>7}")
    for name, (ref_p, ref_m) in REFERENCE.items():
        patch_cfg, model_cfg = PRESETS[name]
        prof = profile(model_cfg, patch_cfg)
        print(
            f"{name:<10} {patch_cfg.N:>4} {prof.param_count:>12,} {ref_p / 1e6:>6.1f}M {prof.param_count / ref_p - 1:>+7.2%}"
            f" {prof.mac_count:>15,} {ref_m / 1e9:>5.1f}G {prof.mac_count / ref_m - 1:>+7.2%}"
        )


if __name__ == "__main__":
    main()
