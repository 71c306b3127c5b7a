"""Print parameter counts for every variant at full ("paper") and toy scale."""
from skinseg.models import VARIANTS, ModelConfig, count_params


def main():
    print(f"{'variant':<22}{'scale':<7}{'stage_filters':<16}{'fc':>6}{'params':>14}")
    for scale in ("paper", "toy"):
        for v in VARIANTS:
            cfg = ModelConfig.toy(v) if scale == "toy" else ModelConfig(v)
            n = count_params(cfg)
            print(f"{v:<22}{scale:<7}{str(cfg.stage_filters):<16}{cfg.fc_width:>6}{n:>14,}  ({n / 1e6:.1f}M)")


if __name__ == "__main__":
    main()
