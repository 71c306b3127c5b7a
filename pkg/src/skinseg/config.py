"""Flat ``key=value`` run configuration mirroring ModelConfig / TrainConfig / AugmentParams."""
from __future__ import annotations

from pathlib import Path

from .data import AugmentParams
from .errors import ConfigError
from .models import ModelConfig
from .training import TrainConfig

# key -> (type, default); "" means "use the variant/scale default"
KEYS: dict[str, tuple[str, object]] = {
    "model.variant": ("str", "dense_residual_unet"),
    "model.scale": ("str", "paper"),
    "model.input_size": ("int", ""),
    "model.stage_filters": ("ints", ""),
    "model.fc_width": ("int", ""),
    "model.dense_depth": ("int", ""),
    "model.dense_growth": ("ints", ""),
    "model.residual_blocks": ("int", ""),
    "model.dense_include_input": ("bool", False),
    "model.dropout_rate": ("float", 0.5),
    "model.noise_sigma": ("float", 0.025),
    "model.output_init": ("str", "zeros"),
    "train.learning_rate": ("float?", None),
    "train.momentum": ("float", 0.9),
    "train.batch_size": ("int", 16),
    "train.max_epochs": ("int", 500),
    "train.patience": ("int", 50),
    "train.val_fraction": ("float", 0.2),
    "train.seed": ("int", 0),
    "train.min_delta": ("float", 1e-7),
    "train.target_jaccard": ("float?", None),
    "augment.enabled": ("bool", True),
    "augment.rotation_degrees": ("float", 30.0),
    "augment.scale_min": ("float", 0.8),
    "augment.scale_max": ("float", 1.25),
    "augment.crop": ("bool", True),
    "data.workers": ("int", 1),
}


def _parse(key: str, raw: str):
    kind = KEYS[key][0]
    raw = raw.strip()
    try:
        if kind == "str":
            return raw
        if kind == "int":
            return int(raw) if raw else ""
        if kind == "ints":
            return [int(v) for v in raw.split(",") if v.strip()] if raw else ""
        if kind == "bool":
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "float":
            return float(raw)
        if kind == "float?":
            return None if raw.lower() in ("", "none") else float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    raise AssertionError(kind)


def _render(value) -> str:
    if isinstance(value, list):
        return ",".join(str(v) for v in value)
    if value is None:
        return "none"
    return str(value).lower() if isinstance(value, bool) else str(value)


class RunConfig:
    def __init__(self, values: dict | None = None):
        self.values = {k: d for k, (_, d) in KEYS.items()}
        for k, v in (values or {}).items():
            self.set(k, v)

    def set(self, key: str, value) -> None:
        if key not in KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        self.values[key] = _parse(key, value) if isinstance(value, str) else value

    def apply_line(self, line: str, where: str = "--set") -> None:
        if "=" not in line:
            raise ConfigError(f"{where}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        try:
            self.set(key.strip(), value)
        except ConfigError as exc:
            raise ConfigError(f"{where}: {exc}") from None

    @classmethod
    def load(cls, path=None, overrides=()) -> "RunConfig":
        rc = cls()
        if path is not None:
            for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
                line = line.split("#", 1)[0].strip()
                if line:
                    rc.apply_line(line, f"{path}:{n}")
        for item in overrides:
            rc.apply_line(item)
        return rc

    def __getitem__(self, key):
        return self.values[key]

    def model_config(self) -> ModelConfig:
        v = self.values
        kw = {}
        for key in ("input_size", "stage_filters", "fc_width", "dense_depth", "dense_growth", "residual_blocks"):
            if v[f"model.{key}"] != "":
                kw[key] = v[f"model.{key}"]
        kw.update(dense_include_input=v["model.dense_include_input"], dropout_rate=v["model.dropout_rate"],
                  noise_sigma=v["model.noise_sigma"], output_init=v["model.output_init"])
        if v["model.scale"] == "toy":
            return ModelConfig.toy(v["model.variant"], **kw)
        return ModelConfig(variant=v["model.variant"], scale=v["model.scale"], **kw)

    def augment_params(self) -> AugmentParams | None:
        v = self.values
        if not v["augment.enabled"]:
            return None
        return AugmentParams(v["augment.rotation_degrees"], v["augment.scale_min"], v["augment.scale_max"],
                             v["augment.crop"])

    def train_config(self, scenario: str) -> TrainConfig:
        v = self.values
        return TrainConfig(
            scenario=scenario, learning_rate=v["train.learning_rate"], momentum=v["train.momentum"],
            batch_size=v["train.batch_size"], max_epochs=v["train.max_epochs"], patience=v["train.patience"],
            val_fraction=v["train.val_fraction"], seed=v["train.seed"], augment=self.augment_params(),
            min_delta=v["train.min_delta"], target_jaccard=v["train.target_jaccard"],
        )

    def effective_lines(self, scenario: str | None = None) -> list[str]:
        """Every effective value as ``key=value``; the learning rate is resolved
        for ``scenario`` and model defaults are filled in."""
        vals = dict(self.values)
        try:
            mc = self.model_config()
        except ConfigError:
            mc = None
        if mc is not None:
            for key in ("input_size", "stage_filters", "fc_width", "dense_depth", "dense_growth", "residual_blocks"):
                vals[f"model.{key}"] = getattr(mc, key)
        if scenario is not None:
            vals["train.learning_rate"] = self.train_config(scenario).lr
        return [f"{k}={_render(vals[k])}" for k in KEYS]
