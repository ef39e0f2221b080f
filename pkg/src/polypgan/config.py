"""Flat dotted-key configuration with file loading and CLI overrides.

The schema is a single level of ``section.key`` entries grouped into
``model.``, ``loss.``, ``train.`` and ``data.``. Files may be YAML or JSON
and may spell keys either flat (``model.use_se: false``) or nested
(``model: {use_se: false}``); nesting is flattened on load. Override
strings (``key=value``) are coerced to the type of the schema default,
and unknown keys are rejected by name so ablation flips fail loudly when
misspelled.

Architecture width/stride tuples are deliberately not part of the schema;
they are code-level constants of the model configs.
"""

from __future__ import annotations

import json
from pathlib import Path

import yaml

from .data import AugmentConfig, SyntheticSpec
from .discriminator import DiscriminatorConfig
from .generator import GeneratorConfig
from .losses import LOSS_COMBOS, LossConfig
from .training import TrainConfig


class ConfigError(Exception):
    pass


# key -> default; the default's type drives coercion of override strings.
DEFAULT_SCHEMA: dict[str, object] = {
    # generator / discriminator toggles
    "model.input_size": 256,
    "model.stem_width": 16,
    "model.expansion_factor": 3,
    "model.se_ratio": 8,
    "model.use_se": True,
    "model.use_rese": True,
    "model.use_convcrf": True,
    "model.leaky_slope": 0.2,
    # loss selection
    "loss.combo": "3loss_a",
    "loss.alpha": 0.7,
    "loss.lambda_adv": 0.1,
    "loss.eps": 1e-6,
    "loss.eps_clip": 1e-7,
    # optimization
    "train.lr_g": 1e-4,
    "train.lr_d": 1e-4,
    "train.batch_size": 16,
    "train.steps": 200,
    "train.beta1": 0.9,
    "train.beta2": 0.999,
    "train.d_steps_per_g_step": 1,
    "train.seed": 0,
    "train.checkpoint_every": 0,
    "train.augment": True,
    # data source and per-sample transforms
    "data.root": "",  # empty = generate synthetic data on the fly
    "data.n_synthetic": 16,
    "data.threshold": 0.5,
    "data.p_flip_h": 0.5,
    "data.p_flip_v": 0.5,
    "data.rot_min": -10.0,
    "data.rot_max": 10.0,
    "data.bright_min": 0.9,
    "data.bright_max": 1.1,
    "data.contrast_min": 0.9,
    "data.contrast_max": 1.1,
}

_TRUE_WORDS = {"true", "1", "yes", "on"}
_FALSE_WORDS = {"false", "0", "no", "off"}


def default_config() -> dict[str, object]:
    return dict(DEFAULT_SCHEMA)


def _flatten(mapping: dict, prefix: str = "") -> dict[str, object]:
    flat: dict[str, object] = {}
    for key, value in mapping.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, f"{name}."))
        else:
            flat[name] = value
    return flat


def _check_key(key: str) -> None:
    if key not in DEFAULT_SCHEMA:
        raise ConfigError(f"unknown config key: {key}")


def _coerce_value(key: str, value: object) -> object:
    """Cast a parsed file value to the schema type for ``key``."""
    default = DEFAULT_SCHEMA[key]
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str):
            return _parse_bool(key, value)
        raise ConfigError(f"config key {key} expects a boolean, got {value!r}")
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key {key} expects an integer, got {value!r}")
        if isinstance(value, float) and value != int(value):
            raise ConfigError(f"config key {key} expects an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key {key} expects a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"config key {key} expects a string, got {value!r}")
        return value
    raise ConfigError(f"config key {key} has unsupported schema type")


def _parse_bool(key: str, raw: str) -> bool:
    word = raw.strip().lower()
    if word in _TRUE_WORDS:
        return True
    if word in _FALSE_WORDS:
        return False
    raise ConfigError(f"config key {key} expects a boolean, got {raw!r}")


def coerce_override(key: str, raw: str) -> object:
    """Parse an override string using the schema default's type."""
    _check_key(key)
    default = DEFAULT_SCHEMA[key]
    if isinstance(default, bool):
        return _parse_bool(key, raw)
    if isinstance(default, int):
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"config key {key} expects an integer, got {raw!r}") from exc
    if isinstance(default, float):
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigError(f"config key {key} expects a number, got {raw!r}") from exc
    return raw


def load_config_file(path: str | Path) -> dict[str, object]:
    """Read a YAML/JSON config file into a validated flat dict."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    try:
        if path.suffix.lower() == ".json":
            parsed = json.loads(text)
        else:
            parsed = yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config file {path}: {exc}") from exc
    if parsed is None:
        return {}
    if not isinstance(parsed, dict):
        raise ConfigError(f"config file {path} must contain a mapping")
    flat = _flatten(parsed)
    out: dict[str, object] = {}
    for key, value in flat.items():
        _check_key(key)
        out[key] = _coerce_value(key, value)
    return out


def apply_overrides(cfg: dict[str, object], overrides: list[str]) -> dict[str, object]:
    """Apply ``key=value`` strings on top of ``cfg``; overrides win."""
    out = dict(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, _, raw = item.partition("=")
        key = key.strip()
        out[key] = coerce_override(key, raw.strip())
    return out


def resolve_config(
    path: str | Path | None = None,
    overrides: list[str] | None = None,
    seed: int | None = None,
) -> dict[str, object]:
    """Defaults <- file <- --set overrides <- --seed, in that precedence."""
    cfg = default_config()
    if path is not None:
        cfg.update(load_config_file(path))
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    if seed is not None:
        cfg["train.seed"] = int(seed)
    return cfg


def to_train_config(
    cfg: dict[str, object], checkpoint_dir: str | None = None
) -> TrainConfig:
    """Assemble the nested training config from a flat dict."""
    combo = cfg["loss.combo"]
    if combo not in LOSS_COMBOS:
        raise ConfigError(
            f"loss.combo must be one of {', '.join(LOSS_COMBOS)}; got {combo!r}"
        )
    try:
        model = GeneratorConfig(
            input_size=cfg["model.input_size"],
            stem_width=cfg["model.stem_width"],
            expansion_factor=cfg["model.expansion_factor"],
            se_ratio=cfg["model.se_ratio"],
            use_se=cfg["model.use_se"],
            use_rese=cfg["model.use_rese"],
        )
        disc = DiscriminatorConfig(
            leaky_slope=cfg["model.leaky_slope"],
            use_convcrf=cfg["model.use_convcrf"],
            input_size=cfg["model.input_size"],
        )
        loss = LossConfig(
            combo=combo,
            alpha=cfg["loss.alpha"],
            eps=cfg["loss.eps"],
            lambda_adv=cfg["loss.lambda_adv"],
            eps_clip=cfg["loss.eps_clip"],
        )
        aug = AugmentConfig(
            p_flip_h=cfg["data.p_flip_h"],
            p_flip_v=cfg["data.p_flip_v"],
            rot_degrees=(cfg["data.rot_min"], cfg["data.rot_max"]),
            brightness_range=(cfg["data.bright_min"], cfg["data.bright_max"]),
            contrast_range=(cfg["data.contrast_min"], cfg["data.contrast_max"]),
            seed=cfg["train.seed"],
        )
        return TrainConfig(
            lr_g=cfg["train.lr_g"],
            lr_d=cfg["train.lr_d"],
            batch_size=cfg["train.batch_size"],
            steps=cfg["train.steps"],
            adam_betas=(cfg["train.beta1"], cfg["train.beta2"]),
            d_steps_per_g_step=cfg["train.d_steps_per_g_step"],
            seed=cfg["train.seed"],
            checkpoint_dir=checkpoint_dir,
            checkpoint_every=cfg["train.checkpoint_every"],
            augment=cfg["train.augment"],
            loss=loss,
            model=model,
            disc=disc,
            aug=aug,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def synthetic_spec_from(cfg: dict[str, object]) -> SyntheticSpec:
    return SyntheticSpec(n_samples=cfg["data.n_synthetic"], seed=cfg["train.seed"])
