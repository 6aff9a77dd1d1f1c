"""Experiment configuration: one JSON file drives every CLI command.

Unknown keys and out-of-range values raise ConfigError naming the field, so
typos never silently fall back to defaults. The canonical form (defaults
filled in, scheduling knobs dropped) is what run manifests echo; two runs
with the same canonical config must produce byte-identical artifacts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .datagen import NOISE_KINDS, GeneratorSpec, NoiseSpec
from .fusion import STRATEGIES, UNCERTAINTY_KINDS
from .model import PREDICTOR_TARGETS

ABLATION_ARMS = (
    "mono_only",
    "holo_only",
    "rc_only",
    "co_belief",
    "holo_rc",
    "mono_rc",
    "ccb",
)

# Desk-scale defaults, tuned so the headline trends are reproducible on a
# laptop: a dominant low-noise modality next to a weaker noisy one, a small
# gently-trained model that stays honestly uncertain, and bounded
# (salt-pepper) corruption whose degree ladder mirrors the usual {0, 5, 10}.
DEFAULTS = {
    "data": {
        "n_classes": 5,
        "n_modalities": 2,
        "feature_dims": [16, 16],
        "signal_scales": [1.0, 1.0],
        "noise_scales": [0.8, 0.45],
        "flip_rates": [0.20, 0.05],
        "train_size": 320,
        "val_size": 160,
        "test_size": 1600,
    },
    "arch": {"encoder_hidden": [28, 14], "predictor_hidden": [8]},
    "fusion": {
        "strategy": "ccb",
        "predictor_target": "p_true",
        "uncertainty": "du",
        "energy_temperature": 1.0,
        "detach_weights": False,
    },
    "optim": {
        "lr": 1e-4,
        "predictor_lr": None,
        "beta1": 0.9,
        "beta2": 0.999,
        "weight_decay": 0.01,
        "dropout": 0.1,
        "batch_size": 16,
        "epochs": 100,
    },
    "noise": [
        {"kind": "salt_pepper", "degree": 0.0, "modality_fraction": 0.5},
        {"kind": "salt_pepper", "degree": 5.0, "modality_fraction": 0.5},
        {"kind": "salt_pepper", "degree": 10.0, "modality_fraction": 0.5},
    ],
    "seeds": [0, 1, 2, 3, 4],
    "sweep_strategies": ["ccb", "equal_weight"],
    "gdp_models": 20,
    "gdp_strategies": ["mono_only", "co_belief", "ccb"],
}


class ConfigError(ValueError):
    """Invalid or unknown configuration field."""

    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"config field {field_name!r}: {message}")


def _merge_section(name: str, given: dict, defaults: dict) -> dict:
    if not isinstance(given, dict):
        raise ConfigError(name, "must be an object")
    out = dict(defaults)
    for key, value in given.items():
        if key not in defaults:
            raise ConfigError(f"{name}.{key}", "unknown field")
        out[key] = value
    return out


@dataclass
class ExperimentConfig:
    data: dict = field(default_factory=lambda: dict(DEFAULTS["data"]))
    arch: dict = field(default_factory=lambda: dict(DEFAULTS["arch"]))
    fusion: dict = field(default_factory=lambda: dict(DEFAULTS["fusion"]))
    optim: dict = field(default_factory=lambda: dict(DEFAULTS["optim"]))
    noise: list = field(default_factory=lambda: [dict(n) for n in DEFAULTS["noise"]])
    seeds: list = field(default_factory=lambda: list(DEFAULTS["seeds"]))
    sweep_strategies: list = field(default_factory=lambda: list(DEFAULTS["sweep_strategies"]))
    gdp_models: int = DEFAULTS["gdp_models"]
    gdp_strategies: list = field(default_factory=lambda: list(DEFAULTS["gdp_strategies"]))
    output_dir: str | None = None
    jobs: int = 1

    def canonical(self) -> dict:
        """Fully defaulted experiment identity; excludes scheduling knobs.

        jobs and output_dir never change the computed artifacts, so they are
        left out and reruns with different values stay byte-identical.
        """
        return {
            "data": dict(self.data),
            "arch": dict(self.arch),
            "fusion": dict(self.fusion),
            "optim": dict(self.optim),
            "noise": [dict(n) for n in self.noise],
            "seeds": list(self.seeds),
            "sweep_strategies": list(self.sweep_strategies),
            "gdp_models": self.gdp_models,
            "gdp_strategies": list(self.gdp_strategies),
        }

    def generator_spec(self, seed: int) -> GeneratorSpec:
        d = self.data
        return GeneratorSpec(
            n_classes=d["n_classes"],
            n_modalities=d["n_modalities"],
            feature_dims=tuple(d["feature_dims"]),
            signal_scales=tuple(d["signal_scales"]),
            noise_scales=tuple(d["noise_scales"]),
            flip_rates=tuple(d["flip_rates"]),
            train_size=d["train_size"],
            val_size=d["val_size"],
            test_size=d["test_size"],
            seed=seed,
        )

    def noise_specs(self, seed_fn) -> list:
        """NoiseSpec per configured level; seed_fn(idx) supplies the seed."""
        return [
            NoiseSpec(
                kind=n["kind"],
                degree=float(n["degree"]),
                modality_fraction=float(n.get("modality_fraction", 0.5)),
                seed=seed_fn(i),
            )
            for i, n in enumerate(self.noise)
        ]


def _validate(cfg: ExperimentConfig) -> ExperimentConfig:
    d = cfg.data
    if d["n_classes"] < 2:
        raise ConfigError("data.n_classes", "must be >= 2")
    if d["n_modalities"] < 2:
        raise ConfigError("data.n_modalities", "must be >= 2")
    for key in ("feature_dims", "signal_scales", "noise_scales", "flip_rates"):
        if len(d[key]) != d["n_modalities"]:
            raise ConfigError(f"data.{key}", "needs one entry per modality")
    for key in ("train_size", "val_size", "test_size"):
        if int(d[key]) < 1:
            raise ConfigError(f"data.{key}", "must be positive")
    if cfg.fusion["strategy"] not in STRATEGIES:
        raise ConfigError("fusion.strategy", f"must be one of {STRATEGIES}")
    if cfg.fusion["predictor_target"] not in PREDICTOR_TARGETS:
        raise ConfigError("fusion.predictor_target", f"must be one of {PREDICTOR_TARGETS}")
    if cfg.fusion["uncertainty"] not in UNCERTAINTY_KINDS:
        raise ConfigError("fusion.uncertainty", f"must be one of {UNCERTAINTY_KINDS}")
    if cfg.optim["epochs"] < 0:
        raise ConfigError("optim.epochs", "must be >= 0")
    if cfg.optim["batch_size"] < 1:
        raise ConfigError("optim.batch_size", "must be >= 1")
    if not 0.0 <= cfg.optim["dropout"] < 1.0:
        raise ConfigError("optim.dropout", "must lie in [0, 1)")
    if not isinstance(cfg.noise, list) or not cfg.noise:
        raise ConfigError("noise", "must be a non-empty list")
    for i, n in enumerate(cfg.noise):
        extra = set(n) - {"kind", "degree", "modality_fraction"}
        if extra:
            raise ConfigError(f"noise[{i}].{sorted(extra)[0]}", "unknown field")
        if n.get("kind", "none") not in NOISE_KINDS:
            raise ConfigError(f"noise[{i}].kind", f"must be one of {NOISE_KINDS}")
        if float(n.get("degree", 0.0)) < 0:
            raise ConfigError(f"noise[{i}].degree", "must be >= 0")
    if not cfg.seeds:
        raise ConfigError("seeds", "must be a non-empty list")
    for s in cfg.sweep_strategies:
        if s not in STRATEGIES:
            raise ConfigError("sweep_strategies", f"unknown strategy {s!r}")
    for s in cfg.gdp_strategies:
        if s not in STRATEGIES:
            raise ConfigError("gdp_strategies", f"unknown strategy {s!r}")
    if cfg.gdp_models < 1:
        raise ConfigError("gdp_models", "must be >= 1")
    if cfg.jobs < 1:
        raise ConfigError("jobs", "must be >= 1")
    return cfg


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("(root)", "config must be a JSON object")
    known = {
        "data", "arch", "fusion", "optim", "noise", "seeds", "sweep_strategies",
        "gdp_models", "gdp_strategies", "output_dir", "jobs",
    }
    for key in raw:
        if key not in known:
            raise ConfigError(key, "unknown field")
    cfg = ExperimentConfig(
        data=_merge_section("data", raw.get("data", {}), DEFAULTS["data"]),
        arch=_merge_section("arch", raw.get("arch", {}), DEFAULTS["arch"]),
        fusion=_merge_section("fusion", raw.get("fusion", {}), DEFAULTS["fusion"]),
        optim=_merge_section("optim", raw.get("optim", {}), DEFAULTS["optim"]),
        noise=[dict(n) for n in raw.get("noise", DEFAULTS["noise"])],
        seeds=list(raw.get("seeds", DEFAULTS["seeds"])),
        sweep_strategies=list(raw.get("sweep_strategies", DEFAULTS["sweep_strategies"])),
        gdp_models=int(raw.get("gdp_models", DEFAULTS["gdp_models"])),
        gdp_strategies=list(raw.get("gdp_strategies", DEFAULTS["gdp_strategies"])),
        output_dir=raw.get("output_dir"),
        jobs=int(raw.get("jobs", 1)),
    )
    return _validate(cfg)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError("(file)", f"cannot read {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError("(file)", f"not valid JSON: {exc}")
    return config_from_dict(raw)
