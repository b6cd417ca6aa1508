"""Run configuration: nested sections with JSON file loading and echoing.

A config file is a JSON object with any of the sections "model", "quant",
"widths", "synth", "train"; omitted keys take the documented defaults.
Unknown sections or keys are rejected rather than ignored.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from typing import Optional

from .codec import BitWidthSpec, QuantizationSpec
from .dataflow import SynthConfig
from .model import ConfigError, ModelConfig


@dataclass(frozen=True)
class TrainConfig:
    """Training schedule."""

    steps: int = 2000
    batch_size: int = 32
    lr: float = 1e-4
    eval_interval: int = 200
    val_windows: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ConfigError("steps and batch_size must be positive")
        if self.lr < 0:
            raise ConfigError("learning rate must be nonnegative")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = ModelConfig()
    quant: QuantizationSpec = QuantizationSpec()
    widths: BitWidthSpec = BitWidthSpec()
    synth: SynthConfig = SynthConfig()
    train: TrainConfig = TrainConfig()

    def to_dict(self) -> dict:
        return {
            "model": dataclasses.asdict(self.model),
            "quant": dataclasses.asdict(self.quant),
            "widths": dataclasses.asdict(self.widths),
            "synth": dataclasses.asdict(self.synth),
            "train": dataclasses.asdict(self.train),
        }

    def model_identity(self) -> dict:
        """The sections that must match a checkpoint exactly."""
        d = self.to_dict()
        return {"model": d["model"], "quant": d["quant"], "widths": d["widths"]}


_SECTIONS = {
    "model": ModelConfig,
    "quant": QuantizationSpec,
    "widths": BitWidthSpec,
    "synth": SynthConfig,
    "train": TrainConfig,
}


def _build_section(cls, payload: dict, section: str):
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = set(payload) - fields
    if unknown:
        raise ConfigError(f"unknown keys in section {section!r}: {sorted(unknown)}")
    converted = {
        k: tuple(v) if isinstance(v, list) else v for k, v in payload.items()
    }
    try:
        return cls(**converted)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"section {section!r}: {exc}") from exc


def run_config_from_dict(payload: dict) -> RunConfig:
    unknown = set(payload) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    kwargs = {}
    for section, cls in _SECTIONS.items():
        body = payload.get(section, {})
        if not isinstance(body, dict):
            raise ConfigError(f"section {section!r} must be an object")
        kwargs[section] = _build_section(cls, body, section)
    return RunConfig(**kwargs)


def load_run_config(path: Optional[str], seed: Optional[int] = None) -> RunConfig:
    """Read a JSON config file (or defaults when path is None), then apply the
    seed override to the model, generator, and training sections."""
    if path is None:
        cfg = RunConfig()
    else:
        try:
            with open(path) as fh:
                payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(payload, dict):
            raise ConfigError(f"{path}: top level must be an object")
        cfg = run_config_from_dict(payload)
    if seed is not None:
        cfg = RunConfig(
            model=dataclasses.replace(cfg.model, seed=seed),
            quant=cfg.quant,
            widths=cfg.widths,
            synth=dataclasses.replace(cfg.synth, seed=seed),
            train=dataclasses.replace(cfg.train, seed=seed),
        )
    return cfg


def echo_config(path, cfg: RunConfig, extra: Optional[dict] = None) -> None:
    """Write the fully resolved config (plus run metadata) to an output dir."""
    payload = dict(extra or {})
    payload["config"] = cfg.to_dict()
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
