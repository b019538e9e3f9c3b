"""INI config tree with dotted keys, typed defaults and ``key=value`` overrides."""

from __future__ import annotations

import configparser
from pathlib import Path
from typing import Any, Iterable

DEFAULTS: dict[str, dict[str, Any]] = {
    "model": {"depth": 2, "base_channels": 32, "embedding_dim": 32, "heads": 1, "codec_factor": 4,
              "context_len": 8, "init_seed": 0, "checkpoint": ""},
    "schedule": {"T": 100, "beta_start": 1e-3, "beta_end": 0.1},
    "sampler": {"steps": 25, "guidance_scale": 3.0, "attention_mode": "asa", "clip_sample": 1.0,
                "drop_garment": False, "garment_t0": False, "paste_back": True, "control_scale": 1.0},
    "train": {"stage": 1, "learning_rate": 1e-2, "batch_size": 4, "max_steps": 100, "optimizer": "sgd",
              "momentum": 0.9, "lr_schedule": "constant", "prompt_dropout": 0.1, "garment_timestep": "matched",
              "pose_kind": "dense_coords", "augment": True},
    "data": {"manifest": "", "toy_records": 8, "toy_seed": 7, "image_size": 32, "record": 0,
             "invert_mask": False},
    "engine": {"images": 4, "image_size": 64, "radius": 3, "max_attempts": 3},
    "eval": {"weighting": "linear", "format": "markdown", "embedder_seed": 0},
}


class ConfigError(ValueError):
    pass


def _coerce(raw: str, default: Any, key: str):
    if isinstance(default, bool):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected {type(default).__name__}, got {raw!r}") from None
    return raw.strip()


class Config:
    """Flat view ``{"section.key": value}`` over the defaults plus file and overrides."""

    def __init__(self, values: dict[str, Any] | None = None):
        self.values = {f"{s}.{k}": v for s, sec in DEFAULTS.items() for k, v in sec.items()}
        for k, v in (values or {}).items():
            self.set(k, v)

    def resolve(self, key: str) -> str:
        if key in self.values:
            return key
        hits = [k for k in self.values if k.split(".", 1)[1] == key]
        if len(hits) == 1:
            return hits[0]
        if not hits:
            raise ConfigError(f"unknown config key {key!r}")
        raise ConfigError(f"ambiguous config key {key!r}: {sorted(hits)}")

    def set(self, key: str, value: Any):
        full = self.resolve(key)
        default = self.values[full]
        self.values[full] = _coerce(value, default, full) if isinstance(value, str) else value

    def __getitem__(self, key: str):
        return self.values[self.resolve(key)]

    def section(self, name: str) -> dict[str, Any]:
        return {k.split(".", 1)[1]: v for k, v in self.values.items() if k.startswith(name + ".")}

    def snapshot(self) -> str:
        cp = configparser.ConfigParser()
        cp.optionxform = str
        for s in DEFAULTS:
            cp[s] = {k: str(v) for k, v in self.section(s).items()}
        lines = []
        for s in cp.sections():
            lines.append(f"[{s}]")
            lines += [f"{k} = {v}" for k, v in cp[s].items()]
            lines.append("")
        return "\n".join(lines)


def parse_overrides(items: Iterable[str]) -> dict[str, str]:
    out = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        out[k.strip()] = v
    return out


def load_config(path=None, overrides: Iterable[str] = ()) -> Config:
    cfg = Config()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} not found")
        cp = configparser.ConfigParser()
        cp.optionxform = str
        try:
            cp.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for s in cp.sections():
            if s not in DEFAULTS:
                raise ConfigError(f"unknown config section [{s}]")
            for k, v in cp[s].items():
                if k not in DEFAULTS[s]:
                    raise ConfigError(f"unknown config key {s}.{k}")
                cfg.set(f"{s}.{k}", v)
    for k, v in parse_overrides(overrides).items():
        cfg.set(k, v)
    return cfg
