"""Run configuration and checkpointing.

Config files are flat ``key = value`` text: one assignment per line, ``#``
comments, typed parsing against :class:`RunConfig`'s fields, and strict
rejection of unknown keys.  Checkpoints are pickled dicts of numpy arrays
keyed by the model's hierarchical parameter names, so a save/load/save
round trip is byte-identical.
"""
from __future__ import annotations

import dataclasses
import pickle
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigError

CHECKPOINT_VERSION = 1

FUSION_SCHEMES = ("none", "g1_to_g2", "g2_to_g1", "both", "two_phase")


def write_kv_file(path, pairs: dict):
    lines = [f"{k} = {v}" for k, v in pairs.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_kv_file(path) -> dict[str, str]:
    pairs = {}
    for ln, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{ln}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value.strip()
    return pairs


@dataclass
class RunConfig:
    """Every knob of a training/evaluation run, serializable to flat text."""

    # experiment
    seed: int = 0
    out_dir: str = "runs/default"
    # dataset
    height: int = 64
    width: int = 128
    d_max: int = 32
    k: int = 2
    grayscale: bool = True
    shape_count: int = 6
    texture_scale: float = 8.0
    n_train: int = 512
    n_val: int = 16
    # optimization
    lr: float = 2e-4
    batch_size: int = 4
    steps: int = 2000
    clip_norm: float = 1.0
    ckpt_every: int = 1000
    # feature extractors
    c_cor: int = 64
    c_cat4: int = 32
    c_cat8: int = 48
    c_cat16: int = 64
    c_cat32: int = 96
    c_ctx: int = 64
    groups: int = 8
    # recurrent fusion
    iterations: int = 16
    phase_split: int = 8
    peak_count: int = 3
    r_schedule: tuple = (4, 4, 4, 4, 2, 2, 2, 2, 1, 1, 1, 1, 1, 1, 1, 1)
    r_cat: int = 4
    fusion_scheme: str = "two_phase"
    hidden_dim: int = 16
    motion_dim: int = 32
    # input alignment (which view feeds which feature family)
    degrade_left_for_corr: bool = True
    degrade_left_for_cat: bool = False

    def __post_init__(self):
        self.r_schedule = tuple(int(r) for r in self.r_schedule)
        self.validate()

    def validate(self):
        if self.height % 32 or self.width % 32:
            raise ConfigError("height and width must be multiples of 32")
        if self.height % self.k or self.width % self.k:
            raise ConfigError(f"image size not divisible by k={self.k}")
        if self.d_max % 4:
            raise ConfigError("d_max must be a multiple of 4")
        if self.d_max > self.width // 2:
            raise ConfigError("d_max must not exceed width/2")
        if self.fusion_scheme not in FUSION_SCHEMES:
            raise ConfigError(
                f"fusion_scheme must be one of {FUSION_SCHEMES}, got {self.fusion_scheme!r}"
            )
        if len(self.r_schedule) != self.iterations:
            raise ConfigError(
                f"r_schedule has {len(self.r_schedule)} entries for "
                f"{self.iterations} iterations"
            )
        if not 1 <= self.phase_split <= self.iterations:
            raise ConfigError("phase_split must lie in [1, iterations]")
        if self.peak_count < 1:
            raise ConfigError("peak_count must be >= 1")
        if any(r < 1 for r in self.r_schedule) or self.r_cat < 1:
            raise ConfigError("all search radii must be >= 1")
        if self.c_cat4 % self.groups:
            raise ConfigError("c_cat4 must be divisible by groups")
        for name in ("c_cor", "c_cat4", "c_cat8", "c_cat16", "c_cat32", "c_ctx"):
            if getattr(self, name) < self.groups:
                raise ConfigError(f"{name} must be >= groups")
        if self.c_ctx % 2:
            raise ConfigError("c_ctx must be even (hidden/injection split)")

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, pairs: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(pairs) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**pairs)

    def to_file(self, path):
        pairs = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            pairs[f.name] = v
        write_kv_file(path, pairs)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        raw = read_kv_file(path)
        fields = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(raw) - set(fields)
        if unknown:
            raise ConfigError(f"unknown config keys in {path}: {sorted(unknown)}")
        parsed = {}
        for key, text in raw.items():
            parsed[key] = _parse_value(key, text, fields[key].type)
        return cls(**parsed)

    def replaced(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def _parse_value(key: str, text: str, ftype: str):
    ftype = str(ftype)
    if "bool" in ftype:
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected boolean, got {text!r}")
    try:
        if "tuple" in ftype:
            return tuple(int(x) for x in text.split(",") if x.strip())
        if "int" in ftype:
            return int(text)
        if "float" in ftype:
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {text!r} as {ftype}") from exc
    return text


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def _to_numpy_tree(obj):
    if isinstance(obj, torch.Tensor):
        return obj.detach().cpu().numpy().copy()
    if isinstance(obj, dict):
        return {k: _to_numpy_tree(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return type(obj)(_to_numpy_tree(v) for v in obj)
    return obj


def _to_tensor_tree(obj):
    if isinstance(obj, np.ndarray):
        return torch.from_numpy(obj.copy())
    if isinstance(obj, dict):
        return {k: _to_tensor_tree(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return type(obj)(_to_tensor_tree(v) for v in obj)
    return obj


def save_checkpoint(path, model: torch.nn.Module, config: RunConfig,
                    step: int, optimizer=None, scheduler=None):
    payload = {
        "version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "params": _to_numpy_tree(model.state_dict()),
        "optimizer": _to_numpy_tree(optimizer.state_dict()) if optimizer else None,
        "scheduler": scheduler.state_dict() if scheduler else None,
        "step": int(step),
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        pickler = pickle.Pickler(fh, protocol=4)
        # no memoization: byte output must not depend on object identity
        # sharing, only on content, so save/load/save is byte-identical
        pickler.fast = True
        pickler.dump(payload)


def load_checkpoint(path) -> dict:
    with open(path, "rb") as fh:
        payload = pickle.load(fh)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(
            f"checkpoint version {payload.get('version')} != {CHECKPOINT_VERSION}"
        )
    payload["config"] = RunConfig.from_dict(payload["config"])
    payload["params"] = _to_tensor_tree(payload["params"])
    if payload["optimizer"] is not None:
        payload["optimizer"] = _to_tensor_tree(payload["optimizer"])
    return payload
