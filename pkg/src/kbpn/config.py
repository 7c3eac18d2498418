"""Experiment configuration: dataclasses plus an INI-style text format.

Resolution order is defaults < config file < command-line overrides. A
config file has one section per group::

    [model]
    variant = kbpn
    stages = 4

    [train]
    seed = 0
    total_steps = 2000

Overrides use dotted keys such as ``train.seed=3``.
"""
import configparser
import dataclasses
import io
import typing
from dataclasses import dataclass, field
from typing import Optional, Tuple

from .losses import LossWeights
from .networks import NetworkConfig


@dataclass
class OptimSettings:
    batch_size: int = 8
    lr_initial: float = 1e-4
    lr_drop_to: float = 1e-5
    drop_step: Optional[int] = None  # None: 75% of total_steps
    total_steps: int = 1000
    seed: Optional[int] = None  # None: drawn at startup and logged
    eval_every: int = 0
    checkpoint_every: int = 0
    log_every: int = 1
    deterministic: bool = True

    def resolved_drop_step(self) -> int:
        return self.drop_step if self.drop_step is not None else int(0.75 * self.total_steps)


@dataclass
class DataSettings:
    dataset_dir: Optional[str] = None
    val_dir: Optional[str] = None
    lr_patch_size: int = 32
    hflip: bool = True
    vflip: bool = True
    blur_family: str = "isotropic"
    sigma_range: Tuple[float, float] = (0.2, 4.0)
    pca_samples: int = 10_000
    pca_seed: int = 0


@dataclass
class TrainConfig:
    model: NetworkConfig = field(default_factory=NetworkConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    train: OptimSettings = field(default_factory=OptimSettings)
    data: DataSettings = field(default_factory=DataSettings)
    run_dir: str = "runs/default"

    def validate(self) -> "TrainConfig":
        t, d = self.train, self.data
        if t.batch_size < 1:
            raise ValueError("train.batch_size must be >= 1")
        if t.total_steps < 0:
            raise ValueError("train.total_steps must be >= 0")
        lo, hi = d.sigma_range
        if not (0 < lo <= hi <= 10):
            raise ValueError(f"data.sigma_range must lie in (0, 10], got {d.sigma_range}")
        if d.blur_family not in ("isotropic", "anisotropic"):
            raise ValueError(f"data.blur_family must be isotropic or anisotropic, got {d.blur_family!r}")
        if d.lr_patch_size < 1:
            raise ValueError("data.lr_patch_size must be >= 1")
        return self

    @property
    def checkpoint_dir(self) -> str:
        return f"{self.run_dir}/checkpoints"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


SECTIONS = ("model", "loss", "train", "data")


def _parse(text: str, tp):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union and type(None) in args:
        if text.strip().lower() in ("", "none", "null"):
            return None
        return _parse(text, next(a for a in args if a is not type(None)))
    if tp is bool:
        low = text.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if tp is int:
        return int(text)
    if tp is float:
        return float(text)
    if tp is str:
        return text.strip()
    if origin in (tuple, Tuple):
        parts = [p for p in text.replace("(", "").replace(")", "").split(",") if p.strip()]
        if len(parts) != len(args):
            raise ValueError(f"expected {len(args)} comma-separated values, got {text!r}")
        return tuple(_parse(p, a) for a, p in zip(args, parts))
    raise TypeError(f"unsupported config type {tp}")


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    return str(value)


def _replace(obj, key: str, raw):
    hints = typing.get_type_hints(type(obj))
    if key not in hints:
        raise KeyError(f"unknown key {key!r} for {type(obj).__name__}")
    value = _parse(raw, hints[key]) if isinstance(raw, str) else raw
    return dataclasses.replace(obj, **{key: value})


def apply_overrides(cfg: TrainConfig, overrides: dict) -> TrainConfig:
    """Apply ``{"section.key": value}`` pairs; string values are parsed by field type."""
    for dotted, raw in overrides.items():
        if dotted == "run_dir":
            cfg = dataclasses.replace(cfg, run_dir=str(raw))
            continue
        section, _, key = dotted.partition(".")
        if section not in SECTIONS or not key:
            raise KeyError(f"unknown config key {dotted!r}")
        cfg = dataclasses.replace(cfg, **{section: _replace(getattr(cfg, section), key, raw)})
    return cfg.validate()


def loads(text: str, base: TrainConfig | None = None) -> TrainConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_string(text)
    overrides = {}
    for section in parser.sections():
        if section == "run":
            for key, value in parser[section].items():
                if key != "run_dir":
                    raise KeyError(f"unknown key run.{key}")
                overrides["run_dir"] = value
            continue
        if section not in SECTIONS:
            raise KeyError(f"unknown config section [{section}]")
        for key, value in parser[section].items():
            overrides[f"{section}.{key}"] = value
    return apply_overrides(base or TrainConfig(), overrides)


def load(path, base: TrainConfig | None = None) -> TrainConfig:
    with open(path) as fh:
        return loads(fh.read(), base)


def dumps(cfg: TrainConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser["run"] = {"run_dir": cfg.run_dir}
    for section in SECTIONS:
        obj = getattr(cfg, section)
        parser[section] = {f.name: _format(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def from_dict(data: dict) -> TrainConfig:
    """Inverse of ``TrainConfig.to_dict`` (used for checkpoint config snapshots)."""
    data = dict(data)
    data["model"] = NetworkConfig(**data["model"])
    data["loss"] = LossWeights(**data["loss"])
    data["train"] = OptimSettings(**data["train"])
    d = dict(data["data"])
    d["sigma_range"] = tuple(d["sigma_range"])
    data["data"] = DataSettings(**d)
    return TrainConfig(**data).validate()
