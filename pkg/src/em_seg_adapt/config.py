"""
Flat ``key = value`` run configuration with ``synth.``/``arch.``/``train.``/``data.``/``eval.``
prefixes.

Resolution order: built-in defaults < config file < CLI overrides.
"""

import hashlib
from configparser import ConfigParser
from configparser import Error as ConfigParserError
from dataclasses import dataclass
from dataclasses import field
from dataclasses import replace
from pathlib import Path
from typing import Any

from em_seg_adapt.models import ArchConfig
from em_seg_adapt.models import ConfigError
from em_seg_adapt.models import DataConfig
from em_seg_adapt.models import EvalConfig
from em_seg_adapt.models import SynthConfig
from em_seg_adapt.models import TrainConfig

_TRUE = ("1", "yes", "true", "on")
_FALSE = ("0", "no", "false", "off")


@dataclass(frozen=True)
class RunConfig:
    """Every setting of a run, grouped by key prefix."""

    synth: SynthConfig = field(default_factory=SynthConfig)
    arch: ArchConfig = field(default_factory=ArchConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> None:
        self.synth.validate()
        self.arch.validate()
        self.train.validate()
        self.arch.check_patch(self.data.patch)
        self.arch.check_patch(self.eval.tile)
        if not 0 <= self.eval.overlap < self.eval.tile:
            raise ConfigError(
                f"eval.overlap must satisfy 0 <= overlap < tile, got {self.eval.overlap}"
            )
        if not 0.0 <= self.eval.threshold <= 1.0:
            raise ConfigError(f"eval.threshold must lie in [0, 1], got {self.eval.threshold}")
        if not 0.0 < self.data.train_fraction < 1.0:
            raise ConfigError(
                f"data.train_fraction must lie in (0, 1), got {self.data.train_fraction}"
            )


# Flat key → attribute path inside RunConfig (ints index into tuples).
KEYS: dict[str, tuple[str | int, ...]] = {
    "synth.canvas_size": ("synth", "canvas_size"),
    "synth.blob_count_min": ("synth", "blob_count_range", 0),
    "synth.blob_count_max": ("synth", "blob_count_range", 1),
    "synth.blob_radius_min": ("synth", "blob_radius_range", 0),
    "synth.blob_radius_max": ("synth", "blob_radius_range", 1),
    "synth.texture_frequency": ("synth", "source_texture", "frequency"),
    "synth.texture_amplitude": ("synth", "source_texture", "amplitude"),
    "synth.invert_contrast": ("synth", "target_shift", "invert_contrast"),
    "synth.frequency_delta": ("synth", "target_shift", "frequency_delta"),
    "synth.noise_sigma": ("synth", "target_shift", "noise_sigma"),
    "synth.n_train_source": ("synth", "n_train_source"),
    "synth.n_train_target": ("synth", "n_train_target"),
    "synth.n_test_target": ("synth", "n_test_target"),
    "synth.seed": ("synth", "seed"),
    "arch.in_channels": ("arch", "in_channels"),
    "arch.base_width": ("arch", "base_width"),
    "arch.depth": ("arch", "depth"),
    "arch.disc_width": ("arch", "disc_width"),
    "arch.disc_depth": ("arch", "disc_depth"),
    "train.lr0": ("train", "lr0"),
    "train.poly_power": ("train", "poly_power"),
    "train.total_iters": ("train", "total_iters"),
    "train.pretrain_iters": ("train", "pretrain_iters"),
    "train.batch_size": ("train", "batch_size"),
    "train.lambda_rec": ("train", "weights", "lambda_rec"),
    "train.lambda_feat": ("train", "weights", "lambda_feat"),
    "train.lambda_pred": ("train", "weights", "lambda_pred"),
    "train.en": ("train", "ablation", "en"),
    "train.de_feat": ("train", "ablation", "de_feat"),
    "train.de_pred": ("train", "ablation", "de_pred"),
    "train.seed": ("train", "seed"),
    "train.adam_beta1": ("train", "adam_betas", 0),
    "train.adam_beta2": ("train", "adam_betas", 1),
    "train.checkpoint_every": ("train", "checkpoint_every"),
    "train.disc_steps": ("train", "disc_steps"),
    "train.log_every": ("train", "log_every"),
    "train.deterministic": ("train", "deterministic"),
    "data.train_fraction": ("data", "train_fraction"),
    "data.patch": ("data", "patch"),
    "data.augment": ("data", "augment"),
    "data.source_dir": ("data", "source_dir"),
    "data.target_dir": ("data", "target_dir"),
    "eval.threshold": ("eval", "threshold"),
    "eval.tile": ("eval", "tile"),
    "eval.overlap": ("eval", "overlap"),
    "eval.per_section": ("eval", "per_section"),
}


def _get(obj: Any, path: tuple[str | int, ...]) -> Any:
    for step in path:
        obj = obj[step] if isinstance(step, int) else getattr(obj, step)
    return obj


def _set(obj: Any, path: tuple[str | int, ...], value: Any) -> Any:
    head, rest = path[0], path[1:]
    if rest:
        value = _set(_get(obj, (head,)), rest, value)
    if isinstance(head, int):
        items = list(obj)
        items[head] = value
        return tuple(items)
    return replace(obj, **{head: value})


def coerce(key: str, raw: str, like: Any) -> Any:
    """Convert a raw string to the type of the default value ``like``."""
    text = raw.strip()
    try:
        if isinstance(like, bool):
            lowered = text.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if isinstance(like, int):
            return int(text)
        if isinstance(like, float):
            return float(text)
    except ValueError as e:
        raise ConfigError(f"Invalid value for {key}: {e}") from e
    return text


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_kv_text(text: str, source: str = "<string>") -> dict[str, str]:
    """Parse ``key = value`` lines (``#``/``;`` comments allowed) preserving key case."""
    parser = ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + text, source=source)
    except ConfigParserError as e:
        raise ConfigError(f"Cannot parse {source}: {e}") from e
    return dict(parser["run"])


def render_kv(values: dict[str, Any]) -> str:
    return "".join(f"{key} = {format_value(values[key])}\n" for key in sorted(values))


def apply_overrides(cfg: RunConfig, overrides: dict[str, str]) -> RunConfig:
    unknown = sorted(k for k in overrides if k not in KEYS)
    if unknown:
        raise ConfigError(f"Unknown config key(s): {', '.join(unknown)}")
    for key, raw in overrides.items():
        path = KEYS[key]
        cfg = _set(cfg, path, coerce(key, raw, _get(cfg, path)))
    return cfg


def load_run_config(path: Path | None = None, overrides: dict[str, str] | None = None) -> RunConfig:
    """Resolve defaults < file < overrides and validate the result."""
    cfg = RunConfig()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"Config file not found: {path}")
        cfg = apply_overrides(cfg, parse_kv_text(path.read_text(), source=str(path)))
    cfg = apply_overrides(cfg, overrides or {})
    cfg.validate()
    return cfg


def flatten(cfg: RunConfig) -> dict[str, Any]:
    return {key: _get(cfg, path) for key, path in KEYS.items()}


def to_text(cfg: RunConfig) -> str:
    return render_kv(flatten(cfg))


def config_digest(cfg: RunConfig) -> str:
    return hashlib.sha256(to_text(cfg).encode()).hexdigest()


def arch_to_text(arch: ArchConfig) -> str:
    flat = flatten(RunConfig(arch=arch))
    return render_kv({k.removeprefix("arch."): v for k, v in flat.items() if k.startswith("arch.")})


def arch_from_text(text: str) -> ArchConfig:
    raw = parse_kv_text(text, source="arch.txt")
    return apply_overrides(RunConfig(), {f"arch.{k}": v for k, v in raw.items()}).arch
