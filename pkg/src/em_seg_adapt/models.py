"""
Pure data models, no torch imports.
"""

from dataclasses import asdict
from dataclasses import dataclass
from dataclasses import field
from pathlib import Path

import numpy as np

DEFAULT_CONFIG = Path("em-seg-adapt.conf")
DEFAULT_DATA_DIR = Path("data/synth")
DEFAULT_RUNS_DIR = Path("runs")


class AdaptError(Exception):
    """Base exception for domain-adaptation pipeline errors."""

    pass


class DataError(AdaptError):
    """Dataset contract violation: missing files, inconsistent sections, missing labels."""

    pass


class ConfigError(AdaptError, ValueError):
    """Invalid configuration key or value."""

    pass


class ShapeError(AdaptError, ValueError):
    """Tensor or array shape contract violation."""

    pass


class CheckpointError(AdaptError):
    """Malformed checkpoint archive or parameter shape mismatch."""

    pass


class NumericalError(AdaptError):
    """A loss term went non-finite during training."""

    def __init__(self, iteration: int, term: str, value: float):
        self.iteration = iteration
        self.term = term
        self.value = value
        super().__init__(f"Non-finite {term} loss ({value}) at iteration {iteration}")


# ---------------------------------------------------------------------------
# Image stacks
# ---------------------------------------------------------------------------


def _check_sections(sections: np.ndarray) -> None:
    if sections.ndim != 3:
        raise DataError(f"Stack sections must be (depth, height, width), got {sections.shape}")
    if not np.isfinite(sections).all():
        raise DataError("Stack contains non-finite gray values")
    if sections.size and (sections.min() < 0.0 or sections.max() > 1.0):
        raise DataError(
            f"Gray values must lie in [0, 1], got [{sections.min()}, {sections.max()}]"
        )


@dataclass(frozen=True, eq=False)
class UnlabeledStack:
    """Label-stripped view of an image stack.

    This is the only stack type the adaptation trainer accepts for the target
    domain; it has no labels attribute to read.
    """

    sections: np.ndarray  # (depth, height, width) float32 in [0, 1]

    def __post_init__(self):
        _check_sections(self.sections)

    @property
    def axis_meta(self) -> tuple[int, int, int]:
        depth, height, width = self.sections.shape
        return depth, height, width

    def __len__(self) -> int:
        return self.sections.shape[0]


@dataclass(frozen=True, eq=False)
class ImageStack:
    """Ordered grayscale sections with optional binary label masks."""

    sections: np.ndarray  # (depth, height, width) float32 in [0, 1]
    labels: np.ndarray | None = None  # (depth, height, width) uint8 in {0, 1}

    def __post_init__(self):
        _check_sections(self.sections)
        if self.labels is not None:
            if self.labels.shape != self.sections.shape:
                raise DataError(
                    f"Label shape {self.labels.shape} does not match sections "
                    f"{self.sections.shape}"
                )
            if not np.isin(self.labels, (0, 1)).all():
                raise DataError("Label masks must contain only 0 and 1")

    @property
    def axis_meta(self) -> tuple[int, int, int]:
        depth, height, width = self.sections.shape
        return depth, height, width

    @property
    def has_labels(self) -> bool:
        return self.labels is not None

    def __len__(self) -> int:
        return self.sections.shape[0]

    def unlabeled(self) -> UnlabeledStack:
        """Return the label-stripped view used for target-domain training."""
        return UnlabeledStack(sections=self.sections)


@dataclass(frozen=True)
class TrainBatch:
    """Paired source/target patches for one optimisation step (N×1×H×W float32)."""

    x_s: np.ndarray
    y_s: np.ndarray
    x_t: np.ndarray

    def __post_init__(self):
        if not (self.x_s.shape == self.y_s.shape == self.x_t.shape):
            raise ShapeError(
                f"Batch shapes differ: x_s {self.x_s.shape}, y_s {self.y_s.shape}, "
                f"x_t {self.x_t.shape}"
            )
        if self.x_s.ndim != 4 or self.x_s.shape[1] != 1:
            raise ShapeError(f"Batch tensors must be N×1×H×W, got {self.x_s.shape}")


# ---------------------------------------------------------------------------
# Synthetic benchmark
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TextureSpec:
    """Sinusoidal background texture: cycles per 64 pixels and peak amplitude."""

    frequency: float = 4.0
    amplitude: float = 0.08


@dataclass(frozen=True)
class ShiftSpec:
    """Appearance shift applied to every target-domain section."""

    invert_contrast: bool = True
    frequency_delta: float = 3.0
    noise_sigma: float = 0.06


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the synthetic source/target domain pair."""

    canvas_size: int = 128
    blob_count_range: tuple[int, int] = (3, 7)
    blob_radius_range: tuple[float, float] = (6.0, 14.0)
    source_texture: TextureSpec = field(default_factory=TextureSpec)
    target_shift: ShiftSpec = field(default_factory=ShiftSpec)
    n_train_source: int = 24
    n_train_target: int = 24
    n_test_target: int = 8
    seed: int = 0

    def validate(self) -> None:
        lo, hi = self.blob_count_range
        if lo < 1 or hi < lo:
            raise ConfigError(
                f"synth.blob_count_range must satisfy 1 <= min <= max, got {self.blob_count_range}"
            )
        r_lo, r_hi = self.blob_radius_range
        if r_lo <= 0 or r_hi < r_lo:
            raise ConfigError(
                f"synth.blob_radius_range must satisfy 0 < min <= max, got "
                f"{self.blob_radius_range}"
            )
        if 2 * r_hi >= self.canvas_size:
            raise ConfigError(
                f"synth.blob_radius_range max {r_hi} does not fit canvas {self.canvas_size}"
            )
        if self.canvas_size < 8:
            raise ConfigError(f"synth.canvas_size must be >= 8, got {self.canvas_size}")
        for name in ("n_train_source", "n_train_target", "n_test_target"):
            if getattr(self, name) < 1:
                raise ConfigError(f"synth.{name} must be >= 1, got {getattr(self, name)}")
        if self.target_shift.noise_sigma < 0:
            raise ConfigError("synth.noise_sigma must be >= 0")


# ---------------------------------------------------------------------------
# Networks, losses, training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ArchConfig:
    """Widths and depths of the five network components."""

    in_channels: int = 1
    base_width: int = 16
    depth: int = 3
    disc_width: int = 32
    disc_depth: int = 3

    def validate(self) -> None:
        if self.in_channels != 1:
            raise ConfigError(f"arch.in_channels must be 1, got {self.in_channels}")
        if self.depth < 1:
            raise ConfigError(f"arch.depth must be >= 1, got {self.depth}")
        if self.disc_depth < 1:
            raise ConfigError(f"arch.disc_depth must be >= 1, got {self.disc_depth}")
        if self.base_width < 1 or self.disc_width < 1:
            raise ConfigError("arch widths must be positive")

    @property
    def divisor(self) -> int:
        return 2**self.depth

    def check_patch(self, side: int) -> None:
        if side % self.divisor:
            raise ConfigError(f"Patch side {side} is not divisible by 2^depth = {self.divisor}")


@dataclass(frozen=True)
class LossWeights:
    """Trade-off weights of the reconstruction and adversarial terms."""

    lambda_rec: float = 1e-3
    lambda_feat: float = 1e-3
    lambda_pred: float = 1e-3

    def validate(self) -> None:
        for name, value in asdict(self).items():
            if not np.isfinite(value) or value < 0:
                raise ConfigError(f"train.{name} must be finite and >= 0, got {value}")


@dataclass(frozen=True)
class AblationFlags:
    """Which adaptation mechanisms are enabled."""

    en: bool = True  # encoding stage: shared-encoder reconstruction
    de_feat: bool = True  # decoding stage: feature discriminator
    de_pred: bool = True  # decoding stage: prediction discriminator

    @property
    def label(self) -> str:
        parts = [
            name
            for name, on in (("EN", self.en), ("DE_feat", self.de_feat), ("DE_pred", self.de_pred))
            if on
        ]
        return "+".join(parts) if parts else "No adaptation"


@dataclass(frozen=True)
class TrainConfig:
    """Optimiser, schedule and ablation settings for one training run."""

    lr0: float = 2e-4
    poly_power: float = 0.9
    total_iters: int = 2000
    pretrain_iters: int = 500
    batch_size: int = 4
    weights: LossWeights = field(default_factory=LossWeights)
    ablation: AblationFlags = field(default_factory=AblationFlags)
    seed: int = 0
    adam_betas: tuple[float, float] = (0.9, 0.999)
    checkpoint_every: int = 500
    disc_steps: int = 1
    log_every: int = 50
    deterministic: bool = False

    def validate(self) -> None:
        if self.total_iters < 0:
            raise ConfigError(f"train.total_iters must be >= 0, got {self.total_iters}")
        if self.pretrain_iters < 0:
            raise ConfigError(f"train.pretrain_iters must be >= 0, got {self.pretrain_iters}")
        if self.batch_size < 1:
            raise ConfigError(f"train.batch_size must be >= 1, got {self.batch_size}")
        if self.lr0 <= 0:
            raise ConfigError(f"train.lr0 must be > 0, got {self.lr0}")
        if self.disc_steps < 1:
            raise ConfigError(f"train.disc_steps must be >= 1, got {self.disc_steps}")
        if self.checkpoint_every < 0:
            raise ConfigError("train.checkpoint_every must be >= 0")
        self.weights.validate()


@dataclass(frozen=True)
class DataConfig:
    """Dataset locations and patch sampling."""

    train_fraction: float = 0.67
    patch: int = 64
    augment: bool = False
    source_dir: str = ""
    target_dir: str = ""


@dataclass(frozen=True)
class EvalConfig:
    """Tiled inference and metric settings."""

    threshold: float = 0.5
    tile: int = 64
    overlap: int = 32
    per_section: bool = False


@dataclass(frozen=True)
class HistoryRow:
    """One adaptation iteration as written to history.csv."""

    iter: int
    lr: float
    seg: float
    rec: float
    d_pred: float
    d_feat: float
    g_pred: float
    g_feat: float


@dataclass
class MetricsReport:
    """DSC/JAC percentages with confusion counts and provenance."""

    dsc: float
    jac: float
    threshold: float
    n_pixels: int
    tp: int = 0
    fp: int = 0
    fn: int = 0
    config_digest: str = ""
    checkpoint: str = ""
    seed: int | None = None
    sections: list["MetricsReport"] = field(default_factory=list)
