"""
Synthetic source/target domain pair with a purely visual domain gap.

Every section is a union of random ellipses ("organelles") with a dark
membrane rim, rendered onto a sinusoidally textured background. The label
process is shared by all splits; the target splits are rendered with a
shifted appearance (contrast inversion, different texture frequency,
additive Gaussian noise).
"""

import logging

import numpy as np
from scipy.ndimage import binary_dilation
from scipy.ndimage import gaussian_filter

from em_seg_adapt.models import ConfigError
from em_seg_adapt.models import ImageStack
from em_seg_adapt.models import ShiftSpec
from em_seg_adapt.models import SynthConfig
from em_seg_adapt.models import TextureSpec

logger = logging.getLogger(__name__)

_BACKGROUND = 0.62
_FOREGROUND = 0.30
_MEMBRANE = 0.12
_EDGE_SIGMA = 0.8
# Redraws allowed before a section's label fraction is declared unreachable.
_MAX_LABEL_ATTEMPTS = 100


def _ellipse_mask(size: int, config: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    lo, hi = config.blob_count_range
    r_lo, r_hi = config.blob_radius_range
    yy, xx = np.mgrid[:size, :size].astype(np.float64)
    mask = np.zeros((size, size), dtype=bool)
    for _ in range(int(rng.integers(lo, hi + 1))):
        a, b = rng.uniform(r_lo, r_hi, size=2)
        cy, cx = rng.uniform(r_hi, size - r_hi, size=2)
        theta = rng.uniform(0.0, np.pi)
        dy, dx = yy - cy, xx - cx
        u = dx * np.cos(theta) + dy * np.sin(theta)
        v = -dx * np.sin(theta) + dy * np.cos(theta)
        mask |= (u / a) ** 2 + (v / b) ** 2 <= 1.0
    return mask


def draw_label(config: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """Draw one binary mask whose foreground fraction lies strictly in (0, 0.5)."""
    size = config.canvas_size
    for _ in range(_MAX_LABEL_ATTEMPTS):
        mask = _ellipse_mask(size, config, rng)
        fraction = mask.mean()
        if 0.0 < fraction < 0.5:
            return mask.astype(np.uint8)
    raise ConfigError(
        f"Synthetic config cannot produce label fractions in (0, 0.5) "
        f"(blob_count_range={config.blob_count_range}, "
        f"blob_radius_range={config.blob_radius_range}, canvas={size})"
    )


def _texture(size: int, texture: TextureSpec, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[:size, :size].astype(np.float64)
    theta = rng.uniform(0.0, np.pi)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    omega = 2.0 * np.pi * texture.frequency / 64.0
    return texture.amplitude * np.sin(omega * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)


def render_section(
    mask: np.ndarray,
    texture: TextureSpec,
    shift: ShiftSpec | None,
    rng: np.random.Generator,
) -> np.ndarray:
    """Render a label mask to gray values in [0, 1]; ``shift=None`` is the source look."""
    size = mask.shape[0]
    if shift is not None:
        texture = TextureSpec(
            frequency=texture.frequency + shift.frequency_delta,
            amplitude=texture.amplitude,
        )
    fg = mask.astype(bool)
    rim = binary_dilation(fg, iterations=2) & ~fg

    tex = _texture(size, texture, rng)
    image = _BACKGROUND + tex
    image[fg] = _FOREGROUND + 0.5 * tex[fg]
    image[rim] = _MEMBRANE
    image = gaussian_filter(image, sigma=_EDGE_SIGMA)

    if shift is not None:
        if shift.invert_contrast:
            image = 1.0 - image
        if shift.noise_sigma > 0:
            image = image + rng.normal(0.0, shift.noise_sigma, size=image.shape)
    return np.clip(image, 0.0, 1.0).astype(np.float32)


def _synth_split(
    config: SynthConfig, count: int, shift: ShiftSpec | None, seed_seq: np.random.SeedSequence
) -> ImageStack:
    # Separate streams keep the label process independent of the appearance shift.
    label_rng, render_rng = (np.random.default_rng(s) for s in seed_seq.spawn(2))
    sections, labels = [], []
    for _ in range(count):
        mask = draw_label(config, label_rng)
        sections.append(render_section(mask, config.source_texture, shift, render_rng))
        labels.append(mask)
    return ImageStack(sections=np.stack(sections), labels=np.stack(labels))


def synth_domains(config: SynthConfig) -> tuple[ImageStack, ImageStack, ImageStack]:
    """Generate (source, target_train, target_test); a pure function of the config.

    Target labels are generated for evaluation only; the trainer receives the
    target_train split through its label-stripped view.
    """
    config.validate()
    source_seq, train_seq, test_seq = np.random.SeedSequence(config.seed).spawn(3)
    source = _synth_split(config, config.n_train_source, None, source_seq)
    target_train = _synth_split(config, config.n_train_target, config.target_shift, train_seq)
    target_test = _synth_split(config, config.n_test_target, config.target_shift, test_seq)
    logger.info(
        "Synthesised %d source, %d target-train, %d target-test sections of %d×%d (seed %d)",
        len(source),
        len(target_train),
        len(target_test),
        config.canvas_size,
        config.canvas_size,
        config.seed,
    )
    return source, target_train, target_test
