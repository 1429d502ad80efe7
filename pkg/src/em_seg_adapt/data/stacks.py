"""
Image stack I/O, normalisation and the target train/test split.
"""

import hashlib
import logging
import math
from pathlib import Path

import numpy as np
import tifffile
from PIL import Image
from PIL import UnidentifiedImageError

from em_seg_adapt.models import ConfigError
from em_seg_adapt.models import DataError
from em_seg_adapt.models import ImageStack
from em_seg_adapt.models import UnlabeledStack

logger = logging.getLogger(__name__)

DATASET_SPLITS = ("source", "target_train", "target_test")
TIFF_SUFFIXES = (".tif", ".tiff")


def normalize(section: np.ndarray) -> np.ndarray:
    """Min-max scale one section to [0, 1]; constant sections map to zeros."""
    section = np.asarray(section, dtype=np.float64)
    if not np.isfinite(section).all():
        raise DataError("Cannot normalise a section containing NaN or Inf")
    lo = section.min()
    span = section.max() - lo
    if span == 0:
        return np.zeros(section.shape, dtype=np.float32)
    return ((section - lo) / span).astype(np.float32)


# ---------------------------------------------------------------------------
# Reading
# ---------------------------------------------------------------------------


def _read_png(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            if img.mode != "L":
                img = img.convert("L")
            return np.asarray(img, dtype=np.uint8).copy()
    except (OSError, UnidentifiedImageError) as e:
        raise DataError(f"Cannot read section {path}: {e}") from e


def _read_raw_sections(path: Path) -> list[np.ndarray]:
    """Return 8-bit sections from a PNG directory or a multi-page TIFF, in order."""
    if not path.exists():
        raise DataError(f"Stack path does not exist: {path}")

    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix.lower() == ".png")
        if not files:
            raise DataError(f"No PNG sections found in {path}")
        return [_read_png(p) for p in files]

    if path.suffix.lower() in TIFF_SUFFIXES:
        try:
            data = tifffile.imread(path)
        except (OSError, ValueError) as e:
            raise DataError(f"Cannot read TIFF stack {path}: {e}") from e
        if data.ndim == 2:
            data = data[np.newaxis]
        if data.ndim != 3:
            raise DataError(f"TIFF stack {path} must be grayscale pages, got shape {data.shape}")
        if data.dtype != np.uint8:
            raise DataError(f"TIFF stack {path} must be 8-bit, got {data.dtype}")
        return list(data)

    raise DataError(f"Unsupported stack path {path}: expected a PNG directory or a TIFF file")


def _stack_sections(raw: list[np.ndarray], what: str, path: Path) -> np.ndarray:
    height, width = raw[0].shape
    for index, section in enumerate(raw):
        if section.ndim != 2:
            raise DataError(f"{what} {index} in {path} is not a 2D grayscale image")
        if section.shape != (height, width):
            raise DataError(
                f"{what} {index} in {path} has size {section.shape[0]}×{section.shape[1]}, "
                f"expected {height}×{width}"
            )
    return np.stack(raw)


def load_stack(path: Path, label_path: Path | None = None) -> ImageStack:
    """Load an 8-bit grayscale stack, scaling gray values to [0, 1].

    Labels, when given, are binarised at > 127 and must match the sections
    one-to-one.
    """
    path = Path(path)
    raw = _read_raw_sections(path)
    sections = _stack_sections(raw, "Section", path).astype(np.float32) / np.float32(255.0)

    labels = None
    if label_path is not None:
        label_path = Path(label_path)
        raw_labels = _read_raw_sections(label_path)
        if len(raw_labels) != len(raw):
            raise DataError(
                f"Label count {len(raw_labels)} in {label_path} does not match section "
                f"count {len(raw)} in {path} (first unmatched index "
                f"{min(len(raw_labels), len(raw))})"
            )
        label_arr = _stack_sections(raw_labels, "Label", label_path)
        if label_arr.shape != sections.shape:
            raise DataError(
                f"Label size {label_arr.shape[1:]} does not match section size "
                f"{sections.shape[1:]} (index 0)"
            )
        labels = (label_arr > 127).astype(np.uint8)

    stack = ImageStack(sections=sections, labels=labels)
    logger.debug("Loaded %s: %s sections of %s×%s", path, *stack.axis_meta)
    return stack


# ---------------------------------------------------------------------------
# Writing
# ---------------------------------------------------------------------------


def _write_pngs(arrays: np.ndarray, out_dir: Path) -> None:
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        for index, arr in enumerate(arrays):
            img = Image.fromarray(np.ascontiguousarray(arr, dtype=np.uint8))
            img.save(out_dir / f"{index:04d}.png")
    except OSError as e:
        raise DataError(f"Cannot write sections to {out_dir}: {e}") from e


def save_stack(stack: ImageStack, path: Path, label_path: Path | None = None) -> None:
    """Write sections as zero-padded 8-bit PNGs, and labels as 0/255 PNGs."""
    quantized = np.rint(stack.sections * 255.0).astype(np.uint8)
    _write_pngs(quantized, Path(path))
    if label_path is not None:
        if stack.labels is None:
            raise DataError("Cannot save labels of an unlabelled stack")
        _write_pngs(stack.labels * np.uint8(255), Path(label_path))


def write_dataset(out_dir: Path, stacks: dict[str, ImageStack]) -> None:
    """Write the three dataset splits as ``<split>/images`` and ``<split>/labels``."""
    for split in DATASET_SPLITS:
        stack = stacks[split]
        save_stack(
            stack,
            out_dir / split / "images",
            out_dir / split / "labels" if stack.has_labels else None,
        )


def split_paths(split_dir: Path) -> tuple[Path, Path | None]:
    """``(images, labels)`` of a split directory: ``images/`` or ``images.tif``, same for labels."""
    split_dir = Path(split_dir)

    def find(stem: str) -> Path | None:
        candidates = [split_dir / stem] + [split_dir / f"{stem}{s}" for s in TIFF_SUFFIXES]
        return next((p for p in candidates if p.exists()), None)

    return find("images") or split_dir / "images", find("labels")


def load_split(split_dir: Path) -> ImageStack:
    images, labels = split_paths(split_dir)
    return load_stack(images, labels)


def read_dataset(data_dir: Path) -> dict[str, ImageStack]:
    """Read a dataset directory written by :func:`write_dataset`."""
    data_dir = Path(data_dir)
    result = {split: load_split(data_dir / split) for split in DATASET_SPLITS}
    logger.info(
        "Dataset %s: %s",
        data_dir,
        ", ".join(f"{s}={len(result[s])}" for s in DATASET_SPLITS),
    )
    return result


# ---------------------------------------------------------------------------
# Splitting and digests
# ---------------------------------------------------------------------------


def split_target_x(stack: ImageStack, train_fraction: float) -> tuple[ImageStack, ImageStack]:
    """Cut every section at column floor(fraction × width): left → train, right → test."""
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    width = stack.sections.shape[2]
    if width < 2:
        raise DataError(f"Cannot split a stack of width {width}")
    boundary = math.floor(train_fraction * width)
    if boundary in (0, width):
        raise DataError(
            f"train_fraction {train_fraction} leaves an empty split for width {width}"
        )

    def cut(arr: np.ndarray | None, cols: slice) -> np.ndarray | None:
        return None if arr is None else np.ascontiguousarray(arr[:, :, cols])

    left, right = slice(0, boundary), slice(boundary, width)
    train = ImageStack(cut(stack.sections, left), cut(stack.labels, left))
    test = ImageStack(cut(stack.sections, right), cut(stack.labels, right))
    return train, test


def stack_digest(stack: ImageStack | UnlabeledStack) -> str:
    """SHA-256 over shape, section values and (if present) label values."""
    h = hashlib.sha256()
    h.update(repr(stack.sections.shape).encode())
    h.update(np.ascontiguousarray(stack.sections, dtype=np.float32).tobytes())
    labels = getattr(stack, "labels", None)
    if labels is not None:
        h.update(np.ascontiguousarray(labels, dtype=np.uint8).tobytes())
    return h.hexdigest()
