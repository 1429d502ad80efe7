"""
Random patch sampling for source/target training batches.
"""

import numpy as np

from em_seg_adapt.models import DataError
from em_seg_adapt.models import ImageStack
from em_seg_adapt.models import TrainBatch
from em_seg_adapt.models import UnlabeledStack

N_DIHEDRAL = 8


def apply_dihedral(arr: np.ndarray, k: int) -> np.ndarray:
    """Apply dihedral transform ``k`` (0..7) to the last two axes.

    ``k % 4`` quarter turns counter-clockwise, followed by a horizontal flip
    when ``k >= 4``. ``k = 0`` is the identity.
    """
    if not 0 <= k < N_DIHEDRAL:
        raise ValueError(f"Dihedral index must be in [0, 8), got {k}")
    out = np.rot90(arr, k % 4, axes=(-2, -1))
    if k >= 4:
        out = np.flip(out, axis=-1)
    return np.ascontiguousarray(out)


def _check_patch(sections: np.ndarray, patch: int, what: str) -> None:
    _, height, width = sections.shape
    if patch < 1 or patch > min(height, width):
        raise DataError(f"Patch size {patch} exceeds the {what} section size {height}×{width}")


def _crop_positions(
    sections: np.ndarray, patch: int, n: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    depth, height, width = sections.shape
    index = rng.integers(0, depth, size=n)
    top = rng.integers(0, height - patch + 1, size=n)
    left = rng.integers(0, width - patch + 1, size=n)
    return index, top, left


def _gather(arr: np.ndarray, positions, patch: int) -> np.ndarray:
    index, top, left = positions
    return np.stack(
        [arr[i, y : y + patch, x : x + patch] for i, y, x in zip(index, top, left, strict=True)]
    )


def _draw_transforms(n: int, augment: bool, rng: np.random.Generator) -> np.ndarray:
    if not augment:
        return np.zeros(n, dtype=np.int64)
    return rng.integers(0, N_DIHEDRAL, size=n)


def _transform_all(crops: np.ndarray, ks: np.ndarray) -> np.ndarray:
    return np.stack([apply_dihedral(c, int(k)) for c, k in zip(crops, ks, strict=True)])


def sample_source(
    source: ImageStack,
    patch: int,
    n: int,
    rng: np.random.Generator,
    augment: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(x, y)`` source crops, each N×1×patch×patch."""
    if source.labels is None:
        raise DataError("Source stack has no labels; supervised training needs them")
    _check_patch(source.sections, patch, "source")
    positions = _crop_positions(source.sections, patch, n, rng)
    ks = _draw_transforms(n, augment, rng)
    x = _transform_all(_gather(source.sections, positions, patch), ks)
    y = _transform_all(_gather(source.labels, positions, patch), ks)
    return x[:, np.newaxis].astype(np.float32), y[:, np.newaxis].astype(np.float32)


def sample_target(
    target: UnlabeledStack,
    patch: int,
    n: int,
    rng: np.random.Generator,
    augment: bool = False,
) -> np.ndarray:
    """Return N×1×patch×patch target crops from a label-stripped view."""
    if not isinstance(target, UnlabeledStack):
        raise DataError(
            f"Target must be a label-stripped UnlabeledStack (use .unlabeled()), "
            f"got {type(target).__name__}"
        )
    _check_patch(target.sections, patch, "target")
    positions = _crop_positions(target.sections, patch, n, rng)
    ks = _draw_transforms(n, augment, rng)
    x = _transform_all(_gather(target.sections, positions, patch), ks)
    return x[:, np.newaxis].astype(np.float32)


def sample_batch(
    source: ImageStack,
    target: UnlabeledStack,
    patch: int,
    n: int,
    rng: np.random.Generator,
    augment: bool = False,
) -> TrainBatch:
    """Draw ``n`` independent crops from each domain, advancing ``rng`` deterministically."""
    x_s, y_s = sample_source(source, patch, n, rng, augment)
    x_t = sample_target(target, patch, n, rng, augment)
    return TrainBatch(x_s=x_s, y_s=y_s, x_t=x_t)
