"""
Sliding-window inference over whole stacks and Dice/Jaccard scoring.
"""

import logging
import math
from pathlib import Path

import numpy as np
import torch

from em_seg_adapt.data.stacks import save_stack
from em_seg_adapt.models import ConfigError
from em_seg_adapt.models import DataError
from em_seg_adapt.models import EvalConfig
from em_seg_adapt.models import ImageStack
from em_seg_adapt.models import MetricsReport
from em_seg_adapt.models import ShapeError
from em_seg_adapt.models import UnlabeledStack
from em_seg_adapt.rundir import METRICS_COLUMNS
from em_seg_adapt.rundir import RunDirectory
from em_seg_adapt.rundir import append_csv_rows

logger = logging.getLogger(__name__)

TILE_BATCH = 16


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def binarize(p: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """``p > threshold`` as a uint8 mask (a probability equal to the threshold is background)."""
    if not 0.0 <= threshold <= 1.0:
        raise ConfigError(f"threshold must lie in [0, 1], got {threshold}")
    return (np.asarray(p) > threshold).astype(np.uint8)


def _check_binary(mask: np.ndarray, name: str) -> None:
    if not np.isin(mask, (0, 1)).all():
        raise DataError(f"{name} mask must contain only 0 and 1")


def confusion_counts(pred: np.ndarray, gt: np.ndarray) -> tuple[int, int, int]:
    """``(tp, fp, fn)`` over all pixels of two same-shaped binary masks."""
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"Prediction shape {pred.shape} != ground truth {gt.shape}")
    _check_binary(pred, "prediction")
    _check_binary(gt, "ground-truth")
    p, g = pred.astype(bool), gt.astype(bool)
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return tp, fp, fn


def scores_from_counts(tp: int, fp: int, fn: int) -> tuple[float, float]:
    """DSC and JAC in percent; two empty masks score (100, 100)."""
    if tp + fp + fn == 0:
        return 100.0, 100.0
    return 100.0 * 2 * tp / (2 * tp + fp + fn), 100.0 * tp / (tp + fp + fn)


def dice_jaccard(pred: np.ndarray, gt: np.ndarray) -> tuple[float, float]:
    return scores_from_counts(*confusion_counts(pred, gt))


def _report(pred: np.ndarray, gt: np.ndarray, threshold: float) -> MetricsReport:
    tp, fp, fn = confusion_counts(pred, gt)
    dsc, jac = scores_from_counts(tp, fp, fn)
    return MetricsReport(
        dsc=dsc, jac=jac, threshold=threshold, n_pixels=int(gt.size), tp=tp, fp=fp, fn=fn
    )


def score_predictions(
    probs: np.ndarray,
    labels: np.ndarray,
    threshold: float = 0.5,
    per_section: bool = False,
) -> MetricsReport:
    """Binarize ``probs`` and score against ``labels`` with global confusion counts.

    With ``per_section`` the report also carries one report per section.
    """
    if probs.shape != labels.shape:
        raise ShapeError(f"Probability shape {probs.shape} != label shape {labels.shape}")
    pred = binarize(probs, threshold)
    report = _report(pred, labels, threshold)
    if per_section:
        report.sections = [_report(p, g, threshold) for p, g in zip(pred, labels, strict=True)]
    return report


# ---------------------------------------------------------------------------
# Tiled inference
# ---------------------------------------------------------------------------


def _tile_starts(size: int, tile: int, stride: int) -> tuple[list[int], int]:
    """Tile origins along one axis and the padded extent they cover."""
    n = 1 if size <= tile else math.ceil((size - tile) / stride) + 1
    starts = [i * stride for i in range(n)]
    return starts, starts[-1] + tile


def _predict_tiles(bundle, tiles: np.ndarray) -> np.ndarray:
    out = []
    with torch.no_grad():
        for i in range(0, len(tiles), TILE_BATCH):
            x = torch.from_numpy(np.ascontiguousarray(tiles[i : i + TILE_BATCH, np.newaxis]))
            out.append(bundle.ge(x).p[:, 0].cpu().numpy())
    return np.concatenate(out)


def tiled_inference(
    bundle,
    stack: ImageStack | UnlabeledStack,
    tile: int = 64,
    overlap: int = 32,
) -> np.ndarray:
    """Per-pixel foreground probabilities averaged over overlapping tiles.

    Sections are reflect-padded on the bottom/right to a whole number of
    strides, predicted tile by tile and cropped back to their own size.
    """
    divisor = bundle.arch.divisor
    if tile % divisor:
        raise ConfigError(f"Tile {tile} is not divisible by 2^depth = {divisor}")
    if not 0 <= overlap < tile:
        raise ConfigError(f"Overlap must satisfy 0 <= overlap < tile, got {overlap}")
    stride = tile - overlap
    bundle.eval()

    depth, height, width = stack.sections.shape
    rows, padded_h = _tile_starts(height, tile, stride)
    cols, padded_w = _tile_starts(width, tile, stride)
    result = np.empty((depth, height, width), dtype=np.float32)

    for index, section in enumerate(stack.sections):
        padded = np.pad(
            section, ((0, padded_h - height), (0, padded_w - width)), mode="reflect"
        ).astype(np.float32)
        origins = [(r, c) for r in rows for c in cols]
        tiles = np.stack([padded[r : r + tile, c : c + tile] for r, c in origins])
        probs = _predict_tiles(bundle, tiles)

        total = np.zeros((padded_h, padded_w), dtype=np.float64)
        count = np.zeros((padded_h, padded_w), dtype=np.float64)
        for (r, c), p in zip(origins, probs, strict=True):
            total[r : r + tile, c : c + tile] += p
            count[r : r + tile, c : c + tile] += 1.0
        result[index] = (total / count)[:height, :width]
    logger.debug("Tiled inference: %d sections, %d tiles each", depth, len(rows) * len(cols))
    return result


def evaluate(
    bundle,
    stack: ImageStack,
    threshold: float = 0.5,
    tile: int = 64,
    overlap: int = 32,
    per_section: bool = False,
) -> MetricsReport:
    """tiled_inference → binarize → global Dice/Jaccard over the whole labelled stack."""
    if not isinstance(stack, ImageStack) or stack.labels is None:
        raise DataError("Evaluation needs a stack with labels")
    probs = tiled_inference(bundle, stack, tile, overlap)
    return score_predictions(probs, stack.labels, threshold, per_section)


# ---------------------------------------------------------------------------
# Outputs
# ---------------------------------------------------------------------------


def append_metrics_row(
    path: Path, run_id: str, checkpoint: str, split: str, report: MetricsReport
) -> None:
    row = [run_id, checkpoint, split, report.threshold, report.dsc, report.jac, report.n_pixels]
    append_csv_rows(path, METRICS_COLUMNS, [row])


def write_predictions(probs: np.ndarray, threshold: float, out_dir: Path) -> np.ndarray:
    """Save binarized predictions as 0/255 PNG masks and return them."""
    masks = binarize(probs, threshold)
    save_stack(ImageStack(sections=masks.astype(np.float32)), out_dir)
    return masks


def evaluate_run(
    bundle,
    stack: ImageStack,
    eval_cfg: EvalConfig,
    run_dir: Path,
    checkpoint: str,
    split: str = "target_test",
) -> MetricsReport:
    """Evaluate into a run directory: prediction PNGs plus one metrics.csv row per report."""
    if stack.labels is None:
        raise DataError(f"Evaluation split {split!r} has no labels")
    rd = RunDirectory(run_dir)
    probs = tiled_inference(bundle, stack, eval_cfg.tile, eval_cfg.overlap)
    write_predictions(probs, eval_cfg.threshold, rd.predictions_dir)
    report = score_predictions(probs, stack.labels, eval_cfg.threshold, eval_cfg.per_section)
    report.checkpoint = checkpoint
    append_metrics_row(rd.metrics_path, rd.path.name, checkpoint, split, report)
    for index, section_report in enumerate(report.sections):
        append_metrics_row(
            rd.metrics_path, rd.path.name, checkpoint, f"{split}[{index}]", section_report
        )
    logger.info(
        "%s @ %s on %s: DSC %.2f  JAC %.2f", rd.path.name, checkpoint, split, report.dsc, report.jac
    )
    return report
