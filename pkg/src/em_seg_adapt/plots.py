"""
Loss-curve figures and side-by-side qualitative panels (input, ground truth, one column per run).
"""

import logging
from pathlib import Path

import numpy as np
from matplotlib.figure import Figure
from PIL import Image

from em_seg_adapt.data.stacks import load_stack
from em_seg_adapt.models import ConfigError
from em_seg_adapt.models import DataError
from em_seg_adapt.models import ImageStack
from em_seg_adapt.rundir import RunDirectory

logger = logging.getLogger(__name__)

GUTTER = 4
_ADVERSARIAL = ("d_pred", "d_feat", "g_pred", "g_feat")


def plot_loss_curves(run_dir: Path, out_path: Path | None = None) -> Path:
    """Render history.csv (and pretrain.csv when present) as a 2×2 loss-curve figure."""
    rd = RunDirectory(run_dir)
    if not rd.history_path.exists() and not rd.pretrain_path.exists():
        raise DataError(f"{run_dir} has neither history.csv nor pretrain.csv")
    history = rd.read_history()
    pretrain = [(i, seg) for i, _, seg in rd.read_pretrain()]
    out_path = Path(out_path) if out_path is not None else rd.path / "loss_curves.png"

    fig = Figure(figsize=(12, 9))
    (ax_seg, ax_rec), (ax_adv, ax_lr) = fig.subplots(2, 2)
    offset = len(pretrain)
    if pretrain:
        ax_seg.plot([i for i, _ in pretrain], [s for _, s in pretrain], label="pretrain seg")
    if history:
        iters = [offset + row.iter for row in history]
        ax_seg.plot(iters, [row.seg for row in history], label="adapt seg")
        ax_rec.plot(iters, [row.rec for row in history], color="tab:green")
        for name in _ADVERSARIAL:
            ax_adv.plot(iters, [getattr(row, name) for row in history], label=name)
        ax_lr.plot(iters, [row.lr for row in history], color="tab:purple")
        if offset:
            for ax in (ax_seg, ax_rec, ax_adv, ax_lr):
                ax.axvline(x=offset, color="red", linestyle="--", alpha=0.7)

    for ax, title in (
        (ax_seg, "Segmentation loss"),
        (ax_rec, "Reconstruction loss"),
        (ax_adv, "Adversarial losses"),
        (ax_lr, "Learning rate"),
    ):
        ax.set_title(title)
        ax.set_xlabel("Iteration")
        ax.grid(True)
    if ax_seg.get_legend_handles_labels()[0]:
        ax_seg.legend()
    if history:
        ax_adv.legend()
    fig.suptitle(rd.path.name)
    fig.tight_layout()
    try:
        fig.savefig(out_path)
    except OSError as e:
        raise DataError(f"Cannot write {out_path}: {e}") from e
    logger.debug("Wrote %s", out_path)
    return out_path


def _to_gray(arr: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)


def qualitative_panel(
    section: np.ndarray, label: np.ndarray, predictions: list[np.ndarray], gutter: int = GUTTER
) -> np.ndarray:
    """Concatenate input, ground truth and each binary prediction left to right (uint8)."""
    columns = [_to_gray(section), label.astype(np.uint8) * np.uint8(255)]
    columns += [p.astype(np.uint8) * np.uint8(255) for p in predictions]
    height = section.shape[0]
    spacer = np.full((height, gutter), 255, dtype=np.uint8)
    parts = []
    for i, col in enumerate(columns):
        if col.shape != section.shape:
            raise DataError(f"Panel column {i} has shape {col.shape}, expected {section.shape}")
        if i:
            parts.append(spacer)
        parts.append(col)
    return np.concatenate(parts, axis=1)


def load_predictions(run_dir: Path) -> np.ndarray:
    """Binary masks written by ``eval`` under ``<run>/predictions``."""
    pred_dir = RunDirectory(run_dir).predictions_dir
    if not pred_dir.exists():
        raise DataError(f"{run_dir} has no predictions/ (run `em-seg-adapt eval` first)")
    return (load_stack(pred_dir).sections > 0.5).astype(np.uint8)


def write_panels(test_stack: ImageStack, run_dirs: list[Path], out_dir: Path) -> list[Path]:
    """One ``panel_<index>.png`` per test section, one prediction column per run."""
    if not run_dirs:
        raise ConfigError("plot needs at least one run directory")
    if test_stack.labels is None:
        raise DataError("Qualitative panels need a labelled test stack")
    predictions = [load_predictions(rd) for rd in run_dirs]
    for rd, pred in zip(run_dirs, predictions, strict=True):
        if pred.shape != test_stack.sections.shape:
            raise DataError(
                f"Predictions in {rd} have shape {pred.shape}, expected "
                f"{test_stack.sections.shape}"
            )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for index, (section, label) in enumerate(
        zip(test_stack.sections, test_stack.labels, strict=True)
    ):
        panel = qualitative_panel(section, label, [pred[index] for pred in predictions])
        path = out_dir / f"panel_{index:04d}.png"
        try:
            Image.fromarray(panel).save(path)
        except OSError as e:
            raise DataError(f"Cannot write {path}: {e}") from e
        written.append(path)
    logger.info("Wrote %d panels to %s", len(written), out_dir)
    return written
