"""
Preflight checks run before training or evaluation to catch common misconfigurations early.
"""

import logging
import tempfile
from pathlib import Path

import tifffile
from PIL import Image
from rich.console import Console
from rich.panel import Panel
from rich.text import Text

from em_seg_adapt.config import RunConfig
from em_seg_adapt.data.stacks import TIFF_SUFFIXES
from em_seg_adapt.data.stacks import split_paths

logger = logging.getLogger(__name__)


def _first_section_shape(images: Path) -> tuple[int, int] | None:
    """(height, width) of the first section without decoding the whole stack."""
    try:
        if images.is_file() and images.suffix.lower() in TIFF_SUFFIXES:
            with tifffile.TiffFile(images) as tif:
                shape = tif.pages[0].shape
                return int(shape[0]), int(shape[1])
        pngs = sorted(images.glob("*.png"))
        if not pngs:
            return None
        with Image.open(pngs[0]) as img:
            width, height = img.size
            return height, width
    except (OSError, IndexError, ValueError) as e:
        logger.debug("Cannot probe %s: %s", images, e)
        return None


def _has_sections(path: Path) -> bool:
    if path.is_file():
        return path.suffix.lower() in TIFF_SUFFIXES
    return path.is_dir() and any(path.glob("*.png"))


def run_preflight_checks(
    cfg: RunConfig,
    console: Console,
    *,
    source: Path | None,
    targets: list[Path],
    out_dir: Path | None,
) -> bool:
    """Return True if the run may proceed; print issues and return False otherwise.

    ``source`` and each of ``targets`` are split directories holding
    ``images/`` (and ``labels/``).
    """
    issues: list[tuple[str, str, str]] = []  # (label, detail, hint)
    divisor = cfg.arch.divisor

    # 1. Dataset directories exist and hold sections
    splits = ([("Source", source)] if source is not None else []) + [
        (f"Target ({p.name})", p) for p in targets
    ]
    shapes: list[tuple[str, tuple[int, int]]] = []
    for label, split in splits:
        images, _ = split_paths(split)
        if not _has_sections(images):
            logger.error("No sections found under %s", images)
            issues.append(
                (label, f"no PNG/TIFF sections under {images}", "Run: em-seg-adapt synth")
            )
            continue
        shape = _first_section_shape(images)
        if shape is not None:
            shapes.append((label, shape))

    # 2. Source labels present
    if source is not None and source.exists():
        _, labels = split_paths(source)
        if labels is None or not _has_sections(labels):
            issues.append(
                (
                    "Source labels",
                    f"no labels under {source}",
                    "Supervised training needs source masks",
                )
            )

    # 3. Patch geometry
    patch = cfg.data.patch
    if patch % divisor:
        issues.append(
            (
                "data.patch",
                f"{patch} is not divisible by 2^depth = {divisor}",
                f"Use a multiple of {divisor}",
            )
        )
    for label, (height, width) in shapes:
        if patch > min(height, width):
            issues.append(
                (
                    label,
                    f"patch {patch} exceeds section size {height}×{width}",
                    "Lower data.patch or use larger sections",
                )
            )

    # 4. Evaluation tile
    if cfg.eval.tile % divisor:
        issues.append(
            (
                "eval.tile",
                f"{cfg.eval.tile} is not divisible by 2^depth = {divisor}",
                f"Use a multiple of {divisor}",
            )
        )

    # 5. Output directory writable
    if out_dir is not None:
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
            with tempfile.NamedTemporaryFile(dir=out_dir):
                pass
        except OSError as e:
            logger.error("Output directory %s is not writable: %s", out_dir, e)
            issues.append(("Output directory", f"{out_dir}: {e}", "Check permissions or --out"))

    if issues:
        _print_issues(issues, console)
        return False
    return True


def _print_issues(issues: list[tuple[str, str, str]], console: Console) -> None:
    body = Text()
    for i, (label, detail, hint) in enumerate(issues):
        if i:
            body.append("\n")
        body.append(f"  ✗  {label}: ", style="bold red")
        body.append(detail, style="bold red")
        body.append(f"\n       → {hint}", style="yellow")

    console.print(Panel(body, title="[bold red]Preflight checks failed[/bold red]"))
