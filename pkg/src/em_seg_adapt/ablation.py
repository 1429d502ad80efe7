"""
Ablation grid: the no-adaptation baseline and five mechanism combinations at an equal budget.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from dataclasses import replace
from pathlib import Path

from em_seg_adapt.config import RunConfig
from em_seg_adapt.evaluate import evaluate_run
from em_seg_adapt.models import AblationFlags
from em_seg_adapt.models import AdaptError
from em_seg_adapt.models import ConfigError
from em_seg_adapt.models import ImageStack
from em_seg_adapt.rundir import append_csv_rows
from em_seg_adapt.train.loop import train

logger = logging.getLogger(__name__)

# Row order of the results table.
ABLATION_ROWS: tuple[AblationFlags, ...] = (
    AblationFlags(en=False, de_feat=False, de_pred=False),
    AblationFlags(en=True, de_feat=False, de_pred=False),
    AblationFlags(en=False, de_feat=True, de_pred=False),
    AblationFlags(en=False, de_feat=False, de_pred=True),
    AblationFlags(en=True, de_feat=True, de_pred=False),
    AblationFlags(en=True, de_feat=True, de_pred=True),
)
TABLE_COLUMNS = ["row", "en", "de_feat", "de_pred", "dsc", "jac", "disc_updates", "status"]


@dataclass
class AblationRow:
    name: str
    flags: AblationFlags
    run_dir: Path
    dsc: float | None = None
    jac: float | None = None
    disc_updates: int = 0
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def row_slug(flags: AblationFlags) -> str:
    return flags.label.lower().replace("+", "_").replace(" ", "_")


def run_row(
    cfg: RunConfig,
    flags: AblationFlags,
    source: ImageStack,
    target_train: ImageStack,
    target_test: ImageStack,
    out_dir: Path,
) -> AblationRow:
    """Train and evaluate one row; domain failures are recorded on the row, not raised."""
    run_dir = Path(out_dir) / row_slug(flags)
    row = AblationRow(name=flags.label, flags=flags, run_dir=run_dir)
    row_cfg = replace(cfg, train=replace(cfg.train, ablation=flags))
    try:
        state, report = train(row_cfg, source, target_train.unlabeled(), run_dir=run_dir)
        metrics = evaluate_run(
            state.bundle, target_test, row_cfg.eval, run_dir, report.checkpoints[-1]
        )
    except AdaptError as e:
        logger.error("Ablation row %s failed: %s", row.name, e)
        row.error = f"{type(e).__name__}: {e}"
        return row
    row.dsc, row.jac = metrics.dsc, metrics.jac
    row.disc_updates = sum(state.disc_updates.values())
    return row


def run_ablation(
    cfg: RunConfig,
    stacks: dict[str, ImageStack],
    out_dir: Path,
    jobs: int = 1,
) -> list[AblationRow]:
    """Run every row with the same seed and budget; rows may run in parallel processes."""
    if jobs > 1 and cfg.train.deterministic:
        raise ConfigError("--jobs > 1 cannot be combined with --deterministic")
    args = [
        (cfg, flags, stacks["source"], stacks["target_train"], stacks["target_test"], out_dir)
        for flags in ABLATION_ROWS
    ]
    if jobs <= 1:
        return [run_row(*a) for a in args]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(run_row, *a) for a in args]
        return [f.result() for f in futures]


def write_ablation_table(rows: list[AblationRow], path: Path) -> Path:
    """Write ``ablation.csv`` in row order, replacing any previous table."""
    path = Path(path)
    if path.exists():
        path.unlink()
    append_csv_rows(
        path,
        TABLE_COLUMNS,
        [
            [
                r.name,
                r.flags.en,
                r.flags.de_feat,
                r.flags.de_pred,
                "" if r.dsc is None else r.dsc,
                "" if r.jac is None else r.jac,
                r.disc_updates,
                "ok" if r.ok else r.error,
            ]
            for r in rows
        ],
    )
    return path
