"""
Full training run: pretraining, the adaptation loop, checkpoints, resume and the run report.
"""

import logging
import time
from dataclasses import dataclass
from dataclasses import field
from pathlib import Path

import torch

from em_seg_adapt.config import RunConfig
from em_seg_adapt.config import config_digest
from em_seg_adapt.config import flatten
from em_seg_adapt.config import render_kv
from em_seg_adapt.config import to_text
from em_seg_adapt.data.sampling import sample_batch
from em_seg_adapt.models import CheckpointError
from em_seg_adapt.models import HistoryRow
from em_seg_adapt.models import ImageStack
from em_seg_adapt.models import UnlabeledStack
from em_seg_adapt.rundir import RunDirectory
from em_seg_adapt.train.adapt import adapt_step
from em_seg_adapt.train.pretrain import pretrain_ge
from em_seg_adapt.train.state import TrainState
from em_seg_adapt.train.state import init_state

logger = logging.getLogger(__name__)


@dataclass
class RunReport:
    """Summary written to report.txt at the end of a run."""

    config: dict[str, object]
    seed: int
    iterations: int
    pretrain_iters: int
    wall_time: float
    disc_updates: dict[str, int]
    checkpoints: list[str] = field(default_factory=list)
    digests: dict[str, str] = field(default_factory=dict)
    first: HistoryRow | None = None
    last: HistoryRow | None = None
    pretrain_seg: tuple[float, float] | None = None

    def to_text(self) -> str:
        values: dict[str, object] = {
            "seed": self.seed,
            "iterations": self.iterations,
            "pretrain_iters": self.pretrain_iters,
            "wall_time_s": round(self.wall_time, 3),
            "checkpoints": ",".join(self.checkpoints),
            "history": "history.csv",
        }
        values.update({f"disc_updates.{k}": v for k, v in self.disc_updates.items()})
        values.update({f"digest.{k}": v for k, v in self.digests.items()})
        if self.pretrain_seg is not None:
            values["curve.pretrain_seg.first"], values["curve.pretrain_seg.last"] = (
                self.pretrain_seg
            )
        for tag, row in (("first", self.first), ("last", self.last)):
            if row is not None:
                for name in ("seg", "rec", "d_pred", "d_feat", "g_pred", "g_feat", "lr"):
                    values[f"curve.{name}.{tag}"] = getattr(row, name)
        values.update({f"config.{k}": v for k, v in self.config.items()})
        return render_kv(values)


def configure_determinism(enabled: bool) -> None:
    """Force deterministic kernels and a fixed thread count for bitwise-repeatable runs."""
    torch.use_deterministic_algorithms(enabled)
    if enabled:
        torch.set_num_threads(1)


def _log_row(row: HistoryRow, total: int) -> None:
    logger.info(
        "iter %5d/%d  lr=%.3e  seg=%.4f rec=%.4f d_pred=%.4f d_feat=%.4f g_pred=%.4f g_feat=%.4f",
        row.iter,
        total,
        row.lr,
        row.seg,
        row.rec,
        row.d_pred,
        row.d_feat,
        row.g_pred,
        row.g_feat,
    )


def train(
    cfg: RunConfig,
    source: ImageStack,
    target_train: UnlabeledStack,
    run_dir: Path | None = None,
    state: TrainState | None = None,
    resuming: bool = False,
) -> tuple[TrainState, RunReport]:
    """Pretrain (unless ``state`` already is) then run adaptation up to ``cfg.train.total_iters``.

    With ``run_dir`` the loss logs, checkpoints and report are written there. Artifacts of an
    earlier run in that directory are cleared first unless ``resuming``.
    """
    tc = cfg.train
    configure_determinism(tc.deterministic)
    started = time.perf_counter()
    digest = config_digest(cfg)
    rd = RunDirectory(run_dir) if run_dir is not None else None
    if rd is not None:
        rd.create()
        if not resuming:
            rd.reset()
        rd.write_config(to_text(cfg))

    if state is None:
        state = init_state(cfg.arch, tc)
    checkpoints: list[str] = []

    def checkpoint() -> None:
        if rd is None:
            return
        path = state.save(rd.checkpoint_path(state.iter), digest)
        checkpoints.append(path.name)

    if not state.pretrained:
        logger.info("Pretraining segmentation path for %d iterations", tc.pretrain_iters)
        pretrain_ge(state, source, tc, cfg.data.patch, cfg.data.augment)
        if rd is not None:
            rd.append_pretrain(state.pretrain_history)
        checkpoint()

    pending: list[HistoryRow] = []

    def flush() -> None:
        if rd is not None and pending:
            rd.append_history(pending)
        pending.clear()

    if state.iter < tc.total_iters:
        logger.info(
            "Adapting (%s) from iteration %d to %d",
            tc.ablation.label,
            state.iter,
            tc.total_iters,
        )
    while state.iter < tc.total_iters:
        batch = sample_batch(
            source, target_train, cfg.data.patch, tc.batch_size, state.rng, cfg.data.augment
        )
        adapt_step(state, batch, tc)
        row = state.history[-1]
        pending.append(row)
        if tc.log_every and (row.iter % tc.log_every == 0 or state.iter == tc.total_iters):
            _log_row(row, tc.total_iters)
            flush()
        if tc.checkpoint_every and state.iter % tc.checkpoint_every == 0:
            flush()
            checkpoint()
    flush()

    if rd is not None and rd.checkpoint_path(state.iter).name not in checkpoints[-1:]:
        checkpoint()

    report = RunReport(
        config=flatten(cfg),
        seed=tc.seed,
        iterations=state.iter,
        pretrain_iters=tc.pretrain_iters,
        wall_time=time.perf_counter() - started,
        disc_updates=dict(state.disc_updates),
        checkpoints=checkpoints,
        digests=state.digests(),
        first=state.history[0] if state.history else None,
        last=state.history[-1] if state.history else None,
        pretrain_seg=(state.pretrain_history[0][2], state.pretrain_history[-1][2])
        if state.pretrain_history
        else None,
    )
    if rd is not None:
        rd.write_report(report.to_text())
    logger.info("Run finished: %d iterations in %.1fs", state.iter, report.wall_time)
    return state, report


def init_from_checkpoint(cfg: RunConfig, checkpoint: Path) -> TrainState:
    """Start adaptation from a pretrained checkpoint (weights, Adam moments and sampling stream)."""
    state = init_state(cfg.arch, cfg.train)
    meta = state.restore(checkpoint)
    if not meta.pretrained:
        raise CheckpointError(f"Checkpoint {checkpoint} does not hold a pretrained model")
    state.iter = 0
    state.seed = cfg.train.seed
    state.disc_updates = dict.fromkeys(state.disc_updates, 0)
    return state


def resume(
    run_dir: Path,
    cfg: RunConfig,
    source: ImageStack,
    target_train: UnlabeledStack,
) -> tuple[TrainState, RunReport]:
    """Continue an interrupted run from its latest checkpoint, appending to history.csv."""
    rd = RunDirectory(run_dir)
    latest = rd.latest_checkpoint()
    if latest is None:
        raise CheckpointError(f"No ckpt_<iter>.zip found in {run_dir}")
    state = init_state(cfg.arch, cfg.train)
    meta = state.restore(latest)
    if meta.config_digest and meta.config_digest != config_digest(cfg):
        raise CheckpointError(
            f"{latest.name} was written with a different configuration; "
            f"resume with the run's config.txt"
        )
    state.history = rd.truncate_history(state.iter)
    logger.info("Resuming %s at iteration %d", run_dir, state.iter)
    return train(cfg, source, target_train, run_dir=run_dir, state=state, resuming=True)
