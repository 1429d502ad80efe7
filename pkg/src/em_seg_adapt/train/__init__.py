"""
AdaptationRun: thin orchestrator that delegates to the train submodules.
"""

import logging
from pathlib import Path

from em_seg_adapt.config import RunConfig
from em_seg_adapt.models import ImageStack
from em_seg_adapt.models import UnlabeledStack
from em_seg_adapt.train.adapt import adapt_step
from em_seg_adapt.train.loop import RunReport
from em_seg_adapt.train.loop import init_from_checkpoint
from em_seg_adapt.train.loop import resume
from em_seg_adapt.train.loop import train
from em_seg_adapt.train.pretrain import pretrain_ge
from em_seg_adapt.train.schedule import poly_lr
from em_seg_adapt.train.state import TrainState
from em_seg_adapt.train.state import init_state

__all__ = [
    "AdaptationRun",
    "RunReport",
    "TrainState",
    "adapt_step",
    "init_from_checkpoint",
    "init_state",
    "poly_lr",
    "pretrain_ge",
    "resume",
    "train",
]


class AdaptationRun:
    """One training run bound to a run directory."""

    def __init__(self, config: RunConfig, run_dir: Path):
        self.config = config
        self.run_dir = Path(run_dir)
        self.logger = logging.getLogger(__name__)
        self.state: TrainState | None = None

    def run(
        self,
        source: ImageStack,
        target_train: UnlabeledStack,
        init: Path | None = None,
        resume_run: bool = False,
    ) -> RunReport:
        """Train from scratch, from a pretrained checkpoint (``init``), or resume the directory."""
        if resume_run:
            self.state, report = resume(self.run_dir, self.config, source, target_train)
            return report
        state = None
        if init is not None:
            self.logger.info("Initialising from %s", init)
            state = init_from_checkpoint(self.config, init)
        self.state, report = train(
            self.config, source, target_train, run_dir=self.run_dir, state=state
        )
        return report
