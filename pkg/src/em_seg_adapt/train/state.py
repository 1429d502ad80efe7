"""
Mutable training state: networks, per-group Adam optimisers, sampling stream and logs.
"""

import json
import logging
from dataclasses import dataclass
from dataclasses import field
from pathlib import Path

import numpy as np
import torch

from em_seg_adapt.checkpoint import CheckpointMeta
from em_seg_adapt.checkpoint import load_checkpoint
from em_seg_adapt.checkpoint import save_checkpoint
from em_seg_adapt.models import ArchConfig
from em_seg_adapt.models import CheckpointError
from em_seg_adapt.models import HistoryRow
from em_seg_adapt.models import NumericalError
from em_seg_adapt.models import TrainConfig
from em_seg_adapt.nets import DISCRIMINATORS
from em_seg_adapt.nets import OPTIMIZER_GROUPS
from em_seg_adapt.nets import NetworkBundle
from em_seg_adapt.nets import build_bundle
from em_seg_adapt.nets import component_parameters

logger = logging.getLogger(__name__)


@dataclass
class TrainState:
    bundle: NetworkBundle
    optimizers: dict[str, torch.optim.Adam]
    rng: np.random.Generator
    seed: int = 0
    iter: int = 0
    pretrained: bool = False
    history: list[HistoryRow] = field(default_factory=list)
    pretrain_history: list[tuple[int, float, float]] = field(default_factory=list)
    disc_updates: dict[str, int] = field(default_factory=lambda: dict.fromkeys(DISCRIMINATORS, 0))

    def digests(self) -> dict[str, str]:
        return self.bundle.digests()

    def to_meta(self, config_digest: str = "") -> CheckpointMeta:
        return CheckpointMeta(
            iteration=self.iter,
            seed=self.seed,
            config_digest=config_digest,
            pretrained=self.pretrained,
            rng_state=self.rng.bit_generator.state,
            disc_updates=dict(self.disc_updates),
        )

    def save(self, path: Path, config_digest: str = "") -> Path:
        return save_checkpoint(path, self.bundle, self.optimizers, self.to_meta(config_digest))

    def restore(self, path: Path) -> CheckpointMeta:
        """Load weights, Adam moments, iteration and sampling stream from a checkpoint."""
        meta = load_checkpoint(path, self.bundle, self.optimizers)
        if meta.rng_state:
            try:
                self.rng.bit_generator.state = meta.rng_state
            except (TypeError, ValueError, KeyError) as e:
                raise CheckpointError(f"Checkpoint {path} has an unusable rng state: {e}") from e
        self.iter = meta.iteration
        self.seed = meta.seed
        self.pretrained = meta.pretrained
        self.disc_updates = dict(meta.disc_updates)
        return meta


def new_optimizers(bundle: NetworkBundle, cfg: TrainConfig) -> dict[str, torch.optim.Adam]:
    """One Adam per parameter group: ``generator`` (encoder + decoders), ``d_pred``, ``d_feat``."""
    return {
        group: torch.optim.Adam(
            component_parameters(bundle, group), lr=cfg.lr0, betas=tuple(cfg.adam_betas)
        )
        for group in OPTIMIZER_GROUPS
    }


def init_state(arch: ArchConfig, cfg: TrainConfig) -> TrainState:
    """Fresh state whose weights and sampling stream depend only on ``(arch, cfg.seed)``."""
    bundle = build_bundle(arch, cfg.seed)
    bundle.train()
    state = TrainState(
        bundle=bundle,
        optimizers=new_optimizers(bundle, cfg),
        rng=np.random.default_rng(cfg.seed),
        seed=cfg.seed,
    )
    logger.debug(
        "Initialised state: seed=%d, digests=%s",
        cfg.seed,
        json.dumps({k: v[:12] for k, v in state.digests().items()}),
    )
    return state


def check_finite(iteration: int, term: str, tensor: torch.Tensor) -> None:
    """Abort with :class:`NumericalError` when ``tensor`` holds NaN or Inf."""
    if not torch.isfinite(tensor).all():
        bad = tensor[~torch.isfinite(tensor)].flatten()[0]
        raise NumericalError(iteration, term, float(bad))
