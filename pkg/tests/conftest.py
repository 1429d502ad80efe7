"""
Shared pytest fixtures: tiny synthetic domains, a tiny architecture and run configs.
"""

from dataclasses import replace

import numpy as np
import pytest

from em_seg_adapt.config import RunConfig
from em_seg_adapt.data.synth import synth_domains
from em_seg_adapt.models import AblationFlags
from em_seg_adapt.models import ArchConfig
from em_seg_adapt.models import DataConfig
from em_seg_adapt.models import EvalConfig
from em_seg_adapt.models import ImageStack
from em_seg_adapt.models import ShiftSpec
from em_seg_adapt.models import SynthConfig
from em_seg_adapt.models import TrainConfig

PATCH = 16

TINY_SYNTH = SynthConfig(
    canvas_size=32,
    blob_count_range=(1, 3),
    blob_radius_range=(3.0, 6.0),
    n_train_source=4,
    n_train_target=4,
    n_test_target=2,
    seed=3,
)
TINY_ARCH = ArchConfig(base_width=4, depth=2, disc_width=4, disc_depth=2)
TINY_TRAIN = TrainConfig(
    total_iters=4,
    pretrain_iters=2,
    batch_size=2,
    checkpoint_every=2,
    log_every=1,
    seed=5,
)


def make_run_config(**train_changes) -> RunConfig:
    """Tiny RunConfig; keyword arguments replace TrainConfig fields."""
    return RunConfig(
        synth=TINY_SYNTH,
        arch=TINY_ARCH,
        train=replace(TINY_TRAIN, **train_changes),
        data=DataConfig(patch=PATCH),
        eval=EvalConfig(tile=PATCH, overlap=8),
    )


def all_flags(on: bool) -> AblationFlags:
    return AblationFlags(en=on, de_feat=on, de_pred=on)


def random_stack(
    depth: int = 3, height: int = 20, width: int = 24, seed: int = 0, labels: bool = True
) -> ImageStack:
    """8-bit-representable random sections (and random masks)."""
    rng = np.random.default_rng(seed)
    sections = rng.integers(0, 256, size=(depth, height, width)).astype(np.float32) / 255
    masks = rng.integers(0, 2, size=(depth, height, width)).astype(np.uint8) if labels else None
    return ImageStack(sections=sections, labels=masks)


@pytest.fixture(scope="session")
def tiny_domains() -> tuple[ImageStack, ImageStack, ImageStack]:
    return synth_domains(TINY_SYNTH)


@pytest.fixture(scope="session")
def identity_domains() -> tuple[ImageStack, ImageStack, ImageStack]:
    shift = ShiftSpec(invert_contrast=False, frequency_delta=0.0, noise_sigma=0.0)
    return synth_domains(replace(TINY_SYNTH, target_shift=shift))


@pytest.fixture
def source(tiny_domains) -> ImageStack:
    return tiny_domains[0]


@pytest.fixture
def target_train(tiny_domains):
    return tiny_domains[1].unlabeled()


@pytest.fixture
def target_test(tiny_domains) -> ImageStack:
    return tiny_domains[2]


@pytest.fixture
def run_config() -> RunConfig:
    return make_run_config()


@pytest.fixture
def run_dir(tmp_path):
    return tmp_path / "run"


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(11)
