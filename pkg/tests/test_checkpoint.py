"""
Tests for checkpoint archives: exact round trips of weights, Adam moments and
metadata, byte-stable output, and validation on load.
"""

import io
import zipfile

import numpy as np
import pytest
import torch

from em_seg_adapt.checkpoint import CheckpointMeta
from em_seg_adapt.checkpoint import load_checkpoint
from em_seg_adapt.checkpoint import read_arch
from em_seg_adapt.checkpoint import save_checkpoint
from em_seg_adapt.models import ArchConfig
from em_seg_adapt.models import CheckpointError
from em_seg_adapt.nets import build_bundle
from em_seg_adapt.train.state import init_state
from tests.conftest import TINY_ARCH
from tests.conftest import TINY_TRAIN


def _stepped_state():
    """A state whose Adam optimisers hold moments after one step."""
    state = init_state(TINY_ARCH, TINY_TRAIN)
    x = torch.rand(2, 1, 16, 16, generator=torch.Generator().manual_seed(0))
    out = state.bundle.ge(x)
    loss = (
        out.p.mean()
        + state.bundle.d_pred(out.p.detach()).mean()
        + state.bundle.d_feat(out.f.detach()).mean()
    )
    loss.backward()
    for optimizer in state.optimizers.values():
        optimizer.step()
    state.iter = 7
    state.rng.random(5)
    return state


class TestRoundTrip:
    def test_weights_moments_and_meta(self, tmp_path):
        state = _stepped_state()
        path = state.save(tmp_path / "ckpt_7.zip", "abc123")

        fresh = init_state(TINY_ARCH, TINY_TRAIN)
        meta = fresh.restore(path)
        assert meta.iteration == 7
        assert meta.config_digest == "abc123"
        assert fresh.iter == 7
        assert fresh.digests() == state.digests()
        for group, optimizer in state.optimizers.items():
            restored = fresh.optimizers[group]
            originals = [optimizer.state[p] for p in optimizer.param_groups[0]["params"]]
            copies = [restored.state[p] for p in restored.param_groups[0]["params"]]
            for a, b in zip(originals, copies, strict=True):
                assert a.keys() == b.keys()
                for moment in a:
                    torch.testing.assert_close(a[moment], b[moment], rtol=0, atol=0)

    def test_sampling_stream_restored(self, tmp_path):
        """The restored generator continues exactly where the saved one stopped."""
        state = _stepped_state()
        path = state.save(tmp_path / "ckpt.zip")
        fresh = init_state(TINY_ARCH, TINY_TRAIN)
        fresh.restore(path)
        np.testing.assert_array_equal(fresh.rng.random(4), state.rng.random(4))

    def test_identical_states_identical_bytes(self, tmp_path):
        a = init_state(TINY_ARCH, TINY_TRAIN).save(tmp_path / "a.zip")
        b = init_state(TINY_ARCH, TINY_TRAIN).save(tmp_path / "b.zip")
        assert a.read_bytes() == b.read_bytes()

    def test_archive_layout(self, tmp_path):
        path = _stepped_state().save(tmp_path / "ckpt.zip")
        with zipfile.ZipFile(path) as zf:
            names = set(zf.namelist())
        assert {"arch.txt", "meta.txt", "params/encoder.0.conv1.weight.npy"} <= names
        assert any(n.startswith("optim/generator/encoder.0.conv1.weight.") for n in names)
        assert read_arch(path) == TINY_ARCH

    def test_meta_text_round_trip(self):
        meta = CheckpointMeta(
            iteration=3,
            seed=9,
            config_digest="d",
            pretrained=True,
            rng_state={"bit_generator": "PCG64", "state": {"state": 1, "inc": 3}},
            disc_updates={"d_pred": 2, "d_feat": 0},
        )
        assert CheckpointMeta.from_text(meta.to_text()) == meta


class TestValidation:
    def test_architecture_mismatch(self, tmp_path):
        path = init_state(TINY_ARCH, TINY_TRAIN).save(tmp_path / "ckpt.zip")
        other = build_bundle(ArchConfig(base_width=8, depth=2, disc_width=4, disc_depth=2), 0)
        with pytest.raises(CheckpointError, match="architecture"):
            load_checkpoint(path, other)

    def test_shape_mismatch_by_name(self, tmp_path):
        """A parameter stored with the wrong shape is rejected by name."""
        bundle = build_bundle(TINY_ARCH, 0)
        path = save_checkpoint(tmp_path / "ckpt.zip", bundle, {}, CheckpointMeta())
        broken = tmp_path / "broken.zip"
        with zipfile.ZipFile(path) as src, zipfile.ZipFile(broken, "w") as dst:
            for info in src.infolist():
                data = src.read(info.filename)
                if info.filename == "params/encoder.0.conv1.bias.npy":
                    buf = io.BytesIO()
                    np.save(buf, np.zeros(99, dtype=np.float32))
                    data = buf.getvalue()
                dst.writestr(info, data)
        with pytest.raises(CheckpointError, match="encoder.0.conv1.bias"):
            load_checkpoint(broken, build_bundle(TINY_ARCH, 0))

    def test_missing_parameter(self, tmp_path):
        bundle = build_bundle(TINY_ARCH, 0)
        path = save_checkpoint(tmp_path / "ckpt.zip", bundle, {}, CheckpointMeta())
        pruned = tmp_path / "pruned.zip"
        with zipfile.ZipFile(path) as src, zipfile.ZipFile(pruned, "w") as dst:
            for info in src.infolist():
                if info.filename != "params/d_pred.0.conv.weight.npy":
                    dst.writestr(info, src.read(info.filename))
        with pytest.raises(CheckpointError, match="missing=\\['d_pred.0.conv.weight'\\]"):
            load_checkpoint(pruned, build_bundle(TINY_ARCH, 0))

    def test_not_a_zip(self, tmp_path):
        path = tmp_path / "ckpt.zip"
        path.write_text("garbage")
        with pytest.raises(CheckpointError):
            load_checkpoint(path, build_bundle(TINY_ARCH, 0))
        with pytest.raises(CheckpointError):
            read_arch(path)
