"""
Checkpoint archives: architecture, parameters, Adam moments and run metadata in one zip.

Layout::

    arch.txt                               ArchConfig as key = value lines
    meta.txt                               iteration, seed, config digest, rng state, ...
    params/<component.level.layer.kind>.npy     float32 parameter tensors
    optim/<group>/<param name>.<moment>.npy     Adam state (exp_avg, exp_avg_sq, step)
"""

import io
import json
import logging
import zipfile
from dataclasses import dataclass
from dataclasses import field
from pathlib import Path

import numpy as np
import torch

from em_seg_adapt.config import arch_from_text
from em_seg_adapt.config import arch_to_text
from em_seg_adapt.config import parse_kv_text
from em_seg_adapt.config import render_kv
from em_seg_adapt.models import ArchConfig
from em_seg_adapt.models import CheckpointError
from em_seg_adapt.models import ConfigError
from em_seg_adapt.nets import OPTIMIZER_GROUPS
from em_seg_adapt.nets import NetworkBundle
from em_seg_adapt.nets import named_group_parameters

logger = logging.getLogger(__name__)

# Fixed member timestamp so identical states produce identical archive bytes.
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


@dataclass
class CheckpointMeta:
    """Run bookkeeping stored next to the weights."""

    iteration: int = 0
    seed: int = 0
    config_digest: str = ""
    pretrained: bool = False
    rng_state: dict = field(default_factory=dict)
    disc_updates: dict[str, int] = field(default_factory=lambda: {"d_pred": 0, "d_feat": 0})

    def to_text(self) -> str:
        return render_kv(
            {
                "iteration": self.iteration,
                "seed": self.seed,
                "config_digest": self.config_digest,
                "pretrained": self.pretrained,
                "rng_state": json.dumps(self.rng_state, sort_keys=True),
                "disc_updates.d_pred": self.disc_updates.get("d_pred", 0),
                "disc_updates.d_feat": self.disc_updates.get("d_feat", 0),
            }
        )

    @classmethod
    def from_text(cls, text: str) -> "CheckpointMeta":
        raw = parse_kv_text(text, source="meta.txt")
        try:
            return cls(
                iteration=int(raw["iteration"]),
                seed=int(raw["seed"]),
                config_digest=raw.get("config_digest", ""),
                pretrained=raw.get("pretrained", "false").lower() == "true",
                rng_state=json.loads(raw.get("rng_state", "{}")),
                disc_updates={
                    "d_pred": int(raw.get("disc_updates.d_pred", 0)),
                    "d_feat": int(raw.get("disc_updates.d_feat", 0)),
                },
            )
        except (KeyError, ValueError) as e:
            raise CheckpointError(f"Malformed meta.txt: {e}") from e


def _npy_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.save(buf, arr, allow_pickle=False)
    return buf.getvalue()


def _write_member(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_ZIP_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    zf.writestr(info, data)


def save_checkpoint(
    path: Path,
    bundle: NetworkBundle,
    optimizers: dict[str, torch.optim.Optimizer],
    meta: CheckpointMeta,
) -> Path:
    """Write a checkpoint archive and return its path."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with zipfile.ZipFile(path, "w") as zf:
            _write_member(zf, "arch.txt", arch_to_text(bundle.arch).encode())
            _write_member(zf, "meta.txt", meta.to_text().encode())
            for name, tensor in bundle.state_dict().items():
                arr = tensor.detach().cpu().numpy().astype(np.float32)
                _write_member(zf, f"params/{name}.npy", _npy_bytes(arr))
            for group, optimizer in optimizers.items():
                for pname, param in named_group_parameters(bundle, group):
                    for moment, value in optimizer.state.get(param, {}).items():
                        arr = np.asarray(value.detach().cpu().numpy())
                        _write_member(zf, f"optim/{group}/{pname}.{moment}.npy", _npy_bytes(arr))
    except OSError as e:
        raise CheckpointError(f"Cannot write checkpoint {path}: {e}") from e
    logger.debug("Wrote checkpoint %s (iteration %d)", path, meta.iteration)
    return path


def read_arch(path: Path) -> ArchConfig:
    """Return the ArchConfig stored in a checkpoint without loading weights."""
    try:
        with zipfile.ZipFile(path) as zf:
            return arch_from_text(zf.read("arch.txt").decode())
    except (OSError, KeyError, zipfile.BadZipFile, ConfigError) as e:
        raise CheckpointError(f"Cannot read architecture from {path}: {e}") from e


def load_checkpoint(
    path: Path,
    bundle: NetworkBundle,
    optimizers: dict[str, torch.optim.Optimizer] | None = None,
) -> CheckpointMeta:
    """Restore weights (and Adam moments) in place, validating shapes by name."""
    path = Path(path)
    try:
        zf = zipfile.ZipFile(path)
    except (OSError, zipfile.BadZipFile) as e:
        raise CheckpointError(f"Cannot open checkpoint {path}: {e}") from e

    with zf:
        members = set(zf.namelist())
        try:
            arch = arch_from_text(zf.read("arch.txt").decode())
            meta = CheckpointMeta.from_text(zf.read("meta.txt").decode())
        except (KeyError, ConfigError) as e:
            raise CheckpointError(f"Checkpoint {path} is missing arch/meta: {e}") from e
        if arch != bundle.arch:
            raise CheckpointError(f"Checkpoint {path} architecture {arch} != {bundle.arch}")

        def read(name: str) -> np.ndarray:
            return np.load(io.BytesIO(zf.read(name)), allow_pickle=False)

        expected = bundle.state_dict()
        stored = {m[len("params/") : -len(".npy")] for m in members if m.startswith("params/")}
        missing, extra = sorted(set(expected) - stored), sorted(stored - set(expected))
        if missing or extra:
            raise CheckpointError(
                f"Checkpoint {path} parameter names differ: missing={missing} extra={extra}"
            )
        new_state = {}
        for name, tensor in expected.items():
            arr = read(f"params/{name}.npy")
            if tuple(arr.shape) != tuple(tensor.shape):
                raise CheckpointError(
                    f"Checkpoint {path}: {name} has shape {arr.shape}, expected "
                    f"{tuple(tensor.shape)}"
                )
            new_state[name] = torch.from_numpy(arr.astype(np.float32))
        bundle.load_state_dict(new_state)

        for group, optimizer in (optimizers or {}).items():
            if group not in OPTIMIZER_GROUPS:
                raise CheckpointError(f"Unknown optimiser group {group!r}")
            optimizer.state.clear()
            for pname, param in named_group_parameters(bundle, group):
                prefix = f"optim/{group}/{pname}."
                moments = {
                    m[len(prefix) : -len(".npy")]: m for m in members if m.startswith(prefix)
                }
                if moments:
                    optimizer.state[param] = {
                        moment: torch.from_numpy(read(member).copy())
                        for moment, member in moments.items()
                    }
    logger.debug("Loaded checkpoint %s (iteration %d)", path, meta.iteration)
    return meta
