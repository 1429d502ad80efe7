"""
Run and dataset directory persistence: config, loss history, reports, manifests.
"""

import csv
import logging
import re
import shutil
import sys
import time
from dataclasses import astuple
from dataclasses import dataclass
from dataclasses import field
from dataclasses import fields
from pathlib import Path

from em_seg_adapt import __version__
from em_seg_adapt.config import render_kv
from em_seg_adapt.models import AdaptError
from em_seg_adapt.models import HistoryRow

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = [f.name for f in fields(HistoryRow)]
PRETRAIN_COLUMNS = ["iter", "lr", "seg"]
METRICS_COLUMNS = ["run_id", "checkpoint", "split", "threshold", "dsc", "jac", "n_pixels"]
MANIFEST_NAME = "manifest.txt"
_CKPT_RE = re.compile(r"^ckpt_(\d+)\.zip$")


def _fmt(value) -> str:
    return repr(value) if isinstance(value, float) else str(value)


def append_csv_rows(path: Path, columns: list[str], rows: list[list]) -> None:
    """Append rows to a CSV file, writing the header first if the file is new.

    Floats are written with ``repr`` so values round-trip bit-exactly.
    """
    path = Path(path)
    try:
        new = not path.exists()
        with path.open("a", newline="") as fh:
            writer = csv.writer(fh)
            if new:
                writer.writerow(columns)
            writer.writerows([[_fmt(v) for v in row] for row in rows])
    except OSError as e:
        raise AdaptError(f"Run directory error ({path}): {e}") from e


@dataclass
class RunManifest:
    """Provenance block appended to an artifact directory's manifest.txt."""

    command: str
    config: dict[str, object] = field(default_factory=dict)
    dataset_digests: dict[str, str] = field(default_factory=dict)
    seed: int | None = None
    started: float = field(default_factory=time.time)
    finished: float | None = None
    code_version: str = __version__

    @classmethod
    def for_current_process(cls, **kwargs) -> "RunManifest":
        return cls(command=" ".join(sys.argv), **kwargs)

    def to_text(self) -> str:
        values: dict[str, object] = {
            "command": self.command,
            "code_version": self.code_version,
            "seed": "" if self.seed is None else self.seed,
            "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(self.started)),
            "finished": ""
            if self.finished is None
            else time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(self.finished)),
        }
        values.update({f"config.{k}": v for k, v in self.config.items()})
        values.update({f"digest.{k}": v for k, v in self.dataset_digests.items()})
        return render_kv(values)

    def append_to(self, directory: Path) -> Path:
        """Append this block to ``directory/manifest.txt`` (blocks separated by a blank line)."""
        path = Path(directory) / MANIFEST_NAME
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            prefix = "\n" if path.exists() and path.stat().st_size else ""
            with path.open("a") as fh:
                fh.write(prefix + self.to_text())
        except OSError as e:
            raise AdaptError(f"Cannot write manifest {path}: {e}") from e
        return path


class RunDirectory:
    """Owns the files of one training/evaluation run directory."""

    def __init__(self, path: Path):
        self.path = Path(path)

    def create(self) -> None:
        try:
            self.path.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise AdaptError(f"Cannot create run directory {self.path}: {e}") from e

    # ------------------------------------------------------------------ #
    # Paths                                                                #
    # ------------------------------------------------------------------ #

    @property
    def history_path(self) -> Path:
        return self.path / "history.csv"

    @property
    def pretrain_path(self) -> Path:
        return self.path / "pretrain.csv"

    @property
    def metrics_path(self) -> Path:
        return self.path / "metrics.csv"

    @property
    def predictions_dir(self) -> Path:
        return self.path / "predictions"

    def checkpoint_path(self, iteration: int) -> Path:
        return self.path / f"ckpt_{iteration}.zip"

    def checkpoints(self) -> list[tuple[int, Path]]:
        """All ``ckpt_<iter>.zip`` archives sorted by iteration."""
        if not self.path.exists():
            return []
        found = []
        for p in self.path.iterdir():
            m = _CKPT_RE.match(p.name)
            if m:
                found.append((int(m.group(1)), p))
        return sorted(found)

    def latest_checkpoint(self) -> Path | None:
        ckpts = self.checkpoints()
        return ckpts[-1][1] if ckpts else None

    # ------------------------------------------------------------------ #
    # Writers                                                              #
    # ------------------------------------------------------------------ #

    def _write_text(self, name: str, text: str) -> Path:
        path = self.path / name
        try:
            path.write_text(text)
        except OSError as e:
            raise AdaptError(f"Run directory error ({path}): {e}") from e
        return path

    def write_config(self, text: str) -> Path:
        return self._write_text("config.txt", text)

    def write_report(self, text: str) -> Path:
        return self._write_text("report.txt", text)

    def append_history(self, rows: list[HistoryRow]) -> None:
        append_csv_rows(self.history_path, HISTORY_COLUMNS, [list(astuple(r)) for r in rows])

    def append_pretrain(self, rows: list[tuple[int, float, float]]) -> None:
        append_csv_rows(self.pretrain_path, PRETRAIN_COLUMNS, [list(r) for r in rows])

    # ------------------------------------------------------------------ #
    # Readers                                                              #
    # ------------------------------------------------------------------ #

    def read_history(self) -> list[HistoryRow]:
        if not self.history_path.exists():
            return []
        try:
            with self.history_path.open(newline="") as fh:
                reader = csv.DictReader(fh)
                return [
                    HistoryRow(
                        iter=int(rec["iter"]),
                        **{c: float(rec[c]) for c in HISTORY_COLUMNS if c != "iter"},
                    )
                    for rec in reader
                ]
        except (OSError, KeyError, ValueError) as e:
            raise AdaptError(f"Cannot read {self.history_path}: {e}") from e

    def read_pretrain(self) -> list[tuple[int, float, float]]:
        if not self.pretrain_path.exists():
            return []
        try:
            with self.pretrain_path.open(newline="") as fh:
                return [
                    (int(rec["iter"]), float(rec["lr"]), float(rec["seg"]))
                    for rec in csv.DictReader(fh)
                ]
        except (OSError, KeyError, ValueError) as e:
            raise AdaptError(f"Cannot read {self.pretrain_path}: {e}") from e

    def read_metrics(self) -> list[dict[str, str]]:
        if not self.metrics_path.exists():
            return []
        with self.metrics_path.open(newline="") as fh:
            return list(csv.DictReader(fh))

    def truncate_history(self, iteration: int) -> list[HistoryRow]:
        """Drop history rows at or after ``iteration`` (work lost after the last checkpoint)."""
        kept = [row for row in self.read_history() if row.iter < iteration]
        if self.history_path.exists():
            self.history_path.unlink()
        if kept:
            self.append_history(kept)
        return kept

    def reset(self) -> None:
        """Remove every artifact of a previous run except config.txt and manifest.txt."""
        stale = [self.history_path, self.pretrain_path, self.metrics_path, self.path / "report.txt"]
        stale += [p for _, p in self.checkpoints()]
        try:
            for path in stale:
                path.unlink(missing_ok=True)
            if self.predictions_dir.exists():
                shutil.rmtree(self.predictions_dir)
        except OSError as e:
            raise AdaptError(f"Cannot clear run directory {self.path}: {e}") from e
