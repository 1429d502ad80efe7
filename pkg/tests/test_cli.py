"""
End-to-end tests for the em-seg-adapt CLI on a tiny synthetic dataset:
subcommand wiring, config resolution and exit codes.
"""

import csv

import pytest
from typer.testing import CliRunner

from em_seg_adapt.ablation import ABLATION_ROWS
from em_seg_adapt.ablation import row_slug
from em_seg_adapt.cli import EXIT_DATA
from em_seg_adapt.cli import EXIT_NUMERICAL
from em_seg_adapt.cli import EXIT_USAGE
from em_seg_adapt.cli import app
from em_seg_adapt.models import NumericalError
from em_seg_adapt.rundir import MANIFEST_NAME
from em_seg_adapt.rundir import RunDirectory
from em_seg_adapt.train.loop import configure_determinism

runner = CliRunner()

TINY_CONF = """\
# tiny end-to-end settings
synth.canvas_size = 32
synth.blob_count_min = 1
synth.blob_count_max = 3
synth.blob_radius_min = 3.0
synth.blob_radius_max = 6.0
synth.n_train_source = 4
synth.n_train_target = 4
synth.n_test_target = 2
arch.base_width = 4
arch.depth = 2
arch.disc_width = 4
arch.disc_depth = 2
train.total_iters = 2
train.pretrain_iters = 2
train.batch_size = 2
train.checkpoint_every = 2
train.log_every = 1
data.patch = 16
eval.tile = 16
eval.overlap = 8
"""


@pytest.fixture
def workspace(tmp_path, monkeypatch):
    """Empty working directory (no default config file) with a tiny config."""
    monkeypatch.chdir(tmp_path)
    conf = tmp_path / "tiny.conf"
    conf.write_text(TINY_CONF)
    return tmp_path


@pytest.fixture
def dataset(workspace):
    data = workspace / "data"
    result = runner.invoke(app, ["synth", "-c", "tiny.conf", "-o", str(data)])
    assert result.exit_code == 0, result.output
    return data


def _invoke(*args: str):
    return runner.invoke(app, list(args))


class TestSynth:
    def test_writes_dataset_and_manifest(self, dataset):
        for split in ("source", "target_train", "target_test"):
            assert (dataset / split / "images" / "0000.png").exists()
        assert len(list((dataset / "source" / "labels").glob("*.png"))) == 4
        assert len(list((dataset / "target_test" / "images").glob("*.png"))) == 2
        assert "synth.seed" in (dataset / MANIFEST_NAME).read_text()

    def test_same_seed_same_bytes(self, workspace):
        for name in ("a", "b"):
            result = _invoke("synth", "-c", "tiny.conf", "--seed", "7", "-o", name)
            assert result.exit_code == 0, result.output
        for split in ("source", "target_test"):
            a = (workspace / "a" / split / "images" / "0001.png").read_bytes()
            assert a == (workspace / "b" / split / "images" / "0001.png").read_bytes()

    def test_unknown_key(self, workspace):
        result = _invoke("synth", "-c", "tiny.conf", "--set", "zz.top=1")
        assert result.exit_code == EXIT_USAGE
        assert "zz.top" in result.output

    def test_malformed_set(self, workspace):
        assert _invoke("synth", "--set", "synth.seed").exit_code == EXIT_USAGE

    def test_invalid_value(self, workspace):
        result = _invoke("synth", "-c", "tiny.conf", "--set", "synth.n_test_target=0")
        assert result.exit_code == EXIT_USAGE


class TestPipeline:
    def test_pretrain_adapt_eval_plot(self, workspace, dataset):
        """pretrain → adapt --init → eval → plot, each exiting 0 and leaving its artifacts."""
        common = ["-c", "tiny.conf", "-d", str(dataset)]

        result = _invoke("pretrain", *common, "-o", "runs/pre")
        assert result.exit_code == 0, result.output
        pre = RunDirectory(workspace / "runs" / "pre")
        assert [i for i, _ in pre.checkpoints()] == [0]
        assert pre.read_history() == []

        result = _invoke(
            "adapt", *common, "-o", "runs/adapt", "--init", str(pre.checkpoint_path(0))
        )
        assert result.exit_code == 0, result.output
        run = RunDirectory(workspace / "runs" / "adapt")
        assert [row.iter for row in run.read_history()] == [0, 1]
        assert (run.path / MANIFEST_NAME).exists()

        result = _invoke("eval", str(run.path), "-d", str(dataset))
        assert result.exit_code == 0, result.output
        metrics = run.read_metrics()
        assert [m["checkpoint"] for m in metrics] == ["ckpt_2.zip"]
        assert len(list(run.predictions_dir.glob("*.png"))) == 2

        result = _invoke("plot", str(run.path), *common, "-o", "figs")
        assert result.exit_code == 0, result.output
        assert (workspace / "figs" / "adapt_loss.png").exists()
        assert len(list((workspace / "figs" / "panels").glob("panel_*.png"))) == 2

    def test_resume_finished_run(self, workspace, dataset):
        common = ["-c", "tiny.conf", "-d", str(dataset)]
        assert _invoke("adapt", *common, "-o", "run").exit_code == 0
        result = _invoke("adapt", "-d", str(dataset), "--resume", "run")
        assert result.exit_code == 0, result.output
        assert len(RunDirectory(workspace / "run").read_history()) == 2

    def test_resume_rejects_overrides(self, workspace, dataset):
        result = _invoke("adapt", "-d", str(dataset), "--resume", "run", "--set", "train.seed=1")
        assert result.exit_code == EXIT_USAGE

    def test_init_and_resume_exclusive(self, workspace):
        result = _invoke("adapt", "--init", "ckpt_0.zip", "--resume", "run")
        assert result.exit_code == EXIT_USAGE


class TestAblate:
    @pytest.fixture
    def deterministic_off(self):
        yield
        configure_determinism(False)

    def test_same_seed_same_table(self, workspace, dataset, deterministic_off):
        """Two deterministic ablations with one seed write byte-identical tables."""
        common = ["-c", "tiny.conf", "-d", str(dataset), "--seed", "4", "--deterministic"]
        for name in ("a", "b"):
            result = _invoke("ablate", *common, "-o", name)
            assert result.exit_code == 0, result.output

        table = (workspace / "a" / "ablation.csv").read_bytes()
        assert table == (workspace / "b" / "ablation.csv").read_bytes()
        with (workspace / "a" / "ablation.csv").open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["row"] for r in rows] == [flags.label for flags in ABLATION_ROWS]
        assert {r["status"] for r in rows} == {"ok"}
        assert (workspace / "a" / MANIFEST_NAME).exists()

    def test_rerun_into_same_directory(self, workspace, dataset, deterministic_off):
        common = ["-c", "tiny.conf", "-d", str(dataset), "--deterministic", "-o", "abl"]
        assert _invoke("ablate", *common).exit_code == 0
        first = (workspace / "abl" / "ablation.csv").read_bytes()
        assert _invoke("ablate", *common).exit_code == 0

        assert (workspace / "abl" / "ablation.csv").read_bytes() == first
        baseline = RunDirectory(workspace / "abl" / "no_adaptation")
        assert len(baseline.read_metrics()) == 1

    def test_parallel_rows(self, workspace, dataset):
        """--jobs 2 trains rows in worker processes and reports them in grid order."""
        common = ["-c", "tiny.conf", "-d", str(dataset)]
        result = _invoke("ablate", *common, "--jobs", "2", "-o", "par")
        assert result.exit_code == 0, result.output

        with (workspace / "par" / "ablation.csv").open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["row"] for r in rows] == [flags.label for flags in ABLATION_ROWS]
        assert {r["status"] for r in rows} == {"ok"}
        assert [int(r["disc_updates"]) for r in rows] == [0, 0, 2, 2, 2, 4]
        for flags in ABLATION_ROWS:
            assert (workspace / "par" / row_slug(flags) / "ckpt_2.zip").exists()


class TestExitCodes:
    def test_missing_dataset_fails_preflight(self, workspace):
        result = _invoke("adapt", "-c", "tiny.conf", "-d", "nowhere", "-o", "run")
        assert result.exit_code == EXIT_USAGE
        assert "Preflight" in result.output

    def test_data_error(self, workspace, dataset):
        """A source label missing from the stack is a data error (exit 2)."""
        (dataset / "source" / "labels" / "0003.png").unlink()
        result = _invoke("adapt", "-c", "tiny.conf", "-d", str(dataset), "-o", "run")
        assert result.exit_code == EXIT_DATA

    def test_numerical_error(self, mocker, workspace, dataset):
        patched = mocker.patch("em_seg_adapt.cli.AdaptationRun")
        patched.return_value.run.side_effect = NumericalError(3, "g_feat", float("nan"))
        result = _invoke("adapt", "-c", "tiny.conf", "-d", str(dataset), "-o", "run")
        assert result.exit_code == EXIT_NUMERICAL
        assert "g_feat" in result.output

    def test_eval_without_checkpoint(self, workspace, dataset):
        (workspace / "empty").mkdir()
        result = _invoke("eval", "empty", "-c", "tiny.conf", "-d", str(dataset))
        assert result.exit_code == EXIT_USAGE

    def test_eval_unknown_split(self, workspace):
        assert _invoke("eval", "run", "--split", "validation").exit_code == EXIT_USAGE

    def test_plot_needs_runs(self, workspace):
        assert _invoke("plot").exit_code == EXIT_USAGE

    def test_ablate_parallel_deterministic(self, workspace, dataset):
        result = _invoke(
            "ablate", "-c", "tiny.conf", "-d", str(dataset), "--deterministic", "--jobs", "2"
        )
        assert result.exit_code == EXIT_USAGE
