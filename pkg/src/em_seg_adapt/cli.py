"""
Command-line interface for em-seg-adapt.
"""

import logging
import sys
import time
from contextlib import contextmanager
from dataclasses import dataclass
from dataclasses import replace
from pathlib import Path
from typing import Annotated

import click
import typer
from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel
from rich.table import Table
from rich.text import Text

from em_seg_adapt.ablation import run_ablation
from em_seg_adapt.ablation import write_ablation_table
from em_seg_adapt.checkpoint import load_checkpoint
from em_seg_adapt.checkpoint import read_arch
from em_seg_adapt.config import RunConfig
from em_seg_adapt.config import config_digest
from em_seg_adapt.config import flatten
from em_seg_adapt.config import load_run_config
from em_seg_adapt.data.stacks import DATASET_SPLITS
from em_seg_adapt.data.stacks import load_split
from em_seg_adapt.data.stacks import read_dataset
from em_seg_adapt.data.stacks import split_target_x
from em_seg_adapt.data.stacks import stack_digest
from em_seg_adapt.data.stacks import write_dataset
from em_seg_adapt.data.synth import synth_domains
from em_seg_adapt.evaluate import evaluate_run
from em_seg_adapt.models import DEFAULT_CONFIG
from em_seg_adapt.models import DEFAULT_DATA_DIR
from em_seg_adapt.models import DEFAULT_RUNS_DIR
from em_seg_adapt.models import AdaptError
from em_seg_adapt.models import ConfigError
from em_seg_adapt.models import ImageStack
from em_seg_adapt.models import MetricsReport
from em_seg_adapt.models import NumericalError
from em_seg_adapt.nets import build_bundle
from em_seg_adapt.plots import plot_loss_curves
from em_seg_adapt.plots import write_panels
from em_seg_adapt.preflight import run_preflight_checks
from em_seg_adapt.rundir import RunDirectory
from em_seg_adapt.rundir import RunManifest
from em_seg_adapt.train import AdaptationRun
from em_seg_adapt.train import RunReport

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3

# ---------------------------------------------------------------------------
# Typer app
# ---------------------------------------------------------------------------

app = typer.Typer(
    no_args_is_help=True,
    rich_markup_mode="rich",
    help="Unsupervised domain-adaptive segmentation: synthesize, train, adapt, evaluate.",
)

console = Console()


# ---------------------------------------------------------------------------
# Global state shared across subcommands
# ---------------------------------------------------------------------------


@dataclass
class _State:
    verbose: bool = False


state = _State()


@app.callback()
def _global(
    verbose: Annotated[
        bool,
        typer.Option("--verbose", "-v", help="Enable verbose debug output"),
    ] = False,
) -> None:
    state.verbose = verbose
    _setup_logging(verbose)


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def _setup_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(rich_tracebacks=True, show_path=False, console=console)],
    )


@contextmanager
def _handle_errors(action: str):
    """Map domain exceptions to exit codes with a one-line red error."""
    try:
        yield
    except typer.Exit:
        raise
    except NumericalError as e:
        console.print(f"[bold red]{action} aborted:[/] {e}")
        raise typer.Exit(EXIT_NUMERICAL) from None
    except ConfigError as e:
        console.print(f"[bold red]Error:[/] {e}")
        raise typer.Exit(EXIT_USAGE) from None
    except AdaptError as e:
        console.print(f"[bold red]{action} failed:[/] {e}")
        raise typer.Exit(EXIT_DATA) from None
    except KeyboardInterrupt:
        console.print("[yellow]Interrupted by user[/]")
        raise typer.Exit(130) from None
    except Exception as e:
        console.print_exception()
        console.print(f"[bold red]Unexpected error:[/] {e}")
        raise typer.Exit(EXIT_USAGE) from e


def _parse_sets(sets: list[str] | None) -> dict[str, str]:
    overrides: dict[str, str] = {}
    for item in sets or []:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value.strip()
    return overrides


def _resolve_config(
    config: Path | None,
    seed: int | None,
    deterministic: bool,
    sets: list[str] | None,
) -> RunConfig:
    """Built-in defaults < config file < --set overrides < --seed/--deterministic."""
    overrides = _parse_sets(sets)
    if seed is not None:
        overrides["synth.seed"] = str(seed)
        overrides["train.seed"] = str(seed)
    if deterministic:
        overrides["train.deterministic"] = "true"
    if config is None and DEFAULT_CONFIG.exists():
        config = DEFAULT_CONFIG
    return load_run_config(config, overrides)


def _dataset_splits(cfg: RunConfig, data_dir: Path) -> tuple[Path | None, list[Path]]:
    """(source split dir, target split dirs) for preflight."""
    if cfg.data.source_dir and cfg.data.target_dir:
        return Path(cfg.data.source_dir), [Path(cfg.data.target_dir)]
    return data_dir / "source", [data_dir / "target_train", data_dir / "target_test"]


def _load_datasets(cfg: RunConfig, data_dir: Path) -> dict[str, ImageStack]:
    """Synthetic dataset directory, or real stacks with the target split along x."""
    if cfg.data.source_dir and cfg.data.target_dir:
        source = load_split(Path(cfg.data.source_dir))
        target_train, target_test = split_target_x(
            load_split(Path(cfg.data.target_dir)), cfg.data.train_fraction
        )
        return {"source": source, "target_train": target_train, "target_test": target_test}
    return read_dataset(data_dir)


def _digests(stacks: dict[str, ImageStack]) -> dict[str, str]:
    return {name: stack_digest(stack) for name, stack in stacks.items()}


def _manifest(cfg: RunConfig, stacks: dict[str, ImageStack], started: float) -> RunManifest:
    return RunManifest.for_current_process(
        config=flatten(cfg),
        dataset_digests=_digests(stacks),
        seed=cfg.train.seed,
        started=started,
        finished=time.time(),
    )


def _info_panel(title: str, rows: list[tuple[str, str]]) -> None:
    info = Text()
    for i, (key, value) in enumerate(rows):
        if i:
            info.append("\n")
        info.append(f"  {key + ':':<12} ", style="bold")
        info.append(value)
    console.print(Panel(info, title=f"[bold]{title}[/bold]"))


def _print_run_report(report: RunReport, run_dir: Path) -> None:
    results = Table.grid(padding=(0, 2))
    results.add_column(style="bold")
    results.add_column(justify="right")
    results.add_row("Pretrain iters", str(report.pretrain_iters))
    results.add_row("Adapt iters", str(report.iterations))
    if report.pretrain_seg is not None:
        first, last = report.pretrain_seg
        results.add_row("Pretrain seg", f"{first:.4f} → {last:.4f}")
    if report.last is not None:
        for name in ("seg", "rec", "d_pred", "d_feat", "g_pred", "g_feat"):
            results.add_row(f"Final {name}", f"{getattr(report.last, name):.4f}")
    for name, count in report.disc_updates.items():
        results.add_row(f"{name} updates", str(count))
    results.add_row("Wall time", f"{report.wall_time:.1f}s")
    latest = str(run_dir / report.checkpoints[-1]) if report.checkpoints else "—"
    results.add_row("Checkpoint", latest)
    console.print(Panel(results, title="[bold]Results[/bold]", expand=False))


def _print_metrics(run_id: str, split: str, report: MetricsReport) -> None:
    table = Table(show_header=True, header_style="bold cyan", box=None, padding=(0, 2))
    table.add_column("Run")
    table.add_column("Split")
    table.add_column("DSC (%)", justify="right")
    table.add_column("JAC (%)", justify="right")
    table.add_column("Pixels", justify="right")
    table.add_row(run_id, split, f"{report.dsc:.2f}", f"{report.jac:.2f}", str(report.n_pixels))
    for index, section in enumerate(report.sections):
        table.add_row(
            "",
            f"{split}[{index}]",
            f"{section.dsc:.2f}",
            f"{section.jac:.2f}",
            str(section.n_pixels),
        )
    console.print(Panel(table, title="[bold]Metrics[/bold]", expand=False))


# ---------------------------------------------------------------------------
# Shared options
# ---------------------------------------------------------------------------

_CONFIG_OPT = Annotated[
    Path | None,
    typer.Option(
        "--config", "-c", help=f"key = value config file (default: {DEFAULT_CONFIG} if present)"
    ),
]
_SEED_OPT = Annotated[
    int | None, typer.Option("--seed", help="Seed for synthesis and training (overrides config)")
]
_DET_OPT = Annotated[
    bool, typer.Option("--deterministic", help="Deterministic kernels, bitwise-repeatable runs")
]
_SET_OPT = Annotated[
    list[str] | None,
    typer.Option("--set", "-s", help="Override one config key, e.g. --set train.total_iters=100"),
]
_DATA_OPT = Annotated[
    Path,
    typer.Option("--data", "-d", help=f"Synthetic dataset directory (default: {DEFAULT_DATA_DIR})"),
]


# ---------------------------------------------------------------------------
# Subcommand: synth
# ---------------------------------------------------------------------------


@app.command()
def synth(
    config: _CONFIG_OPT = None,
    seed: _SEED_OPT = None,
    out: Annotated[
        Path, typer.Option("--out", "-o", help="Dataset output directory")
    ] = DEFAULT_DATA_DIR,
    deterministic: _DET_OPT = False,
    sets: _SET_OPT = None,
) -> None:
    """Generate the synthetic source / target_train / target_test stacks."""
    started = time.time()
    with _handle_errors("Synthesis"):
        cfg = _resolve_config(config, seed, deterministic, sets)
        source, target_train, target_test = synth_domains(cfg.synth)
        stacks = {"source": source, "target_train": target_train, "target_test": target_test}
        write_dataset(out, stacks)
        RunManifest.for_current_process(
            config={k: v for k, v in flatten(cfg).items() if k.startswith("synth.")},
            dataset_digests=_digests(stacks),
            seed=cfg.synth.seed,
            started=started,
            finished=time.time(),
        ).append_to(out)

    table = Table(show_header=True, header_style="bold cyan", box=None, padding=(0, 2))
    table.add_column("Split")
    table.add_column("Sections", justify="right")
    table.add_column("Size")
    table.add_column("Digest", style="dim")
    for name in DATASET_SPLITS:
        depth, height, width = stacks[name].axis_meta
        table.add_row(name, str(depth), f"{height}×{width}", stack_digest(stacks[name])[:16])
    console.print(Panel(table, title=f"[bold]Dataset[/bold] {out}", expand=False))


# ---------------------------------------------------------------------------
# Subcommands: pretrain / adapt
# ---------------------------------------------------------------------------


def _run_training(
    cfg: RunConfig,
    data: Path,
    out: Path,
    title: str,
    init: Path | None = None,
    resume_run: bool = False,
) -> None:
    source_split, target_splits = _dataset_splits(cfg, data)
    if not run_preflight_checks(
        cfg, console, source=source_split, targets=target_splits, out_dir=out
    ):
        raise typer.Exit(EXIT_USAGE)

    _info_panel(
        title,
        [
            ("Run", str(out)),
            ("Mechanisms", cfg.train.ablation.label),
            ("Iterations", f"{cfg.train.pretrain_iters} pretrain + {cfg.train.total_iters} adapt"),
            ("Seed", str(cfg.train.seed)),
            ("Init", str(init) if init else ("resume" if resume_run else "scratch")),
        ],
    )
    started = time.time()
    with _handle_errors(title):
        stacks = _load_datasets(cfg, data)
        report = AdaptationRun(cfg, out).run(
            stacks["source"], stacks["target_train"].unlabeled(), init=init, resume_run=resume_run
        )
        _manifest(cfg, stacks, started).append_to(out)
    _print_run_report(report, out)


@app.command()
def pretrain(
    config: _CONFIG_OPT = None,
    seed: _SEED_OPT = None,
    out: Annotated[
        Path, typer.Option("--out", "-o", help="Run directory")
    ] = DEFAULT_RUNS_DIR / "pretrain",
    data: _DATA_OPT = DEFAULT_DATA_DIR,
    deterministic: _DET_OPT = False,
    sets: _SET_OPT = None,
) -> None:
    """Supervised training of the segmentation path on the labelled source only."""
    with _handle_errors("Pretraining"):
        cfg = _resolve_config(config, seed, deterministic, sets)
        cfg = replace(cfg, train=replace(cfg.train, total_iters=0))
    _run_training(cfg, data, out, "Pretrain")


@app.command()
def adapt(
    config: _CONFIG_OPT = None,
    seed: _SEED_OPT = None,
    out: Annotated[
        Path, typer.Option("--out", "-o", help="Run directory")
    ] = DEFAULT_RUNS_DIR / "adapt",
    data: _DATA_OPT = DEFAULT_DATA_DIR,
    deterministic: _DET_OPT = False,
    sets: _SET_OPT = None,
    init: Annotated[
        Path | None,
        typer.Option("--init", help="Start from a pretrained checkpoint (ckpt_0.zip of pretrain)"),
    ] = None,
    resume_run: Annotated[
        Path | None,
        typer.Option("--resume", help="Continue an interrupted run directory with its config.txt"),
    ] = None,
) -> None:
    """Pretrain (unless --init/--resume) and run adversarial adaptation."""
    if init is not None and resume_run is not None:
        console.print("[bold red]Error:[/] --init and --resume are mutually exclusive")
        raise typer.Exit(EXIT_USAGE)
    with _handle_errors("Adaptation"):
        if resume_run is not None:
            if config is not None or sets or seed is not None:
                raise ConfigError("--resume uses the run's config.txt; drop --config/--set/--seed")
            out = resume_run
            cfg = load_run_config(resume_run / "config.txt")
        else:
            cfg = _resolve_config(config, seed, deterministic, sets)
    _run_training(cfg, data, out, "Adapt", init=init, resume_run=resume_run is not None)


# ---------------------------------------------------------------------------
# Subcommand: eval
# ---------------------------------------------------------------------------


@app.command("eval")
def evaluate_cmd(
    run: Annotated[Path, typer.Argument(help="Run directory to evaluate")],
    checkpoint: Annotated[
        Path | None,
        typer.Option("--checkpoint", help="Checkpoint archive (default: latest in the run)"),
    ] = None,
    config: _CONFIG_OPT = None,
    seed: _SEED_OPT = None,
    data: _DATA_OPT = DEFAULT_DATA_DIR,
    split: Annotated[
        str, typer.Option("--split", help="Labelled split to score")
    ] = "target_test",
    deterministic: _DET_OPT = False,
    sets: _SET_OPT = None,
) -> None:
    """Tiled inference on a split; writes predictions/ and appends to metrics.csv."""
    if split not in DATASET_SPLITS:
        console.print(f"[bold red]Error:[/] --split must be one of {', '.join(DATASET_SPLITS)}")
        raise typer.Exit(EXIT_USAGE)
    rd = RunDirectory(run)
    started = time.time()
    with _handle_errors("Evaluation"):
        if config is None and (rd.path / "config.txt").exists():
            config = rd.path / "config.txt"
        cfg = _resolve_config(config, seed, deterministic, sets)
        ckpt = checkpoint or rd.latest_checkpoint()
        if ckpt is None:
            raise ConfigError(f"No checkpoint in {run}; pass --checkpoint")

        _, target_splits = _dataset_splits(cfg, data)
        if not run_preflight_checks(
            cfg, console, source=None, targets=target_splits, out_dir=rd.path
        ):
            raise typer.Exit(EXIT_USAGE)

        bundle = build_bundle(read_arch(ckpt), cfg.train.seed)
        meta = load_checkpoint(ckpt, bundle)
        stacks = _load_datasets(cfg, data)
        report = evaluate_run(bundle, stacks[split], cfg.eval, rd.path, Path(ckpt).name, split)
        report.seed = meta.seed
        report.config_digest = meta.config_digest or config_digest(cfg)
        _manifest(cfg, stacks, started).append_to(rd.path)
    _print_metrics(rd.path.name, split, report)


# ---------------------------------------------------------------------------
# Subcommand: ablate
# ---------------------------------------------------------------------------


@app.command()
def ablate(
    config: _CONFIG_OPT = None,
    seed: _SEED_OPT = None,
    out: Annotated[
        Path, typer.Option("--out", "-o", help="Directory for per-row runs and ablation.csv")
    ] = DEFAULT_RUNS_DIR / "ablation",
    data: _DATA_OPT = DEFAULT_DATA_DIR,
    deterministic: _DET_OPT = False,
    sets: _SET_OPT = None,
    jobs: Annotated[
        int, typer.Option("--jobs", "-j", min=1, help="Rows trained in parallel processes")
    ] = 1,
) -> None:
    """Train and evaluate the baseline plus every mechanism combination at an equal budget."""
    started = time.time()
    with _handle_errors("Ablation"):
        cfg = _resolve_config(config, seed, deterministic, sets)
        if jobs > 1 and cfg.train.deterministic:
            raise ConfigError("--jobs > 1 cannot be combined with --deterministic")
        source_split, target_splits = _dataset_splits(cfg, data)
        if not run_preflight_checks(
            cfg, console, source=source_split, targets=target_splits, out_dir=out
        ):
            raise typer.Exit(EXIT_USAGE)
        stacks = _load_datasets(cfg, data)
        rows = run_ablation(cfg, stacks, out, jobs=jobs)
        table_path = write_ablation_table(rows, out / "ablation.csv")
        _manifest(cfg, stacks, started).append_to(out)

    table = Table(show_header=True, header_style="bold cyan", box=None, padding=(0, 2))
    table.add_column("Configuration")
    table.add_column("DSC (%)", justify="right")
    table.add_column("JAC (%)", justify="right")
    table.add_column("D updates", justify="right")
    table.add_column("Status")
    for row in rows:
        status = Text("ok", style="green") if row.ok else Text(row.error or "", style="bold red")
        table.add_row(
            row.name,
            "—" if row.dsc is None else f"{row.dsc:.2f}",
            "—" if row.jac is None else f"{row.jac:.2f}",
            str(row.disc_updates),
            status,
        )
    console.print(Panel(table, title=f"[bold]Ablation[/bold] {table_path}", expand=False))
    if not all(row.ok for row in rows):
        raise typer.Exit(EXIT_DATA)


# ---------------------------------------------------------------------------
# Subcommand: plot
# ---------------------------------------------------------------------------


@app.command()
def plot(
    runs: Annotated[
        list[Path] | None, typer.Argument(help="Evaluated run directories, one column each")
    ] = None,
    config: _CONFIG_OPT = None,
    data: _DATA_OPT = DEFAULT_DATA_DIR,
    out: Annotated[Path, typer.Option("--out", "-o", help="Figure directory")] = Path("plots"),
    sets: _SET_OPT = None,
) -> None:
    """Loss curves per run and one qualitative panel per test section."""
    if not runs:
        console.print("[bold red]Error:[/] plot needs at least one run directory")
        raise typer.Exit(EXIT_USAGE)
    started = time.time()
    with _handle_errors("Plotting"):
        cfg = _resolve_config(config, None, False, sets)
        out.mkdir(parents=True, exist_ok=True)
        curves = [plot_loss_curves(run, out / f"{run.name}_loss.png") for run in runs]
        stacks = _load_datasets(cfg, data)
        panels = write_panels(stacks["target_test"], runs, out / "panels")
        _manifest(cfg, stacks, started).append_to(out)
    console.print(
        f"[green]Wrote[/] {len(curves)} loss-curve figure(s) and {len(panels)} panel(s) to {out}"
    )


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def main() -> None:
    try:
        code = app(standalone_mode=False)
    except click.UsageError as e:
        e.show()
        sys.exit(EXIT_USAGE)
    except click.Abort:
        console.print("[yellow]Interrupted by user[/]")
        sys.exit(130)
    except click.ClickException as e:
        e.show()
        sys.exit(EXIT_USAGE)
    sys.exit(code if isinstance(code, int) else EXIT_OK)
