"""Command-line front end: ten subcommands, one stage each.

Every subcommand reads a YAML run config (``--config``) and exits 0 on
success, 2 on config errors, 3 on data errors, 4 on training aborts, and
5 on artifact-pairing violations. ``PHYSIX_DETERMINISTIC=1`` switches
torch to deterministic single-thread kernels; ``PHYSIX_DATA_DIR``
overrides where trajectory files live.
"""

import sys

import click

from .determinism import configure_torch
from .errors import (
    ConfigError,
    DataError,
    PairingError,
    PhysixError,
    TrainingDivergedError,
)
from .pipeline import (
    ABLATION_AXES,
    load_run_config,
    plot_report,
    stage_ablate,
    stage_build_refiner_data,
    stage_eval,
    stage_finetune,
    stage_generate_data,
    stage_rollout,
    stage_train_ar,
    stage_train_refiner,
    stage_train_tokenizer,
)

_EXIT_CODES = (
    (ConfigError, 2),
    (DataError, 3),
    (TrainingDivergedError, 4),
    (PairingError, 5),
)


def _exit_code(err: PhysixError) -> int:
    for klass, code in _EXIT_CODES:
        if isinstance(err, klass):
            return code
    return 1


def _run(stage, config_path, *args, **kwargs):
    configure_torch()
    try:
        cfg = load_run_config(config_path)
        return stage(cfg, *args, **kwargs)
    except PhysixError as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(_exit_code(e))


def _config_option(fn):
    return click.option(
        "--config", "-c", "config_path", required=True, metavar="FILE", help="Run config (YAML)."
    )(fn)


@click.group()
def main():
    """Train and evaluate discrete-token surrogates for 2D PDE fields."""


@main.command("generate-data")
@_config_option
def generate_data_cmd(config_path):
    """Synthesize trajectories and write the dataset manifest."""
    click.echo(str(_run(stage_generate_data, config_path)))


@main.command("train-tokenizer")
@_config_option
def train_tokenizer_cmd(config_path):
    """Train (or reuse) the shared field tokenizer."""
    click.echo(str(_run(stage_train_tokenizer, config_path)))


@main.command("train-ar")
@_config_option
def train_ar_cmd(config_path):
    """Train (or reuse) the autoregressive token model."""
    click.echo(str(_run(stage_train_ar, config_path)))


@main.command("build-refiner-data")
@_config_option
def build_refiner_data_cmd(config_path):
    """Roll the token model forward and save (coarse, truth) pairs."""
    click.echo(str(_run(stage_build_refiner_data, config_path)))


@main.command("train-refiner")
@_config_option
def train_refiner_cmd(config_path):
    """Train per-dataset pixel-space refiners on the paired corpus."""
    click.echo(str(_run(stage_train_refiner, config_path)))


@main.command("rollout")
@_config_option
@click.option("--trajectory", required=True, metavar="FILE", help="Trajectory file to continue.")
@click.option("--horizon", default=8, show_default=True, help="Frames to predict.")
@click.option("--context-frames", default=None, type=int, help="Context length (default: eval config).")
@click.option("--refine/--no-refine", default=None, help="Override the config's refinement switch.")
def rollout_cmd(config_path, trajectory, horizon, context_frames, refine):
    """Predict the continuation of one stored trajectory."""
    path = _run(
        stage_rollout,
        config_path,
        trajectory,
        context_frames=context_frames,
        horizon=horizon,
        refine=refine,
    )
    click.echo(str(path))


@main.command("eval")
@_config_option
@click.option(
    "--protocol",
    type=click.Choice(["next", "rollout"]),
    default="next",
    show_default=True,
    help="next: single-step windows; rollout: full-trajectory lead-time buckets.",
)
@click.option("--refine/--no-refine", default=None, help="Override the config's refinement switch.")
@click.option("--plots/--no-plots", "make_plots", default=True, help="Also render PNG figures.")
def eval_cmd(config_path, protocol, refine, make_plots):
    """Score the trained stack on the held-out test split."""
    out = _run(stage_eval, config_path, protocol=protocol, refine=refine, make_plots=make_plots)
    click.echo(str(out))


@main.command("finetune")
@_config_option
@click.option(
    "--from-scratch",
    is_flag=True,
    default=False,
    help="Train the token model from random init instead of the pretrained weights.",
)
def finetune_cmd(config_path, from_scratch):
    """Adapt the stack to the config's held-out finetune dataset."""
    dirs = _run(stage_finetune, config_path, from_scratch=from_scratch)
    for name in sorted(dirs):
        click.echo(f"{name}: {dirs[name]}")


@main.command("ablate")
@_config_option
@click.option("--axis", type=click.Choice(list(ABLATION_AXES)), required=True)
def ablate_cmd(config_path, axis):
    """Run one ablation axis end to end and write its report."""
    click.echo(str(_run(stage_ablate, config_path, axis)))


@main.command("plot")
@_config_option
@click.option("--report-dir", required=True, metavar="DIR", help="Eval output directory to render.")
def plot_cmd(config_path, report_dir):
    """Re-render figures from an existing eval report."""

    def stage(cfg, report_dir):
        return plot_report(report_dir)

    for path in _run(stage, config_path, report_dir):
        click.echo(str(path))


if __name__ == "__main__":
    main()
