import os
import sys
from pathlib import Path
from typing import Iterable

import click

from .acquisition import AcquisitionKind
from .benchmarks import BENCHMARKS, make_benchmark
from .config import ConfigError, RunConfig
from .context import Context
from .experiment import render_summary, run_csv_text, run_experiment, run_many, summarize, write_summary_csv
from .logging import get_logger, set_up_logging
from .util import format_number

ENV_VAR_PREFIX = "AMSBQ"

LOG_LEVELS = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]

logger = get_logger("main")


def load_config(path: str | os.PathLike, **overrides) -> RunConfig:
    """
    Read a configuration file and apply the command line overrides, translating configuration errors into usage
    errors.
    """
    try:
        config = RunConfig.from_file(path)
        config.override(**overrides)
        config.validate()
    except ConfigError as e:
        raise click.UsageError(str(e))

    if config.benchmark not in BENCHMARKS:
        raise click.UsageError(f"unknown benchmark {config.benchmark}, available: {', '.join(BENCHMARKS)}")

    return config


def run_options(f):
    # options shared by run and compare, None means "keep the configured value"
    options = [
        click.option("--seed", default=None, help="Seed, or comma-separated seeds for compare."),
        click.option("--budget", type=float, default=None, help="Budget in normalized cost units."),
        click.option(
            "--acq",
            type=click.Choice([kind.value for kind in AcquisitionKind], case_sensitive=False),
            default=None,
            help="Acquisition rate.",
        ),
        click.option(
            "--allow-pathological",
            is_flag=True,
            default=None,
            help="Permit the integral precision acquisition, which is known to misbehave.",
        ),
    ]

    for option in reversed(options):
        f = option(f)

    return f


@click.group()
@click.option(
    "--log-level",
    type=click.Choice(LOG_LEVELS, case_sensitive=False),
    default="INFO",
    envvar="AMSBQ_LOG",
    show_envvar=True,
)
@click.option("--debug", is_flag=True, default=False, envvar="DEBUG", show_envvar=True)
def cli(log_level: str, debug: bool):
    """
    Active multi-source Bayesian quadrature experiments.
    """
    set_up_logging("DEBUG" if debug else log_level)


@cli.command()
@click.argument("config_file", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@run_options
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=None, show_envvar=True)
def run(config_file: Path, seed: str, budget: float, acq: str, allow_pathological: bool, out: Path):
    """
    Run a single experiment and write its convergence log as CSV (to stdout unless --out is given).
    """
    config = load_config(
        config_file, seed=seed, budget=budget, acquisition=acq, allow_pathological=allow_pathological, out=out
    )

    try:
        result = run_experiment(config)
    except ConfigError as e:
        raise click.UsageError(str(e))

    text = run_csv_text(result)

    if config.out is None:
        click.echo(text, nl=False)
    else:
        os.makedirs(config.out.parent, exist_ok=True)
        config.out.write_text(text, encoding="utf-8")
        logger.info(f"Wrote {len(result.records)} rows to {config.out}")

    if result.failed:
        logger.critical(f"Run failed: {result.error}")
        sys.exit(1)


@cli.command()
@click.argument("config_files", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@run_options
@click.option(
    "--out",
    type=click.Path(file_okay=False, path_type=Path),
    default=None,
    show_envvar=True,
    help="Directory for the per-run logs and the summary CSV.",
)
@click.option("--threshold", type=float, default=None, help="Relative error tolerance, 0.01 unless configured.")
@click.option("--jobs", type=click.IntRange(min=1), default=1, show_envvar=True, help="Number of worker processes.")
def compare(
    config_files: Iterable[Path],
    seed: str,
    budget: float,
    acq: str,
    allow_pathological: bool,
    out: Path,
    threshold: float,
    jobs: int,
):
    """
    Run several configurations on the same benchmark and summarize the cost to reach the error threshold.
    """
    config_files = list(config_files)

    if len(config_files) < 2:
        raise click.UsageError("compare needs at least two configurations")

    configs = [
        load_config(
            path, seed=seed, budget=budget, acquisition=acq, allow_pathological=allow_pathological, threshold=threshold
        )
        for path in config_files
    ]

    benchmarks = sorted({config.benchmark for config in configs})
    if len(benchmarks) > 1:
        raise click.UsageError(f"all configurations must use the same benchmark, got {', '.join(benchmarks)}")

    # the first configuration decides on the tolerance
    threshold = configs[0].threshold

    jobs_list = [(config, s) for config in configs for s in config.seeds]
    logger.info(f"Running {len(jobs_list)} runs with {jobs} worker(s)")

    try:
        results = run_many(jobs_list, jobs)
    except ConfigError as e:
        raise click.UsageError(str(e))

    groups = []
    for config in configs:
        groups.append([r for (c, _), r in zip(jobs_list, results) if c is config])

    rows = summarize(groups, threshold)
    text = render_summary(rows, benchmarks[0], results[0].ground_truth, threshold)
    click.echo(text, nl=False)

    if out is not None:
        context = Context(out)

        for index, (config, group) in enumerate(zip(configs, groups)):
            for result in group:
                path = context.run_csv_path(index, result.label, result.seed)
                path.write_text(run_csv_text(result), encoding="utf-8")

        with open(context.summary_csv_path, "w", encoding="utf-8", newline="") as f:
            write_summary_csv(rows, f)

        context.summary_text_path.write_text(text, encoding="utf-8")
        logger.info(f"Wrote comparison to {context.base_dir}")

    failed = sum(r.failed for r in results)
    if failed:
        logger.critical(f"{failed} of {len(results)} runs failed")
        sys.exit(1)


@cli.command(name="benchmarks")
@click.option("--ground-truth", is_flag=True, default=False, help="Also compute the (possibly expensive) ground truth.")
def list_benchmarks(ground_truth: bool):
    """
    List the registered benchmarks.
    """
    for benchmark_id in BENCHMARKS:
        benchmark = make_benchmark(benchmark_id)
        info = benchmark.describe()

        line = f"{info['id']}: {info['sources']} sources on {info['domain']}"

        if ground_truth:
            line += f", <f_1> = {format_number(benchmark.ground_truth())}"

        click.echo(line)


def main():
    cli(auto_envvar_prefix=ENV_VAR_PREFIX)


if __name__ == "__main__":
    main()
