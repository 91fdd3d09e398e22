"""
Runs configured experiments on the registered benchmarks and turns their convergence logs into CSV artifacts and
comparison summaries.
"""

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, TextIO

import numpy as np

from .acquisition import LoopConfig, LoopRecord, SourceQueryError, run_loop
from .baselines import percentile_estimate, percentile_nodes, vanilla_bq_baseline
from .benchmarks import make_benchmark
from .config import ConfigError, RunConfig
from .kernels import UnsupportedMeasureError
from .logging import get_logger
from .msgp import IllConditionedModelError, PriorSpec, empirical_bayes_B_prior, output_scale
from .quadrature import DegenerateCandidateError, DiagnosticsError
from .templating import jinja_env
from .util import format_number

logger = get_logger("experiment")

# bump whenever columns change
CSV_SCHEMA = 1

# failures of the model or of a black box during a run; the records gathered so far are kept
RUNTIME_ERRORS = (
    SourceQueryError,
    IllConditionedModelError,
    DegenerateCandidateError,
    DiagnosticsError,
    UnsupportedMeasureError,
    ArithmeticError,
)


@dataclass
class RunResult:
    label: str
    benchmark: str
    method: str
    acquisition: str
    seed: int
    num_sources: int
    dim: int
    ground_truth: float
    initial_cost: float
    records: list[LoopRecord] = field(default_factory=list)
    error: str = None

    @property
    def failed(self) -> bool:
        return self.error is not None

    @property
    def pathological(self) -> bool:
        return self.method == "amsbq" and self.acquisition == "ip"

    def relative_error(self, record: LoopRecord) -> float:
        return (record.ez - self.ground_truth) / self.ground_truth

    def cost_to_tolerance(self, threshold: float) -> float:
        """
        Cumulative cost at the first record whose relative error is below the threshold, inf if there is none.
        """
        for record in self.records:
            if abs(self.relative_error(record)) < threshold:
                return record.cum_cost

        return math.inf

    def queries_to_tolerance(self, threshold: float, source: int = 1) -> float:
        """
        Number of queries of the given source up to and including the first record whose relative error is below the
        threshold, inf if there is none. The initial design is not counted.
        """
        count = 0

        for record in self.records:
            count += record.source == source

            if abs(self.relative_error(record)) < threshold:
                return count

        return math.inf

    @property
    def final_error(self) -> float:
        if not self.records:
            return math.nan

        return abs(self.relative_error(self.records[-1]))

    def query_counts(self) -> list[int]:
        counts = [0] * self.num_sources

        for record in self.records:
            counts[record.source - 1] += 1

        return counts


def build_priors(benchmark, config: RunConfig, initial, num_sources: int, seed: int) -> PriorSpec:
    priors = PriorSpec.weakly_informative(
        num_sources,
        width=float(np.mean(benchmark.measure.widths)),
        output_scale=output_scale(initial),
        mode_fraction=config.lengthscale_mode,
        shape=config.lengthscale_shape,
        noise=benchmark.noise[:num_sources],
    )

    return empirical_bayes_B_prior(initial, priors, config.fit_restarts, seed=seed, scale=config.b_prior_scale)


def _percentile_run(benchmark, config: RunConfig, result: RunResult):
    f1 = benchmark.sources()[0]
    nodes = percentile_nodes(benchmark.measure, config.nodes)

    estimate = percentile_estimate(f1, benchmark.measure, config.nodes)
    total_cost = float(np.sum(benchmark.cost_model(1, nodes)))

    nan = math.nan
    result.records.append(
        LoopRecord(
            iteration=0,
            source=1,
            x=np.full(benchmark.measure.dim, nan),
            y=nan,
            cost=total_cost,
            cum_cost=total_cost,
            ez=estimate,
            vz=nan,
            acq_value=nan,
        )
    )


def run_experiment(config: RunConfig, seed: int = None) -> RunResult:
    """
    Execute a single run of the configured method. Runtime failures are not raised but stored in the result, which
    keeps all records gathered before the failure.
    """
    seed = config.seed if seed is None else seed
    method = config.method

    benchmark = make_benchmark(config.benchmark, seed=seed, reps=config.reps)
    num_sources = benchmark.num_sources if method == "amsbq" else 1

    result = RunResult(
        label=config.label,
        benchmark=config.benchmark,
        method=method,
        acquisition=config.acquisition.value,
        seed=seed,
        num_sources=num_sources,
        dim=benchmark.measure.dim,
        ground_truth=benchmark.ground_truth(),
        initial_cost=0.0,
    )

    if result.pathological:
        logger.warning(f"{config.label}: acquisition {result.acquisition} is pathological")

    logger.info(f"Running {config.label} on {config.benchmark} with seed {seed}")

    if method == "pe":
        _percentile_run(benchmark, config, result)
        return result

    initial = benchmark.initial_design(method, seed)
    result.initial_cost = benchmark.initial_cost(initial)

    if config.budget <= result.initial_cost:
        raise ConfigError(f"budget {config.budget:g} does not exceed the initial cost {result.initial_cost:g}")

    loop_config = LoopConfig(
        budget=config.budget,
        acquisition=config.acquisition,
        restarts=config.restarts,
        seed=seed,
        refit=config.refit,
        max_iterations=config.max_iterations,
        fit_restarts=config.fit_restarts,
        allow_pathological=config.allow_pathological,
        initial_cost=result.initial_cost,
    )

    try:
        priors = build_priors(benchmark, config, initial, num_sources, seed)

        if method == "amsbq":
            run_loop(
                benchmark.sources(),
                benchmark.measure,
                benchmark.cost_model,
                loop_config,
                initial,
                priors,
                on_record=result.records.append,
            )
        else:
            vanilla_bq_baseline(
                benchmark.sources()[0],
                benchmark.measure,
                loop_config,
                initial,
                cost=benchmark.cost_model.restricted([1]),
                priors=priors,
                on_record=result.records.append,
            )

    except RUNTIME_ERRORS as e:
        logger.error(f"{config.label} with seed {seed} failed after {len(result.records)} queries: {e}")
        result.error = str(e)

    return result


def _run_job(job: tuple[RunConfig, int]) -> RunResult:
    config, seed = job
    return run_experiment(config, seed)


def run_many(jobs: list[tuple[RunConfig, int]], workers: int = 1) -> list[RunResult]:
    """
    Run independent (configuration, seed) pairs, optionally in worker processes. Results keep the order of the jobs.
    """
    if workers <= 1 or len(jobs) <= 1:
        return [_run_job(job) for job in jobs]

    with ProcessPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(_run_job, jobs))


def csv_header(num_sources: int, dim: int) -> list[str]:
    header = ["schema", "iter", "source"]
    header += [f"x{i + 1}" for i in range(dim)]
    header += ["y", "cost", "cum_cost", "ez", "vz", "rel_err", "acq_value", "lambda"]
    header += [f"b{i + 1}{j + 1}" for i in range(num_sources) for j in range(num_sources)]
    header += ["final"]
    return header


def _cell(value) -> str:
    if value is None:
        return ""

    if isinstance(value, (bool, np.bool_)):
        return str(int(value))

    if isinstance(value, (int, np.integer)):
        return str(int(value))

    if math.isnan(value):
        return ""

    return format_number(value)


def csv_rows(result: RunResult) -> Iterable[list[str]]:
    for index, record in enumerate(result.records):
        final = not result.failed and index == len(result.records) - 1

        row = [CSV_SCHEMA, record.iteration, record.source]
        row += list(np.asarray(record.x, dtype=float))
        row += [record.y, record.cost, record.cum_cost, record.ez, record.vz, result.relative_error(record)]
        row += [record.acq_value, record.hyper.get("lambda")]
        row += [
            record.hyper.get(f"b{i + 1}{j + 1}") for i in range(result.num_sources) for j in range(result.num_sources)
        ]
        row += [final]

        yield [_cell(value) for value in row]


def write_run_csv(result: RunResult, stream: TextIO):
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(csv_header(result.num_sources, result.dim))
    writer.writerows(csv_rows(result))


def run_csv_text(result: RunResult) -> str:
    buffer = io.StringIO()
    write_run_csv(result, buffer)
    return buffer.getvalue()


@dataclass
class SummaryRow:
    label: str
    method: str
    acquisition: str
    pathological: bool
    runs: int
    failed: int
    cost_to_tolerance: float
    final_error: float
    queries: list[float]


def _median(values: list[float]) -> float:
    values = [v for v in values if not math.isnan(v)]

    if not values:
        return math.nan

    return float(np.median(values))


def summarize(groups: list[list[RunResult]], threshold: float) -> list[SummaryRow]:
    """
    One row per configuration: medians over its seeds of the cost to reach the relative error threshold, of the
    final relative error and of the number of queries per source.
    """
    rows = []

    for results in groups:
        first = results[0]
        counts = np.array([r.query_counts() for r in results], dtype=float)

        rows.append(
            SummaryRow(
                label=first.label,
                method=first.method,
                acquisition=first.acquisition if first.method != "pe" else "",
                pathological=first.pathological,
                runs=len(results),
                failed=sum(r.failed for r in results),
                cost_to_tolerance=_median([r.cost_to_tolerance(threshold) for r in results]),
                final_error=_median([r.final_error for r in results]),
                queries=[float(v) for v in np.median(counts, axis=0)],
            )
        )

    return rows


SUMMARY_HEADER = [
    "label",
    "method",
    "acquisition",
    "pathological",
    "runs",
    "failed",
    "cost_to_tolerance",
    "final_abs_rel_err",
]


def write_summary_csv(rows: list[SummaryRow], stream: TextIO):
    num_sources = max(len(row.queries) for row in rows)

    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(SUMMARY_HEADER + [f"queries{l + 1}" for l in range(num_sources)])

    for row in rows:
        queries = row.queries + [math.nan] * (num_sources - len(row.queries))
        values = [row.label, row.method, row.acquisition, row.pathological, row.runs, row.failed]
        values += [row.cost_to_tolerance, row.final_error] + queries
        writer.writerow([value if isinstance(value, str) else _cell(value) for value in values])


def render_summary(rows: list[SummaryRow], benchmark: str, ground_truth: float, threshold: float) -> str:
    template = jinja_env.get_template("summary.txt.j2")
    return template.render(rows=rows, benchmark=benchmark, ground_truth=ground_truth, threshold=threshold)
