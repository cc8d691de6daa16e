"""Seeded multi-repeat experiment runner with machine-readable output.

Runs are aligned by objective-function calls (not cycles) so batch and
sequential optimizers can be compared on equal footing. Output files are
deterministic for a given configuration; wall-clock timings stay in the
in-memory summary only.
"""

from __future__ import annotations

import csv
import inspect
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .baselines import EGO, MSBO, ConstantLiarBO, PEIBatchBO
from .benchmarks import get_problem, list_problems
from .engine import CoLearningBO
from .exceptions import ConfigurationError
from .preprocessing import BoxTransform, latin_hypercube

TRACE_SCHEMA = "clbo-trace-v1"
RESULT_SCHEMA = "clbo-result-v1"

TRACE_COLUMNS = (
    "run",
    "iteration",
    "n_total",
    "f_min",
    "regret",
    "provenance",
    "z",
    "regime",
    "pei_invoked",
)

#: jsonschema document the JSON result files validate against
RESULT_JSON_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema", "problem", "optimizer", "repeats", "seed", "runs"],
    "properties": {
        "schema": {"const": RESULT_SCHEMA},
        "problem": {"type": "string"},
        "optimizer": {"type": "string"},
        "repeats": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer"},
        "final_values": {
            "type": "object",
            "required": ["min", "q1", "median", "q3", "max"],
            "additionalProperties": {"type": "number"},
        },
        "final_regrets": {
            "type": ["object", "null"],
            "additionalProperties": {"type": "number"},
        },
        "runs": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["run", "seed", "n_evaluations", "best_f", "f_min_by_call"],
                "properties": {
                    "run": {"type": "integer"},
                    "seed": {"type": "integer"},
                    "n_evaluations": {"type": "integer"},
                    "n_iterations": {"type": "integer"},
                    "n_failures": {"type": "integer"},
                    "best_f": {"type": "number"},
                    "final_regret": {"type": ["number", "null"]},
                    "pei_invocations": {"type": "integer"},
                    "regime_counts": {"type": "object"},
                    "f_min_by_call": {"type": "array", "items": {"type": "number"}},
                },
            },
        },
    },
}

OPTIMIZERS = {
    "clbo": CoLearningBO,
    "msbo": MSBO,
    "ego": EGO,
    "constant-liar": ConstantLiarBO,
    "pei-batch": PEIBatchBO,
}

_OPTIMIZER_ALIASES = {"cl": "constant-liar", "pei": "pei-batch"}


def resolve_optimizer(name):
    key = _OPTIMIZER_ALIASES.get(name, name)
    if key not in OPTIMIZERS:
        known = ", ".join(sorted(OPTIMIZERS) + sorted(_OPTIMIZER_ALIASES))
        raise ConfigurationError(f"optimizer: unknown name {name!r}; known: {known}")
    return key


def make_optimizer(name, seed, **options):
    """Instantiate a registered optimizer, validating every option name."""
    cls = OPTIMIZERS[resolve_optimizer(name)]
    allowed = set(inspect.signature(cls.__init__).parameters) - {"self"}
    for key in options:
        if key not in allowed:
            raise ConfigurationError(
                f"optimizer option {key!r}: not accepted by {cls.__name__}; "
                f"allowed: {', '.join(sorted(allowed))}"
            )
    return cls(random_state=seed, **options)


def ambiguity_decomposition(predictions, weights, truth):
    """Split an ensemble's squared error into member error minus diversity.

    With combined prediction ybar = sum w_i y_i: returns
    ``E = (ybar - truth)^2``, ``E_ind = sum w_i (y_i - truth)^2`` and
    ``Div = sum w_i (y_i - ybar)^2``, which satisfy E = E_ind - Div.

    ``predictions`` may be a (m,) vector or an (n, m) matrix of per-point
    member predictions (with ``truth`` then a length-n vector).
    """
    predictions = np.asarray(predictions, dtype=float)
    weights = np.asarray(weights, dtype=float).ravel()
    if np.any(weights < 0):
        raise ValueError("weights must be non-negative")
    if abs(weights.sum() - 1.0) > 1e-9:
        raise ValueError(f"weights must sum to 1, got {weights.sum()!r}")
    single = predictions.ndim == 1
    P = np.atleast_2d(predictions)
    if P.shape[1] != weights.size:
        raise ValueError("predictions and weights disagree on the member count")
    truth = np.asarray(truth, dtype=float)

    ybar = P @ weights
    E = (ybar - truth) ** 2
    E_ind = ((P - np.atleast_1d(truth)[:, None]) ** 2) @ weights
    Div = ((P - ybar[:, None]) ** 2) @ weights
    if single:
        return float(E[0]), float(E_ind[0]), float(Div[0])
    return E, E_ind, Div


class AmbiguityRecorder:
    """Per-cycle ensemble-error diagnostic on a fresh held-out grid.

    Each call draws ``grid_size`` Latin-hypercube points from a dedicated
    seed stream, evaluates the true objective there (only sensible for
    cheap objectives) and averages the error decomposition of the
    equal-weight model ensemble over the grid.
    """

    def __init__(self, problem, grid_size=256, seed=0):
        self.problem = problem
        self.grid_size = grid_size
        self.box = BoxTransform(problem.bounds).fit()
        self.rng = np.random.default_rng(seed)

    def __call__(self, state, models):
        members = list(models.subset_views)
        if models.sogp is not None:
            members.append(models.sogp)
        if not members:
            return None
        grid = latin_hypercube(self.grid_size, self.problem.dim, self.rng)
        truth = self.problem.evaluate_batch(self.box.inverse_transform(grid))
        P = np.column_stack([m.predict(grid) for m in members])
        weights = np.full(len(members), 1.0 / len(members))
        E, E_ind, Div = ambiguity_decomposition(P, weights, truth)
        return {
            "ambiguity_E": float(np.mean(E)),
            "ambiguity_E_ind": float(np.mean(E_ind)),
            "ambiguity_div": float(np.mean(Div)),
        }


@dataclass
class ExperimentConfig:
    """One experiment: an optimizer on a problem, repeated over seeds."""

    problem: str
    optimizer: str
    optimizer_options: dict = field(default_factory=dict)
    repeats: int = 20
    seed: int = 0
    output_format: str = "csv"
    record_ambiguity: bool = False
    ambiguity_grid: int = 256
    failure_rate: float = 0.0
    label: str | None = None

    def validate(self):
        if self.problem not in list_problems():
            raise ConfigurationError(
                f"problem: unknown name {self.problem!r}; known: "
                f"{', '.join(list_problems())}"
            )
        resolve_optimizer(self.optimizer)
        if self.repeats < 1:
            raise ConfigurationError(f"repeats: must be >= 1, got {self.repeats}")
        if self.output_format not in ("csv", "json"):
            raise ConfigurationError(
                f"format: must be 'csv' or 'json', got {self.output_format!r}"
            )
        if not 0.0 <= self.failure_rate < 1.0:
            raise ConfigurationError(
                f"failure_rate: must lie in [0, 1), got {self.failure_rate}"
            )
        if self.ambiguity_grid < 1:
            raise ConfigurationError(
                f"ambiguity_grid: must be >= 1, got {self.ambiguity_grid}"
            )
        return self

    @property
    def resolved_label(self):
        if self.label:
            return self.label
        return f"{self.problem}_{resolve_optimizer(self.optimizer)}_s{self.seed}"


@dataclass
class RunSummary:
    """Aggregated outcome of one experiment."""

    config: ExperimentConfig
    results: list
    known_optimum: float | None
    final_values: np.ndarray
    final_value_stats: dict
    final_regrets: np.ndarray | None
    final_regret_stats: dict | None
    pei_invocations: int
    regime_counts: dict
    wall_clock: list

    @property
    def median_final_regret(self):
        return None if self.final_regret_stats is None else self.final_regret_stats["median"]


def _five_number(values):
    values = np.asarray(values, dtype=float)
    q1, q3 = np.percentile(values, [25, 75])
    return {
        "min": float(np.min(values)),
        "q1": float(q1),
        "median": float(np.median(values)),
        "q3": float(q3),
        "max": float(np.max(values)),
    }


def summarize(config, results, known_optimum):
    """Boxplot statistics, regret curves and diagnostic counts for a study."""
    final_values = np.array([r.best_f for r in results])
    final_regrets = None
    regret_stats = None
    if known_optimum is not None:
        final_regrets = final_values - known_optimum
        regret_stats = _five_number(final_regrets)

    pei = 0
    regimes = {"over-exploitation": 0, "over-exploration": 0, "balanced": 0}
    for r in results:
        for record in r.history:
            for q in record.queries:
                pei += int(q.pei_invoked)
                if q.regime:
                    regimes[q.regime] += 1

    return RunSummary(
        config=config,
        results=results,
        known_optimum=known_optimum,
        final_values=final_values,
        final_value_stats=_five_number(final_values),
        final_regrets=final_regrets,
        final_regret_stats=regret_stats,
        pei_invocations=pei,
        regime_counts=regimes,
        wall_clock=[],
    )


def run_experiment(config, out_dir=None, observer_factory=None):
    """Execute ``config.repeats`` seeded runs and aggregate them.

    Run ``k`` uses seed ``config.seed + k``. When ``out_dir`` is given the
    trace (csv) or result (json) file is written there, named after the
    config label. Returns the :class:`RunSummary`.
    """
    config.validate()
    problem = get_problem(
        config.problem,
        failure_rate=config.failure_rate,
        failure_seed=config.seed,
    )
    results, clocks = [], []
    for k in range(config.repeats):
        run_seed = config.seed + k
        optimizer = make_optimizer(
            config.optimizer, run_seed, **config.optimizer_options
        )
        observer = None
        if observer_factory is not None:
            observer = observer_factory(problem, run_seed)
        elif config.record_ambiguity:
            observer = AmbiguityRecorder(
                problem, grid_size=config.ambiguity_grid, seed=run_seed + 10_000
            )
        tic = time.perf_counter()
        results.append(optimizer.minimize(problem, observer=observer))
        clocks.append(time.perf_counter() - tic)

    summary = summarize(config, results, problem.known_optimum)
    summary.wall_clock = clocks
    if out_dir is not None:
        write_summary(summary, out_dir)
    return summary


# ----------------------------------------------------------------------
# output files
# ----------------------------------------------------------------------


def _format_float(value):
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return ""
    return repr(float(value))


def trace_rows(summary):
    """Flatten a study into one row per objective evaluation."""
    known = summary.known_optimum
    for k, result in enumerate(summary.results):
        n_total = 0
        f_min = np.inf
        for record in result.history:
            for q in record.queries:
                n_total += 1
                f_min = min(f_min, q.y)
                yield {
                    "run": k,
                    "iteration": record.iteration,
                    "n_total": n_total,
                    "f_min": _format_float(f_min),
                    "regret": _format_float(None if known is None else f_min - known),
                    "provenance": q.provenance,
                    "z": _format_float(q.z),
                    "regime": q.regime,
                    "pei_invoked": int(q.pei_invoked),
                }


def write_trace_csv(summary, path):
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema: {TRACE_SCHEMA}\n")
        writer = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS)
        writer.writeheader()
        for row in trace_rows(summary):
            writer.writerow(row)


def summary_document(summary):
    """The JSON-ready result document (schema: RESULT_JSON_SCHEMA)."""
    config = summary.config
    runs = []
    for k, result in enumerate(summary.results):
        pei = sum(
            int(q.pei_invoked) for rec in result.history for q in rec.queries
        )
        regimes = {"over-exploitation": 0, "over-exploration": 0, "balanced": 0}
        for rec in result.history:
            for q in rec.queries:
                if q.regime:
                    regimes[q.regime] += 1
        final_regret = (
            None
            if summary.known_optimum is None
            else float(result.best_f - summary.known_optimum)
        )
        runs.append(
            {
                "run": k,
                "seed": config.seed + k,
                "n_evaluations": int(result.n_evaluations),
                "n_iterations": int(result.n_iterations),
                "n_failures": int(result.n_failures),
                "best_f": float(result.best_f),
                "final_regret": final_regret,
                "pei_invocations": pei,
                "regime_counts": regimes,
                "f_min_by_call": [float(v) for v in result.f_min_by_call],
            }
        )
    return {
        "schema": RESULT_SCHEMA,
        "problem": config.problem,
        "optimizer": resolve_optimizer(config.optimizer),
        "optimizer_options": {k: config.optimizer_options[k] for k in sorted(config.optimizer_options)},
        "repeats": config.repeats,
        "seed": config.seed,
        "final_values": summary.final_value_stats,
        "final_regrets": summary.final_regret_stats,
        "runs": runs,
    }


def write_result_json(summary, path):
    with open(path, "w") as fh:
        json.dump(summary_document(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_summary(summary, out_dir):
    """Write the study to ``out_dir`` in its configured format."""
    os.makedirs(out_dir, exist_ok=True)
    label = summary.config.resolved_label
    if summary.config.output_format == "json":
        path = os.path.join(out_dir, f"{label}.json")
        write_result_json(summary, path)
    else:
        path = os.path.join(out_dir, f"{label}.csv")
        write_trace_csv(summary, path)
    return path


# ----------------------------------------------------------------------
# paired comparison
# ----------------------------------------------------------------------


def compare_optimizers(problem_name, optimizer_specs, repeats, seed, **common_options):
    """Run several optimizers on one problem with identical seed streams.

    ``optimizer_specs`` is a list of ``(name, options)`` pairs. Returns a
    list of table rows sorted by rank: each has the optimizer name, its
    median final value/regret and the rank (ties share the lower rank).
    """
    rows = []
    for name, options in optimizer_specs:
        merged = {**common_options, **options}
        config = ExperimentConfig(
            problem=problem_name,
            optimizer=name,
            optimizer_options=merged,
            repeats=repeats,
            seed=seed,
        )
        summary = run_experiment(config)
        label = resolve_optimizer(name)
        if options:
            label += ":" + ",".join(f"{k}={v}" for k, v in sorted(options.items()))
        rows.append(
            {
                "optimizer": resolve_optimizer(name),
                "label": label,
                "median_final_value": summary.final_value_stats["median"],
                "median_final_regret": summary.median_final_regret,
                "summary": summary,
            }
        )
    key = (
        "median_final_regret"
        if all(r["median_final_regret"] is not None for r in rows)
        else "median_final_value"
    )
    ordered = sorted(range(len(rows)), key=lambda i: rows[i][key])
    for rank, i in enumerate(ordered, start=1):
        rows[i]["rank"] = rank
    return rows
