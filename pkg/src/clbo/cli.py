"""Command-line entry point.

Subcommands: ``run`` (one experiment), ``suite`` (a config-file batch),
``compare`` (paired optimizer table), ``oracle`` (regenerate the derived
reference values). Exit codes: 0 success, 1 configuration error,
2 runtime failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import os
import sys

from .exceptions import ClboError, ConfigurationError
from .harness import ExperimentConfig, compare_optimizers, run_experiment
from .oracle import write_reference_values

#: overrides the fallback output directory (".")
OUT_DIR_ENV = "CLBO_OUT_DIR"

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2

#: experiment-level keys in suite files; everything else is an optimizer option
_EXPERIMENT_KEYS = {
    "problem",
    "optimizer",
    "repeats",
    "seed",
    "format",
    "record_ambiguity",
    "ambiguity_grid",
    "failure_rate",
    "label",
}


def _default_out(args):
    if args.out is not None:
        return args.out
    return os.environ.get(OUT_DIR_ENV, ".")


def _coerce(text):
    """Parse a config value: bool, int, float, then plain string."""
    lowered = text.strip().lower()
    if lowered in ("true", "yes", "on"):
        return True
    if lowered in ("false", "no", "off"):
        return False
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    return text.strip()


def _parse_options(pairs):
    """key=value strings -> options dict."""
    options = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigurationError(
                f"option: expected key=value, got {pair!r}"
            )
        key, value = pair.split("=", 1)
        options[key.strip()] = _coerce(value)
    return options


def _config_from_section(name, section):
    missing = [key for key in ("problem", "optimizer") if key not in section]
    if missing:
        raise ConfigurationError(
            f"{missing[0]}: required in suite section [{name}]"
        )
    options = {
        key: _coerce(value)
        for key, value in section.items()
        if key not in _EXPERIMENT_KEYS
    }
    return ExperimentConfig(
        problem=section["problem"],
        optimizer=section["optimizer"],
        optimizer_options=options,
        repeats=int(section.get("repeats", 20)),
        seed=int(section.get("seed", 0)),
        output_format=section.get("format", "csv"),
        record_ambiguity=_coerce(section.get("record_ambiguity", "false")) is True,
        ambiguity_grid=int(section.get("ambiguity_grid", 256)),
        failure_rate=float(section.get("failure_rate", 0.0)),
        label=section.get("label"),
    )


def cmd_run(args):
    config = ExperimentConfig(
        problem=args.problem,
        optimizer=args.optimizer,
        optimizer_options=_parse_options(args.option),
        repeats=args.repeats,
        seed=args.seed,
        output_format=args.format,
        record_ambiguity=args.record_ambiguity,
        failure_rate=args.failure_rate,
        label=args.label,
    )
    summary = run_experiment(config, out_dir=_default_out(args))
    stats = summary.final_regret_stats or summary.final_value_stats
    print(
        f"{config.resolved_label}: median="
        f"{stats['median']:.6g} (min={stats['min']:.6g}, max={stats['max']:.6g})"
    )
    return EXIT_OK


def cmd_suite(args):
    parser = configparser.ConfigParser()
    read = parser.read(args.config)
    if not read:
        raise ConfigurationError(f"config: cannot read file {args.config!r}")
    if not parser.sections():
        raise ConfigurationError(f"config: no experiment sections in {args.config!r}")
    out_dir = _default_out(args)
    for name in parser.sections():
        config = _config_from_section(name, parser[name])
        if args.format is not None:
            config.output_format = args.format
        if args.seed is not None:
            config.seed = args.seed
        config.validate()
        summary = run_experiment(config, out_dir=out_dir)
        stats = summary.final_regret_stats or summary.final_value_stats
        print(f"[{name}] {config.resolved_label}: median={stats['median']:.6g}")
    return EXIT_OK


def cmd_compare(args):
    names = [n.strip() for n in args.optimizers.split(",") if n.strip()]
    if not names:
        raise ConfigurationError("optimizers: need at least one name")
    specs = [(name, _parse_options(args.option)) for name in names]
    rows = compare_optimizers(
        args.problem, specs, repeats=args.repeats, seed=args.seed
    )
    out_dir = _default_out(args)
    os.makedirs(out_dir, exist_ok=True)
    stem = args.label or f"compare_{args.problem}_s{args.seed}"
    table = [
        {
            "optimizer": row["label"],
            "median_final_value": row["median_final_value"],
            "median_final_regret": row["median_final_regret"],
            "rank": row["rank"],
        }
        for row in rows
    ]
    if args.format == "json":
        path = os.path.join(out_dir, f"{stem}.json")
        with open(path, "w") as fh:
            json.dump(
                {"schema": "clbo-compare-v1", "problem": args.problem, "table": table},
                fh,
                indent=2,
                sort_keys=True,
            )
            fh.write("\n")
    else:
        path = os.path.join(out_dir, f"{stem}.csv")
        with open(path, "w", newline="") as fh:
            fh.write("# schema: clbo-compare-v1\n")
            writer = csv.DictWriter(
                fh,
                fieldnames=["optimizer", "median_final_value", "median_final_regret", "rank"],
            )
            writer.writeheader()
            for row in table:
                writer.writerow(row)
    for row in sorted(table, key=lambda r: r["rank"]):
        print(
            f"{row['rank']:>2}. {row['optimizer']}: "
            f"median={row['median_final_value']:.6g}"
        )
    return EXIT_OK


def cmd_oracle(args):
    out_dir = _default_out(args)
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, args.filename)
    write_reference_values(
        path, seed=args.seed, n_screen=args.screen, n_refine=args.refine
    )
    print(f"reference values written to {path}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="clbo",
        description="Co-learning Bayesian optimization experiment runner.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0, help="base seed")
        p.add_argument("--out", default=None, help=f"output directory (default ${OUT_DIR_ENV} or .)")
        p.add_argument("--format", choices=("csv", "json"), default="csv")

    p_run = sub.add_parser("run", help="run one experiment")
    p_run.add_argument("--problem", required=True)
    p_run.add_argument("--optimizer", required=True)
    p_run.add_argument("--repeats", type=int, default=20)
    p_run.add_argument(
        "--option",
        action="append",
        metavar="KEY=VALUE",
        help="optimizer option, repeatable (e.g. --option n_subsets=3)",
    )
    p_run.add_argument("--record-ambiguity", action="store_true")
    p_run.add_argument("--failure-rate", type=float, default=0.0)
    p_run.add_argument("--label", default=None)
    common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_suite = sub.add_parser("suite", help="run every experiment in a config file")
    p_suite.add_argument("--config", required=True)
    common(p_suite)
    p_suite.set_defaults(func=cmd_suite, seed=None, format=None)

    p_cmp = sub.add_parser("compare", help="paired optimizer comparison table")
    p_cmp.add_argument("--problem", required=True)
    p_cmp.add_argument("--optimizers", required=True, help="comma-separated names")
    p_cmp.add_argument("--repeats", type=int, default=20)
    p_cmp.add_argument(
        "--option", action="append", metavar="KEY=VALUE",
        help="option applied to every optimizer",
    )
    p_cmp.add_argument("--label", default=None)
    common(p_cmp)
    p_cmp.set_defaults(func=cmd_compare)

    p_oracle = sub.add_parser("oracle", help="regenerate derived reference values")
    p_oracle.add_argument("--filename", default="reference_values.json")
    p_oracle.add_argument("--screen", type=int, default=100_000)
    p_oracle.add_argument("--refine", type=int, default=200)
    common(p_oracle)
    p_oracle.set_defaults(func=cmd_oracle)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; map to the config-error code
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ClboError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"unexpected failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
