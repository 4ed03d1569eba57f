"""Command-line entry points.

Subcommands:
    synth   write a synthetic dataset to CSV
    run     execute an experiment described by a JSON config
    ablate  run the unlabeled-data ablation (forces that experiment kind)
    report  derive plot-ready CSVs from a finished run directory
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import data, experiments
from .errors import ConfigurationError
from .experiments import ExperimentConfig, emit_plot_data, run_experiment, write_csv


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sscp",
        description="Conformal prediction experiments with self-supervised "
                    "difficulty features.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="write a synthetic dataset CSV")
    p_synth.add_argument("--n", type=int, default=1000)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--out", default="synthetic.csv")
    p_synth.add_argument("--with-latent", action="store_true",
                         help="include the latent column (excluded by default so the "
                              "file can be used directly as a regression dataset)")

    for name, help_text in (("run", "run an experiment from a JSON config"),
                            ("ablate", "run the unlabeled-data ablation")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--out", default=None, help="override the output directory")
        p.add_argument("--zero-ss-feature", action="store_true",
                       help="debug ablation: drop the self-supervised feature")

    p_report = sub.add_parser("report", help="emit plot-ready CSVs for a run")
    p_report.add_argument("--run-dir", required=True)
    return parser


def _cmd_synth(args) -> int:
    samples = data.synth_generate(args.n, seed=args.seed)
    X, y, latent = data.synth_matrices(samples)
    header = [f"x{j}" for j in range(X.shape[1])] + ["y"]
    cols = [X[:, j] for j in range(X.shape[1])] + [y]
    if args.with_latent:
        header.append("latent")
        cols.append(latent)
    rows = [[c[i] for c in cols] for i in range(len(y))]
    write_csv(Path(args.out), header, rows)
    print(f"wrote {len(y)} rows to {args.out}")
    return 0


def _cmd_run(args, force_experiment: str | None = None) -> int:
    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.out is not None:
        overrides["output_dir"] = args.out
    if args.zero_ss_feature:
        overrides["zero_ss_feature"] = True
    if force_experiment is not None:
        overrides["experiment"] = force_experiment
    config = ExperimentConfig.from_json(args.config, overrides)
    summary = run_experiment(config)
    print(f"{summary['n_ok']} cells ok, {summary['n_failed']} failed; "
          f"outputs in {summary['output_dir']}")
    return 1 if summary["all_failed"] else 0


def _cmd_report(args) -> int:
    written = emit_plot_data(args.run_dir)
    for name, count in written.items():
        print(f"{name}: {count} rows")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "synth":
            return _cmd_synth(args)
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "ablate":
            return _cmd_run(args, force_experiment="ablation_unlabeled")
        if args.command == "report":
            return _cmd_report(args)
    except ConfigurationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
