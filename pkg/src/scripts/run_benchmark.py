import argparse
import logging
import os
import sys
from typing import List, Optional

import numpy as np

from src.models.bench_harness import compare_coherence, emit_csv, run_experiment
from src.models.reflection_design import save_reflections
from src.utils.config import load_experiment, parse_sweep
from src.utils.errors import ChannelEstimationError, ConfigError
from src.utils.metrics import nmse_db

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

CONFIG_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "experiment_configs")


def setup_logging(log_file: Optional[str], verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s - %(levelname)s - %(message)s",
        filename=log_file,
    )


def run_command(args: argparse.Namespace) -> int:
    overrides = {
        "trials": args.trials,
        "seed": args.seed,
        "reflection_mode": args.reflections,
        "reflections_file": args.reflections_file,
        "nf_override": args.nf_override,
        "n_jobs": args.n_jobs,
    }
    if args.sweep:
        overrides["sweep_axis"], overrides["sweep_values"] = parse_sweep(args.sweep)
    if args.estimators:
        overrides["estimators"] = [name for name in args.estimators.split(",") if name.strip()]
    spec = load_experiment(args.config, overrides)

    print("Starting channel estimation benchmark...")
    print(f"Config: {args.config}")
    print(f"Sweep {spec.sweep_axis} over {spec.sweep_values}, {spec.trials} trials, estimators {spec.estimators}")

    table = run_experiment(spec, timing=not args.no_timing)
    emit_csv(table, args.out)
    for row in table.frame.itertuples(index=False):
        print(f"[INFO] {spec.sweep_axis}={row.sweep:g} {row.estimator:>10}: {nmse_db(row.mean_nmse):7.2f} dB, {row.failed} failed")
    for note in table.annotations.values():
        print(f"[INFO] {note}")
    print(f"Results written to {args.out}")
    return EXIT_OK


def coherence_command(args: argparse.Namespace) -> int:
    overrides = {"seed": args.seed}
    spec = load_experiment(args.config, overrides)
    cfg = spec.base
    rng = np.random.default_rng(spec.seed)

    print(f"Designing reflections for L={cfg.L}, B={cfg.B}, G_r={cfg.G_r}...")
    comparison = compare_coherence(cfg, rng, n_sweeps=spec.solver.n_sweeps)
    for name, report in (("random", comparison.random), ("optimized", comparison.optimized)):
        print(
            f"{name:>9}: mu = {report.mu:.4f}, worst pair {report.worst_pair}, "
            f"off-diagonal Gram energy {report.gram_offdiag_energy:.4e}"
        )
    if args.save_v:
        save_reflections(comparison.V_optimized, args.save_v)
        print(f"Optimized reflections saved to {args.save_v}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Cascaded channel estimation benchmarks for RIS-aided uplinks")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--log-file", type=str, default=None, help="write the log here instead of stderr")
    common.add_argument("--verbose", action="store_true", help="debug logging, including solver traces")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", parents=[common], help="run a Monte-Carlo sweep and write a CSV of NMSE results")
    run.add_argument(
        "--config",
        type=str,
        default=os.path.join(CONFIG_DIR, "reduced_overhead.yaml"),
        help="experiment file (YAML or JSON)",
    )
    run.add_argument("--sweep", type=str, default=None, help="sweep override, e.g. B=8,16,24,32")
    run.add_argument("--estimators", type=str, default=None, help="comma separated estimator names")
    run.add_argument("--trials", type=int, default=None, help="Monte-Carlo trials per sweep point")
    run.add_argument("--seed", type=int, default=None, help="base seed of the per-trial random streams")
    run.add_argument("--out", type=str, default="results.csv", help="path of the CSV to write")
    run.add_argument("--reflections", choices=["random", "optimized"], default=None, help="reflection design")
    run.add_argument("--reflections-file", type=str, default=None, help=".npy reflection matrix to reuse")
    run.add_argument("--nf-override", type=int, default=None, help="skip MDL and use this subspace dimension")
    run.add_argument("--n-jobs", type=int, default=None, help="worker processes (-1 for all cores)")
    run.add_argument(
        "--no-timing",
        action="store_true",
        help="write 0 as run time; without it the timing column differs between otherwise identical runs",
    )
    run.set_defaults(handler=run_command)

    coherence = commands.add_parser("coherence", parents=[common], help="compare mutual coherence of random and optimized V")
    coherence.add_argument(
        "--config",
        type=str,
        default=os.path.join(CONFIG_DIR, "reduced_overhead.yaml"),
        help="experiment file (YAML or JSON)",
    )
    coherence.add_argument("--seed", type=int, default=None, help="seed of the random starting point")
    coherence.add_argument("--save-v", type=str, default=None, help="save the optimized matrix as .npy")
    coherence.set_defaults(handler=coherence_command)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_file, args.verbose)
    try:
        return args.handler(args)
    except ConfigError as e:
        logging.error(f"Configuration error: {str(e)}")
        print(f"[ERROR] {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ChannelEstimationError, OSError) as e:
        logging.error(f"Fatal error: {str(e)}")
        print(f"[ERROR] {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as e:
        logging.exception(f"Unexpected error: {str(e)}")
        print(f"[ERROR] unexpected {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
