"""simulate command: seeded experiments written as CSV."""

import argparse
import logging
from pathlib import Path
from typing import List

from flam.config import Settings
from flam.errors import UsageError
from flam.models import FitConfig, GlmConfig
from flam.simulation.runner import ExperimentRunner, summarize_optimal, write_rows_csv
from flam.simulation.scenarios import SCENARIOS, ScenarioSpec

logger = logging.getLogger(__name__)

EXPERIMENTS = ("scenario", "df", "consistency", "logistic")


def _float_list(text: str) -> List[float]:
    try:
        return [float(item) for item in text.split(",") if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'") from None


def _int_list(text: str) -> List[int]:
    try:
        return [int(item) for item in text.split(",") if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'") from None


def register(subparsers, common: argparse.ArgumentParser) -> None:
    sim = subparsers.add_parser("simulate", parents=[common], help="run a seeded simulation experiment")
    sim.add_argument("--experiment", choices=EXPERIMENTS, default="scenario")
    sim.add_argument("--out", type=Path, required=True, help="per-row results CSV")
    sim.add_argument("--summary", type=Path, default=None, help="scenario experiment: optimal-λ summary CSV")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--reps", type=int, default=None, help="replicates (experiment default if omitted)")
    sim.add_argument("--scenario", type=int, default=1)
    sim.add_argument("--n", type=int, default=None)
    sim.add_argument("--p", type=int, default=None)
    sim.add_argument("--n-signal", type=int, default=None)
    sim.add_argument("--sigma", type=float, default=None, help="noise sd (experiment default if omitted)")
    sim.add_argument("--signal-scale", type=float, default=None, help="logistic: signal amplitude multiplier")
    sim.add_argument("--alphas", type=_float_list, default=None, help="e.g. 0.5,0.75,1")
    sim.add_argument("--n-grid", type=_int_list, default=None, help="consistency: sample sizes, e.g. 50,100,200")
    sim.add_argument("--nlambda", type=int, default=20)
    sim.set_defaults(handler=cmd_simulate)


def _options(args, **names) -> dict:
    """Keyword arguments for the flags that were actually given."""
    return {key: getattr(args, attr) for key, attr in names.items() if getattr(args, attr) is not None}


def cmd_simulate(args, settings: Settings) -> int:
    if args.scenario not in SCENARIOS:
        raise UsageError(f"unknown scenario {args.scenario}; choose one of {sorted(SCENARIOS)}")
    if args.reps is not None and args.reps < 2:
        raise UsageError(f"--reps must be >= 2, got {args.reps}")

    runner = ExperimentRunner(
        threads=args.threads,
        config=FitConfig.from_settings(settings),
        glm_config=GlmConfig.from_settings(settings),
        progress_callback=lambda phase, message: print(f"[{phase}] {message}"),
    )

    if args.experiment == "scenario":
        p = 4 if args.p is None else args.p
        spec = ScenarioSpec(
            scenario=args.scenario,
            n=100 if args.n is None else args.n,
            p_total=p,
            n_signal=min(4, p) if args.n_signal is None else args.n_signal,
            noise_sd=1.0 if args.sigma is None else args.sigma,
            seed=args.seed,
        )
        rows = runner.scenario_experiment(
            spec, n_lambda=args.nlambda, **_options(args, alphas="alphas", n_reps="reps")
        )
        if args.summary is not None:
            write_rows_csv(summarize_optimal(rows), args.summary)
    elif args.experiment == "df":
        rows = runner.df_experiment(
            seed=args.seed,
            scenario=args.scenario,
            **_options(
                args, sigma="sigma", n="n", p="p", n_signal="n_signal", alphas="alphas", n_reps="reps"
            ),
        )
    elif args.experiment == "consistency":
        rows = runner.consistency_experiment(
            seed=args.seed,
            scenario=args.scenario,
            **_options(args, sigma="sigma", n_grid="n_grid", p="p", n_signal="n_signal", n_reps="reps"),
        )
    else:
        if args.alphas is not None and len(args.alphas) != 1:
            raise UsageError("the logistic experiment takes a single alpha")
        extra = {"alpha": args.alphas[0]} if args.alphas else {}
        rows = runner.logistic_experiment(
            seed=args.seed,
            n_lambda=args.nlambda,
            **_options(args, n="n", n_reps="reps", signal_scale="signal_scale"),
            **extra,
        )

    write_rows_csv(rows, args.out)
    print(f"{len(rows)} rows written to {args.out}")
    return 0
