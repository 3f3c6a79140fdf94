"""cv, lambda-max and df commands."""

import argparse
import logging
from pathlib import Path

import numpy as np
import pandas as pd

from flam.config import Settings
from flam.errors import UsageError
from flam.models import Dataset, FitConfig, FlamFit, GlmConfig, PenaltySpec
from flam.services.fit import flam_bcd
from flam.services.inference import DfEstimate, NoiseDesign, df_flam_detail, df_monte_carlo
from flam.services.modelsel import cross_validate, lambda_sparse_threshold
from flam.simulation.scenarios import ScenarioSpec, derived_seed, generate
from flam.storage import load_model, read_feature_csv, read_training_csv, write_frame

logger = logging.getLogger(__name__)


def register(subparsers, common: argparse.ArgumentParser) -> None:
    cv = subparsers.add_parser("cv", parents=[common], help="K-fold cross-validation of the lambda path")
    cv.add_argument("data", type=Path)
    cv.add_argument("--response", required=True)
    cv.add_argument("--out", type=Path, required=True, help="CV curve CSV")
    cv.add_argument("--seed", type=int, required=True, help="fold assignment seed")
    cv.add_argument("--folds", type=int, default=None)
    cv.add_argument("--alpha", type=float, default=1.0)
    cv.add_argument("--loss", choices=["squared", "logistic"], default="squared")
    cv.add_argument("--nlambda", type=int, default=None)
    cv.add_argument("--lambda-min-ratio", type=float, default=None)
    cv.set_defaults(handler=cmd_cv)

    lam_max = subparsers.add_parser(
        "lambda-max", parents=[common], help="smallest lambda giving an all-zero fit"
    )
    lam_max.add_argument("data", type=Path)
    lam_max.add_argument("--response", required=True)
    lam_max.add_argument("--alpha", type=float, default=1.0)
    lam_max.set_defaults(handler=cmd_lambda_max)

    df = subparsers.add_parser("df", parents=[common], help="degrees of freedom of a fit")
    df.add_argument("--model", type=Path, default=None, help="model file (with --data)")
    df.add_argument("--data", type=Path, default=None, help="training CSV of the model")
    df.add_argument("--index", type=int, default=None)
    df.add_argument("--scenario", type=int, default=None, help="simulation scenario 1-4 instead of a model")
    df.add_argument("--n", type=int, default=100)
    df.add_argument("--p", type=int, default=4)
    df.add_argument("--n-signal", type=int, default=None)
    df.add_argument("--sigma", type=float, default=1.0)
    df.add_argument("--seed", type=int, default=0)
    df.add_argument("--lambda", dest="lam", type=float, default=None)
    df.add_argument("--alpha", type=float, default=1.0)
    df.add_argument("--mc-reps", type=int, default=None, help="Monte-Carlo replicates (scenario mode)")
    df.set_defaults(handler=cmd_df)


def _dataset(path: Path, response: str) -> Dataset:
    y, X, features = read_training_csv(path, response)
    return Dataset.from_arrays(y, X, features)


def cmd_cv(args, settings: Settings) -> int:
    data = _dataset(args.data, args.response)
    result = cross_validate(
        data,
        args.alpha,
        k_folds=settings.cv_folds if args.folds is None else args.folds,
        loss_kind=args.loss,
        seed=args.seed,
        n_lambda=settings.n_lambda if args.nlambda is None else args.nlambda,
        lambda_min_ratio=settings.lambda_min_ratio if args.lambda_min_ratio is None else args.lambda_min_ratio,
        config=FitConfig.from_settings(settings),
        glm_config=GlmConfig.from_settings(settings),
        threads=args.threads,
    )
    write_frame(pd.DataFrame(result.rows()), args.out)
    k = result.chosen_index
    print(
        f"chosen lambda: {result.chosen_lambda:.10g} (index {k}, "
        f"mean loss {result.mean_loss[k]:.6g}, SE {result.se_loss[k]:.3g})"
    )
    return 0


def cmd_lambda_max(args, settings: Settings) -> int:
    data = _dataset(args.data, args.response)
    print(f"{lambda_sparse_threshold(data, args.alpha):.12g}")
    return 0


def _fit_from_model(args) -> FlamFit:
    """Rebuild the training-point fit of a squared-loss model entry."""
    model_file = load_model(args.model)
    if model_file.loss != "squared":
        raise UsageError("df is defined for squared-loss models only")
    y, _, _ = read_training_csv(args.data, model_file.response)
    X = read_feature_csv(args.data, model_file.features)
    data = Dataset.from_arrays(y, X, model_file.features)
    model = model_file.model(args.index)
    record = model_file.entry(args.index)
    thetas = np.column_stack([model.component(data.X, j) for j in range(model.p)])
    return FlamFit.build(
        theta0=model.intercept,
        thetas=thetas,
        orderings=data.orderings,
        penalty=model.penalty,
        objective=record.objective,
        iterations=record.iterations,
        converged=record.converged,
    )


def cmd_df(args, settings: Settings) -> int:
    if args.scenario is not None:
        return _df_scenario(args, settings)
    if args.model is None or args.data is None:
        raise UsageError("df needs --model and --data, or --scenario")
    if args.mc_reps is not None:
        raise UsageError("--mc-reps needs a simulation spec (--scenario)")
    fit = _fit_from_model(args)
    _print_df(df_flam_detail(fit))
    return 0


def _print_df(estimate: DfEstimate) -> None:
    note = f" [ridge_retry, epsilon={estimate.ridge:g}]" if estimate.retried else ""
    print(f"df_flam: {estimate.value:.6f}{note}")


def _df_scenario(args, settings: Settings) -> int:
    if not 1 <= args.scenario <= 4:
        raise UsageError(f"unknown scenario {args.scenario}; choose 1-4")
    n_signal = min(4, args.p) if args.n_signal is None else args.n_signal
    spec = ScenarioSpec(
        scenario=args.scenario,
        n=args.n,
        p_total=args.p,
        n_signal=n_signal,
        noise_sd=args.sigma,
        seed=args.seed,
    )
    sim = generate(spec)
    lam = args.lam if args.lam is not None else 0.1 * lambda_sparse_threshold(sim.data, args.alpha)
    penalty = PenaltySpec(lam=lam, alpha=args.alpha, epsilon=settings.epsilon)
    config = FitConfig.from_settings(settings)
    fit = flam_bcd(sim.data, penalty, config)
    print(f"lambda: {lam:.10g}")
    _print_df(df_flam_detail(fit))
    if args.mc_reps is not None:
        design = NoiseDesign(mu=sim.mu, sigma=args.sigma, seed=derived_seed(args.seed, 1))

        def fitter(y: np.ndarray) -> np.ndarray:
            return flam_bcd(sim.data.with_response(y), penalty, config).fitted_values

        estimate = df_monte_carlo(design, fitter, args.mc_reps, threads=args.threads)
        print(f"df_monte_carlo: {estimate.mean:.6f} (SE {estimate.standard_error:.6f}, {args.mc_reps} replicates)")
    return 0
