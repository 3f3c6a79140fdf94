"""fit, predict and export-plot commands."""

import argparse
import logging
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd
from scipy.special import expit

from flam.config import Settings
from flam.models import NOT_CONVERGED, Dataset, FitConfig, FlamFit, GlmConfig, PenaltySpec
from flam.services.fit import debias_refit, flam_bcd, flam_path
from flam.services.glm import logistic_flam, logistic_path
from flam.services.inference import df_flam_detail, knot_count
from flam.services.modelsel import additive_model, lambda_sparse_threshold
from flam.storage import (
    ModelFile,
    fit_record,
    load_model,
    read_feature_csv,
    read_training_csv,
    save_model,
    write_frame,
)
from flam.errors import OutputError

logger = logging.getLogger(__name__)


def register(subparsers, common: argparse.ArgumentParser) -> None:
    fit = subparsers.add_parser("fit", parents=[common], help="fit a model (one lambda or a path)")
    fit.add_argument("data", type=Path, help="training CSV with a header row")
    fit.add_argument("--response", required=True, help="name of the response column")
    fit.add_argument("--out", type=Path, required=True, help="model file to write (JSON)")
    fit.add_argument("--loss", choices=["squared", "logistic"], default="squared")
    fit.add_argument("--lambda", dest="lam", type=float, default=None, help="single lambda (default: path)")
    fit.add_argument("--alpha", type=float, default=1.0, help="fusion / group mix in [0, 1]")
    fit.add_argument("--nlambda", type=int, default=None, help="path length")
    fit.add_argument("--lambda-min-ratio", type=float, default=None)
    fit.add_argument("--epsilon", type=float, default=None, help="ridge stabilizer for df")
    fit.add_argument("--tol", type=float, default=None)
    fit.add_argument("--max-sweeps", type=int, default=None)
    fit.add_argument("--debias", action="store_true", help="least-squares refit of the levels")
    fit.add_argument("--report", type=Path, default=None, help="also write the report here")
    fit.set_defaults(handler=cmd_fit)

    predict = subparsers.add_parser("predict", parents=[common], help="predict from a model file")
    predict.add_argument("data", type=Path, help="CSV holding the model's feature columns")
    predict.add_argument("--model", type=Path, required=True)
    predict.add_argument("--out", type=Path, required=True)
    predict.add_argument("--index", type=int, default=None, help="fit entry (default: last)")
    predict.set_defaults(handler=cmd_predict)

    export = subparsers.add_parser(
        "export-plot", parents=[common], help="long-format step-function samples for plotting"
    )
    export.add_argument("--model", type=Path, required=True)
    export.add_argument("--out", type=Path, required=True)
    export.add_argument("--index", type=int, default=None)
    export.add_argument(
        "--delta", type=float, default=1e-3, help="knot offset as a fraction of the feature range"
    )
    export.set_defaults(handler=cmd_export_plot)


def _fit_report(data: Dataset, fits: List[FlamFit], dfs: List[Optional[float]], threshold: float) -> str:
    lines = [
        f"FLAM fit: n={data.n}, p={data.p}, loss={fits[0].loss}, alpha={fits[0].penalty.alpha:g}",
        f"Sparsity threshold (lambda_max): {threshold:.10g}",
    ]
    for fit, df in zip(fits, dfs):
        knots = ", ".join(
            f"{name}={count}" for name, count in zip(data.feature_names, fit.knots_per_feature())
        )
        df_text = "n/a" if df is None else f"{df:.4f}"
        status = "converged" if fit.converged else "NOT converged"
        extra = sorted(fit.flags - {NOT_CONVERGED})
        if extra:
            status += ", " + ", ".join(extra)
        lines.append(
            f"lambda={fit.penalty.lam:.6g}  objective={fit.objective:.10g}  df={df_text}  "
            f"{len(fit.active_features)} active features  [{status}]"
        )
        lines.append(f"    knots: {knots}")
    return "\n".join(lines)


def cmd_fit(args, settings: Settings) -> int:
    y, X, features = read_training_csv(args.data, args.response)
    data = Dataset.from_arrays(y, X, features)
    epsilon = settings.epsilon if args.epsilon is None else args.epsilon
    n_lambda = settings.n_lambda if args.nlambda is None else args.nlambda
    ratio = settings.lambda_min_ratio if args.lambda_min_ratio is None else args.lambda_min_ratio
    threshold = lambda_sparse_threshold(data, args.alpha)

    if args.loss == "squared":
        config = FitConfig(
            tol=settings.tol if args.tol is None else args.tol,
            max_sweeps=settings.max_sweeps if args.max_sweeps is None else args.max_sweeps,
            active_set_cycle=settings.active_set_cycle,
        )
        if args.lam is not None:
            fits = [flam_bcd(data, PenaltySpec(lam=args.lam, alpha=args.alpha, epsilon=epsilon), config)]
        else:
            fits = list(flam_path(data, args.alpha, n_lambda, ratio, config, epsilon=epsilon).fits)
        if args.debias:
            fits = [debias_refit(data, fit) for fit in fits]
        dfs: List[Optional[float]] = [None] * len(fits)
        if not args.debias:
            estimates = [df_flam_detail(fit) for fit in fits]
            fits = [estimate.flag(fit) for estimate, fit in zip(estimates, fits)]
            dfs = [estimate.value for estimate in estimates]
    else:
        glm_config = GlmConfig(
            tol=settings.glm_tol if args.tol is None else args.tol,
            max_iter=settings.glm_max_iter if args.max_sweeps is None else args.max_sweeps,
            threads=args.threads,
        )
        if args.lam is not None:
            penalty = PenaltySpec(lam=args.lam, alpha=args.alpha, epsilon=epsilon)
            fits = [logistic_flam(data, penalty, glm_config)]
        else:
            fits = list(logistic_path(data, args.alpha, n_lambda, ratio, glm_config, epsilon=epsilon).fits)
        dfs = [None for _ in fits]

    records = [
        fit_record(additive_model(fit, data), fit.penalty.lam, knot_count(fit), df)
        for fit, df in zip(fits, dfs)
    ]
    model_file = ModelFile(
        loss=args.loss,
        response=args.response,
        features=list(features),
        alpha=args.alpha,
        epsilon=epsilon,
        fits=records,
    )
    save_model(model_file, args.out)

    report = _fit_report(data, fits, dfs, threshold)
    print(report)
    print(f"Model written to {args.out}")
    if args.report is not None:
        try:
            args.report.write_text(report + "\n", encoding="utf-8")
        except OSError as exc:
            raise OutputError(f"cannot write {args.report}: {exc}") from exc
    return 0


def cmd_predict(args, settings: Settings) -> int:
    model_file = load_model(args.model)
    model = model_file.model(args.index)
    X = read_feature_csv(args.data, model_file.features)
    eta = model.linear_predictor(X) if X.shape[0] else np.zeros(0)
    if model_file.loss == "logistic":
        prob = expit(eta)
        frame = pd.DataFrame({"prediction": (prob >= 0.5).astype(int), "probability": prob})
    else:
        frame = pd.DataFrame({"prediction": eta})
    write_frame(frame, args.out)
    logger.info(f"[predict] wrote {len(frame)} predictions to {args.out}")
    return 0


def plot_samples(lo: float, hi: float, knots: np.ndarray, delta: float) -> np.ndarray:
    """Domain endpoints plus knot ± δ and knot ± δ/2 for every knot.

    δ is capped at a quarter of the smallest gap between knots and domain
    endpoints, so the samples are strictly increasing.
    """
    if knots.size:
        gaps = np.diff(np.concatenate([[lo], knots, [hi]]))
        delta = min(delta, 0.25 * float(np.min(gaps)))
    offsets = np.array([-delta, -delta / 2, delta / 2, delta])
    inner = (knots[:, None] + offsets[None, :]).ravel()
    return np.concatenate([[lo], inner, [hi]])


def cmd_export_plot(args, settings: Settings) -> int:
    model_file = load_model(args.model)
    model = model_file.model(args.index)
    rows = []
    for name, sf in zip(model.feature_names, model.step_functions):
        width = sf.domain_hi - sf.domain_lo
        delta = args.delta * width if width > 0 else args.delta
        for x in plot_samples(sf.domain_lo, sf.domain_hi, sf.knots, delta):
            rows.append({"feature": name, "x": float(x), "fitted_level": float(sf(np.array([x]))[0])})
    write_frame(pd.DataFrame(rows, columns=["feature", "x", "fitted_level"]), args.out)
    logger.info(f"[export-plot] wrote {len(rows)} samples to {args.out}")
    return 0
