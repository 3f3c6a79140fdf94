"""CSV ingestion and versioned JSON model files."""

import json
import logging
from pathlib import Path
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from flam.errors import DataError, ModelFormatError, OutputError
from flam.models import AdditiveModel, PenaltySpec, StepFunction

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MISSING_TOKENS = {"", "na", "nan", "null", "none"}


def read_frame(path: Path) -> pd.DataFrame:
    """Read a comma-separated, UTF-8, headed CSV as strings."""
    try:
        return pd.read_csv(
            path,
            sep=",",
            encoding="utf-8",
            dtype=str,
            keep_default_na=False,
            na_filter=False,
            skipinitialspace=True,
        )
    except FileNotFoundError as exc:
        raise DataError(f"data file not found: {path}") from exc
    except (OSError, UnicodeDecodeError, pd.errors.ParserError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except pd.errors.EmptyDataError as exc:
        raise DataError(f"{path} has no header row") from exc


def numeric_columns(frame: pd.DataFrame, columns: Sequence[str]) -> np.ndarray:
    """Convert ``columns`` to a float matrix, naming the first bad cell.

    Data rows are reported 1-based, not counting the header.
    """
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise DataError(f"missing columns: {', '.join(missing)}")
    out = np.empty((len(frame), len(columns)))
    for k, column in enumerate(columns):
        text = frame[column].astype(str).str.strip()
        absent = text.str.lower().isin(MISSING_TOKENS)
        if absent.any():
            row = int(np.flatnonzero(absent.to_numpy())[0]) + 1
            raise DataError(f"missing value in row {row}, column '{column}'")
        values = pd.to_numeric(text, errors="coerce")
        bad = values.isna() | ~np.isfinite(values.to_numpy(dtype=float, na_value=np.nan))
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0]) + 1
            raise DataError(
                f"non-numeric value '{text.iloc[row - 1]}' in row {row}, column '{column}'"
            )
        out[:, k] = values.to_numpy(dtype=float)
    return out


def read_training_csv(path: Path, response: str) -> Tuple[np.ndarray, np.ndarray, List[str]]:
    """Response vector, feature matrix and feature names from a training CSV.

    Every column other than ``response`` is a feature.
    """
    frame = read_frame(path)
    if response not in frame.columns:
        raise DataError(f"response column '{response}' not found in {path}")
    features = [c for c in frame.columns if c != response]
    if not features:
        raise DataError(f"{path} has no feature columns besides '{response}'")
    y = numeric_columns(frame, [response])[:, 0]
    X = numeric_columns(frame, features)
    logger.info(f"[storage] read {len(frame)} rows x {len(features)} features from {path}")
    return y, X, features


def read_feature_csv(path: Path, features: Sequence[str]) -> np.ndarray:
    """Feature matrix in the model's column order; extra columns are ignored."""
    frame = read_frame(path)
    return numeric_columns(frame, list(features))


def write_frame(frame: pd.DataFrame, path: Path) -> None:
    try:
        frame.to_csv(path, index=False)
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc


class StepFunctionRecord(BaseModel):
    """One feature's fitted step function."""

    feature: str
    knots: List[float]
    levels: List[float]
    domain_lo: float
    domain_hi: float


class FitRecord(BaseModel):
    """One fitted λ."""

    model_config = ConfigDict(populate_by_name=True)

    lam: float = Field(alias="lambda")
    intercept: float
    step_functions: List[StepFunctionRecord]
    objective: float
    iterations: int
    converged: bool
    flags: List[str] = []
    n_knots: int
    active_features: List[str]
    df: Optional[float] = None


class ModelFile(BaseModel):
    """Versioned model file: shared metadata plus one record per λ."""

    model_config = ConfigDict(populate_by_name=True)

    format_version: Literal[1] = FORMAT_VERSION
    loss: Literal["squared", "logistic"]
    response: str
    features: List[str]
    alpha: float
    epsilon: float
    fits: List[FitRecord]

    def entry(self, index: Optional[int] = None) -> FitRecord:
        """Record ``index`` (negative indices allowed); the last one by default."""
        if not self.fits:
            raise ModelFormatError("model file holds no fits")
        index = len(self.fits) - 1 if index is None else index
        try:
            return self.fits[index]
        except IndexError:
            raise ModelFormatError(
                f"fit index {index} out of range for {len(self.fits)} fits"
            ) from None

    def model(self, index: Optional[int] = None) -> AdditiveModel:
        record = self.entry(index)
        return AdditiveModel(
            intercept=record.intercept,
            step_functions=tuple(
                StepFunction(
                    knots=np.array(sf.knots, dtype=float),
                    levels=np.array(sf.levels, dtype=float),
                    domain_lo=sf.domain_lo,
                    domain_hi=sf.domain_hi,
                )
                for sf in record.step_functions
            ),
            feature_names=tuple(self.features),
            loss=self.loss,
            penalty=PenaltySpec(lam=record.lam, alpha=self.alpha, epsilon=self.epsilon),
        )


def fit_record(model: AdditiveModel, lam: float, n_knots: int, df: Optional[float]) -> FitRecord:
    """Record for one fitted λ from its prediction-time model."""
    meta = model.metadata
    return FitRecord(
        lam=lam,
        intercept=model.intercept,
        step_functions=[
            StepFunctionRecord(
                feature=name,
                knots=sf.knots.tolist(),
                levels=sf.levels.tolist(),
                domain_lo=sf.domain_lo,
                domain_hi=sf.domain_hi,
            )
            for name, sf in zip(model.feature_names, model.step_functions)
        ],
        objective=float(meta.get("objective", float("nan"))),
        iterations=int(meta.get("iterations", 0)),
        converged=bool(meta.get("converged", True)),
        flags=list(meta.get("flags", [])),
        n_knots=n_knots,
        active_features=[
            name for name, sf in zip(model.feature_names, model.step_functions) if sf.n_knots > 0
        ],
        df=df,
    )


def save_model(model_file: ModelFile, path: Path) -> None:
    try:
        Path(path).write_text(model_file.model_dump_json(by_alias=True, indent=2), encoding="utf-8")
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc
    logger.info(f"[storage] wrote model with {len(model_file.fits)} fits to {path}")


def load_model(path: Path) -> ModelFile:
    """Load a model file, rejecting unknown format versions."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ModelFormatError(f"cannot read model file {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path} is not valid JSON: {exc}") from exc
    version = raw.get("format_version") if isinstance(raw, dict) else None
    if version != FORMAT_VERSION:
        raise ModelFormatError(
            f"{path} has format_version {version!r}; this version reads {FORMAT_VERSION}"
        )
    try:
        return ModelFile.model_validate(raw)
    except ValidationError as exc:
        raise ModelFormatError(f"{path} is not a valid model file: {exc}") from exc
