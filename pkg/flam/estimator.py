"""scikit-learn estimators wrapping FLAM fits."""

import logging
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from flam.errors import InvalidArgumentError
from flam.models import Dataset, FitConfig, GlmConfig, PenaltySpec
from flam.services.fit import flam_bcd
from flam.services.glm import logistic_flam, predict_response
from flam.services.modelsel import additive_model, cross_validate

logger = logging.getLogger(__name__)


class _FlamBase(BaseEstimator):
    loss_kind = "squared"

    def __init__(
        self,
        lam: Optional[float] = None,
        alpha: float = 1.0,
        epsilon: float = 1e-8,
        n_lambda: int = 50,
        lambda_min_ratio: float = 1e-3,
        cv_folds: int = 10,
        random_state: int = 0,
        tol: float = 1e-8,
        max_iter: int = 1000,
    ):
        self.lam = lam
        self.alpha = alpha
        self.epsilon = epsilon
        self.n_lambda = n_lambda
        self.lambda_min_ratio = lambda_min_ratio
        self.cv_folds = cv_folds
        self.random_state = random_state
        self.tol = tol
        self.max_iter = max_iter

    def _fit_dataset(self, data: Dataset):
        config = FitConfig(tol=self.tol, max_sweeps=self.max_iter)
        glm_config = GlmConfig(tol=self.tol, max_iter=self.max_iter)
        if self.lam is None:
            self.cv_ = cross_validate(
                data,
                self.alpha,
                k_folds=self.cv_folds,
                loss_kind=self.loss_kind,
                seed=self.random_state,
                n_lambda=self.n_lambda,
                lambda_min_ratio=self.lambda_min_ratio,
                config=config,
                glm_config=glm_config,
            )
            self.lambda_ = self.cv_.chosen_lambda
        else:
            self.cv_ = None
            self.lambda_ = float(self.lam)
        penalty = PenaltySpec(lam=self.lambda_, alpha=self.alpha, epsilon=self.epsilon)
        if self.loss_kind == "squared":
            self.fit_ = flam_bcd(data, penalty, config)
        else:
            self.fit_ = logistic_flam(data, penalty, glm_config)
        self.model_ = additive_model(self.fit_, data)
        self.n_features_in_ = data.p
        logger.info(f"[{type(self).__name__}] lambda={self.lambda_:.6g}, {len(self.fit_.active_features)} active")
        return self

    def _check_X(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features_in_:
            raise InvalidArgumentError(f"X must have shape (m, {self.n_features_in_})")
        return X


class FlamRegressor(RegressorMixin, _FlamBase):
    """Squared-loss FLAM; ``lam=None`` selects λ by K-fold cross-validation."""

    def fit(self, X, y):
        return self._fit_dataset(Dataset.from_arrays(y, X))

    def predict(self, X) -> np.ndarray:
        X = self._check_X(X)
        return predict_response(self.model_, X)


class FlamClassifier(ClassifierMixin, _FlamBase):
    """Logistic FLAM for two classes."""

    loss_kind = "logistic"

    def fit(self, X, y):
        y = np.asarray(y)
        self.classes_ = np.unique(y)
        if self.classes_.size != 2:
            raise InvalidArgumentError(f"FlamClassifier needs exactly 2 classes, got {self.classes_.size}")
        encoded = (y == self.classes_[1]).astype(float)
        return self._fit_dataset(Dataset.from_arrays(encoded, X))

    def predict_proba(self, X) -> np.ndarray:
        X = self._check_X(X)
        prob = predict_response(self.model_, X)
        return np.column_stack([1.0 - prob, prob])

    def predict(self, X) -> np.ndarray:
        prob = self.predict_proba(X)[:, 1]
        return self.classes_[(prob >= 0.5).astype(int)]
