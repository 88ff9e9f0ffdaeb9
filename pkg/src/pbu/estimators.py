"""scikit-learn style wrappers around the functional core."""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, clone
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .classifier import Checkpoint, Dataset, ModelSpec, TrainConfig, forward, predict, train
from .errors import ContractError
from .unlearning import PBUConfig, run_pbu


class MLPClassifier(ClassifierMixin, BaseEstimator):
    """ReLU MLP with a softmax head, trained with the package's own autodiff.

    Labels must already be ``0..C-1``; ``num_classes`` defaults to
    ``max(y) + 1``.
    """

    def __init__(self, hidden_dims=(32,), num_classes=None, optimizer="adam",
                 learning_rate=1e-3, batch_size=64, epochs=200, random_state=0):
        self.hidden_dims = hidden_dims
        self.num_classes = num_classes
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        y = y.astype(np.int64)
        C = self.num_classes or int(y.max()) + 1
        self.spec_ = ModelSpec(X.shape[1], tuple(self.hidden_dims), C)
        cfg = TrainConfig(
            optimizer=self.optimizer, learning_rate=self.learning_rate,
            batch_size=self.batch_size, epochs=self.epochs, seed=self.random_state,
        )
        self.checkpoint_ = train(self.spec_, Dataset(X, y), cfg)
        self.classes_ = np.arange(C)
        self.n_features_in_ = X.shape[1]
        return self

    @property
    def theta_(self):
        return self.checkpoint_.theta

    def _check(self, X):
        check_is_fitted(self, "checkpoint_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ContractError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return X

    def predict_log_proba(self, X):
        X = self._check(X)
        return forward(self.spec_, self.theta_, X)

    def predict_proba(self, X):
        return np.exp(self.predict_log_proba(X))

    def predict(self, X):
        X = self._check(X)
        return predict(self.spec_, self.theta_, X)

    @classmethod
    def from_checkpoint(cls, ckpt, **params):
        est = cls(hidden_dims=ckpt.spec.hidden_dims, num_classes=ckpt.spec.num_classes, **params)
        est.spec_ = ckpt.spec
        est.checkpoint_ = ckpt
        est.classes_ = np.arange(ckpt.spec.num_classes)
        est.n_features_in_ = ckpt.spec.input_dim
        return est


class PartiallyBlindedUnlearner(ClassifierMixin, BaseEstimator):
    """Unlearns one class from a fitted :class:`MLPClassifier`.

    ``fit`` receives only the forget-class examples. The fitted object
    predicts with the unlearned parameters; ``estimator`` is left untouched.
    """

    def __init__(self, estimator=None, alpha=1.0, beta=0.0, gamma=0.0, eta=1e-3, steps=160,
                 fisher_mode="empirical", fisher_form="diagonal", optimizer="adam",
                 batch_size=None, random_state=0):
        self.estimator = estimator
        self.alpha = alpha
        self.beta = beta
        self.gamma = gamma
        self.eta = eta
        self.steps = steps
        self.fisher_mode = fisher_mode
        self.fisher_form = fisher_form
        self.optimizer = optimizer
        self.batch_size = batch_size
        self.random_state = random_state

    def _config(self):
        return PBUConfig(
            alpha=self.alpha, beta=self.beta, gamma=self.gamma, eta=self.eta,
            steps=self.steps, fisher_mode=self.fisher_mode, fisher_form=self.fisher_form,
            optimizer=self.optimizer, batch_size=self.batch_size, seed=self.random_state,
        )

    def fit(self, X_forget, y_forget):
        if self.estimator is None:
            raise ContractError("PartiallyBlindedUnlearner needs a fitted estimator")
        check_is_fitted(self.estimator, "checkpoint_")
        X, y = check_X_y(X_forget, y_forget, dtype=np.float64)
        initial = self.estimator.checkpoint_
        result = run_pbu(initial.spec, initial, Dataset(X, y.astype(np.int64)), self._config())
        self.result_ = result
        self.forget_class_ = int(y[0])
        self.loss_trace_ = np.asarray(result.loss_trace)
        self.unlearned_ = clone(self.estimator)
        fitted = MLPClassifier.from_checkpoint(Checkpoint(initial.spec, result.theta_u))
        for attr in ("spec_", "checkpoint_", "classes_", "n_features_in_"):
            setattr(self.unlearned_, attr, getattr(fitted, attr))
        self.classes_ = self.unlearned_.classes_
        return self

    def predict(self, X):
        check_is_fitted(self, "unlearned_")
        return self.unlearned_.predict(X)

    def predict_proba(self, X):
        check_is_fitted(self, "unlearned_")
        return self.unlearned_.predict_proba(X)
