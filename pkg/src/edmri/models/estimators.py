"""scikit-learn compatible classifiers trained with a shared protocol.

All models minimize a class-weighted loss (inverse label frequencies) with
Adam, a per-epoch exponentially decaying learning rate
``learning_rate * lr_decay ** epoch`` and early stopping on validation
balanced accuracy. The parameters of the best epoch are kept (ties go to the
earliest epoch). Features are standardized with statistics of the training
rows only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from edmri.errors import ConfigurationError, DivergenceError
from edmri.metrics import balanced_accuracy, threshold
from edmri.models.losses import (
    class_weights,
    sigmoid,
    weighted_ce_logits,
    weighted_hinge,
)
from edmri.models.networks import build_network
from edmri.validation import check_binary_labels, check_features, check_fitted_dims

_BETA1, _BETA2, _ADAM_EPS = 0.9, 0.999, 1e-8


@dataclass
class TrainingHistory:
    train_loss: list = field(default_factory=list)
    val_balanced_accuracy: list = field(default_factory=list)
    learning_rate: list = field(default_factory=list)

    def to_dict(self):
        return {
            "train_loss": [float(v) for v in self.train_loss],
            "val_balanced_accuracy": [float(v) for v in self.val_balanced_accuracy],
            "learning_rate": [float(v) for v in self.learning_rate],
        }


class _NetClassifier(ClassifierMixin, BaseEstimator):
    """Shared fit/predict machinery; subclasses pick a network and a loss."""

    kind = None
    arch = None
    loss = "ce"

    # ----------------------------------------------------------------- hooks

    def _network_config(self, n_features):
        return {"n_features": n_features}

    def _aux_targets(self, fit_params, n):
        return {}

    def _loss(self, outputs, y, weights, aux, idx):
        if self.loss == "hinge":
            value, dz = weighted_hinge(outputs["logit"], y, weights)
        else:
            value, dz = weighted_ce_logits(outputs["logit"], y, weights)
        return value, {"logit": dz}

    # ----------------------------------------------------------------- fit

    def _standardize_fit(self, X):
        self.mean_ = X.mean(axis=0)
        scale = X.std(axis=0)
        self.scale_ = np.where(scale > 0, scale, 1.0)

    def _transform(self, X):
        return (X - self.mean_) / self.scale_

    def fit(self, X, y, X_val=None, y_val=None, **fit_params):
        """Train on ``(X, y)``; early stopping watches ``(X_val, y_val)``.

        Without a validation set the training rows are monitored instead.
        """
        X = check_features(X)
        y = check_binary_labels(y, n=X.shape[0], require_both=True)
        if (X_val is None) != (y_val is None):
            raise ValueError("X_val and y_val must be given together")
        if self.max_epochs < 1 or self.patience < 1:
            raise ConfigurationError("max_epochs and patience must be >= 1")
        self.n_features_in_ = X.shape[1]
        self.classes_ = np.array([0, 1])
        self._standardize_fit(X)
        Xs = self._transform(X)
        if X_val is None:
            Xv, yv = Xs, y
        else:
            Xv = self._transform(check_features(X_val, n_features=X.shape[1]))
            yv = check_binary_labels(y_val, n=Xv.shape[0])
        aux = self._aux_targets(fit_params, X.shape[0])
        weights = class_weights(y)
        self.class_weights_ = weights

        rng = np.random.default_rng(self.random_state)
        self.network_ = build_network(self.arch, **self._network_config(X.shape[1]))
        layout = self.network_.layout
        flat = self.network_.init_params(rng)
        P = layout.views(flat)
        grad = np.zeros_like(flat)
        G = layout.views(grad)
        l2_mask = layout.weight_mask() * self.l2
        m = np.zeros_like(flat)
        v = np.zeros_like(flat)
        step = 0

        history = TrainingHistory()
        best_score, best_epoch, best_flat = -np.inf, 0, flat.copy()
        n = X.shape[0]
        batch = max(1, min(int(self.batch_size), n))
        for epoch in range(1, self.max_epochs + 1):
            lr = self.learning_rate * self.lr_decay ** (epoch - 1)
            order = rng.permutation(n)
            total = 0.0
            for start in range(0, n, batch):
                idx = order[start:start + batch]
                outputs, cache = self.network_.forward(P, Xs[idx])
                value, grads_out = self._loss(outputs, y[idx], weights, aux, idx)
                grad[:] = 0.0
                self.network_.backward(P, cache, grads_out, G)
                grad += l2_mask * flat
                step += 1
                m *= _BETA1
                m += (1 - _BETA1) * grad
                v *= _BETA2
                v += (1 - _BETA2) * grad * grad
                mhat = m / (1 - _BETA1 ** step)
                vhat = v / (1 - _BETA2 ** step)
                flat -= lr * mhat / (np.sqrt(vhat) + _ADAM_EPS)
                total += value * idx.size
            epoch_loss = total / n + 0.5 * float(np.sum(l2_mask * flat * flat))
            if not np.isfinite(epoch_loss) or not np.isfinite(flat).all():
                raise DivergenceError(epoch)
            score = balanced_accuracy(threshold(self._proba(P, Xv)), yv) if len(np.unique(yv)) == 2 else 0.5
            history.train_loss.append(epoch_loss)
            history.val_balanced_accuracy.append(score)
            history.learning_rate.append(lr)
            if score > best_score:
                best_score, best_epoch = score, epoch
                best_flat[:] = flat
            elif epoch - best_epoch >= self.patience:
                break
        self.params_flat_ = best_flat
        self.params_ = layout.views(best_flat)
        self.history_ = history
        self.best_epoch_ = best_epoch
        self.n_epochs_ = len(history.train_loss)
        self.best_score_ = float(best_score)
        return self

    # ----------------------------------------------------------------- predict

    def _outputs(self, P, Xs):
        return self.network_.forward(P, Xs)[0]

    def _proba(self, P, Xs):
        return sigmoid(self._outputs(P, Xs)["logit"])

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted")

    def decision_function(self, X):
        self._check_fitted()
        X = check_fitted_dims(X, self.n_features_in_)
        return self._outputs(self.params_, self._transform(X))["logit"]

    def predict_proba(self, X):
        p1 = sigmoid(self.decision_function(X))
        return np.column_stack([1.0 - p1, p1])

    def predict(self, X):
        return threshold(self.predict_proba(X)[:, 1])


class LogisticRegressionClassifier(_NetClassifier):
    kind = "logreg"
    arch = "linear"

    def __init__(self, learning_rate=1e-2, lr_decay=0.99, l2=1e-4, batch_size=32,
                 max_epochs=400, patience=50, random_state=0):
        self.learning_rate = learning_rate
        self.lr_decay = lr_decay
        self.l2 = l2
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.random_state = random_state


class LinearSVMClassifier(LogisticRegressionClassifier):
    """Linear SVM on the class-weighted hinge loss.

    ``predict_proba`` passes the margin through a logistic link. It is rank
    preserving, not calibrated.
    """

    kind = "linear_svm"
    loss = "hinge"


class MLPClassifier(_NetClassifier):
    kind = "mlp"
    arch = "mlp"

    def __init__(self, hidden=16, learning_rate=1e-2, lr_decay=0.99, l2=1e-4, batch_size=32,
                 max_epochs=400, patience=50, random_state=0):
        self.hidden = hidden
        self.learning_rate = learning_rate
        self.lr_decay = lr_decay
        self.l2 = l2
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.random_state = random_state

    def _network_config(self, n_features):
        return {"n_features": n_features, "hidden": self.hidden}


class FusionClassifier(_NetClassifier):
    """Intermediate fusion; the first ``n_imaging`` columns of ``X`` are the
    imaging features, the remainder clinical."""

    kind = "fusion"
    arch = "fusion"

    def __init__(self, n_imaging=12, hidden=16, d_emb=16, learning_rate=1e-2, lr_decay=0.99,
                 l2=1e-4, batch_size=32, max_epochs=400, patience=50, random_state=0):
        self.n_imaging = n_imaging
        self.hidden = hidden
        self.d_emb = d_emb
        self.learning_rate = learning_rate
        self.lr_decay = lr_decay
        self.l2 = l2
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.random_state = random_state

    def _network_config(self, n_features):
        if not 0 < self.n_imaging < n_features:
            raise ConfigurationError(
                f"n_imaging={self.n_imaging} must leave at least one clinical column of {n_features}"
            )
        return {"n_imaging": self.n_imaging, "n_clinical": n_features - self.n_imaging,
                "hidden": self.hidden, "d_emb": self.d_emb}


class MultitaskClassifier(_NetClassifier):
    """Outcome classifier regularized by an auxiliary age-regression head.

    Pass the ages of the training rows as ``fit(X, y, age=...)``. Ages are
    standardized with the training mean and SD before the squared error is
    taken, and only the regression term is scaled (by ``lambda_reg``).
    """

    kind = "mtl"
    arch = "mtl"

    def __init__(self, hidden=16, lambda_reg=1.0, learning_rate=1e-2, lr_decay=0.99, l2=1e-4,
                 batch_size=32, max_epochs=400, patience=50, random_state=0):
        self.hidden = hidden
        self.lambda_reg = lambda_reg
        self.learning_rate = learning_rate
        self.lr_decay = lr_decay
        self.l2 = l2
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.random_state = random_state

    def _network_config(self, n_features):
        return {"n_features": n_features, "hidden": self.hidden}

    def _aux_targets(self, fit_params, n):
        if self.lambda_reg < 0:
            raise ConfigurationError("lambda_reg must be >= 0")
        age = fit_params.get("age")
        if age is None:
            raise ConfigurationError("MultitaskClassifier.fit needs age=... for the auxiliary task")
        age = np.asarray(age, dtype=float).ravel()
        if age.size != n or not np.isfinite(age).all():
            raise ValueError("age must be finite with one value per training row")
        self.age_mean_ = float(age.mean())
        sd = float(age.std())
        self.age_scale_ = sd if sd > 0 else 1.0
        return {"age": (age - self.age_mean_) / self.age_scale_}

    def _loss(self, outputs, y, weights, aux, idx):
        ce, dz = weighted_ce_logits(outputs["logit"], y, weights)
        resid = outputs["age"] - aux["age"][idx]
        reg = float(np.mean(resid ** 2))
        return ce + self.lambda_reg * reg, {
            "logit": dz,
            "age": self.lambda_reg * 2.0 * resid / resid.size,
        }

    def predict_age(self, X):
        self._check_fitted()
        X = check_fitted_dims(X, self.n_features_in_)
        age_std = self._outputs(self.params_, self._transform(X))["age"]
        return age_std * self.age_scale_ + self.age_mean_


MODEL_KINDS = {
    "logreg": LogisticRegressionClassifier,
    "linear_svm": LinearSVMClassifier,
    "svm": LinearSVMClassifier,
    "mlp": MLPClassifier,
    "fusion": FusionClassifier,
    "mtl": MultitaskClassifier,
}


def canonical_kind(kind: str) -> str:
    if kind not in MODEL_KINDS:
        raise ConfigurationError(f"unknown model kind {kind!r}; expected one of {sorted(MODEL_KINDS)}")
    return MODEL_KINDS[kind].kind


@dataclass(frozen=True)
class ModelConfig:
    """A model kind plus its hyperparameters; ``build`` returns an unfitted estimator."""

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "kind", canonical_kind(self.kind))

    def build(self, **overrides):
        params = {**self.params, **overrides}
        return MODEL_KINDS[self.kind](**params)

    def to_dict(self):
        return {"kind": self.kind, "params": dict(self.params)}


def fit_model(config: ModelConfig, X_train, y_train, X_val=None, y_val=None, **fit_params):
    return config.build().fit(X_train, y_train, X_val, y_val, **fit_params)
