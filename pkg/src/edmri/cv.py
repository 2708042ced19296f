"""Stratified nested cross-validation with seeded random hyperparameter search.

Outer folds give the test estimates; inside each outer-train split an inner
stratified k-fold scores every sampled configuration by mean validation
balanced accuracy. The winning configuration (first sampled on ties) is
refitted on the outer-train split, with a stratified 20 % slice held out for
early stopping, and evaluated once on the outer test fold.

The candidate configurations are drawn once per run and shared by all outer
folds. All other randomness is derived from ``CVPlan.seed`` per (fold,
trial), so results do not depend on execution order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from edmri.errors import ConfigurationError, DegenerateInputError, LeakageError
from edmri.metrics import auc, balanced_accuracy, f1, roc_curve, threshold
from edmri.models.estimators import ModelConfig, canonical_kind
from edmri.validation import check_binary_labels, check_features

METRICS = ("auc", "balanced_accuracy", "f1")
VALIDATION_FRACTION = 0.2


# --------------------------------------------------------------------------- folds


def stratified_kfold(labels, k: int, seed: int = 0) -> List[np.ndarray]:
    """Split indices into ``k`` disjoint folds preserving class proportions.

    Each class is shuffled and dealt round-robin, continuing the deal where
    the previous class stopped, so per-fold class counts differ from exact
    proportionality by at most one and fold sizes by at most one.
    """
    y = check_binary_labels(labels)
    if k < 2:
        raise ValueError("k must be >= 2")
    counts = [int(np.sum(y == c)) for c in (0, 1)]
    if k > min(counts):
        raise ValueError(f"k={k} exceeds the minority class count {min(counts)}")
    rng = np.random.default_rng(seed)
    folds = [[] for _ in range(k)]
    offset = 0
    for c in (0, 1):
        idx = rng.permutation(np.flatnonzero(y == c))
        for j, i in enumerate(idx):
            folds[(offset + j) % k].append(int(i))
        offset = (offset + idx.size) % k
    return [np.sort(np.asarray(f, dtype=int)) for f in folds]


def stratified_holdout(labels, fraction: float, rng: np.random.Generator):
    """Stratified (train, holdout) split with ``round(fraction * n_c)`` holdout rows per class,
    at least one per class."""
    y = check_binary_labels(labels)
    hold = []
    for c in (0, 1):
        idx = rng.permutation(np.flatnonzero(y == c))
        n_hold = min(max(1, int(round(fraction * idx.size))), idx.size - 1)
        if n_hold < 1:
            raise DegenerateInputError("each class needs at least two rows for an early-stopping holdout")
        hold.extend(idx[:n_hold].tolist())
    hold = np.sort(np.asarray(hold, dtype=int))
    train = np.setdiff1d(np.arange(y.size), hold)
    return train, hold


def derive_seed(*key) -> int:
    return int(np.random.SeedSequence(list(key)).generate_state(1)[0])


# --------------------------------------------------------------------------- search space


@dataclass(frozen=True)
class Param:
    dist: str
    low: float = 0.0
    high: float = 0.0
    choices: tuple = ()

    def sample(self, rng):
        if self.dist == "loguniform":
            return float(math.exp(rng.uniform(math.log(self.low), math.log(self.high))))
        if self.dist == "uniform":
            return float(rng.uniform(self.low, self.high))
        if self.dist == "choice":
            value = self.choices[int(rng.integers(len(self.choices)))]
            return value.item() if hasattr(value, "item") else value
        if self.dist == "fixed":
            return self.choices[0]
        raise ValueError(f"unknown distribution {self.dist!r}")

    def contains(self, value):
        if self.dist in ("loguniform", "uniform"):
            return self.low <= value <= self.high
        return value in self.choices


def loguniform(low, high):
    return Param("loguniform", low, high)


def uniform(low, high):
    return Param("uniform", low, high)


def choice(*values):
    return Param("choice", choices=tuple(values))


def fixed(value):
    return Param("fixed", choices=(value,))


@dataclass(frozen=True)
class SearchSpace:
    kind: str
    params: Dict[str, Param]
    fixed_params: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "kind", canonical_kind(self.kind))


def default_space(kind: str, **fixed_params) -> SearchSpace:
    kind = canonical_kind(kind)
    params = {
        "learning_rate": loguniform(1e-4, 1e-1),
        "lr_decay": uniform(0.95, 1.0),
        "l2": loguniform(1e-6, 1e-1),
        "batch_size": choice(16, 32, 64),
    }
    if kind in ("mlp", "fusion", "mtl"):
        params["hidden"] = choice(8, 16, 32, 64)
    if kind == "fusion":
        params["d_emb"] = choice(8, 16, 32)
    if kind == "mtl":
        params["lambda_reg"] = loguniform(1e-3, 10.0)
    return SearchSpace(kind, params, dict(fixed_params))


def random_search(space: SearchSpace, trials: int, rng: np.random.Generator) -> List[ModelConfig]:
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if not space.params:
        raise ConfigurationError("search space has no parameters")
    configs = []
    for _ in range(trials):
        sampled = {name: p.sample(rng) for name, p in space.params.items()}
        configs.append(ModelConfig(space.kind, {**space.fixed_params, **sampled}))
    return configs


# --------------------------------------------------------------------------- results


@dataclass(frozen=True)
class CVPlan:
    outer_k: int = 5
    inner_k: int = 3
    trials: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.outer_k < 2 or self.inner_k < 2:
            raise ValueError("outer_k and inner_k must be >= 2")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")


@dataclass
class FoldResult:
    fold: int
    test_indices: np.ndarray
    train_indices: np.ndarray
    config: ModelConfig
    metrics: Dict[str, float]
    roc: Dict[str, list]
    n_epochs: int
    best_epoch: int
    trial_scores: List[float] = field(default_factory=list)
    inner_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    model: object = None
    test_scores: Optional[np.ndarray] = None


@dataclass
class CVResult:
    folds: List[FoldResult]
    plan: CVPlan
    kind: str

    @property
    def aggregate(self) -> Dict[str, Dict[str, float]]:
        out = {}
        for name in METRICS:
            values = np.array([f.metrics[name] for f in self.folds])
            out[name] = {
                "mean": float(values.mean()),
                "sd": float(values.std(ddof=1)) if values.size > 1 else 0.0,
            }
        return out

    def metrics_document(self) -> dict:
        return {
            "kind": self.kind,
            "plan": {"outer_k": self.plan.outer_k, "inner_k": self.plan.inner_k,
                     "trials": self.plan.trials, "seed": self.plan.seed,
                     "selection_metric": "balanced_accuracy",
                     "search": "seeded random search"},
            "folds": [
                {
                    "fold": f.fold,
                    "n_train": int(f.train_indices.size),
                    "n_test": int(f.test_indices.size),
                    **{k: float(v) for k, v in f.metrics.items()},
                    "n_epochs": f.n_epochs,
                    "best_epoch": f.best_epoch,
                }
                for f in self.folds
            ],
            "aggregate": self.aggregate,
        }

    def chosen_configs(self) -> list:
        return [{"fold": f.fold, **f.config.to_dict(), "inner_scores": f.trial_scores} for f in self.folds]


# --------------------------------------------------------------------------- harness


def _slice_params(fit_params, idx):
    return {k: np.asarray(v)[idx] for k, v in (fit_params or {}).items()}


def _assert_disjoint(inner, test, where):
    overlap = np.intersect1d(inner, test)
    if overlap.size:
        raise LeakageError(f"{where}: outer-test indices {overlap[:5].tolist()} used in model selection")


def _fit_evaluate(config, X, y, train, test, fit_params, seed, fold):
    """Refit on ``train`` (20 % stratified early-stopping slice) and score ``test``."""
    rng = np.random.default_rng(derive_seed(seed, fold, 1))
    fit_rows, stop_rows = stratified_holdout(y[train], VALIDATION_FRACTION, rng)
    fit_idx, stop_idx = train[fit_rows], train[stop_rows]
    _assert_disjoint(np.r_[fit_idx, stop_idx], test, f"outer fold {fold} refit")
    model = config.build(random_state=derive_seed(seed, fold, 2))
    model.fit(X[fit_idx], y[fit_idx], X[stop_idx], y[stop_idx], **_slice_params(fit_params, fit_idx))
    scores = model.predict_proba(X[test])[:, 1]
    pred = threshold(scores)
    fpr, tpr, thr = roc_curve(scores, y[test])
    metrics = {
        "auc": auc(scores, y[test]),
        "balanced_accuracy": balanced_accuracy(pred, y[test]),
        "f1": f1(pred, y[test]),
    }
    roc = {"fpr": fpr.tolist(), "tpr": tpr.tolist(), "threshold": thr.tolist()}
    return model, metrics, roc, scores


def _inner_score(config, X, y, train, test, inner_folds, fit_params, seed, fold, trial):
    scores = []
    for j, val_rows in enumerate(inner_folds):
        fit_rows = np.setdiff1d(np.arange(train.size), val_rows)
        fit_idx, val_idx = train[fit_rows], train[val_rows]
        _assert_disjoint(np.r_[fit_idx, val_idx], test, f"outer fold {fold} inner fold {j}")
        model = config.build(random_state=derive_seed(seed, fold, 3, trial, j))
        model.fit(X[fit_idx], y[fit_idx], X[val_idx], y[val_idx], **_slice_params(fit_params, fit_idx))
        scores.append(balanced_accuracy(model.predict(X[val_idx]), y[val_idx]))
    return float(np.mean(scores))


def _prepare(X, y, exclude):
    X = check_features(X)
    y = check_binary_labels(y, n=X.shape[0], require_both=True)
    keep = np.ones(y.size, dtype=bool)
    if exclude is not None:
        exclude = np.asarray(exclude, dtype=bool)
        if exclude.shape != y.shape:
            raise ValueError("exclude mask must have one entry per row")
        keep = ~exclude
    return X, y, keep


def nested_cv(X, y, space: SearchSpace, plan: CVPlan = CVPlan(), fit_params=None,
              exclude=None, progress=None) -> CVResult:
    """Run stratified nested cross-validation.

    ``fit_params`` holds per-row arrays passed to ``fit`` (e.g. ``age`` for
    the multitask model), sliced alongside ``X``. Rows flagged in
    ``exclude`` are dropped after the folds are drawn, so the fold structure
    matches the one used for models that see every row.
    """
    X, y, keep = _prepare(X, y, exclude)
    outer = stratified_kfold(y, plan.outer_k, plan.seed)
    # one candidate list shared by every outer fold
    configs = random_search(space, plan.trials, np.random.default_rng(derive_seed(plan.seed, 0)))
    folds = []
    for i, test_all in enumerate(outer):
        test = test_all[keep[test_all]]
        train = np.setdiff1d(np.flatnonzero(keep), test_all)
        inner_used = np.zeros(0, dtype=int)
        trial_scores = []
        if len(configs) > 1:
            inner = stratified_kfold(y[train], plan.inner_k, derive_seed(plan.seed, i, 4))
            inner_used = train
            for t, config in enumerate(configs):
                trial_scores.append(_inner_score(config, X, y, train, test_all, inner, fit_params,
                                                 plan.seed, i, t))
                if progress:
                    progress(i, t)
            best = int(np.argmax(trial_scores))
        else:
            best = 0
        _assert_disjoint(inner_used, test_all, f"outer fold {i}")
        model, metrics, roc, scores = _fit_evaluate(configs[best], X, y, train, test, fit_params, plan.seed, i)
        folds.append(FoldResult(
            fold=i, test_indices=test, train_indices=train, config=configs[best], metrics=metrics,
            roc=roc, n_epochs=model.n_epochs_, best_epoch=model.best_epoch_,
            trial_scores=trial_scores, inner_indices=inner_used, model=model, test_scores=scores,
        ))
    return CVResult(folds, plan, space.kind)


def cross_validate(config: ModelConfig, X, y, k: int = 5, seed: int = 0, fit_params=None,
                   exclude=None) -> CVResult:
    """Plain stratified k-fold evaluation of one fixed configuration."""
    X, y, keep = _prepare(X, y, exclude)
    folds = []
    for i, test_all in enumerate(stratified_kfold(y, k, seed)):
        test = test_all[keep[test_all]]
        train = np.setdiff1d(np.flatnonzero(keep), test_all)
        model, metrics, roc, scores = _fit_evaluate(config, X, y, train, test, fit_params, seed, i)
        folds.append(FoldResult(
            fold=i, test_indices=test, train_indices=train, config=config, metrics=metrics, roc=roc,
            n_epochs=model.n_epochs_, best_epoch=model.best_epoch_, model=model, test_scores=scores,
        ))
    return CVResult(folds, CVPlan(outer_k=k, inner_k=2, trials=1, seed=seed), config.kind)
