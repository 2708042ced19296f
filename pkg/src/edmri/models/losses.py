"""Class weighting and the training losses, each with its analytic gradient."""

from __future__ import annotations

import numpy as np

from edmri.errors import DegenerateInputError

EPS = 1e-7


def class_weights(labels):
    """Inverse-frequency weights ``w_c = n / (2 n_c)``; balanced labels give (1, 1)."""
    y = np.asarray(labels).astype(int).ravel()
    n = y.size
    n1 = int(np.count_nonzero(y == 1))
    n0 = int(np.count_nonzero(y == 0))
    if n0 + n1 != n:
        raise ValueError("labels must be binary 0/1")
    if n0 == 0 or n1 == 0:
        raise DegenerateInputError("class weights need both classes present")
    return n / (2.0 * n0), n / (2.0 * n1)


def _sample_weights(labels, weights):
    y = np.asarray(labels).astype(int)
    w0, w1 = weights
    return np.where(y == 1, w1, w0).astype(float)


def _check_lengths(*arrays):
    n = len(arrays[0])
    if any(len(a) != n for a in arrays[1:]):
        raise ValueError(f"length mismatch: {[len(a) for a in arrays]}")


def weighted_ce(probabilities, labels, weights=(1.0, 1.0)) -> float:
    """Mean of ``-w_y log p(y)`` with probabilities clamped to [eps, 1 - eps]."""
    p = np.asarray(probabilities, dtype=float)
    y = np.asarray(labels)
    _check_lengths(p, y)
    p = np.clip(p, EPS, 1.0 - EPS)
    sw = _sample_weights(y, weights)
    return float(np.mean(-sw * np.where(y == 1, np.log(p), np.log1p(-p))))


def weighted_ce_prob_grad(probabilities, labels, weights=(1.0, 1.0)):
    """Gradient of :func:`weighted_ce` with respect to the (unclamped interior) probabilities."""
    p = np.clip(np.asarray(probabilities, dtype=float), EPS, 1.0 - EPS)
    y = np.asarray(labels)
    sw = _sample_weights(y, weights)
    return -sw * np.where(y == 1, 1.0 / p, -1.0 / (1.0 - p)) / p.size


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def weighted_ce_logits(logits, labels, weights=(1.0, 1.0)):
    """Weighted cross-entropy computed stably from logits; returns ``(loss, dloss/dlogits)``."""
    z = np.asarray(logits, dtype=float)
    y = np.asarray(labels).astype(float)
    _check_lengths(z, y)
    sw = _sample_weights(y, weights)
    # -log sigmoid(z) = softplus(-z); -log(1 - sigmoid(z)) = softplus(z)
    nll = np.logaddexp(0.0, z) - y * z
    n = z.size
    return float(np.sum(sw * nll) / n), sw * (sigmoid(z) - y) / n


def weighted_hinge(margins, labels, weights=(1.0, 1.0)):
    """Class-weighted hinge loss on signed margins; returns ``(loss, subgradient)``."""
    z = np.asarray(margins, dtype=float)
    y = np.asarray(labels)
    _check_lengths(z, y)
    s = np.where(y == 1, 1.0, -1.0)
    sw = _sample_weights(y, weights)
    slack = 1.0 - s * z
    active = slack > 0
    n = z.size
    return float(np.sum(sw * np.where(active, slack, 0.0)) / n), np.where(active, -sw * s, 0.0) / n


def mse(pred, target):
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    _check_lengths(pred, target)
    resid = pred - target
    return float(np.mean(resid ** 2)), 2.0 * resid / resid.size


def mtl_loss(class_probs, age_pred, labels, ages, weights=(1.0, 1.0), lambda_reg=1.0) -> float:
    """Weighted cross-entropy plus ``lambda_reg`` times the age MSE.

    ``age_pred`` and ``ages`` are expected on the standardized age scale.
    """
    if lambda_reg < 0:
        raise ValueError("lambda_reg must be >= 0")
    _check_lengths(class_probs, age_pred, labels, ages)
    ce = weighted_ce(class_probs, labels, weights)
    if lambda_reg == 0:
        return ce
    return ce + lambda_reg * mse(age_pred, ages)[0]


def mtl_loss_logits(logits, age_pred, labels, ages, weights=(1.0, 1.0), lambda_reg=1.0):
    """Returns ``(loss, dloss/dlogits, dloss/dage_pred)``."""
    if lambda_reg < 0:
        raise ValueError("lambda_reg must be >= 0")
    ce, dz = weighted_ce_logits(logits, labels, weights)
    reg, da = mse(age_pred, ages)
    return ce + lambda_reg * reg, dz, lambda_reg * da
