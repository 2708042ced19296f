"""Interventional Shapley attributions and per-modality contribution shares.

The value of a coalition ``S`` for an instance ``x`` is the mean model output
over a background set after overwriting the columns in ``S`` with ``x``:

    v(S) = mean_b f(x_S, b_{~S})

so ``v(empty)`` is the mean background prediction and ``v(all) = f(x)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from edmri.errors import DegenerateInputError
from edmri.validation import check_features

MAX_EXACT_FEATURES = 15
_ROW_CHUNK = 200_000


@dataclass
class ShapleyReport:
    values: np.ndarray
    base_value: float
    prediction: float
    method: str
    feature_names: Optional[List[str]] = None
    n_permutations: int = 0
    efficiency_residual: float = 0.0
    residual_redistributed: bool = False

    def to_dict(self):
        return {
            "values": [float(v) for v in self.values],
            "base_value": float(self.base_value),
            "prediction": float(self.prediction),
            "method": self.method,
            "feature_names": self.feature_names,
            "n_permutations": self.n_permutations,
            "efficiency_residual": float(self.efficiency_residual),
            "residual_redistributed": self.residual_redistributed,
        }


def _prepare(x, background):
    x = np.asarray(x, dtype=float).ravel()
    background = check_features(background)
    if background.shape[1] != x.size:
        raise ValueError(f"instance has {x.size} features, background has {background.shape[1]}")
    return x, background


def _evaluate(predict, rows):
    out = np.empty(rows.shape[0])
    for start in range(0, rows.shape[0], _ROW_CHUNK):
        out[start:start + _ROW_CHUNK] = np.asarray(predict(rows[start:start + _ROW_CHUNK]), dtype=float).ravel()
    return out


def coalition_values(predict: Callable, x, background) -> np.ndarray:
    """``v(S)`` for every coalition, indexed by bitmask (bit ``i`` = feature ``i``)."""
    x, background = _prepare(x, background)
    d, n_bg = x.size, background.shape[0]
    masks = np.arange(2 ** d)
    bits = ((masks[:, None] >> np.arange(d)) & 1).astype(bool)
    values = np.empty(masks.size)
    per_chunk = max(1, _ROW_CHUNK // n_bg)
    for start in range(0, masks.size, per_chunk):
        sel = bits[start:start + per_chunk]
        rows = np.where(sel[:, None, :], x[None, None, :], background[None, :, :])
        values[start:start + sel.shape[0]] = _evaluate(predict, rows.reshape(-1, d)).reshape(sel.shape[0], n_bg).mean(axis=1)
    return values


def shapley_exact(predict: Callable, x, background, feature_names=None) -> ShapleyReport:
    """Exact Shapley values by enumerating all ``2^d`` coalitions (``d <= 15``)."""
    x, background = _prepare(x, background)
    d = x.size
    if d > MAX_EXACT_FEATURES:
        raise ValueError(f"exact enumeration supports at most {MAX_EXACT_FEATURES} features, got {d}; "
                         "use shapley_sampled")
    v = coalition_values(predict, x, background)
    masks = np.arange(2 ** d)
    size = np.array([bin(m).count("1") for m in masks])
    weight_by_size = np.array([math.factorial(s) * math.factorial(d - s - 1) / math.factorial(d)
                               for s in range(d)])
    phi = np.empty(d)
    for i in range(d):
        without = masks[(masks >> i) & 1 == 0]
        phi[i] = np.sum(weight_by_size[size[without]] * (v[without | (1 << i)] - v[without]))
    base, pred = float(v[0]), float(v[-1])
    return ShapleyReport(phi, base, pred, "exact", _names(feature_names, d),
                         efficiency_residual=float(pred - base - phi.sum()))


def shapley_sampled(predict: Callable, x, background, n_permutations: int = 2000,
                    rng: Optional[np.random.Generator] = None, feature_names=None,
                    redistribute: bool = True, chunk: int = 1000) -> ShapleyReport:
    """Monte Carlo Shapley values from random feature orderings.

    Each ordering is paired with its reverse (antithetic sampling) and one
    background row drawn at random. The marginal contributions of an ordering
    telescope to ``f(x) - f(b)``, so the raw estimate is efficient only with
    respect to the sampled background rows; the remaining gap to the full
    background mean is spread over features in proportion to ``|phi|`` when
    ``redistribute`` is true and always reported.
    """
    x, background = _prepare(x, background)
    if n_permutations < 1:
        raise ValueError("n_permutations must be >= 1")
    rng = np.random.default_rng(0) if rng is None else rng
    d = x.size
    base = float(_evaluate(predict, background).mean())
    pred = float(_evaluate(predict, x[None, :])[0])
    n_pairs = (n_permutations + 1) // 2
    total = np.zeros(d)
    count = 0
    for start in range(0, n_pairs, chunk):
        m = min(chunk, n_pairs - start)
        perms = np.argsort(rng.random((m, d)), axis=1)
        perms = np.concatenate([perms, perms[:, ::-1]])
        bg = background[rng.integers(background.shape[0], size=m)]
        bg = np.concatenate([bg, bg])
        # rank[p, j] = position of feature j in ordering p
        rank = np.argsort(perms, axis=1)
        steps = np.arange(d + 1)
        use_x = rank[:, None, :] < steps[None, :, None]
        rows = np.where(use_x, x[None, None, :], bg[:, None, :])
        out = _evaluate(predict, rows.reshape(-1, d)).reshape(2 * m, d + 1)
        marginal = np.diff(out, axis=1)
        contrib = np.zeros((2 * m, d))
        np.put_along_axis(contrib, perms, marginal, axis=1)
        total += contrib.sum(axis=0)
        count += 2 * m
    phi = total / count
    residual = pred - base - phi.sum()
    redistributed = False
    if redistribute and residual != 0.0:
        mag = np.abs(phi)
        share = mag / mag.sum() if mag.sum() > 0 else np.full(d, 1.0 / d)
        phi = phi + residual * share
        redistributed = True
    return ShapleyReport(phi, base, pred, "sampled", _names(feature_names, d), n_permutations=count,
                         efficiency_residual=float(residual), residual_redistributed=redistributed)


def _names(names, d):
    if names is None:
        return None
    names = list(names)
    if len(names) != d:
        raise ValueError(f"{len(names)} feature names for {d} features")
    return names


def explain_instance(predict, x, background, method="auto", **kwargs) -> ShapleyReport:
    d = np.asarray(x).size
    if method == "auto":
        method = "exact" if d <= MAX_EXACT_FEATURES else "sampled"
    if method == "exact":
        return shapley_exact(predict, x, background, feature_names=kwargs.get("feature_names"))
    if method == "sampled":
        return shapley_sampled(predict, x, background, **kwargs)
    raise ValueError(f"unknown method {method!r}")


# --------------------------------------------------------------------------- modality shares


def modality_share(values, partition: Dict[str, Sequence[int]], signed: bool = False) -> Dict[str, float]:
    """Fraction of total attribution carried by each feature group.

    The default uses ``sum |phi|`` per group; ``signed=True`` uses plain sums,
    normalized by the absolute signed total.
    """
    phi = np.asarray(values, dtype=float).ravel()
    _check_partition(partition, phi.size)
    per_group = {name: (phi[list(idx)].sum() if signed else np.abs(phi[list(idx)]).sum())
                 for name, idx in partition.items()}
    total = sum(per_group.values())
    denom = abs(total) if signed else total
    if denom == 0:
        raise DegenerateInputError("all attributions are zero; modality shares are undefined")
    return {name: float(v / denom) for name, v in per_group.items()}


def _check_partition(partition, d):
    seen = [int(i) for idx in partition.values() for i in idx]
    if sorted(seen) != list(range(d)):
        raise ValueError("partition must assign every feature index to exactly one group")


@dataclass
class AttributionSummary:
    feature_names: List[str]
    mean: np.ndarray
    sd: np.ndarray
    mean_abs: np.ndarray
    shares: Dict[str, Dict[str, float]] = field(default_factory=dict)
    n_instances: int = 0

    def to_dict(self):
        return {
            "n_instances": self.n_instances,
            "features": [
                {"name": n, "mean": float(m), "sd": float(s), "mean_abs": float(a), "text": format_mean_sd(m, s)}
                for n, m, s, a in zip(self.feature_names, self.mean, self.sd, self.mean_abs)
            ],
            "modality_share": self.shares,
        }


def format_mean_sd(mean, sd, digits=5) -> str:
    return f"{mean:.{digits}f} ± {sd:.{digits}f}"


def summarize(reports: Sequence[ShapleyReport], partition=None, feature_names=None,
              signed: bool = False) -> AttributionSummary:
    """Mean and SD of per-instance attributions; optionally mean/SD of modality shares."""
    if not reports:
        raise ValueError("no reports to summarize")
    phi = np.stack([r.values for r in reports])
    names = feature_names or reports[0].feature_names or [f"f{i}" for i in range(phi.shape[1])]
    sd = phi.std(axis=0, ddof=1) if phi.shape[0] > 1 else np.zeros(phi.shape[1])
    summary = AttributionSummary(list(names), phi.mean(axis=0), sd, np.abs(phi).mean(axis=0),
                                 n_instances=phi.shape[0])
    if partition:
        rows = [modality_share(r.values, partition, signed=signed) for r in reports]
        for name in partition:
            vals = np.array([row[name] for row in rows])
            summary.shares[name] = {
                "mean": float(vals.mean()),
                "sd": float(vals.std(ddof=1)) if vals.size > 1 else 0.0,
            }
    return summary
