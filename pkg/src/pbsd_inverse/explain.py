"""Post-hoc explanations of a fitted surrogate: Shapley values and ALE curves.

Predictors are plain callables mapping an ``(n, p)`` array to ``(n,)``
predictions; an :class:`~pbsd_inverse.svr.SvrModel` qualifies directly.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .dataset import FeatureTable
from .errors import ConstantFeature, EmptyBackground, TooManyFeatures

Predictor = Callable[[np.ndarray], np.ndarray]

MAX_EXACT_FEATURES = 15


@dataclass(frozen=True)
class ShapleyAttribution:
    contributions: np.ndarray
    baseline: float
    instance_prediction: float
    std_errors: np.ndarray | None = None

    @property
    def efficiency_gap(self) -> float:
        return abs(self.baseline + float(self.contributions.sum()) - self.instance_prediction)


def _as_rows(data) -> np.ndarray:
    rows = data.rows if isinstance(data, FeatureTable) else np.asarray(data, dtype=float)
    return np.atleast_2d(rows)


def _batched(model: Predictor, x: np.ndarray, chunk: int = 200_000) -> np.ndarray:
    return np.concatenate([np.asarray(model(x[i:i + chunk]), dtype=float).ravel()
                           for i in range(0, x.shape[0], chunk)])


def shapley_exact(model: Predictor, instance, background) -> ShapleyAttribution:
    """Exact interventional Shapley values by enumerating all 2^p coalitions.

    v(S) is the background mean of predictions with features in S taken from
    the instance and the rest from each background row.
    """
    x = np.asarray(instance, dtype=float).ravel()
    bg = _as_rows(background)
    if bg.shape[0] == 0:
        raise EmptyBackground("background set is empty")
    p = x.size
    if p > MAX_EXACT_FEATURES:
        raise TooManyFeatures(f"exact Shapley enumerates 2^p coalitions; p={p} > {MAX_EXACT_FEATURES}")

    masks = np.array(list(itertools.product([False, True], repeat=p)))[:, ::-1]
    # masks[s, j] is bit j of s
    n_bg = bg.shape[0]
    step = max(1, 200_000 // n_bg)
    values = np.empty(len(masks))
    for start in range(0, len(masks), step):
        m = masks[start:start + step]
        stacked = np.where(m[:, None, :], x[None, None, :], bg[None, :, :]).reshape(-1, p)
        values[start:start + step] = _batched(model, stacked).reshape(len(m), n_bg).mean(axis=1)

    sizes = masks.sum(axis=1)
    weight = np.array([math.factorial(k) * math.factorial(p - k - 1) / math.factorial(p)
                       if k < p else 0.0 for k in range(p + 1)])
    phi = np.zeros(p)
    codes = np.arange(len(masks))
    for j in range(p):
        without = codes[~masks[:, j]]
        with_j = without | (1 << j)
        phi[j] = np.sum(weight[sizes[without]] * (values[with_j] - values[without]))
    return ShapleyAttribution(phi, float(values[0]), float(values[-1]))


def shapley_sampled(model: Predictor, instance, background, n_permutations: int = 1000,
                    seed: int = 0) -> ShapleyAttribution:
    """Permutation-sampling Shapley estimate.

    Each sample draws a feature order and one background row, then walks the
    order switching features from background to instance values. Marginal
    contributions are unbiased for the exact values; standard errors are the
    per-feature sample std over sqrt(n_permutations).
    """
    if n_permutations < 1:
        raise ValueError("n_permutations must be >= 1")
    x = np.asarray(instance, dtype=float).ravel()
    bg = _as_rows(background)
    if bg.shape[0] == 0:
        raise EmptyBackground("background set is empty")
    p = x.size
    rng = np.random.default_rng(seed)
    perms = np.argsort(rng.random((n_permutations, p)), axis=1)
    rows = rng.integers(bg.shape[0], size=n_permutations)

    # path[m, s] = point after switching the first s features of permutation m
    path = np.repeat(bg[rows][:, None, :], p + 1, axis=1)
    for step in range(p):
        feat = perms[:, step]
        path[np.arange(n_permutations)[:, None], np.arange(step + 1, p + 1)[None, :], feat[:, None]] = x[feat][:, None]
    preds = _batched(model, path.reshape(-1, p)).reshape(n_permutations, p + 1)
    marg = np.empty((n_permutations, p))
    marg[np.arange(n_permutations)[:, None], perms] = np.diff(preds, axis=1)

    phi = marg.mean(axis=0)
    se = marg.std(axis=0, ddof=1) / math.sqrt(n_permutations) if n_permutations > 1 else np.full(p, np.inf)
    baseline = float(_batched(model, bg).mean())
    return ShapleyAttribution(phi, baseline, float(_batched(model, x[None, :])[0]), se)


def shapley_summary(model: Predictor, instances, background, names: Sequence[str],
                    exact_limit: int = 10, n_permutations: int = 500, seed: int = 0):
    """Mean |contribution| per feature over ``instances``, sorted descending."""
    inst = _as_rows(instances)
    p = inst.shape[1]
    total = np.zeros(p)
    for k, row in enumerate(inst):
        if p <= exact_limit:
            attr = shapley_exact(model, row, background)
        else:
            attr = shapley_sampled(model, row, background, n_permutations, seed + k)
        total += np.abs(attr.contributions)
    mean_abs = total / inst.shape[0]
    order = np.argsort(-mean_abs, kind="stable")
    return [(names[i], float(mean_abs[i])) for i in order]


@dataclass(frozen=True)
class AleCurve:
    feature: int
    bin_edges: np.ndarray
    centered_effect: np.ndarray
    counts: np.ndarray

    def __call__(self, values) -> np.ndarray:
        return np.interp(values, self.bin_edges, self.centered_effect)


def ale_curve(model: Predictor, table, feature: int, n_bins: int = 20) -> AleCurve:
    """First-order accumulated local effects over quantile bins.

    Rows in bin k (upper edge inclusive, the first bin also takes its lower
    edge) are moved to both edges of the bin with the other features held; the
    mean prediction difference is the local effect. Effects accumulate from
    the lowest edge and are shifted so their interpolant averages zero over
    the data.
    """
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2")
    x = _as_rows(table)
    values = x[:, feature]
    if np.all(values == values[0]):
        raise ConstantFeature(f"feature {feature} is constant")
    edges = np.unique(np.quantile(values, np.linspace(0.0, 1.0, n_bins + 1)))
    bins = np.clip(np.searchsorted(edges, values, side="left"), 1, edges.size - 1)

    lower = x.copy()
    upper = x.copy()
    lower[:, feature] = edges[bins - 1]
    upper[:, feature] = edges[bins]
    diff = _batched(model, upper) - _batched(model, lower)

    n_int = edges.size - 1
    counts = np.bincount(bins - 1, minlength=n_int)
    sums = np.bincount(bins - 1, weights=diff, minlength=n_int)
    local = np.divide(sums, counts, out=np.zeros(n_int), where=counts > 0)
    effect = np.concatenate([[0.0], np.cumsum(local)])
    effect -= np.interp(values, edges, effect).mean()
    return AleCurve(feature, edges, effect, counts)
