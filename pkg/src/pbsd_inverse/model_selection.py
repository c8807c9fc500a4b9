"""Cross-validation, recursive feature elimination and hyperparameter search."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.spatial.distance import pdist
from scipy.special import ndtr

from .dataset import FeatureTable
from .errors import EmptyBudget, NoConvergence, TooFewFeatures, TooFewRows
from .svr import (
    KernelSpec,
    SvrHyperparams,
    adjusted_r2,
    normalized_mae,
    normalized_rmse,
    train_svr,
)

METRICS = ("normalized_rmse", "normalized_mae", "adjusted_r2")
LOWER_IS_BETTER = {"normalized_rmse": True, "normalized_mae": True, "adjusted_r2": False}


@dataclass(frozen=True)
class CvSpec:
    folds: int = 3
    seed: int = 0
    metric: str = "normalized_rmse"

    def __post_init__(self):
        if self.folds < 2:
            raise ValueError("need at least two folds")
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")


def fold_indices(n: int, folds: int, seed: int) -> list[np.ndarray]:
    """Seeded partition of range(n) into ``folds`` near-equal sorted parts."""
    if n < folds:
        raise TooFewRows(f"{n} rows cannot fill {folds} folds")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(part) for part in np.array_split(perm, folds)]


def score(metric: str, y, y_hat, p: int) -> float:
    if metric == "normalized_rmse":
        return normalized_rmse(y, y_hat)
    if metric == "normalized_mae":
        return normalized_mae(y, y_hat)
    return adjusted_r2(y, y_hat, p)


def as_loss(metric: str, value: float) -> float:
    """Map a metric value to lower-is-better."""
    return value if LOWER_IS_BETTER[metric] else -value


def cv_fold_scores(table: FeatureTable, hp: SvrHyperparams, cv: CvSpec,
                   tol: float = 1e-3, max_iter: int = 100_000) -> list[float]:
    scores = []
    for fold in fold_indices(table.n, cv.folds, cv.seed):
        mask = np.ones(table.n, dtype=bool)
        mask[fold] = False
        model = train_svr(table.take(np.flatnonzero(mask)), hp, tol=tol, max_iter=max_iter)
        held = table.take(fold)
        scores.append(score(cv.metric, held.target, model.predict(held), table.p))
    return scores


def cross_validate(table: FeatureTable, hp: SvrHyperparams, cv: CvSpec = CvSpec(),
                   tol: float = 1e-3, max_iter: int = 100_000) -> float:
    """Mean held-out metric over the folds."""
    return float(np.mean(cv_fold_scores(table, hp, cv, tol, max_iter)))


@dataclass(frozen=True)
class FeatureRanking:
    elimination_order: tuple[int, ...]
    cv_score_at_k: dict[int, float]
    metric: str = "normalized_rmse"
    names: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "elimination_order": list(self.elimination_order),
            "eliminated_names": [self.names[i] for i in self.elimination_order] if self.names else [],
            "cv_score_at_k": {str(k): v for k, v in sorted(self.cv_score_at_k.items())},
        }

    def retained(self, k: int) -> list[int]:
        """Feature indices kept when ``k`` remain, in original column order."""
        return sorted(self.elimination_order[len(self.elimination_order) - k:])


def rfe_rank(table: FeatureTable, hp: SvrHyperparams, cv: CvSpec = CvSpec(),
             scorer: Optional[Callable[[FeatureTable], float]] = None) -> FeatureRanking:
    """Wrapper-style recursive feature elimination.

    Each round drops the feature whose removal gives the best CV score. Ties
    keep the lower-index feature, i.e. the higher index is dropped.
    """
    if table.p < 2:
        raise TooFewFeatures("feature elimination needs at least two features")
    if scorer is None:
        def scorer(t):
            return cross_validate(t, hp, cv)

    def loss_of(idx):
        return as_loss(cv.metric, scorer(table.select([table.names[i] for i in idx])))

    remaining = list(range(table.p))
    current = loss_of(remaining)
    scores = {table.p: as_loss(cv.metric, current)}
    order = []
    while len(remaining) > 1:
        best_loss, drop = math.inf, None
        for j in remaining:  # ascending, so "<=" drops the higher index on ties
            trial = loss_of([i for i in remaining if i != j])
            if trial <= best_loss or drop is None:
                best_loss, drop = trial, j
        remaining.remove(drop)
        order.append(drop)
        scores[len(remaining)] = as_loss(cv.metric, best_loss)
    order.append(remaining[0])
    return FeatureRanking(tuple(order), scores, cv.metric, tuple(table.names))


def select_k(ranking: FeatureRanking, tolerance: float = 0.01) -> int:
    """Smallest feature count whose CV score is within ``tolerance`` of the best."""
    losses = {k: as_loss(ranking.metric, v) for k, v in ranking.cv_score_at_k.items()}
    best = min(losses.values())
    return min(k for k, v in losses.items() if v <= best + tolerance)


@dataclass(frozen=True)
class SearchSpace:
    C: tuple[float, float] = (0.1, 100.0)
    epsilon: tuple[float, float] = (0.01, 0.5)
    gamma: tuple[float, float] = (0.01, 2.0)

    def __post_init__(self):
        for lo, hi in (self.C, self.epsilon, self.gamma):
            if not 0 < lo < hi:
                raise ValueError("search ranges need 0 < lo < hi")

    @property
    def log_bounds(self) -> np.ndarray:
        return np.log(np.array([self.C, self.epsilon, self.gamma], dtype=float))

    def decode(self, u) -> SvrHyperparams:
        c, e, g = np.exp(np.asarray(u, dtype=float))
        return SvrHyperparams(float(c), float(e), KernelSpec("rbf", float(g)))


@dataclass
class Evaluation:
    log_params: np.ndarray
    loss: float
    phase: str
    fold_scores: list = field(default_factory=list)


@dataclass
class SearchResult:
    best_log_params: np.ndarray
    best_loss: float
    history: list[Evaluation]

    @property
    def best_random_loss(self) -> float:
        return min(e.loss for e in self.history if e.phase == "random")


def _gp_posterior(x_obs, y_obs, x_new, length, noise=1e-6):
    """Zero-mean GP, unit-variance squared-exponential kernel, on standardized y."""
    def sqexp(a, b):
        d2 = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1)
        return np.exp(-0.5 * d2 / length**2)

    K = sqexp(x_obs, x_obs) + noise * np.eye(len(x_obs))
    factor = cho_factor(K, lower=True)
    ks = sqexp(x_new, x_obs)
    mean = ks @ cho_solve(factor, y_obs)
    v = cho_solve(factor, ks.T)
    var = np.clip(1.0 - np.sum(ks * v.T, axis=1), 1e-12, None)
    return mean, np.sqrt(var)


def expected_improvement(mean, sd, best):
    """EI for minimization."""
    z = (best - mean) / sd
    return (best - mean) * ndtr(z) + sd * np.exp(-0.5 * z**2) / math.sqrt(2 * math.pi)


def hybrid_search(objective: Callable[[np.ndarray], float], bounds: np.ndarray, n_random: int,
                  n_bayes: int, seed: int, n_candidates: int = 256) -> SearchResult:
    """Random search in a box, then GP/expected-improvement rounds seeded with it.

    ``objective`` maps a point to a loss (lower is better) or to a
    ``(loss, fold_scores)`` pair. Non-finite losses stay in the history and
    enter the GP fit at the worst finite loss, steering proposals away.
    """
    if n_random < 1 or n_bayes < 0:
        raise EmptyBudget("need n_random >= 1 and n_bayes >= 0")
    bounds = np.asarray(bounds, dtype=float)
    lo, hi = bounds[:, 0], bounds[:, 1]
    rng = np.random.default_rng(seed)
    history: list[Evaluation] = []

    def run(u, phase):
        out = objective(u)
        loss, folds = out if isinstance(out, tuple) else (out, [])
        history.append(Evaluation(np.array(u), float(loss), phase, list(folds)))

    for _ in range(n_random):
        run(lo + (hi - lo) * rng.random(lo.size), "random")

    for _ in range(n_bayes):
        finite = [e.loss for e in history if np.isfinite(e.loss)]
        cand = lo + (hi - lo) * rng.random((n_candidates, lo.size))
        if len(finite) < 2:
            run(cand[0], "bayes")
            continue
        # GP works on the unit cube so the length scale is dimensionless
        x = (np.array([e.log_params for e in history]) - lo) / (hi - lo)
        y = np.array([e.loss if np.isfinite(e.loss) else max(finite) for e in history])
        y_sd = y.std() if y.std() > 0 else 1.0
        ys = (y - y.mean()) / y_sd
        dists = pdist(x)
        length = float(np.median(dists)) if dists.size and np.median(dists) > 0 else 1.0
        mean, sd = _gp_posterior(x, ys, (cand - lo) / (hi - lo), length)
        ei = expected_improvement(mean, sd, ys.min())
        run(cand[int(np.argmax(ei))], "bayes")

    best = min(history, key=lambda e: e.loss)
    return SearchResult(best.log_params, best.loss, history)


@dataclass
class TuneReport:
    best: SvrHyperparams
    best_score: float
    metric: str
    search: SearchResult

    def to_dict(self) -> dict:
        sign = 1.0 if LOWER_IS_BETTER[self.metric] else -1.0
        return {
            "metric": self.metric,
            "selected": self.best.to_dict(),
            "selected_score": self.best_score,
            "evaluations": [
                {
                    "phase": e.phase,
                    "C": math.exp(e.log_params[0]),
                    "epsilon": math.exp(e.log_params[1]),
                    "gamma": math.exp(e.log_params[2]),
                    "score": sign * e.loss if np.isfinite(e.loss) else None,
                    "fold_scores": e.fold_scores,
                }
                for e in self.search.history
            ],
        }


def tune(table: FeatureTable, space: SearchSpace = SearchSpace(), cv: CvSpec = CvSpec(),
         budget: tuple[int, int] = (30, 30), seed: int = 0, tol: float = 1e-3,
         max_iter: int = 100_000) -> TuneReport:
    """Hybrid random + Bayesian search over (C, epsilon, gamma) scored by CV.

    Configurations whose solver fails to converge are scored as +inf loss.
    """
    n_random, n_bayes = budget
    if n_random < 1 or n_bayes < 0:
        raise EmptyBudget("budget needs n_random >= 1")

    def objective(u):
        hp = space.decode(u)
        try:
            folds = cv_fold_scores(table, hp, cv, tol, max_iter)
        except NoConvergence:
            return math.inf, []
        return as_loss(cv.metric, float(np.mean(folds))), folds

    result = hybrid_search(objective, space.log_bounds, n_random, n_bayes, seed)
    best = space.decode(result.best_log_params)
    return TuneReport(best, as_loss(cv.metric, result.best_loss), cv.metric, result)


def write_json(data, path) -> None:
    Path(path).write_text(json.dumps(data, indent=1, sort_keys=False) + "\n", encoding="utf-8")
