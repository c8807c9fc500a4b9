"""Surrogate training pipeline: split, feature selection, tuning, final fit."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dataset import FeatureTable, SplitSpec, split
from .errors import MetricsError
from .model_selection import (
    CvSpec,
    FeatureRanking,
    SearchSpace,
    TuneReport,
    rfe_rank,
    select_k,
    tune,
)
from .svr import MetricsReport, SvrModel, compute_metrics, train_svr


def derive_seed(seed: int, stage: str) -> int:
    """Stage-specific seed, stable under insertion of other stages."""
    digest = hashlib.sha256(f"{int(seed)}:{stage}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


@dataclass(frozen=True)
class TrainSettings:
    test_fraction: float = 0.2
    folds: int = 3
    metric: str = "normalized_rmse"
    budget: tuple[int, int] = (30, 30)
    prelim_budget: tuple[int, int] = (15, 15)
    select_tolerance: float = 0.01
    feature_selection: bool = True
    space: SearchSpace = field(default_factory=SearchSpace)
    tol: float = 1e-3
    max_iter: int = 100_000

    @classmethod
    def from_dict(cls, data: Optional[dict]) -> "TrainSettings":
        data = dict(data or {})
        space = data.pop("space", None)
        for key in ("budget", "prelim_budget"):
            if key in data:
                data[key] = tuple(int(v) for v in data[key])
        if space:
            data["space"] = SearchSpace(**{k: tuple(v) for k, v in space.items()})
        return cls(**data)


@dataclass
class TrainResult:
    model: SvrModel
    selected: list[str]
    train_metrics: Optional[MetricsReport]
    test_metrics: Optional[MetricsReport]
    ranking: Optional[FeatureRanking] = None
    prelim_tuning: Optional[TuneReport] = None
    tuning: Optional[TuneReport] = None
    train: Optional[FeatureTable] = None
    test: Optional[FeatureTable] = None
    flags: list[str] = field(default_factory=list)

    def metrics_dict(self) -> dict:
        return {
            "selected_features": self.selected,
            "train": None if self.train_metrics is None else self.train_metrics.to_dict(),
            "test": None if self.test_metrics is None else self.test_metrics.to_dict(),
            "flags": self.flags,
        }


def _metrics(model, table, p, flags, label):
    try:
        return compute_metrics(table.target, model.predict(table), p)
    except MetricsError as exc:
        flags.append(f"{label}: {type(exc).__name__}: {exc}")
        return None


def train_pipeline(table: FeatureTable, settings: TrainSettings = TrainSettings(),
                   seed: int = 0) -> TrainResult:
    """RFE -> select_k -> tune -> final fit, reporting train and test metrics.

    Feature ranking needs hyperparameters, so a short preliminary search on
    all features supplies them; the final search runs on the retained set.
    """
    train, test = split(table, SplitSpec(settings.test_fraction, derive_seed(seed, "split")))
    cv = CvSpec(settings.folds, derive_seed(seed, "cv"), settings.metric)
    flags: list[str] = []

    if np.all(train.target == train.target[0]):
        flags.append("zero-variance target: constant model")
        model = train_svr(train)
        return TrainResult(model, list(train.names), _metrics(model, train, train.p, flags, "train"),
                           _metrics(model, test, train.p, flags, "test"), train=train, test=test,
                           flags=flags)

    names = list(train.names)
    ranking = prelim = None
    if settings.feature_selection and train.p >= 2:
        prelim = tune(train, settings.space, cv, settings.prelim_budget,
                      derive_seed(seed, "prelim_tune"), settings.tol, settings.max_iter)
        ranking = rfe_rank(train, prelim.best, cv)
        k = select_k(ranking, settings.select_tolerance)
        names = [train.names[i] for i in ranking.retained(k)]

    reduced = train.select(names)
    tuning = tune(reduced, settings.space, cv, settings.budget, derive_seed(seed, "tune"),
                  settings.tol, settings.max_iter)
    model = train_svr(reduced, tuning.best, tol=settings.tol, max_iter=settings.max_iter)
    p = len(names)
    return TrainResult(
        model=model,
        selected=names,
        train_metrics=_metrics(model, train, p, flags, "train"),
        test_metrics=_metrics(model, test, p, flags, "test"),
        ranking=ranking,
        prelim_tuning=prelim,
        tuning=tuning,
        train=train,
        test=test,
        flags=flags,
    )
