"""Epsilon-insensitive support vector regression and surrogate metrics.

The dual QP is solved with an SMO-style pairwise solver. Variables follow
the usual doubled layout: ``beta = [alpha, alpha_star]`` with signs
``s = [+1, -1]`` so the problem reads

    min  0.5 * beta' Q beta + p' beta
    s.t. s' beta = 0,  0 <= beta <= C

with ``Q_ij = s_i s_j K(x_i, x_j)`` and ``p = [eps - y, eps + y]``. The
regression coefficients are ``theta = alpha - alpha_star``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from numba import njit
from scipy.spatial.distance import cdist

from .dataset import FeatureSchema, FeatureTable, Standardizer, fit_standardizer
from .errors import (
    DimensionMismatch,
    InsufficientDof,
    NoConvergence,
    SchemaMismatch,
    ZeroMeanTarget,
    ZeroVarianceTarget,
)

FORMAT_VERSION = 1


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "rbf"
    gamma: Optional[float] = None  # None -> 1/p at training time
    degree: int = 3
    coef: float = 1.0

    def __post_init__(self):
        if self.kind not in ("rbf", "linear", "poly"):
            raise ValueError(f"unknown kernel {self.kind!r}")
        if self.gamma is not None and not self.gamma > 0:
            raise ValueError("gamma must be > 0")
        if self.kind == "poly" and (self.degree < 1 or self.coef < 0):
            raise ValueError("polynomial kernel needs degree >= 1 and coef >= 0")

    def resolved(self, p: int) -> "KernelSpec":
        if self.kind == "rbf" and self.gamma is None:
            return KernelSpec("rbf", 1.0 / p, self.degree, self.coef)
        return self


def kernel_eval(spec: KernelSpec, x, z) -> float:
    x = np.asarray(x, dtype=float).ravel()
    z = np.asarray(z, dtype=float).ravel()
    if x.shape != z.shape:
        raise DimensionMismatch(f"{x.shape} vs {z.shape}")
    if spec.kind == "rbf":
        gamma = spec.resolved(x.size).gamma
        d = x - z
        return math.exp(-gamma * float(d @ d))
    if spec.kind == "linear":
        return float(x @ z)
    return float((x @ z + spec.coef) ** spec.degree)


def kernel_matrix(spec: KernelSpec, a, b) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[1] != b.shape[1]:
        raise DimensionMismatch(f"{a.shape[1]} vs {b.shape[1]} columns")
    if spec.kind == "rbf":
        gamma = spec.resolved(a.shape[1]).gamma
        return np.exp(-gamma * cdist(a, b, "sqeuclidean"))
    gram = a @ b.T
    if spec.kind == "linear":
        return gram
    return (gram + spec.coef) ** spec.degree


@dataclass(frozen=True)
class SvrHyperparams:
    C: float = 1.0
    epsilon: float = 0.1
    kernel: KernelSpec = field(default_factory=KernelSpec)

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError("C must be > 0")
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be >= 0")

    def to_dict(self) -> dict:
        k = self.kernel
        return {"C": self.C, "epsilon": self.epsilon,
                "kernel": {"kind": k.kind, "gamma": k.gamma, "degree": k.degree, "coef": k.coef}}

    @classmethod
    def from_dict(cls, d: dict) -> "SvrHyperparams":
        k = d.get("kernel", {})
        kernel = KernelSpec(k.get("kind", "rbf"), k.get("gamma"), int(k.get("degree", 3)),
                            float(k.get("coef", 1.0)))
        return cls(float(d["C"]), float(d["epsilon"]), kernel)


@njit(cache=True)
def _smo(K, y, eps, C, tol, max_iter, second_order):
    n = y.shape[0]
    m2 = 2 * n
    beta = np.zeros(m2)
    sign = np.empty(m2)
    grad = np.empty(m2)
    for t in range(n):
        sign[t] = 1.0
        sign[t + n] = -1.0
        grad[t] = eps - y[t]
        grad[t + n] = eps + y[t]
    it = 0
    converged = False
    while it < max_iter:
        # i: maximal violator; j: the minimal violator, or with second_order
        # the lower-set violator maximizing the guaranteed gain b^2 / a
        gmax = -np.inf
        i = -1
        for t in range(m2):
            if (beta[t] < C) if sign[t] > 0 else (beta[t] > 0.0):
                v = -sign[t] * grad[t]
                if v > gmax:
                    gmax = v
                    i = t
        if i < 0:
            converged = True
            break
        ii = i % n
        gmin = np.inf
        best = -np.inf
        j = -1
        for t in range(m2):
            if (beta[t] > 0.0) if sign[t] > 0 else (beta[t] < C):
                v = -sign[t] * grad[t]
                if v < gmin:
                    gmin = v
                    if not second_order:
                        j = t
                b = gmax - v
                if second_order and b > 0.0:
                    tt = t % n
                    a = K[ii, ii] + K[tt, tt] - 2.0 * K[ii, tt]
                    if a <= 0.0:
                        a = 1e-12
                    if b * b / a > best:
                        best = b * b / a
                        j = t
        if j < 0 or gmax - gmin < tol:
            converged = True
            break
        jj = j % n
        si = sign[i]
        sj = sign[j]
        kij = K[ii, jj]
        old_i = beta[i]
        old_j = beta[j]
        if si != sj:
            quad = K[ii, ii] + K[jj, jj] + 2.0 * si * sj * kij
            if quad <= 0.0:
                quad = 1e-12
            delta = (-grad[i] - grad[j]) / quad
            diff = beta[i] - beta[j]
            beta[i] += delta
            beta[j] += delta
            if diff > 0.0:
                if beta[j] < 0.0:
                    beta[j] = 0.0
                    beta[i] = diff
            else:
                if beta[i] < 0.0:
                    beta[i] = 0.0
                    beta[j] = -diff
            if diff > 0.0:
                if beta[i] > C:
                    beta[i] = C
                    beta[j] = C - diff
            else:
                if beta[j] > C:
                    beta[j] = C
                    beta[i] = C + diff
        else:
            quad = K[ii, ii] + K[jj, jj] - 2.0 * kij
            if quad <= 0.0:
                quad = 1e-12
            delta = (grad[i] - grad[j]) / quad
            total = beta[i] + beta[j]
            beta[i] -= delta
            beta[j] += delta
            if total > C:
                if beta[i] > C:
                    beta[i] = C
                    beta[j] = total - C
            else:
                if beta[j] < 0.0:
                    beta[j] = 0.0
                    beta[i] = total
            if total > C:
                if beta[j] > C:
                    beta[j] = C
                    beta[i] = total - C
            else:
                if beta[i] < 0.0:
                    beta[i] = 0.0
                    beta[j] = total
        d_i = beta[i] - old_i
        d_j = beta[j] - old_j
        for t in range(m2):
            tt = t % n
            grad[t] += sign[t] * (si * K[ii, tt] * d_i + sj * K[jj, tt] * d_j)
        it += 1

    # offset rho, LIBSVM convention: decision = K theta - rho
    ub = np.inf
    lb = -np.inf
    n_free = 0
    s_free = 0.0
    for t in range(m2):
        yg = sign[t] * grad[t]
        if beta[t] >= C:
            if sign[t] < 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        elif beta[t] <= 0.0:
            if sign[t] > 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        else:
            n_free += 1
            s_free += yg
    if n_free > 0:
        rho = s_free / n_free
    else:
        rho = 0.5 * (ub + lb)
    return beta, rho, it, converged


@dataclass(frozen=True)
class DualSolution:
    """Raw solver output in standardized units (kept for diagnostics)."""

    theta: np.ndarray
    bias: float
    iterations: int
    K: np.ndarray
    y: np.ndarray
    epsilon: float
    C: float

    def objective(self) -> float:
        return dual_objective(self.K, self.y, self.epsilon, self.theta)

    def kkt_residuals(self) -> np.ndarray:
        return kkt_residuals(self.K, self.y, self.epsilon, self.C, self.theta, self.bias)


def dual_objective(K, y, epsilon, theta) -> float:
    """Dual objective to be maximized: y'theta - eps |theta|_1 - theta'K theta / 2."""
    theta = np.asarray(theta, dtype=float)
    return float(y @ theta - epsilon * np.abs(theta).sum() - 0.5 * theta @ K @ theta)


def kkt_residuals(K, y, epsilon, C, theta, bias) -> np.ndarray:
    """Per-sample violation of the epsilon-SVR optimality conditions."""
    r = y - (K @ theta + bias)
    at_bound = 1e-12 * C
    out = np.empty_like(r)
    for i, (t, ri) in enumerate(zip(theta, r)):
        if t == 0.0:
            out[i] = max(0.0, abs(ri) - epsilon)
        elif t >= C - at_bound:
            out[i] = max(0.0, epsilon - ri)
        elif t <= -C + at_bound:
            out[i] = max(0.0, ri + epsilon)
        elif t > 0:
            out[i] = abs(ri - epsilon)
        else:
            out[i] = abs(ri + epsilon)
    return out


WORKING_SETS = ("second_order", "max_violation")


def solve_dual(K, y, epsilon: float, C: float, tol: float = 1e-3,
               max_iter: int = 100_000, working_set: str = "second_order") -> DualSolution:
    """Pairwise SMO on the epsilon-SVR dual.

    Stops when the maximal KKT violation gap falls below ``tol``. The first
    index of each pair is always the maximal violator; ``working_set``
    chooses the partner as the minimal violator ("max_violation") or by
    second-order gain ("second_order", far fewer iterations at large C).
    """
    if working_set not in WORKING_SETS:
        raise ValueError(f"unknown working_set {working_set!r}")
    K = np.ascontiguousarray(K, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    beta, rho, it, converged = _smo(K, y, float(epsilon), float(C), float(tol), int(max_iter),
                                    working_set == "second_order")
    if not converged:
        raise NoConvergence(max_iter)
    n = y.shape[0]
    theta = beta[:n] - beta[n:]
    return DualSolution(theta, -float(rho), int(it), K, y, float(epsilon), float(C))


@dataclass(frozen=True)
class SvrModel:
    support_vectors: np.ndarray
    dual_coefficients: np.ndarray
    bias: float
    hyperparams: SvrHyperparams
    standardizer: Standardizer
    target_scaler: tuple[float, float]
    schema: FeatureSchema
    n_train: int = 0
    iterations: int = 0

    @property
    def feature_names(self) -> list[str]:
        return self.schema.names

    @property
    def n_support(self) -> int:
        return int(self.dual_coefficients.size)

    def _design_matrix(self, rows) -> np.ndarray:
        if isinstance(rows, FeatureTable):
            missing = [n for n in self.feature_names if n not in rows.names]
            if missing:
                raise SchemaMismatch(f"input lacks model features {missing}")
            cols = [rows.schema.index(n) for n in self.feature_names]
            return rows.rows[:, cols]
        x = np.atleast_2d(np.asarray(rows, dtype=float))
        if x.shape[1] != len(self.feature_names):
            raise SchemaMismatch(f"expected {len(self.feature_names)} columns, got {x.shape[1]}")
        return x

    def decision_function(self, rows) -> np.ndarray:
        """Prediction in standardized target units."""
        z = self.standardizer.transform(self._design_matrix(rows))
        out = np.full(z.shape[0], self.bias)
        if self.n_support:
            kernel = self.hyperparams.kernel
            for start in range(0, z.shape[0], 4096):
                block = z[start:start + 4096]
                out[start:start + 4096] += kernel_matrix(kernel, block, self.support_vectors) @ self.dual_coefficients
        return out

    def predict(self, rows) -> np.ndarray:
        mean, std = self.target_scaler
        return self.decision_function(rows) * std + mean

    __call__ = predict

    def to_dict(self) -> dict:
        return {
            "format": "pbsd-svr",
            "version": FORMAT_VERSION,
            "schema_fingerprint": self.schema.fingerprint(),
            "schema": self.schema.to_dict(),
            "hyperparams": self.hyperparams.to_dict(),
            "standardizer": self.standardizer.to_dict(),
            "target_scaler": list(self.target_scaler),
            "support_vectors": self.support_vectors.tolist(),
            "dual_coefficients": self.dual_coefficients.tolist(),
            "bias": self.bias,
            "n_train": self.n_train,
            "iterations": self.iterations,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SvrModel":
        if d.get("format") != "pbsd-svr" or d.get("version") != FORMAT_VERSION:
            raise SchemaMismatch("not a supported model file")
        schema = FeatureSchema.from_dict(d["schema"], require_design=False)
        if schema.fingerprint() != d["schema_fingerprint"]:
            raise SchemaMismatch("schema fingerprint does not match model contents")
        p = len(schema.features)
        sv = np.array(d["support_vectors"], dtype=float).reshape(-1, p)
        return cls(
            support_vectors=sv,
            dual_coefficients=np.array(d["dual_coefficients"], dtype=float),
            bias=float(d["bias"]),
            hyperparams=SvrHyperparams.from_dict(d["hyperparams"]),
            standardizer=Standardizer.from_dict(d["standardizer"]),
            target_scaler=(float(d["target_scaler"][0]), float(d["target_scaler"][1])),
            schema=schema,
            n_train=int(d.get("n_train", 0)),
            iterations=int(d.get("iterations", 0)),
        )


def save_model(model: SvrModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=1) + "\n", encoding="utf-8")


def load_model(path, expected_schema: FeatureSchema | None = None) -> SvrModel:
    """Load a model file; optionally check its features against a schema."""
    model = SvrModel.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
    if expected_schema is not None:
        sub = expected_schema.subset(model.feature_names)
        if sub.fingerprint() != model.schema.fingerprint():
            raise SchemaMismatch("model schema fingerprint differs from the supplied schema")
    return model


def train_svr(train: FeatureTable, hp: SvrHyperparams = SvrHyperparams(), tol: float = 1e-3,
              max_iter: int = 100_000, seed: int = 0, return_solution: bool = False,
              working_set: str = "second_order"):
    """Fit an epsilon-SVR on ``train``.

    Features and targets are standardized internally, so ``hp.epsilon`` is in
    target-standard-deviation units. ``seed`` is accepted for interface
    symmetry; the solver itself is deterministic.
    """
    if train.target is None:
        raise ValueError("training table has no target")
    if train.n < 2:
        raise ValueError("need at least two training rows")
    if not tol > 0:
        raise ValueError("tol must be > 0")
    stdz = fit_standardizer(train)
    x = stdz.transform(train.rows)
    y = np.asarray(train.target, dtype=float)
    kernel = hp.kernel.resolved(train.p)
    hp = SvrHyperparams(hp.C, hp.epsilon, kernel)

    y_mean = float(y.mean())
    y_std = float(y.std(ddof=1))
    if not y_std > 0 or np.all(y == y[0]):
        model = SvrModel(np.empty((0, train.p)), np.empty(0), float(y[0]), hp, stdz, (0.0, 1.0),
                         train.schema, train.n, 0)
        return (model, None) if return_solution else model

    yz = (y - y_mean) / y_std
    K = kernel_matrix(kernel, x, x)
    sol = solve_dual(K, yz, hp.epsilon, hp.C, tol, max_iter, working_set)
    keep = sol.theta != 0.0
    model = SvrModel(
        support_vectors=x[keep].copy(),
        dual_coefficients=sol.theta[keep].copy(),
        bias=sol.bias,
        hyperparams=hp,
        standardizer=stdz,
        target_scaler=(y_mean, y_std),
        schema=train.schema,
        n_train=train.n,
        iterations=sol.iterations,
    )
    return (model, sol) if return_solution else model


def predict(model: SvrModel, rows) -> np.ndarray:
    return model.predict(rows)


@dataclass(frozen=True)
class MetricsReport:
    adjusted_r2: float
    normalized_rmse: float
    normalized_mae: float
    n: int
    p: int
    r2: float = float("nan")

    def to_dict(self) -> dict:
        return {"adjusted_r2": self.adjusted_r2, "r2": self.r2, "normalized_rmse": self.normalized_rmse,
                "normalized_mae": self.normalized_mae, "n": self.n, "p": self.p}


def _pair(y, y_hat):
    y = np.asarray(y, dtype=float).ravel()
    y_hat = np.asarray(y_hat, dtype=float).ravel()
    if y.shape != y_hat.shape or y.size < 2:
        raise InsufficientDof("need two equal-length vectors with n >= 2")
    return y, y_hat


def normalized_rmse(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat)
    mean = float(y.mean())
    if mean == 0:
        raise ZeroMeanTarget("mean target is zero")
    return math.sqrt(np.mean((y - y_hat) ** 2)) / mean


def normalized_mae(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat)
    mean = float(y.mean())
    if mean == 0:
        raise ZeroMeanTarget("mean target is zero")
    return float(np.mean(np.abs(y - y_hat))) / mean


def r_squared(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0:
        raise ZeroVarianceTarget("target has zero variance")
    return 1.0 - float(np.sum((y - y_hat) ** 2)) / ss_tot


def adjusted_r2(y, y_hat, p: int) -> float:
    y, _ = _pair(y, y_hat)
    n = y.size
    if n - p - 1 < 1:
        raise InsufficientDof(f"n - p - 1 = {n - p - 1} < 1")
    return 1.0 - (1.0 - r_squared(y, y_hat)) * (n - 1) / (n - p - 1)


def compute_metrics(y, y_hat, p: int) -> MetricsReport:
    y, y_hat = _pair(y, y_hat)
    return MetricsReport(
        adjusted_r2=adjusted_r2(y, y_hat, p),
        normalized_rmse=normalized_rmse(y, y_hat),
        normalized_mae=normalized_mae(y, y_hat),
        n=int(y.size),
        p=int(p),
        r2=r_squared(y, y_hat),
    )

