"""Genetic-algorithm solver for the inverse design problem.

Finds values of the free (design) genes that minimize the surrogate's
predicted loss plus an optional regularization penalty, with the remaining
features pinned to the designer's known geometry.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .dataset import FeatureSchema, FeatureTable
from .errors import InvalidConfig, OutOfBounds

REGULARIZERS = ("none", "centroid", "bound_interior")


@dataclass(frozen=True)
class InverseProblemSpec:
    schema: FeatureSchema
    fixed_genes: Mapping[str, float]
    free_genes: tuple[str, ...]
    bounds: np.ndarray  # (n_free, 2)
    lam: float = 0.0
    regularizer: str = "none"

    def __post_init__(self):
        object.__setattr__(self, "fixed_genes", {k: float(v) for k, v in self.fixed_genes.items()})
        object.__setattr__(self, "free_genes", tuple(self.free_genes))
        bounds = np.asarray(self.bounds, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "bounds", bounds)
        names = self.schema.names
        fixed, free = set(self.fixed_genes), set(self.free_genes)
        if fixed & free or fixed | free != set(names) or len(free) != len(self.free_genes):
            raise InvalidConfig("fixed and free genes must partition the model features")
        if not self.free_genes:
            raise InvalidConfig("no free genes to optimize")
        if bounds.shape[0] != len(self.free_genes):
            raise InvalidConfig("need one (lo, hi) pair per free gene")
        for name, (lo, hi) in zip(self.free_genes, bounds):
            f = self.schema.features[self.schema.index(name)]
            if not (f.lower_bound <= lo < hi <= f.upper_bound):
                raise InvalidConfig(f"bounds for {name!r} must satisfy schema lo <= lo < hi <= schema hi")
        for name, value in self.fixed_genes.items():
            f = self.schema.features[self.schema.index(name)]
            if not f.lower_bound <= value <= f.upper_bound:
                raise OutOfBounds(0, name, value)
        if self.lam < 0:
            raise InvalidConfig("lambda must be >= 0")
        if self.regularizer not in REGULARIZERS:
            raise InvalidConfig(f"unknown regularizer {self.regularizer!r}")

    @property
    def free_index(self) -> np.ndarray:
        return np.array([self.schema.index(n) for n in self.free_genes])

    def template(self) -> np.ndarray:
        x = np.zeros(len(self.schema.names))
        for name, value in self.fixed_genes.items():
            x[self.schema.index(name)] = value
        return x

    def assemble(self, genes) -> np.ndarray:
        """Full feature vectors (rows) from free-gene vectors (rows)."""
        genes = np.atleast_2d(np.asarray(genes, dtype=float))
        x = np.repeat(self.template()[None, :], genes.shape[0], axis=0)
        x[:, self.free_index] = genes
        return x


def bounds_from_table(table: FeatureTable, names: Sequence[str]) -> np.ndarray:
    """Per-gene (min, max) of the training data."""
    return np.array([[table.column(n).min(), table.column(n).max()] for n in names])


def problem_from_dict(schema: FeatureSchema, data: Mapping, table: Optional[FeatureTable] = None
                      ) -> InverseProblemSpec:
    """Build a problem from config; free genes default to the unfixed features
    and bounds to the training-data range (falling back to schema bounds)."""
    fixed = dict(data.get("fixed_genes") or {})
    unknown = [k for k in fixed if k not in schema.names]
    if unknown:
        raise InvalidConfig(f"fixed genes not in model features: {unknown}")
    free = list(data.get("free_genes") or [n for n in schema.names if n not in fixed])
    # model features that are neither listed free nor fixed are pinned at their mean
    extra = [n for n in schema.names if n not in fixed and n not in free]
    if extra and table is None:
        raise InvalidConfig(f"features {extra} are neither fixed nor free")
    for n in extra:
        fixed[n] = float(table.column(n).mean())
    given = data.get("bounds") or {}
    rows = []
    for n in free:
        if n in given:
            rows.append([float(v) for v in given[n]])
        elif table is not None and n in table.names:
            rows.append([float(table.column(n).min()), float(table.column(n).max())])
        else:
            f = schema.features[schema.index(n)]
            rows.append([f.lower_bound, f.upper_bound])
    return InverseProblemSpec(schema, fixed, tuple(free), np.array(rows),
                              float(data.get("lambda", 0.0)), str(data.get("regularizer", "none")))


def regularization(spec: InverseProblemSpec, model, genes) -> np.ndarray:
    genes = np.atleast_2d(np.asarray(genes, dtype=float))
    if spec.regularizer == "none":
        return np.zeros(genes.shape[0])
    if spec.regularizer == "bound_interior":
        lo, hi = spec.bounds[:, 0], spec.bounds[:, 1]
        return np.sum(((2 * genes - lo - hi) / (hi - lo)) ** 2, axis=1)
    owner = getattr(model, "__self__", model)  # accept model.predict as well as the model
    stdz = getattr(owner, "standardizer", None)
    if stdz is None:
        raise InvalidConfig("centroid regularizer needs a model with a standardizer")
    idx = spec.free_index
    z = (genes - stdz.mean[idx]) / stdz.std[idx]
    return np.sum(z**2, axis=1)


def _check_bounds(spec: InverseProblemSpec, genes: np.ndarray) -> None:
    lo, hi = spec.bounds[:, 0], spec.bounds[:, 1]
    bad = (genes < lo) | (genes > hi)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise OutOfBounds(int(r), spec.free_genes[c], float(genes[r, c]))


def fitness_batch(spec: InverseProblemSpec, model: Callable, genes) -> np.ndarray:
    genes = np.atleast_2d(np.asarray(genes, dtype=float))
    _check_bounds(spec, genes)
    pred = np.asarray(model(spec.assemble(genes)), dtype=float).ravel()
    if spec.lam == 0.0:
        return pred
    return pred + spec.lam * regularization(spec, model, genes)


def evaluate_fitness(spec: InverseProblemSpec, model: Callable, genes) -> float:
    """Surrogate prediction at the assembled design plus lambda * R(genes)."""
    return float(fitness_batch(spec, model, np.asarray(genes, dtype=float)[None, :])[0])


def blend_crossover(parent_a, parent_b, alpha: float, bounds, rng: np.random.Generator):
    """BLX-alpha: genes uniform on [min - alpha d, max + alpha d], clipped."""
    a = np.asarray(parent_a, dtype=float)
    b = np.asarray(parent_b, dtype=float)
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    d = hi - lo
    low, high = lo - alpha * d, hi + alpha * d
    children = low + (high - low) * rng.random((2,) + a.shape)
    if bounds is not None:
        bounds = np.asarray(bounds, dtype=float)
        children = np.clip(children, bounds[..., 0], bounds[..., 1])
    return children[0], children[1]


def gaussian_mutate(genes, prob: float, sigma_fraction: float, bounds, rng: np.random.Generator):
    """Per-gene Gaussian perturbation with stddev sigma_fraction * range, clipped."""
    genes = np.asarray(genes, dtype=float)
    bounds = np.asarray(bounds, dtype=float)
    lo, hi = bounds[..., 0], bounds[..., 1]
    hit = rng.random(genes.shape) < prob
    step = rng.standard_normal(genes.shape) * sigma_fraction * (hi - lo)
    return np.clip(np.where(hit, genes + step, genes), lo, hi)


@dataclass(frozen=True)
class GaConfig:
    population_size: int = 100
    max_generations: int = 100
    crossover_alpha: float = 0.5
    mutation_prob: float = 0.2
    mutation_prob_final: float = 0.05
    adaptive_mutation: str = "linear"  # or "none"
    mutation_sigma_fraction: float = 0.1
    elite_fraction: float = 0.10
    selection_pressure: float = 1.7
    early_stop_patience: int = 5
    improvement_threshold: float = 1e-12
    seed: int = 0

    def __post_init__(self):
        if self.population_size < 4:
            raise InvalidConfig("population_size must be >= 4")
        if self.max_generations < 1:
            raise InvalidConfig("max_generations must be >= 1")
        if not 0.0 < self.elite_fraction < 1.0:
            raise InvalidConfig("elite_fraction must lie in (0, 1)")
        if self.early_stop_patience < 1:
            raise InvalidConfig("early_stop_patience must be >= 1")
        if not (0.0 <= self.mutation_prob <= 1.0 and 0.0 <= self.mutation_prob_final <= 1.0):
            raise InvalidConfig("mutation probabilities must lie in [0, 1]")
        if self.adaptive_mutation not in ("linear", "none"):
            raise InvalidConfig(f"unknown mutation schedule {self.adaptive_mutation!r}")
        if not 1.0 <= self.selection_pressure <= 2.0:
            raise InvalidConfig("selection_pressure must lie in [1, 2]")
        if self.mutation_sigma_fraction < 0 or self.crossover_alpha < 0:
            raise InvalidConfig("alpha and sigma fraction must be >= 0")

    @classmethod
    def from_dict(cls, data: Mapping | None) -> "GaConfig":
        data = dict(data or {})
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise InvalidConfig(f"unknown GA settings: {sorted(unknown)}")
        return cls(**data)

    def mutation_prob_at(self, generation: int) -> float:
        if self.adaptive_mutation == "none" or self.max_generations == 1:
            return self.mutation_prob
        frac = generation / (self.max_generations - 1)
        return self.mutation_prob + (self.mutation_prob_final - self.mutation_prob) * frac


@dataclass
class GaRun:
    best_individual: np.ndarray
    best_genes: np.ndarray
    best_fitness: float
    history: list[tuple[float, float, float]]
    generations_run: int
    termination: str
    free_genes: tuple[str, ...] = ()
    feature_names: tuple[str, ...] = ()
    populations: list[np.ndarray] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "best_design": dict(zip(self.feature_names, self.best_individual.tolist())),
            "free_genes": dict(zip(self.free_genes, self.best_genes.tolist())),
            "best_fitness": self.best_fitness,
            "termination": self.termination,
            "generations_run": self.generations_run,
            "history": [{"generation": g, "best": b, "mean": m, "worst": w}
                        for g, (b, m, w) in enumerate(self.history)],
        }


def rank_weights(n: int, pressure: float) -> np.ndarray:
    """Linear-ranking selection probabilities, best first."""
    if n == 1:
        return np.ones(1)
    i = np.arange(n)
    return (pressure - (2 * pressure - 2) * i / (n - 1)) / n


def run_ga(spec: InverseProblemSpec, model: Callable, config: GaConfig = GaConfig(),
           keep_populations: bool = False) -> GaRun:
    """Elitist real-coded GA over the free genes.

    Each generation keeps the top ``elite_fraction`` unchanged and fills the
    rest with rank-proportionate parents, BLX crossover and Gaussian mutation
    under the mutation schedule. Every generation draws from its own child of
    one ``SeedSequence`` so results depend only on the seed.
    """
    bounds = spec.bounds
    lo, hi = bounds[:, 0], bounds[:, 1]
    n_pop = config.population_size
    n_elite = max(1, int(round(config.elite_fraction * n_pop)))
    n_child = n_pop - n_elite
    weights = rank_weights(n_pop, config.selection_pressure)
    streams = np.random.SeedSequence(config.seed).spawn(config.max_generations)

    rng = np.random.default_rng(streams[0])
    pop = lo + (hi - lo) * rng.random((n_pop, lo.size))
    fit = fitness_batch(spec, model, pop)

    def stats(f):
        return float(f.min()), float(f.mean()), float(f.max())

    history = [stats(fit)]
    populations = [pop.copy()] if keep_populations else []
    best = fit.min()
    stall = 0
    termination = "max_generations"
    for gen in range(1, config.max_generations):
        rng = np.random.default_rng(streams[gen])
        order = np.argsort(fit, kind="stable")
        elite = pop[order[:n_elite]]
        elite_fit = fit[order[:n_elite]]

        n_pairs = (n_child + 1) // 2
        parents = order[rng.choice(n_pop, size=(n_pairs, 2), p=weights)]
        children = np.empty((2 * n_pairs, lo.size))
        for k, (ia, ib) in enumerate(parents):
            children[2 * k], children[2 * k + 1] = blend_crossover(
                pop[ia], pop[ib], config.crossover_alpha, bounds, rng)
        children = gaussian_mutate(children[:n_child], config.mutation_prob_at(gen),
                                   config.mutation_sigma_fraction, bounds, rng)

        pop = np.vstack([elite, children])
        fit = np.concatenate([elite_fit, fitness_batch(spec, model, children)])
        history.append(stats(fit))
        if keep_populations:
            populations.append(pop.copy())

        current = fit.min()
        if best - current > config.improvement_threshold:
            best, stall = current, 0
        else:
            stall += 1
        if stall >= config.early_stop_patience:
            termination = "early_stop"
            break

    i_best = int(np.argmin(fit))
    genes = pop[i_best].copy()
    return GaRun(
        best_individual=spec.assemble(genes)[0],
        best_genes=genes,
        best_fitness=evaluate_fitness(spec, model, genes),
        history=history,
        generations_run=len(history),
        termination=termination,
        free_genes=spec.free_genes,
        feature_names=tuple(spec.schema.names),
        populations=populations,
    )


def grid_argmin(func: Callable[[np.ndarray], np.ndarray], bounds, n_points: int = 10**6,
                chunk: int = 50_000) -> tuple[np.ndarray, float]:
    """Minimize ``func`` over a regular tensor grid of at most ``n_points``."""
    bounds = np.asarray(bounds, dtype=float).reshape(-1, 2)
    m = bounds.shape[0]
    per_dim = 2
    while (per_dim + 1) ** m <= n_points:
        per_dim += 1
    axes = [np.linspace(lo, hi, per_dim) for lo, hi in bounds]
    total = per_dim**m
    best_val, best_pt = np.inf, None
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total))
        digits = np.stack(np.unravel_index(idx, (per_dim,) * m), axis=1)
        pts = np.column_stack([axes[d][digits[:, d]] for d in range(m)])
        vals = np.asarray(func(pts), dtype=float).ravel()
        k = int(np.argmin(vals))
        if vals[k] < best_val:
            best_val, best_pt = float(vals[k]), pts[k]
    return best_pt, best_val
