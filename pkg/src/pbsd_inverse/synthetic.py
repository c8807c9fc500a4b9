"""Synthetic building inventories with a known analytic loss surface.

Ground truths are additive in unit-scaled features ``u = (x - lo) / (hi - lo)``
plus at most one bilinear interaction:

    EAL(x) = scale * (intercept + sum_j c_j u_j
                      + sum_k a_k max(0, 1 - u_k / knee_k)
                      + c_ij u_i u_j)

Hinge terms fall linearly up to their knee and stay flat beyond it; paired
with a positive linear term on the same feature they put the minimum at the
knee. With ``link="log"`` the bracket is the log of EAL, so effects combine
multiplicatively and EAL is positive everywhere.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .dataset import Feature, FeatureSchema, FeatureTable
from .errors import InvalidGroundTruth, OutOfBounds
from .inverse_ga import grid_argmin


@dataclass(frozen=True)
class Hinge:
    feature: str
    amplitude: float
    knee: float


@dataclass(frozen=True)
class Interaction:
    features: tuple[str, str]
    coef: float


@dataclass(frozen=True)
class GroundTruth:
    intercept: float
    linear: tuple[tuple[str, float], ...] = ()
    hinges: tuple[Hinge, ...] = ()
    interaction: Optional[Interaction] = None
    scale: float = 1.0
    link: str = "identity"

    @classmethod
    def from_dict(cls, data: Mapping) -> "GroundTruth":
        try:
            inter = data.get("interaction")
            return cls(
                intercept=float(data["intercept"]),
                linear=tuple((str(k), float(v)) for k, v in (data.get("linear") or {}).items()),
                hinges=tuple(Hinge(str(h["feature"]), float(h["amplitude"]), float(h["knee"]))
                             for h in data.get("hinges") or ()),
                interaction=None if not inter else Interaction(
                    tuple(str(f) for f in inter["features"]), float(inter["coef"])),
                scale=float(data.get("scale", 1.0)),
                link=str(data.get("link", "identity")),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidGroundTruth(f"malformed ground truth: {exc}") from exc

    def to_dict(self) -> dict:
        out = {
            "intercept": self.intercept,
            "scale": self.scale,
            "link": self.link,
            "linear": dict(self.linear),
            "hinges": [{"feature": h.feature, "amplitude": h.amplitude, "knee": h.knee} for h in self.hinges],
        }
        if self.interaction:
            out["interaction"] = {"features": list(self.interaction.features), "coef": self.interaction.coef}
        return out

    def features_used(self) -> set[str]:
        used = {n for n, _ in self.linear} | {h.feature for h in self.hinges}
        if self.interaction:
            used |= set(self.interaction.features)
        return used

    def lower_bound(self) -> float:
        """Lower bound of the bracketed sum over the unit cube."""
        low = self.intercept + sum(min(0.0, c) for _, c in self.linear)
        low += sum(min(0.0, h.amplitude) for h in self.hinges)
        if self.interaction:
            low += min(0.0, self.interaction.coef)
        return low

    def validate(self, schema: FeatureSchema) -> None:
        unknown = self.features_used() - set(schema.names)
        if unknown:
            raise InvalidGroundTruth(f"ground truth uses unknown features {sorted(unknown)}")
        if any(not 0.0 < h.knee <= 1.0 for h in self.hinges):
            raise InvalidGroundTruth("hinge knees must lie in (0, 1]")
        if self.interaction and len(set(self.interaction.features)) != 2:
            raise InvalidGroundTruth("interaction needs two distinct features")
        if self.link not in ("identity", "log"):
            raise InvalidGroundTruth(f"unknown link {self.link!r}")
        if not self.scale > 0 or (self.link == "identity" and not self.lower_bound() > 0):
            raise InvalidGroundTruth("ground truth must be strictly positive on the feature box")

    def evaluate_unit(self, u: np.ndarray, names: Sequence[str]) -> np.ndarray:
        u = np.atleast_2d(u)
        col = {n: i for i, n in enumerate(names)}
        out = np.full(u.shape[0], self.intercept)
        for name, c in self.linear:
            out += c * u[:, col[name]]
        for h in self.hinges:
            out += h.amplitude * np.maximum(0.0, 1.0 - u[:, col[h.feature]] / h.knee)
        if self.interaction:
            a, b = self.interaction.features
            out += self.interaction.coef * u[:, col[a]] * u[:, col[b]]
        return self.scale * (np.exp(out) if self.link == "log" else out)

    def main_effect(self, name: str, u: np.ndarray) -> np.ndarray:
        """Main effect of one feature (interaction averaged over its partner).

        Under the log link this is on the log scale, without ``scale``.
        """
        out = np.zeros_like(u, dtype=float)
        for n, c in self.linear:
            if n == name:
                out += c * u
        for h in self.hinges:
            if h.feature == name:
                out += h.amplitude * np.maximum(0.0, 1.0 - u / h.knee)
        if self.interaction and name in self.interaction.features:
            out += 0.5 * self.interaction.coef * u
        return out if self.link == "log" else self.scale * out

    def importance(self, names: Sequence[str], n_grid: int = 100_001) -> dict[str, float]:
        """Mean absolute deviation of each feature's main effect under uniform sampling.

        For a linear term this is |c| * scale / 4, so the ordering matches the
        coefficient magnitudes on standardized features.
        """
        u = np.linspace(0.0, 1.0, n_grid)
        out = {}
        for n in names:
            m = self.main_effect(n, u)
            out[n] = float(np.mean(np.abs(m - m.mean())))
        return out


@dataclass(frozen=True)
class GeneratorSpec:
    schema: FeatureSchema
    n_buildings: int
    ground_truth: GroundTruth
    noise_stddev: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.noise_stddev < 0:
            raise ValueError("noise_stddev must be >= 0")


def _unit(schema: FeatureSchema, rows: np.ndarray) -> np.ndarray:
    return (rows - schema.lower) / (schema.upper - schema.lower)


def generate(spec: GeneratorSpec) -> FeatureTable:
    """Uniform features within schema bounds; targets = truth * lognormal noise."""
    if spec.n_buildings < 10:
        raise ValueError("n_buildings must be >= 10")
    spec.ground_truth.validate(spec.schema)
    rng = np.random.default_rng(spec.seed)
    lo, hi = spec.schema.lower, spec.schema.upper
    rows = lo + (hi - lo) * rng.random((spec.n_buildings, lo.size))
    truth = spec.ground_truth.evaluate_unit(_unit(spec.schema, rows), spec.schema.names)
    if spec.noise_stddev > 0:
        truth = truth * np.exp(rng.normal(0.0, spec.noise_stddev, spec.n_buildings))
    ids = tuple(f"B{i:04d}" for i in range(spec.n_buildings))
    return FeatureTable(spec.schema, rows, truth, ids)


def ground_truth_eval(spec: GeneratorSpec, row) -> float:
    """Noiseless EAL at one feature vector."""
    row = np.asarray(row, dtype=float).ravel()
    lo, hi = spec.schema.lower, spec.schema.upper
    bad = np.flatnonzero((row < lo) | (row > hi))
    if bad.size:
        raise OutOfBounds(0, spec.schema.names[bad[0]], float(row[bad[0]]))
    return float(spec.ground_truth.evaluate_unit(_unit(spec.schema, row[None, :]), spec.schema.names)[0])


def ground_truth_batch(spec: GeneratorSpec, rows) -> np.ndarray:
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    return spec.ground_truth.evaluate_unit(_unit(spec.schema, rows), spec.schema.names)


def ground_truth_argmin(spec: GeneratorSpec, fixed: Mapping[str, float], free: Sequence[str],
                        n_points: int = 10**6) -> tuple[np.ndarray, float]:
    """Dense-grid argmin of the noiseless truth over ``free`` (schema bounds)."""
    key = (spec.schema, spec.ground_truth, tuple(sorted(fixed.items())), tuple(free), n_points)
    return _argmin_cached(key)


@functools.lru_cache(maxsize=32)
def _argmin_cached(key):
    schema, truth, fixed, free, n_points = key
    fixed = dict(fixed)
    template = np.array([fixed.get(n, np.nan) for n in schema.names])
    idx = [schema.index(n) for n in free]
    missing = [n for n in schema.names if n not in fixed and n not in free]
    if missing:
        raise InvalidGroundTruth(f"features {missing} neither fixed nor free")
    bounds = np.column_stack([schema.lower[idx], schema.upper[idx]])

    def f(genes):
        x = np.repeat(template[None, :], genes.shape[0], axis=0)
        x[:, idx] = genes
        return truth.evaluate_unit(_unit(schema, x), schema.names)

    pt, val = grid_argmin(f, bounds, n_points)
    return pt.copy(), val


def _schema(entries, target_unit="fraction") -> FeatureSchema:
    return FeatureSchema(tuple(Feature(n, lo, hi, role, unit) for n, unit, lo, hi, role in entries), target_unit)


def rc_frame_schema() -> FeatureSchema:
    """Reinforced-concrete frame features; bounds are illustrative desk values."""
    return _schema([
        ("NS", "stories", 3.0, 6.0, "geometry"),
        ("A_F", "ft2", 1764.0, 32400.0, "geometry"),
        ("BW", "ft", 21.0, 30.0, "geometry"),
        ("B_L", "-", 0.33, 3.0, "geometry"),
        ("A_b_avg", "in2", 200.0, 600.0, "design"),
        ("A_c_avg", "in2", 250.0, 900.0, "design"),
        ("A_b_1", "in2", 200.0, 650.0, "design"),
        ("A_c_1", "in2", 250.0, 1000.0, "design"),
        ("rho_b_avg", "-", 0.005, 0.025, "design"),
        ("rho_c_avg", "-", 0.01, 0.04, "design"),
        ("rho_b_1", "-", 0.005, 0.025, "design"),
        ("rho_c_1", "-", 0.01, 0.04, "design"),
        ("W_T", "kip", 1000.0, 30000.0, "mass"),
    ])


def steel_frame_schema() -> FeatureSchema:
    """Steel moment-frame features; bounds are illustrative desk values."""
    return _schema([
        ("NS", "stories", 1.0, 19.0, "geometry"),
        ("A_F", "ft2", 400.0, 40000.0, "geometry"),
        ("BW", "ft", 20.0, 40.0, "geometry"),
        ("h_1", "ft", 13.0, 26.0, "geometry"),
        ("I_b_avg", "in4", 500.0, 30000.0, "design"),
        ("I_b_max", "in4", 500.0, 40000.0, "design"),
        ("I_b_min", "in4", 100.0, 20000.0, "design"),
        ("I_c_i_avg", "in4", 500.0, 40000.0, "design"),
        ("I_c_i_max", "in4", 500.0, 60000.0, "design"),
        ("I_c_i_min", "in4", 100.0, 30000.0, "design"),
        ("I_c_ext_avg", "in4", 500.0, 40000.0, "design"),
        ("I_c_ext_max", "in4", 500.0, 60000.0, "design"),
        ("I_c_ext_min", "in4", 100.0, 30000.0, "design"),
        ("W_T", "kip", 200.0, 60000.0, "mass"),
    ])


def rc_ground_truth() -> GroundTruth:
    """Log-scale loss rises with stories and floor area; beam area and
    reinforcement reduce loss up to a knee; column area reduces loss throughout."""
    return GroundTruth(
        intercept=0.0,
        linear=(("NS", 1.3), ("A_F", 2.2), ("BW", 0.05), ("A_b_avg", 0.7),
                ("A_c_avg", -0.15), ("rho_b_avg", 0.45)),
        hinges=(Hinge("A_b_avg", 0.9, 0.4), Hinge("rho_b_avg", 0.5, 0.5)),
        interaction=Interaction(("NS", "A_F"), 0.5),
        scale=1e-3,
        link="log",
    )


def steel_ground_truth() -> GroundTruth:
    """Log-scale loss rises with stories and floor area; beam and internal
    column stiffness reduce loss up to a knee; external columns throughout."""
    return GroundTruth(
        intercept=0.0,
        linear=(("NS", 1.3), ("A_F", 1.6), ("h_1", 0.1), ("I_b_avg", 0.3),
                ("I_c_i_avg", 0.2), ("I_c_ext_avg", -0.2)),
        hinges=(Hinge("I_b_avg", 0.9, 0.45), Hinge("I_c_i_avg", 0.5, 0.35)),
        interaction=Interaction(("NS", "A_F"), 0.5),
        scale=1e-3,
        link="log",
    )


PRESETS = {
    "rc": (rc_frame_schema, rc_ground_truth),
    "steel": (steel_frame_schema, steel_ground_truth),
}
