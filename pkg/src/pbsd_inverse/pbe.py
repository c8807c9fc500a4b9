"""Assembly-based seismic loss assessment.

The chain runs from cloud-analysis demand models (ln EDP regressed on ln IM)
through lognormal damage-state fragilities to expected repair loss given
intensity, and integrates that against a site hazard curve to obtain the
expected annual loss.

Only the non-collapse, repairable branch is modelled; collapse and demolition
terms need data this toolkit does not have.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import yaml
from scipy.special import ndtr

from .errors import (
    EmptyFile,
    EmptyHazard,
    InsufficientData,
    InvalidConfig,
    MissingDemandModel,
    NonNumericCell,
    NonPositiveEdp,
    NonPositiveValue,
)

DRIFT = "drift"
ACCELERATION = "acceleration"
EDP_KINDS = (DRIFT, ACCELERATION)


def std_normal_cdf(z):
    """Standard normal CDF; accepts scalars or arrays."""
    out = ndtr(z)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class DemandModel:
    ln_a: float
    b: float
    sigma_ln: float
    edp_kind: str = DRIFT

    def __post_init__(self):
        if self.sigma_ln < 0:
            raise ValueError("sigma_ln must be >= 0")
        if self.edp_kind not in EDP_KINDS:
            raise ValueError(f"unknown EDP kind {self.edp_kind!r}")

    def median(self, im):
        return np.exp(self.ln_a + self.b * np.log(im))


def fit_cloud_model(pairs, edp_kind: str = DRIFT) -> DemandModel:
    """Power-law demand model from (IM, EDP) pairs by OLS in log-log space.

    ``sigma_ln`` is the residual standard deviation with an n-2 denominator.
    """
    data = np.asarray(pairs, dtype=float).reshape(-1, 2)
    if data.shape[0] < 3:
        raise InsufficientData(f"cloud analysis needs >= 3 pairs, got {data.shape[0]}")
    if not np.all(data > 0):
        raise NonPositiveValue("IM and EDP values must be strictly positive")
    x, y = np.log(data[:, 0]), np.log(data[:, 1])
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    if sxx == 0.0:
        raise InsufficientData("cloud analysis needs at least two distinct IM values")
    b = np.sum((x - xm) * (y - ym)) / sxx
    ln_a = ym - b * xm
    resid = y - (ln_a + b * x)
    sigma = math.sqrt(np.sum(resid**2) / (data.shape[0] - 2))
    return DemandModel(float(ln_a), float(b), sigma, edp_kind)


@dataclass(frozen=True)
class FragilityCurve:
    median: float
    dispersion: float

    def __post_init__(self):
        if not (self.median > 0 and self.dispersion > 0):
            raise ValueError("fragility median and dispersion must be > 0")


def damage_state_probability(curve: FragilityCurve, edp) -> float:
    """P(DS >= ds | EDP) for a lognormal fragility."""
    edp = np.asarray(edp, dtype=float)
    if np.any(edp <= 0):
        raise NonPositiveEdp("EDP must be > 0")
    return std_normal_cdf((np.log(edp) - math.log(curve.median)) / curve.dispersion)


@dataclass(frozen=True)
class DamageState:
    fragility: FragilityCurve
    cost_ratio: float


@dataclass(frozen=True)
class Assembly:
    name: str
    edp_kind: str
    damage_states: tuple[DamageState, ...]

    def __post_init__(self):
        object.__setattr__(self, "damage_states", tuple(self.damage_states))
        if self.edp_kind not in EDP_KINDS:
            raise ValueError(f"assembly {self.name!r}: unknown EDP kind {self.edp_kind!r}")
        if not self.damage_states:
            raise ValueError(f"assembly {self.name!r} has no damage states")
        medians = [d.fragility.median for d in self.damage_states]
        costs = [d.cost_ratio for d in self.damage_states]
        if any(b <= a for a, b in zip(medians, medians[1:])):
            raise ValueError(f"assembly {self.name!r}: medians must strictly increase")
        if any(b < a for a, b in zip(costs, costs[1:])):
            raise ValueError(f"assembly {self.name!r}: cost ratios must not decrease")
        if any(not 0.0 <= c <= 1.0 for c in costs):
            raise ValueError(f"assembly {self.name!r}: cost ratios must lie in [0, 1]")

    @property
    def medians(self) -> np.ndarray:
        return np.array([d.fragility.median for d in self.damage_states])

    @property
    def dispersions(self) -> np.ndarray:
        return np.array([d.fragility.dispersion for d in self.damage_states])

    @property
    def cost_ratios(self) -> np.ndarray:
        return np.array([d.cost_ratio for d in self.damage_states])


@dataclass(frozen=True)
class LossModel:
    assemblies: tuple[Assembly, ...]
    demand_models: Mapping[str, DemandModel] = field(default_factory=dict)
    replacement_cost: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "assemblies", tuple(self.assemblies))
        object.__setattr__(self, "demand_models", dict(self.demand_models))
        if not self.replacement_cost > 0:
            raise ValueError("replacement_cost must be > 0")

    def with_demand(self, demand_models: Mapping[str, DemandModel],
                    replacement_cost: float | None = None) -> "LossModel":
        cost = self.replacement_cost if replacement_cost is None else replacement_cost
        return LossModel(self.assemblies, demand_models, cost)


def _demand_for(model: LossModel, kind: str) -> DemandModel:
    try:
        return model.demand_models[kind]
    except KeyError:
        raise MissingDemandModel(kind) from None


def _interval_probabilities(exceed: np.ndarray) -> np.ndarray:
    # exceed[..., j] = P(DS >= j); P(DS == j) = exceed_j - exceed_{j+1}
    nxt = np.concatenate([exceed[..., 1:], np.zeros_like(exceed[..., :1])], axis=-1)
    return exceed - nxt


def expected_loss_given_im(model: LossModel, im):
    """Expected repair loss E[L_T | IM], closed form.

    Lognormal demand composed with lognormal capacity gives
    P(DS >= j | IM) = Phi((ln eta(IM) - ln median_j) / sqrt(beta_j^2 + sigma^2)).
    Vectorized over ``im``.
    """
    im_arr = np.asarray(im, dtype=float)
    if np.any(im_arr <= 0):
        raise NonPositiveValue("IM must be > 0")
    ln_im = np.log(im_arr)[..., None]
    total = np.zeros(im_arr.shape)
    for asm in model.assemblies:
        dm = _demand_for(model, asm.edp_kind)
        beta = np.sqrt(asm.dispersions**2 + dm.sigma_ln**2)
        z = (dm.ln_a + dm.b * ln_im - np.log(asm.medians)) / beta
        p_in = _interval_probabilities(ndtr(z))
        total = total + p_in @ asm.cost_ratios
    total = total * model.replacement_cost
    return float(total) if total.ndim == 0 else total


def expected_loss_given_im_quadrature(model: LossModel, im: float, n_nodes: int = 100_000,
                                      span: float = 10.0) -> float:
    """E[L_T | IM] by trapezoidal integration over EDP.

    Integrates the fragility-weighted consequence against the lognormal
    demand density on a grid in ln EDP covering +/- ``span`` dispersions.
    Slow; kept as an independent check on the closed form.
    """
    if im <= 0:
        raise NonPositiveValue("IM must be > 0")
    total = 0.0
    for asm in model.assemblies:
        dm = _demand_for(model, asm.edp_kind)
        mu = dm.ln_a + dm.b * math.log(im)
        ln_med = np.log(asm.medians)
        if dm.sigma_ln == 0.0:
            exceed = ndtr((mu - ln_med) / asm.dispersions)
            total += float(_interval_probabilities(exceed) @ asm.cost_ratios)
            continue
        u = np.linspace(mu - span * dm.sigma_ln, mu + span * dm.sigma_ln, n_nodes)
        density = np.exp(-0.5 * ((u - mu) / dm.sigma_ln) ** 2) / (dm.sigma_ln * math.sqrt(2 * math.pi))
        exceed = ndtr((u[:, None] - ln_med[None, :]) / asm.dispersions[None, :])
        consequence = _interval_probabilities(exceed) @ asm.cost_ratios
        total += float(np.trapezoid(consequence * density, u))
    return total * model.replacement_cost


@dataclass(frozen=True)
class HazardCurve:
    """Annual exceedance rate versus IM, interpolated log-log.

    The rate is taken as zero above the last point, so the curve carries an
    implicit drop of ``rate[-1]`` there.
    """

    im: np.ndarray
    rate: np.ndarray

    def __post_init__(self):
        im = np.asarray(self.im, dtype=float)
        rate = np.asarray(self.rate, dtype=float)
        if im.ndim != 1 or im.shape != rate.shape or im.size < 2:
            raise EmptyHazard("hazard curve needs at least two (im, rate) points")
        if np.any(im <= 0) or np.any(rate <= 0):
            raise ValueError("hazard IM and rates must be > 0")
        if np.any(np.diff(im) <= 0) or np.any(np.diff(rate) >= 0):
            raise ValueError("hazard IM must strictly increase and rates strictly decrease")
        object.__setattr__(self, "im", im)
        object.__setattr__(self, "rate", rate)

    @property
    def slopes(self) -> np.ndarray:
        return np.diff(np.log(self.rate)) / np.diff(np.log(self.im))

    def __call__(self, im):
        im = np.asarray(im, dtype=float)
        ln_rate = np.interp(np.log(im), np.log(self.im), np.log(self.rate))
        out = np.where((im < self.im[0]) | (im > self.im[-1]), np.nan, np.exp(ln_rate))
        out = np.where(im > self.im[-1], 0.0, out)
        return float(out) if out.ndim == 0 else out


def compute_eal(model: LossModel, hazard: HazardCurve, n_nodes: int = 512) -> float:
    """Expected annual loss: integral of E[L_T|IM] |d lambda/d IM| dIM.

    Trapezoidal rule in ln IM, with nodes allocated to hazard segments in
    proportion to their log-width so every breakpoint is a node; inside a
    segment the rate derivative is the analytic one of the log-log
    interpolant. The drop to zero above the last point adds
    E[L_T|IM_max] * rate_max.
    """
    if hazard is None:
        raise EmptyHazard("no hazard curve")
    if n_nodes < 16:
        raise ValueError("quadrature needs >= 16 nodes")
    ln_im = np.log(hazard.im)
    widths = np.diff(ln_im)
    n_seg = widths.size
    intervals = max(n_nodes - 1, n_seg)
    alloc = np.maximum(1, np.floor(intervals * widths / widths.sum()).astype(int))
    # hand leftover intervals to the widest segments, deterministically
    leftover = intervals - alloc.sum()
    order = np.argsort(-widths, kind="stable")
    k = 0
    while leftover > 0:
        alloc[order[k % n_seg]] += 1
        leftover -= 1
        k += 1
    eal = 0.0
    for s, slope in enumerate(hazard.slopes):
        u = np.linspace(ln_im[s], ln_im[s + 1], alloc[s] + 1)
        rate = hazard.rate[s] * np.exp(slope * (u - ln_im[s]))
        # |d lambda / d ln IM| = |slope| * lambda
        integrand = expected_loss_given_im(model, np.exp(u)) * abs(slope) * rate
        eal += float(np.trapezoid(integrand, u))
    eal += float(expected_loss_given_im(model, hazard.im[-1])) * hazard.rate[-1]
    return eal


def load_hazard_curve(path) -> HazardCurve:
    """Two-column CSV (im, annual_exceedance_rate); a header row is optional."""
    rows = _read_numeric_csv(path, 2)
    if len(rows) < 2:
        raise EmptyHazard(f"{path}: hazard curve needs at least two points")
    arr = np.array(rows)
    return HazardCurve(arr[:, 0], arr[:, 1])


def _read_numeric_csv(path, n_cols: int, keep_first_as_text: bool = False):
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        records = [r for r in csv.reader(fh) if any(c.strip() for c in r)]
    if not records:
        raise EmptyFile(path)
    out = []
    for i, rec in enumerate(records):
        if len(rec) != n_cols:
            raise NonNumericCell(i, f"expected {n_cols} columns")
        first = 1 if keep_first_as_text else 0
        try:
            vals = [float(c) for c in rec[first:]]
        except ValueError:
            if i == 0:
                continue  # header
            raise NonNumericCell(i, rec) from None
        out.append(([rec[0].strip()] if keep_first_as_text else []) + vals)
    if not out:
        raise EmptyFile(path)
    return out


def load_response_pairs(path) -> dict[str, list[tuple[float, float]]]:
    """Cloud-analysis responses: CSV of (building_id, im, edp) grouped by id."""
    grouped: dict[str, list[tuple[float, float]]] = {}
    for bid, im, edp in _read_numeric_csv(path, 3, keep_first_as_text=True):
        grouped.setdefault(bid, []).append((im, edp))
    return grouped


def loss_model_from_dict(data: Mapping) -> LossModel:
    try:
        assemblies = []
        for item in data["assemblies"]:
            states = [
                DamageState(FragilityCurve(float(ds["median"]), float(ds["dispersion"])),
                            float(ds["cost_ratio"]))
                for ds in item["damage_states"]
            ]
            assemblies.append(Assembly(str(item["name"]), str(item["edp_kind"]), tuple(states)))
        demand = {
            kind: DemandModel(float(d["ln_a"]), float(d["b"]), float(d.get("sigma_ln", 0.0)), kind)
            for kind, d in (data.get("demand_models") or {}).items()
        }
        return LossModel(tuple(assemblies), demand, float(data.get("replacement_cost", 1.0)))
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidConfig(f"malformed loss model: {exc}") from exc


def load_loss_model(path) -> tuple[LossModel, dict]:
    """Loss model plus the raw config (for replacement-cost options)."""
    text = Path(path).read_text(encoding="utf-8")
    if not text.strip():
        raise EmptyFile(path)
    data = yaml.safe_load(text)
    return loss_model_from_dict(data), data


def assess_building(model: LossModel, responses: Mapping[str, Sequence], hazard: HazardCurve,
                    n_nodes: int = 512, replacement_cost: float | None = None) -> float:
    """Fit demand per EDP kind from response pairs, then integrate EAL."""
    demand = {kind: fit_cloud_model(pairs, kind) for kind, pairs in responses.items()}
    return compute_eal(model.with_demand(demand, replacement_cost), hazard, n_nodes)
