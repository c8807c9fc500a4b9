import math

import numpy as np
import pytest
import yaml
from hypothesis import given, settings, strategies as st

from pbsd_inverse.errors import (
    EmptyFile,
    EmptyHazard,
    InsufficientData,
    InvalidConfig,
    MissingDemandModel,
    NonPositiveEdp,
    NonPositiveValue,
)
from pbsd_inverse.pbe import (
    Assembly,
    DamageState,
    DemandModel,
    FragilityCurve,
    HazardCurve,
    LossModel,
    assess_building,
    compute_eal,
    damage_state_probability,
    expected_loss_given_im,
    expected_loss_given_im_quadrature,
    fit_cloud_model,
    load_hazard_curve,
    load_loss_model,
    load_response_pairs,
    std_normal_cdf,
)

from oracles import eal_stieltjes, ols_normal_equations, phi_series, phi_tail


def one_state_model(median=0.01, dispersion=0.4, cost=0.3, demand=None, replacement=1.0):
    demand = demand or DemandModel(math.log(median), 1.0, 0.0, "drift")
    asm = Assembly("a", "drift", (DamageState(FragilityCurve(median, dispersion), cost),))
    return LossModel((asm,), {"drift": demand}, replacement)


def random_loss_model(rng):
    assemblies = []
    for a, kind in enumerate(("drift", "acceleration")):
        n_states = int(rng.integers(1, 5))
        base = 0.005 if kind == "drift" else 0.2
        medians = base * np.cumsum(rng.uniform(0.5, 2.0, n_states))
        costs = np.sort(rng.uniform(0.0, 1.0, n_states))
        states = tuple(DamageState(FragilityCurve(float(m), float(rng.uniform(0.2, 0.8))), float(c))
                       for m, c in zip(medians, costs))
        assemblies.append(Assembly(f"asm{a}", kind, states))
    demand = {
        "drift": DemandModel(math.log(0.01 * rng.uniform(0.5, 2)), float(rng.uniform(0.6, 1.4)),
                             float(rng.uniform(0.1, 0.6)), "drift"),
        "acceleration": DemandModel(math.log(0.5 * rng.uniform(0.5, 2)), float(rng.uniform(0.3, 1.0)),
                                    float(rng.uniform(0.1, 0.6)), "acceleration"),
    }
    return LossModel(tuple(assemblies), demand, float(rng.uniform(0.5, 5.0)))


def two_segment_hazard():
    return HazardCurve(np.array([0.05, 0.4, 2.0]), np.array([0.05, 0.004, 1e-4]))


# standard normal ------------------------------------------------------------

def test_cdf_values():
    assert std_normal_cdf(0.0) == 0.5
    assert std_normal_cdf(1.0) == pytest.approx(0.841345, abs=1e-6)
    assert std_normal_cdf(-8.0) < 1e-14


@pytest.mark.parametrize("z", np.linspace(-5, 5, 41))
def test_cdf_matches_series(z):
    assert std_normal_cdf(z) == pytest.approx(phi_series(z), abs=1e-12)


@pytest.mark.parametrize("z", [-6.0, -8.0, -10.0, -20.0])
def test_cdf_tail_matches_continued_fraction(z):
    assert std_normal_cdf(z) == pytest.approx(phi_tail(z), rel=1e-10)


@settings(max_examples=200, deadline=None)
@given(st.floats(-30, 30))
def test_cdf_symmetry(z):
    assert std_normal_cdf(z) + std_normal_cdf(-z) == pytest.approx(1.0, abs=1e-12)


def test_cdf_monotone():
    z = np.linspace(-10, 10, 10_001)
    assert np.all(np.diff(std_normal_cdf(z)) >= 0)


# cloud fit ------------------------------------------------------------------

def test_cloud_exact_power_law():
    im = np.array([0.1, 0.2, 0.5, 1.0, 1.5])
    dm = fit_cloud_model(list(zip(im, 0.2 * im**1.5)))
    assert dm.ln_a == pytest.approx(math.log(0.2), abs=1e-10)
    assert dm.b == pytest.approx(1.5, abs=1e-10)
    assert dm.sigma_ln == pytest.approx(0.0, abs=1e-10)


def test_cloud_constant_edp():
    dm = fit_cloud_model([(0.1, 0.02), (0.3, 0.02), (0.9, 0.02)])
    assert dm.b == pytest.approx(0.0, abs=1e-12)


def test_cloud_matches_normal_equations():
    rng = np.random.default_rng(20)
    im = rng.uniform(0.05, 2.0, 20)
    edp = 0.01 * im**1.2 * np.exp(rng.normal(0, 0.3, 20))
    dm = fit_cloud_model(list(zip(im, edp)))
    ln_a, b, sigma = ols_normal_equations(np.log(im), np.log(edp))
    assert dm.ln_a == pytest.approx(ln_a, abs=1e-8)
    assert dm.b == pytest.approx(b, abs=1e-8)
    assert dm.sigma_ln == pytest.approx(sigma, abs=1e-8)


def test_cloud_errors():
    with pytest.raises(InsufficientData):
        fit_cloud_model([(0.1, 0.01), (0.2, 0.02)])
    with pytest.raises(NonPositiveValue):
        fit_cloud_model([(0.1, 0.01), (0.2, 0.0), (0.3, 0.03)])


# fragility ------------------------------------------------------------------

def test_fragility_at_median():
    assert damage_state_probability(FragilityCurve(0.02, 0.6), 0.02) == pytest.approx(0.5)


def test_fragility_one_sigma():
    p = damage_state_probability(FragilityCurve(0.01, 0.5), 0.01 * math.exp(0.5))
    assert p == pytest.approx(0.841345, abs=1e-6)


def test_fragility_limits():
    curve = FragilityCurve(0.01, 0.5)
    assert damage_state_probability(curve, 1e-300) == 0.0
    assert damage_state_probability(curve, 1e300) == 1.0
    edp = np.geomspace(1e-6, 10, 1000)
    assert np.all(np.diff(damage_state_probability(curve, edp)) >= 0)
    with pytest.raises(NonPositiveEdp):
        damage_state_probability(curve, 0.0)


def test_assembly_validation():
    with pytest.raises(ValueError):
        Assembly("a", "drift", (DamageState(FragilityCurve(0.02, 0.4), 0.1),
                                DamageState(FragilityCurve(0.01, 0.4), 0.2)))
    with pytest.raises(ValueError):
        Assembly("a", "drift", (DamageState(FragilityCurve(0.01, 0.4), 0.3),
                                DamageState(FragilityCurve(0.02, 0.4), 0.2)))


# expected loss given IM -----------------------------------------------------

def test_loss_half_at_median():
    model = one_state_model(cost=0.4, replacement=3.0)
    assert expected_loss_given_im(model, 1.0) == pytest.approx(0.5 * 0.4 * 3.0)


def test_loss_step_limit():
    demand = DemandModel(math.log(0.02), 1.0, 0.0, "drift")
    model = one_state_model(median=0.01, dispersion=1e-9, cost=0.7, demand=demand)
    assert expected_loss_given_im(model, 1.0) == pytest.approx(0.7, abs=1e-12)


def test_missing_demand_model():
    asm = Assembly("a", "acceleration", (DamageState(FragilityCurve(0.3, 0.4), 0.1),))
    with pytest.raises(MissingDemandModel):
        expected_loss_given_im(LossModel((asm,), {}), 0.5)


def test_two_assembly_three_state_quadrature():
    drift = Assembly("partitions", "drift", (
        DamageState(FragilityCurve(0.004, 0.5), 0.02),
        DamageState(FragilityCurve(0.008, 0.5), 0.1),
        DamageState(FragilityCurve(0.02, 0.6), 0.4)))
    accel = Assembly("ceilings", "acceleration", (
        DamageState(FragilityCurve(0.3, 0.6), 0.03),
        DamageState(FragilityCurve(0.6, 0.6), 0.15),
        DamageState(FragilityCurve(1.2, 0.6), 0.5)))
    model = LossModel((drift, accel), {
        "drift": DemandModel(math.log(0.015), 1.1, 0.35, "drift"),
        "acceleration": DemandModel(math.log(0.9), 0.6, 0.3, "acceleration")}, 2.0)
    closed = expected_loss_given_im(model, 0.4)
    assert closed == pytest.approx(expected_loss_given_im_quadrature(model, 0.4), rel=5e-3)


@pytest.mark.parametrize("seed", range(10))
def test_closed_form_matches_quadrature_randomized(seed):
    rng = np.random.default_rng(seed)
    model = random_loss_model(rng)
    for im in rng.uniform(0.05, 2.0, 3):
        q = expected_loss_given_im_quadrature(model, float(im))
        assert expected_loss_given_im(model, im) == pytest.approx(q, rel=5e-3, abs=1e-12)


def test_loss_monotone_in_im():
    model = random_loss_model(np.random.default_rng(3))
    losses = expected_loss_given_im(model, np.geomspace(0.01, 5, 500))
    assert np.all(np.diff(losses) >= -1e-15)


# EAL ------------------------------------------------------------------------

def test_eal_constant_loss_telescopes():
    # a huge median with zero dispersion keeps P(DS) ~ 1 everywhere: loss = cost
    demand = DemandModel(math.log(10.0), 0.0, 0.0, "drift")
    model = one_state_model(median=1e-6, dispersion=1e-3, cost=0.25, demand=demand)
    hazard = two_segment_hazard()
    assert compute_eal(model, hazard, 512) == pytest.approx(0.25 * hazard.rate[0], rel=1e-3)


def test_eal_zero_cost():
    model = one_state_model(cost=0.0)
    assert compute_eal(model, two_segment_hazard()) == 0.0


@pytest.mark.parametrize("seed", range(3))
def test_eal_matches_fine_stieltjes_reference(seed):
    model = random_loss_model(np.random.default_rng(100 + seed))
    hazard = two_segment_hazard()
    assert compute_eal(model, hazard, 512) == pytest.approx(eal_stieltjes(model, hazard), rel=1e-2)


def test_eal_grid_convergence():
    model = random_loss_model(np.random.default_rng(7))
    hazard = two_segment_hazard()
    for n in (256, 512, 1024):
        a, b = compute_eal(model, hazard, n), compute_eal(model, hazard, 2 * n)
        assert abs(a - b) <= 5e-3 * abs(b)


def test_eal_linear_in_costs():
    rng = np.random.default_rng(9)
    model = random_loss_model(rng)
    hazard = two_segment_hazard()
    base = compute_eal(model, hazard)
    doubled = model.with_demand(model.demand_models, 2 * model.replacement_cost)
    assert compute_eal(doubled, hazard) == pytest.approx(2 * base, rel=1e-12)
    scaled = LossModel(tuple(
        Assembly(a.name, a.edp_kind, tuple(DamageState(d.fragility, d.cost_ratio / 2) for d in a.damage_states))
        for a in model.assemblies), model.demand_models, model.replacement_cost)
    assert compute_eal(scaled, hazard) == pytest.approx(base / 2, rel=1e-12)


def test_eal_rejects_coarse_grid():
    with pytest.raises(ValueError):
        compute_eal(one_state_model(), two_segment_hazard(), 8)


def test_hazard_validation_and_interpolation():
    with pytest.raises(EmptyHazard):
        HazardCurve(np.array([0.1]), np.array([0.01]))
    with pytest.raises(ValueError):
        HazardCurve(np.array([0.1, 0.2]), np.array([0.01, 0.02]))
    h = two_segment_hazard()
    assert h(0.4) == pytest.approx(0.004)
    assert h(math.sqrt(0.05 * 0.4)) == pytest.approx(math.sqrt(0.05 * 0.004))
    assert h(3.0) == 0.0


# files ----------------------------------------------------------------------

LOSS_YAML = """
replacement_cost: 1.0
assemblies:
  - name: structural
    edp_kind: drift
    damage_states:
      - {median: 0.005, dispersion: 0.4, cost_ratio: 0.05}
      - {median: 0.015, dispersion: 0.4, cost_ratio: 0.3}
  - name: nonstructural
    edp_kind: acceleration
    damage_states:
      - {median: 0.4, dispersion: 0.6, cost_ratio: 0.1}
"""


def test_loaders(tmp_path):
    (tmp_path / "loss.yaml").write_text(LOSS_YAML)
    (tmp_path / "haz.csv").write_text("im,rate\n0.05,0.05\n0.4,0.004\n2.0,0.0001\n")
    (tmp_path / "drift.csv").write_text(
        "building_id,im,edp\nA,0.1,0.002\nA,0.5,0.01\nA,1.0,0.021\nB,0.2,0.003\nB,0.4,0.006\nB,0.8,0.013\n")
    model, raw = load_loss_model(tmp_path / "loss.yaml")
    assert len(model.assemblies) == 2 and raw["replacement_cost"] == 1.0
    hazard = load_hazard_curve(tmp_path / "haz.csv")
    assert hazard.im.tolist() == [0.05, 0.4, 2.0]
    pairs = load_response_pairs(tmp_path / "drift.csv")
    assert sorted(pairs) == ["A", "B"] and len(pairs["A"]) == 3
    accel = [(0.1, 0.1), (0.5, 0.4), (1.0, 0.7)]
    eal = assess_building(model, {"drift": pairs["A"], "acceleration": accel}, hazard)
    assert eal > 0


def test_empty_response_file(tmp_path):
    (tmp_path / "r.csv").write_text("")
    with pytest.raises(EmptyFile) as info:
        load_response_pairs(tmp_path / "r.csv")
    assert "r.csv" in str(info.value)


def test_malformed_loss_model(tmp_path):
    data = yaml.safe_load(LOSS_YAML)
    del data["assemblies"][0]["damage_states"][0]["median"]
    (tmp_path / "loss.yaml").write_text(yaml.safe_dump(data))
    with pytest.raises(InvalidConfig):
        load_loss_model(tmp_path / "loss.yaml")
