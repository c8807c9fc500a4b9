import numpy as np
import pytest

from pbsd_inverse.dataset import Feature, FeatureSchema, FeatureTable


@pytest.fixture
def small_schema():
    return FeatureSchema((
        Feature("NS", 1.0, 19.0, "geometry", "stories"),
        Feature("I_b", 100.0, 5000.0, "design", "in4"),
        Feature("W_T", 200.0, 6000.0, "mass", "kip"),
    ))


@pytest.fixture
def random_table(small_schema):
    rng = np.random.default_rng(11)
    lo, hi = small_schema.lower, small_schema.upper
    rows = lo + (hi - lo) * rng.random((40, 3))
    return FeatureTable(small_schema, rows, rng.random(40) + 0.5)


def unit_schema(p, role="design"):
    return FeatureSchema(tuple(Feature(f"x{j}", -1e6, 1e6, role) for j in range(p)))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
