import numpy as np
import pytest

from shearflow.exceptions import ParameterError
from shearflow.tensor_properties import (
    JACOBIAN_BOUND,
    JACOBIAN_REDUCTION_PER_DECADE,
    random_symmetric,
    run_property_suite,
    sample_strains,
)


@pytest.fixture(scope="module")
def report():
    return run_property_suite(n_samples=2000, seed=42, g=0.5)


def test_suite_passes(report):
    failed = [c.name for c in report.checks if not c.passed]
    assert report.passed, failed


def test_monotonicity_worst_case(report):
    checks = {c.name: c for c in report.checks}
    assert checks["m_monotone"].worst >= -1e-10
    assert checks["m_delta_monotone"].worst >= -1e-10
    assert checks["jacobian_psd"].worst >= -1e-10


def test_constants_reported(report):
    assert 0.0 < report.consistency_constant <= 1.0
    assert 0.0 < report.jacobian_bound <= JACOBIAN_BOUND
    deltas = [row["delta"] for row in report.jacobian_convergence]
    assert deltas == sorted(deltas, reverse=True)


def test_seeded_runs_are_identical():
    a = run_property_suite(n_samples=300, seed=7, g=0.5, dims=(2,))
    b = run_property_suite(n_samples=300, seed=7, g=0.5, dims=(2,))
    assert a.to_dict() == b.to_dict()


def test_table_has_one_row_per_check(report):
    table = report.table()
    assert len(table) == len(report.checks)
    assert {"name", "worst", "threshold", "passed"} <= set(table.columns)


def test_rejects_delta_not_below_g():
    with pytest.raises(ParameterError):
        run_property_suite(n_samples=10, g=0.5, deltas=[0.5])


def test_samplers(rng):
    S = random_symmetric(rng, 10, 3)
    assert np.allclose(S, np.swapaxes(S, -1, -2))
    assert np.allclose(np.linalg.norm(S, axis=(1, 2)), 1.0)
    E = sample_strains(rng, 1000, 2, 0.5)
    assert np.linalg.norm(E, axis=(1, 2)).max() <= 1.5 + 1e-12


def test_jacobian_gap_shrinks_per_decade_of_delta(report):
    rows = report.jacobian_convergence
    assert rows[0]["sup_gap"] > 0.0
    for row in rows[1:]:
        assert row["reduction_per_decade"] >= JACOBIAN_REDUCTION_PER_DECADE
        assert row["sup_gap"] <= rows[0]["sup_gap"]
    checks = {c.name: c for c in report.checks}
    assert checks["jacobian_convergence_off_kink"].passed


def test_tenfold_delta_drop_cuts_jacobian_gap_fivefold():
    report = run_property_suite(n_samples=500, seed=3, g=0.5, deltas=[0.4, 0.04], dims=(2,))
    row = report.jacobian_convergence[1]
    assert row["reduction"] >= 5.0
