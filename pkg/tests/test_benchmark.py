import numpy as np
import pytest

from shearflow import fem
from shearflow.benchmark import TARGETS, BenchmarkSetup, target_field
from shearflow.exceptions import ParameterError


@pytest.mark.parametrize("kind", ["vortex", "shear"])
def test_targets_are_scaled_to_strength(dofmap4, kind):
    z_d = target_field(dofmap4, kind, g=0.5, strength=3.0)
    assert fem.eval_sym_gradient(z_d).sup_norm() == pytest.approx(1.5)
    assert np.all(z_d.coefficients[dofmap4.dirichlet_mask] == 0.0)


def test_vortex_is_nearly_divergence_free(dofmap8):
    # interpolated curl; divergence is interpolation error only
    z_d = target_field(dofmap8, "vortex", g=0.5)
    assert fem.divergence_l2_norm(z_d) <= 5e-2 * fem.h1_norm(z_d)


def test_zero_and_unknown(dofmap4):
    assert "zero" in TARGETS
    assert np.all(target_field(dofmap4, "zero", g=0.5).coefficients == 0.0)
    with pytest.raises(ParameterError):
        target_field(dofmap4, "spiral", g=0.5)


def test_setup_schedule():
    setup = BenchmarkSetup(nx=4, g=0.4)
    schedule = setup.schedule(polish=False)
    assert schedule.deltas == pytest.approx([0.2, 0.04, 0.008, 0.0016])
    assert not schedule.polish
    problem = setup.build()
    assert problem.params.g == 0.4
    assert problem.alpha == setup.alpha
