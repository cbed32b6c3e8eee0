"""Verification suite: analytic gradients vs central finite differences.

Every layer kind appears in the case list. The checker never calls
backward itself, so agreement here means the hand-derived backward passes
match the mathematical gradient of the forward computation.
"""

import numpy as np
import pytest

import gradient_cases
from stsc.nn.gradcheck import (
    check_layer_gradients,
    finite_difference,
    max_relative_error,
)

TOLERANCE = 1e-4
CASES = gradient_cases.build_cases()


@pytest.mark.parametrize("name", sorted(CASES))
def test_layer_gradients_match_finite_differences(name):
    layer, x, training = CASES[name]()
    errors = check_layer_gradients(gradient_cases.make_rng, layer,
                                   x=x, training=training)
    worst = max(errors.values())
    assert worst <= TOLERANCE, f"{name}: {errors}"


def test_finite_difference_on_quadratic_is_exact():
    a = np.array([1.0, -2.0, 3.0])
    grad = finite_difference(lambda: float(np.sum(a ** 2)), a)
    np.testing.assert_allclose(grad, 2 * a, rtol=1e-8)


def test_max_relative_error_uses_floor():
    assert max_relative_error(np.zeros(3), np.zeros(3)) == 0.0
    # tiny absolute differences below the floor are measured against the floor
    assert max_relative_error(np.array([1e-9]), np.array([0.0])) == pytest.approx(1e-4)


def test_case_list_covers_every_layer_kind():
    covered = "".join(sorted(CASES))
    for kind in ["conv", "tconv", "batchnorm", "tanh", "sigmoid", "relu",
                 "linear", "avgpool", "upsample", "dropout", "dense",
                 "flatten", "reshape", "residual", "sequential"]:
        assert kind in covered, f"no gradient case exercises {kind}"
