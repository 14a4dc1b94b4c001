import pytest

from gradcheck import CASES, TOLERANCE, run_case


@pytest.mark.parametrize("name", sorted(CASES))
def test_analytic_gradient_matches_central_difference(name):
    errors = run_case(CASES[name])
    assert max(errors.values()) <= TOLERANCE, errors
