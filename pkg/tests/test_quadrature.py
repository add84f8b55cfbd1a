from math import factorial

import numpy as np
import pytest

from snse.quadrature import require_degree, triangle_rule


def _exact_monomial(a, b):
    """int over the reference triangle of x^a y^b."""
    return factorial(a) * factorial(b) / factorial(a + b + 2)


def _apply(rule, a, b):
    x, y = rule.points[:, 1], rule.points[:, 2]
    return 0.5 * np.dot(rule.weights, x ** a * y ** b)


@pytest.mark.parametrize("degree", [1, 2, 4, 5])
def test_rule_exact_up_to_degree(degree):
    rule = triangle_rule(degree)
    assert rule.degree >= degree
    assert np.allclose(rule.points.sum(axis=1), 1.0, atol=1e-15)
    assert rule.weights.sum() == pytest.approx(1.0, abs=1e-14)
    for total in range(rule.degree + 1):
        for a in range(total + 1):
            assert _apply(rule, a, total - a) == pytest.approx(_exact_monomial(a, total - a), rel=1e-13)


@pytest.mark.parametrize("degree", [1, 2, 4])
def test_rule_degree_is_sharp(degree):
    rule = triangle_rule(degree)
    top = rule.degree + 1
    errs = [abs(_apply(rule, a, top - a) - _exact_monomial(a, top - a)) for a in range(top + 1)]
    assert max(errs) > 1e-8


def test_unavailable_degree():
    with pytest.raises(ValueError):
        triangle_rule(9)


def test_require_degree():
    require_degree(triangle_rule(5), 5, "x")
    with pytest.raises(ValueError, match="degree >= 5"):
        require_degree(triangle_rule(4), 5, "convection")
