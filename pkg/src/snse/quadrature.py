"""Symmetric quadrature rules on triangles.

Points are barycentric triples; weights sum to one and must be scaled by the
triangle area.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import roots_jacobi, roots_legendre


@dataclass(frozen=True)
class TriangleRule:
    name: str
    degree: int
    points: np.ndarray  # (nq, 3) barycentric
    weights: np.ndarray  # (nq,)

    @property
    def size(self) -> int:
        return len(self.weights)


def _orbit3(a: float) -> list[tuple[float, float, float]]:
    b = 1.0 - 2.0 * a
    return [(a, a, b), (a, b, a), (b, a, a)]


def _centroid_rule() -> TriangleRule:
    return TriangleRule("centroid", 1, np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([1.0]))


def _strang_fix3() -> TriangleRule:
    pts = _orbit3(1 / 6)
    return TriangleRule("strang-fix-3", 2, np.array(pts), np.full(3, 1 / 3))


def _dunavant6() -> TriangleRule:
    a1, w1 = 0.445948490915965, 0.223381589678011
    a2, w2 = 0.091576213509771, 0.109951743655322
    pts = _orbit3(a1) + _orbit3(a2)
    w = np.array([w1] * 3 + [w2] * 3)
    return TriangleRule("dunavant-6", 4, np.array(pts), w / w.sum())


def _radon7() -> TriangleRule:
    s = np.sqrt(15.0)
    a1, w1 = (6 - s) / 21, (155 - s) / 1200
    a2, w2 = (6 + s) / 21, (155 + s) / 1200
    pts = [(1 / 3, 1 / 3, 1 / 3)] + _orbit3(a1) + _orbit3(a2)
    w = np.array([9 / 40] + [w1] * 3 + [w2] * 3)
    return TriangleRule("radon-7", 5, np.array(pts), w)


_RULES = [_centroid_rule(), _strang_fix3(), _dunavant6(), _radon7()]


def triangle_rule(degree: int) -> TriangleRule:
    """Cheapest rule exact for polynomials of total degree ``degree``."""
    for rule in _RULES:
        if rule.degree >= degree:
            return rule
    raise ValueError(f"no triangle rule of degree {degree} available (max {_RULES[-1].degree})")


def conical_rule(order: int) -> TriangleRule:
    """Stroud conical product rule with ``order**2`` points, exact to degree
    ``2 * order - 1``; used for loads of non-polynomial fields."""
    if order < 1:
        raise ValueError("order must be >= 1")
    xj, wj = roots_jacobi(order, 1.0, 0.0)  # weight (1 - x) collapses the triangle
    xl, wl = roots_legendre(order)
    s, ws = 0.5 * (1 + xj), wj / 4
    t, wt = 0.5 * (1 + xl), wl / 2
    S, T = np.meshgrid(s, t, indexing="ij")
    x, y = S.ravel(), (T * (1 - S)).ravel()
    w = 2.0 * np.outer(ws, wt).ravel()
    return TriangleRule(f"conical-{order}", 2 * order - 1, np.column_stack([1 - x - y, x, y]), w)


def require_degree(rule: TriangleRule, degree: int, what: str) -> None:
    if rule.degree < degree:
        raise ValueError(f"{what} needs a rule of degree >= {degree}, got {rule.name} (degree {rule.degree})")
