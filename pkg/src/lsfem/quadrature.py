"""Symmetric quadrature rules on triangles.

Rules are stored in barycentric coordinates with weights that sum to one,
so an integral over a triangle ``T`` is ``area(T) * sum(w * f(x_q))``.
"""

import numpy as np

from .errors import ParameterError

_A4 = 0.44594849091596489
_B4 = 0.091576213509770743
_W4A = 0.22338158967801147
_W4B = 0.10995174365532187

_RULES = {
    1: (np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([1.0])),
    2: (
        np.array(
            [
                [2 / 3, 1 / 6, 1 / 6],
                [1 / 6, 2 / 3, 1 / 6],
                [1 / 6, 1 / 6, 2 / 3],
            ]
        ),
        np.full(3, 1 / 3),
    ),
    4: (
        np.array(
            [
                [1 - 2 * _A4, _A4, _A4],
                [_A4, 1 - 2 * _A4, _A4],
                [_A4, _A4, 1 - 2 * _A4],
                [1 - 2 * _B4, _B4, _B4],
                [_B4, 1 - 2 * _B4, _B4],
                [_B4, _B4, 1 - 2 * _B4],
            ]
        ),
        np.array([_W4A, _W4A, _W4A, _W4B, _W4B, _W4B]),
    ),
}


def triangle_rule(degree):
    """Return ``(barycentric points (q, 3), weights (q,))`` exact to ``degree``.

    Available degrees are 1, 2 and 4; degree 3 is served by the degree-4 rule.
    """
    if degree == 3:
        degree = 4
    try:
        bary, weights = _RULES[degree]
    except KeyError:
        raise ParameterError(f"no triangle rule of degree {degree}") from None
    return bary.copy(), weights.copy()


def physical_points(corners, bary):
    """Map barycentric points onto every triangle.

    ``corners`` has shape (T, 3, 2); the result has shape (T, q, 2).
    """
    return np.einsum("qk,tkd->tqd", bary, corners)
