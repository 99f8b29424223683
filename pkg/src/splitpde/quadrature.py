"""Gauss-Lobatto rules and nodal Lagrange bases on the reference interval [-1, 1]."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

MAX_DEGREE = 16
_NODE_HIT = np.sqrt(np.finfo(float).tiny)
_NEWTON_TOL = 1e-15
_NEWTON_MAXITER = 100


@dataclass(frozen=True, eq=False)
class GLBasis:
    """Reference-element data for degree ``p``.

    ``deriv[i, j]`` is the derivative of the j-th cardinal polynomial at node i.
    """

    degree: int
    nodes: np.ndarray
    weights: np.ndarray
    deriv: np.ndarray = field(repr=False)
    bary: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.degree + 1


def _legendre_pair(p: int, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (P_p(x), P_{p-1}(x)) by the three-term recurrence."""
    prev = np.ones_like(x)
    cur = x.copy()
    for k in range(2, p + 1):
        prev, cur = cur, ((2 * k - 1) * x * cur - (k - 1) * prev) / k
    return cur, prev


def _lobatto_nodes_left(p: int) -> np.ndarray:
    # Lobatto points are the zeros of (1 - x^2) P_p'(x). The Newton update below
    # is the one for that polynomial written through the recurrence, started from
    # Chebyshev-Lobatto points.
    half = p // 2 + 1
    x = -np.cos(np.pi * np.arange(half) / p)
    for _ in range(_NEWTON_MAXITER):
        pp, pm = _legendre_pair(p, x)
        step = (x * pp - pm) / ((p + 1) * pp)
        x = x - step
        if np.max(np.abs(step)) <= _NEWTON_TOL:
            break
    x[0] = -1.0
    if p % 2 == 0:
        x[-1] = 0.0
    return x


def lobatto_rule(p: int) -> GLBasis:
    """Gauss-Lobatto nodes, weights and derivative matrix for degree ``p``.

    The rule has ``p + 1`` points including both endpoints and integrates
    polynomials of degree ``<= 2p - 1`` exactly.
    """
    if isinstance(p, bool) or not isinstance(p, (int, np.integer)):
        raise ConfigurationError(f"degree must be an integer, got {p!r}")
    p = int(p)
    if not 1 <= p <= MAX_DEGREE:
        raise ConfigurationError(f"degree must lie in [1, {MAX_DEGREE}], got {p}")

    left = _lobatto_nodes_left(p)
    n_left = (p + 1) // 2
    nodes = np.empty(p + 1)
    nodes[:n_left] = left[:n_left]
    nodes[p + 1 - n_left:] = -left[:n_left][::-1]
    if p % 2 == 0:
        nodes[p // 2] = 0.0

    pp, _ = _legendre_pair(p, nodes)
    weights = 2.0 / (p * (p + 1) * pp**2)
    weights = 0.5 * (weights + weights[::-1])

    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    bary = 1.0 / np.prod(diff, axis=1)
    deriv = (bary[None, :] / bary[:, None]) / diff
    np.fill_diagonal(deriv, 0.0)
    # negative-sum trick: rows annihilate constants to round-off
    np.fill_diagonal(deriv, -deriv.sum(axis=1))

    for arr in (nodes, weights, deriv, bary):
        arr.setflags(write=False)
    return GLBasis(p, nodes, weights, deriv, bary)


def lagrange_eval(basis: GLBasis, j: int, x: float) -> float:
    """Value of the j-th cardinal polynomial at ``x``."""
    if not 0 <= j <= basis.degree:
        raise IndexError(f"node index {j} out of range for degree {basis.degree}")
    others = np.delete(basis.nodes, j)
    return float(np.prod((x - others) / (basis.nodes[j] - others)))


def lagrange_matrix(basis: GLBasis, x) -> np.ndarray:
    """All cardinal polynomials at the points ``x``; shape ``(len(x), p + 1)``.

    Points that coincide with a node return the exact unit row.  So do points
    closer than sqrt(tiny): there the row is the unit row to machine precision,
    and the barycentric quotient would overflow.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    diff = x[:, None] - basis.nodes[None, :]
    hit = np.abs(diff) < _NODE_HIT
    safe = np.where(hit, 1.0, diff)
    terms = basis.bary[None, :] / safe
    out = terms / terms.sum(axis=1, keepdims=True)
    rows = hit.any(axis=1)
    if rows.any():
        out[rows] = hit[rows].astype(float)
    return out


def derivative_matrix(basis: GLBasis) -> np.ndarray:
    return basis.deriv


def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    """``n``-point Gauss-Legendre rule, exact to degree ``2n - 1``."""
    return np.polynomial.legendre.leggauss(n)
