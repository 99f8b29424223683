"""Uniform rectangular tensor meshes with Gauss-Lobatto nodes and Dirichlet elimination."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, InputError
from .quadrature import GLBasis, lagrange_matrix, lobatto_rule


@dataclass(frozen=True, eq=False)
class Mesh:
    """Tensor mesh of ``nx * ny`` equal rectangles with degree-``p`` GL nodes.

    Global node numbering is lexicographic with x fastest:
    ``g = iy * n_nodes_x + ix``.  ``interior`` lists the global indices of
    nodes off the boundary, ascending; state vectors live on that set.
    """

    domain: tuple[float, float, float, float]
    nx: int
    ny: int
    p: int
    basis: GLBasis = field(repr=False)
    x_nodes: np.ndarray = field(repr=False)
    y_nodes: np.ndarray = field(repr=False)
    interior: np.ndarray = field(repr=False)

    @property
    def hx(self) -> float:
        return (self.domain[1] - self.domain[0]) / self.nx

    @property
    def hy(self) -> float:
        return (self.domain[3] - self.domain[2]) / self.ny

    @property
    def h(self) -> float:
        return max(self.hx, self.hy)

    @property
    def n_nodes_x(self) -> int:
        return self.nx * self.p + 1

    @property
    def n_nodes_y(self) -> int:
        return self.ny * self.p + 1

    @property
    def n_nodes(self) -> int:
        return self.n_nodes_x * self.n_nodes_y

    @property
    def n_interior(self) -> int:
        return self.interior.size

    @property
    def n_elements(self) -> int:
        return self.nx * self.ny

    @property
    def jac_det(self) -> float:
        return 0.25 * self.hx * self.hy

    def global_of(self, element: int, i: int, j: int) -> int:
        """Global index of local tensor node ``(i, j)`` (i along x) in ``element``."""
        if not 0 <= element < self.n_elements:
            raise IndexError(f"element {element} out of range")
        if not (0 <= i <= self.p and 0 <= j <= self.p):
            raise IndexError(f"local node ({i}, {j}) out of range for p={self.p}")
        kx, ky = element % self.nx, element // self.nx
        return (ky * self.p + j) * self.n_nodes_x + kx * self.p + i

    def element_dofs(self) -> np.ndarray:
        """Global indices of every element's local nodes, shape ``(n_elements, (p+1)**2)``.

        Local ordering matches the global one: local ``a = j * (p+1) + i``.
        """
        p = self.p
        kx = np.arange(self.nx) * p
        ky = np.arange(self.ny) * p
        loc = np.arange(p + 1)
        ix = kx[None, :, None, None] + loc[None, None, None, :]
        iy = ky[:, None, None, None] + loc[None, None, :, None]
        g = iy * self.n_nodes_x + ix
        return g.reshape(self.n_elements, (p + 1) ** 2)

    def node_coords(self, index) -> tuple:
        """Physical coordinates of global node(s) ``index``."""
        idx = np.asarray(index)
        if np.any(idx < 0) or np.any(idx >= self.n_nodes):
            raise IndexError(f"node index out of range [0, {self.n_nodes})")
        x = self.x_nodes[idx % self.n_nodes_x]
        y = self.y_nodes[idx // self.n_nodes_x]
        if idx.ndim == 0:
            return float(x), float(y)
        return x, y

    def interior_coords(self) -> tuple[np.ndarray, np.ndarray]:
        return self.node_coords(self.interior)

    def all_coords(self) -> tuple[np.ndarray, np.ndarray]:
        return self.node_coords(np.arange(self.n_nodes))

    def to_full(self, c: np.ndarray) -> np.ndarray:
        """Scatter interior coefficients into a full nodal vector (boundary = 0)."""
        c = np.asarray(c)
        if c.shape != (self.n_interior,):
            raise InputError(f"expected {self.n_interior} interior values, got shape {c.shape}")
        full = np.zeros(self.n_nodes, dtype=c.dtype)
        full[self.interior] = c
        return full

    def interpolate(self, f) -> np.ndarray:
        """Nodal interpolation: coefficients are samples ``f(x, y)`` at interior nodes.

        ``f`` is called once with coordinate arrays and must broadcast.
        """
        x, y = self.interior_coords()
        vals = np.asarray(f(x, y))
        vals = np.broadcast_to(vals, x.shape).copy()
        if not np.all(np.isfinite(vals)):
            raise InputError("interpolated function produced non-finite values")
        return vals

    def evaluate(self, c: np.ndarray, x, y) -> np.ndarray:
        """Evaluate the FE function with interior coefficients ``c`` at points ``(x, y)``.

        Points outside the domain raise; points on element interfaces use the
        element to their lower-left, which is exact by continuity.
        """
        full = self.to_full(c)
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        ax, bx, ay, by = self.domain
        eps = 1e-12 * max(bx - ax, by - ay)
        if np.any((x < ax - eps) | (x > bx + eps) | (y < ay - eps) | (y > by + eps)):
            raise InputError("evaluation point outside the mesh domain")
        sx = (x - ax) / self.hx
        sy = (y - ay) / self.hy
        kx = np.clip(np.floor(sx).astype(int), 0, self.nx - 1)
        ky = np.clip(np.floor(sy).astype(int), 0, self.ny - 1)
        xi = np.clip(2.0 * (sx - kx) - 1.0, -1.0, 1.0)
        eta = np.clip(2.0 * (sy - ky) - 1.0, -1.0, 1.0)
        lx = lagrange_matrix(self.basis, xi)
        ly = lagrange_matrix(self.basis, eta)
        p = self.p
        loc = np.arange(p + 1)
        gx = kx[:, None] * p + loc[None, :]
        gy = ky[:, None] * p + loc[None, :]
        block = full.reshape(self.n_nodes_y, self.n_nodes_x)[gy[:, :, None], gx[:, None, :]]
        return np.einsum("nj,nji,ni->n", ly, block, lx)


def _axis_nodes(a: float, b: float, n_el: int, basis: GLBasis) -> np.ndarray:
    h = (b - a) / n_el
    ref = 0.5 * (basis.nodes[:-1] + 1.0)
    k = np.arange(n_el)
    pts = a + (k[:, None] + ref[None, :]) * h
    return np.concatenate([pts.ravel(), [b]])


def build_mesh(domain, nx: int, ny: int, p: int) -> Mesh:
    """Build the uniform ``nx`` by ``ny`` mesh of degree ``p`` on ``domain = (ax, bx, ay, by)``."""
    try:
        ax, bx, ay, by = (float(v) for v in domain)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"domain must be four numbers, got {domain!r}") from exc
    if not all(np.isfinite([ax, bx, ay, by])) or bx <= ax or by <= ay:
        raise ConfigurationError(f"degenerate rectangle {domain!r}")
    for name, val in (("nx", nx), ("ny", ny)):
        if isinstance(val, bool) or not isinstance(val, (int, np.integer)) or val < 1:
            raise ConfigurationError(f"{name} must be a positive integer, got {val!r}")
    basis = lobatto_rule(p)
    nx, ny = int(nx), int(ny)
    xs = _axis_nodes(ax, bx, nx, basis)
    ys = _axis_nodes(ay, by, ny, basis)
    nnx, nny = nx * p + 1, ny * p + 1
    ix, iy = np.arange(1, nnx - 1), np.arange(1, nny - 1)
    interior = (iy[:, None] * nnx + ix[None, :]).ravel()
    for arr in (xs, ys, interior):
        arr.setflags(write=False)
    return Mesh((ax, bx, ay, by), nx, ny, int(p), basis, xs, ys, interior)
