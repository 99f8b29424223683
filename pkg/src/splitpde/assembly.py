"""Galerkin matrices for the GL spectral-element discretization.

The mass matrix is lumped by collocating basis nodes with the quadrature
nodes, so it is stored as a vector.  The stiffness matrix is sparse CSR over
the interior (Dirichlet-eliminated) nodes.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.io
import scipy.sparse as sp

from .errors import ConfigurationError
from .mesh import Mesh
from .quadrature import GLBasis, gauss_legendre, lagrange_matrix

log = logging.getLogger(__name__)

STIFFNESS_RULES = ("auto", "lobatto", "gauss")
EXACTNESS_TOL = 1e-12


def reference_mass_1d(basis: GLBasis, rule: str) -> np.ndarray:
    """``int L_a L_b`` on [-1, 1] under the given rule (``lobatto`` is diagonal)."""
    if rule == "lobatto":
        return np.diag(basis.weights)
    # p + 2 Gauss points: exact to degree 2p + 3 > 2p
    xg, wg = gauss_legendre(basis.degree + 2)
    L = lagrange_matrix(basis, xg)
    m = L.T @ (wg[:, None] * L)
    return 0.5 * (m + m.T)


def reference_stiffness_1d(basis: GLBasis) -> np.ndarray:
    """``int L_a' L_b'`` on [-1, 1]; degree 2p - 2, so the GL rule is exact."""
    D = basis.deriv
    k = D.T @ (basis.weights[:, None] * D)
    return 0.5 * (k + k.T)


def stiffness_quadrature_defect(basis: GLBasis, hx: float = 2.0, hy: float = 2.0) -> float:
    """Max entry deviation of the GL-quadrature element stiffness from the exact one."""
    gl = element_stiffness(basis, hx, hy, "lobatto")
    exact = element_stiffness(basis, hx, hy, "gauss")
    return float(np.max(np.abs(gl - exact)))


def resolve_stiffness_rule(basis: GLBasis, rule: str = "auto") -> str:
    """Pick the quadrature for K.

    ``auto`` keeps the Lobatto rule only if it reproduces the exact element
    integrals to ``EXACTNESS_TOL``; otherwise it falls back to Gauss-Legendre.
    """
    if rule not in STIFFNESS_RULES:
        raise ConfigurationError(f"unknown stiffness rule {rule!r}; expected one of {STIFFNESS_RULES}")
    if rule != "auto":
        return rule
    defect = stiffness_quadrature_defect(basis)
    if defect <= EXACTNESS_TOL:
        return "lobatto"
    log.debug("GL stiffness not exact for p=%d (defect %.3e); using Gauss-Legendre", basis.degree, defect)
    return "gauss"


def element_stiffness(basis: GLBasis, hx: float, hy: float, rule: str) -> np.ndarray:
    """Element stiffness with local index ``a = j*(p+1) + i`` (i along x)."""
    kr = reference_stiffness_1d(basis)
    mr = reference_mass_1d(basis, rule)
    kx, ky = (2.0 / hx) * kr, (2.0 / hy) * kr
    mx, my = (hx / 2.0) * mr, (hy / 2.0) * mr
    ke = np.kron(my, kx) + np.kron(ky, mx)
    return 0.5 * (ke + ke.T)


def assemble_mass(mesh: Mesh, full: bool = False) -> np.ndarray:
    """Diagonal of the lumped mass matrix.

    Entry ``i`` sums ``w_a * w_b * jac_det`` over the elements containing node i.
    """
    w = mesh.basis.weights
    local = np.kron(w, w) * mesh.jac_det
    dofs = mesh.element_dofs()
    m = np.zeros(mesh.n_nodes)
    # element-ordered accumulation keeps the sum order fixed
    np.add.at(m, dofs.ravel(), np.tile(local, mesh.n_elements))
    return m if full else m[mesh.interior]


def assemble_stiffness(mesh: Mesh, rule: str = "auto", full: bool = False) -> sp.csr_array:
    """Sparse stiffness matrix, exactly symmetric (upper triangle mirrored)."""
    rule = resolve_stiffness_rule(mesh.basis, rule)
    ke = element_stiffness(mesh.basis, mesh.hx, mesh.hy, rule)
    dofs = mesh.element_dofs()
    nloc = dofs.shape[1]
    rows = np.repeat(dofs, nloc, axis=1).ravel()
    cols = np.tile(dofs, (1, nloc)).ravel()
    data = np.tile(ke.ravel(), mesh.n_elements)
    upper = rows <= cols
    n = mesh.n_nodes
    K = sp.coo_array((data[upper], (rows[upper], cols[upper])), shape=(n, n)).tocsr()
    K.sum_duplicates()
    K = (K + sp.triu(K, k=1, format="csr").T).tocsr()
    if not full:
        idx = mesh.interior
        K = K[idx][:, idx]
    K = sp.csr_array(K)
    K.sort_indices()
    return K


def compute_F(M: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Density load vector ``M * |c|^2`` (the lumped form of ``sum_jk c_j conj(c_k) (v_j v_k, v_i)``)."""
    return M * (c.real**2 + c.imag**2)


def potential_diagonal(d: np.ndarray) -> np.ndarray:
    """Diagonal of ``M^-1 Phi(d)``.

    Under GL collocation ``Phi_ij(d) = d_i M_ii delta_ij``, so this is ``d`` itself.
    """
    return np.array(d, dtype=float, copy=True)


@dataclass(eq=False)
class Operators:
    """Assembled interior-node operators for one mesh."""

    mesh: Mesh
    M: np.ndarray
    K: sp.csr_array
    stiffness_rule: str
    expv_tol: float = 1e-12
    cg_tol: float = 1e-12
    poisson_method: str = "auto"
    _S: sp.csr_array | None = field(default=None, repr=False)
    _poisson: object = field(default=None, repr=False)
    _krylov: object = field(default=None, repr=False)

    @property
    def basis(self) -> GLBasis:
        return self.mesh.basis

    @property
    def n(self) -> int:
        return self.M.size

    @property
    def sqrt_M(self) -> np.ndarray:
        return np.sqrt(self.M)

    @property
    def S(self) -> sp.csr_array:
        """Symmetrized operator ``M^-1/2 K M^-1/2``."""
        if self._S is None:
            r = 1.0 / np.sqrt(self.M)
            S = sp.csr_array(sp.diags_array(r) @ self.K @ sp.diags_array(r))
            S = sp.csr_array(0.5 * (S + S.T))
            S.sort_indices()
            self._S = S
        return self._S

    def m_norm(self, c: np.ndarray) -> float:
        return float(np.sqrt(np.sum(self.M * np.abs(c) ** 2)))

    def dump(self, prefix) -> None:
        """Write M (as a diagonal matrix) and K in MatrixMarket coordinate format."""
        scipy.io.mmwrite(f"{prefix}_M.mtx", sp.coo_array(sp.diags_array(self.M)))
        scipy.io.mmwrite(f"{prefix}_K.mtx", sp.coo_array(self.K), symmetry="symmetric")


def build_operators(mesh: Mesh, stiffness_rule: str = "auto", expv_tol: float = 1e-12,
                    cg_tol: float = 1e-12, poisson_method: str = "auto") -> Operators:
    rule = resolve_stiffness_rule(mesh.basis, stiffness_rule)
    return Operators(mesh, assemble_mass(mesh), assemble_stiffness(mesh, rule), rule,
                     expv_tol=expv_tol, cg_tol=cg_tol, poisson_method=poisson_method)
