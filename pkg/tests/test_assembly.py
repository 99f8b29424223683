from fractions import Fraction

import numpy as np
import pytest
import scipy.io
import scipy.sparse as sp

from splitpde.assembly import (EXACTNESS_TOL, assemble_mass, assemble_stiffness, build_operators,
                               compute_F, element_stiffness, potential_diagonal, resolve_stiffness_rule,
                               stiffness_quadrature_defect)
from splitpde.errors import ConfigurationError
from splitpde.linalg import pcg
from splitpde.mesh import build_mesh
from splitpde.quadrature import lagrange_matrix, lobatto_rule


def _polymul(a, b):
    out = [Fraction(0)] * (len(a) + len(b) - 1)
    for i, x in enumerate(a):
        for j, y in enumerate(b):
            out[i + j] += x * y
    return out


def exact_1d(basis):
    """Reference mass and stiffness integrals in exact rational arithmetic.

    The float nodes are taken as exact rationals, so the only rounding is the
    final conversion; no quadrature and no Vandermonde solve is involved.
    """
    xs = [Fraction(float(x)) for x in basis.nodes]
    polys = []
    for j, xj in enumerate(xs):
        poly = [Fraction(1)]
        for m, xm in enumerate(xs):
            if m != j:
                poly = _polymul(poly, [-xm / (xj - xm), 1 / (xj - xm)])
        polys.append(poly)
    deriv = lambda q: [k * q[k] for k in range(1, len(q))]
    integral = lambda q: sum(c * (1 - (-1) ** (k + 1)) / (k + 1) for k, c in enumerate(q))
    n = basis.n
    mass = np.array([[float(integral(_polymul(polys[a], polys[b]))) for b in range(n)] for a in range(n)])
    stiff = np.array([[float(integral(_polymul(deriv(polys[a]), deriv(polys[b])))) for b in range(n)]
                      for a in range(n)])
    return mass, stiff


def exact_element(basis, hx, hy):
    mass, stiff = exact_1d(basis)
    return np.kron(hy / 2 * mass, 2 / hx * stiff) + np.kron(2 / hy * stiff, hx / 2 * mass)


def quadrature_values(mesh):
    """Per element: GL tensor weights times jac_det, and basis values at the GL points."""
    b = mesh.basis
    w = np.kron(b.weights, b.weights) * mesh.jac_det
    L = lagrange_matrix(b, b.nodes)
    phi = np.kron(L, L)  # [quad point, local basis]
    return w, phi


def test_mass_single_element_full():
    m = build_mesh((0, 2, 0, 2), 1, 1, 1)
    np.testing.assert_allclose(assemble_mass(m, full=True), np.ones(4), rtol=1e-15)


def test_mass_center_node():
    m = build_mesh((0, 2, 0, 2), 2, 2, 1)
    M = assemble_mass(m)
    assert M.shape == (1,) and M[0] == pytest.approx(1.0, rel=1e-15)


@pytest.mark.parametrize("n, p", [(1, 1), (3, 2), (4, 5), (2, 7)])
def test_mass_sums_to_area(n, p):
    m = build_mesh((0.5, 3.0, -1.0, 0.5), n, n + 1, p)
    M = assemble_mass(m, full=True)
    assert np.all(M > 0)
    assert M.sum() == pytest.approx(2.5 * 1.5, rel=1e-14)


def test_stiffness_center_value():
    m = build_mesh((0, 2, 0, 2), 2, 2, 1)
    K = assemble_stiffness(m)
    assert K.shape == (1, 1)
    assert K[0, 0] == pytest.approx(8 / 3, rel=1e-14)


def test_stiffness_constant_in_kernel():
    m = build_mesh((0, 3, 0, 2), 3, 2, 3)
    K = assemble_stiffness(m, full=True)
    assert np.max(np.abs(K @ np.ones(m.n_nodes))) < 1e-12


@pytest.mark.parametrize("p", range(1, 7))
def test_element_stiffness_vs_exact_integrals(p):
    rng = np.random.default_rng(p)
    basis = lobatto_rule(p)
    hx, hy = rng.uniform(0.1, 2.0, 2)
    rule = resolve_stiffness_rule(basis, "auto")
    assembled = element_stiffness(basis, hx, hy, rule)
    deviation = np.max(np.abs(assembled - exact_element(basis, hx, hy)))
    lobatto_defect = stiffness_quadrature_defect(basis, hx, hy)
    # either GL quadrature is exact, or the fallback rule must have been chosen
    assert rule == "gauss" or lobatto_defect <= EXACTNESS_TOL
    assert deviation <= 1e-12


@pytest.mark.parametrize("p", range(1, 7))
def test_lobatto_stiffness_is_not_exact(p):
    # the transverse mass factor has degree 2p, one beyond the GL rule
    assert stiffness_quadrature_defect(lobatto_rule(p)) > EXACTNESS_TOL
    assert resolve_stiffness_rule(lobatto_rule(p)) == "gauss"


def test_lobatto_rule_can_be_forced():
    m = build_mesh((0, 2, 0, 2), 2, 2, 1)
    # lumped transverse factor: each element contributes 1 instead of 2/3
    assert assemble_stiffness(m, rule="lobatto")[0, 0] == pytest.approx(4.0)
    with pytest.raises(ConfigurationError):
        assemble_stiffness(m, rule="simpson")


def global_1d(n_el, h, basis, local):
    n = n_el * basis.degree + 1
    A = np.zeros((n, n))
    for k in range(n_el):
        s = k * basis.degree
        A[s:s + basis.n, s:s + basis.n] += local
    return A


@pytest.mark.parametrize("p", [1, 2, 3])
def test_global_stiffness_tensor_structure(p):
    m = build_mesh((0, 3, 0, 2), 3, 4, p)
    mass, stiff = exact_1d(m.basis)
    Mx = global_1d(m.nx, m.hx, m.basis, m.hx / 2 * mass)
    Kx = global_1d(m.nx, m.hx, m.basis, 2 / m.hx * stiff)
    My = global_1d(m.ny, m.hy, m.basis, m.hy / 2 * mass)
    Ky = global_1d(m.ny, m.hy, m.basis, 2 / m.hy * stiff)
    oracle = np.kron(My, Kx) + np.kron(Ky, Mx)
    K = assemble_stiffness(m, full=True).toarray()
    np.testing.assert_allclose(K, oracle, atol=1e-12)


@pytest.mark.parametrize("p", [1, 2, 4])
def test_stiffness_symmetric_spd_sparse(p):
    m = build_mesh((0, 5, 0, 5), 5, 4, p)
    K = assemble_stiffness(m)
    assert (K - K.T).count_nonzero() == 0
    assert np.all(np.diff(K.indptr) <= (2 * p + 1) ** 2)
    assert K.has_sorted_indices
    lam = np.linalg.eigvalsh(K.toarray())
    assert lam[0] > 0
    b = np.random.default_rng(0).standard_normal(m.n_interior)
    x, it, res = pcg(K, b, 1.0 / K.diagonal(), tol=1e-12)
    assert res <= 1e-12


def test_assembly_is_deterministic():
    m = build_mesh((0, 5, 0, 5), 6, 6, 3)
    K1, K2 = assemble_stiffness(m), assemble_stiffness(m)
    assert np.array_equal(K1.data, K2.data) and np.array_equal(K1.indices, K2.indices)
    assert np.array_equal(assemble_mass(m), assemble_mass(m))


def brute_force_F(mesh, c):
    full = mesh.to_full(c)
    w, phi = quadrature_values(mesh)
    F = np.zeros(mesh.n_nodes)
    for dofs in mesh.element_dofs():
        psi_q = phi @ full[dofs]
        for a, g in enumerate(dofs):
            F[g] += np.sum(w * phi[:, a] * np.abs(psi_q) ** 2)
    return F[mesh.interior]


def brute_force_phi(mesh, d):
    full = mesh.to_full(d)
    w, phi = quadrature_values(mesh)
    Phi = np.zeros((mesh.n_nodes, mesh.n_nodes))
    for dofs in mesh.element_dofs():
        d_q = phi @ full[dofs]
        Phi[np.ix_(dofs, dofs)] += phi.T @ ((w * d_q)[:, None] * phi)
    idx = mesh.interior
    return Phi[np.ix_(idx, idx)]


def test_compute_F_trivial_cases():
    m = build_mesh((0, 3, 0, 3), 3, 3, 2)
    M = assemble_mass(m)
    np.testing.assert_array_equal(compute_F(M, np.zeros(m.n_interior, complex)), 0)
    e = np.zeros(m.n_interior, complex)
    e[4] = 1.0
    np.testing.assert_array_equal(compute_F(M, e), M * np.eye(m.n_interior)[4])


@pytest.mark.parametrize("p", [1, 2, 3])
def test_compute_F_vs_quadrature(p):
    m = build_mesh((0, 2, 0, 3), 3, 2, p)
    rng = np.random.default_rng(p)
    c = rng.standard_normal(m.n_interior) + 1j * rng.standard_normal(m.n_interior)
    F = compute_F(assemble_mass(m), c)
    assert np.all(F >= 0)
    np.testing.assert_allclose(F, brute_force_F(m, c), rtol=0, atol=1e-13 * np.abs(F).max())


def test_potential_diagonal_trivial():
    np.testing.assert_array_equal(potential_diagonal(np.zeros(5)), np.zeros(5))
    np.testing.assert_array_equal(potential_diagonal(np.ones(5)), np.ones(5))


@pytest.mark.parametrize("p", [1, 2, 3])
def test_potential_diagonal_vs_dense_phi(p):
    m = build_mesh((0, 2, 0, 2), 2, 3, p)
    d = np.random.default_rng(10 + p).standard_normal(m.n_interior)
    Phi = brute_force_phi(m, d)
    MinvPhi = Phi / assemble_mass(m)[:, None]
    assert np.max(np.abs(MinvPhi - np.diag(potential_diagonal(d)))) <= 1e-13


def test_operators_and_dump(tmp_path):
    m = build_mesh((0, 2, 0, 2), 3, 3, 2)
    ops = build_operators(m)
    assert ops.stiffness_rule == "gauss"
    S = ops.S
    r = 1 / np.sqrt(ops.M)
    np.testing.assert_allclose(S.toarray(), r[:, None] * ops.K.toarray() * r[None, :], rtol=1e-14)
    assert (S - S.T).count_nonzero() == 0
    ops.dump(tmp_path / "ops")
    K = scipy.io.mmread(tmp_path / "ops_K.mtx")
    np.testing.assert_allclose(sp.csr_array(K).toarray(), ops.K.toarray(), rtol=1e-15)
    M = scipy.io.mmread(tmp_path / "ops_M.mtx")
    np.testing.assert_allclose(sp.csr_array(M).diagonal(), ops.M, rtol=1e-15)
