import math

import numpy as np
import pytest
import scipy.linalg as sla

from splitpde.assembly import build_operators
from splitpde.errors import ConfigurationError, SolverFailure, StagnationError
from splitpde.flows import (MAX_STAGES, Scheme, State, evolve, evolve_adaptive, phi_A, phi_B,
                            scheme_names, scheme_registry, snapped_steps, splitting_step,
                            step_doubling_estimate)
from splitpde.mesh import build_mesh


def gaussian(x, y):
    return 10 * np.exp(-2 * ((x - 2.5) ** 2 + (y - 2.5) ** 2))


@pytest.fixture(scope="module")
def ops():
    return build_operators(build_mesh((0, 5, 0, 5), 4, 4, 2))


@pytest.fixture(scope="module")
def psi0(ops):
    return State(ops.mesh.interpolate(gaussian).astype(complex))


def test_registry():
    assert scheme_names() == ["lie", "strang", "ruth3", "blanes_moan4"]
    assert [scheme_registry(n).order for n in scheme_names()] == [1, 2, 3, 4]
    with pytest.raises(ConfigurationError):
        scheme_registry("yoshida")


@pytest.mark.parametrize("name", ["lie", "strang", "ruth3", "blanes_moan4"])
def test_scheme_consistency(name):
    s = scheme_registry(name)
    assert abs(sum(a for a, _ in s.stages) - 1) <= 1e-15
    assert abs(sum(b for _, b in s.stages) - 1) <= 1e-15
    assert 1 <= len(s.stages) <= MAX_STAGES


def test_inconsistent_scheme_rejected():
    with pytest.raises(ConfigurationError):
        Scheme("bad", ((0.5, 1.0),), 1)
    with pytest.raises(ConfigurationError):
        Scheme("empty", (), 1)
    with pytest.raises(ConfigurationError):
        Scheme("long", ((1 / 17, 1 / 17),) * 17, 1)


def matrix_step(scheme, A, B, tau):
    """One step of the scheme for the linear problem u' = (A + B) u, both flows exact."""
    U = np.eye(A.shape[0], dtype=complex)
    for a, b in scheme.stages:
        U = sla.expm(b * tau * B) @ sla.expm(a * tau * A) @ U
    return U


@pytest.mark.parametrize("name", ["lie", "strang", "ruth3", "blanes_moan4"])
def test_order_on_matrix_oracle(name):
    # skew-Hermitian, non-commuting generators of comparable size
    rng = np.random.default_rng(7)
    X = rng.standard_normal((6, 6)) + 1j * rng.standard_normal((6, 6))
    Y = rng.standard_normal((6, 6)) + 1j * rng.standard_normal((6, 6))
    A, B = (X - X.conj().T) / 4, (Y - Y.conj().T) / 4
    scheme = scheme_registry(name)
    T = 1.0
    exact = sla.expm(T * (A + B))
    errors = []
    for n in (8, 16, 32):
        U = np.linalg.matrix_power(matrix_step(scheme, A, B, T / n), n)
        errors.append(np.linalg.norm(U - exact, 2))
    orders = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
    assert np.all(np.abs(orders - scheme.order) <= 0.25), orders


def test_zero_step_is_identity(ops, psi0):
    for name in scheme_names():
        out = splitting_step(ops, scheme_registry(name), 0.0, psi0)
        np.testing.assert_array_equal(out.c, psi0.c)
    np.testing.assert_array_equal(phi_A(ops, 0.0, psi0).c, psi0.c)
    np.testing.assert_array_equal(phi_B(ops, 0.0, psi0).c, psi0.c)


def test_zero_state_is_fixed(ops):
    zero = State(np.zeros(ops.n, complex))
    out = splitting_step(ops, scheme_registry("ruth3"), 0.01, zero)
    np.testing.assert_array_equal(out.c, 0.0)


def test_phi_B_preserves_modulus(ops, psi0):
    out = phi_B(ops, 0.37, psi0)
    np.testing.assert_allclose(np.abs(out.c), np.abs(psi0.c), rtol=1e-14, atol=0)
    # oracle: d from a dense solve of K d = -M |c|^2, then c exp(-i tau d)
    d = np.linalg.solve(ops.K.toarray(), -ops.M * np.abs(psi0.c) ** 2)
    np.testing.assert_allclose(out.c, psi0.c * np.exp(-0.37j * d), rtol=1e-12, atol=1e-14)


def test_phi_B_exactly_reversible(ops, psi0):
    back = phi_B(ops, -0.2, phi_B(ops, 0.2, psi0))
    np.testing.assert_allclose(back.c, psi0.c, rtol=1e-14, atol=1e-14)


def test_strang_is_literal_composition(ops, psi0):
    tau = 3e-3
    step = splitting_step(ops, scheme_registry("strang"), tau, psi0)
    literal = phi_A(ops, tau / 2, phi_B(ops, tau, phi_A(ops, tau / 2, psi0)))
    np.testing.assert_array_equal(step.c, literal.c)
    assert step.t == psi0.t + tau


def test_lie_is_literal_composition(ops, psi0):
    step = splitting_step(ops, scheme_registry("lie"), 2e-3, psi0)
    np.testing.assert_array_equal(step.c, phi_B(ops, 2e-3, phi_A(ops, 2e-3, psi0)).c)


@pytest.mark.parametrize("name", ["strang", "blanes_moan4"])
def test_symmetric_schemes_time_reversible(ops, psi0, name):
    scheme = scheme_registry(name)
    tau = 5e-3
    there = splitting_step(ops, scheme, tau, psi0)
    back = splitting_step(ops, scheme, -tau, there)
    rel = ops.m_norm(back.c - psi0.c) / ops.m_norm(psi0.c)
    assert rel <= 100 * ops.expv_tol


def test_snapped_steps():
    assert snapped_steps(0.03, 0.1) == (3, 0.1 / 3)
    assert snapped_steps(0.5, 0.1) == (1, 0.1)
    n, tau = snapped_steps(5e-4, 0.1)
    assert n == 200 and n * tau == pytest.approx(0.1, rel=1e-15)


def test_evolve_single_step_equals_step(ops, psi0):
    scheme = scheme_registry("ruth3")
    res = evolve(ops, scheme, 0.01, 0.01, psi0)
    assert res.steps == 1 and res.state.t == 0.01
    np.testing.assert_array_equal(res.state.c, splitting_step(ops, scheme, 0.01, psi0).c)


def test_evolve_norm_conservation(ops, psi0):
    res = evolve(ops, scheme_registry("strang"), 1e-3, 0.1, psi0)
    norms = np.array([n for _, _, n in res.norms])
    assert len(norms) == 101
    assert np.max(np.abs(norms - norms[0])) / norms[0] <= 1e-10


def test_evolve_snapshots_and_observer(ops, psi0):
    seen = []
    res = evolve(ops, scheme_registry("strang"), 1e-2, 0.1, psi0,
                 observer=lambda k, t, n: seen.append(k), snapshot_times=(0.0, 0.05, 0.1))
    assert [s.t for s in res.snapshots] == [0.0, pytest.approx(0.05), pytest.approx(0.1)]
    assert seen == list(range(11))
    stopped = evolve(ops, scheme_registry("strang"), 1e-2, 0.1, psi0, observer=lambda k, t, n: k < 3)
    assert stopped.aborted and stopped.steps == 3


def test_evolve_errors(ops, psi0):
    with pytest.raises(ConfigurationError):
        evolve(ops, scheme_registry("lie"), 0.0, 0.1, psi0)
    with pytest.raises(ConfigurationError):
        evolve(ops, scheme_registry("lie"), 0.01, -1.0, psi0)
    bad = psi0.c.copy()
    bad[3] = np.inf
    with pytest.raises(SolverFailure):
        evolve(ops, scheme_registry("lie"), 0.01, 0.02, State(bad))


def test_temporal_order_small_mesh(ops, psi0):
    ref = evolve(ops, scheme_registry("blanes_moan4"), 1e-4, 0.05, psi0).state.c
    for name in ("lie", "strang", "ruth3"):
        scheme = scheme_registry(name)
        errs = [ops.m_norm(evolve(ops, scheme, tau, 0.05, psi0).state.c - ref) for tau in (0.01, 0.005)]
        assert abs(math.log2(errs[0] / errs[1]) - scheme.order) <= 0.25


def test_step_doubling_estimate_scales(ops, psi0):
    scheme = scheme_registry("strang")
    _, e1 = step_doubling_estimate(ops, scheme, 0.02, psi0)
    _, e2 = step_doubling_estimate(ops, scheme, 0.01, psi0)
    # local error of a second-order scheme is third order
    assert abs(math.log2(e1 / e2) - 3) <= 0.3


def test_adaptive_infinite_tol_matches_fixed(ops, psi0):
    scheme = scheme_registry("strang")
    res = evolve_adaptive(ops, scheme, 0.01, 0.1, math.inf, psi0)
    fixed = evolve(ops, scheme, 0.01, 0.1, psi0)
    np.testing.assert_array_equal(res.state.c, fixed.state.c)
    assert len(res.accepted) == 10 and not res.rejected


def test_adaptive_respects_tolerance(ops, psi0):
    scheme = scheme_registry("strang")
    T = 0.1
    ref = evolve(ops, scheme_registry("blanes_moan4"), 1e-4, T, psi0).state.c
    counts, max_estimates = [], []
    for tol in (1e-4, 1e-6, 1e-8):
        res = evolve_adaptive(ops, scheme, 0.05, T, tol, psi0)
        assert res.state.t == pytest.approx(T, rel=1e-14)
        assert all(r.error <= tol for r in res.accepted)
        assert all(r.error > tol for r in res.rejected)
        assert sum(r.tau for r in res.accepted) == pytest.approx(T, rel=1e-12)
        counts.append(len(res.accepted))
        max_estimates.append(max(r.error for r in res.accepted))
        # global error is controlled up to accumulation over the accepted steps
        assert ops.m_norm(res.state.c - ref) <= 10 * tol * len(res.accepted)
    assert counts[0] <= counts[1] <= counts[2]
    assert max_estimates[0] >= max_estimates[1] >= max_estimates[2]


def test_adaptive_stagnation(ops, psi0):
    with pytest.raises(StagnationError):
        evolve_adaptive(ops, scheme_registry("lie"), 0.05, 0.1, 1e-300, psi0)


def test_adaptive_errors(ops, psi0):
    with pytest.raises(ConfigurationError):
        evolve_adaptive(ops, scheme_registry("lie"), 0.05, 0.1, 0.0, psi0)
    with pytest.raises(ConfigurationError):
        evolve_adaptive(ops, scheme_registry("lie"), -0.05, 0.1, 1e-6, psi0)
