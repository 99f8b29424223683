"""Poisson solves with K and the Krylov exponential of the free Schroedinger flow."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla
from scipy.linalg import eigh_tridiagonal

from .errors import ConfigurationError, SolverFailure

DIRECT_LIMIT = 250_000
POISSON_METHODS = ("auto", "cg", "direct")
_ROUNDOFF = 1e-15
log = logging.getLogger(__name__)


def pcg(A, b: np.ndarray, precond: np.ndarray, tol: float = 1e-12, max_iter: int | None = None,
        x0: np.ndarray | None = None) -> tuple[np.ndarray, int, float]:
    """Jacobi-preconditioned conjugate gradients for SPD ``A``.

    ``precond`` holds the inverse diagonal.  Returns ``(x, iterations, relres)``
    with ``relres = ||b - A x|| / ||b||``.
    """
    n = b.size
    max_iter = 10 * n if max_iter is None else max_iter
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b), 0, 0.0
    x = np.zeros_like(b) if x0 is None else x0.copy()
    r = b - A @ x
    z = precond * r
    d = z.copy()
    rz = r @ z
    restarts = 0
    for it in range(1, max_iter + 1):
        q = A @ d
        dq = d @ q
        if not dq > 0.0:
            raise SolverFailure(f"CG breakdown at iteration {it}: matrix not SPD (d'Ad = {dq:.3e})",
                                np.linalg.norm(r) / bnorm)
        a = rz / dq
        x += a * d
        r -= a * q
        res = np.linalg.norm(r) / bnorm
        if res <= tol:
            # guard against drift of the recursive residual
            res = np.linalg.norm(b - A @ x) / bnorm
            if res <= tol:
                return x, it, res
            restarts += 1
            if restarts > 5:
                raise SolverFailure(f"CG stagnated at relative residual {res:.2e} (rtol={tol:.1e})", res)
            r = b - A @ x
        z = precond * r
        rz_new = r @ z
        d = z + (rz_new / rz) * d
        rz = rz_new
    res = np.linalg.norm(b - A @ x) / bnorm
    raise SolverFailure(f"CG did not reach rtol={tol:.1e} in {max_iter} iterations", res)


@dataclass(eq=False)
class PoissonSolver:
    """Solves ``K d = rhs`` to relative residual ``tol``.

    ``method='direct'`` factorizes K once (sparse LU), refining iteratively if
    the residual misses ``tol``; ``'cg'`` runs Jacobi-PCG; ``'auto'`` picks
    direct below ``DIRECT_LIMIT`` unknowns.
    """

    K: object
    tol: float = 1e-12
    max_iter: int | None = None
    method: str = "auto"
    last_residual: float = field(default=0.0, init=False)
    last_iterations: int = field(default=0, init=False)
    _lu: object = field(default=None, init=False, repr=False)
    _jacobi: np.ndarray = field(default=None, init=False, repr=False)
    _warned: bool = field(default=False, init=False, repr=False)

    def __post_init__(self):
        if self.method not in POISSON_METHODS:
            raise ConfigurationError(f"unknown Poisson method {self.method!r}")
        if not self.tol > 0:
            raise ConfigurationError("Poisson tolerance must be positive")
        if self.method == "auto":
            self.method = "direct" if self.K.shape[0] < DIRECT_LIMIT else "cg"
        if self.method == "direct":
            self._lu = spla.splu(self.K.tocsc())
        else:
            self._jacobi = 1.0 / self.K.diagonal()

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        if self.method == "cg":
            d, it, res = pcg(self.K, rhs, self._jacobi, self.tol, self.max_iter)
            self.last_iterations, self.last_residual = it, res
            return d
        bnorm = np.linalg.norm(rhs)
        if bnorm == 0.0:
            self.last_iterations, self.last_residual = 0, 0.0
            return np.zeros_like(rhs)
        d = self._lu.solve(rhs)
        for it in range(1, 6):
            r = rhs - self.K @ d
            res = np.linalg.norm(r) / bnorm
            if res <= self.tol:
                self.last_iterations, self.last_residual = it, res
                return d
            d += self._lu.solve(r)
        res = np.linalg.norm(rhs - self.K @ d) / bnorm
        if res > self.tol:
            # refinement cannot go below the roundoff in forming K d itself
            floor = 4 * np.finfo(float).eps * (self._knorm() * np.linalg.norm(d) + bnorm) / bnorm
            if res > floor:
                raise SolverFailure(f"direct solve residual {res:.2e} above {self.tol:.1e}", res)
            if not self._warned:
                log.warning("direct solve residual %.2e is at the roundoff floor %.2e, above tol %.1e",
                            res, floor, self.tol)
                self._warned = True
        self.last_iterations, self.last_residual = 6, res
        return d

    def _knorm(self) -> float:
        return float(abs(self.K).sum(axis=1).max())


def _phi1(z: np.ndarray) -> np.ndarray:
    small = np.abs(z) < 1e-8
    zs = np.where(small, 1.0, z)
    return np.where(small, 1.0 + 0.5 * z, np.expm1(zs) / zs)


@dataclass(eq=False)
class ExpvWorkspace:
    """Lanczos approximation of ``exp(-(i/2) tau M^-1 K) c``.

    ``tol`` is an error per unit time relative to ``||c||_M``, never looser
    than ``tol * ||c||_M`` for a whole call.

    Works on ``w = M^1/2 c`` with the symmetric ``S = M^-1/2 K M^-1/2``, which is
    the M-inner-product Lanczos process in disguise.  If the a posteriori
    estimate has not met the tolerance by ``m_max`` basis vectors, the time
    interval is halved and processed in pieces.
    """

    S: object
    tol: float = 1e-12
    m_max: int = 60
    max_substeps: int = 1 << 16
    last_substeps: int = field(default=0, init=False)
    last_dim: int = field(default=0, init=False)
    _V: np.ndarray = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if not self.tol > 0:
            raise ConfigurationError("expv tolerance must be positive")
        if self.m_max < 2:
            raise ConfigurationError("Krylov dimension must be at least 2")
        self._V = np.empty((self.m_max + 1, self.S.shape[0]), dtype=complex)

    def _lanczos_step(self, w: np.ndarray, dt: float, tol_abs: float):
        """One Krylov pass over time ``dt``; returns the propagated vector or None."""
        V = self._V
        beta0 = np.linalg.norm(w)
        V[0] = w / beta0
        alpha = np.zeros(self.m_max)
        beta = np.zeros(self.m_max)
        z = -0.5j * dt
        for j in range(self.m_max):
            u = self.S @ V[j]
            alpha[j] = np.vdot(V[j], u).real
            u -= alpha[j] * V[j]
            if j > 0:
                u -= beta[j - 1] * V[j - 1]
            # full reorthogonalization, twice is enough
            for _ in range(2):
                u -= V[: j + 1].T @ (V[: j + 1].conj() @ u)
            b = np.linalg.norm(u)
            m = j + 1
            lam, Q = eigh_tridiagonal(alpha[:m], beta[: m - 1]) if m > 1 else (alpha[:1], np.ones((1, 1)))
            # invariant subspace reached: the projection is exact
            breakdown = b <= 1e-14 * max(1.0, np.abs(lam).max())
            est = 0.0 if breakdown else beta0 * b * abs(0.5 * dt * (Q[m - 1] * _phi1(z * lam)) @ Q[0])
            if est <= tol_abs:
                coef = beta0 * (Q @ (np.exp(z * lam) * Q[0]))
                self.last_dim = max(self.last_dim, m)
                return coef @ V[:m]
            beta[j] = b
            if j + 1 < self.m_max:
                V[j + 1] = u / b
        return None

    def apply(self, c: np.ndarray, tau: float, sqrt_m: np.ndarray) -> np.ndarray:
        c = np.asarray(c, dtype=complex)
        if not np.all(np.isfinite(c)):
            raise SolverFailure("expv input is not finite")
        self.last_substeps = 0
        self.last_dim = 0
        if tau == 0.0:
            return c.copy()
        w = sqrt_m * c
        beta0 = np.linalg.norm(w)
        if beta0 == 0.0:
            return c.copy()
        total = abs(tau)
        sign = 1.0 if tau > 0 else -1.0
        done = 0.0
        dt = total
        while done < total:
            dt = min(dt, total - done)
            # tolerance per unit time (as in expokit), capped at the per-call bound,
            # so errors do not pile up over many short calls
            target = max(self.tol * beta0 * min(dt, dt / total), _ROUNDOFF * beta0)
            out = self._lanczos_step(w, sign * dt, target)
            if out is None:
                dt *= 0.5
                if self.last_substeps + (total - done) / dt > self.max_substeps:
                    raise SolverFailure("expv: substep budget exhausted without convergence")
                continue
            w = out
            done += dt
            self.last_substeps += 1
        return w / sqrt_m


def poisson_solver(ops) -> PoissonSolver:
    """The cached Poisson solver of ``ops`` (built on first use)."""
    if ops._poisson is None:
        ops._poisson = PoissonSolver(ops.K, tol=ops.cg_tol, method=ops.poisson_method)
    return ops._poisson


def expv_workspace(ops) -> ExpvWorkspace:
    if ops._krylov is None:
        ops._krylov = ExpvWorkspace(ops.S, tol=ops.expv_tol)
    return ops._krylov


def poisson_solve(ops, rhs: np.ndarray) -> np.ndarray:
    """Solve ``K d = rhs`` over the interior nodes."""
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape != (ops.n,):
        raise ValueError(f"rhs has shape {rhs.shape}, expected ({ops.n},)")
    return poisson_solver(ops).solve(rhs)


def expv(ops, tau: float, c: np.ndarray, tol: float | None = None) -> np.ndarray:
    """``exp(-(i/2) tau M^-1 K) c`` to M-norm accuracy ``tol * ||c||_M``."""
    ws = expv_workspace(ops)
    if tol is not None and tol != ws.tol:
        ws = ExpvWorkspace(ops.S, tol=tol, m_max=ws.m_max)
    return ws.apply(c, tau, ops.sqrt_M)
