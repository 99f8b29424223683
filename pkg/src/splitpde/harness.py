"""Convergence studies: temporal orders, spatial orders and the Poisson block."""
from __future__ import annotations

import io
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .assembly import Operators, build_operators
from .config import RunConfig
from .errors import InputError
from .flows import Scheme, State, evolve, scheme_registry
from .linalg import poisson_solve
from .mesh import Mesh, build_mesh
from .quadrature import gauss_legendre

log = logging.getLogger(__name__)

WINDOW_FACTOR = 100.0


@dataclass
class ConvergenceRow:
    param: float
    error_l2: float
    error_h1: float | None = None
    observed_order: float | None = None
    reliable: bool = True


@dataclass
class ConvergenceTable:
    label: str
    nominal_order: float
    rows: list[ConvergenceRow]
    floor: float = 0.0
    window: tuple[int, int] = (0, 0)
    fitted_order: float | None = None
    meta: dict = field(default_factory=dict)

    def window_rows(self) -> list[ConvergenceRow]:
        return self.rows[self.window[0]:self.window[1]]

    def window_orders(self) -> list[float]:
        """Pairwise orders whose both rows lie in the window."""
        lo, hi = self.window
        return [r.observed_order for r in self.rows[lo + 1:hi]]

    def passes(self, tol: float) -> bool:
        orders = self.window_orders()
        if not orders or self.fitted_order is None:
            return False
        return all(abs(q - self.nominal_order) <= tol for q in orders + [self.fitted_order])


def l2_error(a: np.ndarray, b: np.ndarray, M: np.ndarray) -> float:
    """Discrete L2 distance ``sqrt(sum M_ii |a_i - b_i|^2)``."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape or a.shape != M.shape:
        raise InputError(f"layout mismatch: {a.shape}, {b.shape}, M {M.shape}")
    diff = a - b
    return float(np.sqrt(np.sum(M * (diff.real**2 + diff.imag**2))))


def h1_seminorm_error(a: np.ndarray, b: np.ndarray, K) -> float:
    """Discrete H1 seminorm distance ``sqrt((a-b)^* K (a-b))``."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape or a.shape[0] != K.shape[0]:
        raise InputError(f"layout mismatch: {a.shape}, {b.shape}, K {K.shape}")
    diff = a - b
    val = (diff.real @ (K @ diff.real)) + (diff.imag @ (K @ diff.imag))
    return float(np.sqrt(max(val, 0.0)))


def l2_error_quadrature(mesh: Mesh, c: np.ndarray, u, n_quad: int | None = None) -> float:
    """``||u_h - u||_L2`` with ``u_h`` the FE function of ``c`` and ``u(x, y)`` a callable.

    Uses a tensor Gauss-Legendre rule of ``n_quad`` points per axis on every
    element (default ``p + 3``), so the result is the genuine L2 error rather
    than a nodal one.
    """
    xq, wq = gauss_legendre(n_quad or mesh.p + 3)
    ax, _, ay, _ = mesh.domain
    kx, ky = np.arange(mesh.nx), np.arange(mesh.ny)
    px = (ax + (kx[:, None] + 0.5 * (xq[None, :] + 1.0)) * mesh.hx).ravel()
    py = (ay + (ky[:, None] + 0.5 * (xq[None, :] + 1.0)) * mesh.hy).ravel()
    X, Y = np.meshgrid(px, py)
    W = np.outer(np.tile(wq, mesh.ny), np.tile(wq, mesh.nx)) * mesh.jac_det
    diff = mesh.evaluate(c, X.ravel(), Y.ravel()) - u(X.ravel(), Y.ravel())
    return float(np.sqrt(np.sum(W.ravel() * np.abs(diff) ** 2)))


def observed_orders(params, errors) -> list[float | None]:
    out: list[float | None] = [None]
    for k in range(1, len(errors)):
        if errors[k] > 0 and errors[k - 1] > 0:
            out.append(math.log(errors[k - 1] / errors[k]) / math.log(params[k - 1] / params[k]))
        else:
            out.append(None)
    return out


def fit_order(params, errors) -> float:
    """Least-squares slope of ``log(error)`` against ``log(param)``."""
    x, y = np.log(np.asarray(params, float)), np.log(np.asarray(errors, float))
    return float(np.polyfit(x, y, 1)[0])


def select_window(errors, floor: float, factor: float = WINDOW_FACTOR) -> tuple[int, int]:
    """Longest contiguous run of rows that decrease and stay above ``factor * floor``.

    Ties go to the later run (smaller parameters).  Returns a half-open range.
    """
    best = (0, 0)
    start = None
    for k, e in enumerate(errors):
        ok = e >= factor * floor and (start is None or e < errors[k - 1])
        if ok and start is None:
            start = k
        elif not ok:
            if start is not None and k - start >= best[1] - best[0]:
                best = (start, k)
            start = k if e >= factor * floor else None
    if start is not None and len(errors) - start >= best[1] - best[0]:
        best = (start, len(errors))
    return best


def make_table(label: str, nominal: float, params, errors, errors_h1=None, floor: float = 0.0,
               meta: dict | None = None) -> ConvergenceTable:
    orders = observed_orders(params, errors)
    rows = [ConvergenceRow(float(p), float(e), None if errors_h1 is None else float(errors_h1[k]), orders[k],
                           e >= WINDOW_FACTOR * floor)
            for k, (p, e) in enumerate(zip(params, errors))]
    lo, hi = select_window(errors, floor)
    fitted = fit_order(params[lo:hi], errors[lo:hi]) if hi - lo >= 2 else None
    if any(not r.reliable for r in rows):
        log.warning("%s: %d row(s) near the solver floor %.2e; their orders are not asserted",
                    label, sum(not r.reliable for r in rows), floor)
    return ConvergenceTable(label, nominal, rows, floor, (lo, hi), fitted, dict(meta or {}))


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("SPLITPDE_THREADS", "1")))
    except ValueError:
        return 1


def _map(fn, items):
    items = list(items)
    n = min(_workers(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def operators_for(cfg: RunConfig, nx: int | None = None, ny: int | None = None, p: int | None = None) -> Operators:
    mesh = build_mesh(cfg.domain, nx or cfg.nx, ny or cfg.ny, p or cfg.p)
    return build_operators(mesh, cfg.stiffness_rule, cfg.expv_tol, cfg.cg_tol, cfg.poisson_method)


def initial_state(cfg: RunConfig, mesh: Mesh) -> State:
    return State(mesh.interpolate(cfg.initial_function()).astype(complex))


def solver_floor(cfg: RunConfig, ops: Operators, psi0: State, scheme: Scheme) -> float:
    """Budgeted solver error at ``T``: tolerance per unit time times the stage weights."""
    weight = sum(abs(a) + abs(b) for a, b in scheme.stages)
    return max(cfg.expv_tol, cfg.cg_tol) * ops.m_norm(psi0.c) * cfg.T * weight


def temporal_study(cfg: RunConfig, schemes=None, tau_list=None, ref_tau=None) -> dict[str, ConvergenceTable]:
    """Global splitting error at ``T`` against a reference solution, per scheme."""
    schemes = list(schemes or cfg.schemes)
    tau_list = [float(t) for t in (tau_list or cfg.tau_list)]
    if any(b >= a for a, b in zip(tau_list, tau_list[1:])):
        raise InputError("tau_list must be strictly decreasing")
    ref_tau = float(ref_tau or cfg.ref_tau)
    ops = operators_for(cfg)
    psi0 = initial_state(cfg, ops.mesh)
    ref_scheme = scheme_registry(cfg.ref_scheme)
    ref = evolve(ops, ref_scheme, ref_tau, cfg.T, psi0).state.c

    def run(job):
        name, tau = job
        # separate operators per job so solver scratch space is not shared
        local = ops if _workers() == 1 else Operators(ops.mesh, ops.M, ops.K, ops.stiffness_rule,
                                                      ops.expv_tol, ops.cg_tol, ops.poisson_method)
        c = evolve(local, scheme_registry(name), tau, cfg.T, psi0).state.c
        return l2_error(c, ref, ops.M), h1_seminorm_error(c, ref, ops.K)

    jobs = [(name, tau) for name in schemes for tau in tau_list]
    results = dict(zip(jobs, _map(run, jobs)))
    tables = {}
    for name in schemes:
        scheme = scheme_registry(name)
        e2 = [results[(name, t)][0] for t in tau_list]
        e1 = [results[(name, t)][1] for t in tau_list]
        meta = {"reference_scheme": cfg.ref_scheme, "reference_tau": ref_tau, "n_dofs": ops.n}
        tables[name] = make_table(name, scheme.order, tau_list, e2, e1, solver_floor(cfg, ops, psi0, scheme), meta)
    return tables


def _nodes_per_axis(length: float, h: float) -> int:
    n = round(length / h)
    if n < 1 or abs(n * h - length) > 1e-9 * length:
        raise InputError(f"mesh size {h} does not divide the domain length {length}")
    return n


def spatial_study(cfg: RunConfig, p_list=None, h_list=None, tau=None, ref_h=None,
                  ref_p=None) -> dict[int, ConvergenceTable]:
    """FE error at ``T`` for fixed ``tau``, per degree.

    Each solution is evaluated at the nodes of the reference mesh and compared
    in that mesh's lumped-mass norm.  By default the reference mesh has half
    the finest ``h`` of the sweep, so every listed ``h`` gets a row.
    """
    p_list = [int(p) for p in (p_list or cfg.p_list)]
    h_list = sorted((float(h) for h in (h_list or cfg.h_list)), reverse=True)
    tau = float(tau or cfg.spatial_tau)
    ref_h = float(ref_h) if ref_h else 0.5 * h_list[-1]
    rows_h = [h for h in h_list if h > ref_h * (1 + 1e-12)]
    ax, bx, ay, by = cfg.domain
    scheme = scheme_registry(cfg.spatial_scheme)

    def solve(job):
        p, h = job
        ops = operators_for(cfg, _nodes_per_axis(bx - ax, h), _nodes_per_axis(by - ay, h), p)
        psi0 = initial_state(cfg, ops.mesh)
        res = evolve(ops, scheme, tau, cfg.T, psi0)
        return ops, psi0, res.state.c

    tables = {}
    for p in p_list:
        ref_ops, ref_psi0, ref_c = solve((ref_p or p, ref_h))
        xs, ys = ref_ops.mesh.interior_coords()
        sols = _map(solve, [(p, h) for h in rows_h])
        errors = []
        for ops, _, c in sols:
            errors.append(l2_error(ops.mesh.evaluate(c, xs, ys), ref_c, ref_ops.M))
        floor = solver_floor(cfg, ref_ops, ref_psi0, scheme)
        meta = {"reference_h": ref_h, "reference_p": ref_p or p, "tau": tau, "scheme": scheme.name}
        tables[p] = make_table(f"p={p}", p + 1, rows_h, errors, None, floor, meta)
        col = [r.error_l2 for r in tables[p].rows]
        if col and min(col) != col[-1]:
            log.warning("p=%d: error at the finest h is not the smallest; reference may be contaminated", p)
    return tables


def manufactured_u(x, y, length: float = 5.0):
    k = math.pi / length
    return np.sin(k * x) * np.sin(k * y)


def manufactured_f(x, y, length: float = 5.0):
    k = math.pi / length
    return -2.0 * k * k * manufactured_u(x, y, length)


def poisson_study(p_list=(1, 2), h_list=(1.0, 0.5, 0.25, 0.125, 0.0625), length: float = 5.0,
                  cg_tol: float = 1e-12, method: str = "cg") -> dict[int, ConvergenceTable]:
    """Solve ``K d = -M f`` for the sin-sin manufactured solution on ``[0, length]^2``.

    Weakly this is ``Laplace(d) = f``, so ``d`` approximates ``u``.  Errors are
    genuine L2 errors; nodal values alone superconverge for ``p >= 2``.
    """
    tables = {}
    for p in p_list:
        errors, residuals = [], []
        for h in h_list:
            n = _nodes_per_axis(length, h)
            mesh = build_mesh((0.0, length, 0.0, length), n, n, p)
            ops = build_operators(mesh, cg_tol=cg_tol, poisson_method=method)
            x, y = mesh.interior_coords()
            d = poisson_solve(ops, -ops.M * manufactured_f(x, y, length))
            residuals.append(ops._poisson.last_residual)
            errors.append(l2_error_quadrature(mesh, d, lambda x, y: manufactured_u(x, y, length)))
        tables[p] = make_table(f"p={p}", p + 1, list(h_list), errors,
                               meta={"max_relative_residual": max(residuals), "method": method})
    return tables


def write_csv(table: ConvergenceTable, cfg: RunConfig | None = None, extra: dict | None = None) -> str:
    """CSV text ``param,error_l2,error_h1,observed_order`` with ``#`` header lines."""
    buf = io.StringIO()
    buf.write(f"# table = {table.label}\n")
    buf.write(f"# nominal_order = {table.nominal_order}\n")
    if cfg is not None:
        for line in cfg.to_lines():
            buf.write(f"# {line}\n")
    for k, v in sorted({**table.meta, **(extra or {})}.items()):
        buf.write(f"# {k} = {v!r}\n")
    buf.write(f"# solver_floor = {table.floor!r}\n")
    buf.write(f"# window = {table.window[0]}:{table.window[1]}\n")
    buf.write(f"# fitted_order = {table.fitted_order!r}\n")
    buf.write("param,error_l2,error_h1,observed_order\n")
    for r in table.rows:
        h1 = "" if r.error_h1 is None else repr(r.error_h1)
        q = "" if r.observed_order is None else repr(r.observed_order)
        buf.write(f"{r.param!r},{r.error_l2!r},{h1},{q}\n")
    return buf.getvalue()
