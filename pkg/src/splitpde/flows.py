"""Discrete subflows, splitting compositions and the time loop."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .assembly import Operators, compute_F, potential_diagonal
from .errors import ConfigurationError, SolverFailure, StagnationError
from .linalg import expv, poisson_solve

MAX_STAGES = 16


@dataclass(frozen=True)
class State:
    c: np.ndarray
    t: float = 0.0


@dataclass(frozen=True)
class Scheme:
    """Splitting scheme as stages ``(alpha_k, beta_k)``.

    A step applies, for each stage in order, the A-flow over ``alpha_k * tau``
    followed by the B-flow over ``beta_k * tau``.
    """

    name: str
    stages: tuple[tuple[float, float], ...]
    order: int

    def __post_init__(self):
        if not 1 <= len(self.stages) <= MAX_STAGES:
            raise ConfigurationError(f"scheme {self.name!r} needs 1..{MAX_STAGES} stages")
        a = math.fsum(s[0] for s in self.stages)
        b = math.fsum(s[1] for s in self.stages)
        if abs(a - 1.0) > 1e-14 or abs(b - 1.0) > 1e-14:
            raise ConfigurationError(f"scheme {self.name!r} is inconsistent: sums {a!r}, {b!r}")


def _blanes_moan4() -> tuple[tuple[float, float], ...]:
    # 6-stage order-4 PRK of Blanes & Moan (2002); symmetric, 7 A-substeps.
    a1, a2, a3 = 0.0792036964311957, 0.353172906049774, -0.0420650803577195
    b1, b2 = 0.209515106613362, -0.143851773179818
    a4 = 1.0 - 2.0 * (a1 + a2 + a3)
    b3 = 0.5 - (b1 + b2)
    return ((a1, b1), (a2, b2), (a3, b3), (a4, b3), (a3, b2), (a2, b1), (a1, 0.0))


_SCHEMES = {
    "lie": Scheme("lie", ((1.0, 1.0),), 1),
    "strang": Scheme("strang", ((0.5, 1.0), (0.5, 0.0)), 2),
    # Ruth's rational third-order coefficients; A takes (7/24, 3/4, -1/24).
    "ruth3": Scheme("ruth3", ((7 / 24, 2 / 3), (3 / 4, -2 / 3), (-1 / 24, 1.0)), 3),
    "blanes_moan4": Scheme("blanes_moan4", _blanes_moan4(), 4),
}


def scheme_registry(name: str) -> Scheme:
    try:
        return _SCHEMES[name]
    except KeyError:
        raise ConfigurationError(f"unknown scheme {name!r}; available: {', '.join(_SCHEMES)}") from None


def scheme_names() -> list[str]:
    return list(_SCHEMES)


def phi_A(ops: Operators, tau: float, state: State) -> State:
    """Free flow ``M c' = -(i/2) K c`` over ``tau``."""
    return State(expv(ops, tau, state.c), state.t)


def phi_B(ops: Operators, tau: float, state: State) -> State:
    """Self-interaction flow: a pointwise phase rotation by the Poisson potential of ``|c|^2``."""
    d = poisson_solve(ops, -compute_F(ops.M, state.c))
    return State(np.exp(-1j * tau * potential_diagonal(d)) * state.c, state.t)


def splitting_step(ops: Operators, scheme: Scheme, tau: float, state: State) -> State:
    for alpha, beta in scheme.stages:
        if alpha != 0.0:
            state = phi_A(ops, alpha * tau, state)
        if beta != 0.0:
            state = phi_B(ops, beta * tau, state)
    return State(state.c, state.t + tau)


Observer = Callable[[int, float, float], object]


@dataclass
class EvolveResult:
    state: State
    tau: float
    steps: int
    norms: list[tuple[int, float, float]] = field(default_factory=list)
    snapshots: list[State] = field(default_factory=list)
    aborted: bool = False


def _check_finite(state: State, step: int) -> None:
    if not np.all(np.isfinite(state.c)):
        raise SolverFailure(f"non-finite state after step {step} (t={state.t:.6g})")


def snapped_steps(tau: float, T: float) -> tuple[int, float]:
    """Step count and adjusted step so that ``n * tau`` hits ``T``."""
    n = max(1, round(T / tau))
    return n, T / n


def evolve(ops: Operators, scheme: Scheme, tau: float, T: float, initial: State,
           observer: Observer | None = None, snapshot_times=()) -> EvolveResult:
    """Fixed-step integration from ``initial.t`` over a duration ``T``.

    ``tau`` is adjusted to ``T / round(T / tau)``.  ``observer(step, t, norm)``
    is called after every step; returning ``False`` stops the run.  A
    snapshot is kept at the first step reaching each of ``snapshot_times``
    (measured from ``initial.t``).
    """
    if not tau > 0 or not T > 0:
        raise ConfigurationError("tau and T must be positive")
    n, tau = snapped_steps(tau, T)
    pending = sorted(float(s) for s in snapshot_times)
    result = EvolveResult(initial, tau, 0)
    t0 = initial.t
    while pending and pending[0] <= 0.5 * tau:
        result.snapshots.append(initial)
        pending.pop(0)
    norm0 = ops.m_norm(initial.c)
    result.norms.append((0, t0, norm0))
    if observer is not None and observer(0, t0, norm0) is False:
        result.aborted = True
        return result
    state = initial
    for k in range(1, n + 1):
        state = splitting_step(ops, scheme, tau, state)
        state = State(state.c, t0 + k * tau)
        _check_finite(state, k)
        norm = ops.m_norm(state.c)
        result.norms.append((k, state.t, norm))
        while pending and pending[0] <= k * tau + 0.5 * tau:
            result.snapshots.append(state)
            pending.pop(0)
        result.state, result.steps = state, k
        if observer is not None and observer(k, state.t, norm) is False:
            result.aborted = True
            break
    return result


@dataclass
class StepRecord:
    t: float
    tau: float
    error: float
    accepted: bool


@dataclass
class AdaptiveResult:
    state: State
    log: list[StepRecord]

    @property
    def accepted(self) -> list[StepRecord]:
        return [r for r in self.log if r.accepted]

    @property
    def rejected(self) -> list[StepRecord]:
        return [r for r in self.log if not r.accepted]


def step_doubling_estimate(ops: Operators, scheme: Scheme, tau: float, state: State):
    """Return ``(one_step, error_estimate)``.

    The estimate is the M-norm difference between one step of ``tau`` and two
    steps of ``tau/2``, divided by ``2**q - 1``.
    """
    big = splitting_step(ops, scheme, tau, state)
    half = splitting_step(ops, scheme, 0.5 * tau, state)
    fine = splitting_step(ops, scheme, 0.5 * tau, half)
    err = ops.m_norm(big.c - fine.c) / (2**scheme.order - 1)
    return big, err


def evolve_adaptive(ops: Operators, scheme: Scheme, tau0: float, T: float, tol: float,
                    initial: State, safety: float = 0.9) -> AdaptiveResult:
    """Step-size controlled integration over a duration ``T``.

    Trial steps are accepted when the step-doubling estimate is at most
    ``tol``; the next step is ``safety * tau * (tol/err)**(1/(q+1))`` clamped
    to ``[tau/4, 4 tau]``.  The accepted value is the single ``tau`` step.
    """
    if not tol > 0:
        raise ConfigurationError("tol must be positive")
    if not tau0 > 0 or not T > 0:
        raise ConfigurationError("tau0 and T must be positive")
    if math.isinf(tol):
        # no error control: every step accepted at the (snapped) initial size
        res = evolve(ops, scheme, tau0, T, initial)
        log = [StepRecord(t, res.tau, 0.0, True) for _, t, _ in res.norms[1:]]
        return AdaptiveResult(res.state, log)

    t_end = initial.t + T
    state, tau, log = initial, tau0, []
    while t_end - state.t > 1e-14 * T:
        last = tau >= t_end - state.t
        tau = min(tau, t_end - state.t)
        if tau < 1e-12 * T:
            raise StagnationError(f"step size underflow at t={state.t:.6g} (tau={tau:.3e})")
        trial, err = step_doubling_estimate(ops, scheme, tau, state)
        _check_finite(trial, len(log))
        accepted = err <= tol
        log.append(StepRecord(state.t, tau, err, accepted))
        if accepted:
            state = State(trial.c, t_end if last else state.t + tau)
        factor = 4.0 if err == 0.0 else safety * (tol / err) ** (1.0 / (scheme.order + 1))
        tau = tau * min(4.0, max(0.25, factor))
    return AdaptiveResult(state, log)
