"""Exact propagation, exact TCL generator extraction and TCL integration."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.integrate
import scipy.linalg

from . import superops
from .errors import NonDiagonalizable, SingularWindow, StiffnessError, ValidationError
from .tcl import ModelSpec, TclSeries

log = logging.getLogger(__name__)

PROVENANCES = ("exact", "bvh", "bvh_leading")


@dataclass(frozen=True)
class Trajectory:
    """States on a strictly increasing time grid.

    ``provenance`` is ``"exact"``, ``"tcl-<order>"``, ``"bvh"`` or ``"bvh_leading"``.
    """

    times: np.ndarray
    states: np.ndarray
    provenance: str

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        states = np.asarray(self.states, dtype=complex)
        if times.ndim != 1 or states.ndim != 3 or states.shape[0] != times.shape[0]:
            raise ValidationError("need one d x d state per time")
        if np.any(np.diff(times) <= 0):
            raise ValidationError("times must be strictly increasing")
        if not (self.provenance in PROVENANCES or self.provenance.startswith("tcl-")):
            raise ValidationError(f"unknown provenance {self.provenance!r}")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)


def _time_grid(times):
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(np.diff(times) <= 0):
        raise ValidationError("times must be strictly increasing")
    return times


def _check_state(rho0):
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.ndim != 2 or rho0.shape[0] != rho0.shape[1]:
        raise ValidationError(f"initial state must be square, got {rho0.shape}")
    if np.linalg.norm(rho0 - rho0.conj().T) > 1e-10 or abs(np.trace(rho0) - 1) > 1e-10:
        log.warning("initial state is not a unit-trace Hermitian matrix")
    return rho0


def projected_free_inverse(model: ModelSpec, t):
    """P e^{-L0 t}, with modes annihilated by P removed before exponentiation.

    Without the pruning, the growing factors e^{-lambda t} of decaying modes
    multiply roundoff in P V and overflow at long times.
    """
    try:
        spec = model.spectrum
    except NonDiagonalizable:
        return model.projector @ scipy.linalg.expm(-model.l0 * t)
    pv = model.projector @ spec.right_vectors
    col_norms = np.linalg.norm(pv, axis=0)
    keep = col_norms > 1e-13 * max(1.0, np.max(col_norms, initial=0.0)) * spec.cond
    return (pv[:, keep] * np.exp(-spec.eigenvalues[keep] * t)) @ spec.left_vectors[keep]


def propagate_exact(model: ModelSpec, rho0, times, picture="interaction", projected=False):
    """Exact states from matrix exponentials of the time-independent generators.

    ``picture="interaction"`` returns rho(t) = e^{-L0 t} e^{(L0 + lam L)(t - t0)} e^{L0 t0} rho(t0);
    ``picture="schrodinger"`` drops the outer e^{-L0 t}. With ``projected=True`` the
    interaction-picture states are P rho(t), evaluated stably for long times.
    """
    rho0 = _check_state(rho0)
    times = _time_grid(times)
    if times[0] < model.t0:
        raise ValidationError("times precede t0")
    gen = model.l0 + model.lam * model.l_int
    if picture == "interaction" and not projected:
        growth = (-np.linalg.eigvals(model.l0).real).max(initial=0.0) * times[-1]
        if growth > 25:
            log.warning("e^{-L0 t} amplifies roundoff by ~e^%.0f; pass projected=True for long times", growth)
    v0 = scipy.linalg.expm(model.l0 * model.t0) @ superops.vectorize(rho0)
    states = []
    for t in times:
        vt = scipy.linalg.expm(gen * (t - model.t0)) @ v0
        if picture == "schrodinger":
            pass
        elif picture == "interaction":
            if projected:
                vt = projected_free_inverse(model, t) @ vt
            else:
                vt = scipy.linalg.expm(-model.l0 * t) @ vt
        else:
            raise ValidationError(f"unknown picture {picture!r}")
        states.append(superops.devectorize(vt))
    return Trajectory(times, np.array(states), "exact")


@dataclass(frozen=True)
class ExactTclPair:
    """Nonperturbative K(t), I(t) on a grid; singular times hold NaN."""

    times: np.ndarray
    K: np.ndarray
    I: np.ndarray
    singular: list = field(default_factory=list)


def extract_exact_tcl(model: ModelSpec, times, cond_max=1e8) -> ExactTclPair:
    """K(t) = (d/dt P U P)(P U P)^{(-1)}, I(t) = d/dt(P U Q) - K(t) P U Q.

    U is the interaction-picture propagator from t0. Only P U and its
    derivative P lam L(t) U are needed; both are formed from the stable
    P e^{-L0 t} so that fast decaying modes do not enter through growing
    exponentials. The inverse of P U P is taken on range(P) only: with
    p = R S (R orthonormal), (P U P)^{(-1)} = R (S U R)^{-1} S.
    """
    times = _time_grid(times)
    p, q = model.projector, model.complement
    r, s = superops.range_basis(p)
    gen = model.l0 + model.lam * model.l_int
    start = scipy.linalg.expm(model.l0 * model.t0)
    ks, is_, singular = [], [], []
    for t in times:
        inner = scipy.linalg.expm(gen * (t - model.t0)) @ start
        back = projected_free_inverse(model, t)
        pu = back @ inner
        pdu = model.lam * back @ model.l_int @ inner
        a = s @ pu @ r
        cond = np.linalg.cond(a) if a.size else 1.0
        if not np.isfinite(cond) or cond > cond_max:
            singular.append(SingularWindow(float(t), float(cond)))
            nan = np.full_like(p, np.nan)
            ks.append(nan)
            is_.append(nan)
            continue
        k = pdu @ r @ np.linalg.solve(a, s) if a.size else np.zeros_like(p)
        ks.append(k)
        is_.append(pdu @ q - k @ pu @ q)
    return ExactTclPair(times, np.array(ks), np.array(is_), singular)


def propagate_tcl(series: TclSeries, order: int, rho0, times, ode_tol=1e-10,
                  inhomogeneity=True, method="DOP853", max_evals=200_000) -> Trajectory:
    """Integrate d/dt x = K_N(t) x + I_N(t) Q rho0 from x(t0) = P rho0.

    K_N and I_N are the order-N truncations. The embedded Runge-Kutta pair
    keeps the local error per step below ``ode_tol`` (absolute and relative)
    and the dense output is sampled on ``times``. A non-finite generator or
    more than ``max_evals`` right-hand side evaluations raise StiffnessError.
    """
    model = series.model
    rho0 = _check_state(rho0)
    times = _time_grid(times)
    if times[0] < model.t0:
        raise ValidationError("times precede t0")
    vec0 = superops.vectorize(rho0)
    x0 = model.projector @ vec0
    src = model.complement @ vec0

    calls = 0

    def rhs(t, x):
        nonlocal calls
        calls += 1
        if calls > max_evals:
            raise StiffnessError(f"no solution after {max_evals} generator evaluations (t = {t:.6g})")
        k, i = series.generator(t, order)
        out = k @ x
        if inhomogeneity:
            out = out + i @ src
        if not np.all(np.isfinite(out)):
            raise StiffnessError(f"non-finite TCL generator at t = {t:.6g}")
        return out

    if times[-1] == model.t0:
        xs = np.repeat(x0[None], times.shape[0], axis=0)
    else:
        sol = scipy.integrate.solve_ivp(
            rhs, (model.t0, times[-1]), x0.astype(complex), method=method,
            t_eval=times, rtol=ode_tol, atol=ode_tol,
        )
        if sol.status != 0:
            raise StiffnessError(sol.message)
        xs = sol.y.T
    states = np.array([superops.devectorize(x) for x in xs])
    return Trajectory(times, states, f"tcl-{order}")


def compare(a: Trajectory, b: Trajectory, projector) -> dict:
    """Frobenius distance between P a(t) and P b(t) on a shared grid."""
    if a.times.shape != b.times.shape or np.any(a.times != b.times):
        raise ValidationError("trajectories are on different time grids")
    p = np.asarray(projector)
    errs = []
    for sa, sb in zip(a.states, b.states):
        diff = p @ (superops.vectorize(sa) - superops.vectorize(sb))
        errs.append(float(np.linalg.norm(diff)))
    errs = np.array(errs)
    return {
        "methods": (a.provenance, b.provenance),
        "times": a.times.tolist(),
        "errors": errs.tolist(),
        "max_error": float(errs.max()) if errs.size else 0.0,
    }
