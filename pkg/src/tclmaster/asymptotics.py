"""Long-time behaviour: relaxation conditions, t -> infinity limits of the
TCL coefficients, and the weak-coupling (lam^2 t fixed) solution with a
renormalized initial condition.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import superops
from .dynamics import Trajectory, projected_free_inverse
from .errors import ConsistencyError, NoLimit, NonDiagonalizable, ValidationError
from .kernels import phi_integral
from .tcl import ModelSpec, TclSeries

log = logging.getLogger(__name__)

DEFAULT_SAMPLES = 50
LIMIT_TOL = 1e-6
VALIDITY_TOL = 1e-6


@dataclass(frozen=True)
class RelaxationReport:
    order: int
    plain_satisfied: bool
    enhanced_satisfied: bool
    max_violation: float
    samples: list = field(default_factory=list)
    shortcut_used: bool = False
    plain_violation: float = 0.0
    enhanced_violation: float = 0.0

    def __post_init__(self):
        if self.enhanced_satisfied and not self.plain_satisfied:
            raise ValidationError("enhanced relaxation implies plain relaxation")


def _min_decay(model: ModelSpec) -> float:
    try:
        rates = model.spectrum.decay_rates()
    except NonDiagonalizable:
        rates = -np.linalg.eigvals(model.l0).real
        rates = np.sort(rates[rates > 1e-9])
    return float(rates[0]) if rates.size else 1.0


def _max_decay(model: ModelSpec) -> float:
    rates = -np.linalg.eigvals(model.l0).real
    return float(max(rates.max(initial=0.0), 1e-12))


def default_time_grid(model: ModelSpec, points=21):
    """[0, T] with T = 10 / slowest decay rate, capped so that e^{-L0 T} stays finite."""
    horizon = min(10.0 / _min_decay(model), 200.0 / _max_decay(model))
    return np.linspace(0.0, horizon, points)


def _chain(model: ModelSpec, times):
    """L e^{L0 (t_k - t_{k-1})} ... L e^{L0 t_1} for ordered times t_1 <= ... <= t_k."""
    out = scipy.linalg.expm(model.l0 * times[0])
    for prev, cur in zip(times[:-1], times[1:]):
        out = scipy.linalg.expm(model.l0 * (cur - prev)) @ model.l_int @ out
    return model.l_int @ out


def check_relaxation(model: ModelSpec, order=3, time_grid=None, tol=1e-9,
                     samples=DEFAULT_SAMPLES, seed=0, force_sampling=False) -> RelaxationReport:
    """Test the (enhanced) relaxation conditions up to ``order``.

    The sufficient condition P e^{-L0 t} = P (for all t) is checked first, in
    its equivalent form P L0 = 0. Otherwise, or with ``force_sampling``, the
    full equalities are checked on ``samples`` random ordered time tuples per
    order with times drawn from [0, max(time_grid)]. Violations are relative
    Frobenius norms.
    """
    if order < 1:
        raise ValidationError("order must be >= 1")
    grid = default_time_grid(model) if time_grid is None else np.asarray(time_grid, float)
    p, q = model.projector, model.complement
    # P e^{-L0 t} = P for every t exactly when P L0 = 0; testing the generator
    # avoids e^{-L0 t}, whose growing modes amplify roundoff at long times
    shortcut = np.linalg.norm(p @ model.l0) / max(1.0, np.linalg.norm(p) * np.linalg.norm(model.l0))
    if shortcut <= tol and not force_sampling:
        return RelaxationReport(order, True, True, float(shortcut), [], True, 0.0, 0.0)

    rng = np.random.default_rng(seed)
    horizon = float(grid.max()) if grid.size else 1.0
    tuples, plain, enhanced = [], 0.0, 0.0
    for k in range(1, order + 1):
        for _ in range(samples):
            ts = np.sort(rng.uniform(0.0, horizon, size=k))
            tuples.append(tuple(float(x) for x in ts))
            chain = _chain(model, ts)
            # P e^{-L0 t} without the modes P annihilates; their growing
            # exponentials would otherwise turn roundoff into violations
            back = projected_free_inverse(model, ts[-1])
            for trail, acc in ((p, "plain"), (q, "enhanced")):
                rhs = p @ chain @ trail
                lhs = back @ chain @ trail
                # scale by the size of the factors so roundoff in the growing
                # exponential does not count as a violation
                size = max(1.0, np.linalg.norm(rhs), np.linalg.norm(back) * np.linalg.norm(chain @ trail))
                viol = np.linalg.norm(lhs - rhs) / size
                if acc == "plain":
                    plain = max(plain, viol)
                else:
                    enhanced = max(enhanced, viol)
    plain_ok = plain <= tol
    enhanced_ok = plain_ok and enhanced <= tol
    return RelaxationReport(order, bool(plain_ok), bool(enhanced_ok), float(max(plain, enhanced)),
                            tuples, False, float(plain), float(enhanced))


def relaxed_second_order(model: ModelSpec, t, fd=None):
    """K_1, K_2, I_1, I_2 written without e^{-L0 t}, valid under (enhanced) relaxation.

    With E = e^{L0 t}, X = [L0, .]^{(-1)} L and L_0 the part of L commuting
    with L0:
    K_2 = P L (E X - X E) P - P L E P X (1 - E) P + t P L E Q L_0 P,
    and likewise with a trailing Q. The last term is absent when L has no
    zero-frequency component.
    """
    fd = model.frequencies if fd is None else fd
    p, q = model.projector, model.complement
    x = superops.ad_pseudoinverse_apply(fd)
    zero = fd.zero_part()
    e = model.spectrum.propagator(t)
    one = np.eye(model.size)
    comm = e @ x - x @ e
    l = model.l_int

    def second(trail):
        return (p @ l @ comm @ trail - p @ l @ e @ p @ x @ (one - e) @ trail
                + t * p @ l @ e @ q @ zero @ trail)

    return (p @ l @ e @ p, second(p), p @ l @ e @ q, second(q))


def _closed_limits(model: ModelSpec, lim, tol=LIMIT_TOL):
    fd = model.frequencies
    p, q = model.projector, model.complement
    x = superops.ad_pseudoinverse_apply(fd)
    zero = fd.zero_part()
    one = np.eye(model.size)
    comm = lim @ x - x @ lim
    l = model.l_int

    def second(trail):
        # the zero-frequency part adds t P L Lambda Q L_0 at late times
        drift = p @ l @ lim @ q @ zero @ trail
        scale = max(1.0, np.linalg.norm(l) ** 2)
        if np.linalg.norm(drift) > tol * scale:
            raise NoLimit(f"second order grows linearly in t (drift {np.linalg.norm(drift):.3e})")
        return p @ l @ comm @ trail - p @ l @ lim @ p @ x @ (one - lim) @ trail

    return {1: (p @ l @ lim @ p, p @ l @ lim @ q), 2: (second(p), second(q))}


def K_I_limits(series: TclSeries, orders=(1, 2), horizon=None, tol=LIMIT_TOL):
    """Map n -> (K_n(+inf), I_n(+inf)).

    Orders 1 and 2 use the closed forms in terms of Lambda = lim e^{L0 t};
    higher orders compare K_n, I_n at ``horizon`` and ``2 * horizon`` and
    raise :class:`NoLimit` when they differ by more than ``tol`` (relative to
    max(1, norm)). The default horizon is 40 / slowest decay rate.
    """
    model = series.model
    if model.t0 != 0.0:
        raise ValidationError("limits are taken for t0 = 0")
    lim = superops.limit_superoperator(model.spectrum)
    closed = _closed_limits(model, lim, tol) if {1, 2} & set(orders) else {}
    if horizon is None:
        horizon = 40.0 / _min_decay(model)
    out = {}
    for n in sorted(orders):
        if n in closed:
            out[n] = closed[n]
            continue
        pair = []
        for name, fn in (("K", series.K), ("I", series.I)):
            a, b = fn(n, horizon), fn(n, 2 * horizon)
            gap = np.linalg.norm(a - b)
            if not np.isfinite(gap) or gap > tol * max(1.0, np.linalg.norm(b)):
                raise NoLimit(f"{name}_{n} moved by {gap:.3e} between t={horizon:g} and t={2 * horizon:g}")
            pair.append(b)
        out[n] = tuple(pair)
    return out


def renormalization_map(model: ModelSpec, lim=None, lam=None):
    """R = P (1 + lam L L0^{(-1)} (Lambda - 1)).

    L0^{(-1)} (Lambda - 1) equals int_0^inf e^{L0 s} ds and does not depend on
    the choice of pseudoinverse.
    """
    spec = model.spectrum
    lim = superops.limit_superoperator(spec) if lim is None else lim
    lam = model.lam if lam is None else lam
    one = np.eye(model.size)
    pinv = superops.generator_pseudoinverse(spec)
    return model.projector @ (one + lam * model.l_int @ pinv @ (lim - one))


@dataclass(frozen=True)
class BvhResult:
    K2_inf: np.ndarray
    I2_inf: np.ndarray
    renorm_map: np.ndarray
    lam: float
    residuals: dict
    tol: float = VALIDITY_TOL
    relaxation: RelaxationReport | None = None

    @property
    def flags(self) -> dict:
        return {name: bool(r <= self.tol) for name, r in self.residuals.items()}

    @property
    def valid(self) -> bool:
        ok = all(self.flags.values())
        if self.relaxation is not None:
            ok = ok and self.relaxation.enhanced_satisfied
        return ok


def bvh_prepare(model: ModelSpec, tol=VALIDITY_TOL, horizon=None, relaxation=None,
                backend="algebraic") -> BvhResult:
    """Limits of orders 1-3 and the renormalization map for ``model``.

    The order-3 limits are found by horizon doubling; when they do not settle
    the residual is recorded as infinite instead of raising.
    """
    series = TclSeries(model, max_order=3, backend=backend)
    lims = K_I_limits(series, orders=(1, 2), horizon=horizon)
    residuals = {"K1": float(np.linalg.norm(lims[1][0])), "I1": float(np.linalg.norm(lims[1][1]))}
    try:
        k3, i3 = K_I_limits(series, orders=(3,), horizon=horizon, tol=tol)[3]
        residuals["K3"] = float(np.linalg.norm(k3))
        residuals["I3"] = float(np.linalg.norm(i3))
    except NoLimit as exc:
        log.warning("order-3 limit not found: %s", exc)
        residuals["K3"] = residuals["I3"] = float("inf")
    return BvhResult(lims[2][0], lims[2][1], renormalization_map(model), model.lam,
                     residuals, tol, relaxation)


def _outer_solution(bvh: BvhResult, x0, src, t):
    gen = bvh.lam**2 * bvh.K2_inf
    out = scipy.linalg.expm(gen * t) @ x0
    if src is not None:
        out = out + bvh.lam**2 * phi_integral(gen, t) @ bvh.I2_inf @ src
    return out


def bvh_solution(model: ModelSpec, bvh: BvhResult, rho0, t, override=False, renormalize=True):
    """P rho(t) ~ e^{lam^2 K2 t} R rho0 + (e^{lam^2 K2 t} - 1)/K2 I2 Q rho0.

    ``renormalize=False`` replaces R by P, for comparison only.
    """
    if not bvh.valid and not override:
        raise ConsistencyError(f"limit validity checks failed: {bvh.residuals}")
    if bvh.lam != model.lam:
        raise ValidationError(f"BvhResult was prepared for lam={bvh.lam}, model has {model.lam}")
    vec = superops.vectorize(np.asarray(rho0, dtype=complex))
    start = bvh.renorm_map if renormalize else model.projector
    out = _outer_solution(bvh, start @ vec, model.complement @ vec, t)
    return superops.devectorize(out)


def bvh_solution_leading(model: ModelSpec, K2_inf, rho0, t, tol=1e-10):
    """e^{lam^2 K2(+inf) t} P rho0 for an initial state with Q rho0 = 0."""
    vec = superops.vectorize(np.asarray(rho0, dtype=complex))
    off = np.linalg.norm(model.complement @ vec)
    if off > tol:
        raise ConsistencyError(f"|Q rho(0)| = {off:.3e} exceeds {tol:.1e}; the leading form needs Q rho(0) = 0")
    out = scipy.linalg.expm(model.lam**2 * np.asarray(K2_inf) * t) @ model.projector @ vec
    return superops.devectorize(out)


def bvh_trajectory(model: ModelSpec, bvh: BvhResult, rho0, times, leading=False,
                   override=False, renormalize=True, tol=1e-10) -> Trajectory:
    times = np.asarray(times, dtype=float)
    if leading:
        states = [bvh_solution_leading(model, bvh.K2_inf, rho0, t, tol) for t in times]
        return Trajectory(times, np.array(states), "bvh_leading")
    states = [bvh_solution(model, bvh, rho0, t, override, renormalize) for t in times]
    return Trajectory(times, np.array(states), "bvh")
