"""Perturbative time-convolutionless generator and inhomogeneity.

For the interaction-picture equation d rho/dt = lam L(t) rho with
L(t) = e^{-L0 t} L e^{L0 t}, the projected dynamics obey

    d/dt P rho(t) = K(t) P rho(t) + I(t) Q rho(t0),

with K = sum_n lam^n K_n and I = sum_n lam^n I_n. Both are assembled from the
time-ordered moments

    M_k(t)  = int ... int  P L(t_1) ... L(t_k) P      (t0 <= t_k <= ... <= t_1 <= t)
    Mt_k(t) = same with a trailing Q

and their time derivatives, summed over compositions of n. Two moment
backends are provided: :class:`AlgebraicMoments` (closed form through the
frequency decomposition of L and the h_k kernels) and
:class:`QuadratureMoments` (direct integration of the definition, used as an
independent oracle).
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np
import scipy.linalg
from numpy.polynomial import chebyshev as C

from . import superops
from .errors import ConvergenceError, DimensionError, ValidationError
from .kernels import kernel_batch

N_MAX = 6
_EPS = np.finfo(float).eps
PRUNE_TOL = 1e-14


@dataclass(frozen=True)
class ModelSpec:
    """Free generator, interaction, projector, coupling and initial time.

    ``l0`` and ``l_int`` may be given as :class:`~tclmaster.superops.GkslSpec`
    or as explicit superoperator matrices.
    """

    l0: np.ndarray
    l_int: np.ndarray
    projector: np.ndarray
    lam: float = 0.0
    t0: float = 0.0

    def __post_init__(self):
        for name in ("l0", "l_int"):
            value = getattr(self, name)
            if isinstance(value, superops.GkslSpec):
                value = superops.gksl_superoperator(value)
            object.__setattr__(self, name, np.array(value, dtype=complex))
        object.__setattr__(self, "projector", np.array(self.projector, dtype=complex))
        shapes = {self.l0.shape, self.l_int.shape, self.projector.shape}
        if len(shapes) != 1:
            raise DimensionError(f"inconsistent superoperator shapes: {sorted(shapes)}")
        superops.hilbert_dim(self.l0)
        for name in ("l0", "l_int", "projector"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValidationError(f"{name} contains non-finite entries")
        if not superops.projector_check(self.projector):
            raise ValidationError("projector is not idempotent")
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "t0", float(self.t0))

    @property
    def dim(self) -> int:
        return superops.hilbert_dim(self.l0)

    @property
    def size(self) -> int:
        return self.l0.shape[0]

    @property
    def complement(self):
        return np.eye(self.size, dtype=complex) - self.projector

    @cached_property
    def spectrum(self) -> superops.Spectrum:
        return superops.spectral_decompose(self.l0)

    @cached_property
    def frequencies(self) -> superops.FrequencyDecomposition:
        return superops.frequency_decompose(self.l_int, self.spectrum)

    def with_lambda(self, lam) -> "ModelSpec":
        return ModelSpec(self.l0, self.l_int, self.projector, lam=lam, t0=self.t0)

    def interaction_at(self, t):
        """L(t) = e^{-L0 t} L e^{L0 t} by two matrix exponentials."""
        return scipy.linalg.expm(-self.l0 * t) @ self.l_int @ scipy.linalg.expm(self.l0 * t)


def compositions(n: int, n_max: int = N_MAX) -> list[tuple[int, ...]]:
    """All ordered tuples of positive integers summing to n, in lexicographic order."""
    if not isinstance(n, (int, np.integer)) or n < 1 or n > n_max:
        raise ValidationError(f"order must be an integer in [1, {n_max}], got {n!r}")
    out = []
    for mask in range(2 ** (n - 1)):
        parts, run = [], 1
        for bit in range(n - 1):
            if mask >> bit & 1:
                parts.append(run)
                run = 1
            else:
                run += 1
        parts.append(run)
        out.append(tuple(parts))
    return sorted(out)


def inverse_series(coeffs, order: int):
    """Coefficients B_0..B_order of (I + sum_k lam^k A_k)^{-1} = sum_n lam^n B_n.

    ``coeffs[k-1]`` is A_k; missing high orders count as zero. Each B_n is the
    alternating sum over compositions of n of the products A_{k_1} ... A_{k_q}.
    """
    coeffs = [np.asarray(a) for a in coeffs]
    size = coeffs[0].shape[0]
    out = [np.eye(size, dtype=complex)]
    for n in range(1, order + 1):
        acc = np.zeros((size, size), dtype=complex)
        for comp in compositions(n, n_max=max(n, N_MAX)):
            if max(comp) > len(coeffs):
                continue
            prod = np.eye(size, dtype=complex)
            for k in comp:
                prod = prod @ coeffs[k - 1]
            acc += (-1) ** len(comp) * prod
        out.append(acc)
    return out


class Moments(NamedTuple):
    """M_k, dM_k/dt, Mt_k, dMt_k/dt at one time."""

    m: np.ndarray
    m_dot: np.ndarray
    mt: np.ndarray
    mt_dot: np.ndarray


class _MomentCache:
    """Per-(k, t) memo; readers are lock-free, insertion is serialized."""

    def __init__(self):
        self._store = {}
        self._lock = threading.Lock()

    def get(self, key):
        return self._store.get(key)

    def put(self, key, value):
        with self._lock:
            self._store.setdefault(key, value)
        return self._store[key]


class AlgebraicMoments:
    """Moments from the frequency decomposition of L.

    With L = sum_w L_w and t0 the initial time,

        M_k(t)     = sum exp(-t0 sum_j w_j) h_k(t - t0; w_1..w_k) P L_w1 ... L_wk P
        dM_k/dt(t) = sum exp(-t w_1) exp(-t0 sum_{j>1} w_j) h_{k-1}(t - t0; w_2..w_k) P L_w1 ... L_wk P

    and likewise with a trailing Q. Frequency tuples whose operator product
    is negligible (relative Frobenius norm below ``prune_tol``) are dropped
    as soon as the running product falls below the threshold.
    """

    backend = "algebraic"

    def __init__(self, model: ModelSpec, fd: superops.FrequencyDecomposition | None = None,
                 prune_tol: float = PRUNE_TOL):
        self.model = model
        self.fd = model.frequencies if fd is None else fd
        self.prune_tol = prune_tol
        self._chains = {}
        self._cache = _MomentCache()
        self._chain_lock = threading.RLock()

    def _prefix(self, k):
        """Surviving (frequencies, P L_w1 ... L_wk, norm scale) for tuples of length k."""
        with self._chain_lock:
            if 0 not in self._chains:
                p = self.model.projector
                self._chains[0] = (np.zeros((1, 0), complex), p[None], np.array([np.linalg.norm(p)]))
            parts = self.fd.parts
            part_norms = np.linalg.norm(parts, axis=(1, 2))
            for j in range(1, k + 1):
                if j in self._chains:
                    continue
                freqs, mats, scales = self._chains[j - 1]
                prods = np.einsum("aij,bjk->abik", mats, parts)
                new_scales = scales[:, None] * part_norms[None, :]
                keep = np.linalg.norm(prods, axis=(2, 3)) > self.prune_tol * new_scales
                ia, ib = np.nonzero(keep)
                new_freqs = np.concatenate([freqs[ia], self.fd.frequencies[ib][:, None]], axis=1)
                self._chains[j] = (new_freqs, prods[ia, ib], new_scales[ia, ib])
            return self._chains[k]

    def terms(self, k, trailing="P"):
        """Frequency tuples and products P L_w1 ... L_wk X with X = P or Q."""
        key = ("terms", k, trailing)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        freqs, mats, scales = self._prefix(k)
        right = self.model.projector if trailing == "P" else self.model.complement
        prods = mats @ right
        keep = np.linalg.norm(prods, axis=(1, 2)) > self.prune_tol * scales * max(1.0, np.linalg.norm(right))
        return self._cache.put(key, (freqs[keep], prods[keep]))

    def _sum(self, freqs, prods, t, derivative):
        if freqs.shape[0] == 0:
            return np.zeros(self.model.l0.shape, dtype=complex)
        t0 = self.model.t0
        tau = t - t0
        if derivative:
            # exp(-t w1) = exp(-t0 w1) exp(-tau w1)
            w = kernel_batch(tau, freqs[:, 1:], shift=freqs[:, 0])
        else:
            w = kernel_batch(tau, freqs)
        if t0 != 0.0:
            w = w * np.exp(-t0 * freqs.sum(axis=1))
        return np.tensordot(w, prods, axes=1)

    def evaluate(self, k: int, t: float) -> Moments:
        if k < 1:
            raise ValidationError("moment order must be >= 1")
        t = float(t)
        if t < self.model.t0:
            raise ValidationError(f"t={t} precedes t0={self.model.t0}")
        key = (k, t)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        fp, pp = self.terms(k, "P")
        fq, pq = self.terms(k, "Q")
        out = Moments(
            self._sum(fp, pp, t, False),
            self._sum(fp, pp, t, True),
            self._sum(fq, pq, t, False),
            self._sum(fq, pq, t, True),
        )
        return self._cache.put(key, out)


def _cheb_rule(n):
    """Chebyshev-Lobatto nodes on [-1, 1] and the cumulative integration matrix."""
    x = C.chebpts2(n)
    vander = C.chebvander(x, n - 1)
    integ = np.stack([C.chebint(col, lbnd=-1) for col in np.eye(n)], axis=1)
    s = C.chebvander(x, n) @ integ @ np.linalg.inv(vander)
    return x, s


class QuadratureMoments:
    """Moments by direct integration of the time-ordered definition.

    L(t) is built from matrix exponentials of L0 (no eigendecomposition). The
    nested integrals are evaluated level by level as cumulative
    Clenshaw-Curtis integrals on a Chebyshev-Lobatto grid over [t0, t]:

        G_0 = I,   G_j(s) = int_{t0}^{s} L(u) G_{j-1}(u) du,
        M_k = P G_k(t) P,   dM_k/dt = P L(t) G_{k-1}(t) P.

    The grid is doubled until successive results agree to ``abs_tol``
    (relative to the size of the entries when they exceed one), or to the
    roundoff floor set by the growing factors of e^{-L0 u} when that is larger.
    """

    backend = "quadrature"
    max_order = 3

    def __init__(self, model: ModelSpec, abs_tol: float = 1e-10, n_start: int = 17, n_max: int = 513):
        self.model = model
        self.abs_tol = abs_tol
        self.n_start = n_start
        self.n_max = n_max
        self._cache = _MomentCache()

    def _chain(self, t, order, n):
        t0 = self.model.t0
        x, s = _cheb_rule(n)
        half = (t - t0) / 2
        nodes = t0 + half * (x + 1)
        ls = np.stack([self.model.interaction_at(u) for u in nodes])
        g = [np.broadcast_to(np.eye(self.model.size, dtype=complex), ls.shape)]
        floors = [0.0]
        abs_ls = np.abs(ls)
        for _ in range(order):
            integrand = ls @ g[-1]
            g.append(half * np.einsum("mn,nij->mij", s, integrand))
            # roundoff floor: cancellation among products of size |L| |G|
            floors.append(256 * _EPS * abs(half) * float(np.max(abs_ls @ np.abs(g[-2]))))
        # last node is s = t
        return ls[-1], [gj[-1] for gj in g], floors

    def _converged_chain(self, t, order):
        n = self.n_start
        l_t, prev, _ = self._chain(t, order, n)
        while True:
            n = 2 * n - 1
            if n > self.n_max:
                raise ConvergenceError(
                    f"moment quadrature did not reach abs_tol={self.abs_tol} with {self.n_max} nodes"
                )
            l_t, cur, floors = self._chain(t, order, n)
            ok = all(
                np.max(np.abs(a - b)) <= max(self.abs_tol * max(1.0, np.max(np.abs(a))), floor)
                for a, b, floor in zip(cur[1:], prev[1:], floors[1:])
            )
            prev = cur
            if ok:
                return l_t, cur

    def evaluate(self, k: int, t: float) -> Moments:
        if k < 1 or k > self.max_order:
            raise ValidationError(f"quadrature moments support 1 <= k <= {self.max_order}")
        t = float(t)
        if t < self.model.t0:
            raise ValidationError(f"t={t} precedes t0={self.model.t0}")
        hit = self._cache.get((k, t))
        if hit is not None:
            return hit
        p, q = self.model.projector, self.model.complement
        if t == self.model.t0:
            l_t = self.model.interaction_at(t)
            g = [np.eye(self.model.size, dtype=complex)] + [np.zeros_like(p)] * self.max_order
        else:
            l_t, g = self._converged_chain(t, self.max_order)
        for j in range(1, self.max_order + 1):
            self._cache.put(
                (j, t),
                Moments(p @ g[j] @ p, p @ l_t @ g[j - 1] @ p, p @ g[j] @ q, p @ l_t @ g[j - 1] @ q),
            )
        return self._cache.get((k, t))


def moments_algebraic(model: ModelSpec, fd, k: int, t: float) -> Moments:
    return AlgebraicMoments(model, fd).evaluate(k, t)


def moments_quadrature(model: ModelSpec, k: int, t: float, abs_tol: float = 1e-10) -> Moments:
    return QuadratureMoments(model, abs_tol=abs_tol).evaluate(k, t)


def _check_orders(moments, n):
    missing = [k for k in range(1, n + 1) if k not in moments]
    if missing:
        raise ValidationError(f"moments of orders {missing} are required for order {n}")
    shapes = {m.m.shape for m in moments.values()}
    if len(shapes) != 1:
        raise DimensionError("moment sets come from different models")


def assemble_K_n(moments: dict, n: int):
    """K_n = sum_q (-1)^q sum_{compositions (k0..kq) of n} dM_k0 M_k1 ... M_kq."""
    _check_orders(moments, n)
    acc = np.zeros_like(moments[1].m)
    for comp in compositions(n, n_max=max(n, N_MAX)):
        prod = moments[comp[0]].m_dot
        for k in comp[1:]:
            prod = prod @ moments[k].m
        acc += (-1) ** (len(comp) - 1) * prod
    return acc


def assemble_I_n(moments: dict, n: int):
    """I_n: the same composition sum with the last factor replaced by Mt (or dMt for q = 0)."""
    _check_orders(moments, n)
    acc = moments[n].mt_dot.copy()
    for comp in compositions(n, n_max=max(n, N_MAX)):
        if len(comp) == 1:
            continue
        prod = moments[comp[0]].m_dot
        for k in comp[1:-1]:
            prod = prod @ moments[k].m
        prod = prod @ moments[comp[-1]].mt
        acc += (-1) ** (len(comp) - 1) * prod
    return acc


class TclSeries:
    """Order-by-order evaluators t -> K_n(t), I_n(t) for one model."""

    def __init__(self, model: ModelSpec, max_order: int = 2, backend: str = "algebraic",
                 **backend_options):
        if max_order < 1 or max_order > N_MAX:
            raise ValidationError(f"max_order must be in [1, {N_MAX}]")
        self.model = model
        self.max_order = max_order
        if backend == "algebraic":
            self.moments = AlgebraicMoments(model, **backend_options)
        elif backend == "quadrature":
            self.moments = QuadratureMoments(model, **backend_options)
        else:
            raise ValidationError(f"unknown backend {backend!r}")

    @property
    def backend(self) -> str:
        return self.moments.backend

    def moment_sets(self, n, t):
        return {k: self.moments.evaluate(k, t) for k in range(1, n + 1)}

    def _order(self, n):
        if n < 1 or n > self.max_order:
            raise ValidationError(f"order {n} outside 1..{self.max_order}")

    def K(self, n: int, t: float):
        self._order(n)
        return assemble_K_n(self.moment_sets(n, t), n)

    def I(self, n: int, t: float):  # noqa: E743
        self._order(n)
        return assemble_I_n(self.moment_sets(n, t), n)

    def generator(self, t: float, order: int | None = None, lam: float | None = None):
        """Truncated sums (K(t), I(t)) = sum_{n <= order} lam^n (K_n(t), I_n(t))."""
        order = self.max_order if order is None else order
        lam = self.model.lam if lam is None else lam
        moms = self.moment_sets(order, t)
        k_tot = np.zeros_like(self.model.l0)
        i_tot = np.zeros_like(self.model.l0)
        for n in range(1, order + 1):
            k_tot += lam**n * assemble_K_n(moms, n)
            i_tot += lam**n * assemble_I_n(moms, n)
        return k_tot, i_tot


def second_order_closed_forms(model: ModelSpec, fd=None, t: float = 0.0, prune_tol: float = PRUNE_TOL):
    """K_1, K_2, I_1, I_2 for t0 = 0 in the compact product form.

    K_2(t) = P L(t) Q Y(t) P and I_2(t) = P L(t) Q Y(t) Q, with
    Y(t) = int_0^t L(s) ds = sum_w h_1(t; w) L_w. Y(t) agrees with
    [L0, .]^{(-1)} (L - L(t)) on the nonzero frequencies and carries t L_0 on
    the commutant of L0.

    L(t) and Y(t) can hold entries of size e^{|Re w| t} that cancel in the
    product, so the sums run over frequency pairs: each weight
    e^{-w1 t} h_1(t; w2) multiplies P L_w1 Q L_w2 X directly, and products
    below ``prune_tol`` relative to their factors are dropped.
    """
    if model.t0 != 0.0:
        raise ValidationError("the closed forms assume t0 = 0")
    fd = model.frequencies if fd is None else fd
    p, q = model.projector, model.complement
    if len(fd) == 0:
        zero = np.zeros_like(p)
        return zero, zero.copy(), zero.copy(), zero.copy()
    freqs, parts = fd.frequencies, fd.parts
    part_norms = np.linalg.norm(parts, axis=(1, 2))
    left = p @ parts
    left_q = left @ q

    def first(trail):
        prods = left @ trail
        keep = np.linalg.norm(prods, axis=(1, 2)) > prune_tol * part_norms * np.linalg.norm(p) * max(
            1.0, np.linalg.norm(trail))
        return np.tensordot(np.exp(-freqs[keep] * t), prods[keep], axes=1)

    def second(trail):
        right = parts @ trail
        prods = np.einsum("aij,bjk->abik", left_q, right)
        scale = part_norms[:, None] * part_norms[None, :] * np.linalg.norm(p) * max(1.0, np.linalg.norm(trail))
        ia, ib = np.nonzero(np.linalg.norm(prods, axis=(2, 3)) > prune_tol * scale)
        if ia.size == 0:
            return np.zeros_like(p)
        w = kernel_batch(t, freqs[ib][:, None], shift=freqs[ia])
        return np.tensordot(w, prods[ia, ib], axes=1)

    return first(p), second(p), first(q), second(q)
