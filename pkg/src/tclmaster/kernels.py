"""Nested exponential integrals h_k(t; g_1, ..., g_k).

    h_k(t; g) = int_0^t dt_1 int_0^{t_1} dt_2 ... int_0^{t_{k-1}} dt_k exp(-sum_j g_j t_j)

The kernel equals the divided difference of x -> exp(t x) on the nodes
0, -g_1, -(g_1 + g_2), ..., -(g_1 + ... + g_k), which is the (0, k) entry of
exp(t B) for the bidiagonal matrix B with those nodes on the diagonal and
ones on the superdiagonal. Evaluating it that way handles coincident nodes
(zero denominators in the alternating-sum closed form) without branching.
Because B is triangular, the ordinary scaling-and-squaring exponential is
used in its structure-exploiting form (see :func:`expm_bidiagonal`).
"""

from __future__ import annotations

import warnings

import numpy as np
import scipy.integrate
import scipy.linalg

from .errors import ConvergenceError, ValidationError


def _nodes(gammas):
    gammas = np.asarray(gammas, dtype=complex)
    return np.concatenate([np.zeros(gammas.shape[:-1] + (1,), complex), -np.cumsum(gammas, axis=-1)], axis=-1)


def _bidiagonal(nodes):
    """Stack of bidiagonal matrices with the given diagonals, shape (..., m, m)."""
    m = nodes.shape[-1]
    b = np.zeros(nodes.shape + (m,), dtype=complex)
    idx = np.arange(m)
    b[..., idx, idx] = nodes
    b[..., idx[:-1], idx[1:]] = 1.0
    return b


def _check(t, gammas):
    gammas = np.atleast_1d(np.asarray(gammas, dtype=complex))
    if gammas.shape[-1] < 1:
        raise ValidationError("h_k needs at least one rate (k >= 1)")
    if not np.isfinite(t) or t < 0:
        raise ValidationError(f"t must be a finite nonnegative time, got {t}")
    return gammas


def h_k(t, gammas):
    """Evaluate h_k(t; gammas) for a single rate tuple (k = len(gammas))."""
    gammas = _check(t, gammas)
    return complex(kernel_batch(t, gammas[None, :])[0])


def kernel_batch(t, gammas, shift=None):
    """Vectorized kernels for a stack of rate tuples.

    Parameters
    ----------
    t : float
        Upper integration limit (>= 0).
    gammas : array_like, shape (n, k)
        One rate tuple per row. ``k == 0`` gives ones (h_0 = 1).
    shift : array_like, shape (n,), optional
        When given, returns ``exp(-shift * t) * h_k(t; gammas)``. The factor is
        folded into the exponent so that growing and decaying exponentials
        never meet as separate floating-point numbers.
    """
    gammas = np.asarray(gammas, dtype=complex)
    if gammas.ndim != 2:
        raise ValidationError("gammas must have shape (n, k)")
    if not np.isfinite(t) or t < 0:
        raise ValidationError(f"t must be a finite nonnegative time, got {t}")
    n, k = gammas.shape
    if shift is None:
        shift = np.zeros(n, dtype=complex)
    shift = np.asarray(shift, dtype=complex)
    if k == 0:
        return np.exp(-shift * t)
    nodes = _nodes(gammas) - shift[:, None]
    return expm_bidiagonal(t * nodes, t)[:, 0, k]


def _sinhc(z):
    small = np.abs(z) < 1e-3
    safe = np.where(small, 1.0, z)
    return np.where(small, 1 + z**2 / 6 + z**4 / 120, np.sinh(safe) / safe)


def _exact_bands(diag, sup):
    """Diagonal and first superdiagonal of exp of an upper bidiagonal matrix.

    (e^b - e^a) / (b - a) is evaluated as e^{(a+b)/2} sinh(z) / z, z = (b - a)/2,
    which has no cancellation when the nodes nearly coincide.
    """
    a, b = diag[:, :-1], diag[:, 1:]
    return np.exp(diag), sup * np.exp((a + b) / 2) * _sinhc((b - a) / 2)


def expm_bidiagonal(diag, sup):
    """exp of a stack of upper bidiagonal matrices, shape (n, m, m).

    ``diag`` has shape (n, m); ``sup`` is the (scalar) superdiagonal value.
    Scaling and squaring with a Taylor approximant; before every squaring
    the two bands that have closed forms are overwritten with exact values
    (the structure-exploiting variant of scaling and squaring). scipy's
    expm does the same for triangular input but uses the cancelling form
    (e^b - e^a)/(b - a), which loses half the digits for near-confluent nodes.
    """
    diag = np.asarray(diag, dtype=complex)
    n, m = diag.shape
    idx = np.arange(m)
    sup = np.broadcast_to(np.asarray(sup, dtype=complex), (n, m - 1))
    norm = float(np.max(np.abs(diag), initial=0.0) + np.max(np.abs(sup), initial=0.0))
    s = max(0, int(np.ceil(np.log2(norm))) + 1) if norm > 0 else 0
    x = np.zeros((n, m, m), dtype=complex)
    x[:, idx, idx] = diag / 2**s
    x[:, idx[:-1], idx[1:]] = sup / 2**s
    out = np.broadcast_to(np.eye(m, dtype=complex), x.shape).copy()
    term = out.copy()
    for j in range(1, 30):
        term = term @ x / j
        out += term
        if np.max(np.abs(term)) <= 1e-18 * np.max(np.abs(out)):
            break
    for j in range(s, -1, -1):
        d, u = _exact_bands(diag / 2**j, sup / 2**j)
        out[:, idx, idx] = d
        out[:, idx[:-1], idx[1:]] = u
        if j:
            out = out @ out
    return out


def h_k_quadrature(t, gammas, abs_tol=1e-12, rel_tol=1e-12, limit=200):
    """Nested adaptive quadrature of the defining integral (test oracle, k <= 4).

    Each level is a QUADPACK call integrating the next level as a function of
    its upper limit. Raises :class:`ConvergenceError` when a level runs out of
    subdivisions.
    """
    gammas = _check(t, gammas)
    if gammas.shape[0] > 4:
        raise ValidationError("h_k_quadrature is limited to k <= 4")

    def inner(s, rates):
        # h_k(s; rates) = int_0^s exp(-rates[0] u) h_{k-1}(u; rates[1:]) du
        if len(rates) == 0:
            return 1.0 + 0j
        rate = rates[0]
        val, _ = scipy.integrate.quad(
            lambda u: np.exp(-rate * u) * inner(u, rates[1:]),
            0.0,
            s,
            complex_func=True,
            epsabs=abs_tol,
            epsrel=rel_tol,
            limit=limit,
        )
        return val

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", scipy.integrate.IntegrationWarning)
        out = inner(float(t), tuple(complex(g) for g in gammas))
    # roundoff detection only means the request is below machine precision
    failures = [str(w.message) for w in caught if "subdivisions" in str(w.message)]
    if failures or not np.isfinite(out):
        raise ConvergenceError(failures[0] if failures else "non-finite quadrature result")
    return complex(out)


def phi_integral(x, t):
    """int_0^t exp(x s) ds for a square matrix x, via one augmented exponential.

    Equal to (exp(x t) - 1) / x when x is invertible and well defined when
    it is singular.
    """
    x = np.asarray(x, dtype=complex)
    n = x.shape[0]
    aug = np.zeros((2 * n, 2 * n), dtype=complex)
    aug[:n, :n] = x
    aug[:n, n:] = np.eye(n)
    return scipy.linalg.expm(t * aug)[:n, n:]
