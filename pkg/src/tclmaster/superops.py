"""Dense superoperator algebra on column-stacked density matrices.

Conventions
-----------
A d x d operator ``rho`` is vectorized by stacking columns, so that
``vec(rho)[i + d*j] == rho[i, j]``. Under this convention

    vec(A @ rho @ B) == kron(B.T, A) @ vec(rho)

and every superoperator in the package is a ``(d*d, d*d)`` complex array
acting on such vectors. Superoperators are plain ``numpy.ndarray`` objects;
the helpers here only build, inspect and decompose them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import DimensionError, NoLimit, NonDiagonalizable, ValidationError

TOL_HERM = 1e-10
TOL_SPEC = 1e-9
COND_MAX = 1e8
GROUPING_RTOL = 1e-9


def hilbert_dim(superop) -> int:
    """Return d for a d^2 x d^2 superoperator."""
    superop = np.asarray(superop)
    if superop.ndim != 2 or superop.shape[0] != superop.shape[1]:
        raise DimensionError(f"superoperator must be square, got shape {superop.shape}")
    d = math.isqrt(superop.shape[0])
    if d * d != superop.shape[0]:
        raise DimensionError(f"superoperator size {superop.shape[0]} is not a perfect square")
    return d


def _square(a, name="matrix"):
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {a.shape}")
    return a


def vectorize(rho):
    """Column-stack a square matrix into a vector of length d^2."""
    rho = _square(rho, "rho")
    return np.reshape(rho, (-1,), order="F")


def devectorize(vec):
    """Inverse of :func:`vectorize`."""
    vec = np.asarray(vec)
    if vec.ndim != 1:
        raise DimensionError(f"expected a 1-d vector, got shape {vec.shape}")
    d = math.isqrt(vec.shape[0])
    if d * d != vec.shape[0]:
        raise DimensionError(f"vector length {vec.shape[0]} is not a perfect square")
    return np.reshape(vec, (d, d), order="F")


def apply(superop, rho):
    """Apply a superoperator to a d x d matrix and return a d x d matrix."""
    return devectorize(np.asarray(superop) @ vectorize(rho))


def spre(a):
    """Superoperator of left multiplication, rho -> a @ rho."""
    a = _square(a)
    return np.kron(np.eye(a.shape[0]), a).astype(complex)


def spost(b):
    """Superoperator of right multiplication, rho -> rho @ b."""
    b = _square(b)
    return np.kron(b.T, np.eye(b.shape[0])).astype(complex)


def sandwich(a, b):
    """Superoperator rho -> a @ rho @ b."""
    a = _square(a)
    b = _square(b)
    return np.kron(b.T, a).astype(complex)


def identity_superop(d: int):
    return np.eye(d * d, dtype=complex)


def ket_bra(i: int, j: int, d: int):
    """Matrix unit |i><j| in dimension d."""
    m = np.zeros((d, d), dtype=complex)
    m[i, j] = 1.0
    return m


def commutator_superoperator(a, prefactor=1.0):
    """Superoperator rho -> prefactor * (a rho - rho a)."""
    a = _square(a, "operator")
    return complex(prefactor) * (spre(a) - spost(a))


def anticommutator_superoperator(a, prefactor=1.0):
    """Superoperator rho -> prefactor * (a rho + rho a)."""
    a = _square(a, "operator")
    return complex(prefactor) * (spre(a) + spost(a))


def dissipator(a):
    """Lindblad dissipator D[a] rho = a rho a^dag - 1/2 {a^dag a, rho}."""
    a = _square(a, "jump operator").astype(complex)
    ada = a.conj().T @ a
    return sandwich(a, a.conj().T) - 0.5 * (spre(ada) + spost(ada))


@dataclass(frozen=True)
class GkslSpec:
    """Hamiltonian plus weighted jump operators of a GKSL generator.

    ``jump_terms`` is a sequence of ``(operator, rate)`` pairs.
    """

    hamiltonian: np.ndarray
    jump_terms: tuple = ()

    def __post_init__(self):
        h = _square(np.asarray(self.hamiltonian, dtype=complex), "hamiltonian")
        object.__setattr__(self, "hamiltonian", h)
        scale = max(1.0, np.linalg.norm(h))
        if np.linalg.norm(h - h.conj().T) > TOL_HERM * scale:
            raise ValidationError("hamiltonian is not Hermitian")
        terms = []
        for op, rate in self.jump_terms:
            op = _square(np.asarray(op, dtype=complex), "jump operator")
            if op.shape != h.shape:
                raise DimensionError(
                    f"jump operator shape {op.shape} does not match hamiltonian {h.shape}"
                )
            rate = float(rate)
            if not np.isfinite(rate) or rate < 0:
                raise ValidationError(f"jump rate must be a nonnegative finite number, got {rate}")
            terms.append((op, rate))
        object.__setattr__(self, "jump_terms", tuple(terms))

    @property
    def dim(self) -> int:
        return self.hamiltonian.shape[0]


def gksl_superoperator(spec: GkslSpec):
    """Matrix of rho -> -i[H, rho] + sum_k rate_k D[A_k] rho."""
    out = commutator_superoperator(spec.hamiltonian, -1j)
    for op, rate in spec.jump_terms:
        out = out + rate * dissipator(op)
    return out


def is_trace_preserving(superop, tol=TOL_SPEC) -> bool:
    """True when tr(S rho) == 0 for all rho, i.e. vec(I)^dag S == 0."""
    d = hilbert_dim(superop)
    row = vectorize(np.eye(d)).conj() @ superop
    return bool(np.linalg.norm(row) <= tol * max(1.0, np.linalg.norm(superop)))


def projector_check(p, tol=1e-10) -> bool:
    """True iff ``p`` is idempotent within ``tol`` (relative)."""
    p = np.asarray(p)
    hilbert_dim(p)
    return bool(np.linalg.norm(p @ p - p) <= tol * max(1.0, np.linalg.norm(p)))


def trace_projector(sigma):
    """Rank-one projector rho -> tr(rho) sigma; idempotent when tr(sigma) == 1."""
    sigma = _square(np.asarray(sigma, dtype=complex), "sigma")
    d = sigma.shape[0]
    return np.outer(vectorize(sigma), vectorize(np.eye(d)).conj())


def product_projector(sigma_env, d_sys: int):
    """Projector rho -> tr_E(rho) (x) sigma_env on H_S (x) H_E, with kron(A_S, B_E) ordering."""
    sigma = _square(np.asarray(sigma_env, dtype=complex), "sigma_env")
    d_env = sigma.shape[0]
    d = d_sys * d_env
    cols = []
    for k in range(d * d):
        basis = np.zeros(d * d, dtype=complex)
        basis[k] = 1.0
        rho = devectorize(basis).reshape(d_sys, d_env, d_sys, d_env)
        cols.append(vectorize(np.kron(np.einsum("aibi->ab", rho), sigma)))
    return np.array(cols).T


def entry_projector(entries: Sequence[tuple[int, int]], d: int):
    """Coordinate projector keeping the listed matrix entries and zeroing the rest."""
    diag = np.zeros(d * d)
    for i, j in entries:
        diag[i + d * j] = 1.0
    return np.diag(diag).astype(complex)


@dataclass(frozen=True)
class Spectrum:
    """Eigendecomposition L0 = V diag(eigenvalues) W with W = V^{-1}."""

    eigenvalues: np.ndarray
    right_vectors: np.ndarray
    left_vectors: np.ndarray
    cond: float = 1.0

    @property
    def size(self) -> int:
        return self.eigenvalues.shape[0]

    def reconstruct(self):
        return (self.right_vectors * self.eigenvalues) @ self.left_vectors

    def function(self, f):
        """Apply a scalar function spectrally: V diag(f(eigenvalues)) W."""
        return (self.right_vectors * f(self.eigenvalues)) @ self.left_vectors

    def propagator(self, t):
        """e^{L0 t} evaluated in the eigenbasis."""
        return self.function(lambda lam: np.exp(lam * t))

    def decay_rates(self, tol=None):
        """Positive decay rates -Re(lambda) of the non-stationary modes, sorted."""
        if tol is None:
            tol = default_zero_tol(self)
        rates = -self.eigenvalues.real
        return np.sort(rates[rates > tol])


def default_zero_tol(spec: Spectrum) -> float:
    scale = float(np.max(np.abs(spec.eigenvalues))) if spec.size else 0.0
    return max(TOL_SPEC * max(scale, 1.0), 1e-12)


def spectral_decompose(l0, cond_max=COND_MAX, tol_spec=TOL_SPEC) -> Spectrum:
    """Diagonalize a superoperator.

    Raises :class:`NonDiagonalizable` when the eigenbasis is singular or
    worse conditioned than ``cond_max``.
    """
    l0 = np.asarray(l0, dtype=complex)
    hilbert_dim(l0)
    evals, vecs = scipy.linalg.eig(l0)
    cond = np.linalg.cond(vecs)
    if not np.isfinite(cond) or cond > cond_max:
        raise NonDiagonalizable(
            f"eigenbasis condition number {cond:.3e} exceeds {cond_max:.1e}; "
            "use the quadrature backend"
        )
    left = np.linalg.inv(vecs)
    spec = Spectrum(evals, vecs, left, float(cond))
    scale = max(np.linalg.norm(l0), 1.0)
    if np.linalg.norm(spec.reconstruct() - l0) > tol_spec * scale * max(1.0, cond):
        raise NonDiagonalizable("eigendecomposition does not reconstruct L0")
    return spec


@dataclass(frozen=True)
class FrequencyDecomposition:
    """Split of an interaction superoperator into eigenoperators of [L0, .].

    ``parts[n]`` satisfies ``[L0, parts[n]] = frequencies[n] * parts[n]`` so
    that ``e^{-L0 t} L e^{L0 t} = sum_n exp(-frequencies[n] t) parts[n]``.
    """

    frequencies: np.ndarray
    parts: np.ndarray
    grouping_tolerance: float
    spectrum: Spectrum = field(repr=False)

    def __len__(self):
        return self.frequencies.shape[0]

    def total(self):
        if len(self) == 0:
            n = self.spectrum.size
            return np.zeros((n, n), dtype=complex)
        return self.parts.sum(axis=0)

    def at(self, t):
        """Interaction-picture generator L(t) = sum_w e^{-w t} L_w."""
        if len(self) == 0:
            return self.total()
        return np.tensordot(np.exp(-self.frequencies * t), self.parts, axes=1)

    def zero_part(self):
        """Component commuting with L0 (zero frequency), or zeros."""
        n = self.spectrum.size
        out = np.zeros((n, n), dtype=complex)
        for w, part in zip(self.frequencies, self.parts):
            if abs(w) <= self.grouping_tolerance:
                out = out + part
        return out

    def operator_function(self, f):
        """sum_w f(w) L_w for a vectorized scalar function f."""
        if len(self) == 0:
            return self.total()
        return np.tensordot(f(self.frequencies), self.parts, axes=1)


def _cluster(values, tol):
    """Greedy clustering of complex values; returns labels and representatives."""
    order = np.lexsort((values.imag, values.real))
    labels = np.empty(values.shape[0], dtype=int)
    reps: list[complex] = []
    members: list[list[complex]] = []
    for idx in order:
        v = values[idx]
        for c, r in enumerate(reps):
            if abs(v - r) <= tol:
                labels[idx] = c
                members[c].append(v)
                break
        else:
            labels[idx] = len(reps)
            reps.append(v)
            members.append([v])
    centers = np.array([np.mean(m) for m in members], dtype=complex)
    return labels, centers


def frequency_decompose(l_int, spec: Spectrum, grouping_tol=None) -> FrequencyDecomposition:
    """Decompose ``l_int`` into eigenoperators of the adjoint action of L0.

    Entry (i, j) of ``W l_int V`` carries frequency ``lam_i - lam_j``; entries
    whose frequencies agree within ``grouping_tol`` form one component.
    """
    l_int = np.asarray(l_int, dtype=complex)
    if l_int.shape != (spec.size, spec.size):
        raise DimensionError(f"interaction shape {l_int.shape} does not match spectrum {spec.size}")
    if grouping_tol is None:
        grouping_tol = max(GROUPING_RTOL * float(np.max(np.abs(spec.eigenvalues), initial=0.0)), 1e-12)
    v, w, lam = spec.right_vectors, spec.left_vectors, spec.eigenvalues
    tilde = w @ l_int @ v
    scale = np.max(np.abs(tilde), initial=0.0)
    omega = lam[:, None] - lam[None, :]
    support = np.abs(tilde) > 1e-15 * scale if scale > 0 else np.zeros(tilde.shape, bool)
    if not support.any():
        return FrequencyDecomposition(
            np.zeros(0, dtype=complex), np.zeros((0,) + l_int.shape, dtype=complex), grouping_tol, spec
        )
    rows, cols = np.nonzero(support)
    labels, centers = _cluster(omega[rows, cols], grouping_tol)
    parts = np.zeros((centers.shape[0],) + l_int.shape, dtype=complex)
    for c in range(centers.shape[0]):
        mask = np.zeros(tilde.shape, dtype=bool)
        sel = labels == c
        mask[rows[sel], cols[sel]] = True
        parts[c] = v @ np.where(mask, tilde, 0.0) @ w
    # snap near-zero centers so zero-frequency detection is exact
    centers = np.where(np.abs(centers) <= grouping_tol, 0.0, centers)
    return FrequencyDecomposition(centers, parts, float(grouping_tol), spec)


def ad_action(l0, x):
    """[L0, X] for superoperators."""
    return l0 @ x - x @ l0


def ad_pseudoinverse_apply(fd: FrequencyDecomposition):
    """[L0, .]^{(-1)} L = sum over nonzero frequencies of L_w / w."""
    n = fd.spectrum.size
    out = np.zeros((n, n), dtype=complex)
    for w, part in zip(fd.frequencies, fd.parts):
        if abs(w) > fd.grouping_tolerance:
            out = out + part / w
    return out


def limit_superoperator(spec: Spectrum, tol=None):
    """Lambda = lim_{t->inf} e^{L0 t}, the spectral projector onto |lambda| <= tol."""
    if tol is None:
        tol = default_zero_tol(spec)
    lam = spec.eigenvalues
    if np.any(lam.real > tol):
        raise NoLimit(f"eigenvalue with positive real part {lam.real.max():.3e}")
    oscillating = (np.abs(lam.real) <= tol) & (np.abs(lam.imag) > tol)
    if np.any(oscillating):
        raise NoLimit(
            f"purely imaginary eigenvalue {lam[oscillating][0]:.6g}: e^(L0 t) oscillates"
        )
    return spec.function(lambda x: (np.abs(x) <= tol).astype(complex))


def generator_pseudoinverse(spec: Spectrum, tol=None):
    """Spectral pseudoinverse of L0: inverse on nonzero modes, zero on the kernel."""
    if tol is None:
        tol = default_zero_tol(spec)

    def inv(x):
        out = np.zeros_like(x)
        big = np.abs(x) > tol
        out[big] = 1.0 / x[big]
        return out

    return spec.function(inv)


def range_basis(p, tol=1e-10):
    """Return (R, S) with R of orthonormal columns spanning range(p), S = R^dag p.

    Then p = R S and S R = I, which fixes the restricted inverse
    A^{(-1)} = R (S A R)^{-1} S used for P U P.
    """
    p = np.asarray(p, dtype=complex)
    u, s, _ = np.linalg.svd(p)
    rank = int(np.sum(s > tol * max(1.0, s[0] if s.size else 0.0)))
    r = u[:, :rank]
    return r, r.conj().T @ p
