"""Three-level composite model with a decaying pseudomode.

Level 2 decays into level 0 at rate ``gamma`` and is coherently coupled to
level 1 with strength ``g``. The projector keeps the (0, 1) block and folds
the population of level 2 into level 0 (the Argyres-Kelley form after the
zero/one-particle restriction). The closed-form references below are used as
golden values by the tests and by ``tclmaster reproduce-example``.
"""

from __future__ import annotations

import numpy as np

from .superops import (
    anticommutator_superoperator,
    commutator_superoperator,
    dissipator,
    ket_bra,
    sandwich,
    spre,
    spost,
    vectorize,
)

D = 3


def _kb(i, j):
    return ket_bra(i, j, D)


def free_generator(gamma=1.0):
    return gamma * dissipator(_kb(0, 2))


def interaction(g=1.0):
    return commutator_superoperator(_kb(2, 1) + _kb(1, 2), -1j * g)


def projector():
    p = np.zeros((D * D, D * D), dtype=complex)
    for (i, j) in [(0, 1), (1, 0), (1, 1)]:
        k = i + D * j
        p[k, k] = 1.0
    p[0, 0] = 1.0
    p[0, 2 + D * 2] = 1.0
    return p


def decay_superoperator(g=1.0, gamma=1.0):
    """(4 g^2 / gamma) D[|0><1|], the Markovian generator of the projected dynamics."""
    return (4 * g**2 / gamma) * dissipator(_kb(0, 1))


def k2_closed_form(t, g=1.0, gamma=1.0):
    return (1 - np.exp(-gamma * t / 2)) * decay_superoperator(g, gamma)


def ad_inverse_closed_form(g=1.0, gamma=1.0):
    """A solution X of [L0, X] = L."""
    return (-2j * g / gamma) * (
        anticommutator_superoperator(_kb(1, 2) - _kb(2, 1))
        + 2 * sandwich(_kb(0, 1), _kb(2, 0))
        - 2 * sandwich(_kb(0, 2), _kb(1, 0))
    )


def generator_inverse_closed_form(gamma=1.0):
    """A pseudoinverse of the free generator, valid on the image of L0."""
    p22 = _kb(2, 2)
    return (1 / gamma) * (
        sandwich(_kb(0, 2), _kb(2, 0)) - 2 * (spre(p22) + spost(p22)) + 3 * sandwich(p22, p22)
    )


def renormalization_closed_form(lam, g=1.0, gamma=1.0):
    """Matrix of the first-order renormalization of the initial condition."""
    c = lam * 2j * g / gamma
    out = np.zeros((D * D, D * D), dtype=complex)

    def idx(i, j):
        return i + D * j

    out[idx(0, 0), idx(0, 0)] = 1
    out[idx(0, 0), idx(2, 2)] = 1
    out[idx(0, 0), idx(1, 2)] = -c
    out[idx(0, 0), idx(2, 1)] = c
    out[idx(0, 1), idx(0, 1)] = 1
    out[idx(0, 1), idx(0, 2)] = c
    out[idx(1, 0), idx(1, 0)] = 1
    out[idx(1, 0), idx(2, 0)] = -c
    out[idx(1, 1), idx(1, 1)] = 1
    out[idx(1, 1), idx(1, 2)] = c
    out[idx(1, 1), idx(2, 1)] = -c
    return out


def consistent_rho11_solution(t, rho11_0, lam, g=1.0, gamma=1.0):
    """rho_11(t) of the order-2 TCL equation for an initial state with Q rho = 0."""
    rate = lam**2 * 4 * g**2 / gamma
    return rho11_0 * np.exp(-rate * (t - 2 * (1 - np.exp(-gamma * t / 2)) / gamma))


def inconsistent_state():
    """A valid density matrix with nonzero rho_12, rho_21 and rho_22."""
    rho = np.array(
        [
            [0.3, 0.05, 0.02 + 0.03j],
            [0.05, 0.4, 0.1 + 0.15j],
            [0.02 - 0.03j, 0.1 - 0.15j, 0.3],
        ],
        dtype=complex,
    )
    return rho


def excited_state():
    rho = np.zeros((D, D), dtype=complex)
    rho[1, 1] = 1.0
    return rho


def model(lam=0.1, g=1.0, gamma=1.0, t0=0.0):
    from .tcl import ModelSpec

    return ModelSpec(free_generator(gamma), interaction(g), projector(), lam=lam, t0=t0)


__all__ = [
    "free_generator",
    "interaction",
    "projector",
    "decay_superoperator",
    "k2_closed_form",
    "ad_inverse_closed_form",
    "generator_inverse_closed_form",
    "renormalization_closed_form",
    "consistent_rho11_solution",
    "inconsistent_state",
    "excited_state",
    "model",
    "vectorize",
]
