import mpmath as mp
import numpy as np
import pytest

from tclmaster import example_model, superops
from tclmaster.tcl import ModelSpec

# filled by tests/test_acceptance.py, echoed in the terminal summary
ACCEPTANCE_LINES = {}


def random_hermitian(rng, d, scale=1.0):
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return scale * (a + a.conj().T) / 2


def stationary_state(l0):
    """Normalized null vector of a GKSL generator with a unique steady state."""
    _, _, vh = np.linalg.svd(l0)
    rho = superops.devectorize(vh[-1].conj())
    return rho / np.trace(rho)


def random_gksl_model(seed, d=3, lam=0.1, n_jumps=2):
    """Random d-level GKSL free part, commutator interaction, dephasing projector.

    P keeps the diagonal, so P L P and P L Q are generic; the relaxation
    conditions do not hold in general.
    """
    rng = np.random.default_rng(seed)
    jumps = []
    for _ in range(n_jumps):
        op = (rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))) / np.sqrt(d)
        jumps.append((op, float(rng.uniform(0.2, 1.0))))
    l0 = superops.gksl_superoperator(superops.GkslSpec(random_hermitian(rng, d, 0.5), tuple(jumps)))
    l_int = superops.commutator_superoperator(random_hermitian(rng, d, 0.5), -1j)
    return ModelSpec(l0, l_int, superops.entry_projector([(i, i) for i in range(d)], d), lam=lam)


def random_composite_model(seed, d_sys=2, d_env=2, lam=0.1, n_jumps=2):
    """System (x) environment model with random environment dissipation.

    L0 acts on the environment only, L is the commutator with a random joint
    Hamiltonian and P rho = tr_E(rho) (x) sigma_E with sigma_E the steady state,
    so P L0 = 0 while P L P and P L Q are generic.
    """
    rng = np.random.default_rng(seed)
    jumps = []
    for _ in range(n_jumps):
        op = (rng.normal(size=(d_env, d_env)) + 1j * rng.normal(size=(d_env, d_env))) / np.sqrt(d_env)
        jumps.append((op, float(rng.uniform(0.2, 1.0))))
    env = superops.GkslSpec(random_hermitian(rng, d_env, 0.5), tuple(jumps))
    sigma = stationary_state(superops.gksl_superoperator(env))
    one = np.eye(d_sys)
    full = superops.GkslSpec(np.kron(one, env.hamiltonian), tuple((np.kron(one, a), r) for a, r in jumps))
    l0 = superops.gksl_superoperator(full)
    l_int = superops.commutator_superoperator(random_hermitian(rng, d_sys * d_env, 0.5), -1j)
    return ModelSpec(l0, l_int, superops.product_projector(sigma, d_sys), lam=lam)


def random_state(rng, d):
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    rho = a @ a.conj().T
    return rho / np.trace(rho)


def mp_second_order(model, t, dps=40):
    """K_1, K_2, I_1, I_2 from their defining integrals in extended precision."""
    mp.mp.dps = dps
    n = model.size
    l0, l = mp.matrix(model.l0.tolist()), mp.matrix(model.l_int.tolist())
    p = mp.matrix(model.projector.tolist())
    q = mp.eye(n) - p
    big = mp.zeros(2 * n, 2 * n)
    for i in range(n):
        for j in range(n):
            big[i, j] = big[n + i, n + j] = l0[i, j]
            big[i, n + j] = l[i, j]
    # int_0^t e^{L0 (t - s)} L e^{L0 s} ds is the upper-right block
    blk = mp.expm(big * t)
    conv = mp.matrix([[blk[i, n + j] for j in range(n)] for i in range(n)])
    back = mp.expm(-l0 * t)
    y = back * conv
    l_t = back * l * mp.expm(l0 * t)
    out = (p * l_t * p, p * l_t * q * y * p, p * l_t * q, p * l_t * q * y * q)
    return [np.array(x.tolist(), dtype=complex) for x in out]


@pytest.fixture
def example():
    return example_model.model(lam=0.1)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
