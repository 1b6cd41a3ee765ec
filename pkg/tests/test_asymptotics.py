import dataclasses

import numpy as np
import pytest

from tclmaster import asymptotics as asy
from tclmaster import dynamics as dyn
from tclmaster import example_model as ex
from tclmaster import superops as so
from tclmaster.errors import ConsistencyError, NoLimit, ValidationError
from tclmaster.kernels import phi_integral
from tclmaster.tcl import ModelSpec, TclSeries, second_order_closed_forms

from conftest import mp_second_order, random_composite_model, random_gksl_model, random_state


def _perturbed_example(lam=0.1):
    # keep rho_22 in place instead of folding it into rho_00
    p = so.entry_projector([(0, 0), (0, 1), (1, 0), (1, 1), (2, 2)], 3)
    return ModelSpec(ex.free_generator(), ex.interaction(), p, lam=lam)


def test_relaxation_shortcut_on_example(example):
    rep = asy.check_relaxation(example)
    assert rep.shortcut_used and rep.plain_satisfied and rep.enhanced_satisfied


def test_shortcut_agrees_with_sampling(example):
    rep = asy.check_relaxation(example, force_sampling=True, samples=20)
    assert not rep.shortcut_used
    assert rep.max_violation <= 10 * 1e-9
    assert len(rep.samples) == 3 * 20


def test_trace_projector_always_relaxes(rng):
    # tr e^{L0 t} = tr, so P = |sigma><1| satisfies P e^{-L0 t} = P
    base = random_gksl_model(1)
    m = ModelSpec(base.l0, base.l_int, so.trace_projector(random_state(rng, 3)), lam=0.1)
    rep = asy.check_relaxation(m)
    assert rep.shortcut_used and rep.enhanced_satisfied


def test_environment_projector_relaxes():
    rep = asy.check_relaxation(random_composite_model(1))
    assert rep.shortcut_used and rep.enhanced_satisfied


def test_dephasing_projector_does_not_relax():
    rep = asy.check_relaxation(random_gksl_model(1), samples=10)
    assert not rep.plain_satisfied


def test_identity_projector_has_no_complement_terms(example):
    m = ModelSpec(example.l0, example.l_int, np.eye(9), lam=0.1)
    rep = asy.check_relaxation(m, samples=10)
    assert rep.enhanced_violation == 0.0


def test_perturbed_projector_violates_relaxation():
    rep = asy.check_relaxation(_perturbed_example(), samples=10)
    assert not rep.plain_satisfied and not rep.enhanced_satisfied
    assert rep.max_violation > 1e-3


def test_report_invariant():
    with pytest.raises(ValidationError):
        asy.RelaxationReport(2, False, True, 0.0)


def test_relaxed_forms_match_extended_precision(example):
    # long times: the direct forms lose e^{gamma t} digits in double precision
    for t in (0.0, 0.7, 5.0, 20.0):
        for got, want in zip(asy.relaxed_second_order(example, t), mp_second_order(example, t)):
            assert np.linalg.norm(got - want) < 1e-9 * max(1, np.linalg.norm(want))


def test_relaxed_forms_match_series_forms():
    m = random_composite_model(2)
    fd = m.frequencies
    for t in (0.0, 0.5, 1.5, 3.0):
        for got, want in zip(asy.relaxed_second_order(m, t, fd), second_order_closed_forms(m, fd, t)):
            assert np.linalg.norm(got - want) < 1e-9 * max(1, np.linalg.norm(want))


def test_relaxed_forms_keep_zero_frequency_drift():
    # L0 = 1 (x) L_E is degenerate, so L has a part commuting with L0
    m = random_composite_model(0)
    assert np.linalg.norm(m.frequencies.zero_part()) > 1
    relaxed = asy.relaxed_second_order(m, 0.5)[1]
    want = second_order_closed_forms(m, t=0.5)[1]
    assert np.linalg.norm(relaxed - want) < 1e-10 * max(1, np.linalg.norm(want))


def test_example_limits(example):
    lims = asy.K_I_limits(TclSeries(example, 3), orders=(1, 2, 3))
    p = example.projector
    assert np.allclose(lims[1][0], 0) and np.allclose(lims[1][1], 0)
    assert np.allclose(lims[2][0], ex.decay_superoperator() @ p, atol=1e-12)
    assert np.allclose(lims[3][0], 0, atol=1e-10)


def test_limits_scale_with_parameters():
    m = ex.model(gamma=2.0, g=0.5)
    k2 = asy.K_I_limits(TclSeries(m, 2))[2][0]
    assert np.allclose(k2, ex.decay_superoperator(g=0.5, gamma=2.0) @ m.projector, atol=1e-12)


def test_second_order_limit_matches_late_time_series():
    m = random_composite_model(4)
    s = TclSeries(m, 2)
    lims = asy.K_I_limits(s)
    late = 60 / m.spectrum.decay_rates()[0]
    assert np.linalg.norm(s.K(2, late) - lims[2][0]) < 1e-8 * max(1, np.linalg.norm(lims[2][0]))
    assert np.linalg.norm(s.I(2, late) - lims[2][1]) < 1e-8 * max(1, np.linalg.norm(lims[2][1]))


def test_third_order_limit_found_by_doubling():
    s = TclSeries(random_composite_model(4), 3)
    k3, i3 = asy.K_I_limits(s, orders=(3,))[3]
    assert np.all(np.isfinite(k3)) and np.all(np.isfinite(i3))


def test_unsettled_limit_raises():
    s = TclSeries(random_composite_model(4), 3)
    with pytest.raises(NoLimit):
        asy.K_I_limits(s, orders=(3,), horizon=0.05, tol=1e-12)


def test_oscillating_free_part_has_no_limit():
    l0 = so.commutator_superoperator(np.diag([0.0, 1.0, 2.5]), -1j)
    m = ModelSpec(l0, ex.interaction(), so.trace_projector(np.eye(3) / 3), lam=0.1)
    with pytest.raises(NoLimit):
        asy.K_I_limits(TclSeries(m, 2))


def test_renormalization_map(example):
    assert np.allclose(asy.renormalization_map(example, lam=0.0), example.projector)
    assert np.allclose(asy.renormalization_map(example), ex.renormalization_closed_form(0.1), atol=1e-13)


def test_renormalization_map_as_time_integral():
    # L0^(-1) (Lambda - 1) is int_0^inf e^{L0 s} ds restricted to decaying modes
    m = random_composite_model(3)
    horizon = 50 / m.spectrum.decay_rates()[0]
    lim = so.limit_superoperator(m.spectrum)
    one = np.eye(m.size)
    integral = phi_integral(m.l0, horizon) - horizon * lim
    want = m.projector @ (one + m.lam * m.l_int @ integral)
    got = asy.renormalization_map(m)
    assert np.linalg.norm(got - want) < 1e-7 * max(1, np.linalg.norm(want))


def test_bvh_prepare_example(example):
    bvh = asy.bvh_prepare(example)
    assert bvh.valid
    assert set(bvh.residuals) == {"K1", "I1", "K3", "I3"}
    assert np.allclose(bvh.I2_inf, 0, atol=1e-12)


def test_bvh_at_zero_is_renormalized_state(example):
    bvh = asy.bvh_prepare(example)
    rho = ex.inconsistent_state()
    got = so.vectorize(asy.bvh_solution(example, bvh, rho, 0.0))
    assert np.allclose(got, bvh.renorm_map @ so.vectorize(rho))


def test_bvh_decay_of_excited_state():
    lam = 0.05
    m = ex.model(lam=lam)
    bvh = asy.bvh_prepare(m)
    t = 1 / lam**2
    rho = ex.excited_state()
    approx = asy.bvh_solution(m, bvh, rho, t)
    assert abs(approx[1, 1] - np.exp(-4.0)) < 1e-12
    exact = dyn.propagate_exact(m, rho, [t], projected=True).states[0]
    assert abs(approx[1, 1] - exact[1, 1]) < 1e-3


def test_bvh_refuses_invalid_limits(example):
    bvh = asy.bvh_prepare(example)
    broken = dataclasses.replace(bvh, residuals={**bvh.residuals, "K3": 1.0})
    with pytest.raises(ConsistencyError):
        asy.bvh_solution(example, broken, ex.excited_state(), 1.0)
    asy.bvh_solution(example, broken, ex.excited_state(), 1.0, override=True)
    with pytest.raises(ValidationError):
        asy.bvh_solution(example.with_lambda(0.2), bvh, ex.excited_state(), 1.0)


def test_leading_form(example):
    bvh = asy.bvh_prepare(example)
    with pytest.raises(ConsistencyError):
        asy.bvh_solution_leading(example, bvh.K2_inf, ex.inconsistent_state(), 1.0)
    rho = ex.excited_state()
    assert np.allclose(asy.bvh_solution_leading(example, bvh.K2_inf, rho, 0.0), rho)
    free = ModelSpec(example.l0, np.zeros_like(example.l0), example.projector, lam=0.1)
    k2 = asy.K_I_limits(TclSeries(free, 2))[2][0]
    assert np.allclose(asy.bvh_solution_leading(free, k2, rho, 50.0), rho)


def test_leading_form_equals_full_form_on_consistent_states():
    # range(P) is stationary under L0 in both families, so R P = P there
    for m in (ex.model(lam=0.05), random_composite_model(5, lam=0.05)):
        bvh = asy.bvh_prepare(m)
        rng = np.random.default_rng(1)
        rho = so.devectorize(m.projector @ so.vectorize(random_state(rng, m.dim)))
        for t in (0.0, 1 / m.lam**2):
            full = asy.bvh_solution(m, bvh, rho, t, override=True)
            lead = asy.bvh_solution_leading(m, bvh.K2_inf, rho, t)
            assert np.linalg.norm(full - lead) < 1e-12


def _outer_errors(lam, renormalize):
    m = ex.model(lam=lam)
    bvh = asy.bvh_prepare(m)
    rho = ex.inconsistent_state()
    times = np.linspace(0.1 / lam**2, 3 / lam**2, 121)
    exact = dyn.propagate_exact(m, rho, times, projected=True)
    approx = asy.bvh_trajectory(m, bvh, rho, times, renormalize=renormalize)
    return dyn.compare(exact, approx, m.projector)["max_error"]


def test_outer_window_error_is_second_order():
    errs = [_outer_errors(lam, True) for lam in (0.1, 0.05, 0.025)]
    assert errs[0] / errs[1] > 3.5 and errs[1] / errs[2] > 3.5


def test_renormalization_gain_grows_as_coupling_shrinks():
    gains = [_outer_errors(lam, False) / _outer_errors(lam, True) for lam in (0.1, 0.05, 0.025)]
    assert gains[1] > 1.8 * gains[0] and gains[2] > 1.8 * gains[1]
    assert gains[2] > 5
