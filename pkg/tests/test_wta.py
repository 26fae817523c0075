import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from synsamp.harness import InputSchedule
from synsamp.priors import PriorSpec
from synsamp.wta import (ALPHA, AdaptationParams, EpspKernelParams, WtaConfig, WtaNetwork,
                         adaptation_value, build_network, circuit_rates, double_exp_kernel,
                         draw_spikes, effective_weight, kernel_peak_time, likelihood_grad_spiking,
                         membrane_potential, poisson_spike_times, simulate,
                         structural_sampling_update, summed_epsp_trace)

potentials = st.lists(st.floats(-30, 30), min_size=1, max_size=12)


@given(u=potentials, shift=st.floats(-100, 100))
def test_softmax_shift_invariance(u, shift):
    a = circuit_rates(u)
    b = circuit_rates(np.asarray(u) + shift)
    np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-12)


@given(u=potentials, rho=st.floats(1, 500))
def test_rates_sum_to_rho_net(u, rho):
    assert circuit_rates(u, rho).sum() == pytest.approx(rho, rel=1e-12)


def test_empty_circuit_rejected():
    with pytest.raises(ValueError):
        circuit_rates([])


def test_kernel_shape():
    p = EpspKernelParams()
    assert double_exp_kernel(-1.0, 2, 20) == 0.0
    assert double_exp_kernel(0.0, 2, 20) == 0.0
    t = kernel_peak_time(p.tau_rise_ms, p.tau_fall_ms)
    s = np.linspace(0.01, 100, 20001)
    assert s[np.argmax(double_exp_kernel(s, 2, 20))] == pytest.approx(t, abs=0.01)
    with pytest.raises(ValueError):
        EpspKernelParams(20.0, 2.0)


def test_summed_trace_ignores_future_spikes():
    x = summed_epsp_trace([0.0, 10.0, 50.0], 20.0)
    assert x == pytest.approx(float(double_exp_kernel(20.0, 2, 20) + double_exp_kernel(10.0, 2, 20)))


@given(times=st.lists(st.floats(0, 100_000), max_size=20), t=st.floats(0, 200_000))
def test_adaptation_nonpositive(times, t):
    assert adaptation_value(times, t) <= 0.0


@given(theta=st.floats(-5, 0))
def test_retracted_synapse_contributes_nothing(theta):
    assert effective_weight(theta) == 0.0
    assert membrane_potential(np.array([theta]), np.array([7.0])) == 0.0


def test_effective_weight_continuous_at_zero():
    assert effective_weight(1e-9) == pytest.approx(0.0, abs=1e-9)
    assert effective_weight(1.0) == pytest.approx(math.exp(-2) - math.exp(-3))
    assert effective_weight(2.0, banned=True) == 0.0


def test_likelihood_gradient_only_at_spikes():
    g = likelihood_grad_spiking([1.0, 1.0], [0.0, 0.0], [False, True])
    np.testing.assert_allclose(g, [0.0, 1.0 - ALPHA])


def test_structural_update_clips_jump_and_theta():
    cfg = WtaConfig(b=1e-3, prior=PriorSpec.uniform())
    theta = np.array([[2.0, -4.9999]])
    out = structural_sampling_update(theta, [True], np.array([[500.0, 0.0]]), cfg, noise=False)
    assert out[0, 0] - 2.0 == pytest.approx(5 * 1e-3)
    assert out[0, 1] >= -5.0


@given(theta=st.floats(0.5, 4.0), x=st.floats(0.0, 0.3))
def test_activity_term_is_multiplicative(theta, x):
    # the unclipped spike-triggered change divided by w is independent of scale
    cfg = WtaConfig(b=1e-9, prior=PriorSpec.uniform(), n_data=1.0, max_step_factor=math.inf)
    t = np.array([[theta]])
    d = structural_sampling_update(t, [True], np.array([[x]]), cfg, noise=False) - t
    w = math.exp(theta - 3.0)
    assert d[0, 0] == pytest.approx(1e-9 * w * (x - ALPHA * math.exp(w)), rel=1e-6)


def test_draw_spikes_and_poisson_times():
    rng = np.random.default_rng(0)
    n = sum(len(draw_spikes(np.array([100.0]), 1.0, rng)) for _ in range(100_000))
    assert n / 100.0 == pytest.approx(-1000 * math.expm1(-0.1), rel=0.03)
    t = poisson_spike_times(20.0, 1e6, rng)
    assert np.all(np.diff(t) >= 0) and len(t) == pytest.approx(20_000, rel=0.05)


def test_config_validation():
    with pytest.raises(ValueError):
        WtaConfig(noise_interval_ms=2.5)
    with pytest.raises(ValueError):
        WtaConfig(dt_ms=2.0)  # rho * dt = 0.2
    with pytest.raises(ValueError):
        WtaConfig(block_ms=15.0, noise_interval_ms=10.0)
    c = WtaConfig(b=1e-3, noise_interval_ms=10.0)
    assert WtaConfig.from_dict(c.to_dict()) == c


def test_network_structure():
    net = build_network(4, [3, 2], np.random.default_rng(0), lateral=True)
    assert list(net.circuit_of()) == [0, 0, 0, 1, 1]
    assert not np.any(np.diag(net.exists[:, 4:]))
    assert net.exists.sum() == 5 * 4 + 5 * 4
    with pytest.raises(ValueError):
        WtaNetwork(4, [3, 3], net.theta, net.exists, net.banned, net.alive, net.population)


def _schedule(n_in, ms, rate=20.0, plastic=True):
    rng = np.random.default_rng(1)
    rates = rng.uniform(1, 2 * rate, size=(int(ms // 250), n_in))
    return InputSchedule.from_segments(np.full(len(rates), 250.0), rates, plastic=plastic)


def test_simulation_invariants():
    cfg = WtaConfig(b=1e-2, noise_interval_ms=10.0, max_step_factor=5.0)
    net = build_network(16, [5, 5], np.random.default_rng(0), cfg, lateral=True)
    res = simulate(net, _schedule(16, 5000), 5000, cfg, np.random.default_rng(2),
                   track_events=True)
    assert res.max_rate_error < 1e-9
    assert res.min_theta >= -5.0
    assert res.max_event_step <= 5 * cfg.b + 1e-15
    assert len(res.spikes) == pytest.approx(2 * 100 * 5, rel=0.15)
    assert np.all(np.diff(res.spikes.time_ms) >= 0)
    # births and deaths of one synapse alternate
    for k, i in {(int(a), int(b)) for a, b in zip(res.events.post, res.events.pre)}:
        m = (res.events.post == k) & (res.events.pre == i)
        kinds = res.events.kind[m]
        assert np.all(kinds[1:] != kinds[:-1])


def test_lateral_traces_match_reference_kernel():
    cfg = WtaConfig(b=0.0)
    net = build_network(4, [3], np.random.default_rng(0), cfg, lateral=True)
    res = simulate(net, _schedule(4, 2000), 2000, cfg, np.random.default_rng(0))
    t_end = (net.step - 1) * cfg.dt_ms
    for j in range(3):
        times = res.spikes.time_ms[res.spikes.neuron == j] + cfg.lateral_delay_ms
        x = net.trace_f[4 + j] - net.trace_r[4 + j]
        assert x == pytest.approx(summed_epsp_trace(times, t_end), abs=1e-10)


def test_adaptation_state_matches_reference():
    cfg = WtaConfig(b=0.0)
    net = build_network(4, [3], np.random.default_rng(0), cfg)
    res = simulate(net, _schedule(4, 3000), 3000, cfg, np.random.default_rng(0))
    t_end = (net.step - 1) * cfg.dt_ms
    for j in range(3):
        times = res.spikes.time_ms[res.spikes.neuron == j]
        assert net.beta(-8.0)[j] == pytest.approx(adaptation_value(times, t_end), rel=1e-9)


def test_split_run_is_bit_identical():
    cfg = WtaConfig(b=1e-2, noise_interval_ms=10.0, block_ms=500.0)
    a = build_network(8, [4], np.random.default_rng(0), cfg)
    b = a.copy()
    sched = _schedule(8, 3000)
    ra, rb = np.random.default_rng(5), np.random.default_rng(5)
    simulate(a, sched, 3000, cfg, ra)
    simulate(b, sched, 1500, cfg, rb)
    simulate(b, sched, 1500, cfg, rb)
    assert a.theta.tobytes() == b.theta.tobytes()


def test_frozen_schedule_keeps_theta_fixed():
    cfg = WtaConfig(b=1e-2, noise_interval_ms=10.0)
    net = build_network(8, [4], np.random.default_rng(0), cfg)
    before = net.theta.copy()
    simulate(net, _schedule(8, 1000, plastic=False), 1000, cfg, np.random.default_rng(0))
    np.testing.assert_array_equal(net.theta, before)


def test_dead_and_banned_units_are_silent():
    cfg = WtaConfig(b=0.0)
    net = build_network(8, [4], np.random.default_rng(0), cfg)
    net.alive[1] = False
    res = simulate(net, _schedule(8, 2000), 2000, cfg, np.random.default_rng(0))
    assert not np.any(res.spikes.neuron == 1)
    assert res.max_rate_error < 1e-9


def test_schedule_coverage_checked():
    cfg = WtaConfig()
    net = build_network(4, [2], np.random.default_rng(0), cfg)
    with pytest.raises(ValueError):
        simulate(net, _schedule(4, 1000), 2000, cfg, np.random.default_rng(0))
    with pytest.raises(ValueError):
        simulate(net, _schedule(5, 1000), 1000, cfg, np.random.default_rng(0))


def test_fixed_point_accumulators_shape():
    cfg = WtaConfig(b=1e-3, noise_interval_ms=10.0)
    net = build_network(6, [3], np.random.default_rng(0), cfg)
    res = simulate(net, _schedule(6, 2000), 2000, cfg, np.random.default_rng(0),
                   track_fixed_point=True)
    fp = res.fixed_point
    assert fp["sum_x"].shape == net.theta.shape
    assert fp["count"].sum() == len(res.spikes)
