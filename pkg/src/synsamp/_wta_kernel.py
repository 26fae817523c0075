"""Compiled inner loop of the spiking WTA simulator.

One call advances the network by a block of time steps.  All state lives in
arrays owned by the caller; the kernel seeds numba's generator from ``seed``
so a block is a pure function of (state, seed, schedule).

Presynaptic index layout: 0..n_in-1 are input neurons, n_in + j is network
neuron j (seen through the lateral delay line).
"""
import math

import numpy as np
from numba import njit

PRIOR_GAUSSIAN = 0
PRIOR_MIXTURE = 1
PRIOR_UNIFORM = 2

EVENT_BIRTH = 1
EVENT_DEATH = 0


@njit(cache=True)
def _prior_grad(theta, kind, p):
    if kind == PRIOR_GAUSSIAN:
        return -(theta - p[0]) / (p[1] * p[1])
    if kind == PRIOR_MIXTURE:
        # p = weight1, mu1, sigma1, mu2, sigma2
        z1 = (theta - p[1]) / p[2]
        z2 = (theta - p[3]) / p[4]
        l1 = math.log(p[0]) - 0.5 * z1 * z1 - math.log(p[2])
        l2 = math.log(1.0 - p[0]) - 0.5 * z2 * z2 - math.log(p[4])
        r1 = 1.0 / (1.0 + math.exp(l2 - l1))
        return -r1 * z1 / p[2] - (1.0 - r1) * z2 / p[4]
    return 0.0


@njit(cache=True)
def _effective(theta, theta0, banned):
    if banned:
        return 0.0
    v = math.exp(theta - theta0) - math.exp(-theta0)
    return v if v > 0.0 else 0.0


@njit(cache=True)
def _recompute_drive(what, exists, trace_f, trace_r, alive, drive_f, drive_r):
    n_net, n_pre = what.shape
    for k in range(n_net):
        sf = 0.0
        sr = 0.0
        if alive[k]:
            for i in range(n_pre):
                if exists[k, i]:
                    w = what[k, i]
                    if w != 0.0:
                        sf += w * trace_f[i]
                        sr += w * trace_r[i]
        drive_f[k] = sf
        drive_r[k] = sr


@njit(cache=True)
def _presyn_spike(i, what, exists, alive, trace_f, trace_r, drive_f, drive_r):
    trace_f[i] += 1.0
    trace_r[i] += 1.0
    for k in range(what.shape[0]):
        if alive[k] and exists[k, i]:
            w = what[k, i]
            drive_f[k] += w
            drive_r[k] += w


@njit(cache=True)
def run_block(seed, step0, n_steps, dt_ms,
              # schedule for this block
              seg_start, seg_rates, seg_plastic,
              # network structure
              exists, banned, alive, circ_start, circ_len,
              # synaptic state
              theta, what, visible,
              # dynamic state
              trace_f, trace_r, drive_f, drive_r, adapt_f, adapt_r,
              delay_buf, next_in,
              # constants
              n_in, dec_f, dec_r, adec_f, adec_r, gamma, rho_net,
              theta0, alpha, b, n_data, temperature, theta_min, theta_max,
              max_event_step, noise_every, prior_kind, prior_p, birth_threshold,
              # flags and outputs
              track_events, track_fixed_point,
              spk_neuron, spk_step, ev_post, ev_pre, ev_step, ev_kind,
              fp_sum_x, fp_sum_target, fp_count, stats):
    """Advance ``n_steps``; returns (n_spikes, n_events).

    ``stats`` receives [max relative rate-normalization error, largest
    spike-triggered |dtheta|, smallest theta seen, event overflow flag].
    """
    np.random.seed(seed)
    n_net = theta.shape[0]
    n_pre = theta.shape[1]
    n_delay = delay_buf.shape[0]
    n_circ = circ_start.shape[0]
    dt_s = dt_ms * 1e-3
    noise_dt_s = dt_s * noise_every
    noise_sd = math.sqrt(2.0 * b * temperature * noise_dt_s)
    u = np.empty(n_net)
    rates = np.empty(n_net)
    spiked = np.zeros(n_net, dtype=np.bool_)
    n_spk = 0
    n_ev = 0
    cur = 0
    rates_in = seg_rates[0]
    plastic = seg_plastic[0]
    n_seg = seg_start.shape[0]

    for s in range(step0, step0 + n_steps):
        t_ms = s * dt_ms
        # segment bookkeeping; Poisson inputs are memoryless, so resampling
        # the next spike time at a rate change is exact
        while cur + 1 < n_seg and seg_start[cur + 1] <= s:
            cur += 1
        if seg_start[cur] == s or next_in[0] < 0.0:
            rates_in = seg_rates[cur]
            for i in range(n_in):
                r = rates_in[i]
                next_in[i] = t_ms + np.random.exponential(1000.0 / r) if r > 0.0 else np.inf
        rates_in = seg_rates[cur]
        plastic = seg_plastic[cur]

        # decay of EPSP traces, their weighted sums and adaptation traces
        for i in range(n_pre):
            trace_f[i] *= dec_f
            trace_r[i] *= dec_r
        for k in range(n_net):
            drive_f[k] *= dec_f
            drive_r[k] *= dec_r
            adapt_f[k] *= adec_f
            adapt_r[k] *= adec_r

        # input spikes in (t - dt, t]
        for i in range(n_in):
            while next_in[i] <= t_ms:
                _presyn_spike(i, what, exists, alive, trace_f, trace_r, drive_f, drive_r)
                next_in[i] += np.random.exponential(1000.0 / rates_in[i])

        # delayed lateral spikes
        slot = s % n_delay
        for j in range(n_net):
            if delay_buf[slot, j]:
                _presyn_spike(n_in + j, what, exists, alive, trace_f, trace_r,
                              drive_f, drive_r)
                delay_buf[slot, j] = False

        # membrane potentials and divisive normalization per circuit
        for k in range(n_net):
            u[k] = drive_f[k] - drive_r[k] + gamma * (adapt_f[k] - adapt_r[k])
        for c in range(n_circ):
            a = circ_start[c]
            e = a + circ_len[c]
            m = -np.inf
            for k in range(a, e):
                if alive[k] and u[k] > m:
                    m = u[k]
            if m == -np.inf:
                continue
            z = 0.0
            for k in range(a, e):
                if alive[k]:
                    rates[k] = math.exp(u[k] - m)
                    z += rates[k]
            total = 0.0
            for k in range(a, e):
                if alive[k]:
                    rates[k] = rho_net * rates[k] / z
                    total += rates[k]
            err = abs(total - rho_net) / rho_net
            if err > stats[0]:
                stats[0] = err

        # network spikes, ascending neuron id
        for k in range(n_net):
            spiked[k] = False
            if alive[k]:
                p = -math.expm1(-rates[k] * dt_s)
                if np.random.random() < p:
                    spiked[k] = True
                    spk_neuron[n_spk] = k
                    spk_step[n_spk] = s
                    n_spk += 1
                    delay_buf[slot, k] = True
                    adapt_f[k] += 1.0
                    adapt_r[k] += 1.0

        # spike-triggered likelihood term
        if plastic:
            for k in range(n_net):
                if not spiked[k]:
                    continue
                if track_fixed_point:
                    fp_count[k] += 1
                dfk = 0.0
                drk = 0.0
                for i in range(n_pre):
                    if not exists[k, i] or banned[k, i]:
                        continue
                    x = trace_f[i] - trace_r[i]
                    th = theta[k, i]
                    w = math.exp(th - theta0)
                    target = alpha * math.exp(w)
                    if track_fixed_point:
                        fp_sum_x[k, i] += x
                        fp_sum_target[k, i] += target
                    d = b * n_data * w * (x - target)
                    if d > max_event_step:
                        d = max_event_step
                    elif d < -max_event_step:
                        d = -max_event_step
                    nt = th + d
                    if nt < theta_min:
                        nt = theta_min
                    elif nt > theta_max:
                        nt = theta_max
                    if abs(d) > stats[1]:
                        stats[1] = abs(d)
                    theta[k, i] = nt
                    nw = _effective(nt, theta0, False)
                    dw = nw - what[k, i]
                    if dw != 0.0:
                        what[k, i] = nw
                        dfk += dw * trace_f[i]
                        drk += dw * trace_r[i]
                drive_f[k] += dfk
                drive_r[k] += drk

        # prior drift and diffusion on every potential synapse
        if plastic and (s + 1) % noise_every == 0:
            for k in range(n_net):
                for i in range(n_pre):
                    if not exists[k, i]:
                        continue
                    th = theta[k, i]
                    th += b * noise_dt_s * _prior_grad(th, prior_kind, prior_p)
                    th += noise_sd * np.random.standard_normal()
                    if th < theta_min:
                        th = theta_min
                    elif th > theta_max:
                        th = theta_max
                    theta[k, i] = th
                    what[k, i] = _effective(th, theta0, banned[k, i])
                    if th < stats[2]:
                        stats[2] = th
                    if track_events:
                        if visible[k, i]:
                            if th <= 0.0 or banned[k, i]:
                                visible[k, i] = False
                                if n_ev < ev_post.shape[0]:
                                    ev_post[n_ev] = k
                                    ev_pre[n_ev] = i
                                    ev_step[n_ev] = s + 1
                                    ev_kind[n_ev] = EVENT_DEATH
                                    n_ev += 1
                                else:
                                    stats[3] = 1.0
                        elif th > birth_threshold and not banned[k, i]:
                            visible[k, i] = True
                            if n_ev < ev_post.shape[0]:
                                ev_post[n_ev] = k
                                ev_pre[n_ev] = i
                                ev_step[n_ev] = s + 1
                                ev_kind[n_ev] = EVENT_BIRTH
                                n_ev += 1
                            else:
                                stats[3] = 1.0
            _recompute_drive(what, exists, trace_f, trace_r, alive, drive_f, drive_r)
    return n_spk, n_ev
