"""Resumable experiment protocols.

Every experiment is a small state machine: ``advance()`` performs the next
chunk of work and appends rows to ``self.log``.  All randomness comes from
generators stored on the object, so pickling it between chunks and resuming
later reproduces an uninterrupted run bit for bit.
"""
from __future__ import annotations

import math
import time
from typing import Optional

import numpy as np
from scipy import stats

from . import rbm as R
from .harness import (REMOVE_CONNECTIONS, REMOVE_NEURONS, InputSchedule, LesionSpec,
                      StatisticsError, active_synapse_count, apply_lesion,
                      auditory_profiles, bar_digit_images, build_phase_schedule,
                      encode_image, fit_power_law, half_field_patterns, log_binned,
                      lowpass_features, median_lifetime, pca_trajectory,
                      presentation_schedule, reconstruct_stimulus, select_tuned_neurons,
                      split_alternating, survival_curve, survival_records,
                      train_eval_readout)
from .io import ConfigError, ExperimentLog
from .langevin import (ParameterState, SamplerConfig, SpeedModulated, anneal_to_map,
                       ks_critical_value, ks_distance, run_chain, stationary_moments,
                       tanh_speed)
from .priors import RBM_BIMODAL_PRIOR, WTA_PRIOR, PriorSpec
from .toymodels import ConjugateGaussian
from .wta import WtaConfig, build_network, simulate


def _floats(text):
    return [float(v) for v in str(text).split(",") if v.strip()]


def _ints(text):
    return [int(v) for v in str(text).split(",") if v.strip()]


def _wta_config(sec):
    return WtaConfig(b=sec["b_per_s"], noise_interval_ms=sec["noise_interval_ms"],
                     n_data=sec["n_data"], temperature=sec["temperature"],
                     birth_threshold=sec["birth_threshold"], block_ms=sec["block_ms"],
                     max_step_factor=sec["max_step_factor"])


def _wta_section(b):
    return {"b_per_s": b, "noise_interval_ms": 10.0, "n_data": 100.0, "temperature": 1.0,
            "birth_threshold": 0.05, "block_ms": 1000.0, "max_step_factor": 5.0}


_WTA_VALIDATORS = {
    ("wta", "b_per_s"): lambda v: v >= 0,
    ("wta", "max_step_factor"): lambda v: v > 0,
    ("wta", "noise_interval_ms"): lambda v: v >= 1,
    ("wta", "temperature"): lambda v: v >= 0,
}


class Experiment:
    """Base class; subclasses set ``name``, ``DEFAULTS`` and implement ``advance``."""

    name = ""
    DEFAULTS: dict = {}
    VALIDATORS: dict = {}

    def __init__(self, params: dict, seed: int):
        self.params = params
        self.seed = int(seed)
        self.rng = np.random.default_rng(self.seed)
        self.log = ExperimentLog()
        self.chunk = 0
        self.done = False
        self.summary: dict = {}
        self.phase_boundaries_ms: list = []
        self.lesion_times_ms: list = []
        self.images: dict = {}         # name -> 2-D array in [0, 1] for PGM export
        self.compute_seconds = 0.0

    def advance(self):
        raise NotImplementedError

    def step(self):
        t = time.perf_counter()
        self.advance()
        self.chunk += 1
        self.compute_seconds += time.perf_counter() - t

    def run(self, max_chunks: Optional[int] = None):
        n = 0
        while not self.done and (max_chunks is None or n < max_chunks):
            self.step()
            n += 1
        return self


# ---------------------------------------------------------------- posterior validation

class ValidatePosterior(Experiment):
    """Sampler checks against a conjugate Gaussian model with a known posterior.

    Chunks: T = 1 chain, one chain per extra temperature, T = 0 annealing,
    speed-modulated chain, online versus batch comparison.
    """

    name = "validate-posterior"
    DEFAULTS = {
        "model": {"n_observations": 5, "observation_mean": 1.0, "noise_var": 1.0,
                  "prior_mu": 0.0, "prior_sigma": 1.0},
        "sampler": {"b": 1e-3, "dt": 0.1, "n_steps": 1_000_000, "burn_in_fraction": 0.2,
                    "replicas": 256, "thin": 4000, "temperatures": "0.5,2.0",
                    "speed_gain": 0.5, "map_max_steps": 100_000,
                    "online_dt": 0.2, "online_n_steps": 200_000, "online_replicas": 64},
    }
    VALIDATORS = {("sampler", "b"): lambda v: v > 0, ("sampler", "dt"): lambda v: v > 0,
                  ("sampler", "replicas"): lambda v: v >= 1,
                  ("sampler", "burn_in_fraction"): lambda v: 0 <= v < 1}

    def __init__(self, params, seed):
        super().__init__(params, seed)
        m, s = params["model"], params["sampler"]
        obs = self.rng.normal(m["observation_mean"], math.sqrt(m["noise_var"]), m["n_observations"])
        self.observations = obs
        self.prior = PriorSpec.gaussian(m["prior_mu"], m["prior_sigma"])
        self.model = ConjugateGaussian(obs, m["noise_var"], self.prior, replicas=s["replicas"])
        self.plan = (["chain:1.0"] + [f"chain:{t!r}" for t in _floats(s["temperatures"])]
                     + ["map", "speed", "online"])
        for i, x in enumerate(obs):
            self.log.record("observations", index=i, value=float(x))

    def _cfg(self, temperature, dt=None):
        s = self.params["sampler"]
        return SamplerConfig(learning_rate=s["b"], temperature=temperature,
                             dataset_size=self.model.n_data, dt=dt or s["dt"],
                             seed=int(self.rng.integers(0, 2**31 - 1)))

    def _chain_row(self, check, traj, temperature):
        s = self.params["sampler"]
        pooled = traj.pooled()
        mean, cov = stationary_moments(pooled)
        am, av = self.model.posterior(temperature)
        ks = ks_distance(pooled, self.model.posterior_cdf(temperature))
        crit = ks_critical_value(len(pooled))
        self.log.record("stationary", check=check, temperature=float(temperature),
                        n_samples=len(pooled), mean=float(mean[0]), analytic_mean=float(am),
                        mean_rel_error=float(abs(mean[0] / am - 1)), variance=float(cov[0, 0]),
                        analytic_variance=float(av), variance_rel_error=float(abs(cov[0, 0] / av - 1)),
                        ks=ks, ks_critical=crit, burn_in=int(s["n_steps"] * s["burn_in_fraction"]))

    def advance(self):
        s = self.params["sampler"]
        item = self.plan[self.chunk]
        burn = int(s["n_steps"] * s["burn_in_fraction"])
        init = ParameterState(self.model.initial())
        if item.startswith("chain:"):
            T = float(item.split(":")[1])
            traj = run_chain(init, self.model, self._cfg(T), s["n_steps"], burn, s["thin"])
            self._chain_row("constant_speed", traj, T)
        elif item == "map":
            cfg = self._cfg(0.0)
            out = anneal_to_map(ParameterState(self.model.initial()[:1]), self.model, cfg,
                                max_steps=s["map_max_steps"])
            am, _ = self.model.posterior()
            self.log.record("map", steps=out.step_count, estimate=float(out.values[0]),
                            analytic=float(am), abs_error=float(abs(out.values[0] - am)))
        elif item == "speed":
            speed, grad = tanh_speed(s["b"], s["speed_gain"])
            drift = SpeedModulated(self.model, speed, grad)
            traj = run_chain(init, drift, self._cfg(1.0), s["n_steps"], burn, s["thin"])
            self._chain_row("tanh_speed", traj, 1.0)
        elif item == "online":
            reps = s["online_replicas"]
            model = ConjugateGaussian(self.observations, self.params["model"]["noise_var"],
                                      self.prior, replicas=reps)
            n = s["online_n_steps"]
            init = ParameterState(model.initial())
            out = {}
            for mode in ("batch", "online"):
                traj = run_chain(init, model, self._cfg(1.0, s["online_dt"]), n, n // 5, 100, mode=mode)
                per_replica = traj.samples.mean(axis=0)
                out[mode] = (float(per_replica.mean()), float(per_replica.std(ddof=1) / math.sqrt(reps)))
            se = math.hypot(out["batch"][1], out["online"][1])
            self.log.record("online_vs_batch", n_dt_b=float(model.n_data * s["online_dt"] * s["b"]),
                            batch_mean=out["batch"][0], online_mean=out["online"][0],
                            standard_error=se,
                            z=float(abs(out["batch"][0] - out["online"][0]) / se))
        self.done = self.chunk + 1 >= len(self.plan)
        if self.done:
            self.summary = {"stationary": self.log.rows("stationary"),
                            "map": self.log.rows("map")[0],
                            "online_vs_batch": self.log.rows("online_vs_batch")[0]}


# ---------------------------------------------------------------- RBM generalization

def covering_patterns(n_visible, n_patterns, rng):
    """Binary training patterns in which no pixel is constant across the set.

    Each pixel takes a random column from the non-constant binary columns of
    length ``n_patterns``.
    """
    cols = np.array([c for c in np.ndindex(*(2,) * n_patterns) if 0 < sum(c) < n_patterns], float)
    return cols[rng.integers(0, len(cols), n_visible)].T.copy()


def perturbed_patterns(train, n_test, flip_prob, rng):
    flips = rng.random((n_test, train.shape[1])) < flip_prob
    return np.abs(train[np.arange(n_test) % len(train)] - flips)


class RbmGeneralization(Experiment):
    """Exact test log-likelihood of a small RBM trained by synaptic sampling.

    One chunk is one evaluation interval of one replica.
    """

    name = "rbm-generalization"
    DEFAULTS = {
        "rbm": {"n_visible": 16, "n_hidden": 4, "n_train": 3, "n_test": 20, "flip_prob": 0.1,
                "cd_steps": 5},
        "sampler": {"prior": "bimodal", "eta": 1e-4, "dataset_size": 100, "temperature": 1.0,
                    "n_steps": 200_000, "eval_every": 10_000, "replicas": 3, "end_evals": 3},
    }
    VALIDATORS = {("sampler", "prior"): lambda v: v in ("bimodal", "uniform"),
                  ("sampler", "eta"): lambda v: v > 0,
                  ("rbm", "n_visible"): lambda v: 1 <= v <= 20,
                  ("rbm", "n_hidden"): lambda v: 1 <= v <= 8}

    def __init__(self, params, seed):
        super().__init__(params, seed)
        r, s = params["rbm"], params["sampler"]
        self.train = covering_patterns(r["n_visible"], r["n_train"], self.rng)
        self.test = perturbed_patterns(self.train, r["n_test"], r["flip_prob"], self.rng)
        self.prior = RBM_BIMODAL_PRIOR if s["prior"] == "bimodal" else PriorSpec.uniform()
        self.cfg = SamplerConfig(learning_rate=s["eta"], dt=1.0, dataset_size=s["dataset_size"],
                                 temperature=s["temperature"])
        self.replica_rngs = self.rng.spawn(s["replicas"])
        self.replica = 0
        self.t = 0
        self.params_rbm = R.init_params(r["n_visible"], r["n_hidden"], self.replica_rngs[0])
        self._evaluate()
        for i, row in enumerate(self.train):
            self.log.record("patterns", set="train", index=i, bits="".join(str(int(v)) for v in row))
        for i, row in enumerate(self.test):
            self.log.record("patterns", set="test", index=i, bits="".join(str(int(v)) for v in row))

    def _evaluate(self):
        ll = R.exact_log_likelihood(self.params_rbm, self.test)
        self.log.record("test_log_likelihood", replica=self.replica, step=self.t, value=ll)

    def advance(self):
        s = self.params["sampler"]
        rng = self.replica_rngs[self.replica]
        n = min(s["eval_every"], s["n_steps"] - self.t)
        p = self.params_rbm
        k = self.params["rbm"]["cd_steps"]
        for _ in range(n):
            p = R.sampling_update(p, self.train[rng.integers(len(self.train))], self.prior,
                                  self.cfg, rng, k_cycles=k)
        self.params_rbm = p
        self.t += n
        self._evaluate()
        if self.t >= s["n_steps"]:
            counts, edges = R.weight_histogram(p)
            for lo, c in zip(edges[:-1], counts):
                self.log.record("weight_histogram", replica=self.replica, bin_lo=float(lo), count=int(c))
            self.replica += 1
            if self.replica >= s["replicas"]:
                self.done = True
                self._summarize()
                return
            self.t = 0
            self.params_rbm = R.init_params(self.params["rbm"]["n_visible"],
                                            self.params["rbm"]["n_hidden"],
                                            self.replica_rngs[self.replica])
            self._evaluate()

    def _summarize(self):
        s = self.params["sampler"]
        rows = self.log.rows("test_log_likelihood")
        steps = sorted({r["step"] for r in rows})
        curve = np.array([[r["value"] for r in rows if r["step"] == t] for t in steps]).mean(axis=1)
        for t, v in zip(steps, curve):
            self.log.record("mean_test_log_likelihood", step=t, value=float(v))
        peak = float(curve.max())
        end = float(curve[-s["end_evals"]:].mean())
        self.summary = {"prior": s["prior"], "peak": peak, "end": end,
                        "relative_drop": (peak - end) / abs(peak),
                        "peak_step": int(steps[int(np.argmax(curve))])}


# ---------------------------------------------------------------- WTA fixed point

class WtaFixedPoint(Experiment):
    """Two-pattern task; compares mean presynaptic trace at postsynaptic spikes
    with alpha * exp(w) for synapses that have settled."""

    name = "wta-fixed-point"
    DEFAULTS = {
        # the per-event clip biases <x> at spikes, so the rule is measured unclipped
        "wta": _wta_section(1e-4) | {"max_step_factor": math.inf},
        "task": {"n_inputs": 64, "n_neurons": 10, "pixel_density": 0.5,
                 "presentations": 40_000, "chunk_s": 1000.0},
        "analysis": {"from_fraction": 0.5, "snapshot_every_ms": 5000.0, "stable_theta": 3.0,
                     "stable_sd": 0.3, "min_spikes": 100},
    }
    VALIDATORS = _WTA_VALIDATORS

    def __init__(self, params, seed):
        super().__init__(params, seed)
        t = params["task"]
        self.cfg = _wta_config(params["wta"])
        pats = (self.rng.random((2, t["n_inputs"])) < t["pixel_density"]) * 255.0
        self.schedule = build_phase_schedule([(encode_image(pats), [1, 2])], [t["presentations"]], self.rng)
        self.net = build_network(t["n_inputs"], [t["n_neurons"]], self.rng, self.cfg)
        self.from_ms = params["analysis"]["from_fraction"] * self.schedule.end_ms
        shape = self.net.theta.shape
        self.sum_x = np.zeros(shape)
        self.sum_target = np.zeros(shape)
        self.count = np.zeros(self.net.n_neurons, np.int64)
        self.snaps = []
        self.max_rate_error = 0.0

    def advance(self):
        a = self.params["analysis"]
        now = self.net.step * self.cfg.dt_ms
        dur = min(self.params["task"]["chunk_s"] * 1e3, self.schedule.end_ms - now)
        res = simulate(self.net, self.schedule, dur, self.cfg, self.rng, track_fixed_point=True,
                       fixed_point_from_ms=self.from_ms, snapshot_every_ms=a["snapshot_every_ms"])
        fp = res.fixed_point
        self.sum_x += fp["sum_x"]
        self.sum_target += fp["sum_target"]
        self.count += fp["count"]
        self.snaps += [th for t, th in res.snapshots if t >= self.from_ms]
        self.max_rate_error = max(self.max_rate_error, res.max_rate_error)
        t_ms = self.net.step * self.cfg.dt_ms
        self.log.record("active_synapses", time_ms=t_ms, count=active_synapse_count(self.net))
        if t_ms >= self.schedule.end_ms - 1e-9:
            self.done = True
            self._summarize()

    def _summarize(self):
        a = self.params["analysis"]
        n_in = self.net.n_inputs
        snaps = np.array(self.snaps)[:, :, :n_in]
        mean_th, sd_th = snaps.mean(0), snaps.std(0)
        c = np.maximum(self.count, 1)[:, None]
        stable = (mean_th > a["stable_theta"]) & (sd_th < a["stable_sd"]) & (self.count[:, None] >= a["min_spikes"])
        mx = self.sum_x[:, :n_in] / c
        mt = self.sum_target[:, :n_in] / c
        post, pre = np.nonzero(stable)
        gaps = np.abs(mx[stable] - mt[stable]) / mt[stable]
        for k, i, x, tg, g in zip(post, pre, mx[stable], mt[stable], gaps):
            self.log.record("fixed_point", post=int(k), pre=int(i), mean_x=float(x),
                            mean_target=float(tg), rel_gap=float(g))
        self.summary = {"n_stable": int(stable.sum()),
                        "median_rel_gap": float(np.median(gaps)) if gaps.size else float("nan"),
                        "fraction_within_20pct": float(np.mean(gaps < 0.2)) if gaps.size else 0.0,
                        "max_rate_error": self.max_rate_error}


# ---------------------------------------------------------------- survival statistics

class SurvivalStats(Experiment):
    """Lifetimes of newly formed synapses for one or more sampling speeds b.

    One chunk simulates ``chunk_s`` seconds of one run.
    """

    name = "survival-stats"
    DEFAULTS = {
        "wta": _wta_section(1e-4) | {"noise_interval_ms": 100.0},
        "task": {"b_values_per_s": "1e-4,1e-6", "image_size": 8, "images_per_class": 20,
                 "n_circuits": 3, "circuit_size": 10, "duration_s": 3000.0, "chunk_s": 500.0},
        "analysis": {"min_events": 20, "fit_start_survival": 0.8, "fit_min_at_risk": 20,
                     "fit_points": 20},
    }
    VALIDATORS = _WTA_VALIDATORS

    def __init__(self, params, seed):
        super().__init__(params, seed)
        self.b_values = _floats(params["task"]["b_values_per_s"])
        self.run_seeds = self.rng.spawn(len(self.b_values))
        self.run_index = 0
        self._start_run()

    def _start_run(self):
        t = self.params["task"]
        sec = dict(self.params["wta"])
        sec["b_per_s"] = self.b_values[self.run_index]
        self.cfg = _wta_config(sec)
        rng = self.run_seeds[self.run_index]
        imgs, lab = bar_digit_images(t["images_per_class"], rng, size=t["image_size"])
        n = int(round(t["duration_s"] * 1e3 / 250.0))
        self.schedule = build_phase_schedule([(encode_image(imgs), lab)], [n], rng)
        self.net = build_network(t["image_size"] ** 2, [t["circuit_size"]] * t["n_circuits"], rng, self.cfg)
        self.run_rng = rng
        self.events = []

    def advance(self):
        now = self.net.step * self.cfg.dt_ms
        dur = min(self.params["task"]["chunk_s"] * 1e3, self.schedule.end_ms - now)
        res = simulate(self.net, self.schedule, dur, self.cfg, self.run_rng, track_events=True)
        self.events.append(res.events)
        b = self.b_values[self.run_index]
        t_ms = self.net.step * self.cfg.dt_ms
        self.log.record("active_synapses", b_per_s=b, time_ms=t_ms, count=active_synapse_count(self.net))
        if t_ms >= self.schedule.end_ms - 1e-9:
            self._finish_run()
            self.run_index += 1
            if self.run_index >= len(self.b_values):
                self.done = True
                self._summarize()
            else:
                self._start_run()

    def _finish_run(self):
        a = self.params["analysis"]
        b = self.b_values[self.run_index]
        ev = self.events[0]
        for e in self.events[1:]:
            ev = ev.extend(e)
        end = self.schedule.end_ms
        recs = survival_records(ev, end)
        row = {"b_per_s": b, "births": len(recs), "deaths": sum(not r.censored for r in recs)}
        try:
            ages, surv = survival_curve(recs, end, min_events=a["min_events"])
        except StatisticsError as e:
            row.update(median_lifetime_ms=float("nan"), median_is_lower_bound=True,
                       exponent=float("nan"), r2=float("nan"), fit_decades=0.0, note=str(e))
            self.log.record("survival_fit", **row)
            return
        for t, s in zip(ages, surv):
            self.log.record("survival_curve", b_per_s=b, age_ms=float(t), surviving=float(s))
        med, lower = median_lifetime(ages, surv)
        row.update(median_lifetime_ms=med, median_is_lower_bound=lower)
        fit = self._fit(recs, ages, surv, end)
        row.update(exponent=fit[0], r2=fit[1], fit_decades=fit[2], note=fit[3])
        self.log.record("survival_fit", **row)

    def _fit(self, recs, ages, surv, end):
        """Log-log fit between the first age with S <= fit_start_survival and
        the last age with at least fit_min_at_risk synapses still observed."""
        a = self.params["analysis"]
        all_ages = np.sort([r.age(end) for r in recs])
        below = np.flatnonzero(surv <= a["fit_start_survival"])
        if below.size == 0 or all_ages.size < a["fit_min_at_risk"]:
            return float("nan"), float("nan"), 0.0, "survival never fell below the fit start"
        lo = ages[below[0]]
        hi = all_ages[-a["fit_min_at_risk"]]
        if hi <= lo * 10:
            return float("nan"), float("nan"), float(np.log10(hi / lo)) if hi > lo else 0.0, \
                "fit range spans less than one decade"
        x, y = log_binned(ages, surv, a["fit_points"], lo, hi)
        f = fit_power_law(x, y)
        return f.exponent, f.r2, f.decades, ""

    def _summarize(self):
        rows = self.log.rows("survival_fit")
        self.summary = {"runs": rows}
        med = [r["median_lifetime_ms"] for r in rows]
        if len(rows) >= 2 and all(np.isfinite(med)):
            self.summary["time_scale_ratio"] = float(max(med) / min(med))


# ---------------------------------------------------------------- adaptation

class WtaAdapt(Experiment):
    """Three input phases (class 1, classes 1+2, class 1) for one WTA circuit.

    Every ``eval_every_s`` the learning network is copied and probed with
    frozen weights; a linear readout separates class-2 probes from blank
    (1 Hz) probes and class-1 from class-2 probes.
    """

    name = "wta-adapt"
    DEFAULTS = {
        "wta": _wta_section(1e-2),
        "task": {"images_per_class": 30, "probes_per_type": 40, "presentations": "400,1600,400",
                 "circuit_size": 10, "eval_every_s": 20.0, "probe_ms": 200.0,
                 "sparsity_margin_sd": 3.0},
    }
    VALIDATORS = _WTA_VALIDATORS

    def __init__(self, params, seed):
        super().__init__(params, seed)
        t = params["task"]
        self.cfg = _wta_config(params["wta"])
        imgs, lab = half_field_patterns(t["images_per_class"], self.rng)
        rates = encode_image(imgs)
        c1 = lab == 1
        pres = _ints(t["presentations"])
        if len(pres) != 3:
            raise ConfigError("task.presentations needs three phase counts")
        self.schedule = build_phase_schedule([(rates[c1], lab[c1]), (rates, lab), (rates[c1], lab[c1])],
                                             pres, self.rng)
        self.phase_boundaries_ms = list(self.schedule.phase_boundaries_ms)
        n_in = rates.shape[1]
        self.net = build_network(n_in, [t["circuit_size"]], self.rng, self.cfg)
        pimg, plab = half_field_patterns(t["probes_per_type"], self.rng)
        self.probe_rates = np.vstack([encode_image(pimg), np.full((t["probes_per_type"], n_in), 1.0)])
        self.probe_labels = np.concatenate([plab, np.zeros(t["probes_per_type"], int)])
        self.probe_order = self.rng.permutation(len(self.probe_labels))
        mu, sd = self.cfg.prior.mu, self.cfg.prior.sigma
        # functional count under the prior alone: binomial mean plus a margin
        p_on, n_pot = stats.norm.sf(0.0, mu, sd), self.net.exists.sum()
        self.sparsity_bound = float(p_on * n_pot + t["sparsity_margin_sd"]
                                    * np.sqrt(n_pot * p_on * (1 - p_on)))
        self._evaluate()

    def _phase(self, t_ms):
        return 1 + int(np.searchsorted(self.phase_boundaries_ms, t_ms, side="right"))

    def _evaluate(self):
        t = self.params["task"]
        feats = []
        for k, rates in enumerate(self.probe_rates):
            ev = self.net.copy()
            t0 = ev.step * self.cfg.dt_ms
            sched = InputSchedule.from_segments([t["probe_ms"]], rates[None, :], [self.probe_labels[k]],
                                                [0], False, t0)
            res = simulate(ev, sched, t["probe_ms"], self.cfg,
                           np.random.default_rng([self.seed, self.net.step, k]))
            feats.append(lowpass_features(res.spikes, [(t0, t0 + t["probe_ms"])], self.net.n_neurons)[0])
        x = np.array(feats)[self.probe_order]
        y = self.probe_labels[self.probe_order]
        acc = {}
        for name, classes in (("class2_vs_blank", (2, 0)), ("class1_vs_class2", (1, 2))):
            m = np.isin(y, classes)
            i, j = split_alternating(int(m.sum()))
            acc[name] = train_eval_readout(x[m], y[m], i, j)
        t_ms = self.net.step * self.cfg.dt_ms
        n_act = active_synapse_count(self.net)
        self.log.record("readout", time_ms=t_ms, phase=self._phase(t_ms - 1e-9) if t_ms > 0 else 1,
                        class2_vs_blank=acc["class2_vs_blank"],
                        class1_vs_class2=acc["class1_vs_class2"], active_synapses=n_act,
                        sparsity_bound=self.sparsity_bound)

    def advance(self):
        now = self.net.step * self.cfg.dt_ms
        dur = min(self.params["task"]["eval_every_s"] * 1e3, self.schedule.end_ms - now)
        res = simulate(self.net, self.schedule, dur, self.cfg, self.rng)
        for t_ms, n in res.metrics["active_synapses"]:
            self.log.record("active_synapses", time_ms=t_ms, count=n)
        self._evaluate()
        if self.net.step * self.cfg.dt_ms >= self.schedule.end_ms - 1e-9:
            self.done = True
            self._summarize()

    def _summarize(self):
        rows = self.log.rows("readout")
        b1 = self.phase_boundaries_ms[0]
        b2 = self.phase_boundaries_ms[1]
        pre = [r["class2_vs_blank"] for r in rows if r["time_ms"] <= b1]
        during = [r["class2_vs_blank"] for r in rows if b1 < r["time_ms"] <= b2]
        counts = self.log.column("active_synapses", "count")
        self.summary = {"pre_switch_accuracy": pre[-1], "max_phase2_accuracy": max(during),
                        "max_active_synapses": int(max(counts)),
                        "sparsity_bound": self.sparsity_bound,
                        "phase_boundaries_ms": self.phase_boundaries_ms}


# ---------------------------------------------------------------- lesions

class WtaLesion(Experiment):
    """Two populations of four WTA circuits with all-to-all lateral synapses.

    The 'auditory' population z_A sees synthetic 77 x 10 channel profiles,
    the 'visual' population z_V sees two-class half-field patterns of the
    same class.  After ``stage_s[0]`` the z_V neurons tuned to class 2 are
    removed; after ``stage_s[1]`` all functional z_A <-> z_V synapses are cut
    and barred from regrowing.  The readout classifies the auditory class
    from z_V activity in audio-only probes.
    """

    name = "wta-lesion"
    DEFAULTS = {
        "wta": _wta_section(1e-2),
        "task": {"utterances_per_class": 7, "images_per_class": 20, "time_bins": 20,
                 "pattern_ms": 400.0, "gap_ms": 50.0, "circuits_per_population": 4,
                 "circuit_size": 10, "stage_s": "200,200,200", "eval_every_s": 20.0,
                 "probes_per_class": 20, "tuning_probes_per_class": 25, "tuning_factor": 2.0,
                 "tracked_neuron": 60},
    }
    VALIDATORS = _WTA_VALIDATORS

    def __init__(self, params, seed):
        super().__init__(params, seed)
        t = params["task"]
        self.cfg = _wta_config(params["wta"])
        self.aud, self.aud_lab = auditory_profiles(t["utterances_per_class"], self.rng, n_bins=t["time_bins"])
        imgs, self.vis_lab = half_field_patterns(t["images_per_class"], self.rng)
        self.vis = encode_image(imgs)
        self.train_images = imgs
        self.n_a = self.aud.shape[2]
        self.n_v = self.vis.shape[1]
        half = t["circuits_per_population"] * t["circuit_size"]
        n = 2 * half
        mask = np.zeros((n, self.n_a + self.n_v), bool)
        mask[:half, :self.n_a] = True
        mask[half:, self.n_a:] = True
        pop = np.r_[np.zeros(half, int), np.ones(half, int)]
        self.net = build_network(self.n_a + self.n_v, [t["circuit_size"]] * (2 * t["circuits_per_population"]),
                                 self.rng, self.cfg, input_mask=mask, lateral=True, population=pop)
        self.z_a = np.arange(half)
        self.z_v = np.arange(half, n)
        self.stage_ends_ms = list(np.cumsum(_floats(t["stage_s"])) * 1e3)
        if len(self.stage_ends_ms) != 3:
            raise ConfigError("task.stage_s needs three stage lengths")
        if not 0 <= t["tracked_neuron"] < n:
            raise ConfigError(f"task.tracked_neuron must lie in [0, {n})")
        self.lesions_done = 0
        self.removed = {}
        self.theta_track = []
        self._evaluate()

    def _trial(self, c, rng, audio=True, visual=True):
        nb = self.params["task"]["time_bins"]
        a = self.aud[rng.choice(np.flatnonzero(self.aud_lab == c))] if audio else np.full((nb, self.n_a), 1.0)
        v = self.vis[rng.choice(np.flatnonzero(self.vis_lab == c))] if visual else np.full(self.n_v, 1.0)
        return np.hstack([a, np.repeat(v[None, :], nb, axis=0)])

    def _probe(self, n_per, visual, tag):
        t = self.params["task"]
        prng = np.random.default_rng([self.seed, self.net.step, tag])
        feats, labels = [], []
        for k in range(2 * n_per):
            c = 1 + (k // 2) % 2
            ev = self.net.copy()
            t0 = ev.step * self.cfg.dt_ms
            sched = presentation_schedule([self._trial(c, prng, True, visual)], [c], [0],
                                          pattern_ms=t["pattern_ms"], gap_ms=0, plastic=False, t0=t0)
            res = simulate(ev, sched, t["pattern_ms"], self.cfg, prng)
            feats.append(lowpass_features(res.spikes, [(t0, t0 + t["pattern_ms"])], self.net.n_neurons)[0])
            labels.append(c)
        return np.array(feats), np.array(labels)

    def _accuracy(self):
        x, y = self._probe(self.params["task"]["probes_per_class"], False, 0)
        alive_v = self.z_v[self.net.alive[self.z_v]]
        i, j = split_alternating(len(y))
        return train_eval_readout(x[:, alive_v], y, i, j), x, y

    def _evaluate(self, event="train"):
        acc, x, y = self._accuracy()
        t_ms = self.net.step * self.cfg.dt_ms
        lat = self.net.functional()[np.ix_(np.r_[self.z_a, self.z_v], self.net.n_inputs + np.r_[self.z_a, self.z_v])]
        self.log.record("readout", time_ms=t_ms, event=event, accuracy=acc,
                        active_synapses=active_synapse_count(self.net),
                        lateral_synapses=int(lat.sum()),
                        alive_visual_neurons=int(self.net.alive[self.z_v].sum()))
        k = self.params["task"]["tracked_neuron"]
        cols = self.net.n_inputs + np.setdiff1d(np.arange(self.net.n_neurons), [k])
        self.theta_track.append(np.r_[self.net.theta[k, cols], self.net.theta[np.setdiff1d(np.arange(self.net.n_neurons), [k]), self.net.n_inputs + k]])
        self._last_probe = (x, y)

    def _train(self, dur_ms):
        t = self.params["task"]
        t0 = self.net.step * self.cfg.dt_ms
        n = max(1, int(np.ceil(dur_ms / (t["pattern_ms"] + t["gap_ms"]))))
        cls = self.rng.integers(1, 3, size=n)
        pats = [self._trial(c, self.rng) for c in cls]
        sched = presentation_schedule(pats, list(cls), range(n), pattern_ms=t["pattern_ms"],
                                      gap_ms=t["gap_ms"], t0=t0)
        res = simulate(self.net, sched, dur_ms, self.cfg, self.rng)
        for t_ms, c in res.metrics["active_synapses"]:
            self.log.record("active_synapses", time_ms=t_ms, count=c)

    def _lesion(self):
        t = self.params["task"]
        now = self.net.step * self.cfg.dt_ms
        if self.lesions_done == 0:
            x, y = self._probe(t["tuning_probes_per_class"], True, 1)
            r1, r2 = x[y == 1].mean(0), x[y == 2].mean(0)
            cand = self.z_v[self.net.alive[self.z_v]]
            targets = select_tuned_neurons(r1, r2, t["tuning_factor"], candidates=cand)
            self.net, n = apply_lesion(self.net, LesionSpec(REMOVE_NEURONS, targets.tolist(), now))
            self.removed["neurons"] = targets.tolist()
        else:
            self.net, n = apply_lesion(self.net, LesionSpec(REMOVE_CONNECTIONS, (self.z_a.tolist(), self.z_v.tolist()), now))
            self.removed["lateral_synapses"] = n
        self.lesions_done += 1
        self.lesion_times_ms.append(now)
        self.log.record("lesions", time_ms=now, index=self.lesions_done, removed=n)
        self._evaluate(event=f"lesion{self.lesions_done}")

    def advance(self):
        now = self.net.step * self.cfg.dt_ms
        if self.lesions_done < 2 and now >= self.stage_ends_ms[self.lesions_done] - 1e-9:
            self._lesion()
            return
        end = self.stage_ends_ms[min(self.lesions_done, 2)]
        dur = min(self.params["task"]["eval_every_s"] * 1e3, end - now)
        self._train(dur)
        self._evaluate()
        if self.lesions_done == 2 and self.net.step * self.cfg.dt_ms >= self.stage_ends_ms[2] - 1e-9:
            self.done = True
            self._summarize()

    def _reconstructions(self):
        x, y = self._last_probe
        eff = self.net.effective_weights(self.cfg.theta0)[np.ix_(self.z_v, self.net.n_inputs - self.n_v + np.arange(self.n_v))]
        side = int(round(math.sqrt(self.n_v)))
        out = {}
        for c in (1, 2):
            img = reconstruct_stimulus(x[y == c][:, self.z_v].mean(0), eff)
            target = self.train_images[self.vis_lab == c].mean(0)
            r = float(np.corrcoef(img, target)[0, 1]) if img.std() > 0 else float("nan")
            self.images[f"reconstruction_class{c}"] = img.reshape(side, side)
            out[c] = r
        return out

    def _summarize(self):
        rows = self.log.rows("readout")
        lesion_idx = [i for i, r in enumerate(rows) if r["event"].startswith("lesion")]
        stages = []
        for n, li in enumerate(lesion_idx):
            before = [r["accuracy"] for r in rows[:li] if r["event"] == "train"][-2:]
            pre = float(np.mean(before))
            stop = lesion_idx[n + 1] if n + 1 < len(lesion_idx) else len(rows)
            after = [r["accuracy"] for r in rows[li + 1:stop]]
            stages.append({"lesion": n + 1, "time_ms": rows[li]["time_ms"], "pre_accuracy": pre,
                           "post_lesion_accuracy": rows[li]["accuracy"],
                           "drop": pre - rows[li]["accuracy"],
                           "recovered_accuracy": max(after) if after else float("nan")})
        corr = self._reconstructions()
        pca = pca_trajectory(np.array(self.theta_track))
        for t, p in zip((r["time_ms"] for r in rows), pca.projections):
            self.log.record("parameter_pca", time_ms=t, pc1=float(p[0]), pc2=float(p[1]), pc3=float(p[2]))
        self.summary = {"lesions": stages, "removed": self.removed,
                        "reconstruction_correlation": {str(k): v for k, v in corr.items()},
                        "lesion_times_ms": self.lesion_times_ms}


EXPERIMENTS = {cls.name: cls for cls in
               (ValidatePosterior, RbmGeneralization, WtaFixedPoint, SurvivalStats, WtaAdapt, WtaLesion)}
