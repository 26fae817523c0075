"""Bracket the integration step: stationary variance error of the conjugate
Gaussian chain as a function of dt at fixed b.

    python scripts/dt_scan.py [--steps 200000] [--dts 0.05,0.1,0.5,2,10]

The Euler-Maruyama stationary variance of this linear model is
v / (1 - eta * (n + 1) / 2) with eta = b dt, so the relative error grows
linearly in dt; the printed 'predicted' column is that formula.
"""
import argparse

import numpy as np

from synsamp.langevin import ParameterState, SamplerConfig, run_chain, stationary_moments
from synsamp.toymodels import ConjugateGaussian


def main():
    ap = argparse.ArgumentParser(description="stationary variance error versus dt")
    ap.add_argument("--steps", type=int, default=200_000)
    ap.add_argument("--b", type=float, default=1e-3)
    ap.add_argument("--dts", default="0.05,0.1,0.5,2,10,50")
    ap.add_argument("--replicas", type=int, default=64)
    args = ap.parse_args()
    obs = np.random.default_rng(0).normal(1.0, 1.0, 5)
    model = ConjugateGaussian(obs, replicas=args.replicas)
    mean, var = model.posterior()
    print("dt      eta*(n+1)  mean_err  var_err  predicted")
    for dt in (float(v) for v in args.dts.split(",")):
        cfg = SamplerConfig(learning_rate=args.b, dt=dt, dataset_size=5, seed=1)
        thin = max(1, int(2.0 / (args.b * dt * 6)))
        traj = run_chain(ParameterState(model.initial()), model, cfg, args.steps, thin=thin).pooled()
        m, c = stationary_moments(traj)
        eta = args.b * dt
        pred = 1.0 / (1.0 - eta * 6 / 2) - 1.0
        print(f"{dt:<7g} {eta * 6:<10.2e} {abs(m[0] / mean - 1):<9.4f} {abs(c[0, 0] / var - 1):<8.4f} {pred:.4f}")


if __name__ == "__main__":
    main()
