"""MSE of the plug-in and ensemble estimators as the sample size grows.

A reduced version of ``configs/sample_size_sweep.toml`` that finishes in a
minute or two. It prints the MSE table and the log-log slope of each
estimator; a slope near -1 is the parametric rate.

Run with ``python3 demos/mse_vs_sample_size.py [--trials N] [--threads K]``.
"""

import argparse

from ensdiv.harness import ExperimentConfig, loglog_slope, run_experiment

parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
parser.add_argument("--trials", type=int, default=30)
parser.add_argument("--threads", type=int, default=4)
args = parser.parse_args()

box = [0.0, 1.0]
cfg = ExperimentConfig(
    f1={"mean": 0.7, "covariance": 0.1, "box": box},
    f2={"mean": 0.3, "covariance": 0.3, "box": box},
    estimators=("knn_plugin", "kernel_plugin", "ensemble_relaxed"),
    T_grid=(500, 1000, 2000, 3000),
    d_grid=(5,),
    trials=args.trials,
    oracle_budget=1_000_000,
)
result = run_experiment(cfg, threads=args.threads)
print(f"truth {result.truths[5].value:.5f} +/- {result.truths[5].std_error:.1g}\n")

rows = result.summary()
print(f"{'estimator':<18}" + "".join(f"{'T=' + str(T):>11}" for T in cfg.T_grid) + f"{'slope':>8}")
for name in cfg.estimators:
    mse = [r.mse for r in rows if r.estimator == name]
    print(f"{name:<18}" + "".join(f"{m:11.3e}" for m in mse) + f"{loglog_slope(cfg.T_grid, mse):8.2f}")
