"""Estimate a divergence from two point clouds on disk.

Writes two CSV samples, then runs the same estimate through the library and
through the ``ensdiv estimate`` command.

Run with ``python3 demos/estimate_from_files.py``.
"""

import json
import subprocess
import sys
import tempfile
from pathlib import Path

import numpy as np

from ensdiv.distributions import STREAM_F1, STREAM_F2, GaussianSpec, Seed, sample, true_divergence
from ensdiv.divergence import renyi, split_f2
from ensdiv.ensemble import EnsembleSpec, default_l_bar, ensemble_estimate, solve_relaxed_weights

d, T = 3, 2000
f1 = GaussianSpec.isotropic(0.7, 0.1, d, (0.0, 1.0))
f2 = GaussianSpec.isotropic(0.3, 0.3, d, (0.0, 1.0))
y = sample(f1, T, Seed(11, STREAM_F1)).points
x = sample(f2, T, Seed(11, STREAM_F2)).points

ev, ref = split_f2(x, 0.5, Seed(0, 2))
spec = EnsembleSpec(default_l_bar(), d)
est = ensemble_estimate(ev, ref, y, spec, solve_relaxed_weights(spec, T, 2.0), renyi(0.8))
truth = true_divergence(f1, f2, renyi(0.8), 1_000_000)
print(f"library: G = {est.functional:.4f}, truth {truth.value:.4f}")

with tempfile.TemporaryDirectory() as tmp:
    a, b = Path(tmp, "f1.csv"), Path(tmp, "f2.csv")
    np.savetxt(a, y, delimiter=",")
    np.savetxt(b, x, delimiter=",")
    out = subprocess.run(
        [sys.executable, "-m", "ensdiv.cli", "estimate", "--f1", str(a), "--f2", str(b), "--seed", "0"],
        capture_output=True, text=True, check=True,
    ).stdout
    print("cli:    ", json.dumps(json.loads(out)["functional"]))
