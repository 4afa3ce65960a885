"""Compare exact and norm-bounded ensemble weights.

The exact weights cancel every bias term but can get very large as the
dimension grows, which inflates the variance. The relaxed weights trade a
small residual bias for a bounded norm.

Run with ``python3 demos/weights_tour.py``.
"""

import numpy as np

from ensdiv.ensemble import EnsembleSpec, default_l_bar, solve_exact_weights, solve_relaxed_weights
from ensdiv.exceptions import EnsdivError

T = 3000

print(f"{'d':>2} {'exact norm':>12} {'relaxed norm':>13} {'relaxed obj':>12}")
for d in range(2, 9):
    spec = EnsembleSpec(default_l_bar(), d)
    try:
        exact = f"{solve_exact_weights(spec).norm:12.4g}"
    except EnsdivError:
        exact = f"{'n/a':>12}"
    relaxed = solve_relaxed_weights(spec, T, eta=2.0)
    print(f"{d:>2} {exact} {relaxed.norm:13.4f} {relaxed.objective:12.3g}")

# the smallest case can be checked by hand: w = (2, -1) for l = (1, 4) at d = 2
w = solve_exact_weights(EnsembleSpec([1.0, 4.0], 2)).weights
print("\nd=2, l=(1, 4):", w, "sum", w.sum(), "gamma", w @ np.sqrt([1.0, 4.0]))
