"""k-NN plug-in and optimally weighted ensemble estimators of f-divergences."""
from .distributions import GaussianSpec, SampleSet, Seed, density_at, sample, true_divergence
from .divergence import Estimate, plugin_estimate, plugin_estimate_kernel, split_f2
from .ensemble import EnsembleSpec, WeightVector, ensemble_estimate, solve_exact_weights, solve_relaxed_weights
from .functionals import GFunctional, custom, kl, parse_g, renyi
from .spatial import build_index, kth_distance, unit_ball_volume

__version__ = "0.1.0"
