"""Convex functions g defining divergence functionals of the form

    G(f1, f2) = integral of g(f1(x) / f2(x)) f2(x) dx

together with the map from G to the reported divergence value.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .exceptions import EstimationError

__all__ = ["GFunctional", "renyi", "kl", "custom", "parse_g", "CUSTOM_G"]


@dataclass(frozen=True)
class GFunctional:
    """A function g of the likelihood ratio plus its post-transform.

    Attributes
    ----------
    kind : str
        One of ``"renyi"``, ``"kl"`` or ``"custom"``.
    g : callable
        Vectorised map from positive ratios to reals.
    alpha : float, optional
        Renyi order; only set when ``kind == "renyi"``.
    name : str
        Label used in serialised configs (``renyi:0.8``, ``kl``, ``custom:one``).
    """

    kind: str
    g: Callable[[np.ndarray], np.ndarray] = field(compare=False)
    alpha: Optional[float] = None
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("renyi", "kl", "custom"):
            raise ValueError(f"unknown g kind {self.kind!r}")
        if self.kind == "renyi":
            if self.alpha is None or not np.isfinite(self.alpha) or self.alpha <= 0 or self.alpha == 1:
                raise ValueError(f"Renyi order must be in (0,1) or (1,inf), got {self.alpha}")

    def __call__(self, ratio):
        return self.g(np.asarray(ratio, dtype=float))

    def post_transform(self, value: float) -> float:
        """Map the functional G to the named divergence."""
        if self.kind == "renyi":
            if not value > 0:
                raise EstimationError(
                    f"Renyi functional estimate {value!r} is not positive; cannot take its log"
                )
            return float(np.log(value) / (self.alpha - 1.0))
        return float(value)


def _renyi_g(alpha):
    def g(x):
        return np.power(x, alpha)
    return g


def _neg_log(x):
    return -np.log(x)


def renyi(alpha: float) -> GFunctional:
    return GFunctional("renyi", _renyi_g(float(alpha)), float(alpha), f"renyi:{float(alpha):g}")


def kl() -> GFunctional:
    return GFunctional("kl", _neg_log, None, "kl")


def custom(g: Callable[[np.ndarray], np.ndarray], name: str = "custom") -> GFunctional:
    """Wrap an arbitrary vectorised ``g``; the divergence equals the functional."""
    return GFunctional("custom", g, None, name)


def _one(x):
    return np.ones_like(x, dtype=float)


def _identity(x):
    return np.array(x, dtype=float)


# Named custom functions reachable from config files and the command line.
CUSTOM_G = {
    "one": _one,
    "identity": _identity,
    "square": np.square,
}


def parse_g(text: str) -> GFunctional:
    """Parse ``renyi:<alpha>``, ``kl`` or ``custom:<name>``."""
    kind, _, arg = text.strip().partition(":")
    kind = kind.lower()
    if kind == "renyi":
        if not arg:
            raise ValueError("renyi needs an order, e.g. renyi:0.8")
        return renyi(float(arg))
    if kind == "kl":
        if arg:
            raise ValueError("kl takes no argument")
        return kl()
    if kind == "custom":
        if arg not in CUSTOM_G:
            raise ValueError(f"unknown custom g {arg!r}; choose from {sorted(CUSTOM_G)}")
        return custom(CUSTOM_G[arg], f"custom:{arg}")
    raise ValueError(f"cannot parse g-spec {text!r}")
