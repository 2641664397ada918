"""SDE model containers: coefficient functions, driving triplet, noise scale."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ValidationError
from .levy_core import LevyTriplet


def _as_function(value):
    if callable(value):
        return value
    c = float(value)

    def const(x):
        return np.full(np.shape(x), c) if np.ndim(x) else c

    const.constant = c
    return const


def derivative(fn, x, h=1e-6):
    """Central difference of a vectorized scalar function."""
    if getattr(fn, "constant", None) is not None:
        return np.zeros(np.shape(x)) if np.ndim(x) else 0.0
    x = np.asarray(x, dtype=float)
    step = h * (1.0 + np.abs(x))
    out = (np.asarray(fn(x + step)) - np.asarray(fn(x - step))) / (2.0 * step)
    return out if out.ndim else float(out)


@dataclass(frozen=True, eq=False)
class CoefficientSet:
    """Drift ``b``, diffusion ``sigma`` and jump coefficient ``eta``.

    Each entry is a vectorized function of the state or a number (a constant
    function).  ``lipschitz`` and ``sup_bound`` are the declared bounds used by
    the simulator's overflow guard; ``sigma_min`` is the lower bound that the
    Brownian action requires of ``sigma``.
    """

    b: Callable = 0.0
    sigma: Callable = 1.0
    eta: Callable = 0.0
    lipschitz: Optional[float] = None
    sup_bound: Optional[float] = None
    sigma_min: float = 1e-12

    def __post_init__(self):
        for name in ("b", "sigma", "eta"):
            object.__setattr__(self, name, _as_function(getattr(self, name)))

    def is_constant(self, name):
        return getattr(getattr(self, name), "constant", None) is not None

    def constant_value(self, name):
        return getattr(getattr(self, name), "constant", None)

    def db(self, x):
        return derivative(self.b, x)

    def dsigma(self, x):
        return derivative(self.sigma, x)

    def deta(self, x):
        return derivative(self.eta, x)


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """``dX = b(X) dt + sqrt(eps) sigma(X) dB + eta(X) dL^eps``."""

    coeffs: CoefficientSet = field(default_factory=CoefficientSet)
    triplet: LevyTriplet = field(default_factory=LevyTriplet)
    epsilon: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.epsilon) and self.epsilon > 0):
            raise ValidationError("epsilon must be > 0", "/epsilon")

    @property
    def has_jumps(self):
        """True when the Lévy driver contributes to the dynamics."""
        if self.coeffs.constant_value("eta") == 0.0:
            return False
        return not (self.triplet.nu.is_zero and self.triplet.sigma2 == 0.0 and self.triplet.a == 0.0)

    def with_epsilon(self, epsilon):
        return ModelSpec(self.coeffs, self.triplet, epsilon)


def brownian_model(b=0.0, sigma=1.0, epsilon=1.0):
    """Diffusion without a Lévy driver."""
    return ModelSpec(CoefficientSet(b=b, sigma=sigma, eta=0.0), LevyTriplet(), epsilon)
