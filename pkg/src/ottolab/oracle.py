"""Closed-form Gaussian ground truth for the Ornstein-Uhlenbeck and heat flows."""
from __future__ import annotations

import math
from dataclasses import dataclass

from .potential import Potential


@dataclass(frozen=True)
class GaussianState:
    mean: float
    var: float

    def __post_init__(self):
        if not self.var > 0:
            raise ValueError("GaussianState needs var > 0")

    @property
    def std(self) -> float:
        return math.sqrt(self.var)


def ou_marginal(g0: GaussianState, t: float) -> GaussianState:
    """Law at time ``t`` of ``dX = -X/2 dt + dW`` started from ``g0``."""
    if t < 0:
        raise ValueError("t must be non-negative")
    if t == 0:
        return g0
    e = math.exp(-t)
    return GaussianState(g0.mean * math.exp(-t / 2), g0.var * e + 1.0 - e)


def heat_marginal(g0: GaussianState, t: float) -> GaussianState:
    """Law at time ``t`` of ``dX = dW`` started from ``g0``."""
    if t < 0:
        raise ValueError("t must be non-negative")
    return GaussianState(g0.mean, g0.var + t)


def gaussian_entropy_fisher(g: GaussianState, pot: Potential) -> tuple[float, float]:
    """
    Relative entropy and relative Fisher information of ``g`` with respect to ``exp(-2 Psi)``.

    Only ``Zero`` and ``Quadratic`` with ``theta = 1/4`` are supported.
    """
    m, v = g.mean, g.var
    if pot.kind == "Zero":
        H = -0.5 * math.log(2 * math.pi * math.e * v) + 2 * pot.c
        return H, 1.0 / v
    if pot.kind == "Quadratic" and math.isclose(pot.theta, 0.25):
        H = (v + m * m) / 2 - 0.5 - 0.5 * math.log(2 * math.pi * v) + 2 * pot.c
        I = (v - 1.0) ** 2 / v + m * m
        return H, I
    raise ValueError(f"no Gaussian oracle for potential {pot.kind} (theta={pot.theta})")


def gaussian_w2(g1: GaussianState, g2: GaussianState) -> float:
    return math.hypot(g1.mean - g2.mean, g1.std - g2.std)


def ou_metric_speed(g0: GaussianState, t: float) -> float:
    """``sqrt(m'(t)^2 + sigma'(t)^2)`` along the OU flow."""
    g = ou_marginal(g0, t)
    dm = -0.5 * g.mean
    # var' = -(var0 - 1) e^{-t} = 1 - var, sigma' = var' / (2 sigma)
    dsig = (1.0 - g.var) / (2 * g.std)
    return math.hypot(dm, dsig)
