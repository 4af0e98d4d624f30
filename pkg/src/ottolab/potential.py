"""
Confining potentials, compactly supported perturbations and the Gibbs reference density.

All potentials are scalar functions on the real line. The diffusion they drive is

    dX = -Psi'(X) dt + dW,

whose stationary (Gibbs) density is proportional to ``q(x) = exp(-2 Psi(x))``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np
from scipy import integrate

KINDS = ("Zero", "Quadratic", "DoubleWell", "Custom")


class InfiniteMassError(ValueError):
    """Raised when the mass of a non-normalizable Gibbs measure is requested."""


@dataclass(frozen=True)
class Potential:
    r"""
    A confining potential :math:`\Psi` with analytic first and second derivatives.

    Parameters
    ----------
    kind : str
        One of ``Zero``, ``Quadratic``, ``DoubleWell``, ``Custom``.
    theta : float
        Leading coefficient of the quadratic potential :math:`\theta x^2 + c`.
    c : float
        Additive constant (all kinds). Shifts relative entropy by ``2c`` and
        leaves every score unchanged.
    alpha : float
        Well location of the double well :math:`(x^2-\alpha^2)^2 + c`.
    custom : tuple of callables, optional
        ``(value, gradient, hessian)`` for ``kind="Custom"``.
    curvature : float, optional
        Lower bound on the Hessian. Required for ``Custom``.
    """

    kind: str = "Quadratic"
    theta: float = 0.25
    c: float = 0.0
    alpha: float = 1.0
    custom: Optional[tuple[Callable, Callable, Callable]] = field(default=None, compare=False)
    curvature: Optional[float] = None
    coercivity: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown potential kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "Quadratic" and self.theta < 0:
            raise ValueError("Quadratic potential needs theta >= 0")
        if self.kind == "Custom":
            if self.custom is None or self.curvature is None:
                raise ValueError("Custom potential needs custom=(value, grad, hess) and curvature")
        if self.kind == "DoubleWell" and self.coercivity == (0.0, 0.0):
            # <x, Psi'(x)> = 4x^2 (x^2 - alpha^2) >= 0 once |x| >= alpha
            object.__setattr__(self, "coercivity", (0.0, abs(self.alpha)))

    # -- constructors -----------------------------------------------------------------

    @classmethod
    def zero(cls, c: float = 0.0) -> "Potential":
        return cls(kind="Zero", c=c)

    @classmethod
    def quadratic(cls, theta: float = 0.25, c: float = 0.0) -> "Potential":
        return cls(kind="Quadratic", theta=theta, c=c)

    @classmethod
    def normalized_quadratic(cls) -> "Potential":
        """``x^2/4 + ln(2 pi)/4``: its Gibbs measure is the standard normal law."""
        return cls(kind="Quadratic", theta=0.25, c=0.25 * np.log(2 * np.pi))

    @classmethod
    def double_well(cls, alpha: float = 1.0, c: float = 0.0) -> "Potential":
        return cls(kind="DoubleWell", alpha=alpha, c=c)

    @classmethod
    def from_config(cls, cfg: Mapping[str, object]) -> "Potential":
        """Build from flat keys ``potential.kind``, ``potential.theta``, ``potential.c``, ``potential.alpha``."""
        if "potential.kind" not in cfg:
            raise KeyError("potential.kind")
        kind = str(cfg["potential.kind"])
        if kind == "Custom":
            raise ValueError("potential.kind=Custom cannot be built from a config file")
        return cls(
            kind=kind,
            theta=float(cfg.get("potential.theta", 0.25)),
            c=float(cfg.get("potential.c", 0.0)),
            alpha=float(cfg.get("potential.alpha", 1.0)),
        )

    def to_config(self) -> dict[str, object]:
        out: dict[str, object] = {"potential.kind": self.kind, "potential.c": self.c}
        if self.kind == "Quadratic":
            out["potential.theta"] = self.theta
        if self.kind == "DoubleWell":
            out["potential.alpha"] = self.alpha
        return out

    # -- evaluation -------------------------------------------------------------------

    def __call__(self, x):
        return self.evaluate(x)

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "Zero":
            return np.zeros_like(x) + self.c
        if self.kind == "Quadratic":
            return self.theta * x**2 + self.c
        if self.kind == "DoubleWell":
            return (x**2 - self.alpha**2) ** 2 + self.c
        return np.asarray(self.custom[0](x), dtype=float) + self.c

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "Zero":
            return np.zeros_like(x)
        if self.kind == "Quadratic":
            return 2.0 * self.theta * x
        if self.kind == "DoubleWell":
            return 4.0 * x * (x**2 - self.alpha**2)
        return np.asarray(self.custom[1](x), dtype=float)

    def hessian(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "Zero":
            return np.zeros_like(x)
        if self.kind == "Quadratic":
            return np.full_like(x, 2.0 * self.theta)
        if self.kind == "DoubleWell":
            return 12.0 * x**2 - 4.0 * self.alpha**2
        return np.asarray(self.custom[2](x), dtype=float)

    @property
    def curvature_bound(self) -> float:
        """Largest ``kappa`` with ``Psi'' >= kappa`` everywhere."""
        if self.kind == "Zero":
            return 0.0
        if self.kind == "Quadratic":
            return 2.0 * self.theta
        if self.kind == "DoubleWell":
            return -4.0 * self.alpha**2
        return float(self.curvature)

    @property
    def normalizable(self) -> bool:
        if self.kind == "Zero":
            return False
        if self.kind == "Quadratic":
            return self.theta > 0
        if self.kind == "DoubleWell":
            return True
        return True

    def gibbs_density(self, x):
        """Unnormalized Gibbs density ``exp(-2 Psi(x))``."""
        return np.exp(-2.0 * self.evaluate(x))

    def mass(self) -> float:
        """Total mass of the Gibbs measure, by adaptive quadrature."""
        if not self.normalizable:
            raise InfiniteMassError(f"Gibbs measure of the {self.kind} potential has infinite mass")
        val, _ = integrate.quad(lambda y: float(self.gibbs_density(y)), -np.inf, np.inf,
                                epsabs=1e-13, epsrel=1e-12, limit=200)
        return val

    def coercivity_holds(self, radii) -> bool:
        """Check ``x Psi'(x) >= -c x^2`` at the given radii (both signs), ``|x| >= R``."""
        c, R = self.coercivity
        r = np.abs(np.asarray(radii, dtype=float))
        r = r[r >= R]
        x = np.concatenate([r, -r])
        return bool(np.all(x * self.gradient(x) >= -c * x**2 - 1e-12))


@dataclass(frozen=True)
class Perturbation:
    r"""
    Smooth bump :math:`B(x) = A \exp(-1/(1-u^2))`, :math:`u = (x - x_c)/r`, zero for ``|u| >= 1``.

    The perturbing drift is :math:`\beta = B'` and its divergence is :math:`B''`.
    """

    center: float = 0.0
    radius: float = 1.0
    amplitude: float = 0.0

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"perturbation radius must be positive, got {self.radius}")

    @classmethod
    def from_config(cls, cfg: Mapping[str, object]) -> Optional["Perturbation"]:
        keys = ("perturbation.center", "perturbation.radius", "perturbation.amplitude")
        if not any(k in cfg for k in keys):
            return None
        return cls(
            center=float(cfg.get("perturbation.center", 0.0)),
            radius=float(cfg.get("perturbation.radius", 1.0)),
            amplitude=float(cfg.get("perturbation.amplitude", 0.0)),
        )

    def to_config(self) -> dict[str, object]:
        return {"perturbation.center": self.center, "perturbation.radius": self.radius,
                "perturbation.amplitude": self.amplitude}

    @property
    def support(self) -> tuple[float, float]:
        return self.center - self.radius, self.center + self.radius

    def fields(self, x):
        """Return ``(B, beta, div_beta)`` at ``x``."""
        x = np.asarray(x, dtype=float)
        u = (x - self.center) / self.radius
        # beyond |u| = 1 - 1e-8 the bump is below exp(-5e7): exactly zero in double precision
        inside = np.abs(u) < 1.0 - 1e-8
        us = np.where(inside, u, 0.0)
        w = 1.0 - us**2
        e = np.where(inside, np.exp(-1.0 / w), 0.0)
        g1 = -2.0 * us / w**2
        g2 = -2.0 / w**2 - 8.0 * us**2 / w**3
        A = self.amplitude
        B = A * e
        beta = A * e * g1 / self.radius
        div_beta = A * e * (g1**2 + g2) / self.radius**2
        return B, beta, div_beta

    def value(self, x):
        return self.fields(x)[0]

    def beta(self, x):
        return self.fields(x)[1]

    def div_beta(self, x):
        return self.fields(x)[2]


def perturbation_fields(b: Perturbation, x):
    """Functional form of :meth:`Perturbation.fields`."""
    return b.fields(x)


def drift_potential(pot: Potential, pert: Optional[Perturbation] = None):
    """Return ``x -> Psi(x) + B(x)``, the potential whose gradient is the total drift."""
    if pert is None:
        return pot.evaluate
    return lambda x: pot.evaluate(x) + pert.value(x)


def drift_gradient(pot: Potential, pert: Optional[Perturbation] = None):
    """Return ``x -> Psi'(x) + beta(x)``."""
    if pert is None:
        return pot.gradient
    return lambda x: pot.gradient(x) + pert.beta(x)
