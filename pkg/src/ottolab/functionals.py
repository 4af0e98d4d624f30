"""
Information functionals of grid densities relative to the Gibbs measure ``exp(-2 Psi) dx``.

The integrand conventions: ``0 log 0 = 0`` and every integrand is zeroed at nodes where
the density is below the absolute floor.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .measure import ABS_FLOOR, GridDensity, log_density, write_columns
from .potential import Potential


def _support(d: GridDensity) -> np.ndarray:
    return d.values > ABS_FLOOR


def log_likelihood_ratio(d: GridDensity, pot: Potential) -> np.ndarray:
    """``log p + 2 Psi`` at the nodes (tail-extrapolated where p is unresolved)."""
    logp, _ = log_density(d)
    return logp + 2.0 * pot.evaluate(d.x)


def likelihood_score(d: GridDensity, pot: Potential) -> np.ndarray:
    """``(log l)' = (log p)' + 2 Psi'`` at the nodes."""
    _, s = log_density(d)
    return s + 2.0 * pot.gradient(d.x)


def relative_entropy(d: GridDensity, pot: Potential) -> float:
    p = d.values
    ok = _support(d)
    integrand = np.zeros_like(p)
    integrand[ok] = p[ok] * (np.log(p[ok]) + 2.0 * pot.evaluate(d.x[ok]))
    return float(np.dot(d.weights, integrand))


def relative_fisher_information(d: GridDensity, pot: Potential) -> float:
    a = likelihood_score(d, pot)
    return d.integrate(np.where(_support(d), a * a, 0.0))


def free_energy(d: GridDensity, pot: Potential) -> float:
    """Potential energy plus half the negative differential entropy."""
    p = d.values
    ok = _support(d)
    plogp = np.zeros_like(p)
    plogp[ok] = p[ok] * np.log(p[ok])
    return float(np.dot(d.weights, pot.evaluate(d.x) * p) + 0.5 * np.dot(d.weights, plogp))


def velocity_field(d: GridDensity, pot: Potential) -> np.ndarray:
    """Transport velocity ``-(p'/(2p) + Psi') = -(log l)'/2`` of the Fokker-Planck flow."""
    return -0.5 * likelihood_score(d, pot)


def kinetic_energy(d: GridDensity, pot: Potential) -> float:
    v = velocity_field(d, pot)
    return d.integrate(np.where(_support(d), v * v, 0.0))


@dataclass(frozen=True)
class SigmaFiniteDecomposition:
    h_vs_reference: float
    quad_moment: float
    log_partition: float
    reconstructed_H: float


def sigma_finite_decomposition(d: GridDensity, pot: Potential) -> SigmaFiniteDecomposition:
    """
    Split ``H(P|Q)`` through the probability measure with density proportional to
    ``exp(-x^2 - 2 Psi)``, which exists even when ``Q`` has infinite mass.
    """
    x = d.x
    p = d.values
    ok = _support(d)
    expo = -x**2 - 2.0 * pot.evaluate(x)
    top = expo.max()
    log_Z = top + np.log(np.dot(d.weights, np.exp(expo - top)))
    integrand = np.zeros_like(p)
    integrand[ok] = p[ok] * (np.log(p[ok]) - expo[ok] + log_Z)
    h_ref = float(np.dot(d.weights, integrand))
    quad = d.integrate(x**2)
    return SigmaFiniteDecomposition(h_ref, quad, float(log_Z), h_ref - quad - float(log_Z))


@dataclass
class FlowDiagnostics:
    """Per-snapshot information functionals of a flow."""

    t: np.ndarray
    H: np.ndarray
    I: np.ndarray
    F: np.ndarray
    dHdt_fd: np.ndarray
    extra: dict = field(default_factory=dict)

    def to_csv(self, path) -> None:
        header = ["t", "H", "I", "F", "dHdt_fd"] + list(self.extra)
        cols = [self.t, self.H, self.I, self.F, self.dHdt_fd] + [self.extra[k] for k in self.extra]
        write_columns(path, header, cols)


def flow_diagnostics(flow, stride: int = 1) -> FlowDiagnostics:
    """Entropy, Fisher information and free energy along a :class:`~ottolab.pde.FlowSnapshotSeries`."""
    idx = np.arange(0, len(flow.times), stride)
    t = flow.times[idx]
    H = np.array([relative_entropy(flow.state(i), flow.potential) for i in idx])
    I = np.array([relative_fisher_information(flow.state(i), flow.potential) for i in idx])
    F = np.array([free_energy(flow.state(i), flow.potential) for i in idx])
    dH = np.gradient(H, t) if t.size > 2 else np.full_like(H, np.nan)
    return FlowDiagnostics(t, H, I, F, dH)
