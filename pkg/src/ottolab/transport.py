"""
Quadratic Wasserstein geometry on the line.

In one dimension the optimal coupling is the quantile coupling, so every quantity here
reduces to quantile functions of grid densities. Grid densities are read as piecewise
linear between nodes, which makes the CDF piecewise quadratic and the quantile function
available in closed form cell by cell.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator

from .measure import ABS_FLOOR, GridDensity, normalize
from .functionals import likelihood_score
from .potential import Potential

N_QUANTILES = 4096
U_CLIP = 1e-6


def quantile_function(d: GridDensity, u) -> np.ndarray:
    """
    Exact quantiles of the piecewise-linear interpolant of ``d``.

    ``u`` is measured against the trapezoid mass, so the map is exact for the same
    CDF that :meth:`GridDensity.cdf` tabulates at the nodes.
    """
    u = np.asarray(u, dtype=float)
    F = d.cdf()
    total = F[-1]
    r = np.clip(u, 0.0, 1.0) * total
    # rightmost cell whose left CDF value is <= r, skipping empty cells
    j = np.clip(np.searchsorted(F, r, side="right") - 1, 0, d.n - 2)
    h = d.h
    p = d.values
    a = (p[j + 1] - p[j]) / (2 * h)
    b = p[j]
    rr = np.maximum(r - F[j], 0.0)
    disc = np.sqrt(np.maximum(b * b + 4 * a * rr, 0.0))
    den = b + disc
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(den > 0, 2 * rr / den, 0.0)
    s = np.clip(s, 0.0, h)
    return d.x_min + j * h + s


@dataclass(frozen=True)
class QuantileRep:
    """Quantile function tabulated at midpoints of a uniform grid on ``[U_CLIP, 1 - U_CLIP]``."""

    u: np.ndarray
    values: np.ndarray

    @classmethod
    def of(cls, d: GridDensity, n_q: int = N_QUANTILES, clip: float = U_CLIP) -> "QuantileRep":
        u = clip + (np.arange(n_q) + 0.5) * (1 - 2 * clip) / n_q
        return cls(u, quantile_function(d, u))

    @property
    def du(self) -> float:
        return float(self.u[1] - self.u[0])


def wasserstein2(d1: GridDensity, d2: GridDensity, n_q: int = N_QUANTILES) -> float:
    """Midpoint-rule quantile integral for ``W_2``."""
    q1 = QuantileRep.of(d1, n_q)
    q2 = QuantileRep.of(d2, n_q)
    diff = q1.values - q2.values
    return float(np.sqrt(np.dot(diff, diff) * q1.du))


def brenier_map(d0: GridDensity, d1: GridDensity) -> tuple[np.ndarray, np.ndarray]:
    """
    Monotone map ``T = F1^{-1} o F0`` at the nodes of ``d0`` and the displacement ``T - id``.
    """
    F0 = d0.cdf()
    T = quantile_function(d1, F0 / F0[-1])
    T = np.maximum.accumulate(T)
    return T, T - d0.x


def displacement_interpolation(d0: GridDensity, d1: GridDensity, t: float) -> GridDensity:
    """
    Law of ``(1 - t) X0 + t T(X0)`` resampled on the grid of ``d0``.

    The interpolated quantile function is ``(1-t) Q0 + t Q1``; its inverse, the CDF, is
    interpolated by a monotone cubic and differentiated at the nodes.
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    if t == 0.0:
        return d0
    u = np.concatenate([d0.cdf() / d0.mass, d1.cdf() / d1.mass])
    u = np.unique(u[(u > 1e-14) & (u < 1 - 1e-14)])
    xt = (1 - t) * quantile_function(d0, u) + t * quantile_function(d1, u)
    if np.any(np.diff(xt) < -1e-12):
        raise ValueError("interpolated transport map is not monotone")
    keep = np.concatenate([[True], np.diff(xt) > 1e-13])
    xt, u = xt[keep], u[keep]
    cdf = PchipInterpolator(xt, u, extrapolate=False)
    x = d0.x
    dens = np.nan_to_num(cdf.derivative()(x), nan=0.0)
    return normalize(np.maximum(dens, 0.0), d0.x_min, d0.x_max)


def geodesic_entropy_slope(d0: GridDensity, d1: GridDensity, pot: Potential) -> float:
    """Right derivative at 0 of the relative entropy along the geodesic from ``d0`` to ``d1``."""
    _, gamma = brenier_map(d0, d1)
    a = likelihood_score(d0, pot)
    w = np.where(d0.values > ABS_FLOOR, a * gamma, 0.0)
    return d0.integrate(w)


def geodesic_entropy_difference_quotient(d0: GridDensity, d1: GridDensity, pot: Potential,
                                         t: float = 1e-3) -> float:
    """
    ``(H(P_t|Q) - H(P_0|Q)) / t`` along the geodesic, via the change of variables

        H(P_t|Q) - H(P_0|Q) = E_0[-log(1 + t gamma') + 2 (Psi(X + t gamma) - Psi(X))].
    """
    x = d0.x
    _, gamma = brenier_map(d0, d1)
    dg = np.gradient(gamma, d0.h)
    ok = d0.values > ABS_FLOOR
    jac = np.maximum(1.0 + t * dg, 1e-300)
    integrand = np.where(ok, -np.log(jac) + 2.0 * (pot.evaluate(x + t * gamma) - pot.evaluate(x)), 0.0)
    return d0.integrate(integrand) / t


def metric_derivative(flow, t0: float, h: float) -> float:
    """
    Difference quotient of ``W_2`` along a snapshot series.

    Centered ``W2(p(t0+h), p(t0-h)) / (2h)`` when both neighbours exist, otherwise the
    one-sided quotient on the available side.
    """
    dt_snap = flow.spacing
    if h < dt_snap * (1 - 1e-9):
        raise ValueError(f"h={h} is smaller than the snapshot spacing {dt_snap}")
    i0 = flow.index_of(t0)
    k = int(round(h / dt_snap))
    lo, hi = i0 - k, i0 + k
    n = len(flow)
    if lo >= 0 and hi < n:
        return wasserstein2(flow.state(hi), flow.state(lo)) / (flow.times[hi] - flow.times[lo])
    if hi < n:
        return wasserstein2(flow.state(hi), flow.state(i0)) / (flow.times[hi] - flow.times[i0])
    if lo >= 0:
        return wasserstein2(flow.state(i0), flow.state(lo)) / (flow.times[i0] - flow.times[lo])
    raise ValueError("flow too short for the requested step")


def w2_increment_rates(flow) -> np.ndarray:
    """``W2(p_{i+1}, p_{i-1}) / (t_{i+1} - t_{i-1})`` at interior snapshots, one-sided at the ends."""
    n = len(flow)
    out = np.empty(n)
    for i in range(n):
        lo, hi = max(i - 1, 0), min(i + 1, n - 1)
        out[i] = wasserstein2(flow.state(hi), flow.state(lo)) / (flow.times[hi] - flow.times[lo])
    return out
