"""
Euler-Maruyama simulation of the Langevin diffusion and of its time reversal.

Paths are simulated in fixed blocks of ``BLOCK`` paths. Block ``b`` draws from its own
Philox stream keyed by ``(seed, b)``, so the ensemble is bitwise identical for any
number of worker threads.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .measure import GridDensity, write_rows
from .pde import FlowSnapshotSeries, LogDensityInterpolant
from .potential import Perturbation, Potential, drift_gradient
from .transport import quantile_function

BLOCK = 8192

Sampler = Callable[[np.random.Generator, int], np.ndarray]


def worker_count() -> int:
    """Thread cap from ``OTTO_THREADS`` (default: CPU count)."""
    env = os.environ.get("OTTO_THREADS")
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


def block_rng(seed: int, block: int, stream: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(stream, block))
    return np.random.Generator(np.random.Philox(ss))


# -- initial laws --------------------------------------------------------------------------

def gaussian_sampler(mean: float, var: float) -> Sampler:
    if not var > 0:
        raise ValueError("variance must be positive")
    sd = float(np.sqrt(var))
    return lambda rng, m: mean + sd * rng.standard_normal(m)


def point_mass_sampler(x0: float) -> Sampler:
    return lambda rng, m: np.full(m, float(x0))


def grid_sampler(d: GridDensity) -> Sampler:
    """Inverse-CDF sampling of the piecewise-linear interpolant of ``d``."""
    return lambda rng, m: quantile_function(d, rng.random(m))


# -- ensembles -----------------------------------------------------------------------------

@dataclass
class PathEnsemble:
    """
    Simulated paths on a shared uniform time grid.

    ``data`` has shape ``(K+1, m)`` (time-major, so one time slice is contiguous);
    :attr:`states` exposes the ``(m, K+1)`` view. For a reversed ensemble ``times`` holds
    the reversed clock ``s`` and :attr:`forward_times` the matching ``T - s``.
    """

    times: np.ndarray
    data: np.ndarray
    orientation: str
    seed: int
    dt: float
    potential: Potential
    perturbation: Optional[Perturbation] = None
    horizon: float = float("nan")
    meta: dict = field(default_factory=dict)

    @property
    def states(self) -> np.ndarray:
        return self.data.T

    @property
    def m_paths(self) -> int:
        return self.data.shape[1]

    @property
    def forward_times(self) -> np.ndarray:
        if self.orientation == "forward":
            return self.times
        return self.horizon - self.times

    def at(self, t: float) -> np.ndarray:
        """States at clock time ``t`` (the ensemble's own clock)."""
        k = int(round((t - self.times[0]) / self.dt))
        if k < 0 or k >= self.times.size or abs(self.times[k] - t) > 1e-9 + 1e-6 * self.dt:
            raise ValueError(f"t={t} is not on the ensemble time grid")
        return self.data[k]

    def second_moments(self) -> np.ndarray:
        return np.mean(self.data * self.data, axis=1)

    def to_csv(self, path, save_stride: int = 10) -> None:
        idx = np.arange(0, self.times.size, save_stride)
        if idx[-1] != self.times.size - 1:
            idx = np.append(idx, self.times.size - 1)
        header = ["path"] + [f"t={self.times[k]:.10g}" for k in idx]
        sub = self.data[idx]
        rows = [[i] + list(sub[:, i]) for i in range(self.m_paths)]
        comments = {"seed": self.seed, "dt": self.dt, "orientation": self.orientation,
                    "m_paths": self.m_paths, "horizon": self.horizon}
        comments.update(self.potential.to_config())
        if self.perturbation is not None:
            comments.update(self.perturbation.to_config())
        write_rows(path, header, rows, comments)


def _n_steps(t0: float, T: float, dt: float) -> int:
    if not 0 < dt <= 1e-2:
        raise ValueError("dt must lie in (0, 1e-2]")
    if T < t0:
        raise ValueError("T must not precede t0")
    return int(round((T - t0) / dt))


def _run_blocks(m_paths: int, work: Callable[[int, int, int], None]) -> None:
    blocks = [(b, b * BLOCK, min((b + 1) * BLOCK, m_paths)) for b in range((m_paths + BLOCK - 1) // BLOCK)]
    nw = min(worker_count(), len(blocks))
    if nw <= 1:
        for blk in blocks:
            work(*blk)
        return
    with ThreadPoolExecutor(nw) as ex:
        list(ex.map(lambda a: work(*a), blocks))


def simulate_forward(pot: Potential, init_sampler: Sampler, t0: float, T: float, dt: float,
                     m_paths: int, seed: int, pert: Optional[Perturbation] = None) -> PathEnsemble:
    """
    Euler-Maruyama for ``dX = -(Psi' + beta)(X) dt + dW``.

    The step is adjusted to divide ``T - t0`` exactly.
    """
    if m_paths < 1:
        raise ValueError("m_paths must be positive")
    K = _n_steps(t0, T, dt)
    if K > 0:
        dt = (T - t0) / K
    drift = drift_gradient(pot, pert)
    data = np.empty((K + 1, m_paths))
    sq = np.sqrt(dt)

    def work(b, lo, hi):
        rng = block_rng(seed, b)
        x = np.asarray(init_sampler(rng, hi - lo), dtype=float)
        data[0, lo:hi] = x
        for k in range(K):
            x = x - drift(x) * dt + sq * rng.standard_normal(hi - lo)
            data[k + 1, lo:hi] = x

    _run_blocks(m_paths, work)
    times = t0 + dt * np.arange(K + 1)
    return PathEnsemble(times, data, "forward", int(seed), dt, pot, pert, float(T))


def reversed_drift(p_interp: LogDensityInterpolant, pot: Potential, t: float, x,
                   pert: Optional[Perturbation] = None):
    """
    Drift of the time-reversed diffusion: ``(log p)'(t, x) + Psi'(x)`` (plus ``beta`` when
    the forward drift was perturbed), i.e. ``(log l)'(t, x) - Psi'(x)``.
    """
    out = p_interp.score(t, x) + pot.gradient(x)
    if pert is not None:
        out = out + pert.beta(x)
    return out


def simulate_reversed(flow: FlowSnapshotSeries, pot: Potential, dt: float, m_paths: int,
                      seed: int) -> PathEnsemble:
    """
    Euler-Maruyama in the reversed clock ``s``, started from ``p(T, .)``.

    The drift is evaluated at forward time ``T - s`` (left end of each reversed step).
    """
    T, t0 = flow.t_end, flow.t0
    K = _n_steps(t0, T, dt)
    if K > 0:
        dt = (T - t0) / K
    interp = LogDensityInterpolant(flow)
    pert = flow.perturbation
    final = flow.state(len(flow) - 1)
    data = np.empty((K + 1, m_paths))
    sq = np.sqrt(dt)

    blocks = [(b, b * BLOCK, min((b + 1) * BLOCK, m_paths)) for b in range((m_paths + BLOCK - 1) // BLOCK)]
    rngs = [block_rng(seed, b, stream=1) for b, _, _ in blocks]
    for (b, lo, hi), rng in zip(blocks, rngs):
        data[0, lo:hi] = quantile_function(final, rng.random(hi - lo))
    # time-major loop keeps the interpolant's snapshot cache warm
    for k in range(K):
        t = max(T - k * dt, t0)
        x = data[k]
        drift = reversed_drift(interp, pot, t, x, pert)
        nxt = data[k + 1]
        for (b, lo, hi), rng in zip(blocks, rngs):
            nxt[lo:hi] = x[lo:hi] + drift[lo:hi] * dt + sq * rng.standard_normal(hi - lo)
    s = dt * np.arange(K + 1)
    return PathEnsemble(s, data, "reversed", int(seed), dt, pot, pert, float(T),
                        meta={"t0": t0})
