"""
Deterministic evolution on a uniform grid.

``solve_forward`` integrates the Fokker-Planck equation

    dp/dt = d/dx[(Psi' + beta) p] + (1/2) d^2p/dx^2

with an exponentially fitted (Chang-Cooper / Scharfetter-Gummel) finite-volume flux and
implicit Euler in time. The fitting uses exact differences of the drift potential
``U = Psi + B`` between neighbouring nodes, so the discrete Gibbs vector
``exp(-2 U(x_i))`` is an exact stationary state of the discrete operator.

``solve_backward_kolmogorov`` integrates the equation for ``l = p / q`` written in the
self-adjoint form ``dl/dt = q^{-1} d/dx[q (l'/2 + beta l)]`` with a plain conservative
central scheme. It shares no code path with the forward solver, which makes the two a
meaningful cross-check.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .measure import GridDensity, log_density, read_columns, trapezoid_weights, write_columns
from .potential import Perturbation, Potential, drift_potential


class DiscretizationError(RuntimeError):
    """A time step produced a negative density value beyond round-off."""


def _bernoulli(z: np.ndarray) -> np.ndarray:
    """``z / (exp(z) - 1)`` with the removable singularity at 0."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-10
    zs = np.where(small, 1.0, z)
    return np.where(small, 1.0 - 0.5 * z, zs / np.expm1(zs))


def fokker_planck_operator(x: np.ndarray, U: np.ndarray) -> sparse.csc_matrix:
    """
    Tridiagonal generator ``A`` with ``dp/dt = A p`` and zero-flux boundaries.

    Rows are divided by the trapezoid weights, so ``weights @ A = 0`` (mass conservation).
    """
    n = x.size
    h = x[1] - x[0]
    w = trapezoid_weights(n, h)
    delta = -2.0 * np.diff(U)
    bp = _bernoulli(delta) / (2 * h)   # weight of p_{i+1} in J_{i+1/2}
    bm = _bernoulli(-delta) / (2 * h)  # weight of p_i in J_{i+1/2}
    # J_{i+1/2} = -(bp_i p_{i+1} - bm_i p_i); dp_i/dt = (J_{i-1/2} - J_{i+1/2}) / w_i
    main = np.zeros(n)
    main[:-1] -= bm
    main[1:] -= bp
    upper = bp.copy()
    lower = bm.copy()
    A = sparse.diags([lower, main, upper], [-1, 0, 1], shape=(n, n), format="csr")
    return sparse.diags(1.0 / w) @ A


@dataclass
class FlowSnapshotSeries:
    """Densities of a Fokker-Planck flow at increasing times."""

    times: np.ndarray
    values: np.ndarray  # (len(times), n)
    x_min: float
    x_max: float
    potential: Potential
    perturbation: Optional[Perturbation] = None
    dt: float = float("nan")

    @property
    def t0(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n)

    @property
    def spacing(self) -> float:
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else float("inf")

    def __len__(self) -> int:
        return self.times.size

    def state(self, i: int) -> GridDensity:
        return GridDensity(self.x_min, self.x_max, self.values[i])

    @property
    def states(self) -> list[GridDensity]:
        return [self.state(i) for i in range(len(self))]

    def index_of(self, t: float, tol: float = 1e-6) -> int:
        """Index of the snapshot at time ``t``; raises if ``t`` is not a snapshot time."""
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > tol * max(self.spacing, 1e-12):
            raise ValueError(f"t={t} is not a snapshot time (nearest {self.times[i]})")
        return i

    def at(self, t: float) -> GridDensity:
        return self.state(self.index_of(t))

    def save(self, directory) -> None:
        """One CSV per snapshot plus ``index.csv`` listing times and file names."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        names = []
        for i in range(len(self)):
            name = f"snapshot_{i:05d}.csv"
            self.state(i).to_csv(d / name)
            names.append(name)
        write_columns(d / "index.csv", ["t", "file"], [self.times, names])

    @classmethod
    def load(cls, directory, potential: Potential, perturbation=None) -> "FlowSnapshotSeries":
        d = Path(directory)
        with open(d / "index.csv") as fh:
            rows = [ln.strip().split(",") for ln in fh.readlines()[1:] if ln.strip()]
        times = np.array([float(r[0]) for r in rows])
        vals = []
        for _, name in rows:
            cols = read_columns(d / name)
            vals.append(cols["value"])
            x = cols["x"]
        return cls(times, np.array(vals), float(x[0]), float(x[-1]), potential, perturbation)


def _steps(t0: float, t_end: float, dt: float) -> tuple[int, float]:
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not t_end >= t0:
        raise ValueError("t_end must not precede t0")
    k = int(round((t_end - t0) / dt))
    if k == 0:
        return 0, dt
    return k, (t_end - t0) / k


def solve_forward(pot: Potential, init: GridDensity, t0: float, t_end: float, dt: float = 1e-4,
                  pert: Optional[Perturbation] = None, save_stride: int = 10) -> FlowSnapshotSeries:
    """
    Integrate the (optionally perturbed) Fokker-Planck equation from ``init`` at ``t0``.

    The step is adjusted so that ``t_end - t0`` is an integer number of steps. Snapshots
    are stored every ``save_stride`` steps, always including both end points.
    """
    if abs(init.mass - 1.0) > 1e-6:
        raise ValueError(f"initial density has mass {init.mass}, expected 1")
    nsteps, dt = _steps(t0, t_end, dt)
    x = init.x
    A = fokker_planck_operator(x, drift_potential(pot, pert)(x))
    lu = splu((sparse.identity(init.n, format="csc") - dt * A).tocsc())
    p = np.array(init.values)
    times = [t0]
    saved = [p.copy()]
    for k in range(1, nsteps + 1):
        p = lu.solve(p)
        lo = p.min()
        if lo < -1e-12:
            raise DiscretizationError(f"negative density {lo:.3e} at step {k}")
        if lo < 0:
            np.maximum(p, 0.0, out=p)
        if k % save_stride == 0 or k == nsteps:
            times.append(t0 + k * dt)
            saved.append(p.copy())
    return FlowSnapshotSeries(np.array(times), np.array(saved), init.x_min, init.x_max,
                              pot, pert, dt)


def likelihood_ratio(d: GridDensity, pot: Potential) -> np.ndarray:
    """``p(x) exp(2 Psi(x))`` at the grid nodes."""
    return d.values * np.exp(2.0 * pot.evaluate(d.x))


def backward_kolmogorov_operator(x: np.ndarray, pot: Potential,
                                 pert: Optional[Perturbation] = None) -> sparse.csr_matrix:
    n = x.size
    h = x[1] - x[0]
    w = trapezoid_weights(n, h)
    xm = 0.5 * (x[1:] + x[:-1])
    psi0 = pot.evaluate(x).min()
    qm = np.exp(-2.0 * (pot.evaluate(xm) - psi0))
    qi = np.exp(-2.0 * (pot.evaluate(x) - psi0))
    bm = pert.beta(xm) if pert is not None else np.zeros_like(xm)
    # G_{i+1/2} = q_{i+1/2} [ (l_{i+1} - l_i) / (2h) + beta_{i+1/2} (l_i + l_{i+1}) / 2 ]
    c_up = qm * (0.5 / h + 0.5 * bm)
    c_lo = qm * (-0.5 / h + 0.5 * bm)
    # dl_i/dt = (G_{i+1/2} - G_{i-1/2}) / (q_i w_i)
    main = np.zeros(n)
    main[:-1] += c_lo
    main[1:] -= c_up
    upper = c_up
    lower = -c_lo
    A = sparse.diags([lower, main, upper], [-1, 0, 1], shape=(n, n), format="csr")
    return sparse.diags(1.0 / (qi * w)) @ A


@dataclass
class RatioSeries:
    times: np.ndarray
    values: np.ndarray
    x_min: float
    x_max: float


def solve_backward_kolmogorov(pot: Potential, ell0, t0: float, t_end: float, dt: float = 1e-4,
                              pert: Optional[Perturbation] = None, save_stride: int = 10,
                              x_min: float = -10.0, x_max: float = 10.0) -> RatioSeries:
    """
    Evolve the likelihood ratio ``l = p / q`` directly.

    ``ell0`` is an array of grid values on ``[x_min, x_max]``.
    """
    ell = np.array(ell0, dtype=float)
    x = np.linspace(x_min, x_max, ell.size)
    nsteps, dt = _steps(t0, t_end, dt)
    A = backward_kolmogorov_operator(x, pot, pert)
    lu = splu((sparse.identity(ell.size, format="csc") - dt * A).tocsc())
    times, saved = [t0], [ell.copy()]
    for k in range(1, nsteps + 1):
        ell = lu.solve(ell)
        if ell.min() < -1e-12 * max(1.0, np.abs(ell).max()):
            raise DiscretizationError(f"negative likelihood ratio at step {k}")
        if k % save_stride == 0 or k == nsteps:
            times.append(t0 + k * dt)
            saved.append(ell.copy())
    return RatioSeries(np.array(times), np.array(saved), x_min, x_max)


@dataclass
class PerturbationRatio:
    """``Y(t, x) = p_beta(t, x) / p(t, x)`` and its linear-deviation constants."""

    times: np.ndarray
    values: np.ndarray
    window: np.ndarray
    deviation_rate: np.ndarray  # sup_window |Y - 1| / (t - t0), nan at t0


def perturbation_ratio(flow: FlowSnapshotSeries, pflow: FlowSnapshotSeries,
                       window_mass: float = 0.99) -> PerturbationRatio:
    """
    Pointwise ratio of perturbed to unperturbed densities.

    The central window is the smallest node interval holding ``window_mass`` of the
    initial density.
    """
    if (flow.n != pflow.n or not np.isclose(flow.x_min, pflow.x_min)
            or not np.isclose(flow.x_max, pflow.x_max)):
        raise ValueError("flows live on different grids")
    if flow.times.size != pflow.times.size or not np.allclose(flow.times, pflow.times):
        raise ValueError("flows have different snapshot times")
    if not np.allclose(flow.values[0], pflow.values[0], atol=1e-14):
        raise ValueError("flows do not share the initial condition")
    floor = 1e-300
    Y = pflow.values / np.maximum(flow.values, floor)
    window = central_window(flow.state(0), window_mass)
    dev = np.abs(Y[:, window] - 1.0).max(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        rate = dev / (flow.times - flow.t0)
    rate[0] = np.nan
    return PerturbationRatio(flow.times, Y, window, rate)


def central_window(d: GridDensity, mass: float = 0.99) -> np.ndarray:
    """Boolean mask of nodes between the (1-mass)/2 and (1+mass)/2 quantiles."""
    F = d.cdf()
    lo, hi = 0.5 * (1 - mass), 0.5 * (1 + mass)
    return (F >= lo) & (F <= hi)


class LogDensityInterpolant:
    r"""
    Space-time interpolant of :math:`\log p(t, x)` for a snapshot series.

    Cubic Hermite in space using the grid score as nodal slopes, linear in time between
    snapshots. Outside the grid the tail continuation of :func:`ottolab.measure.log_density`
    (affine score) is used.
    """

    def __init__(self, flow: FlowSnapshotSeries, floor: float = 1e-14):
        self.flow = flow
        self.times = flow.times
        self.x_min, self.h = flow.x_min, (flow.x_max - flow.x_min) / (flow.n - 1)
        self.n = flow.n
        self._cache: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
        self.floor = floor

    def _nodal(self, i: int):
        got = self._cache.get(i)
        if got is None:
            logp, s = log_density(self.flow.state(i), self.floor)
            # tail slopes of the affine score continuation, for evaluation beyond the grid
            ds_lo = (s[1] - s[0]) / self.h
            ds_hi = (s[-1] - s[-2]) / self.h
            got = (logp, s, np.array([ds_lo, ds_hi]))
            if len(self._cache) > 8:
                self._cache.pop(next(iter(self._cache)))
            self._cache[i] = got
        return got

    def _eval_snapshot(self, i: int, x: np.ndarray, deriv: int):
        logp, s, tail = self._nodal(i)
        h = self.h
        pos = (x - self.x_min) / h
        j = np.clip(np.floor(pos).astype(np.int64), 0, self.n - 2)
        u = np.clip(pos - j, 0.0, 1.0)
        f0, f1 = logp[j], logp[j + 1]
        d0, d1 = s[j] * h, s[j + 1] * h
        if deriv == 0:
            h00 = (1 + 2 * u) * (1 - u) ** 2
            h10 = u * (1 - u) ** 2
            h01 = u * u * (3 - 2 * u)
            h11 = u * u * (u - 1)
            out = h00 * f0 + h10 * d0 + h01 * f1 + h11 * d1
        else:
            g00 = 6 * u * u - 6 * u
            g10 = 3 * u * u - 4 * u + 1
            g01 = -g00
            g11 = 3 * u * u - 2 * u
            out = (g00 * f0 + g10 * d0 + g01 * f1 + g11 * d1) / h
        lo = x < self.x_min
        hi = x > self.x_min + (self.n - 1) * h
        if lo.any() or hi.any():
            for mask, k, sl in ((lo, 0, 0), (hi, -1, 1)):
                if not mask.any():
                    continue
                dx = x[mask] - (self.x_min + (0 if k == 0 else (self.n - 1) * h))
                if deriv == 0:
                    out[mask] = logp[k] + s[k] * dx + 0.5 * tail[sl] * dx * dx
                else:
                    out[mask] = s[k] + tail[sl] * dx
        return out

    def _bracket(self, t: float):
        times = self.times
        if t < times[0] - 1e-12 or t > times[-1] + 1e-12:
            raise ValueError(f"time {t} outside the flow interval [{times[0]}, {times[-1]}]")
        k = int(np.searchsorted(times, t))
        if k < times.size and abs(times[k] - t) <= 1e-9 * max(1.0, abs(t)):
            return k, k, 0.0
        if k > 0 and abs(times[k - 1] - t) <= 1e-9 * max(1.0, abs(t)):
            return k - 1, k - 1, 0.0
        k = min(max(k, 1), times.size - 1)
        lam = (t - times[k - 1]) / (times[k] - times[k - 1])
        return k - 1, k, lam

    def _eval(self, t: float, x, deriv: int):
        x = np.asarray(x, dtype=float)
        a, b, lam = self._bracket(t)
        fa = self._eval_snapshot(a, x, deriv)
        if a == b or lam == 0.0:
            return fa
        return (1 - lam) * fa + lam * self._eval_snapshot(b, x, deriv)

    def log_ell_and_grad(self, t: float, x):
        """``(log l, (log l)')`` at ``(t, x)`` in one pass."""
        x = np.asarray(x, dtype=float)
        a, b, lam = self._bracket(t)
        v = self._eval_snapshot(a, x, 0)
        g = self._eval_snapshot(a, x, 1)
        if a != b and lam != 0.0:
            v = (1 - lam) * v + lam * self._eval_snapshot(b, x, 0)
            g = (1 - lam) * g + lam * self._eval_snapshot(b, x, 1)
        pot = self.flow.potential
        return v + 2.0 * pot.evaluate(x), g + 2.0 * pot.gradient(x)

    def log_p(self, t: float, x):
        return self._eval(t, x, 0)

    def score(self, t: float, x):
        return self._eval(t, x, 1)

    def log_ell(self, t: float, x):
        return self.log_p(t, x) + 2.0 * self.flow.potential.evaluate(x)

    def grad_log_ell(self, t: float, x):
        return self.score(t, x) + 2.0 * self.flow.potential.gradient(x)
