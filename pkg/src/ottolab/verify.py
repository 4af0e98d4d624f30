"""
Theorem-level checks assembled from the flow, transport and functional layers.

Every check returns :class:`VerificationRecord` objects. ``kind`` says how ``lhs`` and
``rhs`` are compared:

``rel``  ``|lhs - rhs| <= tolerance * |rhs|`` (absolute ``tolerance`` when ``rhs`` vanishes)
``abs``  ``|lhs - rhs| <= tolerance``
``le``   ``lhs <= rhs + tolerance``
``ge``   ``lhs >= rhs - tolerance``
``gt``   ``lhs > rhs``
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.stats import ks_2samp

from .functionals import likelihood_score, relative_entropy, relative_fisher_information
from .measure import GridDensity, from_samples, gibbs, l1_distance, moment, variance, write_rows
from .pde import FlowSnapshotSeries
from .potential import Perturbation, Potential
from .transport import (geodesic_entropy_difference_quotient, geodesic_entropy_slope,
                        metric_derivative, wasserstein2)

ZERO_SCALE = 1e-8
RECORD_HEADER = ["name", "context", "lhs", "rhs", "kind", "tolerance", "pass", "note"]


@dataclass(frozen=True)
class VerificationRecord:
    name: str
    context: str
    lhs: float
    rhs: float
    tolerance: float
    kind: str = "rel"
    passed: bool = False
    note: str = ""

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.kind not in ("rel", "abs", "le", "ge", "gt"):
            raise ValueError(f"unknown comparison kind {self.kind}")

    @property
    def error(self) -> float:
        d = abs(self.lhs - self.rhs)
        if self.kind == "rel" and abs(self.rhs) > ZERO_SCALE:
            return d / abs(self.rhs)
        return d

    def row(self) -> list:
        return [self.name, self.context, self.lhs, self.rhs, self.kind, self.tolerance,
                self.passed, self.note]


def record(name, context, lhs, rhs, tolerance, kind="rel", note="") -> VerificationRecord:
    """Build a record and evaluate its pass flag."""
    lhs, rhs = float(lhs), float(rhs)
    finite = np.isfinite(lhs) and np.isfinite(rhs)
    if not finite:
        ok = False
    elif kind == "rel":
        scale = abs(rhs) if abs(rhs) > ZERO_SCALE else 1.0
        ok = abs(lhs - rhs) <= tolerance * scale
    elif kind == "abs":
        ok = abs(lhs - rhs) <= tolerance
    elif kind == "le":
        ok = lhs <= rhs + tolerance
    elif kind == "ge":
        ok = lhs >= rhs - tolerance
    else:
        ok = lhs > rhs
    return VerificationRecord(name, str(context), lhs, rhs, tolerance, kind, bool(ok), note)


def write_records(path, records: Iterable[VerificationRecord]) -> None:
    write_rows(path, RECORD_HEADER, [r.row() for r in records])


def all_passed(records: Iterable[VerificationRecord]) -> bool:
    return all(r.passed for r in records)


# -- helpers -------------------------------------------------------------------------------

def entropy_series(flow: FlowSnapshotSeries) -> np.ndarray:
    return np.array([relative_entropy(flow.state(i), flow.potential) for i in range(len(flow))])


def fisher_series(flow: FlowSnapshotSeries) -> np.ndarray:
    return np.array([relative_fisher_information(flow.state(i), flow.potential) for i in range(len(flow))])


def default_times(flow: FlowSnapshotSeries, n: int = 10) -> list[float]:
    """``n`` interior snapshot times, evenly spread over the flow interval."""
    targets = np.linspace(flow.t0, flow.t_end, n + 2)[1:-1]
    idx = sorted({int(np.argmin(np.abs(flow.times - t))) for t in targets})
    idx = [i for i in idx if 0 < i < len(flow) - 1]
    return [float(flow.times[i]) for i in idx]


def _richardson(q_h: float, q_2h: float) -> float:
    """Cancel the O(h) term of a one-sided difference quotient."""
    return 2.0 * q_h - q_2h


# -- Fokker-Planck flow checks -------------------------------------------------------------

def verify_de_bruijn(flow: FlowSnapshotSeries, times: Optional[Sequence[float]] = None,
                     rel_tol: float = 0.02, include_start: bool = True) -> list[VerificationRecord]:
    """
    Entropy slope against ``-I/2``: centered quotients at interior snapshots, a
    Richardson-extrapolated one-sided quotient at the start, and the integrated identity.
    """
    if flow.perturbation is not None:
        raise ValueError("de Bruijn checks need an unperturbed flow")
    H = entropy_series(flow)
    I = fisher_series(flow)
    t = flow.times
    recs = []
    if include_start and len(flow) >= 3:
        q1 = (H[1] - H[0]) / (t[1] - t[0])
        q2 = (H[2] - H[0]) / (t[2] - t[0])
        recs.append(record("de_bruijn", f"t={t[0]:.6g}", _richardson(q1, q2), -0.5 * I[0], rel_tol,
                           note="one-sided, Richardson"))
    for tt in default_times(flow) if times is None else times:
        i = flow.index_of(tt)
        if not 0 < i < len(flow) - 1:
            raise ValueError(f"t={tt} is not an interior snapshot")
        slope = (H[i + 1] - H[i - 1]) / (t[i + 1] - t[i - 1])
        recs.append(record("de_bruijn", f"t={t[i]:.6g}", slope, -0.5 * I[i], rel_tol, note="centered"))
    integral = -0.5 * float(np.trapezoid(I, t))
    recs.append(record("de_bruijn_integral", f"[{t[0]:.6g},{t[-1]:.6g}]", H[-1] - H[0], integral,
                       rel_tol, note="trapezoid in time"))
    return recs


def verify_wasserstein_slope(flow: FlowSnapshotSeries, times: Optional[Sequence[float]] = None,
                             rel_tol: float = 0.01, include_start: bool = True,
                             h: Optional[float] = None) -> list[VerificationRecord]:
    """
    Metric derivative against ``sqrt(I)/2``, and the entropy-per-distance slope at ``t0``
    against ``-sqrt(I)``.
    """
    I = fisher_series(flow)
    H = entropy_series(flow)
    t = flow.times
    h = flow.spacing if h is None else h
    recs = []
    if include_start and len(flow) >= 3:
        p0 = flow.state(0)
        w1 = wasserstein2(flow.state(1), p0) / (t[1] - t[0])
        w2 = wasserstein2(flow.state(2), p0) / (t[2] - t[0])
        recs.append(record("wasserstein_slope", f"t={t[0]:.6g}", _richardson(w1, w2), 0.5 * np.sqrt(I[0]),
                           rel_tol, note="one-sided, Richardson"))
        k = max(1, int(round(1e-3 / flow.spacing)))
        ratio = (H[k] - H[0]) / max(wasserstein2(flow.state(k), p0), 1e-300)
        ratio2 = (H[2 * k] - H[0]) / max(wasserstein2(flow.state(2 * k), p0), 1e-300)
        rhs = -np.sqrt(I[0])
        if abs(rhs) > ZERO_SCALE:
            recs.append(record("entropy_distance_slope", f"t={t[0]:.6g}", _richardson(ratio, ratio2), rhs,
                               rel_tol, note=f"h={t[k] - t[0]:.3g}, Richardson"))
    for tt in default_times(flow) if times is None else times:
        i = flow.index_of(tt)
        md = metric_derivative(flow, t[i], h)
        recs.append(record("wasserstein_slope", f"t={t[i]:.6g}", md, 0.5 * np.sqrt(I[i]), rel_tol,
                           kind="rel" if I[i] > 1e-12 else "abs", note="centered"))
    return recs


def verify_steepest_descent(flow: FlowSnapshotSeries, pflow: FlowSnapshotSeries, pert: Perturbation,
                            t0: Optional[float] = None, rel_tol: float = 0.03,
                            ibp_tol: float = 1e-5) -> list[VerificationRecord]:
    """
    Perturbed entropy rate, perturbed ``W_2`` rate, slope difference and its sign, and the
    integration-by-parts identity, all at the branching time ``t0``.
    """
    if pflow.perturbation != pert:
        raise ValueError("pflow does not carry the given perturbation")
    t0 = flow.t0 if t0 is None else t0
    i0 = flow.index_of(t0)
    j0 = pflow.index_of(t0)
    d = flow.state(i0)
    if not np.allclose(d.values, pflow.state(j0).values, atol=1e-12):
        raise ValueError("flows differ at t0")
    pot = flow.potential
    x = d.x
    a = likelihood_score(d, pot)
    _, b, db = pert.fields(x)
    ip = lambda f, g: d.integrate(f * g)
    c = a + 2 * b
    norm_a, norm_c = np.sqrt(ip(a, a)), np.sqrt(ip(c, c))
    ctx = f"t={t0:.6g}"
    recs = []

    def rates(fl, j):
        H0 = relative_entropy(fl.state(j), pot)
        q = []
        w = []
        for k in (1, 2):
            dtk = fl.times[j + k] - fl.times[j]
            q.append((relative_entropy(fl.state(j + k), pot) - H0) / dtk)
            w.append(wasserstein2(fl.state(j + k), fl.state(j)) / dtk)
        return _richardson(*q), _richardson(*w)

    dH_b, dW_b = rates(pflow, j0)
    dH, dW = rates(flow, i0)
    recs.append(record("steepest_descent_entropy_rate", ctx, dH_b, -0.5 * ip(a, c), rel_tol))
    if norm_c <= ZERO_SCALE:
        recs.append(record("steepest_descent_degenerate", ctx, norm_c, 0.0, 1.0, kind="abs",
                           note="a + 2b vanishes; ratio records skipped"))
    else:
        recs.append(record("steepest_descent_w2_rate", ctx, dW_b, 0.5 * norm_c, rel_tol))
        diff_q = norm_a - ip(a, c) / norm_c
        diff_fd = dH_b / dW_b - dH / dW
        recs.append(record("steepest_descent_slope_difference", ctx, diff_fd, diff_q, rel_tol,
                           note="finite differences vs quadrature"))
        recs.append(record("steepest_descent_slope_difference_nonneg", ctx, diff_q, 0.0, 1e-9,
                           kind="ge", note="Cauchy-Schwarz"))
    recs.append(record("steepest_descent_ibp", ctx, d.integrate(db - 2 * pot.gradient(x) * b), -ip(a, b),
                       ibp_tol, kind="abs"))
    return recs


def verify_hwi(d0: GridDensity, d1: GridDensity, pot: Potential, kappa: Optional[float] = None,
               fd_step: float = 1e-3) -> list[VerificationRecord]:
    """
    HWI chain ``H0 - H1 <= -<a0, gamma> - k W^2/2 <= W sqrt(I0) - k W^2/2`` and the
    geodesic slope against its difference quotient.
    """
    kappa = pot.curvature_bound if kappa is None else kappa
    if np.any(pot.hessian(d0.x) < kappa - 1e-12):
        raise ValueError(f"Hess(Psi) >= {kappa} fails on the grid")
    H0, H1 = relative_entropy(d0, pot), relative_entropy(d1, pot)
    I0 = relative_fisher_information(d0, pot)
    W = wasserstein2(d0, d1)
    slope = geodesic_entropy_slope(d0, d1, pot)
    sharp = -slope - 0.5 * kappa * W * W
    std = W * np.sqrt(I0) - 0.5 * kappa * W * W
    fd = geodesic_entropy_difference_quotient(d0, d1, pot, fd_step)
    ctx = f"kappa={kappa:.6g}"
    tol_fd = max(2e-3, 0.02 * abs(slope))
    return [
        record("hwi_sharpened", ctx, H0 - H1, sharp, 1e-6, kind="le"),
        record("hwi_standard", ctx, sharp, std, 1e-6, kind="le"),
        record("hwi_geodesic_slope_fd", ctx, fd, slope, tol_fd, kind="abs", note=f"t={fd_step:g}"),
    ]


def verify_talagrand_lsi(d: GridDensity, pot: Potential) -> list[VerificationRecord]:
    """``W2^2 <= (2/k) H`` and ``H <= I / (2k)`` against the Gibbs probability measure."""
    kappa = pot.curvature_bound
    if not kappa > 0:
        raise ValueError("Talagrand and log-Sobolev checks need kappa > 0")
    mass = pot.mass()
    if abs(mass - 1.0) > 1e-6:
        raise ValueError(f"Gibbs measure has mass {mass}, not a probability measure")
    q = gibbs(pot, d.x_min, d.x_max, d.n)
    H = relative_entropy(d, pot)
    I = relative_fisher_information(d, pot)
    W = wasserstein2(d, q)
    ctx = f"kappa={kappa:.6g}"
    return [
        record("talagrand", ctx, W * W, 2.0 / kappa * H, 1e-6, kind="le"),
        record("log_sobolev", ctx, H, I / (2.0 * kappa), 1e-6, kind="le"),
    ]


def verify_exponential_decay(flow: FlowSnapshotSeries, kappa: Optional[float] = None,
                             tol: float = 1e-6) -> VerificationRecord:
    """Largest excess of ``H(t)`` over ``H(t0) exp(-k (t - t0))`` along the snapshots."""
    kappa = flow.potential.curvature_bound if kappa is None else kappa
    if not kappa > 0:
        raise ValueError("exponential decay needs kappa > 0")
    H = entropy_series(flow)
    t = flow.times
    ctx = f"kappa={kappa:.6g}"
    if H[0] <= 0:
        return record("exp_decay", ctx, H[0], 0.0, tol, kind="le", note="vacuous: H(t0) <= 0")
    env = H[0] * np.exp(-kappa * (t - t[0]))
    excess = float(np.max(H - env))
    note = ""
    pos = H > 1e-12
    if pos.sum() >= 3:
        rate = -np.polyfit(t[pos], np.log(H[pos]), 1)[0]
        note = f"fitted decay rate {rate:.6g}"
    return record("exp_decay", ctx, excess, 0.0, tol, kind="le", note=note)


def verify_time_reversal(flow: FlowSnapshotSeries, reversed_paths, checkpoints: Optional[Sequence[float]] = None,
                         l1_tol: float = 0.05, mean_tol: float = 0.02,
                         var_tol: float = 0.05) -> list[VerificationRecord]:
    """Reversed-ensemble marginals at ``s = T - t`` against the flow at ``t``."""
    if reversed_paths.orientation != "reversed":
        raise ValueError("expected a reversed ensemble")
    T, t0 = flow.t_end, flow.t0
    if checkpoints is None:
        checkpoints = [t0 + f * (T - t0) for f in (0.05, 0.25, 0.5, 0.75)]
    recs = []
    for t in checkpoints:
        i = flow.index_of(t)
        t = float(flow.times[i])
        xs = reversed_paths.at(T - t)
        d = flow.state(i)
        kde = from_samples(xs, d.x_min, d.x_max, d.n)
        ctx = f"t={t:.6g}"
        recs.append(record("time_reversal_l1", ctx, l1_distance(kde, d), 0.0, l1_tol, kind="abs"))
        recs.append(record("time_reversal_mean", ctx, float(np.mean(xs)), moment(d, 1), mean_tol, kind="abs"))
        recs.append(record("time_reversal_var", ctx, float(np.var(xs, ddof=1)), variance(d), var_tol, kind="abs"))
    return recs


def verify_stationary_reversal(forward_paths, reversed_paths, checkpoints: Optional[Sequence[float]] = None,
                               lag: float = 0.05, alpha: float = 1e-3,
                               z_threshold: float = 4.0) -> list[VerificationRecord]:
    """
    Reversibility: read on its own clock, the reversed ensemble of a stationary diffusion
    has the law of the forward one.

    At clock value ``s`` the forward states ``X(t0 + s)`` and reversed states ``Y(s)`` are
    compared by a two-sample Kolmogorov-Smirnov test (p-value at least ``alpha``), and the
    lag products ``X(t0+s) X(t0+s+lag)`` and ``Y(s) Y(s+lag)`` by a two-sample Z statistic.
    A non-stationary flow fails because its marginals drift in opposite directions.
    """
    if forward_paths.orientation != "forward" or reversed_paths.orientation != "reversed":
        raise ValueError("expected one forward and one reversed ensemble")
    T = reversed_paths.horizon
    t0 = float(forward_paths.times[0])
    if abs(forward_paths.times[-1] - T) > 1e-9:
        raise ValueError("ensembles cover different horizons")
    span = T - t0
    if checkpoints is None:
        checkpoints = [f * span for f in (0.1, 0.5, 0.9)]
    dt = forward_paths.dt
    k = max(1, int(round(lag / dt)))
    recs = []
    for s in checkpoints:
        s = dt * round(s / dt)
        ctx = f"s={s:.6g}"
        xf, yr = forward_paths.at(t0 + s), reversed_paths.at(s)
        p = float(ks_2samp(xf, yr).pvalue)
        recs.append(record("stationary_reversal_ks", ctx, p, alpha, 1e-12, kind="ge", note="p-value"))
        if s + k * dt <= span + 1e-9:
            pf = xf * forward_paths.at(t0 + s + k * dt)
            pr = yr * reversed_paths.at(s + k * dt)
            se = np.sqrt(np.var(pf, ddof=1) / pf.size + np.var(pr, ddof=1) / pr.size)
            z = float((np.mean(pf) - np.mean(pr)) / se)
            recs.append(record("stationary_reversal_lag", f"{ctx} lag={k * dt:.6g}", z, 0.0,
                               z_threshold, kind="abs", note="two-sample Z"))
    return recs
