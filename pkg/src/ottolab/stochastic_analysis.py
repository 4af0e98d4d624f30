"""
Trajectorial relative-entropy processes along simulated paths and statistical tests of
their martingale structure in the backwards filtration.

Conventions
-----------
Reversed time ``s`` runs from 0 (forward time ``T``) to ``T - t0``. Integrals in ``s``
use the left-endpoint rule, i.e. the integrand is evaluated at forward time ``T - s_k``
on the step ``[s_k, s_{k+1}]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .measure import GridDensity, gibbs, log_density, silverman_bandwidth, write_rows
from .pde import FlowSnapshotSeries, LogDensityInterpolant
from .potential import Perturbation, Potential
from .sde import PathEnsemble, grid_sampler, simulate_forward

Z_THRESHOLD = 4.0

TEST_FUNCTIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "1": lambda x: np.ones_like(x),
    "x": lambda x: x,
    "x^2": lambda x: x * x,
    "exp(-x^2)": lambda x: np.exp(-x * x),
}

REPORT_HEADER = ["test", "s1", "s2", "phi", "statistic", "threshold", "pass"]


@dataclass
class MartingaleReport:
    """Rows of ``(test, s1, s2, phi, statistic, threshold, pass)``."""

    rows: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    def add(self, test, s1, s2, phi, stat, threshold, ok) -> None:
        self.rows.append([test, s1, s2, phi, float(stat), float(threshold), bool(ok)])

    @property
    def passed(self) -> bool:
        return all(r[-1] for r in self.rows)

    def statistics(self, test: Optional[str] = None) -> np.ndarray:
        return np.array([r[4] for r in self.rows if test is None or r[0] == test])

    def extend(self, other: "MartingaleReport") -> "MartingaleReport":
        self.rows.extend(other.rows)
        self.info.update(other.info)
        return self

    def to_csv(self, path) -> None:
        write_rows(path, REPORT_HEADER, self.rows)


def z_statistic(samples: np.ndarray) -> float:
    """Self-normalized mean: ``mean / (std / sqrt(m))``; 0 when the samples are all zero."""
    samples = np.asarray(samples, dtype=float)
    m = samples.size
    sd = float(np.std(samples, ddof=1))
    mu = float(np.mean(samples))
    if sd == 0.0:
        return 0.0 if abs(mu) < 1e-300 else float(np.sign(mu) * np.inf)
    return mu / (sd / np.sqrt(m))


def _add_z_row(rep, test, s1, s2, label, samples, threshold, lower_only=False, floor=1e-8):
    """
    Add a Z row, or an absolute row when the samples sit below ``floor`` in RMS.

    Below that scale the increments are grid round-off (e.g. ``l = 1`` identically for a
    stationary start) and a self-normalized statistic of them is meaningless.
    """
    rms = float(np.sqrt(np.mean(np.square(samples))))
    if rms < floor:
        rep.add(test, s1, s2, f"{label} (rms)", rms, floor, True)
        return
    z = z_statistic(samples)
    ok = z > threshold if lower_only else abs(z) < threshold
    rep.add(test, s1, s2, label, z, threshold, ok)


# -- process construction ------------------------------------------------------------------

@dataclass
class TrajectorialProcesses:
    """
    Relative-entropy processes on a thinned reversed-time grid.

    Arrays are time-major, shape ``(len(s), m_paths)``. ``F_cum`` includes the signed
    perturbation correction when ``perturbed``; ``F_fisher`` is its Fisher part only,
    the compensator of the quadratic variation of ``M``.
    """

    s: np.ndarray
    horizon: float
    X: np.ndarray
    logL: np.ndarray
    F_cum: np.ndarray
    F_fisher: np.ndarray
    M: np.ndarray
    step_dM2: np.ndarray
    step_2dF: np.ndarray
    step_s: np.ndarray
    flow: FlowSnapshotSeries
    perturbed: bool = False
    paths: Optional[PathEnsemble] = None

    @property
    def t(self) -> np.ndarray:
        return self.horizon - self.s

    @property
    def m_paths(self) -> int:
        return self.X.shape[1]

    @property
    def logL_beta(self) -> np.ndarray:
        return self._beta(self.logL)

    @property
    def F_beta(self) -> np.ndarray:
        return self._beta(self.F_cum)

    @property
    def M_beta(self) -> np.ndarray:
        return self._beta(self.M)

    def _beta(self, arr):
        if not self.perturbed:
            raise AttributeError("processes were built without a perturbation")
        return arr

    def index(self, s: float) -> int:
        k = int(np.argmin(np.abs(self.s - s)))
        if abs(self.s[k] - s) > 1e-9 + 1e-6 * (self.s[1] - self.s[0]):
            raise ValueError(f"s={s} is not a recorded reversed time")
        return k

    def index_t(self, t: float) -> int:
        return self.index(self.horizon - t)

    def state_and_log_ell(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Path states and ``log l`` at any forward time of the underlying path grid."""
        if self.paths is None:
            k = self.index_t(t)
            return self.X[k], self.logL[k]
        x = self.paths.at(t)
        return x, LogDensityInterpolant(self.flow).log_ell(t, x)

    def scaled(self, factor: float) -> "TrajectorialProcesses":
        """Copy with ``F`` multiplied by ``factor`` and ``M`` recomputed (negative control)."""
        F = self.F_cum * factor
        M = (self.logL - self.logL[0]) - F
        return TrajectorialProcesses(self.s, self.horizon, self.X, self.logL, F, self.F_fisher * factor,
                                     M, self.step_dM2, self.step_2dF, self.step_s, self.flow,
                                     self.perturbed, self.paths)


def build_processes(paths: PathEnsemble, flow: FlowSnapshotSeries, pot: Optional[Potential] = None,
                    pert: Optional[Perturbation] = None, record_stride: int = 10,
                    fisher_sign: float = 1.0) -> TrajectorialProcesses:
    """
    Evaluate ``log l``, the cumulative Fisher process and the backward martingale along paths.

    ``flow`` must be the (perturbed, if ``pert`` is given) Fokker-Planck solution whose law
    the paths sample. ``fisher_sign`` flips the perturbation correction and exists only
    for negative controls.
    """
    if paths.orientation != "forward":
        raise ValueError("build_processes expects a forward ensemble")
    pot = flow.potential if pot is None else pot
    if pot != flow.potential or pot != paths.potential:
        raise ValueError("paths, flow and potential disagree")
    if pert is not None and (flow.perturbation != pert or paths.perturbation != pert):
        raise ValueError("paths and flow must carry the same perturbation")
    if pert is None and (flow.perturbation is not None or paths.perturbation is not None):
        raise ValueError("perturbed paths or flow given without the perturbation")
    t_paths = paths.times
    if abs(t_paths[0] - flow.t0) > 1e-9 or abs(t_paths[-1] - flow.t_end) > 1e-9:
        raise ValueError("path time grid does not match the flow interval")
    interp = LogDensityInterpolant(flow)
    K = t_paths.size - 1
    dt = paths.dt
    T = float(t_paths[-1])
    rec = list(range(0, K + 1, record_stride))
    if rec[-1] != K:
        rec.append(K)
    nrec, m = len(rec), paths.m_paths
    X = np.empty((nrec, m))
    logL = np.empty((nrec, m))
    Fc = np.empty((nrec, m))
    Ff = np.empty((nrec, m))
    Mr = np.empty((nrec, m))
    dM2 = np.empty(K)
    twodF = np.empty(K)
    F = np.zeros(m)
    Fi = np.zeros(m)
    L0 = None
    M_prev = None
    r = 0
    for k in range(K + 1):
        j = K - k  # forward index
        x = paths.data[j]
        L, g = interp.log_ell_and_grad(float(t_paths[j]), x)
        if L0 is None:
            L0 = L
        M = (L - L0) - F
        if k in rec[r:r + 1]:
            X[r], logL[r], Fc[r], Ff[r], Mr[r] = x, L, F, Fi, M
            r += 1
        if M_prev is not None:
            dM2[k - 1] = np.mean((M - M_prev) ** 2)
        if k == K:
            break
        fisher = 0.5 * g * g
        twodF[k] = np.mean(2.0 * fisher * dt)
        rate = fisher
        if pert is not None:
            _, b, db = pert.fields(x)
            rate = fisher + fisher_sign * (2.0 * pot.gradient(x) * b - db)
        F = F + rate * dt
        Fi = Fi + fisher * dt
        M_prev = M
    s = T - t_paths[K - np.array(rec)]
    step_s = T - t_paths[::-1][:K]
    return TrajectorialProcesses(s, T, X, logL, Fc, Ff, Mr, dM2, twodF, step_s, flow,
                                 pert is not None, paths)


# -- tests ---------------------------------------------------------------------------------

def default_s_pairs(tp: TrajectorialProcesses, n_pairs: int = 4, margin: float = 0.05):
    """``n_pairs`` consecutive reversed-time intervals covering ``[0, T - t0 - margin]``."""
    s_max = tp.s[-1] - margin
    edges = np.linspace(0.0, s_max, n_pairs + 1)
    snapped = [float(tp.s[np.argmin(np.abs(tp.s - e))]) for e in edges]
    return list(zip(snapped[:-1], snapped[1:]))


def martingale_zero_drift_test(tp: TrajectorialProcesses, s_pairs: Optional[Sequence] = None,
                               test_functions: Optional[dict] = None,
                               threshold: float = Z_THRESHOLD) -> MartingaleReport:
    """
    ``Z = mean[(M(T-s2) - M(T-s1)) phi(X(T-s1))] / SE`` for each pair and test function.
    """
    s_pairs = default_s_pairs(tp) if s_pairs is None else s_pairs
    test_functions = TEST_FUNCTIONS if test_functions is None else test_functions
    rep = MartingaleReport()
    name = "martingale_beta" if tp.perturbed else "martingale"
    for s1, s2 in s_pairs:
        i1, i2 = tp.index(s1), tp.index(s2)
        if not i2 > i1:
            raise ValueError("each pair needs s1 < s2")
        dM = tp.M[i2] - tp.M[i1]
        x1 = tp.X[i1]
        for label, phi in test_functions.items():
            z = z_statistic(dM * phi(x1))
            rep.add(name, float(tp.s[i1]), float(tp.s[i2]), label, z, threshold, abs(z) < threshold)
    return rep


def quadratic_variation_test(tp: TrajectorialProcesses, t_from: Optional[float] = None,
                             band: tuple[float, float] = (0.95, 1.05)) -> MartingaleReport:
    """Realized ``sum E[(dM)^2]`` against ``sum E[2 dF]`` over forward times ``[t_from, T]``."""
    t0 = tp.horizon - tp.s[-1]
    t_from = t0 + 0.05 if t_from is None else t_from
    dt = tp.step_s[1] - tp.step_s[0] if tp.step_s.size > 1 else 0.0
    # step k spans forward times [T - s_k - dt, T - s_k]
    use = (tp.horizon - tp.step_s - dt) >= t_from - 1e-9
    num = float(np.sum(tp.step_dM2[use]))
    den = float(np.sum(tp.step_2dF[use]))
    rep = MartingaleReport(info={"qv": num, "two_dF": den})
    if den < 1e-14:
        ratio = 1.0 if num < 1e-10 else np.inf
    else:
        ratio = num / den
    ok = band[0] <= ratio <= band[1]
    rep.add("quadratic_variation", 0.0, float(tp.horizon - t_from), "ratio", ratio,
            band[1] - 1.0, ok)
    return rep


def mean_fisher_check(tp: TrajectorialProcesses, rel_tol: float = 0.02) -> MartingaleReport:
    """``E[F(t0)]`` against half the time integral of the grid Fisher information."""
    from .functionals import relative_fisher_information

    flow = tp.flow
    I = np.array([relative_fisher_information(flow.state(i), flow.potential) for i in range(len(flow))])
    half_int = 0.5 * float(np.trapezoid(I, flow.times))
    mc = float(np.mean(tp.F_fisher[-1]))
    err = abs(mc - half_int) / max(abs(half_int), 1e-300)
    rep = MartingaleReport(info={"E_F": mc, "half_int_I": half_int})
    ok = err < rel_tol if half_int > 1e-12 else abs(mc) < 1e-6
    rep.add("mean_fisher", 0.0, float(tp.s[-1]), "F(t0)", err, rel_tol, ok)
    return rep


def nadaraya_watson(x: np.ndarray, y: np.ndarray, at: np.ndarray, bandwidth: Optional[float] = None):
    """Gaussian-kernel regression of ``y`` on ``x`` evaluated at ``at``, by linear binning."""
    bw = silverman_bandwidth(x) if bandwidth is None else bandwidth
    lo, hi = float(at.min()) - 6 * bw, float(at.max()) + 6 * bw
    n = 4096
    h = (hi - lo) / (n - 1)
    inside = (x >= lo) & (x <= hi)
    pos = (x[inside] - lo) / h
    j = np.minimum(np.floor(pos).astype(np.int64), n - 2)
    fr = pos - j
    yy = y[inside]
    c0 = np.bincount(j, 1 - fr, n) + np.bincount(j + 1, fr, n)
    c1 = np.bincount(j, (1 - fr) * yy, n) + np.bincount(j + 1, fr * yy, n)
    half = int(np.ceil(6 * bw / h))
    kern = np.exp(-0.5 * ((np.arange(-half, half + 1) * h) / bw) ** 2)
    from scipy.signal import fftconvolve

    s0 = fftconvolve(c0, kern, mode="same")
    s1 = fftconvolve(c1, kern, mode="same")
    grid = lo + h * np.arange(n)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = s1 / s0
    return np.interp(at, grid, r), np.interp(at, grid, s0)


def _central(x: np.ndarray, mass: float = 0.95) -> tuple[float, float]:
    a = 0.5 * (1 - mass)
    return float(np.quantile(x, a)), float(np.quantile(x, 1 - a))


def trajectorial_rate_test(tp: TrajectorialProcesses, t0: float, h: float,
                           base_flow: Optional[FlowSnapshotSeries] = None,
                           tol: float = 0.10, tol_ratio: float = 0.15,
                           ratio_h: Optional[float] = None) -> MartingaleReport:
    """
    Fixed-``h`` surrogate of the conditional trajectorial dissipation rate at ``t0``.

    Regresses ``(log l(t0, X(t0)) - log l(t0+h, X(t0+h))) / h`` on ``X(t0+h)`` and compares
    with ``|(log l)'(t0, .)|^2 / 2`` (plus ``2 Psi' beta - beta'`` when perturbed) in
    ``L^2`` weighted by the paths' empirical law over the central 95% window.

    For perturbed processes with ``base_flow`` given, :func:`ratio_limit_test` is appended.
    """
    dt = tp.paths.dt if tp.paths is not None else tp.s[1] - tp.s[0]
    _, l0 = tp.state_and_log_ell(t0)
    x1, l1 = tp.state_and_log_ell(t0 + h)
    y = (l0 - l1) / h
    s0, s1 = tp.horizon - t0, tp.horizon - t0 - h
    flow = tp.flow
    pot = flow.potential
    pert = flow.perturbation if tp.perturbed else None
    d0 = flow.at(t0)
    _, sc = log_density(d0)
    xg = d0.x
    a = sc + 2.0 * pot.gradient(xg)
    target = 0.5 * a * a
    if pert is not None:
        _, b, db = pert.fields(xg)
        target = target + 2.0 * pot.gradient(xg) * b - db
    lo, hi = _central(x1)
    at = np.linspace(lo, hi, 400)
    bw = silverman_bandwidth(x1)
    est, _ = nadaraya_watson(x1, y, at, bw)
    # the estimator targets the kernel average of the rate under the law of X(t0+h),
    # so the rate is smoothed the same way before comparing (bias matching)
    p1 = flow.at(t0 + h).values
    kern = np.exp(-0.5 * ((at[:, None] - xg[None, :]) / bw) ** 2) * p1[None, :]
    tgt = (kern @ target) / kern.sum(axis=1)
    raw = np.interp(at, xg, target)
    w = np.interp(at, xg, p1)
    num = np.sqrt(np.sum(w * (est - tgt) ** 2))
    den = np.sqrt(np.sum(w * tgt**2))
    rep = MartingaleReport(info={"h": h, "dt": dt, "bandwidth": bw,
                                 "raw_rel_error": float(np.sqrt(np.sum(w * (est - raw) ** 2))
                                                        / max(np.sqrt(np.sum(w * raw**2)), 1e-300))})
    name = "trajectorial_rate_beta" if tp.perturbed else "trajectorial_rate"
    if den < 1e-10:
        err = float(num)
        rep.add(name, s1, s0, "L2_abs", err, 1e-3, err < 1e-3)
    else:
        err = float(num / den)
        rep.add(name, s1, s0, "L2_rel", err, tol, err < tol)
    if pert is not None and base_flow is not None:
        rep.extend(ratio_limit_test(flow, base_flow, ratio_h, tol_ratio))
    return rep


def ratio_limit_test(pflow: FlowSnapshotSeries, base_flow: FlowSnapshotSeries,
                     r: Optional[float] = None, tol: float = 0.15) -> MartingaleReport:
    """
    Compare ``(log l_beta - log l)(t0+r, .) / r`` with ``beta' + beta (log p)'(t0, .)`` on the
    support of ``beta``, where ``t0`` is the common start of both flows.

    ``r`` defaults to the snapshot spacing since the quotient has an O(r) bias scaled by
    the bump's derivatives.
    """
    pert = pflow.perturbation
    if pert is None or base_flow.perturbation is not None:
        raise ValueError("need a perturbed flow and an unperturbed base flow")
    if abs(pflow.t0 - base_flow.t0) > 1e-12 or np.max(np.abs(pflow.values[0] - base_flow.values[0])) > 1e-12:
        raise ValueError("both flows must start from the same state at the same time")
    t0 = pflow.t0
    hr = pflow.spacing if r is None else r
    base = LogDensityInterpolant(base_flow)
    pint = LogDensityInterpolant(pflow)
    c, e = pert.support
    xs = np.linspace(c + 0.05 * (e - c), e - 0.05 * (e - c), 200)
    ratio = (pint.log_p(t0 + hr, xs) - base.log_p(t0 + hr, xs)) / hr
    _, bs, dbs = pert.fields(xs)
    lim = dbs + bs * base.score(t0, xs)
    rel = float(np.sqrt(np.mean((ratio - lim) ** 2)) / np.sqrt(np.mean(lim**2)))
    rep = MartingaleReport(info={"r": hr})
    rep.add("ratio_limit", t0, t0 + hr, "L2_rel", rel, tol, rel < tol)
    return rep


def fontbona_jourdain_test(pot: Potential, flow: FlowSnapshotSeries, m_paths: int, seed: int,
                           dt: float = 1e-3, pairs: Optional[Sequence] = None,
                           n_levels: int = 6, test_functions: Optional[dict] = None,
                           threshold: float = Z_THRESHOLD) -> MartingaleReport:
    """
    Backward martingale property of ``l(T-s, X(T-s))`` when ``X`` is stationary under ``Q``.

    ``pot`` must have a Gibbs probability measure (mass 1). Paths start from the grid Gibbs
    density; ``flow`` supplies ``l`` for a non-stationary initial law.
    """
    if not pot.normalizable:
        raise ValueError("Q must be a probability measure (normalizable potential)")
    mass = pot.mass()
    if abs(mass - 1.0) > 1e-6:
        raise ValueError(f"Gibbs measure has mass {mass}; shift the additive constant to normalize it")
    if flow.potential != pot:
        raise ValueError("flow was computed for a different potential")
    t0, T = flow.t0, flow.t_end
    q = gibbs(pot, flow.x_min, flow.x_max, flow.n)
    paths = simulate_forward(pot, grid_sampler(q), t0, T, dt, m_paths, seed)
    interp = LogDensityInterpolant(flow)
    if pairs is None:
        mid = t0 + 0.5 * (T - t0)
        pairs = [(t0, mid), (mid, T), (t0, T)]
    test_functions = TEST_FUNCTIONS if test_functions is None else test_functions
    rep = MartingaleReport()

    def ell(t):
        return np.exp(interp.log_ell(t, paths.at(t)))

    for t1, t2 in pairs:
        l1, l2 = ell(t1), ell(t2)
        x2 = paths.at(t2)
        for label, phi in test_functions.items():
            _add_z_row(rep, "fontbona_jourdain", T - t2, T - t1, label, (l1 - l2) * phi(x2), threshold)
    # submartingale corollary: E_Q[l log l] non-decreasing in s
    levels = np.linspace(T, t0, n_levels)
    levels = [flow.times[np.argmin(np.abs(flow.times - t))] for t in levels]
    vals = []
    for t in levels:
        logl = interp.log_ell(t, paths.at(t))
        vals.append(np.exp(logl) * logl)
    means = [float(np.mean(v)) for v in vals]
    rep.info["llogl_means"] = means
    rep.info["llogl_levels"] = levels
    for k in range(len(vals) - 1):
        _add_z_row(rep, "llogl_monotone", T - levels[k], T - levels[k + 1], "l log l",
                   vals[k + 1] - vals[k], -2.0, lower_only=True)
    # conditional-expectation discrepancy (informational)
    t1, t2 = pairs[0]
    x2 = paths.at(t2)
    lo, hi = _central(x2)
    at = np.linspace(lo, hi, 200)
    est, _ = nadaraya_watson(x2, ell(t1), at)
    ref = np.exp(interp.log_ell(t2, at))
    rep.info["regression_sup_rel"] = float(np.max(np.abs(est - ref) / ref))
    return rep


def forward_identity_test(paths: PathEnsemble, flow: FlowSnapshotSeries, pot: Optional[Potential] = None,
                          pert: Optional[Perturbation] = None, times: Optional[Sequence[float]] = None,
                          threshold: float = Z_THRESHOLD, quad_tol: float = 1e-4) -> MartingaleReport:
    """
    Monte Carlo and quadrature versions of the forward-time identities

        E[2 d_t l / l (t, X(t))] = 0                                    (unperturbed)
        E_beta[l'' / l - 2 Psi' l' / l (t, X(t))] = 0,  l = p_beta / q      (perturbed)

    Time derivatives come from centered snapshot differences; space derivatives from the
    grid score.
    """
    pot = flow.potential if pot is None else pot
    if pert is not None and flow.perturbation != pert:
        raise ValueError("flow does not carry the given perturbation")
    if times is None:
        times = [flow.t0 + 0.3 * (flow.t_end - flow.t0)]
    rep = MartingaleReport()
    interp = LogDensityInterpolant(flow)
    sp = flow.spacing
    for t in times:
        i = flow.index_of(t)
        x = paths.at(flow.times[i])
        d = flow.state(i)
        if pert is None:
            ia, ib = max(i - 1, 0), min(i + 1, len(flow) - 1)
            ta, tb = flow.times[ia], flow.times[ib]
            g = 2.0 * (interp.log_p(tb, x) - interp.log_p(ta, x)) / (tb - ta)
            z = z_statistic(g)
            rep.add("forward_identity", t, t, "2 dl/l", z, threshold, abs(z) < threshold)
            la, _ = log_density(flow.state(ia))
            lb, _ = log_density(flow.state(ib))
            quad = d.integrate(2.0 * (lb - la) / (tb - ta))
            rep.add("forward_identity_quadrature", t, t, "2 dl/l", quad, quad_tol, abs(quad) < quad_tol)
        else:
            _, s = log_density(d)
            xg = d.x
            a = s + 2.0 * pot.gradient(xg)
            da = np.gradient(s, d.h, edge_order=2) + 2.0 * pot.hessian(xg)
            G = da + a * a - 2.0 * pot.gradient(xg) * a
            vals = np.interp(x, xg, G)
            z = z_statistic(vals)
            rep.add("forward_identity_beta", t, t, "l''/l - 2Psi'l'/l", z, threshold, abs(z) < threshold)
            quad = d.integrate(G)
            rep.add("forward_identity_beta_quadrature", t, t, "l''/l - 2Psi'l'/l", quad, quad_tol,
                    abs(quad) < quad_tol)
        rep.info[f"spacing_{t}"] = sp
    return rep
