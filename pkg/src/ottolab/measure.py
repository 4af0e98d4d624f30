"""
Probability densities sampled on a uniform 1-D grid.

Quadrature is the composite trapezoid rule throughout, so ``mass`` below is exactly
the quantity conserved by the finite-volume solver in :mod:`ottolab.pde`.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal

DEFAULT_DOMAIN = (-10.0, 10.0)
DEFAULT_N = 2048
ABS_FLOOR = 1e-300
REL_FLOOR = 1e-14


def trapezoid_weights(n: int, h: float) -> np.ndarray:
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    return w


@dataclass(frozen=True)
class GridDensity:
    """Density values at the ``n`` nodes of a uniform grid on ``[x_min, x_max]``."""

    x_min: float
    x_max: float
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 1 or v.size < 3:
            raise ValueError("GridDensity needs a 1-D array of at least 3 values")
        if not self.x_max > self.x_min:
            raise ValueError("x_max must exceed x_min")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.size

    @property
    def h(self) -> float:
        return (self.x_max - self.x_min) / (self.n - 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n)

    @property
    def weights(self) -> np.ndarray:
        return trapezoid_weights(self.n, self.h)

    def integrate(self, f) -> float:
        """Trapezoid integral of ``f * p`` where ``f`` is an array on the grid (or scalar)."""
        return float(np.dot(self.weights, np.broadcast_to(f, self.values.shape) * self.values))

    @property
    def mass(self) -> float:
        return float(np.dot(self.weights, self.values))

    def same_grid(self, other: "GridDensity") -> bool:
        return (self.n == other.n and np.isclose(self.x_min, other.x_min)
                and np.isclose(self.x_max, other.x_max))

    def with_values(self, values) -> "GridDensity":
        return GridDensity(self.x_min, self.x_max, values)

    def cdf(self) -> np.ndarray:
        """Cumulative trapezoid integral at the nodes (first entry 0)."""
        v = self.values
        out = np.empty_like(v)
        out[0] = 0.0
        np.cumsum(0.5 * self.h * (v[1:] + v[:-1]), out=out[1:])
        return out

    def to_csv(self, path) -> None:
        write_columns(path, ["x", "value"], [self.x, self.values])

    @classmethod
    def from_csv(cls, path) -> "GridDensity":
        cols = read_columns(path)
        x, v = cols["x"], cols["value"]
        return cls(float(x[0]), float(x[-1]), v)


@dataclass(frozen=True)
class ScoreField:
    """Logarithmic derivative of a density on the same grid."""

    x_min: float
    x_max: float
    values: np.ndarray

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.values.size)


def normalize(raw, x_min: float = DEFAULT_DOMAIN[0], x_max: float = DEFAULT_DOMAIN[1]) -> GridDensity:
    """Rescale non-negative grid values to unit trapezoid mass."""
    raw = np.asarray(raw, dtype=float)
    if not np.all(np.isfinite(raw)):
        raise ValueError("density values must be finite")
    if np.any(raw < 0):
        raise ValueError("density values must be non-negative")
    d = GridDensity(x_min, x_max, raw)
    m = d.mass
    if m <= 0:
        raise ValueError("density is identically zero")
    return d.with_values(raw / m)


def from_function(f, x_min: float = DEFAULT_DOMAIN[0], x_max: float = DEFAULT_DOMAIN[1],
                  n: int = DEFAULT_N) -> GridDensity:
    x = np.linspace(x_min, x_max, n)
    return normalize(f(x), x_min, x_max)


def gaussian(mean: float, var: float, x_min: float = DEFAULT_DOMAIN[0],
             x_max: float = DEFAULT_DOMAIN[1], n: int = DEFAULT_N) -> GridDensity:
    """Normalized N(mean, var) sampled on the grid."""
    if not var > 0:
        raise ValueError("variance must be positive")
    return from_function(lambda x: np.exp(-0.5 * (x - mean) ** 2 / var) / np.sqrt(2 * np.pi * var),
                         x_min, x_max, n)


def gibbs(pot, x_min: float = DEFAULT_DOMAIN[0], x_max: float = DEFAULT_DOMAIN[1],
          n: int = DEFAULT_N) -> GridDensity:
    """Grid-normalized Gibbs density of ``pot``."""
    x = np.linspace(x_min, x_max, n)
    # subtract the minimum before exponentiating to stay clear of underflow
    psi = pot.evaluate(x)
    return normalize(np.exp(-2.0 * (psi - psi.min())), x_min, x_max)


def moment(d: GridDensity, k: int) -> float:
    if k not in (0, 1, 2, 3, 4):
        raise ValueError("moment order must be in 0..4")
    return d.integrate(d.x**k)


def variance(d: GridDensity) -> float:
    m1 = moment(d, 1)
    return moment(d, 2) - m1 * m1


def _valid_range(p: np.ndarray, floor: float) -> tuple[np.ndarray, float]:
    clip = max(floor * float(p.max()), ABS_FLOOR)
    return p > clip, clip


def log_density(d: GridDensity, floor: float = REL_FLOOR) -> tuple[np.ndarray, np.ndarray]:
    """
    Log-density and score on the grid, with tails extrapolated.

    Nodes below ``floor * max(p)`` are treated as numerically empty: there the score
    is continued linearly from the last resolved nodes and the log-density is obtained
    by integrating that continuation, so ``log p`` is quadratic in the clipped tails.

    Returns
    -------
    logp, score : ndarray
    """
    p = d.values
    h = d.h
    valid, clip = _valid_range(p, floor)
    idx = np.flatnonzero(valid)
    if idx.size < 4:
        raise ValueError("density is resolved on fewer than 4 nodes")
    i0, i1 = idx[0], idx[-1]
    logp = np.log(np.maximum(p, clip))
    s = np.gradient(logp, h, edge_order=2)
    x = d.x
    k = 8
    if i0 > 0:
        # nodes i0 and i0+1 use a clipped neighbour in the central difference
        a = i0 + 2
        sl = slice(a, min(a + k, i1 - 1))
        coef = np.polyfit(x[sl], s[sl], 1)
        xs = x[:a]
        s[:a] = np.polyval(coef, xs)
        # integrate the affine score backwards from node a
        logp[:a] = logp[a] + np.polyval(np.polyint(coef), xs) - np.polyval(np.polyint(coef), x[a])
    if i1 < d.n - 1:
        b = i1 - 2
        sl = slice(max(b - k + 1, i0 + 2), b + 1)
        coef = np.polyfit(x[sl], s[sl], 1)
        xs = x[b + 1:]
        s[b + 1:] = np.polyval(coef, xs)
        logp[b + 1:] = logp[b] + np.polyval(np.polyint(coef), xs) - np.polyval(np.polyint(coef), x[b])
    return logp, s


def score(d: GridDensity, floor: float = REL_FLOOR) -> ScoreField:
    """Central-difference score ``(log p)'`` with one-sided differences at the ends."""
    if not floor > 0:
        raise ValueError("floor must be positive")
    _, s = log_density(d, floor)
    return ScoreField(d.x_min, d.x_max, s)


def silverman_bandwidth(xs) -> float:
    xs = np.asarray(xs, dtype=float)
    return 1.06 * float(np.std(xs, ddof=1)) * xs.size ** (-0.2)


def from_samples(xs, x_min: float = DEFAULT_DOMAIN[0], x_max: float = DEFAULT_DOMAIN[1],
                 n: int = DEFAULT_N, bandwidth: float | None = None) -> GridDensity:
    """
    Gaussian kernel density estimate evaluated at the grid nodes.

    Samples are linearly binned onto the grid and convolved with the kernel, which is
    accurate when the grid spacing is well below the bandwidth.
    """
    xs = np.asarray(xs, dtype=float).ravel()
    if xs.size < 100:
        raise ValueError("need at least 100 samples for a density estimate")
    if not np.std(xs) > 0:
        raise ValueError("samples are degenerate (zero variance)")
    bw = silverman_bandwidth(xs) if bandwidth is None else float(bandwidth)
    h = (x_max - x_min) / (n - 1)
    pos = (np.clip(xs, x_min, x_max) - x_min) / h
    j = np.minimum(np.floor(pos).astype(np.int64), n - 2)
    frac = pos - j
    counts = np.bincount(j, weights=1.0 - frac, minlength=n) + np.bincount(j + 1, weights=frac, minlength=n)
    half = int(np.ceil(6 * bw / h))
    off = np.arange(-half, half + 1) * h
    kern = np.exp(-0.5 * (off / bw) ** 2) / (np.sqrt(2 * np.pi) * bw)
    dens = signal.fftconvolve(counts, kern, mode="full")[half:half + n] / xs.size
    return normalize(np.maximum(dens, 0.0), x_min, x_max)


def l1_distance(a: GridDensity, b: GridDensity) -> float:
    if not a.same_grid(b):
        raise ValueError("densities live on different grids")
    return float(np.dot(a.weights, np.abs(a.values - b.values)))


def inverse_cdf_sample(d: GridDensity, u) -> np.ndarray:
    """Map uniforms through the exact quantile function of the piecewise-linear density."""
    from .transport import quantile_function

    return quantile_function(d, u)


# -- CSV plumbing shared by all modules --------------------------------------------------

def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_columns(path, header, columns, comments: dict | None = None) -> None:
    """Write equal-length columns as CSV with one header line (and optional ``#`` metadata)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", newline="") as fh:
        if comments:
            for k, v in comments.items():
                fh.write(f"# {k}={fmt(v)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([fmt(v) for v in row])
    tmp.replace(path)


def write_rows(path, header, rows, comments: dict | None = None) -> None:
    cols = list(zip(*rows)) if rows else [[] for _ in header]
    write_columns(path, header, cols, comments)


def read_columns(path) -> dict[str, np.ndarray]:
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    header, body = rows[0], rows[1:]
    return {name: np.array([float(r[i]) for r in body]) for i, name in enumerate(header)}


def read_comments(path) -> dict[str, str]:
    out = {}
    with open(path) as fh:
        for ln in fh:
            if not ln.startswith("#"):
                break
            k, _, v = ln[1:].strip().partition("=")
            out[k] = v
    return out
