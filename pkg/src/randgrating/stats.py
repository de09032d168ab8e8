"""Ensemble statistics of reconstructed profiles and the two error metrics."""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .artifacts import write_csv, write_json, write_matrix_csv
from .surface import FourierProfile

log = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
DEFAULT_N = 101
KDE_LOCATIONS = (math.pi / 2, math.pi, 3 * math.pi / 2, 2 * math.pi)
_INV_SQRT_2PI = 1.0 / math.sqrt(TWO_PI)
_KDE_BLOCK = 4_000_000


def stats_grid(n=DEFAULT_N):
    """``x_i = 2 pi (i - 1)/(n - 1)``, ``i = 1..n`` (both endpoints)."""
    # 2*pi*i/(n-1) keeps x_{n} exactly equal to 2*pi
    return TWO_PI * np.arange(n) / (n - 1)


def _as_coeffs(coeffs):
    arr = [np.asarray(c, dtype=float).ravel() for c in coeffs]
    if not arr:
        raise ValueError("need at least one sample")
    if len({a.size for a in arr}) > 1:
        raise ValueError("coefficient vectors have unequal lengths")
    return np.stack(arr)


def mean_profile(coeffs, x=None):
    """Mean coefficients and the mean curve on ``x`` (default: :func:`stats_grid`).

    Returns
    -------
    abar : ndarray
    mean_curve : ndarray
    """
    A = _as_coeffs(coeffs)
    abar = A.mean(axis=0)
    x = stats_grid() if x is None else np.asarray(x, dtype=float)
    return abar, FourierProfile(abar)(x)


def sample_curves(coeffs, x):
    """Row ``m`` is sample ``m`` evaluated on ``x``."""
    A = _as_coeffs(coeffs)
    return np.stack([FourierProfile(a)(x) for a in A])


def covariance_matrix(curves, mean_curve, t_curves=None, t_mean=None):
    """Empirical covariance ``c_ij = (1/M) sum_m (f_m(s_i) - fbar(s_i)) (f_m(t_j) - fbar(t_j))``.

    ``curves`` holds the samples on the ``s`` grid; pass ``t_curves`` and
    ``t_mean`` for a different ``t`` grid of the same size.  With one grid
    only the upper triangle is computed and mirrored, so the result is
    exactly symmetric.
    """
    D = np.asarray(curves, dtype=float) - np.asarray(mean_curve, dtype=float)
    M, n = D.shape
    if t_curves is not None:
        E = np.asarray(t_curves, dtype=float) - np.asarray(t_mean, dtype=float)
        if E.shape != D.shape:
            raise ValueError("s and t grids must have the same size")
        return np.einsum("mi,mj->ij", D, E) / M
    C = np.empty((n, n))
    for i in range(n):
        row = np.einsum("m,mj->j", D[:, i], D[:, i:]) / M
        C[i, i:] = row
        C[i:, i] = row
    diag = np.diag(C).copy()
    if np.any(diag < -1e-12):
        raise ValueError("covariance diagonal is negative")
    np.fill_diagonal(C, np.maximum(diag, 0.0))
    return C


def silverman_bandwidth(values):
    v = np.asarray(values, dtype=float)
    return (4.0 / (3.0 * v.size)) ** 0.2 * v.std(ddof=1)


@dataclass
class KDE:
    """Gaussian kernel density estimate ``(1/(M d)) sum K((x - x_i)/d)``.

    A degenerate estimate (zero spread) is a point mass at ``values[0]``;
    evaluating it returns an indicator of that point.
    """

    values: np.ndarray
    bandwidth: float
    degenerate: bool = False

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.degenerate:
            return (x == self.values[0]).astype(float)
        flat = x.ravel()
        out = np.empty(flat.size)
        # bound the (points x values) work array to a few million entries
        step = max(1, _KDE_BLOCK // max(self.values.size, 1))
        for i in range(0, flat.size, step):
            u = (flat[i : i + step, None] - self.values) / self.bandwidth
            out[i : i + step] = np.exp(-0.5 * u * u).sum(axis=-1)
        return (out * (_INV_SQRT_2PI / (self.values.size * self.bandwidth))).reshape(x.shape)

    def support(self, pad=6.0):
        if self.degenerate:
            return float(self.values[0]), float(self.values[0])
        return float(self.values.min() - pad * self.bandwidth), float(self.values.max() + pad * self.bandwidth)

    def grid(self, n=401):
        lo, hi = self.support()
        return np.linspace(lo, hi, n)

    def integral(self, n=4001):
        if self.degenerate:
            return 1.0
        x = np.linspace(*self.support(), n)
        return float(np.trapezoid(self(x), x))


def kde(values, bandwidth=None):
    """Gaussian KDE with the Silverman bandwidth unless ``bandwidth`` is given."""
    v = np.asarray(values, dtype=float).ravel()
    if bandwidth is not None:
        if bandwidth <= 0:
            raise ValueError(f"bandwidth must be positive, got {bandwidth}")
        return KDE(v, float(bandwidth))
    if v.size < 2:
        raise ValueError("need at least two values for the Silverman bandwidth")
    d = silverman_bandwidth(v)
    if np.ptp(v) == 0 or not d > 0:
        log.warning("zero spread in %d values; returning a point mass", v.size)
        return KDE(v, 0.0, degenerate=True)
    return KDE(v, d)


def err_mean(mean_curve, ftilde, n=DEFAULT_N):
    """``sqrt(sum_{i=1}^{n-1} (2 pi/(n-1)) (fbar(x_i) - ftilde(x_i))^2)``.

    Both arguments are callables or arrays on :func:`stats_grid` ``(n)``.
    """
    x = stats_grid(n)
    fb = mean_curve(x) if callable(mean_curve) else np.asarray(mean_curve, dtype=float)
    ft = ftilde(x) if callable(ftilde) else np.asarray(ftilde, dtype=float)
    d = (fb - ft)[: n - 1]
    return math.sqrt(TWO_PI / (n - 1) * float(np.sum(d * d)))


def err_cov(cov_hat, cov_true):
    """``sum |c_hat - c| / sum |c|`` (a fraction)."""
    cov_hat = np.asarray(cov_hat, dtype=float)
    cov_true = np.asarray(cov_true, dtype=float)
    if cov_hat.shape != cov_true.shape:
        raise ValueError(f"shape mismatch {cov_hat.shape} vs {cov_true.shape}")
    den = float(np.abs(cov_true).sum())
    if den == 0:
        raise ValueError("true covariance is identically zero")
    return float(np.abs(cov_hat - cov_true).sum()) / den


def nominal_covariance(sigma, ell, s, t=None):
    """Squared-exponential kernel ``sigma^2 exp(-|s - t|^2/(2 l^2))`` on a grid (not periodized)."""
    s = np.asarray(s, dtype=float)
    t = s if t is None else np.asarray(t, dtype=float)
    d = s[:, None] - t[None, :]
    return sigma**2 * np.exp(-(d * d) / (2.0 * ell * ell))


@dataclass
class StatsResult:
    abar: np.ndarray
    x: np.ndarray
    mean_curve: np.ndarray
    ftilde: np.ndarray
    cov: np.ndarray
    cov_true: np.ndarray
    kde: dict = field(default_factory=dict)
    err_mean: float = math.nan
    err_cov: float = math.nan
    M: int = 0

    @property
    def n(self):
        return self.x.size

    def metrics(self):
        return {"err_mean": self.err_mean, "err_cov": self.err_cov, "n": int(self.n), "M": int(self.M)}


def ensemble_stats(coeffs, ftilde, cov_true, n=DEFAULT_N, locations=KDE_LOCATIONS, bandwidth=None):
    """Mean, covariance, KDEs and both metrics of a reconstructed ensemble.

    Parameters
    ----------
    coeffs : sequence of arrays
        Per-sample Fourier coefficients.
    ftilde : callable
        True mean profile.
    cov_true : ndarray or callable
        Reference covariance on the grid, or ``cov_true(x)`` building it.
    """
    x = stats_grid(n)
    abar, fbar = mean_profile(coeffs, x)
    curves = sample_curves(coeffs, x)
    C = covariance_matrix(curves, fbar)
    Ct = cov_true(x) if callable(cov_true) else np.asarray(cov_true, dtype=float)
    dens = {}
    if curves.shape[0] >= 2 or bandwidth is not None:
        for loc in locations:
            dens[float(loc)] = kde(sample_curves(coeffs, np.array([loc]))[:, 0], bandwidth)
    ft = np.asarray(ftilde(x), dtype=float)
    return StatsResult(
        abar=abar, x=x, mean_curve=fbar, ftilde=ft, cov=C, cov_true=Ct, kde=dens,
        err_mean=err_mean(fbar, ft, n), err_cov=err_cov(C, Ct), M=curves.shape[0],
    )


def write_stats(result: StatsResult, outdir):
    """Mean curve, covariance matrices, KDE curves and metrics; returns the written paths."""
    os.makedirs(outdir, exist_ok=True)
    paths = []

    def p(name):
        path = os.path.join(outdir, name)
        paths.append(path)
        return path

    write_csv(p("mean_curve.csv"), ["x", "fbar", "ftilde"], [result.x, result.mean_curve, result.ftilde])
    write_csv(p("mean_coefficients.csv"), ["index", "abar"], [np.arange(result.abar.size), result.abar])
    write_matrix_csv(p("covariance.csv"), result.cov)
    write_matrix_csv(p("covariance_true.csv"), result.cov_true)
    for i, (loc, est) in enumerate(sorted(result.kde.items())):
        g = est.grid()
        write_csv(p(f"kde_{i}.csv"), ["value", "density"], [g, est(g)])
    meta = result.metrics()
    meta["kde_locations"] = sorted(result.kde)
    meta["kde_bandwidths"] = [result.kde[k].bandwidth for k in sorted(result.kde)]
    write_json(p("metrics.json"), meta)
    return paths
