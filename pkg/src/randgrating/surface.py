"""Periodic interface profiles: deterministic presets and random samples.

Random surfaces are ``f = f_tilde + P`` where ``P`` is a stationary, zero
mean, 2*pi-periodic process.  Gaussian paths are drawn from the
Karhunen-Loeve expansion of the periodized squared-exponential kernel (a
trigonometric polynomial, so derivatives are exact).  Non-Gaussian paths
are a memoryless cubic (Fleishman) transform of a Gaussian path.
"""

from __future__ import annotations

import csv
import functools
import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.optimize

from .exceptions import ConfigError

log = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
SPECTRUM_CUTOFF = 1e-12
SURFACE_STREAM = 1
# stream 2 is the measurement noise (forward module)
MARGINAL_STREAM = 3


def substream(seed, *keys):
    """Independent generator for ``(seed, *keys)``; keys are nonnegative ints."""
    # SeedSequence ignores trailing zeros, so the key count goes in too
    return np.random.default_rng(np.random.SeedSequence([int(seed), len(keys), *map(int, keys)]))


class FourierProfile:
    """Real trigonometric polynomial ``a0 + sum_p a_{2p-1} cos(px) + a_{2p} sin(px)``.

    Parameters
    ----------
    a : array_like, shape (2z+1,)
        Constant term followed by cos/sin pairs.
    """

    smooth = True

    def __init__(self, a):
        a = np.array(a, dtype=float).ravel()
        if a.size % 2 == 0 or a.size == 0:
            raise ValueError(f"need an odd number of coefficients, got {a.size}")
        self.a = a

    @property
    def z(self):
        return (self.a.size - 1) // 2

    def __repr__(self):
        return f"FourierProfile(z={self.z})"

    def _parts(self, x):
        p = np.arange(1, self.z + 1)
        px = np.multiply.outer(np.asarray(x, dtype=float), p)
        return p, np.cos(px), np.sin(px), self.a[1::2], self.a[2::2]

    def __call__(self, x):
        _, c, s, ac, as_ = self._parts(x)
        return self.a[0] + c @ ac + s @ as_

    def derivative(self, x):
        p, c, s, ac, as_ = self._parts(x)
        return s @ (-p * ac) + c @ (p * as_)

    def second_derivative(self, x):
        p, c, s, ac, as_ = self._parts(x)
        return -(c @ (p * p * ac) + s @ (p * p * as_))

    def extend(self, z):
        """Zero-pad (or truncate) to ``z`` modes."""
        a = np.zeros(2 * z + 1)
        k = min(a.size, self.a.size)
        a[:k] = self.a[:k]
        return FourierProfile(a)

    def __add__(self, other):
        if not isinstance(other, FourierProfile):
            return NotImplemented
        z = max(self.z, other.z)
        return FourierProfile(self.extend(z).a + other.extend(z).a)

    @classmethod
    def from_function(cls, f, z, nfft=1024):
        """Least-squares projection of a periodic function onto ``z`` modes."""
        x = TWO_PI * np.arange(nfft) / nfft
        c = np.fft.rfft(np.asarray(f(x), dtype=float)) / nfft
        a = np.zeros(2 * z + 1)
        a[0] = c[0].real
        a[1::2] = 2.0 * c[1 : z + 1].real
        a[2::2] = -2.0 * c[1 : z + 1].imag
        return cls(a)


@dataclass(frozen=True)
class AnalyticProfile:
    """Closed-form profile with explicit derivatives."""

    name: str
    f: Callable
    fp: Callable
    fpp: Callable
    smooth: bool = True

    def __call__(self, x):
        return self.f(np.asarray(x, dtype=float))

    def derivative(self, x):
        return self.fp(np.asarray(x, dtype=float))

    def second_derivative(self, x):
        return self.fpp(np.asarray(x, dtype=float))


def _binary(x):
    x = np.mod(np.asarray(x, dtype=float), TWO_PI)
    return np.where((x > 2.0) & (x < 5.0), 1.2, 1.6)


def _zero(x):
    return np.zeros_like(np.asarray(x, dtype=float))


def _ex2(x):
    return 0.2 + 0.04 * np.exp(np.cos(2 * x)) + 0.03 * np.exp(np.cos(3 * x))


def _ex2p(x):
    return -0.08 * np.sin(2 * x) * np.exp(np.cos(2 * x)) - 0.09 * np.sin(3 * x) * np.exp(np.cos(3 * x))


def _ex2pp(x):
    e2, e3 = np.exp(np.cos(2 * x)), np.exp(np.cos(3 * x))
    return 0.16 * e2 * (np.sin(2 * x) ** 2 - np.cos(2 * x)) + 0.27 * e3 * (np.sin(3 * x) ** 2 - np.cos(3 * x))


def _ex4(x):
    return 0.9 - 0.07 * np.exp(np.sin(x)) + 0.15 * np.exp(np.cos(3 * x))


def _ex4p(x):
    return -0.07 * np.cos(x) * np.exp(np.sin(x)) - 0.45 * np.sin(3 * x) * np.exp(np.cos(3 * x))


def _ex4pp(x):
    es, e3 = np.exp(np.sin(x)), np.exp(np.cos(3 * x))
    return -0.07 * es * (np.cos(x) ** 2 - np.sin(x)) + 1.35 * e3 * (np.sin(3 * x) ** 2 - np.cos(3 * x))


PRESETS = {
    "ex1": AnalyticProfile(
        "ex1",
        lambda x: 0.3 + 0.1 * np.sin(x) + 0.2 * np.cos(2 * x),
        lambda x: 0.1 * np.cos(x) - 0.4 * np.sin(2 * x),
        lambda x: -0.1 * np.sin(x) - 0.8 * np.cos(2 * x),
    ),
    "ex2": AnalyticProfile("ex2", _ex2, _ex2p, _ex2pp),
    "ex3": AnalyticProfile(
        "ex3",
        lambda x: 1.2 + 0.1 * np.cos(x) + 0.3 * np.sin(2 * x),
        lambda x: -0.1 * np.sin(x) + 0.6 * np.cos(2 * x),
        lambda x: -0.1 * np.cos(x) - 1.2 * np.sin(2 * x),
    ),
    "ex4": AnalyticProfile("ex4", _ex4, _ex4p, _ex4pp),
    # derivative taken as zero everywhere, including the two jumps
    "ex5": AnalyticProfile("ex5", _binary, _zero, _zero, smooth=False),
}


def preset_profile(name):
    """Deterministic profile ``ex1`` .. ``ex5``."""
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown profile preset {name!r}; choose from {sorted(PRESETS)}") from None


def _wrap_count(ell):
    # smallest K with exp(-(2 pi K - pi)^2 / (2 l^2)) < 1e-14 for every |lag| <= pi
    return int(math.ceil((ell * math.sqrt(2.0 * math.log(1e14)) + math.pi) / TWO_PI)) + 1


def periodized_se_covariance(sigma, ell, lag):
    """Squared-exponential kernel wrapped onto the circle of length 2*pi."""
    if not ell > 0:
        raise ConfigError(f"correlation length must be positive, got {ell}")
    lag = np.mod(np.asarray(lag, dtype=float) + math.pi, TWO_PI) - math.pi
    k = np.arange(-_wrap_count(ell), _wrap_count(ell) + 1)
    d = lag[..., None] + TWO_PI * k
    out = sigma * sigma * np.exp(-(d * d) / (2.0 * ell * ell)).sum(axis=-1)
    return out if out.ndim else float(out)


def spectrum_size(ell, cutoff=SPECTRUM_CUTOFF):
    """Smallest ``P`` with ``lambda_P < cutoff * lambda_max`` scale ``sigma^2``."""
    # lambda_p / sigma^2 = l / sqrt(2 pi) exp(-p^2 l^2 / 2)
    r = ell / math.sqrt(TWO_PI)
    if r <= cutoff:
        return 1
    return max(1, int(math.ceil(math.sqrt(2.0 * math.log(r / cutoff)) / ell)))


def gaussian_spectrum(sigma, ell, P=None):
    """Fourier coefficients ``lambda_p``, ``p = 0..P``, of the periodized kernel.

    ``C(t) = lambda_0 + 2 sum_p lambda_p cos(pt)`` with
    ``lambda_p = sigma^2 l / sqrt(2 pi) exp(-p^2 l^2 / 2)``.
    """
    if not ell > 0:
        raise ConfigError(f"correlation length must be positive, got {ell}")
    if P is None:
        P = spectrum_size(ell)
    p = np.arange(P + 1)
    lam = sigma * sigma * ell / math.sqrt(TWO_PI) * np.exp(-0.5 * (p * ell) ** 2)
    if sigma > 0 and lam[-1] >= SPECTRUM_CUTOFF * sigma * sigma:
        log.warning("spectrum truncated at P=%d with lambda_P/sigma^2 = %.2e", P, lam[-1] / sigma**2)
    return lam


def gaussian_coefficients(sigma, ell, rng, P=None):
    """Fourier coefficients of one Gaussian path (ordering of :class:`FourierProfile`)."""
    lam = gaussian_spectrum(sigma, ell, P)
    P = lam.size - 1
    xi = rng.standard_normal(2 * P + 1)
    a = np.empty(2 * P + 1)
    a[0] = math.sqrt(lam[0]) * xi[0]
    amp = np.sqrt(2.0 * lam[1:])
    a[1::2] = amp * xi[1::2]
    a[2::2] = amp * xi[2::2]
    return a


# ---------------------------------------------------------------- translation


def _fleishman_equations(v, S, K):
    b, c, d = v
    return [
        b * b + 6 * b * d + 2 * c * c + 15 * d * d - 1.0,
        2 * c * (b * b + 24 * b * d + 105 * d * d + 2) - S,
        24 * (b * d + c * c * (1 + b * b + 28 * b * d) + d * d * (12 + 48 * b * d + 141 * c * c + 225 * d * d))
        - (K - 3.0),
    ]


def is_monotone_cubic(coeffs):
    _, c1, c2, c3 = coeffs
    if c3 == 0.0:
        return c2 == 0.0 and c1 > 0
    return c3 > 0 and c2 * c2 < 3.0 * c1 * c3


@functools.lru_cache(maxsize=64)
def fit_translation(S, K, tol=1e-10):
    """Cubic ``g(z) = c0 + c1 z + c2 z^2 + c3 z^3`` with ``g(Z)`` of zero mean,
    unit variance, skewness ``S`` and kurtosis ``K`` for ``Z ~ N(0, 1)``.

    Raises
    ------
    ConfigError
        If ``K <= S^2 + 1`` (no distribution has these moments), if the
        moment equations have no real solution, or if the cubic is not
        monotone.
    """
    S, K = float(S), float(K)
    if not K > S * S + 1.0:
        raise ConfigError(f"infeasible moments: need K > S^2 + 1, got S={S}, K={K}")
    if S == 0.0 and K == 3.0:
        return (0.0, 1.0, 0.0, 0.0)
    best = None
    for guess in ((1.0, 0.0, 0.0), (0.9, S / 6.0, (K - 3.0) / 24.0), (0.8, 0.1 * S, 0.05), (0.6, 0.2 * S, 0.1)):
        sol = scipy.optimize.root(_fleishman_equations, guess, args=(S, K), method="hybr", tol=1e-14)
        b, c, d = sol.x
        if not sol.success or max(abs(e) for e in _fleishman_equations(sol.x, S, K)) > tol:
            continue
        if b < 0:
            b, d = -b, -d
        coeffs = (-c, b, c, d)
        if is_monotone_cubic(coeffs):
            return tuple(float(v) for v in coeffs)
        best = coeffs
    if best is None:
        raise ConfigError(f"moment equations have no real solution for S={S}, K={K}")
    raise ConfigError(f"translation cubic for S={S}, K={K} is not monotone (c2^2 >= 3 c1 c3)")


def translation_transform(u, coeffs):
    """``g(u) = c0 + c1 u + c2 u^2 + c3 u^3`` elementwise."""
    c0, c1, c2, c3 = coeffs
    u = np.asarray(u, dtype=float)
    return c0 + u * (c1 + u * (c2 + u * c3))


def translation_moments(coeffs):
    """Mean, variance, skewness and kurtosis of ``g(Z)``, ``Z ~ N(0, 1)``, in closed form."""
    poly = np.polynomial.Polynomial(coeffs)
    # E[Z^k] = (k-1)!! for even k, 0 for odd k
    def expect(q):
        c = q.coef
        return sum(c[k] * _double_factorial(k - 1) for k in range(0, c.size, 2))

    mean = expect(poly)
    cen = poly - mean
    var = expect(cen**2)
    return mean, var, expect(cen**3) / var**1.5, expect(cen**4) / var**2


def _double_factorial(n):
    return 1 if n <= 0 else n * _double_factorial(n - 2)


# ---------------------------------------------------------------- samples


class TranslatedProcess:
    """``sigma sqrt(v0) g(Z / sqrt(v0))`` for a unit-kernel Gaussian path ``Z``.

    ``v0`` is the periodized variance of the unit kernel, so ``Z / sqrt(v0)``
    has unit marginal variance and the identity cubic returns the Gaussian
    path of rms ``sigma`` unchanged.
    """

    smooth = True

    def __init__(self, gauss: FourierProfile, coeffs, sigma, v0):
        self.gauss = gauss
        self.coeffs = tuple(coeffs)
        self.sigma = float(sigma)
        self.s0 = math.sqrt(v0)

    def _g(self, u, order):
        c0, c1, c2, c3 = self.coeffs
        if order == 0:
            return c0 + u * (c1 + u * (c2 + u * c3))
        if order == 1:
            return c1 + u * (2 * c2 + 3 * c3 * u)
        return 2 * c2 + 6 * c3 * u

    def __call__(self, x):
        return self.sigma * self.s0 * self._g(self.gauss(x) / self.s0, 0)

    def derivative(self, x):
        u = self.gauss(x) / self.s0
        return self.sigma * self._g(u, 1) * self.gauss.derivative(x)

    def second_derivative(self, x):
        u = self.gauss(x) / self.s0
        zp = self.gauss.derivative(x)
        return self.sigma * (self._g(u, 2) * zp * zp / self.s0 + self._g(u, 1) * self.gauss.second_derivative(x))


@dataclass(frozen=True)
class SurfaceSpec:
    """Random interface ``f = f_tilde + P`` with rms ``sigma``, correlation length ``ell``,
    skewness ``S`` and kurtosis ``K`` (``S=0, K=3`` is Gaussian)."""

    deterministic: object = "ex1"
    sigma: float = 1.0 / 12.0
    ell: float = 2.0
    S: float = 0.0
    K: float = 3.0
    P: int | None = None

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ConfigError(f"sigma must be nonnegative, got {self.sigma}")
        if not self.ell > 0:
            raise ConfigError(f"ell must be positive, got {self.ell}")
        if not self.K > self.S * self.S + 1.0:
            raise ConfigError(f"infeasible moments: need K > S^2 + 1, got S={self.S}, K={self.K}")
        if isinstance(self.deterministic, str):
            preset_profile(self.deterministic)
        elif not callable(self.deterministic):
            raise ConfigError("deterministic must be a preset name or a callable profile")

    @property
    def gaussian(self):
        return self.S == 0.0 and self.K == 3.0

    @property
    def mean_profile(self):
        d = self.deterministic
        return preset_profile(d) if isinstance(d, str) else d

    def variance(self):
        """Marginal variance of the process (periodized kernel at lag 0)."""
        return float(periodized_se_covariance(self.sigma, self.ell, 0.0))

    def covariance(self, s, t=None):
        """Exact covariance matrix ``Cov(P(s_i), P(t_j))`` of the sampled process.

        Gaussian paths follow the periodized kernel.  For the translated
        process with unit-variance Gaussian correlation ``r``, the cubic
        ``g`` with ``c0 = -c2`` gives
        ``r (c1^2 + 6 c1 c3 + 9 c3^2) + 2 c2^2 r^2 + 6 c3^2 r^3``.
        """
        s = np.asarray(s, dtype=float)
        t = s if t is None else np.asarray(t, dtype=float)
        lag = s[:, None] - t[None, :]
        if self.gaussian:
            return periodized_se_covariance(self.sigma, self.ell, lag)
        v0 = float(periodized_se_covariance(1.0, self.ell, 0.0))
        r = periodized_se_covariance(1.0, self.ell, lag) / v0
        _, c1, c2, c3 = fit_translation(self.S, self.K)
        return self.sigma**2 * v0 * (r * (c1 * c1 + 6 * c1 * c3 + 9 * c3 * c3) + 2 * c2 * c2 * r**2 + 6 * c3 * c3 * r**3)

    def sample(self, m, seed):
        if self.gaussian:
            return sample_gaussian(self, m, seed)
        return sample_non_gaussian(self, m, seed)


class SurfaceSample:
    """One realization ``f(w_m; x) = f_tilde(x) + P_m(x)``."""

    def __init__(self, base, process, m, stream):
        self.base = base
        self.process = process
        self.m = m
        self.stream = stream
        self.smooth = getattr(base, "smooth", True)

    def __repr__(self):
        return f"SurfaceSample(m={self.m}, stream={self.stream})"

    def __call__(self, x):
        return self.base(x) + self.process(x)

    def derivative(self, x):
        return self.base.derivative(x) + self.process.derivative(x)

    def second_derivative(self, x):
        return self.base.second_derivative(x) + self.process.second_derivative(x)


def _surface_rng(seed, m):
    return substream(seed, SURFACE_STREAM, m)


def sample_gaussian(spec: SurfaceSpec, m: int, seed: int) -> SurfaceSample:
    if not spec.gaussian:
        raise ConfigError("sample_gaussian needs S=0, K=3")
    if spec.sigma == 0:
        proc = FourierProfile([0.0])
    else:
        P = spec.P if spec.P is not None else spectrum_size(spec.ell)
        proc = FourierProfile(gaussian_coefficients(spec.sigma, spec.ell, _surface_rng(seed, m), P))
    return SurfaceSample(spec.mean_profile, proc, m, (int(seed), SURFACE_STREAM, int(m)))


def sample_non_gaussian(spec: SurfaceSpec, m: int, seed: int) -> SurfaceSample:
    coeffs = fit_translation(spec.S, spec.K)
    if spec.sigma == 0:
        return SurfaceSample(spec.mean_profile, FourierProfile([0.0]), m, (int(seed), SURFACE_STREAM, int(m)))
    P = spec.P if spec.P is not None else spectrum_size(spec.ell)
    gauss = FourierProfile(gaussian_coefficients(1.0, spec.ell, _surface_rng(seed, m), P))
    v0 = float(periodized_se_covariance(1.0, spec.ell, 0.0))
    proc = TranslatedProcess(gauss, coeffs, spec.sigma, v0)
    return SurfaceSample(spec.mean_profile, proc, m, (int(seed), SURFACE_STREAM, int(m)))


def sample_process_values(spec: SurfaceSpec, seed: int, ms, x):
    """Values of ``P_m(x)`` for many samples at once, identical to ``spec.sample(m, seed).process(x)``.

    Returns an array of shape ``(len(ms), len(x))``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    ms = list(ms)
    if spec.sigma == 0:
        return np.zeros((len(ms), x.size))
    P = spec.P if spec.P is not None else spectrum_size(spec.ell)
    scale = spec.sigma if spec.gaussian else 1.0
    lam = gaussian_spectrum(scale, spec.ell, P)
    amp = np.empty(2 * P + 1)
    amp[0] = math.sqrt(lam[0])
    amp[1::2] = amp[2::2] = np.sqrt(2.0 * lam[1:])
    xi = np.stack([_surface_rng(seed, m).standard_normal(2 * P + 1) for m in ms])
    p = np.arange(1, P + 1)
    basis = np.empty((2 * P + 1, x.size))
    basis[0] = 1.0
    basis[1::2] = np.cos(np.outer(p, x))
    basis[2::2] = np.sin(np.outer(p, x))
    z = (xi * amp) @ basis
    if spec.gaussian:
        return z
    s0 = math.sqrt(float(periodized_se_covariance(1.0, spec.ell, 0.0)))
    return spec.sigma * s0 * translation_transform(z / s0, fit_translation(spec.S, spec.K))


def sample_marginal(spec: SurfaceSpec, seed: int, size: int):
    """``size`` independent draws of the pointwise value ``P(x)`` (the same law at every ``x``)."""
    rng = substream(seed, MARGINAL_STREAM)
    sd = math.sqrt(spec.variance())
    u = rng.standard_normal(int(size))
    if spec.gaussian:
        return sd * u
    return sd * translation_transform(u, fit_translation(spec.S, spec.K))


def export_profile_csv(path, profile, x=None, n=256):
    """Write columns ``x, f`` on ``x`` (default: ``n`` uniform points on ``[0, 2 pi)``)."""
    x = TWO_PI * np.arange(n) / n if x is None else np.asarray(x, dtype=float)
    y = np.asarray(profile(x), dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "f"])
        for a, b in zip(x, y):
            w.writerow([repr(float(a)), repr(float(b))])
