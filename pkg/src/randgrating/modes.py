"""Dispersion relations, Rayleigh mode tables and continuation schedules.

Everything here is an immutable value object; the forward and inverse
solvers only ever read from them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import ConfigError, WoodAnomalyError

PERIOD = 2.0 * math.pi
WOOD_TOL = 1e-6
WOOD_SUGGESTED_SHIFT = 1e-3
# zero incidence meets a Wood anomaly at every integer wavenumber
DEFAULT_ANGLES = (-math.pi / 4, 0.1875, math.pi / 4)


@dataclass(frozen=True)
class MediumParams:
    """Fluid (above) and isotropic elastic solid (below) constants."""

    rho_f: float = 1.0
    rho: float = 1.0
    lam: float = 1.0
    mu: float = 1.0
    c: float = 5.0

    def __post_init__(self):
        if not self.mu > 0:
            raise ConfigError(f"mu must be positive, got {self.mu}")
        if not self.lam + self.mu > 0:
            raise ConfigError(f"lambda + mu must be positive, got {self.lam + self.mu}")
        for name in ("rho_f", "rho", "c"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")

    def omega(self, kappa):
        return kappa * self.c

    def compression_wavenumber(self, omega):
        return omega * math.sqrt(self.rho / (self.lam + 2.0 * self.mu))

    def shear_wavenumber(self, omega):
        return omega * math.sqrt(self.rho / self.mu)


@dataclass(frozen=True)
class LineHeights:
    """Heights of the measurement lines ``b_minus < a_minus < f < a_plus < b_plus``."""

    b_plus: float
    a_plus: float
    a_minus: float
    b_minus: float

    def __post_init__(self):
        if not (self.b_minus < self.a_minus < self.a_plus < self.b_plus):
            raise ConfigError(
                "line heights must satisfy b- < a- < a+ < b+, got "
                f"{self.b_minus}, {self.a_minus}, {self.a_plus}, {self.b_plus}"
            )

    @classmethod
    def auto(cls, fmin, fmax, sigma):
        """Default heights leaving a 3-sigma band plus margin around the profile."""
        b_plus = fmax + 3.0 * sigma + 0.5
        a_minus = fmin - 3.0 * sigma - 0.25
        return cls(b_plus=b_plus, a_plus=b_plus - 0.25, a_minus=a_minus, b_minus=a_minus - 0.25)

    def check_profile(self, fmin, fmax):
        if not (self.a_minus < fmin and fmax < self.a_plus):
            raise ConfigError(
                f"profile range [{fmin:.4g}, {fmax:.4g}] leaves the strip "
                f"({self.a_minus:.4g}, {self.a_plus:.4g})"
            )


@dataclass(frozen=True)
class WaveContext:
    medium: MediumParams
    kappa: float
    theta: float
    N: int
    omega: float
    alpha: float
    beta: float
    kappa1m: float
    kappa2m: float
    heights: LineHeights | None = None
    Lambda: float = PERIOD

    @property
    def b_plus(self):
        return None if self.heights is None else self.heights.b_plus

    @property
    def b_minus(self):
        return None if self.heights is None else self.heights.b_minus

    @property
    def a_plus(self):
        return None if self.heights is None else self.heights.a_plus

    @property
    def a_minus(self):
        return None if self.heights is None else self.heights.a_minus


@dataclass(frozen=True)
class ModeTable:
    """Horizontal and vertical wavenumbers for orders ``n = -N..N``."""

    n: np.ndarray
    alpha_n: np.ndarray
    beta_n: np.ndarray
    beta_1n: np.ndarray
    beta_2n: np.ndarray

    def __len__(self):
        return self.n.size

    def propagating(self, branch="acoustic"):
        beta = {"acoustic": self.beta_n, "compression": self.beta_1n, "shear": self.beta_2n}[branch]
        return beta.imag == 0.0


def vertical_wavenumber(k, alpha_n):
    """Outgoing branch of ``sqrt(k^2 - alpha_n^2)``: real >= 0, or ``i*s`` with ``s > 0``."""
    alpha_n = np.asarray(alpha_n, dtype=float)
    d = k * k - alpha_n * alpha_n
    return np.where(d >= 0.0, np.sqrt(np.abs(d)) + 0j, 1j * np.sqrt(np.abs(d)))


def make_mode_table(medium: MediumParams, kappa: float, theta: float, N: int, heights=None):
    """Build the wave context and Rayleigh mode table at one ``(kappa, theta)``.

    Wood anomalies are not raised here; call :func:`check_wood` or
    :func:`require_no_wood` on the result.
    """
    if not kappa > 0:
        raise ConfigError(f"kappa must be positive, got {kappa}")
    if not abs(theta) < math.pi / 2:
        raise ConfigError(f"incidence angle must lie in (-pi/2, pi/2), got {theta}")
    if int(N) != N or N < 1:
        raise ConfigError(f"truncation order N must be a positive integer, got {N}")
    N = int(N)
    omega = medium.omega(kappa)
    ctx = WaveContext(
        medium=medium,
        kappa=float(kappa),
        theta=float(theta),
        N=N,
        omega=omega,
        alpha=kappa * math.sin(theta),
        beta=kappa * math.cos(theta),
        kappa1m=medium.compression_wavenumber(omega),
        kappa2m=medium.shear_wavenumber(omega),
        heights=heights,
    )
    n = np.arange(-N, N + 1)
    alpha_n = ctx.alpha + 2.0 * math.pi * n / ctx.Lambda
    table = ModeTable(
        n=n,
        alpha_n=alpha_n,
        beta_n=vertical_wavenumber(ctx.kappa, alpha_n),
        beta_1n=vertical_wavenumber(ctx.kappa1m, alpha_n),
        beta_2n=vertical_wavenumber(ctx.kappa2m, alpha_n),
    )
    return ctx, table


@dataclass(frozen=True)
class WoodReport:
    kappa: float
    theta: float
    tol: float
    min_gap: float
    offenders: tuple = ()

    @property
    def ok(self):
        return not self.offenders

    def __bool__(self):
        return self.ok

    def describe(self):
        if self.ok:
            return f"no Wood anomaly at kappa={self.kappa}, theta={self.theta} (min gap {self.min_gap:.3g})"
        items = ", ".join(f"n={n} ({branch}, gap {gap:.2e})" for n, branch, gap in self.offenders)
        return (
            f"Wood anomaly at kappa={self.kappa}, theta={self.theta}: {items}; "
            f"try theta={self.theta + WOOD_SUGGESTED_SHIFT:.6g}"
        )


def check_wood(ctx: WaveContext, table: ModeTable, tol: float = WOOD_TOL) -> WoodReport:
    """Report every order whose ``|alpha_n|`` lies within ``tol`` of a branch wavenumber."""
    if not tol > 0:
        raise ConfigError("tol must be positive")
    offenders = []
    min_gap = math.inf
    for branch, k in (("acoustic", ctx.kappa), ("compression", ctx.kappa1m), ("shear", ctx.kappa2m)):
        gaps = np.abs(np.abs(table.alpha_n) - k)
        min_gap = min(min_gap, float(gaps.min()))
        for i in np.flatnonzero(gaps <= tol):
            offenders.append((int(table.n[i]), branch, float(gaps[i])))
    return WoodReport(ctx.kappa, ctx.theta, tol, min_gap, tuple(offenders))


def require_no_wood(ctx, table, tol=WOOD_TOL):
    report = check_wood(ctx, table, tol)
    if not report.ok:
        raise WoodAnomalyError(report)
    return report


def z_of(kappa: float) -> int:
    """Number of Fourier modes resolved at wavenumber ``kappa``."""
    if not kappa > 0:
        raise ConfigError(f"kappa must be positive, got {kappa}")
    return int(math.floor(kappa))


@dataclass(frozen=True)
class Schedule:
    """Wavenumber continuation schedule and solver parameters.

    ``M_per_stage[j]`` is the number of leading samples reconstructed at
    ``kappas[j]``; the last entry is the total sample count.
    """

    kappas: tuple
    M_per_stage: tuple
    angles: tuple = DEFAULT_ANGLES
    eps: float = 1e-3
    gamma: float = 1e-6
    delta: float = 1e-6
    T: int = 200
    tau: float = 0.005
    N: int = 15
    N_prime: int | None = None
    seed: int = 0
    eta0: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "kappas", tuple(float(k) for k in self.kappas))
        object.__setattr__(self, "M_per_stage", tuple(int(m) for m in self.M_per_stage))
        object.__setattr__(self, "angles", tuple(float(t) for t in self.angles))
        if self.N_prime is None:
            object.__setattr__(self, "N_prime", self.N)
        k = np.asarray(self.kappas)
        if k.size == 0 or np.any(k <= 0) or np.any(np.diff(k) <= 0):
            raise ConfigError(f"kappas must be positive and strictly increasing, got {self.kappas}")
        if len(self.M_per_stage) != k.size:
            raise ConfigError("M_per_stage must have one entry per wavenumber")
        m = np.asarray(self.M_per_stage)
        if np.any(m < 1) or np.any(np.diff(m) < 0):
            raise ConfigError(f"M_per_stage must be positive and nondecreasing, got {self.M_per_stage}")
        if not self.angles or any(not abs(t) < math.pi / 2 for t in self.angles):
            raise ConfigError(f"angles must lie in (-pi/2, pi/2), got {self.angles}")
        if not self.eps > 0 or not self.gamma > 0:
            raise ConfigError("eps and gamma must be positive")
        if self.delta < 0 or self.T < 0 or self.tau < 0:
            raise ConfigError("delta, T and tau must be nonnegative")
        if self.N < 1 or self.N_prime < self.N:
            raise ConfigError("need N >= 1 and N_prime >= N")
        if not self.eta0 > 0:
            raise ConfigError("eta0 must be positive")

    @property
    def Z(self):
        return tuple(z_of(k) for k in self.kappas)

    @property
    def Q(self):
        return len(self.kappas)

    @property
    def M(self):
        return self.M_per_stage[-1]

    @classmethod
    def paper_samples(cls, Q, M_total=1000, step=100):
        """``M_j = step*j`` for ``j < Q`` and ``M_Q = M_total``."""
        return tuple([step * j for j in range(1, Q)] + [M_total])


def eta_for(kappa_j: float, schedule: Schedule) -> float:
    """Landweber relaxation ``eta0 / (kappa_j + kappa_1 + kappa_2)^3``.

    ``kappa_1, kappa_2`` are the first two schedule wavenumbers.
    """
    if schedule.Q < 2:
        raise ConfigError("the relaxation rule needs at least two schedule wavenumbers")
    k1, k2 = schedule.kappas[:2]
    return schedule.eta0 / (kappa_j + k1 + k2) ** 3
