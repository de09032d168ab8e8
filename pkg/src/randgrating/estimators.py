"""scikit-learn style wrappers around the reconstruction and the ensemble statistics."""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import stats
from ._validation import check_coefficients, check_positive, check_records
from .modes import DEFAULT_ANGLES, MediumParams, Schedule
from .surface import FourierProfile


class InterfaceReconstructor(BaseEstimator):
    """Multi-frequency Monte Carlo reconstruction of random interface samples.

    ``fit`` takes measured coefficients ``records[(m, j)]`` (one array of
    ``p_n^d`` per incident angle) and stores the reconstructed Fourier
    coefficients of every sample.

    Attributes
    ----------
    coef_ : ndarray, shape (M, 2 z_Q + 1)
    stage_means_ : list of ndarray
    status_ : list of dict
    """

    def __init__(
        self,
        kappas=(0.5, 1.0, 2.0),
        samples=(1,),
        angles=DEFAULT_ANGLES,
        b_plus=1.5,
        eps=1e-3,
        gamma=1e-6,
        delta=1e-6,
        T=200,
        N=15,
        N_prime=None,
        eta0=1e-5,
        rho_f=1.0,
        rho=1.0,
        lam=1.0,
        mu=1.0,
        c=5.0,
        workers=1,
    ):
        self.kappas = kappas
        self.samples = samples
        self.angles = angles
        self.b_plus = b_plus
        self.eps = eps
        self.gamma = gamma
        self.delta = delta
        self.T = T
        self.N = N
        self.N_prime = N_prime
        self.eta0 = eta0
        self.rho_f = rho_f
        self.rho = rho
        self.lam = lam
        self.mu = mu
        self.c = c
        self.workers = workers

    def _schedule(self):
        samples = tuple(self.samples)
        if len(samples) == 1 and len(self.kappas) > 1:
            samples = samples * len(self.kappas)
        return Schedule(
            kappas=self.kappas, M_per_stage=samples, angles=self.angles, eps=self.eps, gamma=self.gamma,
            delta=self.delta, T=self.T, N=self.N, N_prime=self.N_prime, eta0=self.eta0,
        )

    def _medium(self):
        return MediumParams(rho_f=self.rho_f, rho=self.rho, lam=self.lam, mu=self.mu, c=self.c)

    def fit(self, X, y=None, exclude=()):
        from .inverse import run_tsmcc

        sch = self._schedule()
        med = self._medium()
        b_plus = check_positive("b_plus", self.b_plus, strict=False)
        recs = check_records(X, sch.Q, len(sch.angles), sch.M_per_stage)
        out = run_tsmcc(recs, sch, med, b_plus, workers=self.workers, exclude=exclude)
        self.coef_ = out["coeffs"]
        self.stage_means_ = out["stage_means"]
        self.status_ = out["status"]
        self.n_samples_ = self.coef_.shape[0]
        return self

    @property
    def mean_coef_(self):
        check_is_fitted(self, "coef_")
        ok = np.array([s["ok"] for s in self.status_])
        return self.coef_[ok].mean(axis=0)

    def predict(self, x):
        """Reconstructed profiles on ``x``, one row per sample (NaN rows for excluded ones)."""
        check_is_fitted(self, "coef_")
        x = np.asarray(x, dtype=float)
        return np.stack([FourierProfile(a)(x) if np.all(np.isfinite(a)) else np.full(x.shape, np.nan) for a in self.coef_])


class EnsembleStatistics(BaseEstimator):
    """Mean, covariance and pointwise densities of an ensemble of profiles.

    Parameters
    ----------
    n : int
        Size of the uniform grid on ``[0, 2 pi]`` (both ends included).
    bandwidth : float, optional
        Fixed KDE bandwidth; Silverman's rule when ``None``.
    locations : tuple of float
        Points where the pointwise density is estimated.
    """

    def __init__(self, n=stats.DEFAULT_N, bandwidth=None, locations=stats.KDE_LOCATIONS):
        self.n = n
        self.bandwidth = bandwidth
        self.locations = locations

    def fit(self, X, y=None):
        A = check_coefficients(X)
        self.grid_ = stats.stats_grid(self.n)
        self.abar_, self.mean_curve_ = stats.mean_profile(A, self.grid_)
        curves = stats.sample_curves(A, self.grid_)
        self.covariance_ = stats.covariance_matrix(curves, self.mean_curve_)
        self.kde_ = {}
        if A.shape[0] >= 2 or self.bandwidth is not None:
            at = stats.sample_curves(A, np.asarray(self.locations, dtype=float))
            self.kde_ = {float(loc): stats.kde(at[:, i], self.bandwidth) for i, loc in enumerate(self.locations)}
        self.n_samples_ = A.shape[0]
        return self

    def score(self, ftilde, cov_true=None):
        """``err_mean`` against ``ftilde``, and ``err_cov`` when ``cov_true`` is given."""
        check_is_fitted(self, "abar_")
        out = {"err_mean": stats.err_mean(self.mean_curve_, ftilde, self.n)}
        if cov_true is not None:
            C = cov_true(self.grid_) if callable(cov_true) else cov_true
            out["err_cov"] = stats.err_cov(self.covariance_, C)
        return out

    def density(self, location, values):
        check_is_fitted(self, "kde_")
        for loc, est in self.kde_.items():
            if math.isclose(loc, location, abs_tol=1e-12):
                return est(values)
        raise KeyError(f"no density estimated at {location}")
