import math

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

import randgrating
from randgrating import EnsembleStatistics, InterfaceReconstructor
from randgrating.exceptions import ConfigError
from randgrating.forward import synthesize_dataset
from randgrating.modes import MediumParams, Schedule
from randgrating.pipeline import group_by_stage
from randgrating.surface import SurfaceSpec


def test_params_and_clone():
    est = InterfaceReconstructor(kappas=(0.5, 1.0), samples=(2, 3), T=5)
    params = est.get_params()
    assert params["kappas"] == (0.5, 1.0) and params["T"] == 5
    c = clone(est).set_params(T=7)
    assert c.T == 7 and est.T == 5
    assert EnsembleStatistics(n=51).get_params()["n"] == 51


@pytest.fixture(scope="module")
def records():
    sch = Schedule([0.5, 1.0], [2, 3], N=10, seed=2)
    recs = synthesize_dataset(SurfaceSpec("ex1", 1 / 24, 2.0), sch, MediumParams(), 1.2)
    return group_by_stage(recs, 3)


def test_reconstructor_fit_predict(records):
    est = InterfaceReconstructor(kappas=(0.5, 1.0), samples=(2, 3), b_plus=1.2, T=10, N=10, eta0=3e-4)
    with pytest.raises(NotFittedError):
        est.predict([0.0])
    est.fit(records)
    assert est.coef_.shape == (3, 3) and est.n_samples_ == 3
    assert all(s["ok"] for s in est.status_)
    x = np.linspace(0, 2 * math.pi, 9)
    assert est.predict(x).shape == (3, 9)
    np.testing.assert_allclose(est.mean_coef_, est.coef_.mean(axis=0))
    # stage 0 moves the flat start b_plus down toward the interface
    assert est.stage_means_[0][0] < 1.2


def test_reconstructor_validates_records(records):
    est = InterfaceReconstructor(kappas=(0.5, 1.0), samples=(2, 3), b_plus=1.2, N=10)
    with pytest.raises(TypeError):
        est.fit([1, 2])
    bad = dict(records)
    bad[(0, 0)] = bad[(0, 0)][:2]
    with pytest.raises(ConfigError, match="angles"):
        est.fit(bad)
    bad = dict(records)
    bad[(0, 5)] = bad[(0, 0)]
    with pytest.raises(ConfigError, match="stage"):
        est.fit(bad)
    bad = dict(records)
    bad[(0, 0)] = [np.full(21, np.nan)] * 3
    with pytest.raises(ValueError, match="non-finite"):
        est.fit(bad)
    with pytest.raises(ConfigError):
        InterfaceReconstructor(b_plus=-1.0).fit(records)


def test_ensemble_statistics(rng):
    A = np.column_stack([0.3 + 0.05 * rng.standard_normal(400), 0.1 + 0.01 * rng.standard_normal(400), np.zeros(400)])
    est = EnsembleStatistics(n=41).fit(A)
    assert est.covariance_.shape == (41, 41) and est.n_samples_ == 400
    score = est.score(lambda x: 0.3 + 0.1 * np.cos(x), cov_true=lambda x: 0.0025 + 1e-4 * np.outer(np.cos(x), np.cos(x)))
    assert score["err_mean"] < 0.05 and score["err_cov"] < 0.3
    d = est.density(math.pi, np.array([0.2]))
    assert d.shape == (1,) and d[0] > 0
    with pytest.raises(KeyError):
        est.density(1.0, [0.0])
    with pytest.raises(ValueError):
        EnsembleStatistics().fit(np.zeros((3, 2)))
    with pytest.raises(ValueError):
        EnsembleStatistics().fit(np.full((3, 3), np.nan))


def test_public_api():
    assert randgrating.__version__ == "0.1.0"
    for name in ("forward_solve", "run_tsmcc", "SurfaceSpec", "Schedule", "load_config"):
        assert hasattr(randgrating, name)
