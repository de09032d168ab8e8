import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from randgrating.exceptions import ConfigError, WoodAnomalyError
from randgrating.modes import (
    DEFAULT_ANGLES,
    LineHeights,
    MediumParams,
    Schedule,
    check_wood,
    eta_for,
    make_mode_table,
    require_no_wood,
    vertical_wavenumber,
    z_of,
)


def test_zeroth_order_normal_incidence(medium):
    ctx, t = make_mode_table(medium, 2.5, 0.0, 15)
    i = 15
    assert t.alpha_n[i] == 0.0
    assert t.beta_n[i] == pytest.approx(2.5)


def test_propagating_and_evanescent_orders(medium):
    _, t = make_mode_table(medium, 2.5, 0.0, 15)
    assert t.alpha_n[17] == pytest.approx(2.0)
    assert t.beta_n[17] == pytest.approx(1.5)
    assert t.beta_n[18].real == 0.0
    assert t.beta_n[18].imag == pytest.approx(1.6583124, abs=1e-7)


def test_solid_wavenumbers(medium):
    ctx, _ = make_mode_table(medium, 1.0, 0.3, 5)
    assert ctx.omega == 5.0
    assert ctx.kappa1m == pytest.approx(2.8867513, abs=1e-7)
    assert ctx.kappa2m == pytest.approx(5.0)


def test_outgoing_branch_is_upper_half_plane():
    k = 1.7
    b = vertical_wavenumber(k, np.linspace(-6, 6, 241))
    assert np.all(b.real >= 0) and np.all(b.imag >= 0)
    assert np.all((b.real == 0) | (b.imag == 0))


def test_wood_exact_coincidence(medium):
    r = check_wood(*make_mode_table(medium, 2.0, 0.0, 15))
    assert not r.ok
    assert {n for n, branch, _ in r.offenders if branch == "acoustic"} == {-2, 2}
    with pytest.raises(WoodAnomalyError) as exc:
        require_no_wood(*make_mode_table(medium, 2.0, 0.0, 15))
    assert "n=2" in str(exc.value) and "theta" in str(exc.value)


def test_wood_clear_and_oblique(medium):
    assert check_wood(*make_mode_table(medium, 2.5, 0.0, 15)).ok
    r = check_wood(*make_mode_table(medium, 2.0, math.pi / 6, 15))
    assert (1, "acoustic") in {(n, b) for n, b, _ in r.offenders}


def test_default_angles_clear_every_schedule_wavenumber(medium):
    for k in [0.5, 1, 2, 3, 4, 5, 6, 7, 8]:
        for th in DEFAULT_ANGLES:
            require_no_wood(*make_mode_table(medium, k, th, 25))


@pytest.mark.parametrize("kappa, expected", [(0.5, 0), (2, 2), (7.9, 7)])
def test_z_of(kappa, expected):
    assert z_of(kappa) == expected


@pytest.mark.parametrize(
    "kj, kappas, expected",
    [(2, [0.5, 1, 2], 2.3323615e-7), (0.5, [0.5, 1, 2], 1.25e-6), (8, [0.5] + list(range(1, 9)), 1.1663508e-8)],
)
def test_eta_rule(kj, kappas, expected):
    sch = Schedule(kappas, [1] * len(kappas))
    assert eta_for(kj, sch) == pytest.approx(expected, rel=1e-6)


def test_eta_rule_needs_two_stages():
    with pytest.raises(ConfigError):
        eta_for(0.5, Schedule([0.5], [1]))


def test_paper_sample_schedule():
    assert Schedule.paper_samples(3) == (100, 200, 1000)
    sch = Schedule([0.5, 1, 2], Schedule.paper_samples(3))
    assert sch.M == 1000 and sch.Z == (0, 1, 2) and sch.Q == 3


@pytest.mark.parametrize(
    "kw",
    [
        dict(kappas=[1, 0.5], M_per_stage=[1, 1]),
        dict(kappas=[0.5, 1], M_per_stage=[2, 1]),
        dict(kappas=[0.5], M_per_stage=[1], angles=[math.pi / 2]),
        dict(kappas=[0.5], M_per_stage=[1], eps=0.0),
        dict(kappas=[0.5], M_per_stage=[1], N=15, N_prime=10),
    ],
)
def test_schedule_rejects(kw):
    with pytest.raises(ConfigError):
        Schedule(**kw)


def test_medium_rejects_nonpositive_mu():
    with pytest.raises(ConfigError):
        MediumParams(mu=0.0)


def test_line_heights_order():
    with pytest.raises(ConfigError):
        LineHeights(1.0, 1.5, 0.0, -0.5)
    h = LineHeights.auto(0.0, 0.6, 1 / 12)
    assert h.b_minus < h.a_minus < 0.0 and 0.6 < h.a_plus < h.b_plus


@given(
    kappa=st.floats(0.1, 8.0),
    theta=st.floats(-1.4, 1.4),
    N=st.integers(1, 20),
)
def test_mirror_symmetry(kappa, theta, N):
    m = MediumParams()
    _, t1 = make_mode_table(m, kappa, theta, N)
    _, t2 = make_mode_table(m, kappa, -theta, N)
    np.testing.assert_allclose(t1.alpha_n, -t2.alpha_n[::-1], atol=1e-12)
    np.testing.assert_allclose(t1.beta_2n, t2.beta_2n[::-1], atol=1e-10)


@given(kappa=st.floats(0.1, 8.0), theta=st.floats(-1.4, 1.4), N=st.integers(1, 20))
def test_dispersion_relation(kappa, theta, N):
    ctx, t = make_mode_table(MediumParams(), kappa, theta, N)
    for k, b in ((ctx.kappa, t.beta_n), (ctx.kappa1m, t.beta_1n), (ctx.kappa2m, t.beta_2n)):
        np.testing.assert_allclose(t.alpha_n**2 + b**2, k * k, rtol=1e-10, atol=1e-9)
