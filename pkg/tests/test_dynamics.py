import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acsma.dynamics import (
    IntegrationDiverged,
    acsma_derivative,
    connection_count,
    connection_count_general,
    droptail_price,
    end_to_end_price,
    equivalent_utility,
    integrate_system,
    multiconn_derivative,
    projection_plus,
    reno_derivative,
    wired_price,
)
from acsma.optimizer import alpha2, alpha_fair, solve_ep, solve_mp
from acsma.scenario import builtin_topology

R_APPENDIX = 2 ** (1 / 3) * 0.05 ** (2 / 3)


def test_projection():
    assert projection_plus(-1.0, 0.0) == 0.0
    assert projection_plus(-1.0, 0.5) == -1.0
    assert projection_plus(2.0, 0.0) == 2.0
    assert np.array_equal(projection_plus([-1.0, -1.0], [0.0, 1.0]), [0.0, -1.0])


def test_acsma_derivative():
    d = acsma_derivative([0.5, 0.1, 0.3], [0.2, 0.4, 0.3], [0.1, 0.0, 0.2], alpha=0.05)
    assert np.allclose(d, [0.015, 0.0, 0.0])
    # saturation holds the TA at r_max
    d = acsma_derivative([0.5], [0.2], [0.01], alpha=0.05, r_max=0.01)
    assert d[0] == 0.0
    with pytest.raises(ValueError):
        acsma_derivative([1, 2], [1], [1], 0.1)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 10), st.floats(0.5, 50), st.floats(0.01, 5), st.floats(1e-4, 1))
def test_multiconnection_is_reno_form(x, n, T, p):
    """``n/T^2 - x^2 p/(2n)`` equals ``(x^2/(2n)) (2 n^2/(T^2 x^2) - p)``."""
    lhs = multiconn_derivative(x, n, T, p)
    rhs = x**2 / (2 * n) * (2 * n**2 / (T**2 * x**2) - p)
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-12)
    assert reno_derivative(x, T, p) == pytest.approx(x**2 / 2 * (2 / (T**2 * x**2) - p), rel=1e-9, abs=1e-12)


def test_multiconnection_equilibrium_rate():
    # zero drift at x = sqrt(2) n / (T sqrt(p)); with n = kT this is sqrt(2) k / sqrt(p)
    k, T, p = 10.0, 0.3, 0.02
    n = connection_count(T, k)
    x = np.sqrt(2) * k / np.sqrt(p)
    assert multiconn_derivative(x, n, T, p) == pytest.approx(0.0, abs=1e-9)
    assert multiconn_derivative(0.0, n, T, p) > 0
    with pytest.raises(ValueError):
        multiconn_derivative(1.0, 0.0, 1.0, 0.1)


def test_prices():
    assert droptail_price(0.0, 0.5) == 0.0
    assert droptail_price(0.4, 0.5) == 0.0
    assert droptail_price(1.0, 0.25) == pytest.approx(0.75)
    assert wired_price(4.0, 2.0) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        wired_price(1.0, 0.0)
    with pytest.raises(ValueError):
        droptail_price(-1.0, 1.0)
    assert end_to_end_price([0.1, 0.2], [0.3]) == pytest.approx(0.6)
    assert end_to_end_price([0.1, 0.2], [0.3], exact=True) == pytest.approx(1 - 0.9 * 0.8 * 0.7)
    with pytest.raises(ValueError):
        end_to_end_price([1.5])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 0.3), min_size=1, max_size=5))
def test_linearised_price_upper_bounds_exact(prices):
    assert end_to_end_price(prices) >= end_to_end_price(prices, exact=True) - 1e-15


def test_connection_counts():
    assert connection_count(0.35, 10) == pytest.approx(3.5)
    assert connection_count(0.35, 10, integer=True) == 3.0
    assert connection_count(0.05, 10, integer=True) == 1.0
    with pytest.raises(ValueError):
        connection_count(0.0, 10)
    # the general rule reduces to kT for U = -1/x scaled by 2
    T, x, k = 0.4, 0.7, 10.0
    mu = alpha2(2.0).marginal(x)
    assert connection_count_general(T, x, mu, k) == pytest.approx(k * T)
    with pytest.raises(ValueError):
        connection_count_general(T, x, -1.0, k)


def test_equivalent_utility():
    u = equivalent_utility(10)
    assert u.kind == "alpha2" and u.weight == pytest.approx(200.0)
    v = equivalent_utility(3, alpha_fair(1.0))
    assert v.weight == pytest.approx(9.0) and v.alpha == 1.0


@pytest.mark.parametrize("name", ["a", "d"])
def test_proposed_fixed_point_solves_scaled_problem(name):
    sc = builtin_topology(name)
    tr = integrate_system(sc, "proposed", horizon=1e7, method="implicit", sample_every=100)
    ref = solve_mp(sc, beta=2000, utility=equivalent_utility(10))
    assert np.allclose(tr.final.x, ref.x_star, rtol=1e-4)
    assert np.allclose(tr.final.r, ref.r_star, rtol=1e-3)


def test_proposed_wired_fixed_point_solves_scaled_ep():
    sc = builtin_topology("e")
    tr = integrate_system(sc, "proposed_wired", horizon=1e7, method="implicit", sample_every=100)
    ref = solve_ep(sc, beta=2000, utility=equivalent_utility(10))
    assert np.allclose(tr.final.x, ref.x_star, rtol=1e-4)
    assert np.allclose(tr.final.p_w, ref.p_w_star, atol=1e-4)


def test_general_utility_rule():
    sc = builtin_topology("a")
    u = alpha_fair(1.0)
    tr = integrate_system(sc, "proposed", horizon=1e7, method="implicit", utility=u, sample_every=100)
    ref = solve_mp(sc, beta=2000, utility=equivalent_utility(10, u))
    assert np.allclose(tr.final.x, ref.x_star, rtol=1e-3)


def test_integrators_agree_on_transient():
    sc = builtin_topology("a")
    ref = integrate_system(sc, "proposed", horizon=0.2, dt=1e-4, method="implicit", rtol=1e-6, atol=1e-10)
    rk4 = integrate_system(sc, "proposed", horizon=0.2, dt=1e-3, method="rk4")
    eul = integrate_system(sc, "proposed", horizon=0.2, dt=1e-4, method="euler", sample_every=100)
    assert np.allclose(rk4.final.x, ref.final.x, rtol=1e-3)
    assert np.allclose(eul.final.x, ref.final.x, rtol=5e-3)
    assert np.allclose(rk4.final.r, ref.final.r, rtol=1e-3)


def test_appendix_b_equal_ta_at_small_beta():
    tr = integrate_system(builtin_topology("a"), "appendixB", horizon=1e5, dt=0.1, beta=10, method="implicit")
    assert np.allclose(tr.final.r, R_APPENDIX, rtol=1e-3)


def test_appendix_b_starved_link_lags_at_large_beta():
    """At beta = 800 the starved link's equilibrium needs an astronomically
    small rate, so its TA is still far from the common value at t = 1e5
    while the other three links have settled."""
    tr = integrate_system(builtin_topology("a"), "appendixB", horizon=1e5, dt=0.1, beta=800, method="implicit")
    r = tr.final.r
    assert np.allclose(r[[0, 2, 3]], R_APPENDIX, rtol=1e-3)
    assert r[1] > 1.5 * R_APPENDIX
    assert tr.final.x[1] < 1e-3


def test_reno_over_lcsma_starves_link_two():
    sc = builtin_topology("a")
    tr = integrate_system(sc, "reno_over_lcsma", horizon=1e3, method="implicit")
    assert np.all(tr.r == sc.params.r_max)
    y = tr.final.y
    assert y[1] < 0.01 * y[0]


def test_integer_connections_update_every_interval():
    sc = builtin_topology("a")
    tr = integrate_system(sc, "proposed", horizon=20, dt=1e-3, method="implicit", integer_connections=True)
    updates = [e for e in tr.events if e[1] == "connection_update"]
    assert [round(e[0], 9) for e in updates] == [5.0, 10.0, 15.0, 20.0]
    assert np.all(tr.n == np.floor(tr.n)) and np.all(tr.n >= 1)


def test_saturation_events_and_ceiling():
    sc = builtin_topology("a")
    tr = integrate_system(sc, "proposed", horizon=50, dt=1e-3, method="implicit", r_max=0.5)
    assert tr.r.max() <= 0.5
    kinds = {e[1] for e in tr.events}
    assert "saturation_start" in kinds


def test_steady_state_stop():
    sc = builtin_topology("a")
    tr = integrate_system(sc, "proposed", horizon=1e9, method="implicit", steady_tol=1e-9)
    assert tr.events[-1][1] == "steady_state"
    assert tr.times[-1] < 1e9


def test_divergence_is_reported():
    with pytest.raises(IntegrationDiverged) as err:
        integrate_system(builtin_topology("a"), "proposed", horizon=1.0, dt=0.1, x0=5e9)
    assert np.all(np.isfinite(err.value.state))


def test_argument_validation():
    sc = builtin_topology("a")
    with pytest.raises(ValueError):
        integrate_system(sc, "bogus", horizon=1, dt=0.1)
    with pytest.raises(ValueError):
        integrate_system(sc, "proposed", horizon=1, dt=0.1, method="leapfrog")
    with pytest.raises(ValueError):
        integrate_system(builtin_topology("e"), "proposed", horizon=1, dt=0.1)
    with pytest.raises(ValueError):
        integrate_system(builtin_topology("d"), "appendixB", horizon=1, dt=0.1)


def test_trajectory_csv(tmp_path):
    sc = builtin_topology("e")
    tr = integrate_system(sc, "proposed_wired", horizon=1.0, dt=0.01, method="rk4")
    path = tmp_path / "traj.csv"
    tr.to_csv(path)
    rows = list(csv.reader(path.open()))
    assert rows[0][0] == "t"
    assert "flow:a-g:x" in rows[0] and "link:ad:r" in rows[0] and "wired:fg:p" in rows[0]
    assert len(rows) == len(tr) + 1
    assert float(rows[-1][0]) == pytest.approx(1.0)
