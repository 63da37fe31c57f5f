import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acsma.csma import (
    LCSMA_RHO,
    ScheduleDistribution,
    as_ta_vector,
    entropy,
    lcsma_throughput,
    log_partition,
    log_partition_gradient,
    log_partition_hessian,
    service_rates,
    stationary_distribution,
)
from acsma.graph import ConflictGraph, enumerate_independent_sets
from oracles import link_rates, product_form

A_EDGES = [(0, 1), (1, 2), (1, 3), (2, 3)]
FAM_A = enumerate_independent_sets(ConflictGraph(4, A_EDGES))


@st.composite
def instances(draw, max_links=6):
    n = draw(st.integers(1, max_links))
    pairs = [(u, v) for u in range(n) for v in range(u + 1, n)]
    edges = draw(st.lists(st.sampled_from(pairs), unique=True)) if pairs else []
    beta = draw(st.floats(0.5, 50))
    r = np.array(draw(st.lists(st.floats(0, 3), min_size=n, max_size=n))) / beta
    return n, edges, beta, r


@settings(max_examples=100, deadline=None)
@given(instances())
def test_product_form_matches_direct_sum(inst):
    n, edges, beta, r = inst
    fam = enumerate_independent_sets(ConflictGraph(n, edges))
    dist = stationary_distribution(fam, r, beta)
    oracle = product_form(n, edges, r, beta)
    for s, p in zip(fam.as_sets(), dist.tau):
        assert p == pytest.approx(oracle[s], rel=1e-10, abs=1e-15)
    assert np.allclose(service_rates(fam, r, beta), link_rates(n, edges, r, beta), rtol=1e-10, atol=1e-15)


def test_large_exponents_stay_finite():
    r = np.array([10.0, 0.0, 9.0, 9.5])
    dist = stationary_distribution(FAM_A, r, 2000.0)
    assert np.all(np.isfinite(dist.tau)) and dist.tau.sum() == pytest.approx(1.0, abs=1e-12)
    # the heaviest schedule {1, 4}
    assert dist.tau[FAM_A.index(0b1001)] == pytest.approx(1.0)
    assert math.isfinite(log_partition(FAM_A, r, 2000.0))


def test_zero_ta_is_uniform():
    dist = stationary_distribution(FAM_A, np.zeros(4), 3.0)
    assert np.allclose(dist.tau, 1 / 7)
    assert log_partition(FAM_A, 0.0, 3.0) == pytest.approx(math.log(7) / 3.0)
    assert entropy(dist.tau) == pytest.approx(math.log(7))


def test_lcsma_constants():
    rho = LCSMA_RHO
    y = lcsma_throughput(FAM_A, rho)
    # closed forms from summing rho^|i| over the seven schedules
    z = 1 + 4 * rho + 2 * rho**2
    assert y[1] == pytest.approx(rho / z, rel=1e-12)
    assert y[0] == pytest.approx((rho + 2 * rho**2) / z, rel=1e-12)
    assert y[1] == pytest.approx(0.112027, abs=5e-7)  # frozen value
    # a single access intensity is the same as equal TA with beta r = ln rho
    assert np.allclose(y, service_rates(FAM_A, math.log(rho), 1.0))


def test_lcsma_star_closed_form():
    fam = enumerate_independent_sets(ConflictGraph(4, [(0, 1), (0, 2), (0, 3)]))
    rho = LCSMA_RHO
    y = lcsma_throughput(fam, rho)
    assert y[0] == pytest.approx(rho / (rho + (1 + rho) ** 3), rel=1e-12)
    assert y[0] == pytest.approx(0.061789, abs=1e-6)


@settings(max_examples=50, deadline=None)
@given(instances(5))
def test_gradient_and_hessian_by_finite_differences(inst):
    n, edges, beta, r = inst
    fam = enumerate_independent_sets(ConflictGraph(n, edges))
    h = 1e-6
    grad = log_partition_gradient(fam, r, beta)
    hess = log_partition_hessian(fam, r, beta)
    for l in range(n):
        e = np.zeros(n)
        e[l] = h
        fd = (log_partition(fam, r + e, beta) - log_partition(fam, r - e, beta)) / (2 * h)
        assert fd == pytest.approx(grad[l], rel=1e-5, abs=1e-8)
        fd2 = (log_partition_gradient(fam, r + e, beta) - log_partition_gradient(fam, r - e, beta)) / (2 * h)
        assert np.allclose(fd2, hess[:, l], rtol=1e-4, atol=1e-6 * max(1.0, beta))
    assert np.allclose(hess, hess.T)
    assert np.linalg.eigvalsh(hess).min() > -1e-9 * max(1.0, beta)


@settings(max_examples=60, deadline=None)
@given(instances(6), st.integers(0, 5), st.floats(0.01, 1.0))
def test_service_rate_increases_with_own_ta(inst, link, bump):
    n, edges, beta, r = inst
    link %= n
    fam = enumerate_independent_sets(ConflictGraph(n, edges))
    r2 = r.copy()
    r2[link] += bump / beta
    y1, y2 = service_rates(fam, r, beta), service_rates(fam, r2, beta)
    assert y2[link] > y1[link]
    # neighbours can only lose
    for u, v in edges:
        other = v if u == link else u if v == link else None
        if other is not None:
            assert y2[other] <= y1[other] + 1e-15


def test_distribution_validation():
    with pytest.raises(ValueError):
        ScheduleDistribution(np.full(7, 0.2), FAM_A)
    with pytest.raises(ValueError):
        ScheduleDistribution(np.ones(3), FAM_A)
    with pytest.raises(ValueError):
        stationary_distribution(FAM_A, np.zeros(4), 0.0)
    with pytest.raises(ValueError):
        as_ta_vector([1, 2], 4)
    with pytest.raises(ValueError):
        as_ta_vector([0, 0, 0, np.nan], 4)
    with pytest.raises(ValueError):
        as_ta_vector([0, 0, 0, 2], 4, r_max=1)
    d = stationary_distribution(FAM_A, np.zeros(4), 1.0)
    assert d.total_variation(d) == 0.0
