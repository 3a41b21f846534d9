import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import norm

from filterlab import DiscreteMeasure, GaussianNoise
from filterlab.exceptions import SupportTooLarge
from filterlab.metrics import (DEFAULT_ALPHAS, PartitionOfUnity, active_members, bl_distance_exact,
                               bl_lower_random, bl_upper_best, bl_upper_partition, metric_report,
                               partition_member_eval, tv_convolved, tv_discrete)
from filterlab.oracles import bl_grid_search, bl_vertex_enumeration


def dirac(*x):
    return DiscreteMeasure.dirac(list(x))


@st.composite
def measures(draw, dim=None, max_atoms=5):
    d = dim or draw(st.sampled_from([1, 2]))
    n = draw(st.integers(1, max_atoms))
    pts = draw(st.lists(st.lists(st.floats(-3, 3), min_size=d, max_size=d), min_size=n, max_size=n))
    w = draw(st.lists(st.floats(0.05, 1.0), min_size=n, max_size=n))
    return DiscreteMeasure.from_points(np.array(pts), w)


@st.composite
def triples(draw):
    d = draw(st.sampled_from([1, 2]))
    return tuple(draw(measures(dim=d)) for _ in range(3))


def test_bl_examples():
    mu = DiscreteMeasure([[0.0], [1.0]], [0.5, 0.5])
    assert bl_distance_exact(mu, mu) == 0.0
    assert bl_distance_exact(dirac(0.0), dirac(1.0)) == pytest.approx(1.0, abs=1e-12)
    assert bl_distance_exact(dirac(0.0), dirac(5.0)) == pytest.approx(2.0, abs=1e-12)
    assert bl_distance_exact(mu, dirac(0.0)) == pytest.approx(0.5, abs=1e-12)


@pytest.mark.parametrize("method", ["chain", "lp"])
def test_bl_one_dimensional_solvers_agree_with_grid_oracle(method):
    mu = DiscreteMeasure([[0.0], [1.0]], [0.5, 0.5])
    assert bl_distance_exact(mu, dirac(0.0), method=method) == pytest.approx(
        bl_grid_search(mu, dirac(0.0)), abs=1e-6)


def test_bl_vertex_oracle_matches_lp(rng):
    for _ in range(10):
        d = int(rng.integers(1, 3))
        mu = DiscreteMeasure.from_points(rng.normal(size=(2, d)), rng.random(2) + 0.1)
        nu = DiscreteMeasure.from_points(rng.normal(size=(2, d)), rng.random(2) + 0.1)
        assert bl_distance_exact(mu, nu, method="lp") == pytest.approx(
            bl_vertex_enumeration(mu, nu), abs=1e-8)


def test_assignment_solver_matches_lp(rng):
    for d in (1, 2, 3):
        mu = DiscreteMeasure.from_points(rng.normal(size=(30, d)))
        nu = DiscreteMeasure.from_points(rng.normal(size=(30, d)) + 0.7)
        a = bl_distance_exact(mu, nu, method="assignment")
        assert a == pytest.approx(bl_distance_exact(mu, nu, method="lp"), abs=1e-9)


def test_chain_solver_matches_lp_on_larger_supports(rng):
    mu = DiscreteMeasure.from_points(rng.normal(size=(60, 1)), rng.random(60))
    nu = DiscreteMeasure.from_points(rng.normal(size=(45, 1)) * 2, rng.random(45))
    assert bl_distance_exact(mu, nu, method="chain") == pytest.approx(
        bl_distance_exact(mu, nu, method="lp"), abs=1e-9)


def test_bl_cap_and_method_errors(rng):
    mu = DiscreteMeasure.from_points(rng.normal(size=(6, 2)))
    nu = DiscreteMeasure.from_points(rng.normal(size=(6, 2)))
    with pytest.raises(SupportTooLarge):
        bl_distance_exact(mu, nu, cap=10, method="lp")
    with pytest.raises(ValueError):
        bl_distance_exact(mu, nu, method="simplex")
    with pytest.raises(ValueError):
        bl_distance_exact(mu, DiscreteMeasure.from_points(rng.normal(size=(5, 2))), method="assignment")


@given(triples())
def test_bl_metric_axioms(t):
    mu, nu, rho = t
    a = bl_distance_exact(mu, nu)
    assert a == bl_distance_exact(nu, mu) or abs(a - bl_distance_exact(nu, mu)) <= 1e-12
    assert 0.0 <= a <= 2.0
    assert a <= tv_discrete(mu, nu) + 1e-9
    assert a <= bl_distance_exact(mu, rho) + bl_distance_exact(rho, nu) + 1e-9


@given(st.data())
def test_metric_sandwich_property(data):
    d = data.draw(st.sampled_from([1, 2]))
    mu = data.draw(measures(dim=d, max_atoms=10))
    nu = data.draw(measures(dim=d, max_atoms=10))
    seed = data.draw(st.integers(0, 2 ** 32 - 1))
    exact = bl_distance_exact(mu, nu)
    assert bl_lower_random(mu, nu, 200, np.random.default_rng(seed)) <= exact + 1e-9
    assert exact <= bl_upper_best(mu, nu) + 1e-9


def test_upper_partition_examples():
    mu = DiscreteMeasure([[0.0], [1.3]], [0.4, 0.6])
    assert bl_upper_partition(mu, mu, 4.0) == pytest.approx(0.5)
    two = DiscreteMeasure([[0.0, 0.0], [1.3, 2.0]], [0.4, 0.6])
    assert bl_upper_partition(two, two, 10.0) == pytest.approx(2 * math.sqrt(2) / 10)
    assert bl_upper_partition(dirac(0.0), dirac(0.5), 1.0) == 2.0
    assert bl_upper_partition(dirac(0.0), dirac(0.5), 100.0) == 2.0
    assert bl_distance_exact(dirac(0.0), dirac(0.5)) == pytest.approx(0.5)


def test_upper_partition_unclipped_sum():
    # at alpha = 8 the unclipped value 2/8 + mass gap is below 2
    val = bl_upper_partition(dirac(0.0), dirac(0.05), 8.0)
    u = 8 * 0.05
    expected = 0.25 + abs(1 - math.cos(math.pi * u / 2) ** 2) + math.cos(math.pi * (1 - u) / 2) ** 2
    assert val == pytest.approx(expected, abs=1e-12)


def test_lower_random_examples(rng):
    mu = DiscreteMeasure([[0.0], [1.0]], [0.5, 0.5])
    assert bl_lower_random(mu, mu, 100, rng) == 0.0
    assert bl_lower_random(dirac(0.0), dirac(5.0), 1000, rng) >= 1.9
    for _ in range(100):
        a = DiscreteMeasure.from_points(rng.normal(size=(3, 1)), rng.random(3) + 0.01)
        b = DiscreteMeasure.from_points(rng.normal(size=(3, 1)), rng.random(3) + 0.01)
        assert bl_lower_random(a, b, 50, rng) <= bl_distance_exact(a, b) + 1e-12


def test_tv_discrete_examples():
    mu = DiscreteMeasure([[0.0], [1.0]], [0.5, 0.5])
    assert tv_discrete(mu, mu) == 0.0
    assert tv_discrete(dirac(0.0), dirac(1.0)) == 2.0
    assert tv_discrete(mu, dirac(0.0)) == 1.0
    assert tv_discrete(DiscreteMeasure([[0.0], [0.0]], [0.5, 0.5]), dirac(0.0)) == 0.0


def test_tv_convolved_examples():
    xi = GaussianNoise.standard(1)
    mu = DiscreteMeasure([[0.0], [1.0]], [0.5, 0.5])
    assert tv_convolved(mu, mu, xi) == 0.0
    a = tv_convolved(dirac(1.0), dirac(0.0), xi)
    assert a == pytest.approx(2 * (2 * norm.cdf(0.5) - 1), abs=1e-6)
    assert a == pytest.approx(0.76585, abs=1e-5)
    b = tv_convolved(dirac(0.25), dirac(0.0), xi)
    # closed form 2(2 Phi(1/8) - 1) = 0.1989529
    assert b == pytest.approx(2 * (2 * norm.cdf(0.125) - 1), abs=1e-6)
    assert b == pytest.approx(0.19899, abs=1e-4)


def test_tv_convolved_two_dimensional():
    xi = GaussianNoise.standard(2)
    val = tv_convolved(dirac(0.0, 0.0), dirac(0.6, 0.8), xi)
    # shift of length 1, projected onto the shift direction it is 1-d
    assert val == pytest.approx(2 * (2 * norm.cdf(0.5) - 1), abs=1e-4)


def test_tv_convolved_decreases_with_bl():
    xi = GaussianNoise.standard(1)
    vals = [tv_convolved(dirac(1.0 / n), dirac(0.0), xi) for n in (1, 2, 4, 8)]
    assert all(b < a for a, b in zip(vals, vals[1:]))


def test_partition_member_examples():
    assert partition_member_eval(0, 1.0, 0.0) == 1.0
    assert partition_member_eval(0, 1.0, 0.5) == pytest.approx(0.5, abs=1e-15)
    assert partition_member_eval(0, 1.0, 1.5) == 0.0
    assert partition_member_eval([0, 0], 1.0, [0.5, 0.5]) == pytest.approx(0.25)


@given(st.lists(st.floats(-20, 20), min_size=2, max_size=2), st.sampled_from([1.0, 10.0, 0.3]))
def test_partition_properties(x, alpha):
    keys, values = active_members(np.array([x]), alpha)
    assert np.all((values >= 0) & (values <= 1))
    assert np.count_nonzero(values) <= 4
    assert abs(values.sum() - 1.0) <= 1e-10
    direct = partition_member_eval(keys[0].astype(float), alpha, np.array(x))
    np.testing.assert_allclose(direct, values[0], atol=1e-15)


def test_partition_lipschitz_constant(rng):
    alpha = 10.0
    x = rng.uniform(-3, 3, (2000, 2))
    step = rng.normal(size=(2000, 2))
    step *= 1e-5 / np.linalg.norm(step, axis=1, keepdims=True)
    keys, _ = active_members(x, alpha)
    k = keys[:, 0, :].astype(float)
    slope = np.abs(partition_member_eval(k, alpha, x + step) - partition_member_eval(k, alpha, x)) / 1e-5
    assert slope.max() <= alpha * math.pi / 2 * math.sqrt(2) + 1e-6


def test_partition_transformer(rng):
    x = rng.uniform(-2, 2, (50, 2))
    pou = PartitionOfUnity(alpha=2.0).fit(x)
    feats = pou.transform(x)
    np.testing.assert_allclose(np.asarray(feats.sum(axis=1)).ravel(), 1.0, atol=1e-12)
    assert pou.lipschitz_bound_ == pytest.approx(math.pi * math.sqrt(2))


def test_metric_report_orders_bounds(rng):
    mu = DiscreteMeasure.from_points(rng.normal(size=(40, 2)))
    nu = DiscreteMeasure.from_points(rng.normal(size=(40, 2)) + 1)
    rep = metric_report(mu, nu, rng, trials=64)
    assert rep.method == "assignment"
    assert rep.bl_lower <= rep.exact_bl <= rep.bl_upper
    rep = metric_report(mu, nu, rng, cap=50, trials=64)
    assert rep.method == "bounds" and rep.exact_bl is None
    assert rep.bl_lower <= rep.bl_upper
    assert len(rep.row(0.5)) == len(rep.header)


def test_default_alphas_cover_fine_and_coarse_scales():
    assert min(DEFAULT_ALPHAS) == 1.0 and max(DEFAULT_ALPHAS) == 50.0
