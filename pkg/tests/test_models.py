import math

import numpy as np
import pytest

from filterlab import DiscreteMeasure, GaussianMeasure, GaussianNoise
from filterlab.exceptions import DimensionMismatch, InvalidModel
from filterlab.models import (DiffusionModel, DiscreteChainModel, Example12Model, FiniteHMM,
                              LinearGaussianModel, ObservationPath, ar1_chain, constant_diffusion,
                              eta_flow, integrated_exponential, linear_drift, simulate_chain,
                              simulate_diffusion, simulate_diffusion_batch, simulate_example12,
                              simulate_finite_hmm, simulate_linear_gaussian,
                              simulate_linear_gaussian_batch, step_discrete_chain, van_loan,
                              write_path_csv, zero_map)
from filterlab.rng import stream


def scalar_lg(A, B, C, D):
    return LinearGaussianModel(A, B, C, D)


def test_observation_path_contract():
    p = ObservationPath.from_increments([0.0, 0.5, 1.0], [1.0, -2.0])
    assert p.values.ravel().tolist() == [0.0, 1.0, -1.0]
    np.testing.assert_array_equal(p.increments.ravel(), [1.0, -2.0])
    assert p.index_of(0.5) == 1
    with pytest.raises(ValueError):
        p.index_of(0.7)
    with pytest.raises(ValueError):
        ObservationPath([0.0, 1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        ObservationPath([0.0, 0.0], [0.0, 2.0])
    assert p.content_hash() == ObservationPath(p.times, p.values).content_hash()


def test_model_dimension_checks():
    with pytest.raises(DimensionMismatch):
        LinearGaussianModel(np.eye(2), np.eye(2), [[1.0, 0.0, 0.0]], 1.0)
    with pytest.raises(DimensionMismatch):
        DiffusionModel(zero_map, constant_diffusion(1.0), [[1.0, 0.0]], 1.0)
    with pytest.raises(InvalidModel):
        DiscreteChainModel(step=lambda x, r: x, h=lambda x: x, noise=GaussianNoise([0.0], [[0.0]]))
    with pytest.raises(ValueError):
        FiniteHMM([[0.5, 0.6], [0.5, 0.5]], [[1.0], [1.0]])


def test_van_loan_scalar_closed_form():
    a, dt = -0.7, 0.3
    phi, q = van_loan(np.array([[a]]), np.array([[2.0]]), dt)
    assert phi[0, 0] == pytest.approx(math.exp(a * dt))
    assert q[0, 0] == pytest.approx(2.0 * (math.exp(2 * a * dt) - 1) / (2 * a))


def test_integrated_exponential_nilpotent():
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    np.testing.assert_allclose(integrated_exponential(A, 2.0), [[2.0, 2.0], [0.0, 2.0]], atol=1e-13)


def test_linear_gaussian_deterministic_cases():
    m = scalar_lg(0.0, 0.0, 1.5, 0.0)
    x, path = simulate_linear_gaussian(m, [2.0], 1.0, 0.1, stream(0))
    assert np.all(x == 2.0)
    np.testing.assert_allclose(path.values.ravel(), 1.5 * 2.0 * path.times, rtol=1e-13, atol=1e-14)
    m = scalar_lg(0.4, 0.0, 1.0, 1.0)
    x, path = simulate_linear_gaussian(m, [3.0], 2.0, 0.01, stream(0))
    np.testing.assert_allclose(x.ravel(), 3.0 * np.exp(0.4 * path.times), rtol=1e-12)


def test_linear_gaussian_variance():
    m = scalar_lg(0.0, 1.0, 1.0, 1.0)
    n = 10 ** 5
    _, X, _ = simulate_linear_gaussian_batch(m, [0.0], 1.0, 0.25, stream(1), n_paths=n)
    var = X[-1, :, 0].var()
    assert abs(var - 1.0) <= 3 * math.sqrt(2.0 / n)


def test_linear_gaussian_exact_discretization_independent_of_dt():
    m = LinearGaussianModel([[0.0, 1.0], [-1.0, -0.3]], [[0.0], [1.0]], [[1.0, 0.0]], [[1.0]])
    prior = GaussianMeasure([1.0, 0.0], np.eye(2))
    n = 40000
    _, Xa, _ = simulate_linear_gaussian_batch(m, prior, 1.0, 0.5, stream(2), n)
    _, Xb, _ = simulate_linear_gaussian_batch(m, prior, 1.0, 0.25, stream(3), n)
    a, b = Xa[-1], Xb[-1]
    se = np.sqrt((a.var(axis=0) + b.var(axis=0)) / n)
    assert np.all(np.abs(a.mean(axis=0) - b.mean(axis=0)) <= 4 * se)
    np.testing.assert_allclose(np.cov(a.T), np.cov(b.T), atol=0.03)


def test_linear_gaussian_increments_depend_only_on_current_state():
    # restart from X_t: increment moments match those of the full path
    m = scalar_lg(-0.5, 1.0, 2.0, 1.0)
    n = 10 ** 5
    _, X, Y = simulate_linear_gaussian_batch(m, [1.0], 1.0, 0.05, stream(4), n)
    idx = 10
    inc_full = Y[-1, :, 0] - Y[idx, :, 0]
    _, X2, Y2 = simulate_linear_gaussian_batch(m, X[idx], 0.5, 0.05, stream(5), n)
    inc_restart = Y2[-1, :, 0]
    se = math.sqrt((inc_full.var() + inc_restart.var()) / n)
    assert abs(inc_full.mean() - inc_restart.mean()) <= 4 * se
    assert inc_full.var() == pytest.approx(inc_restart.var(), rel=0.03)


def test_simulators_are_deterministic():
    m = scalar_lg(0.3, 1.0, 1.0, 1.0)
    a = simulate_linear_gaussian(m, GaussianMeasure([0.0], [[1.0]]), 1.0, 0.01, stream(7, "s"))
    b = simulate_linear_gaussian(m, GaussianMeasure([0.0], [[1.0]]), 1.0, 0.01, stream(7, "s"))
    np.testing.assert_array_equal(a[0], b[0])
    assert a[1].content_hash() == b[1].content_hash()


def test_dt_must_divide_horizon():
    with pytest.raises(ValueError):
        simulate_linear_gaussian(scalar_lg(0, 1, 1, 1), [0.0], 1.0, 0.3, stream(0))


def test_diffusion_deterministic_cases():
    m = DiffusionModel(zero_map, constant_diffusion(0.0), 1.0, 0.0)
    x, path = simulate_diffusion(m, [2.0], 1.0, 0.01, stream(0))
    np.testing.assert_allclose(path.values.ravel(), 2.0 * path.times, rtol=1e-12, atol=1e-14)
    errs = []
    for dt in (0.01, 0.005):
        m = DiffusionModel(linear_drift(0.8), constant_diffusion(0.0), 1.0, 1.0, lip_b=0.8)
        x, _ = simulate_diffusion(m, [1.0], 1.0, dt, stream(0))
        errs.append(abs(x[-1, 0] - math.exp(0.8)))
        assert errs[-1] <= 2.0 * dt
        flow = eta_flow(m.drift, np.array([[1.0]]), 1.0)
        assert flow[0, 0] == pytest.approx(math.exp(0.8), abs=1e-8)
    assert errs[1] < errs[0]


def test_diffusion_brownian_variance():
    m = DiffusionModel(zero_map, constant_diffusion(1.0), 1.0, 1.0, h0=lambda x: -x, trace_bound=1.0)
    n = 10 ** 5
    _, X, _ = simulate_diffusion_batch(m, [0.0], 1.0, 0.05, stream(8), n)
    assert abs(X[-1, :, 0].var() - 1.0) <= 3 * math.sqrt(2.0 / n)


def test_diffusion_rejects_coarse_step():
    m = DiffusionModel(linear_drift(50.0), constant_diffusion(1.0), 1.0, 1.0, lip_b=50.0)
    with pytest.raises(ValueError):
        simulate_diffusion(m, [0.0], 1.0, 0.01, stream(0))


def test_observable_class_check():
    m = DiffusionModel(zero_map, constant_diffusion(1.0), 2.0, 1.0, h0=np.sin, lip_cinv_h0=0.5)
    assert m.check_observable_class()
    assert m.declared_lip_h() == pytest.approx(3.0)
    bad = DiffusionModel(zero_map, constant_diffusion(1.0), 1.0, 1.0, h0=np.sin, lip_cinv_h0=1.0)
    with pytest.raises(InvalidModel):
        bad.check_observable_class()


def test_example12_noise_free_path():
    m = Example12Model(1.0)
    p = simulate_example12(m, 1.0, 3.0, 0.01, stream(0), noise=False)
    np.testing.assert_allclose(p.values[:, 0], 1.0 - np.exp(-p.times), atol=1e-13)
    far = simulate_example12(m, 1e12, 3.0, 0.01, stream(0), noise=False)
    assert np.max(np.abs(far.values)) < 1e-11
    with pytest.raises(ValueError):
        simulate_example12(m, 0.5, 1.0, 0.1, stream(0))


def test_example12_mean_observation():
    m = Example12Model(0.5)
    x0, T = 2.0, 2.0
    ends = np.array([simulate_example12(m, x0, T, 0.1, stream(s)).values[-1, 0] for s in range(10 ** 4)])
    target = (1 - math.exp(-0.5 * T)) / (0.5 * x0)
    assert abs(ends.mean() - target) <= 3 * ends.std() / math.sqrt(ends.size)


def test_eta_flow_examples():
    x = np.array([[1.5, -2.0]])
    np.testing.assert_array_equal(eta_flow(zero_map, x, 3.0), x)
    np.testing.assert_allclose(eta_flow(lambda z: np.ones_like(z), x, 0.7), x + 0.7, atol=1e-14)
    assert eta_flow(lambda z: z, 1.0, 1.0, substeps=100) == pytest.approx(math.e, abs=1e-8)
    with pytest.raises(ValueError):
        eta_flow(zero_map, x, -1.0)


def test_step_discrete_chain_examples():
    ident = DiscreteChainModel(step=lambda x, r: x, h=lambda x: x,
                               noise=GaussianNoise([0.0], [[1e-300]]))
    x, y = step_discrete_chain(ident, [[0.7]], stream(0))
    assert x[0, 0] == 0.7 and abs(y[0, 0] - 0.7) < 1e-140

    ar = ar1_chain(2.0)
    n = 10 ** 5
    xs, _ = step_discrete_chain(ar, np.full((n, 1), 1.5), stream(1))
    assert abs(xs.mean() - 3.0) <= 3 / math.sqrt(n)

    ar = ar1_chain(2.0, h=lambda z: 2 * z + np.sin(z))
    x0 = np.full((n, 1), 0.4)
    xs, ys = step_discrete_chain(ar, x0, stream(2))
    resid = ys - ar.h(xs)
    assert abs(resid.var() - 1.0) <= 3 * math.sqrt(2.0 / n)


def test_simulate_chain_shapes():
    xs, ys = simulate_chain(ar1_chain(0.5), [[0.0]], 10, stream(0))
    assert xs.shape == (11, 1, 1) and ys.shape == (11, 1, 1)


def test_finite_hmm_simulation_frequencies():
    hmm = FiniteHMM([[0.0, 1.0], [1.0, 0.0]], [[1.0, 0.0], [0.0, 1.0]])
    states, symbols = simulate_finite_hmm(hmm, [1.0, 0.0], 6, stream(0))
    assert states.tolist() == [0, 1, 0, 1, 0, 1, 0]
    np.testing.assert_array_equal(states, symbols)


def test_write_path_csv(tmp_path):
    write_path_csv(tmp_path / "p.csv", [0.0, 0.5], [[1.0], [2.0]], [[0.0], [0.25]])
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "t,x_0,y_0"
    assert lines[2] == "0.5,2.0,0.25"


def test_prior_dimension_mismatch():
    m = scalar_lg(0.0, 1.0, 1.0, 1.0)
    with pytest.raises(DimensionMismatch):
        simulate_linear_gaussian(m, DiscreteMeasure.dirac([0.0, 1.0]), 1.0, 0.1, stream(0))
