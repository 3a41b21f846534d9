import math

import numpy as np
import pytest
from scipy.stats import norm

from filterlab import DiscreteMeasure, GaussianMeasure
from filterlab.harness import evaluate
from filterlab.harness.cli import shipped_config
from filterlab.harness.config import load_config
from filterlab.harness.experiments import (counterexample_grid, gaussian_atoms,
                                           run_convolution_merging, run_counterexample,
                                           run_lemma42_check, run_predictor_merging, run_stability)
from filterlab.models import FiniteHMM, ar1_chain

E_PI = math.exp(math.pi)


def test_gaussian_atoms_moments():
    g = GaussianMeasure([1.0, -2.0], [[2.0, 0.5], [0.5, 1.0]])
    atoms = gaussian_atoms(g)
    assert len(atoms) == 5 + 512
    np.testing.assert_allclose(atoms.mean(), g.mean, atol=0.02)
    np.testing.assert_allclose(atoms.covariance(), g.covariance, atol=0.1)
    one = gaussian_atoms(GaussianMeasure([0.0], [[4.0]]))
    assert one.atoms[0, 0] == 0.0 and abs(one.mean()[0]) < 1e-12


def test_identical_priors_give_zero_trace():
    cfg = load_config(shipped_config("identical_kalman.cfg"))
    traces = run_stability(cfg)
    for tr in traces:
        for col in ("bl", "bl_lower", "tv", "mean_gap", "aux"):
            assert np.all(tr.column(col) == 0.0)
        assert len({r["path_hash"] for r in tr.records}) == 1
    assert evaluate.evaluate_stability(cfg, traces).passed


def test_observable_kalman_merges():
    cfg = load_config(shipped_config("obs_kalman.cfg"))
    cfg.seeds = [0]
    traces = run_stability(cfg)
    tr = traces[0]
    assert tr.column("mean_gap")[-1] <= 1e-3 * tr.column("mean_gap")[0]
    assert tr.column("aux")[-1] <= 1e-6
    assert tr.column("bl")[-1] < 0.05
    assert np.all(np.diff(tr.column("t")) > 0)
    assert np.all((tr.column("bl") >= 0) & (tr.column("bl") <= 2))
    rep = evaluate.evaluate_stability(cfg, traces)
    assert rep.passed, rep.summary()


def test_unobservable_gap_persists():
    cfg = load_config(shipped_config("unobs_kalman.cfg"))
    cfg.seeds = [0]
    rep = evaluate.evaluate_stability(cfg, run_stability(cfg))
    assert rep.passed, rep.summary()


def test_particle_stability_trace_orders_bounds():
    cfg = load_config(shipped_config("obs_kalman.cfg"))
    cfg.filter, cfg.horizon, cfg.dt, cfg.cadence, cfg.particles = "particle", 1.0, 0.01, 20, 200
    cfg.seeds, cfg.criteria = [0], {}
    (tr,) = run_stability(cfg)
    assert np.all(tr.column("bl_lower") <= tr.column("bl") + 1e-12)
    assert np.all(tr.column("bl") <= tr.column("bl_upper") + 1e-12)
    assert tr.column("aux").min() >= 1.0


def test_counterexample_grid_hits_every_period():
    dt, horizon, per = counterexample_grid(1.0, 8)
    assert per * dt == pytest.approx(2 * math.pi)
    assert dt <= 2e-3
    assert horizon >= 8 * 2 * math.pi and math.exp(-horizon) < 1e-9


def test_counterexample_identical_priors():
    mu = DiscreteMeasure([[1.0], [E_PI]], [0.5, 0.5])
    for r in run_counterexample(1.0, mu, mu, 6, [0, 1]):
        assert np.all(r.gaps == 0.0) and r.g_limit == 0.0


def test_counterexample_converges_to_nonzero_limit():
    mu = DiscreteMeasure([[1.0], [E_PI]], [0.5, 0.5])
    nu = DiscreteMeasure([[1.0], [E_PI]], [0.25, 0.75])
    res = run_counterexample(1.0, mu, nu, 8, range(10))
    assert sum(r.residual <= 1e-3 and abs(r.g_limit) > 0.05 for r in res) >= 9
    with pytest.raises(ValueError):
        run_counterexample(1.0, mu, DiscreteMeasure.dirac([1.0]), 3, [0])


def test_counterexample_limit_linear_in_weight_perturbation():
    mu = DiscreteMeasure([[1.0], [E_PI]], [0.5, 0.5])
    limits = []
    for delta in (1e-6, 2e-6):
        nu = DiscreteMeasure([[1.0], [E_PI]], [0.5 - delta, 0.5 + delta])
        limits.append(run_counterexample(1.0, mu, nu, 2, [3], n_from=1)[0].g_limit)
    assert limits[0] != 0.0
    assert abs(limits[0]) < 1e-5
    assert limits[1] / limits[0] == pytest.approx(2.0, rel=1e-3)


def test_predictor_identical_priors_zero():
    prior = GaussianMeasure([0.0], [[1.0]])
    model = ar1_chain(2.0, h_inverse_lipschitz=1.0)
    (tr,) = run_predictor_merging(model, prior, prior, 5, 300, [0])
    assert np.all(tr.column("bl") == 0.0)


def test_predictor_needs_invertible_observation():
    model = ar1_chain(2.0, h=np.sin, h_inverse_lipschitz=1.0)
    prior = GaussianMeasure([0.0], [[1.0]])
    with pytest.raises(ValueError):
        run_predictor_merging(model, prior, prior, 2, 10, [0])


def test_predictor_merging_small_scale():
    model = ar1_chain(2.0, h_inverse_lipschitz=1.0)
    traces = run_predictor_merging(model, GaussianMeasure([0.0], [[1.0]]),
                                   GaussianMeasure([5.0], [[4.0]]), 10, 2000, range(5), cadence=5)
    bl = np.array([tr.column("bl") for tr in traces])
    assert np.median(bl[:, -1]) <= 0.1 * np.median(bl[:, 0])
    assert all(len({r["path_hash"] for r in tr.records}) == 1 for tr in traces)


def test_convolution_rows():
    rows = run_convolution_merging([1, 2, 4, 8, 16])
    for r in rows:
        assert r["tv_discrete"] == 2.0
        assert r["bl"] == pytest.approx(1.0 / r["n"], abs=1e-12)
        assert r["tv_convolved"] == pytest.approx(2 * (2 * norm.cdf(0.5 / r["n"]) - 1), abs=1e-4)
    cfg = load_config(shipped_config("convolution.cfg"))
    assert evaluate.evaluate_convolution(cfg, rows).passed


def test_future_law_examples(rng):
    T = rng.random((2, 2))
    E = rng.random((2, 2))
    model = FiniteHMM(T / T.sum(1, keepdims=True), E / E.sum(1, keepdims=True))
    assert run_lemma42_check(model, [0.5, 0.5], 0, 2) <= 1e-15
    assert run_lemma42_check(model, [0.3, 0.7], 3, 2) <= 1e-12
    single = FiniteHMM([[0.5, 0.5], [0.1, 0.9]], [[1.0], [1.0]])
    assert run_lemma42_check(single, [0.5, 0.5], 2, 2) <= 1e-15
    with pytest.raises(ValueError):
        run_lemma42_check(model, [0.5, 0.5], 6, 3)
