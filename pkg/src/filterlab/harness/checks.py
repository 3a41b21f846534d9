"""Acceptance criteria, runnable from the CLI (``check-all``) and from tests.

Every check returns a :class:`CriterionResult`; a criterion passes only if
its numerical condition holds and it finished within its time limit.
"""
import math
import time
from dataclasses import dataclass

import numpy as np

from ..diagnostics import model_constants, observability_matrix_rank, verify_flow_deviation, verify_sandwich
from ..filters import kalman_bucy_run, particle_filter_run
from ..measures import DiscreteMeasure, GaussianMeasure
from ..metrics import (DEFAULT_ALPHAS, active_members, bl_distance_exact, bl_lower_random,
                       bl_upper_partition, partition_member_eval)
from ..models import (DiffusionModel, FiniteHMM, LinearGaussianModel, ObservationPath,
                      constant_diffusion, simulate_linear_gaussian, zero_map)
from ..oracles import bl_grid_search, riccati_no_drift, riccati_unit_noise
from ..rng import stream
from . import evaluate
from .config import load_config
from .experiments import (run_convolution_merging, run_counterexample, run_lemma42_check,
                          run_predictor_merging, run_stability)


@dataclass
class CriterionResult:
    name: str
    value: float
    bound: float
    passed: bool
    runtime: float
    limit: float
    detail: str = ""

    def line(self):
        flag = "PASS" if self.passed else "FAIL"
        return (f"{flag} {self.name} {self.value:.6g} {self.bound:.6g} "
                f"[{self.runtime:.2f}s / {self.limit:g}s] {self.detail}").rstrip()


def _shipped(name):
    from .cli import shipped_config

    return load_config(shipped_config(name))


def _random_discrete(rng, n, d, scale=1.5):
    atoms = rng.normal(0.0, scale, (n, d))
    return DiscreteMeasure(atoms, rng.dirichlet(np.ones(n)))


def check_bl_oracle():
    rng = stream(1, "bl-oracle")
    worst = 0.0
    for _ in range(100):
        d = int(rng.integers(1, 3))
        total = int(rng.integers(2, 5))
        n_mu = int(rng.integers(1, total))
        mu = _random_discrete(rng, n_mu, d)
        nu = _random_discrete(rng, total - n_mu, d)
        worst = max(worst, abs(bl_distance_exact(mu, nu) - bl_grid_search(mu, nu)))
    return worst, 1e-6, worst <= 1e-6, "max |exact - grid search| over 100 pairs"


def check_partition():
    rng = stream(2, "partition")
    x = rng.uniform(-7.3, 7.3, (10_000, 2))
    step = rng.normal(size=(10_000, 2))
    step *= 1e-4 / np.linalg.norm(step, axis=1, keepdims=True)
    worst_sum, worst_range, max_active, worst_lip_excess = 0.0, 0.0, 0, -np.inf
    for alpha in (1.0, 10.0):
        # scan a 4x4 block of lattice indices around each point so that the
        # count of active members does not rely on active_members itself
        base = np.floor(alpha * x)[:, None, :]
        offsets = np.array([(i, j) for i in range(-1, 3) for j in range(-1, 3)], dtype=float)
        keys = base + offsets[None, :, :]
        vals = partition_member_eval(keys, alpha, x[:, None, :])
        worst_range = max(worst_range, float(np.max(-vals)), float(np.max(vals - 1.0)))
        max_active = max(max_active, int(np.max(np.sum(vals > 0, axis=1))))
        worst_sum = max(worst_sum, float(np.max(np.abs(vals.sum(axis=1) - 1.0))))
        _, fast = active_members(x, alpha)
        worst_sum = max(worst_sum, float(np.max(np.abs(fast.sum(axis=1) - 1.0))))
        moved = partition_member_eval(keys, alpha, (x + step)[:, None, :])
        lip = np.max(np.abs(moved - vals) / 1e-4)
        worst_lip_excess = max(worst_lip_excess, float(lip - alpha * math.pi / 2 * math.sqrt(2)))
    ok = (worst_range <= 0.0 and max_active <= 4 and worst_sum <= 1e-10
          and worst_lip_excess <= 1e-6)
    detail = (f"range_excess={worst_range:.3g} max_active={max_active} "
              f"lip_excess={worst_lip_excess:.3g}")
    return worst_sum, 1e-10, ok, "max |sum - 1|; " + detail


def check_sandwich():
    rng = stream(3, "sandwich")
    violations = 0
    for _ in range(200):
        d = int(rng.integers(1, 3))
        mu = _random_discrete(rng, int(rng.integers(1, 11)), d)
        nu = _random_discrete(rng, int(rng.integers(1, 11)), d)
        exact = bl_distance_exact(mu, nu)
        lower = bl_lower_random(mu, nu, 256, rng)
        upper = min(bl_upper_partition(mu, nu, a) for a in DEFAULT_ALPHAS)
        # 1e-9 absorbs the LP solver's feasibility tolerance
        violations += int(lower > exact + 1e-9 or exact > upper + 1e-9)
    return violations, 0, violations == 0, "pairs with lower <= exact <= upper violated"


def check_riccati():
    dt, horizon, p0 = 1e-3, 10.0, 2.0
    n = int(round(horizon / dt))
    path = ObservationPath(dt * np.arange(n + 1), np.zeros((n + 1, 1)))
    prior = GaussianMeasure([0.0], [[p0]])
    worst = 0.0
    for B, exact in ((0.0, riccati_no_drift), (1.0, riccati_unit_noise)):
        states = kalman_bucy_run(LinearGaussianModel(0.0, B, 1.0, 1.0), prior, path)
        P = np.array([s.cov[0, 0] for s in states])
        worst = max(worst, float(np.max(np.abs(P - exact(p0, path.times)))))
    return worst, 1e-6, worst <= 1e-6, "max |P - closed form| over [0, 10]"


def _config_check(cfg, report, headline):
    row = next(r for r in report.rows if r[0] == headline)
    detail = "; ".join(f"{c}={v:.3g}" for c, v, _, _ in report.rows)
    return row[1], row[2], report.passed, detail


def check_kalman_merging():
    cfg = _shipped("obs_kalman.cfg")
    report = evaluate.evaluate_stability(cfg, run_stability(cfg))
    return _config_check(cfg, report, "bl_final")


def check_unobservable():
    cfg = _shipped("unobs_kalman.cfg")
    rank = observability_matrix_rank(cfg.model.A, cfg.model.C)
    report = evaluate.evaluate_stability(cfg, run_stability(cfg))
    report.add("observable", float(rank.observable), 0.0, not rank.observable)
    return _config_check(cfg, report, "unobserved_gap_ratio")


def check_counterexample():
    cfg = _shipped("counterexample.cfg")
    results = run_counterexample(cfg.model.lam, cfg.prior_mu, cfg.prior_nu, cfg.params["n_max"],
                                 cfg.seeds, n_from=cfg.params["n_from"])
    report = evaluate.evaluate_counterexample(cfg, results)
    value, bound, ok, detail = _config_check(cfg, report, "converged_and_separated_fraction")
    return value, bound, ok, f"{detail}; worst_residual={report.details['worst_residual']:.3g}"


def check_predictor():
    worst, details, ok = 0.0, [], True
    for name in ("predictor_ar1_id.cfg", "predictor_ar1_sin.cfg"):
        cfg = _shipped(name)
        traces = run_predictor_merging(cfg.model, cfg.prior_mu, cfg.prior_nu, cfg.steps,
                                       cfg.particles, cfg.seeds, cadence=cfg.cadence,
                                       workers=cfg.workers, bl_trials=cfg.bl_trials)
        report = evaluate.evaluate_predictor(cfg, traces)
        ratio = next(r[1] for r in report.rows if r[0] == "median_bl_ratio")
        worst = max(worst, ratio)
        ok = ok and report.passed
        details.append(f"{name.split('.')[0]}={ratio:.3g}")
    return worst, 0.1, ok, "median BL(n=25) / median BL(n=0): " + ", ".join(details)


def check_convolution():
    cfg = _shipped("convolution.cfg")
    rows = run_convolution_merging([int(n) for n in cfg.params["ns"]])
    report = evaluate.evaluate_convolution(cfg, rows)
    return _config_check(cfg, report, "tv_convolved_error")


def _sandwich_model():
    return _shipped("diagnose.cfg").model


def check_windowed_sandwich():
    model = _sandwich_model()
    eps = model_constants(model, 0.0).eps0 / 2.0
    report = verify_sandwich(model, eps, 10_000, stream(10, "windowed"), raise_on_fail=False)
    const = report.details["constants"]
    ratios = report.details["ratios"]
    bad = int(np.sum((ratios < const.m) | (ratios > const.M)))
    detail = (f"eps={eps:.4g} m={const.m:.4g} M={const.M:.4g} "
              f"ratio range=[{ratios.min():.4g}, {ratios.max():.4g}]")
    return bad, 0, bad == 0 and ratios.size == 10_000, detail


def check_flow_deviation():
    model = DiffusionModel(drift=zero_map, diffusion=constant_diffusion(1.0), C=[[0.0]], D=[[1.0]],
                           lip_b=0.0, trace_bound=1.0)
    times = [0.1, 0.5, 1.0]
    report = verify_flow_deviation(model, 1.0, 20_000, [[0.0]], stream(11, "flow"), dt=1e-3,
                                   check_times=times, raise_on_fail=False)
    worst_z, below, parts = 0.0, True, []
    for s in times:
        mean, se = report.details["estimates"][s]
        z = abs(mean - math.sqrt(2 * s / math.pi)) / se
        worst_z = max(worst_z, z)
        below = below and mean < math.sqrt(s)
        parts.append(f"s={s:g}: {mean:.4f} vs {math.sqrt(2 * s / math.pi):.4f}")
    return worst_z, 3.0, worst_z <= 3.0 and below and report.passed, "; ".join(parts)


def _random_hmm(rng, s, o):
    return FiniteHMM(rng.dirichlet(np.ones(s), size=s), rng.dirichlet(np.ones(o), size=s))


def check_future_law():
    rng = stream(12, "future-law")
    worst = 0.0
    for s, o in ((2, 2), (3, 2), (3, 3)):
        model = _random_hmm(rng, s, o)
        worst = max(worst, run_lemma42_check(model, rng.dirichlet(np.ones(s)), 5, 3))
    return worst, 1e-12, worst <= 1e-12, "max discrepancy, t <= 5, k <= 3"


def check_particle_rate():
    model = LinearGaussianModel(-1.0, 1.0, 1.0, 1.0)
    prior = GaussianMeasure([0.0], [[1.0]])
    sizes = (100, 1000, 10_000)
    errors = {n: [] for n in sizes}
    for seed in range(50):
        _, path = simulate_linear_gaussian(model, prior, 1.0, 1e-3, stream(seed, "signal"))
        target = kalman_bucy_run(model, prior, path)[-1].mean[0]
        for n in sizes:
            final = particle_filter_run(model, prior, path, n, stream(seed, f"particles-{n}"),
                                        record_every=len(path) - 1)[-1]
            errors[n].append(final.measure.mean()[0] - target)
    rms = [math.sqrt(np.mean(np.square(errors[n]))) for n in sizes]
    slope = float(np.polyfit(np.log(sizes), np.log(rms), 1)[0])
    detail = f"slope={slope:.3f} rms=" + ", ".join(f"{r:.4g}" for r in rms)
    return abs(slope + 0.5), 0.15, abs(slope + 0.5) <= 0.15, detail


CRITERIA = (
    ("bl_exact_vs_grid_search", check_bl_oracle, 10.0),
    ("partition_of_unity", check_partition, 5.0),
    ("metric_sandwich", check_sandwich, 60.0),
    ("riccati_closed_forms", check_riccati, 1.0),
    ("kalman_merging_observable", check_kalman_merging, 5.0),
    ("kalman_unobservable_control", check_unobservable, 5.0),
    ("nonmerging_counterexample", check_counterexample, 30.0),
    ("predictor_merging", check_predictor, 120.0),
    ("convolution_total_variation", check_convolution, 5.0),
    ("windowed_observation_sandwich", check_windowed_sandwich, 30.0),
    ("flow_deviation_bound", check_flow_deviation, 10.0),
    ("future_observation_law", check_future_law, 10.0),
    ("particle_filter_rate", check_particle_rate, 120.0),
)


def warm_up():
    """Compile the numba kernels so that timings measure the computation only."""
    a = DiscreteMeasure([[0.0], [1.0]], [0.5, 0.5])
    bl_distance_exact(a, DiscreteMeasure.dirac([0.5]))
    path = ObservationPath([0.0, 0.1], [[0.0], [0.1]])
    kalman_bucy_run(LinearGaussianModel(0.0, 1.0, 1.0, 1.0), GaussianMeasure([0.0], [[1.0]]), path)


def run_criterion(name, fn, limit):
    start = time.perf_counter()
    value, bound, ok, detail = fn()
    runtime = time.perf_counter() - start
    if runtime > limit:
        detail = f"too slow; {detail}"
    return CriterionResult(name, float(value), float(bound), bool(ok) and runtime <= limit,
                           runtime, limit, detail)


def run_all(only=None, echo=False):
    warm_up()
    results = []
    for name, fn, limit in CRITERIA:
        if only and name not in only:
            continue
        result = run_criterion(name, fn, limit)
        if echo:
            print(result.line(), flush=True)
        results.append(result)
    return results
