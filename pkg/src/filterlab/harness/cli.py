"""Command line entry point: ``filterlab <subcommand> --config FILE``.

Outputs land in ``$FILTERLAB_OUTPUT_ROOT/<dir>`` (default root:
``./filterlab-output``; ``<dir>`` from the config's ``[output]`` section or
the config file name). Exit status: 0 when every check passes, 1 when a
check or a numerical assertion fails, 2 for configuration errors.
"""
import argparse
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from ..diagnostics import (CheckReport, model_constants, observability_matrix_rank,
                           validate_declared_constants, verify_flow_deviation, verify_sandwich)
from ..exceptions import ConfigError, FilterLabError
from ..filters import kalman_bucy_run, particle_filter_run
from ..measures import GaussianNoise, sample
from ..models import (DiffusionModel, DiscreteChainModel, Example12Model, FiniteHMM,
                      LinearGaussianModel, simulate_chain, simulate_diffusion, simulate_example12,
                      simulate_finite_hmm, simulate_linear_gaussian, write_path_csv)
from ..rng import stream
from . import evaluate, report
from .config import load_config, parse_matrix
from .experiments import (run_convolution_merging, run_counterexample, run_lemma42_check,
                          run_predictor_merging, run_stability)

OUTPUT_ROOT_VAR = "FILTERLAB_OUTPUT_ROOT"
SUBCOMMAND_KINDS = {
    "simulate": {"simulate"},
    "filter": {"filter"},
    "stability": {"stability"},
    "counterexample": {"counterexample"},
    "predictor": {"predictor"},
    "convolution": {"convolution"},
    "diagnose": {"diagnose", "future_law"},
}
TRACE_PLOT_COLUMNS = ("bl", "bl_upper", "bl_lower", "tv", "mean_gap")


def shipped_config(name):
    """Path of a config bundled with the package."""
    return resources.files("filterlab") / "configs" / name


def resolve_config(name):
    path = Path(name)
    if path.exists():
        return path
    bundled = shipped_config(path.name)
    if bundled.is_file():
        return bundled
    raise ConfigError(f"config file {name!r} not found")


def output_dir(cfg, config_path, override=None):
    if override:
        out = Path(override)
    else:
        root = Path(os.environ.get(OUTPUT_ROOT_VAR, "filterlab-output"))
        out = root / (cfg.output_dir or Path(str(config_path)).stem)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require(cfg, cls, what):
    if not isinstance(cfg.model, cls):
        raise ConfigError(f"{what} needs a {cls.__name__} model, got {cfg.model_type}")


def _require_priors(cfg, both=True):
    if cfg.prior_mu is None or (both and cfg.prior_nu is None):
        raise ConfigError("[prior.mu]" + (" and [prior.nu]" if both else "") + " required")


def _trace_plot(path, traces, title, log, x_label="t"):
    series = []
    for tr in traces:
        t = tr.column("t")
        for col in TRACE_PLOT_COLUMNS:
            series.append((col, t, tr.column(col)))
    report.svg_plot(path, series, title=title, xlabel=x_label, log=log)


def run_simulate(cfg, out, log):
    _require_priors(cfg, both=False)
    rep = CheckReport()
    series, worst = [], 0.0
    for seed in cfg.seeds:
        rng = stream(seed, "signal")
        model = cfg.model
        if isinstance(model, LinearGaussianModel):
            x, path = simulate_linear_gaussian(model, cfg.prior_mu, cfg.horizon, cfg.dt, rng)
            times, y = path.times, path.values
        elif isinstance(model, DiffusionModel):
            x0 = sample(cfg.prior_mu, 1, stream(seed, "x0"))[0]
            x, path = simulate_diffusion(model, x0, cfg.horizon, cfg.dt, rng)
            times, y = path.times, path.values
        elif isinstance(model, Example12Model):
            x0 = float(sample(cfg.prior_mu, 1, stream(seed, "x0"))[0, 0])
            path = simulate_example12(model, x0, cfg.horizon, cfg.dt, rng)
            times, y = path.times, path.values
            x = model.signal(x0, times).reshape(-1, 1)
        elif isinstance(model, DiscreteChainModel):
            x0 = sample(cfg.prior_mu, 1, stream(seed, "x0"))
            x, y = simulate_chain(model, x0, cfg.steps, rng)
            times = np.arange(len(x), dtype=float)
        elif isinstance(model, FiniteHMM):
            x, y = simulate_finite_hmm(model, cfg.prior_mu, cfg.steps, rng)
            times = np.arange(len(x), dtype=float)
        else:
            raise ConfigError(f"cannot simulate model type {cfg.model_type}")
        x = np.asarray(x, dtype=float).reshape(len(times), -1)
        y = np.asarray(y, dtype=float).reshape(len(times), -1)
        write_path_csv(out / f"path_seed{seed}.csv", times, x, y)
        worst = max(worst, float(np.max(np.abs(x))), float(np.max(np.abs(y))))
        series += [(f"x_{i}", times, x[:, i]) for i in range(x.shape[1])]
        series += [(f"y_{i}", times, y[:, i]) for i in range(y.shape[1])]
    rep.add("max_abs_value", worst, np.inf, bool(np.isfinite(worst)))
    report.svg_plot(out / "plot.svg", series, title="simulated paths", log=log)
    return rep


def run_filter(cfg, out, log):
    _require_priors(cfg, both=False)
    rep = CheckReport()
    series, worst = [], 0.0
    for seed in cfg.seeds:
        model = cfg.model
        if isinstance(model, LinearGaussianModel):
            _, path = simulate_linear_gaussian(model, cfg.prior_mu, cfg.horizon, cfg.dt,
                                               stream(seed, "signal"))
        elif isinstance(model, DiffusionModel):
            x0 = sample(cfg.prior_mu, 1, stream(seed, "x0"))[0]
            _, path = simulate_diffusion(model, x0, cfg.horizon, cfg.dt, stream(seed, "signal"))
        else:
            raise ConfigError(f"filter runs need linear_gaussian or diffusion, got {cfg.model_type}")
        if cfg.filter == "kalman":
            _require(cfg, LinearGaussianModel, "the Kalman-Bucy filter")
            states = kalman_bucy_run(model, cfg.prior_mu, path)
            states = states[::cfg.cadence] + ([states[-1]] if (len(states) - 1) % cfg.cadence else [])
        else:
            states = particle_filter_run(model, cfg.prior_mu, path, cfg.particles,
                                         stream(seed, "filter"), record_every=cfg.cadence)
        report.write_filter_trace(out / f"filter_seed{seed}.csv", states)
        means = np.array([report.moments(s)[0] for s in states])
        times = np.array([s.t for s in states])
        worst = max(worst, float(np.max(np.abs(means))))
        series += [(f"mean_{i}", times, means[:, i]) for i in range(means.shape[1])]
    rep.add("max_abs_mean", worst, np.inf, bool(np.isfinite(worst)))
    report.svg_plot(out / "plot.svg", series, title="filter means", log=log)
    return rep


def run_stability_cmd(cfg, out, log):
    _require_priors(cfg)
    traces = run_stability(cfg)
    for tr in traces:
        tr.to_csv(out / f"trace_seed{tr.seed}.csv")
    _trace_plot(out / "plot.svg", traces, "filter distances", log)
    return evaluate.evaluate_stability(cfg, traces)


def run_counterexample_cmd(cfg, out, log):
    _require_priors(cfg)
    _require(cfg, Example12Model, "the counterexample")
    n_max = cfg.params.get("n_max", 8)
    results = run_counterexample(cfg.model.lam, cfg.prior_mu, cfg.prior_nu, n_max, cfg.seeds,
                                 n_from=cfg.params.get("n_from", 5), workers=cfg.workers)
    rows, series = [], []
    for r in results:
        ns = np.arange(1, len(r.gaps) + 1)
        rows += [[r.seed, n, t, g, r.g_limit] for n, t, g in zip(ns, r.times, r.gaps)]
        series.append(("|g_n - g_limit|", ns, np.abs(r.gaps - r.g_limit)))
    report.write_rows(out / "gaps.csv", ["seed", "n", "t", "g", "g_limit"], rows)
    report.write_rows(out / "limits.csv", ["seed", "x0", "g_limit", "residual"],
                      [[r.seed, r.x0, r.g_limit, r.residual] for r in results])
    report.svg_plot(out / "plot.svg", series, title="gap minus limit", xlabel="n", log=log)
    return evaluate.evaluate_counterexample(cfg, results)


def run_predictor_cmd(cfg, out, log):
    _require_priors(cfg)
    _require(cfg, DiscreteChainModel, "predictor merging")
    traces = run_predictor_merging(cfg.model, cfg.prior_mu, cfg.prior_nu, cfg.steps,
                                   cfg.particles, cfg.seeds, cadence=cfg.cadence,
                                   workers=cfg.workers, bl_trials=cfg.bl_trials)
    for tr in traces:
        tr.to_csv(out / f"trace_seed{tr.seed}.csv")
    _trace_plot(out / "plot.svg", traces, "predictor distances", log, x_label="n")
    return evaluate.evaluate_predictor(cfg, traces)


def run_convolution_cmd(cfg, out, log):
    ns = [int(n) for n in cfg.params.get("ns", [1, 2, 4, 8, 16])]
    xi = GaussianNoise.standard(1, cfg.params.get("noise_var", 1.0))
    rows = run_convolution_merging(ns, xi)
    cols = ["n", "bl", "tv_discrete", "tv_convolved", "closed_form"]
    report.write_rows(out / "convolution.csv", cols, [[r[c] for c in cols] for r in rows])
    n = np.array(ns, dtype=float)
    report.svg_plot(out / "plot.svg", [(c, n, [r[c] for r in rows]) for c in cols[1:]],
                    title="point masses with and without noise", xlabel="n", log=log)
    return evaluate.evaluate_convolution(cfg, rows)


def run_diagnose_cmd(cfg, out, log):
    if isinstance(cfg.model, FiniteHMM):
        if cfg.prior_mu is None:
            raise ConfigError("[prior.mu] with type = probabilities required")
        worst = run_lemma42_check(cfg.model, cfg.prior_mu, cfg.params.get("t_max", 3),
                                  cfg.params.get("k", 2))
        rep = CheckReport()
        bound = cfg.criteria.get("discrepancy", 1e-12)
        rep.add("future_law_discrepancy", worst, bound, worst <= bound)
    elif isinstance(cfg.model, DiffusionModel):
        rep = _diagnose_diffusion(cfg)
    else:
        raise ConfigError(f"diagnose needs a diffusion or finite_hmm model, got {cfg.model_type}")
    rep.to_csv(out / "diagnostics.csv")
    return rep


def _diagnose_diffusion(cfg):
    model = cfg.model
    seed = cfg.seeds[0]
    probes = np.asarray(cfg.params.get("probes", [0.0]), dtype=float).reshape(-1, model.state_dim)
    grid = np.linspace(-20.0, 20.0, 4001).reshape(-1, 1) if model.state_dim == 1 else probes
    rep = validate_declared_constants(model, grid, stream(seed, "probe"))
    eps0 = model_constants(model, 0.0).eps0
    eps = cfg.params.get("eps_fraction", 0.5) * (eps0 if np.isfinite(eps0) else 2.0)
    sandwich = verify_sandwich(model, eps, cfg.params.get("pairs", 2000), stream(seed, "pairs"),
                               raise_on_fail=False)
    rep.rows += sandwich.rows
    times = cfg.params.get("check_times", [cfg.horizon])
    flow = verify_flow_deviation(model, max(times), cfg.params.get("mc_paths", 2000), probes,
                                 stream(seed, "flow"), dt=cfg.dt, check_times=times,
                                 raise_on_fail=False)
    rep.rows += flow.rows
    return rep


RUNNERS = {
    "simulate": run_simulate,
    "filter": run_filter,
    "stability": run_stability_cmd,
    "counterexample": run_counterexample_cmd,
    "predictor": run_predictor_cmd,
    "convolution": run_convolution_cmd,
    "diagnose": run_diagnose_cmd,
}


def run_config(command, config_name, out=None, log=False):
    path = resolve_config(config_name)
    cfg = load_config(path)
    if cfg.kind not in SUBCOMMAND_KINDS[command]:
        raise ConfigError(f"{path}: kind {cfg.kind!r} does not match subcommand {command!r}")
    out_dir = output_dir(cfg, path, out)
    rep = RUNNERS[command](cfg, out_dir, log)
    report.write_summary(out_dir / "summary.txt", rep)
    return rep, out_dir


def _observability(args):
    if args.config:
        cfg = load_config(resolve_config(args.config))
        _require(cfg, LinearGaussianModel, "the observability test")
        A, C = cfg.model.A, cfg.model.C
    elif args.A is not None and args.C is not None:
        A, C = parse_matrix(args.A), parse_matrix(args.C)
    else:
        raise ConfigError("observability needs --config or both --A and --C")
    rep = observability_matrix_rank(A, C, tol=args.tol)
    print(rep.summary(), end="")
    return 0


def _check_all(args):
    from .checks import run_all

    root = Path(args.out) if args.out else Path(os.environ.get(OUTPUT_ROOT_VAR, "filterlab-output")) / "check-all"
    root.mkdir(parents=True, exist_ok=True)
    results = run_all(only=args.only, echo=True)
    rep = CheckReport()
    for r in results:
        rep.add(r.name, r.value, r.bound, r.passed)
    rep.to_csv(root / "acceptance.csv")
    report.write_summary(root / "summary.txt", rep)
    return 0 if rep.passed else 1


def build_parser():
    parser = argparse.ArgumentParser(prog="filterlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in RUNNERS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="config file (or name of a bundled one)")
        p.add_argument("--out", help="output directory (overrides the output root)")
        p.add_argument("--log", action="store_true", help="log-scale y axis in plot.svg")
    p = sub.add_parser("observability")
    p.add_argument("--config")
    p.add_argument("--A", help="drift matrix, rows separated by ';'")
    p.add_argument("--C", help="observation matrix, rows separated by ';'")
    p.add_argument("--tol", type=float, default=1e-10)
    p = sub.add_parser("check-all")
    p.add_argument("--only", nargs="*", help="run only the named criteria")
    p.add_argument("--out")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "observability":
            return _observability(args)
        if args.command == "check-all":
            return _check_all(args)
        rep, out_dir = run_config(args.command, args.config, args.out, args.log)
        print(rep.summary(), end="")
        print(f"outputs: {out_dir}")
        return 0 if rep.passed else 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (AssertionError, FilterLabError) as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
