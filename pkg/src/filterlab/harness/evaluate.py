"""Turn experiment results into pass/fail rows using a config's criteria."""
import numpy as np
from scipy.stats import spearmanr

from ..diagnostics import CheckReport, unobservable_direction

TINY = 1e-300


def _bound_order_row(report, traces):
    """bl_lower <= bl <= bl_upper in every emitted row (round-off 1e-12)."""
    worst = 0.0
    for tr in traces:
        for r in tr.records:
            if r["bl"] is None:
                continue
            worst = max(worst, r["bl_lower"] - r["bl"], r["bl"] - r["bl_upper"])
    report.add("bound_order_violation", worst, 1e-12, worst <= 1e-12)


def _zero_row(report, traces, tol):
    # bl_upper never drops below 2 sqrt(d) / alpha, so it is left out
    worst = 0.0
    for tr in traces:
        for c in ("bl", "bl_lower", "tv", "mean_gap"):
            vals = tr.column(c)
            vals = vals[np.isfinite(vals)]
            if vals.size:
                worst = max(worst, float(np.max(np.abs(vals))))
    report.add("identical_priors_max", worst, tol, worst <= tol)


def _trend(t, bl):
    if np.all(bl == bl[0]):
        return 0.0
    return float(spearmanr(t, bl).statistic)


def evaluate_stability(cfg, traces):
    crit = cfg.criteria
    report = CheckReport()
    _bound_order_row(report, traces)
    if "zero_tol" in crit:
        _zero_row(report, traces, crit["zero_tol"])
    if "mean_gap_ratio" in crit:
        ratio = max(tr.column("mean_gap")[-1] / max(tr.column("mean_gap")[0], TINY) for tr in traces)
        report.add("mean_gap_ratio", ratio, crit["mean_gap_ratio"], ratio <= crit["mean_gap_ratio"])
    if "cov_gap" in crit:
        if cfg.filter != "kalman":
            raise ValueError("cov_gap needs Kalman-Bucy traces")
        gap = max(tr.column("aux")[-1] for tr in traces)
        report.add("cov_gap", gap, crit["cov_gap"], gap <= crit["cov_gap"])
    if "bl_final" in crit:
        final = max(tr.column("bl")[-1] for tr in traces)
        report.add("bl_final", final, crit["bl_final"], final < crit["bl_final"])
    if "bl_trend" in crit:
        trend = max(_trend(tr.column("t"), tr.column("bl")) for tr in traces)
        report.add("bl_rank_correlation", trend, crit["bl_trend"], trend <= crit["bl_trend"])
    if "unobserved_ratio" in crit:
        direction = unobservable_direction(cfg.model.A, cfg.model.C)
        if direction is None:
            ratio = 0.0
        else:
            ratios = []
            for tr in traces:
                first = abs(direction @ (tr.pair.filter_mu[0].mean - tr.pair.filter_nu[0].mean))
                last = abs(direction @ (tr.pair.filter_mu[-1].mean - tr.pair.filter_nu[-1].mean))
                ratios.append(last / max(first, TINY))
            ratio = min(ratios)
        report.add("unobserved_gap_ratio", ratio, crit["unobserved_ratio"],
                   ratio >= crit["unobserved_ratio"])
    return report


def evaluate_counterexample(cfg, results):
    crit = cfg.criteria
    report = CheckReport()
    if "zero_tol" in crit:
        worst = max(float(np.max(np.abs(r.gaps))) for r in results)
        report.add("identical_priors_max", worst, crit["zero_tol"], worst <= crit["zero_tol"])
    if "residual" in crit:
        min_gap = crit.get("min_gap", 0.0)
        good = [r.residual <= crit["residual"] and abs(r.g_limit) > min_gap for r in results]
        fraction = float(np.mean(good))
        report.add("converged_and_separated_fraction", fraction, crit.get("min_fraction", 1.0),
                   fraction >= crit.get("min_fraction", 1.0))
        report.details["worst_residual"] = max(r.residual for r in results)
    return report


def evaluate_predictor(cfg, traces):
    crit = cfg.criteria
    report = CheckReport()
    _bound_order_row(report, traces)
    if "zero_tol" in crit:
        _zero_row(report, traces, crit["zero_tol"])
    if "bl_ratio" in crit:
        bl = np.array([tr.column("bl") for tr in traces])
        ratio = float(np.median(bl[:, -1]) / max(np.median(bl[:, 0]), TINY))
        report.add("median_bl_ratio", ratio, crit["bl_ratio"], ratio <= crit["bl_ratio"])
    return report


def evaluate_convolution(cfg, rows):
    crit = cfg.criteria
    report = CheckReport()
    tv_d = np.array([r["tv_discrete"] for r in rows])
    report.add("tv_discrete_min", tv_d.min(), 2.0, bool(np.all(tv_d == 2.0)))
    bl_err = max(abs(r["bl"] - min(2.0, 1.0 / r["n"])) for r in rows)
    report.add("bl_error", bl_err, 1e-9, bl_err <= 1e-9)
    if "tv_tol" in crit:
        err = max(abs(r["tv_convolved"] - r["closed_form"]) for r in rows)
        report.add("tv_convolved_error", err, crit["tv_tol"], err <= crit["tv_tol"])
    tv_c = np.array([r["tv_convolved"] for r in rows])
    order = np.argsort([r["n"] for r in rows])
    steps = np.diff(tv_c[order])
    worst = float(steps.max()) if steps.size else -1.0
    report.add("tv_convolved_max_increase", worst, 0.0, worst < 0.0)
    return report

