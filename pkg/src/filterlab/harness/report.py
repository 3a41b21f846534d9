"""CSV, SVG and summary writers.

Everything is written deterministically (fixed number formatting, no
timestamps) so a rerun with the same config produces identical bytes.
"""
import csv
import math

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2",
           "#7f7f7f", "#bcbd22", "#17becf")


def write_rows(path, header, rows):
    """RFC-4180 CSV (csv module defaults: minimal quoting, CRLF line ends)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def moments(state):
    if hasattr(state, "cov"):
        return state.mean, state.cov, None
    return state.measure.mean(), state.measure.covariance(), state.ess


def write_filter_trace(path, states):
    """Columns t, mean_i, cov_ij, ess (blank for Kalman-Bucy states)."""
    d = moments(states[0])[0].size
    header = ["t"] + [f"mean_{i}" for i in range(d)]
    header += [f"cov_{i}{j}" for i in range(d) for j in range(d)] + ["ess"]
    rows = []
    for s in states:
        mean, cov, ess = moments(s)
        rows.append([s.t, *np.ravel(mean), *np.ravel(cov), ess])
    write_rows(path, header, rows)


def write_summary(path, report):
    with open(path, "w") as fh:
        fh.write(report.summary())


def _fmt(v):
    return f"{v:.2f}"


def svg_plot(path, series, title="", xlabel="t", log=False, width=720, height=420):
    """Polylines of y against x for every entry of ``series``.

    ``series`` is a list of ``(label, x, y)``. With ``log`` the y axis is
    log10 and non-positive or non-finite values break the line.
    """
    left, right, top, bottom = 70, 160, 40, 50
    pw, ph = width - left - right, height - top - bottom

    def transform(y):
        y = np.asarray(y, dtype=float)
        if log:
            with np.errstate(divide="ignore", invalid="ignore"):
                return np.where(y > 0, np.log10(y), np.nan)
        return y

    xs = np.concatenate([np.asarray(x, float) for _, x, _ in series]) if series else np.zeros(1)
    ys = np.concatenate([transform(y) for _, _, y in series]) if series else np.zeros(1)
    ys = ys[np.isfinite(ys)]
    x0, x1 = float(np.min(xs)), float(np.max(xs))
    y0, y1 = (float(ys.min()), float(ys.max())) if ys.size else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5

    def px(x):
        return left + (x - x0) / (x1 - x0) * pw

    def py(y):
        return top + (1.0 - (y - y0) / (y1 - y0)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
           f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" font-size="14">{_escape(title)}</text>',
           f'<text x="{left + pw / 2:.1f}" y="{height - 12}" text-anchor="middle" font-size="12">'
           f'{_escape(xlabel)}</text>']
    for frac in np.linspace(0.0, 1.0, 5):
        xv, yv = x0 + frac * (x1 - x0), y0 + frac * (y1 - y0)
        ylab = f"1e{yv:.1f}" if log else f"{yv:.3g}"
        out.append(f'<text x="{px(xv):.1f}" y="{top + ph + 16}" text-anchor="middle" '
                   f'font-size="10">{xv:.3g}</text>')
        out.append(f'<text x="{left - 6}" y="{py(yv) + 3:.1f}" text-anchor="end" '
                   f'font-size="10">{ylab}</text>')
    labels = []
    for label, x, y in series:
        if label not in labels:
            labels.append(label)
    for label, x, y in series:
        color = PALETTE[labels.index(label) % len(PALETTE)]
        ty = transform(y)
        for seg in _segments(np.asarray(x, float), ty):
            pts = " ".join(f"{_fmt(px(a))},{_fmt(py(b))}" for a, b in seg)
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{pts}"/>')
    for i, label in enumerate(labels):
        y = top + 14 + 16 * i
        color = PALETTE[i % len(PALETTE)]
        out.append(f'<line x1="{left + pw + 12}" y1="{y - 4}" x2="{left + pw + 32}" y2="{y - 4}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 38}" y="{y}" font-size="11">{_escape(label)}</text>')
    out.append("</svg>\n")
    with open(path, "w") as fh:
        fh.write("\n".join(out))


def _segments(x, y):
    seg = []
    for a, b in zip(x, y):
        if math.isfinite(a) and math.isfinite(b):
            seg.append((a, b))
        elif seg:
            yield seg
            seg = []
    if seg:
        yield seg


def _escape(text):
    return str(text).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
