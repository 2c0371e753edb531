"""CSV tables and minimal static SVG line plots for experiment reports.

Every file is a pure function of the report, so reruns are byte-identical.

Files written to the output directory:

* ``summary.csv``: tolerance, max_diff_dv<j>, min_diff_dv<j> (tangent vs complex
  step), primal_iters, final_residual;
* ``summary_adjoint.csv``: tolerance, max_diff_dv<j>, min_diff_dv<j> (adjoint vs
  complex step over the truncation indices);
* ``diagnostics.csv``: tolerance, status, converged, contraction_ratio,
  convergence_order, error;
* ``max_difference.svg`` / ``min_difference.svg``: differences against tolerance;
* ``case_<i>/history.csv``: iteration, residual_norm, tangent_dv<j>,
  complex_dv<j>, eps_L_dv<j>, eps_u_dv<j>;
* ``case_<i>/adjoint.csv``: k, adjoint_dv<j>, complex_dv<j>, diff_dv<j>;
* ``case_<i>/adjoint_epsilon.csv``: k, eps_lambda, eps_u, eps_D_dv<j>;
* ``case_<i>/iterative_difference.svg`` and ``case_<i>/eps_L_vs_residual.svg``.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .experiments import CaseResult, ErrorReport

_W, _H = 640, 420
_ML, _MR, _MT, _MB = 80, 150, 40, 60
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def _f(v) -> str:
    if v is None:
        return ""
    v = float(v)
    return "" if math.isnan(v) else repr(v)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _col(a, k, j):
    return _f(a[k, j]) if a is not None and k < a.shape[0] else ""


# ----------------------------------------------------------------------------
# svg


def _ticks(lo: float, hi: float, log: bool):
    if log:
        a, b = math.floor(lo), math.ceil(hi)
        step = max(1, (b - a) // 8 + ((b - a) % 8 > 0))
        return [float(e) for e in range(a, b + 1, step)]
    if hi == lo:
        return [lo]
    raw = (hi - lo) / 6.0
    mag = 10.0 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step) * step
    return [start + i * step for i in range(int((hi - start) / step + 1e-9) + 1)]


def write_svg_lineplot(path, series, title: str = "", xlabel: str = "", ylabel: str = "",
                       logx: bool = False, logy: bool = True, markers: bool = False) -> Path:
    """Self-contained SVG of ``series = [(label, x, y), ...]``; non-positive values are dropped on log axes."""
    path = Path(path)
    pts = []
    for label, x, y in series:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        ok = np.isfinite(x) & np.isfinite(y)
        if logx:
            ok &= x > 0
        if logy:
            ok &= y > 0
        tx = np.log10(x[ok]) if logx else x[ok]
        ty = np.log10(y[ok]) if logy else y[ok]
        pts.append((label, tx, ty))
    allx = np.concatenate([p[1] for p in pts]) if pts else np.zeros(0)
    ally = np.concatenate([p[2] for p in pts]) if pts else np.zeros(0)
    x0, x1 = (float(allx.min()), float(allx.max())) if len(allx) else (0.0, 1.0)
    y0, y1 = (float(ally.min()), float(ally.max())) if len(ally) else (0.0, 1.0)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pw, ph = _W - _ML - _MR, _H - _MT - _MB

    def sx(v):
        return _ML + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return _MT + ph - (v - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}" '
           'font-family="sans-serif" font-size="11">',
           f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
           f'<rect x="{_ML}" y="{_MT}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for t in _ticks(x0, x1, logx):
        if x0 - 1e-12 <= t <= x1 + 1e-12:
            lab = f"1e{int(t)}" if logx else f"{t:g}"
            out.append(f'<line x1="{sx(t):.2f}" y1="{_MT + ph}" x2="{sx(t):.2f}" y2="{_MT + ph + 5}" stroke="black"/>')
            out.append(f'<text x="{sx(t):.2f}" y="{_MT + ph + 18}" text-anchor="middle">{lab}</text>')
    for t in _ticks(y0, y1, logy):
        if y0 - 1e-12 <= t <= y1 + 1e-12:
            lab = f"1e{int(t)}" if logy else f"{t:g}"
            out.append(f'<line x1="{_ML - 5}" y1="{sy(t):.2f}" x2="{_ML}" y2="{sy(t):.2f}" stroke="black"/>')
            out.append(f'<text x="{_ML - 8}" y="{sy(t) + 4:.2f}" text-anchor="end">{lab}</text>')
    for i, (label, tx, ty) in enumerate(pts):
        c = _COLORS[i % len(_COLORS)]
        if len(tx):
            coords = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(tx, ty))
            out.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{coords}"/>')
            if markers:
                out += [f'<circle cx="{sx(a):.2f}" cy="{sy(b):.2f}" r="2.5" fill="{c}"/>' for a, b in zip(tx, ty)]
        ly = _MT + 14 + 16 * i
        out.append(f'<line x1="{_W - _MR + 10}" y1="{ly - 4}" x2="{_W - _MR + 30}" y2="{ly - 4}" stroke="{c}" '
                   'stroke-width="2"/>')
        out.append(f'<text x="{_W - _MR + 34}" y="{ly}">{_esc(label)}</text>')
    out.append(f'<text x="{_ML + pw / 2:.1f}" y="{_MT - 14}" text-anchor="middle" font-size="13">{_esc(title)}</text>')
    out.append(f'<text x="{_ML + pw / 2:.1f}" y="{_H - 15}" text-anchor="middle">{_esc(xlabel)}</text>')
    out.append(f'<text x="18" y="{_MT + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 18 {_MT + ph / 2:.1f})">{_esc(ylabel)}</text>')
    out.append("</svg>")
    path.write_text("\n".join(out) + "\n")
    return path


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


# ----------------------------------------------------------------------------
# report emission


def _range_header(nd: int) -> list[str]:
    h = []
    for j in range(nd):
        h += [f"max_diff_dv{j + 1}", f"min_diff_dv{j + 1}"]
    return h


def _range_row(mx, mn) -> list[str]:
    row = []
    for a, b in zip(mx, mn):
        row += [_f(a), _f(b)]
    return row


def emit_plot_data(report: ErrorReport, out_dir) -> list[Path]:
    """Write every table and figure for ``report`` under ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    nd = report.n_directions
    written = []

    rows, arows, drows = [], [], []
    for c in report.cases:
        mx, mn = c.tangent_diff_range()
        rows.append([_f(c.tolerance)] + _range_row(mx, mn) + [str(c.primal_iterations), _f(c.final_residual)])
        amx, amn = c.adjoint_diff_range()
        arows.append([_f(c.tolerance)] + _range_row(amx, amn))
        drows.append([_f(c.tolerance), c.status, str(c.converged), _f(c.contraction_ratio),
                      _f(c.convergence_order), c.error or ""])
    _write_csv(out_dir / "summary.csv", ["tolerance"] + _range_header(nd) + ["primal_iters", "final_residual"], rows)
    _write_csv(out_dir / "summary_adjoint.csv", ["tolerance"] + _range_header(nd), arows)
    _write_csv(out_dir / "diagnostics.csv",
               ["tolerance", "status", "converged", "contraction_ratio", "convergence_order", "error"], drows)
    written += [out_dir / "summary.csv", out_dir / "summary_adjoint.csv", out_dir / "diagnostics.csv"]

    tol = [c.tolerance for c in report.cases]
    for kind, idx in (("max", 0), ("min", 1)):
        series = []
        for j in range(nd):
            series.append((f"tangent dv{j + 1}", tol, [c.tangent_diff_range()[idx][j] for c in report.cases]))
            series.append((f"adjoint dv{j + 1}", tol, [c.adjoint_diff_range()[idx][j] for c in report.cases]))
        written.append(write_svg_lineplot(out_dir / f"{kind}_difference.svg", series,
                                          f"{kind} iterative difference vs linear tolerance",
                                          "linear tolerance", f"{kind} |dL/dD - complex step|",
                                          logx=True, markers=True))

    for i, c in enumerate(report.cases):
        written += emit_case(c, out_dir / f"case_{i:02d}")
    return written


def emit_case(c: CaseResult, case_dir) -> list[Path]:
    case_dir = Path(case_dir)
    case_dir.mkdir(parents=True, exist_ok=True)
    nd = len(c.directions)
    n = len(c.residual_norms)
    eps_l = c.eps_L
    header = ["iteration", "residual_norm"]
    for name in ("tangent", "complex", "eps_L", "eps_u"):
        header += [f"{name}_dv{j + 1}" for j in range(nd)]
    rows = []
    for k in range(n):
        row = [str(k), _f(c.residual_norms[k])]
        for a in (c.tangent, c.complex, eps_l, c.eps_u):
            row += [_col(a, k, j) for j in range(nd)]
        rows.append(row)
    _write_csv(case_dir / "history.csv", header, rows)

    arows = []
    if c.adjoint is not None and c.complex is not None:
        for i, k in enumerate(c.adjoint_k):
            ref = c.complex[k] if k < len(c.complex) else np.full(nd, np.nan)
            arows.append([str(int(k))] + [_f(v) for v in c.adjoint[i]] + [_f(v) for v in ref]
                         + [_f(abs(a - b)) for a, b in zip(c.adjoint[i], ref)])
    _write_csv(case_dir / "adjoint.csv", ["k"] + [f"adjoint_dv{j + 1}" for j in range(nd)]
               + [f"complex_dv{j + 1}" for j in range(nd)] + [f"diff_dv{j + 1}" for j in range(nd)], arows)

    erows = []
    if c.adjoint_eps is not None:
        e = c.adjoint_eps
        for i, k in enumerate(e.k):
            erows.append([str(int(k)), _f(e.eps_lambda[i]), _f(e.eps_u[i])] + [_f(v) for v in e.eps_D[i]])
    _write_csv(case_dir / "adjoint_epsilon.csv",
               ["k", "eps_lambda", "eps_u"] + [f"eps_D_dv{j + 1}" for j in range(nd)], erows)

    its = np.arange(n)
    series = [("residual", its, c.residual_norms)]
    if eps_l is not None:
        series += [(f"tangent dv{j + 1}", its[: len(eps_l)], eps_l[:, j]) for j in range(nd)]
    if c.adjoint is not None and c.complex is not None and len(arows):
        diff = np.abs(c.adjoint - c.complex[c.adjoint_k])
        series += [(f"adjoint dv{j + 1}", c.adjoint_k, diff[:, j]) for j in range(nd)]
    p1 = write_svg_lineplot(case_dir / "iterative_difference.svg", series,
                            f"iterative difference, tolerance {c.tolerance:g}", "iteration", "difference")
    series = []
    if eps_l is not None:
        m = len(eps_l)
        series = [(f"eps_L dv{j + 1}", c.residual_norms[:m], eps_l[:, j]) for j in range(nd)]
    p2 = write_svg_lineplot(case_dir / "eps_L_vs_residual.svg", series, "eps_L against residual norm",
                            "||R^k||", "eps_L", logx=True, markers=True)
    return [case_dir / "history.csv", case_dir / "adjoint.csv", case_dir / "adjoint_epsilon.csv", p1, p2]
