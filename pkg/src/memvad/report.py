"""Evaluation report emission: JSON summary, curve dumps, and figures.

The report directory receives ``report.json`` with the three metric
values at 4 decimals, one ``<name>_curve.csv`` per curve (threshold, x, y
at 6 decimals), and, unless disabled, one PNG rendering per curve.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .metrics import CurveResult


def write_curve_csv(curve: CurveResult, path: str | Path) -> None:
    lines = ["threshold,x,y\n"]
    for t, x, y in zip(curve.thresholds, curve.x, curve.y):
        t_str = "inf" if np.isinf(t) else f"{t:.6f}"
        lines.append(f"{t_str},{x:.6f},{y:.6f}\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


def _render_curve(curve: CurveResult, title: str, xlabel: str, ylabel: str, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(curve.x, curve.y, marker=".", lw=1.5)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(f"{title} (AUC = {curve.auc:.4f})")
    ax.grid(True, alpha=0.3)
    ax.set_ylim(-0.02, 1.02)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_eval_report(
    out_dir: str | Path,
    frame_roc: CurveResult,
    rbdc_curve: CurveResult,
    tbdc_curve: CurveResult,
    meta: dict,
    figures: bool = True,
) -> dict:
    """Write report.json + curve CSVs (+ PNGs) and return the summary."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = {
        "frame_auc": round(frame_roc.auc, 4),
        "rbdc": round(rbdc_curve.auc, 4),
        "tbdc": round(tbdc_curve.auc, 4),
    }
    summary.update(meta)
    (out_dir / "report.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    write_curve_csv(frame_roc, out_dir / "roc_curve.csv")
    write_curve_csv(rbdc_curve, out_dir / "rbdc_curve.csv")
    write_curve_csv(tbdc_curve, out_dir / "tbdc_curve.csv")
    if figures:
        _render_curve(
            frame_roc,
            "Frame-level ROC",
            "false positive rate",
            "true positive rate",
            out_dir / "roc.png",
        )
        _render_curve(
            rbdc_curve,
            "Region-based detection",
            "false positives per frame",
            "fraction of regions detected",
            out_dir / "rbdc.png",
        )
        _render_curve(
            tbdc_curve,
            "Track-based detection",
            "false positives per frame",
            "fraction of tracks detected",
            out_dir / "tbdc.png",
        )
    return summary
