"""Figure rendering for campaign reports.

Reads the delimited reports a campaign wrote and renders raster figures
next to them: one rate-distortion plot per channel point, and one
trajectory plot per transceiver adaptation log.  Plot failures are
isolated per figure and never touch the CSVs.
"""

from __future__ import annotations

import csv
import warnings
from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import RDMRecord, read_report

SCHEME_STYLE = {
    "baseline": dict(color="0.35", marker="o"),
    "tx_model": dict(color="tab:blue", marker="s"),
    "tx_code": dict(color="tab:green", marker="^"),
    "txrx_full": dict(color="tab:red", marker="D"),
}


def _rd_points(records: Sequence[RDMRecord]) -> np.ndarray:
    by_lambda: dict[float, list[RDMRecord]] = {}
    for r in records:
        by_lambda.setdefault(r.lambda_, []).append(r)
    pts = []
    for lam in sorted(by_lambda):
        rs = by_lambda[lam]
        pts.append(
            (
                float(np.mean([r.cbr_total for r in rs])),
                float(np.mean([r.psnr_db for r in rs])),
            )
        )
    return np.asarray(sorted(pts), dtype=np.float64)


def build_rd_figure(
    per_scheme: dict[str, list[RDMRecord]], snr_db: float
) -> tuple[plt.Figure, plt.Axes]:
    """RD curves (total CBR vs PSNR) for every scheme at one channel point."""
    fig, ax = plt.subplots(figsize=(5.2, 4.0))
    for scheme, records in per_scheme.items():
        if not records:
            continue
        pts = _rd_points(records)
        style = SCHEME_STYLE.get(scheme, {})
        ax.plot(pts[:, 0], pts[:, 1], label=scheme, lw=1.4, ms=4, **style)
    ax.set_xlabel("channel bandwidth ratio (R + M)")
    ax.set_ylabel("PSNR (dB)")
    ax.set_title(f"SNR = {snr_db:g} dB")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    return fig, ax


def build_trajectory_figure(log_path: Path) -> tuple[plt.Figure, Sequence[plt.Axes]]:
    """Loss and PSNR against adaptation step for one transceiver run."""
    steps, losses, psnrs = [], [], []
    with open(log_path, newline="") as fh:
        for row in csv.DictReader(fh):
            steps.append(int(row["step"]))
            losses.append(float(row["loss"]))
            psnrs.append(float(row["psnr"]))
    fig, axes = plt.subplots(1, 2, figsize=(8.0, 3.2))
    axes[0].plot(steps, losses, color="tab:red", lw=1.0)
    axes[0].set_xlabel("step")
    axes[0].set_ylabel("RDM loss")
    axes[1].plot(steps, psnrs, color="tab:blue", lw=1.0)
    axes[1].set_xlabel("step")
    axes[1].set_ylabel("PSNR (dB)")
    for ax in axes:
        ax.grid(True, alpha=0.3)
    fig.suptitle(log_path.stem, fontsize=9)
    fig.tight_layout()
    return fig, axes


def plot_reports(report_dir: str | Path, out_dir: Optional[str | Path] = None) -> list[Path]:
    """Render every figure the reports support; returns the files written.

    An empty or missing report directory is a warned no-op.  A failure in
    one figure is warned and skipped; remaining figures still render.
    """
    report_dir = Path(report_dir)
    out_dir = Path(out_dir) if out_dir is not None else report_dir / "figures"
    report_files = sorted(report_dir.glob("*.csv")) if report_dir.is_dir() else []
    report_files = [p for p in report_files if p.stem not in ("errors", "summary")]
    if not report_files:
        warnings.warn(f"no reports under {report_dir}; nothing to plot")
        return []
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    by_snr: dict[float, dict[str, list[RDMRecord]]] = {}
    for path in report_files:
        try:
            records = read_report(path)
        except (OSError, KeyError, ValueError) as exc:
            warnings.warn(f"skipping unreadable report {path}: {exc}")
            continue
        for r in records:
            by_snr.setdefault(r.snr_db, {}).setdefault(path.stem, []).append(r)

    for snr_db, per_scheme in sorted(by_snr.items()):
        target = out_dir / f"rd_snr{snr_db:g}.png"
        try:
            fig, _ = build_rd_figure(per_scheme, snr_db)
            fig.savefig(target, dpi=150)
            plt.close(fig)
            written.append(target)
        except Exception as exc:  # plotting must never corrupt reports
            warnings.warn(f"could not render {target}: {exc}")

    log_dir = report_dir / "logs"
    if log_dir.is_dir():
        for log_path in sorted(log_dir.glob("txrx_full_*.csv")):
            target = out_dir / f"trajectory_{log_path.stem}.png"
            try:
                fig, _ = build_trajectory_figure(log_path)
                fig.savefig(target, dpi=150)
                plt.close(fig)
                written.append(target)
            except Exception as exc:
                warnings.warn(f"could not render {target}: {exc}")
    return written
