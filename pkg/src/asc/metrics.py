"""Distortion, channel-bandwidth accounting, and rate-distortion curve comparison."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch
from scipy.interpolate import PchipInterpolator

from .entropy_model import RateAllocation
from .errors import ConfigError, DimensionError, EvaluationError

REPORT_HEADER = ["scope", "snr_db", "lambda", "beta", "R", "M", "R_plus_M", "mse", "psnr"]


def mse(x: torch.Tensor, x_hat: torch.Tensor) -> float:
    if x.shape != x_hat.shape:
        raise DimensionError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    return float(((x - x_hat) ** 2).mean())


def psnr(x: torch.Tensor, x_hat: torch.Tensor) -> float:
    """Peak SNR in dB for signals on [0, 1]; +inf on exact equality."""
    err = mse(x, x_hat)
    if err == 0.0:
        return math.inf
    return -10.0 * math.log10(err)


def content_cbr(
    alloc: RateAllocation,
    source_dims: int,
    count_side_info: bool = True,
    bits_per_symbol: float = 2.0,
) -> float:
    """Content-stream channel bandwidth ratio R = symbols / source dims.

    When ``count_side_info`` is set (the default), the q bits per token
    signaling the bandwidth choice are charged as ceil(q*l / C) extra
    symbols at C bits per symbol.
    """
    if source_dims <= 0:
        raise ConfigError("source_dims must be > 0")
    symbols = alloc.total_symbols
    if count_side_info:
        l = alloc.k_bar.numel()
        symbols += math.ceil(alloc.side_info_bits * l / bits_per_symbol)
    return symbols / source_dims


def model_cbr(
    model_bits: float,
    source_dims: int,
    bits_per_symbol: float = 2.0,
    amortize_over: int = 1,
) -> float:
    """Model-stream CBR M; amortized over the instances a model serves."""
    if source_dims <= 0:
        raise ConfigError("source_dims must be > 0")
    if amortize_over < 1:
        raise ConfigError("amortize_over must be >= 1")
    return (model_bits / bits_per_symbol) / source_dims / amortize_over


@dataclass(frozen=True)
class RDMRecord:
    """One evaluation point: rates, distortion, and its experiment coordinates."""

    scope: str
    snr_db: float
    lambda_: float
    beta: float
    cbr_content: float
    cbr_model: float
    mse: float
    psnr_db: float

    @property
    def cbr_total(self) -> float:
        return self.cbr_content + self.cbr_model

    def row(self) -> list[str]:
        vals = [
            self.snr_db, self.lambda_, self.beta, self.cbr_content,
            self.cbr_model, self.cbr_total, self.mse, self.psnr_db,
        ]
        return [self.scope] + [format_float(v) for v in vals]


def format_float(v: float) -> str:
    """Canonical float formatting so identical runs give identical bytes."""
    if math.isinf(v):
        return "inf"
    return f"{v:.10g}"


def write_report(path: str | Path, records: Iterable[RDMRecord]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_HEADER)
        for rec in records:
            writer.writerow(rec.row())
    return path


def read_report(path: str | Path) -> list[RDMRecord]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            out.append(
                RDMRecord(
                    scope=row["scope"],
                    snr_db=float(row["snr_db"]),
                    lambda_=float(row["lambda"]),
                    beta=float(row["beta"]),
                    cbr_content=float(row["R"]),
                    cbr_model=float(row["M"]),
                    mse=float(row["mse"]),
                    psnr_db=float(row["psnr"]),
                )
            )
    return out


def _curve_arrays(curve) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(curve, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise EvaluationError("curve must be a sequence of (rate, quality) pairs")
    if arr.shape[0] < 4:
        raise EvaluationError("curve needs at least 4 points")
    if np.any(arr[:, 0] <= 0):
        raise EvaluationError("rates must be positive")
    order = np.argsort(arr[:, 1])
    quality = arr[order, 1]
    log_rate = np.log10(arr[order, 0])
    if np.any(np.diff(quality) <= 0):
        raise EvaluationError("curve quality values must be distinct")
    return quality, log_rate


def bd_rate(curve_a: Sequence, curve_b: Sequence) -> float:
    """Average rate difference of curve_b versus curve_a at equal quality, in
    percent; negative means b spends less rate.

    Piecewise-cubic Hermite interpolation of log10-rate against quality,
    integrated exactly over the common quality interval.
    """
    qa, ra = _curve_arrays(curve_a)
    qb, rb = _curve_arrays(curve_b)
    lo = max(qa.min(), qb.min())
    hi = min(qa.max(), qb.max())
    if hi <= lo:
        raise EvaluationError("curves share no quality overlap")
    fa = PchipInterpolator(qa, ra).antiderivative()
    fb = PchipInterpolator(qb, rb).antiderivative()
    avg_diff = ((fb(hi) - fb(lo)) - (fa(hi) - fa(lo))) / (hi - lo)
    return float((10.0**avg_diff - 1.0) * 100.0)


def bd_psnr(curve_a: Sequence, curve_b: Sequence) -> float:
    """Average quality difference of curve_b versus curve_a at equal rate, in
    dB; positive means b reconstructs better."""
    qa, ra = _curve_arrays(curve_a)
    qb, rb = _curve_arrays(curve_b)
    if np.any(np.diff(ra) <= 0) or np.any(np.diff(rb) <= 0):
        raise EvaluationError("rate must increase with quality for bd_psnr")
    lo = max(ra.min(), rb.min())
    hi = min(ra.max(), rb.max())
    if hi <= lo:
        raise EvaluationError("curves share no rate overlap")
    fa = PchipInterpolator(ra, qa).antiderivative()
    fb = PchipInterpolator(rb, qb).antiderivative()
    return float(((fb(hi) - fb(lo)) - (fa(hi) - fa(lo))) / (hi - lo))
