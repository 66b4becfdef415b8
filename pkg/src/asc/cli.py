"""Command-line interface.

Exit codes: 0 ok, 2 config error, 3 data error, 4 internal consistency
error, 1 anything else.
"""

from __future__ import annotations

import functools
import sys
from pathlib import Path

import click
import torch

from . import harness, metrics, plotting
from .adaptation import AdaptConfig, tx_code_adapt, tx_model_adapt, txrx_model_adapt
from .channel import ChannelConfig, CsiSampler
from .checkpoint import load_checkpoint
from .data import load_image, save_image
from .delta_codec import DeltaQuantConfig
from .errors import (
    AscError,
    ConfigError,
    DataError,
    EvaluationError,
    InternalConsistencyError,
)

_EXIT_CODES = (
    (ConfigError, 2),
    (InternalConsistencyError, 4),
    (DataError, 3),
)


def _exit_mapped(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except AscError as exc:
            click.echo(f"error: {exc}", err=True)
            for cls, code in _EXIT_CODES:
                if isinstance(exc, cls):
                    sys.exit(code)
            sys.exit(1)

    return wrapper


@click.group()
def main() -> None:
    """Adaptive joint source-channel coding laboratory."""


@main.command("train-baseline")
@click.option("--config", "config_path", required=True, type=click.Path())
@_exit_mapped
def train_baseline_cmd(config_path: str) -> None:
    """Train one baseline checkpoint per configured lambda."""
    cfg = harness.load_config(config_path)
    paths = harness.train_baseline(cfg)
    for p in paths:
        click.echo(f"checkpoint: {p}")


@main.command("adapt")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--checkpoint", required=True, type=click.Path(),
              help="Checkpoint file or directory of ckpt_lambda*.npz")
@_exit_mapped
def adapt_cmd(config_path: str, checkpoint: str) -> None:
    """Run the adaptation campaign and write report CSVs."""
    cfg = harness.load_config(config_path)
    out = harness.run_adaptation_campaign(cfg, checkpoint)
    for scheme, path in out.reports.items():
        click.echo(f"report: {scheme} -> {path}")
    if out.errors is not None:
        click.echo(f"errors recorded in {out.errors}", err=True)


@main.command("transmit")
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--image", "image_path", required=True, type=click.Path())
@click.option("--snr-db", required=True, type=float)
@click.option("--scheme", default="baseline",
              type=click.Choice(["baseline", "tx_model", "tx_code", "txrx_full"]))
@click.option("--channel", "channel_kind", default="awgn",
              type=click.Choice(["awgn", "block_fading", "selective_fading"]))
@click.option("--eta-y", type=float, default=None,
              help="Bandwidth scaling; defaults to the checkpoint's value")
@click.option("--steps", type=int, default=None,
              help="Adaptation steps override for non-baseline schemes")
@click.option("--beta", type=float, default=1.0, help="Model-rate weight (txrx)")
@click.option("--seed", type=int, default=0)
@click.option("--output", type=click.Path(), default=None,
              help="Save the reconstruction here (PNG)")
@_exit_mapped
def transmit_cmd(checkpoint, image_path, snr_db, scheme, channel_kind,
                 eta_y, steps, beta, seed, output) -> None:
    """Transmit one image at the given SNR and report its metrics."""
    codec, meta = load_checkpoint(checkpoint)
    lambda_ = float(meta.get("lambda_", 16.0))
    eta_y = eta_y if eta_y is not None else float(meta.get("eta_y", 0.2))
    x = load_image(image_path)
    ch = ChannelConfig(kind=channel_kind, snr_db=snr_db)
    model_bits = 0.0
    if scheme != "baseline":
        sampler = CsiSampler(ch, torch.Generator().manual_seed(seed + 1))
        if scheme == "tx_model":
            acfg = AdaptConfig(mode="tx_model", lambda_=lambda_, eta_y=eta_y,
                               steps=steps if steps is not None else 100, seed=seed)
            res = tx_model_adapt(codec, x, sampler, acfg)
            codec = res.codec
        elif scheme == "tx_code":
            n = steps if steps is not None else 100
            acfg = AdaptConfig(mode="tx_code", lambda_=lambda_, eta_y=eta_y, lr=1e-3,
                               y_steps=n // 2, s_steps=n - n // 2, seed=seed)
            res = tx_code_adapt(codec, x, sampler, acfg)
            rng = torch.Generator().manual_seed(seed + 2)
            rec = harness.evaluate_code_instance(
                codec, x, res, ch, eta_y, rng, scope="cli", lambda_=lambda_
            )
            _echo_record(rec)
            return
        else:
            acfg = AdaptConfig(mode="txrx_full", lambda_=lambda_, eta_y=eta_y,
                               beta=beta, steps=steps if steps is not None else 10000,
                               seed=seed)
            res = txrx_model_adapt(codec, x, sampler, acfg, DeltaQuantConfig())
            codec = res.codec
            model_bits = res.model_bits
    rng = torch.Generator().manual_seed(seed + 2)
    rec = harness.evaluate_instance(
        codec, x, ch, eta_y, rng, scope="cli", lambda_=lambda_,
        model_bits=model_bits,
    )
    _echo_record(rec)
    if output is not None:
        sampler = CsiSampler(ch, torch.Generator().manual_seed(seed + 2))
        with torch.no_grad():
            out = codec(x, sampler, ch.noise_variance, eta_y,
                        rng=torch.Generator().manual_seed(seed + 2), train_mode=False)
        save_image(out.x_hat, output)
        click.echo(f"reconstruction: {output}")


def _echo_record(rec) -> None:
    click.echo(
        f"R={rec.cbr_content:.6f} M={rec.cbr_model:.6f} "
        f"R+M={rec.cbr_total:.6f} mse={rec.mse:.6g} psnr={rec.psnr_db:.3f} dB"
    )


@main.command("evaluate")
@click.option("--reports", "report_dir", required=True, type=click.Path())
@click.option("--external", "external_csv", type=click.Path(), default=None,
              help="External (R, psnr) curve CSV to compare against baseline")
@_exit_mapped
def evaluate_cmd(report_dir: str, external_csv) -> None:
    """Summarize reports: BD-rate of each scheme against the baseline."""
    report_dir = Path(report_dir)
    baseline_path = report_dir / "baseline.csv"
    if not baseline_path.is_file():
        raise DataError(f"no baseline report under {report_dir}")
    baseline = metrics.read_report(baseline_path)
    by_snr_base = _group_by_snr(baseline)
    rows = []
    for path in sorted(report_dir.glob("*.csv")):
        if path.stem in ("baseline", "errors", "summary"):
            continue
        for snr_db, recs in _group_by_snr(metrics.read_report(path)).items():
            if snr_db not in by_snr_base:
                continue
            ref = harness.scheme_curve(by_snr_base[snr_db])
            cand = harness.scheme_curve(recs)
            try:
                bd = metrics.bd_rate(ref, cand)
                rows.append((snr_db, path.stem, bd))
            except EvaluationError as exc:
                click.echo(f"skipping {path.stem} @ {snr_db} dB: {exc}", err=True)
    if external_csv is not None:
        curve = harness.ingest_external_curve(external_csv)
        for snr_db, recs in by_snr_base.items():
            try:
                bd = metrics.bd_rate(harness.scheme_curve(recs), curve)
                rows.append((snr_db, Path(external_csv).stem, bd))
            except EvaluationError as exc:
                click.echo(f"skipping external curve @ {snr_db} dB: {exc}", err=True)
    if not rows:
        raise EvaluationError("nothing to summarize (need >= 4 rate points per curve)")
    summary = report_dir / "summary.csv"
    with open(summary, "w", newline="") as fh:
        fh.write("snr_db,scheme,bd_rate_percent\n")
        for snr_db, scheme, bd in sorted(rows):
            fh.write(f"{metrics.format_float(snr_db)},{scheme},{metrics.format_float(bd)}\n")
    click.echo(f"{'SNR':>6}  {'scheme':<12} {'BD-rate vs baseline':>20}")
    for snr_db, scheme, bd in sorted(rows):
        click.echo(f"{snr_db:>6g}  {scheme:<12} {bd:>19.2f}%")
    click.echo(f"summary: {summary}")


def _group_by_snr(records):
    out: dict[float, list] = {}
    for r in records:
        out.setdefault(r.snr_db, []).append(r)
    return out


@main.command("plot")
@click.option("--reports", "report_dir", required=True, type=click.Path())
@click.option("--out", "out_dir", type=click.Path(), default=None)
@_exit_mapped
def plot_cmd(report_dir: str, out_dir) -> None:
    """Render RD and trajectory figures from report CSVs."""
    written = plotting.plot_reports(report_dir, out_dir)
    for p in written:
        click.echo(f"figure: {p}")
    if not written:
        click.echo("no figures produced", err=True)


if __name__ == "__main__":
    main()
