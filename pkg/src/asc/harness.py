"""Experiment runner: baseline training, adaptation campaigns, reports.

A declarative TOML or JSON config describes the datasets, model, training
recipe, evaluation channel grid, and adaptation hyperparameters.  The
campaign walks (scheme x checkpoint x channel point), producing one
report CSV per scheme in the pinned column layout plus per-run
adaptation logs; a failing grid cell becomes an error row and the rest
of the grid still runs.  Everything is seeded: re-running a campaign
with the same config yields byte-identical CSVs.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from . import metrics
from .adaptation import (
    ADAPT_LOG_HEADER,
    AdaptConfig,
    AdaptResult,
    RdObjective,
    StepRecord,
    rd_loss,
    tx_code_adapt,
    tx_model_adapt,
    txrx_model_adapt,
)
from .channel import ChannelConfig, CsiSampler, transmit
from .checkpoint import load_checkpoint, load_compatible_subset, save_checkpoint
from .data import load_folder
from .delta_codec import DeltaQuantConfig
from .errors import AscError, ConfigError, DataError
from .jscc import ChannelSymbols
from .metrics import RDMRecord, content_cbr, format_float, model_cbr
from .model import Codec, CodecConfig, build_codec, snr_inputs
from .transforms import LatentTokens

SCHEMES = ("baseline", "tx_model", "tx_code", "txrx_full")


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from experiment coordinates."""
    text = "|".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & (2**63 - 1)


# -- configuration ----------------------------------------------------------


@dataclass(frozen=True)
class DomainSpec:
    name: str
    dir: Path


@dataclass(frozen=True)
class DataSettings:
    train_dir: Path
    eval_dir: Path
    domains: tuple[DomainSpec, ...] = ()


@dataclass(frozen=True)
class TrainSettings:
    lambdas: tuple[float, ...] = (256.0, 64.0, 16.0, 4.0)
    steps: int = 2000
    batch_size: int = 8
    lr: float = 1e-4
    channel: str = "awgn"
    snr_db: float = 10.0
    snr_range: Optional[tuple[float, float]] = None
    rayleigh_scale: float = 2.0**-0.5
    eta_y: float = 0.2
    eta_z: float = 0.5
    init_from: Optional[Path] = None
    log_every: int = 50

    def __post_init__(self) -> None:
        if not self.lambdas or any(l <= 0 for l in self.lambdas):
            raise ConfigError("training lambdas must be positive and non-empty")
        if self.steps < 1 or self.batch_size < 1:
            raise ConfigError("steps and batch_size must be >= 1")
        if self.steps > 20000:
            raise ConfigError("baseline budget is capped at 20k steps at desk scale")


@dataclass(frozen=True)
class EvalSettings:
    channels: tuple[ChannelConfig, ...]
    schemes: tuple[str, ...] = SCHEMES
    eta_y: float = 0.2
    eta_y_by_snr: tuple[tuple[float, float], ...] = ()
    eta_z: float = 0.5
    max_instances: int = 10
    count_side_info: bool = True
    bits_per_symbol: float = 2.0

    def __post_init__(self) -> None:
        if not self.channels:
            raise ConfigError("evaluation channel grid must be non-empty")
        for s in self.schemes:
            if s not in SCHEMES:
                raise ConfigError(f"unknown scheme {s!r}")

    def eta_for(self, snr_db: float) -> float:
        for snr, eta in self.eta_y_by_snr:
            if snr == snr_db:
                return eta
        return self.eta_y


@dataclass(frozen=True)
class AdaptSettings:
    tx_model_steps: int = 100
    tx_model_lr: float = 1e-4
    tx_code_y_steps: int = 50
    tx_code_s_steps: int = 50
    tx_code_lr: float = 1e-3
    txrx_steps: int = 10000
    txrx_lr_enc: float = 1e-5
    txrx_lr_dec: float = 1e-4
    txrx_beta: float = 1.0
    txrx_eval_every: int = 100
    lambda_beta: tuple[tuple[float, float], ...] = ()
    delta: DeltaQuantConfig = field(default_factory=DeltaQuantConfig)

    def txrx_pair(self, train_lambda: float, lambdas: Sequence[float]) -> tuple[float, float]:
        """(adaptation lambda, beta) for a baseline trained at train_lambda."""
        if self.lambda_beta:
            for i, lam in enumerate(lambdas):
                if lam == train_lambda and i < len(self.lambda_beta):
                    return self.lambda_beta[i]
        return (train_lambda, self.txrx_beta)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    output_dir: Path
    data: DataSettings
    model: CodecConfig
    train: TrainSettings
    eval: EvalSettings
    adapt: AdaptSettings


def _as_path(base: Path, value: str) -> Path:
    p = Path(value)
    return p if p.is_absolute() else (base / p)


def _require_dir(p: Path, what: str) -> Path:
    if not p.is_dir():
        raise ConfigError(f"{what} {p} does not exist")
    return p


def _channel_from_dict(d: dict, base: Path) -> ChannelConfig:
    kw = dict(d)
    if "csi_path" in kw and kw["csi_path"]:
        csi = _as_path(base, kw["csi_path"])
        if not csi.is_file():
            raise ConfigError(f"CSI trace {csi} does not exist")
        kw["csi_path"] = str(csi)
    return ChannelConfig(**kw)


def load_config(path: str | Path) -> ExperimentConfig:
    """Parse and validate a TOML or JSON experiment config.

    Relative paths are resolved against the config file's directory; all
    referenced paths must exist.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        raw = json.loads(text)
    else:
        if sys.version_info >= (3, 11):
            import tomllib
        else:
            import tomli as tomllib
        try:
            raw = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
    base = path.parent
    try:
        data_raw = raw["data"]
        domains = tuple(
            DomainSpec(name=d["name"], dir=_require_dir(_as_path(base, d["dir"]), "domain dir"))
            for d in data_raw.get("domains", [])
        )
        data = DataSettings(
            train_dir=_require_dir(_as_path(base, data_raw["train_dir"]), "train_dir"),
            eval_dir=_require_dir(_as_path(base, data_raw["eval_dir"]), "eval_dir"),
            domains=domains,
        )
        model_raw = dict(raw.get("model", {}))
        if "value_set" in model_raw:
            model_raw["value_set"] = tuple(model_raw["value_set"])
        if "stage_strides" in model_raw:
            model_raw["stage_strides"] = tuple(model_raw["stage_strides"])
        model = CodecConfig(**model_raw)
        train_raw = dict(raw.get("train", {}))
        if "lambdas" in train_raw:
            train_raw["lambdas"] = tuple(float(l) for l in train_raw["lambdas"])
        if train_raw.get("snr_range"):
            train_raw["snr_range"] = tuple(train_raw["snr_range"])
        if train_raw.get("init_from"):
            init = _as_path(base, train_raw["init_from"])
            if not init.is_file():
                raise ConfigError(f"init_from checkpoint {init} does not exist")
            train_raw["init_from"] = init
        else:
            train_raw.pop("init_from", None)
        train = TrainSettings(**train_raw)
        eval_raw = dict(raw.get("eval", {}))
        channels = tuple(
            _channel_from_dict(c, base) for c in eval_raw.pop("channels", [])
        )
        if "schemes" in eval_raw:
            eval_raw["schemes"] = tuple(eval_raw["schemes"])
        if "eta_y_by_snr" in eval_raw:
            eval_raw["eta_y_by_snr"] = tuple(
                (float(k), float(v)) for k, v in eval_raw["eta_y_by_snr"].items()
            )
        evals = EvalSettings(channels=channels, **eval_raw)
        adapt_raw = dict(raw.get("adapt", {}))
        if "delta" in adapt_raw:
            adapt_raw["delta"] = DeltaQuantConfig(**adapt_raw["delta"])
        if "lambda_beta" in adapt_raw:
            adapt_raw["lambda_beta"] = tuple(
                (float(a), float(b)) for a, b in adapt_raw["lambda_beta"]
            )
        adapt = AdaptSettings(**adapt_raw)
        return ExperimentConfig(
            seed=int(raw.get("seed", 0)),
            output_dir=_as_path(base, raw.get("output_dir", "runs")),
            data=data,
            model=model,
            train=train,
            eval=evals,
            adapt=adapt,
        )
    except KeyError as exc:
        raise ConfigError(f"config {path} misses required key {exc}") from exc
    except TypeError as exc:
        raise ConfigError(f"config {path} has an invalid field: {exc}") from exc


# -- baseline training ------------------------------------------------------


def _train_snr(ts: TrainSettings, rng: torch.Generator) -> float:
    if ts.snr_range is not None:
        lo, hi = ts.snr_range
        return lo + (hi - lo) * float(torch.rand((), generator=rng))
    return ts.snr_db


def train_one_baseline(
    images: Sequence[torch.Tensor],
    model_cfg: CodecConfig,
    lambda_: float,
    ts: TrainSettings,
    seed: int,
    curve_path: Optional[Path] = None,
) -> tuple[Codec, list[dict]]:
    """Joint training of all parameter groups on the expected RD loss.

    Single-sample channel Monte Carlo per image, averaged over the batch.
    Deterministic given the seed.
    """
    if not images:
        raise ConfigError("empty training dataset")
    codec = build_codec(model_cfg, seed=derive_seed(seed, "init", lambda_))
    if ts.init_from is not None:
        load_compatible_subset(codec, ts.init_from)
    rng = torch.Generator().manual_seed(derive_seed(seed, "train", lambda_))
    gain_cfg = ChannelConfig(
        kind=ts.channel,
        snr_db=ts.snr_db if ts.snr_range is None else sum(ts.snr_range) / 2,
        rayleigh_scale=ts.rayleigh_scale,
    )
    sampler = CsiSampler(gain_cfg, rng)
    obj_base = RdObjective(lambda_=lambda_, eta_y=ts.eta_y, eta_z=ts.eta_z)
    opt = torch.optim.Adam(codec.parameters(), lr=ts.lr)
    curve: list[dict] = []
    for step in range(ts.steps):
        opt.zero_grad(set_to_none=True)
        idx = torch.randint(len(images), (ts.batch_size,), generator=rng)
        total = None
        acc = {"rate": 0.0, "distortion": 0.0, "psnr": 0.0}
        for i in idx.tolist():
            snr = _train_snr(ts, rng)
            noise_power = 1.0 / (10.0 ** (snr / 10.0))
            loss, parts, _ = rd_loss(
                codec, images[i], sampler, noise_power, obj_base, rng=rng
            )
            total = loss if total is None else total + loss
            acc["rate"] += parts.rate
            acc["distortion"] += parts.distortion
            acc["psnr"] += parts.psnr
        total = total / ts.batch_size
        total.backward()
        opt.step()
        if step % ts.log_every == 0 or step == ts.steps - 1:
            n = ts.batch_size
            curve.append(
                {
                    "step": step,
                    "loss": float(total.detach()),
                    "rate": acc["rate"] / n,
                    "distortion": acc["distortion"] / n,
                    "psnr": acc["psnr"] / n,
                }
            )
    if curve_path is not None:
        curve_path.parent.mkdir(parents=True, exist_ok=True)
        with open(curve_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "loss", "rate", "distortion", "psnr"])
            for row in curve:
                w.writerow([row["step"]] + [format_float(row[k]) for k in
                                            ("loss", "rate", "distortion", "psnr")])
    return codec, curve


def train_baseline(cfg: ExperimentConfig) -> list[Path]:
    """Train one checkpoint per configured lambda; emit training curves."""
    images = load_folder(cfg.data.train_dir)
    ckpt_dir = cfg.output_dir / "checkpoints"
    out = []
    for lambda_ in cfg.train.lambdas:
        curve_path = cfg.output_dir / f"training_curve_lambda{lambda_:g}.csv"
        codec, _ = train_one_baseline(
            images, cfg.model, lambda_, cfg.train, cfg.seed, curve_path
        )
        path = save_checkpoint(
            ckpt_dir / f"ckpt_lambda{lambda_:g}.npz",
            codec,
            lambda_=lambda_,
            eta_y=cfg.train.eta_y,
            eta_z=cfg.train.eta_z,
            train_snr_db=cfg.train.snr_db if cfg.train.snr_range is None
            else list(cfg.train.snr_range),
            train_channel=cfg.train.channel,
            seed=cfg.seed,
            steps=cfg.train.steps,
        )
        out.append(path)
    return out


# -- single-point evaluation ------------------------------------------------


def evaluate_instance(
    codec: Codec,
    x: torch.Tensor,
    channel_cfg: ChannelConfig,
    eta_y: float,
    rng: torch.Generator,
    *,
    scope: str,
    lambda_: float,
    beta: float = 0.0,
    model_bits: float = 0.0,
    amortize_over: int = 1,
    decoder_snr: str = "csi",
    count_side_info: bool = True,
    bits_per_symbol: float = 2.0,
) -> RDMRecord:
    """Deterministic single-instance evaluation into an RDMRecord."""
    sampler = CsiSampler(channel_cfg, rng)
    with torch.no_grad():
        out = codec(
            x, sampler, channel_cfg.noise_variance, eta_y,
            rng=rng, train_mode=False, decoder_snr=decoder_snr,
        )
        err = metrics.mse(x, out.x_hat)
    return RDMRecord(
        scope=scope,
        snr_db=channel_cfg.snr_db if channel_cfg.snr_db is not None
        else -10.0 * math.log10(channel_cfg.noise_variance),
        lambda_=lambda_,
        beta=beta,
        cbr_content=content_cbr(out.alloc, x.numel(), count_side_info, bits_per_symbol),
        cbr_model=model_cbr(model_bits, x.numel(), bits_per_symbol, amortize_over),
        mse=err,
        psnr_db=metrics.psnr(x, out.x_hat),
    )


def evaluate_code_instance(
    codec: Codec,
    x: torch.Tensor,
    result: AdaptResult,
    channel_cfg: ChannelConfig,
    eta_y: float,
    rng: torch.Generator,
    *,
    scope: str,
    lambda_: float,
    count_side_info: bool = True,
    bits_per_symbol: float = 2.0,
) -> RDMRecord:
    """Evaluate a code-adapted transmission: the stored codeword s* is
    transmitted directly; only the decoder side runs."""
    sampler = CsiSampler(channel_cfg, rng)
    noise_power = channel_cfg.noise_variance
    s = result.s_star
    with torch.no_grad():
        h = sampler.sample(len(s))
        snr_tok, _ = snr_inputs(h, noise_power, s.spans)
        s_hat = transmit(s.symbols, h, noise_power, rng)
        y_hat = codec.dec(
            ChannelSymbols(symbols=s_hat, spans=s.spans),
            result.alloc_star,
            snr_tok if codec.config.modnet else None,
        )
        grid = _grid_for(x, codec)
        x_hat = codec.synthesis(LatentTokens(y_hat, grid), clamp=True)
        err = metrics.mse(x, x_hat)
    return RDMRecord(
        scope=scope,
        snr_db=channel_cfg.snr_db if channel_cfg.snr_db is not None
        else -10.0 * math.log10(noise_power),
        lambda_=lambda_,
        beta=0.0,
        cbr_content=content_cbr(result.alloc_star, x.numel(), count_side_info, bits_per_symbol),
        cbr_model=0.0,
        mse=err,
        psnr_db=-10.0 * math.log10(err) if err > 0 else math.inf,
    )


def _grid_for(x: torch.Tensor, codec: Codec) -> tuple[int, int]:
    p = codec.config.patch_size
    return (x.shape[1] // p, x.shape[2] // p)


# -- the campaign -----------------------------------------------------------


def write_adapt_log(path: Path, records: Sequence[StepRecord]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ADAPT_LOG_HEADER)
        for r in records:
            w.writerow(
                [r.step] + [format_float(v) for v in
                            (r.rate, r.model, r.distortion, r.loss, r.psnr)]
            )
    return path


@dataclass
class CampaignOutputs:
    reports: dict[str, Path]
    errors: Optional[Path]
    log_dir: Path


def _collect_checkpoints(checkpoint: str | Path) -> list[Path]:
    p = Path(checkpoint)
    if p.is_dir():
        found = sorted(p.glob("ckpt_lambda*.npz"))
        if not found:
            raise DataError(f"no checkpoints found under {p}")
        return found
    if not p.is_file():
        raise DataError(f"checkpoint {p} does not exist")
    return [p]


def run_adaptation_campaign(
    cfg: ExperimentConfig, checkpoint: str | Path
) -> CampaignOutputs:
    """Evaluate every configured scheme across checkpoints and channels.

    Produces reports/<scheme>.csv, per-run adaptation logs, and an
    errors.csv row for any failing cell (remaining cells still run).
    """
    ckpts = _collect_checkpoints(checkpoint)
    report_dir = cfg.output_dir / "reports"
    log_dir = report_dir / "logs"
    eval_images = load_folder(cfg.data.eval_dir, limit=cfg.eval.max_instances)
    domains = [
        (d.name, load_folder(d.dir)) for d in cfg.data.domains
    ] if "txrx_full" in cfg.eval.schemes else []
    if "txrx_full" in cfg.eval.schemes and not domains:
        raise ConfigError("txrx_full scheme needs at least one domain")

    loaded = []
    for path in ckpts:
        codec, meta = load_checkpoint(path)
        loaded.append((float(meta.get("lambda_", 0.0) or meta.get("lambda", 0.0)), codec))
    loaded.sort(key=lambda t: -t[0])

    records: dict[str, list[RDMRecord]] = {s: [] for s in cfg.eval.schemes}
    errors: list[dict] = []

    def guard(scheme: str, coords: dict, fn) -> None:
        try:
            fn()
        except (AscError, RuntimeError, ValueError) as exc:
            errors.append(
                {"scheme": scheme, **coords, "error": f"{type(exc).__name__}: {exc}"}
            )

    for lambda_, codec in loaded:
        for ch in cfg.eval.channels:
            eta_y = cfg.eval.eta_for(ch.snr_db if ch.snr_db is not None else 0.0)
            coords = {"lambda": lambda_, "snr_db": ch.snr_db}
            common = dict(
                count_side_info=cfg.eval.count_side_info,
                bits_per_symbol=cfg.eval.bits_per_symbol,
            )

            if "baseline" in cfg.eval.schemes:
                for i, x in enumerate(eval_images):
                    scope = f"img{i:03d}"
                    rng = torch.Generator().manual_seed(
                        derive_seed(cfg.seed, "baseline", lambda_, ch.snr_db, scope)
                    )
                    guard("baseline", {**coords, "scope": scope}, lambda x=x, rng=rng, scope=scope: records[
                        "baseline"
                    ].append(
                        evaluate_instance(
                            codec, x, ch, eta_y, rng, scope=scope,
                            lambda_=lambda_, **common,
                        )
                    ))

            if "tx_model" in cfg.eval.schemes:
                for i, x in enumerate(eval_images):
                    scope = f"img{i:03d}"

                    def cell(x=x, scope=scope):
                        seed = derive_seed(cfg.seed, "tx_model", lambda_, ch.snr_db, scope)
                        acfg = AdaptConfig(
                            mode="tx_model", lambda_=lambda_,
                            steps=cfg.adapt.tx_model_steps, lr=cfg.adapt.tx_model_lr,
                            eta_y=eta_y, eta_z=cfg.eval.eta_z, seed=seed,
                        )
                        sampler = CsiSampler(ch, torch.Generator().manual_seed(seed + 1))
                        res = tx_model_adapt(codec, x, sampler, acfg)
                        write_adapt_log(
                            log_dir / _log_name("tx_model", lambda_, ch.snr_db, scope),
                            res.trajectory,
                        )
                        rng = torch.Generator().manual_seed(seed + 2)
                        records["tx_model"].append(
                            evaluate_instance(
                                res.codec, x, ch, eta_y, rng, scope=scope,
                                lambda_=lambda_, **common,
                            )
                        )

                    guard("tx_model", {**coords, "scope": scope}, cell)

            if "tx_code" in cfg.eval.schemes:
                for i, x in enumerate(eval_images):
                    scope = f"img{i:03d}"

                    def cell(x=x, scope=scope):
                        seed = derive_seed(cfg.seed, "tx_code", lambda_, ch.snr_db, scope)
                        acfg = AdaptConfig(
                            mode="tx_code", lambda_=lambda_,
                            y_steps=cfg.adapt.tx_code_y_steps,
                            s_steps=cfg.adapt.tx_code_s_steps,
                            lr=cfg.adapt.tx_code_lr,
                            eta_y=eta_y, eta_z=cfg.eval.eta_z, seed=seed,
                        )
                        sampler = CsiSampler(ch, torch.Generator().manual_seed(seed + 1))
                        res = tx_code_adapt(codec, x, sampler, acfg)
                        write_adapt_log(
                            log_dir / _log_name("tx_code", lambda_, ch.snr_db, scope),
                            res.trajectory,
                        )
                        rng = torch.Generator().manual_seed(seed + 2)
                        records["tx_code"].append(
                            evaluate_code_instance(
                                codec, x, res, ch, eta_y, rng, scope=scope,
                                lambda_=lambda_, **common,
                            )
                        )

                    guard("tx_code", {**coords, "scope": scope}, cell)

            if "txrx_full" in cfg.eval.schemes:
                for name, imgs in domains:
                    def cell(name=name, imgs=imgs):
                        lam_adapt, beta = cfg.adapt.txrx_pair(lambda_, cfg.train.lambdas)
                        seed = derive_seed(cfg.seed, "txrx_full", lambda_, ch.snr_db, name)
                        acfg = AdaptConfig(
                            mode="txrx_full", lambda_=lam_adapt, beta=beta,
                            steps=cfg.adapt.txrx_steps,
                            lr_enc=cfg.adapt.txrx_lr_enc,
                            lr_dec=cfg.adapt.txrx_lr_dec,
                            eval_every=cfg.adapt.txrx_eval_every,
                            eta_y=eta_y, eta_z=cfg.eval.eta_z,
                            domain_scope="domain", seed=seed,
                        )
                        sampler = CsiSampler(ch, torch.Generator().manual_seed(seed + 1))
                        res = txrx_model_adapt(codec, imgs, sampler, acfg, cfg.adapt.delta)
                        write_adapt_log(
                            log_dir / _log_name("txrx_full", lambda_, ch.snr_db, name),
                            res.trajectory,
                        )
                        for i, x in enumerate(imgs):
                            scope = f"{name}/img{i:03d}"
                            rng = torch.Generator().manual_seed(
                                derive_seed(cfg.seed, "txrx_eval", lambda_, ch.snr_db, scope)
                            )
                            records["txrx_full"].append(
                                evaluate_instance(
                                    res.codec, x, ch, eta_y, rng, scope=scope,
                                    lambda_=lam_adapt, beta=beta,
                                    model_bits=res.model_bits,
                                    amortize_over=len(imgs),
                                    **common,
                                )
                            )

                    guard("txrx_full", {**coords, "scope": name}, cell)

    reports = {}
    for scheme in cfg.eval.schemes:
        reports[scheme] = metrics.write_report(report_dir / f"{scheme}.csv", records[scheme])
    errors_path = None
    if errors:
        errors_path = report_dir / "errors.csv"
        with open(errors_path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["scheme", "lambda", "snr_db", "scope", "error"])
            w.writeheader()
            for row in errors:
                w.writerow(row)
    return CampaignOutputs(reports=reports, errors=errors_path, log_dir=log_dir)


def _log_name(scheme: str, lambda_: float, snr_db: float, scope: str) -> str:
    safe_scope = scope.replace("/", "_")
    return f"{scheme}_lam{lambda_:g}_snr{snr_db:g}_{safe_scope}.csv"


# -- external curves ---------------------------------------------------------


def ingest_external_curve(csv_path: str | Path) -> np.ndarray:
    """Load an external (R, psnr) curve; rates must increase monotonically."""
    csv_path = Path(csv_path)
    if not csv_path.is_file():
        raise DataError(f"curve file {csv_path} does not exist")
    rows = []
    with open(csv_path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"R", "psnr"} <= set(reader.fieldnames):
            raise DataError(f"{csv_path} must have columns R, psnr")
        for line in reader:
            try:
                rows.append((float(line["R"]), float(line["psnr"])))
            except (TypeError, ValueError) as exc:
                raise DataError(f"{csv_path}: bad row {line}") from exc
    if len(rows) < 2:
        raise DataError(f"{csv_path} holds fewer than 2 points")
    arr = np.asarray(rows, dtype=np.float64)
    if np.any(np.diff(arr[:, 0]) <= 0):
        raise DataError(f"{csv_path}: R column must be strictly increasing")
    return arr


def scheme_curve(records: Sequence[RDMRecord], total_rate: bool = True) -> np.ndarray:
    """Aggregate per-instance records into one (rate, psnr) point per lambda."""
    by_lambda: dict[float, list[RDMRecord]] = {}
    for r in records:
        by_lambda.setdefault(r.lambda_, []).append(r)
    pts = []
    for lam in sorted(by_lambda):
        rs = by_lambda[lam]
        rate = float(np.mean([r.cbr_total if total_rate else r.cbr_content for r in rs]))
        quality = float(np.mean([r.psnr_db for r in rs]))
        pts.append((rate, quality))
    return np.asarray(pts, dtype=np.float64)
