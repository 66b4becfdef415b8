"""Online overfitting of the transmission model, codes, or full transceiver.

Three procedures share one gradient engine:

* transmitter model adaptation: update the analysis transform and JSCC
  encoder for one instance (or a domain), everything else frozen;
* transmitter code adaptation: update the latent tokens, then the
  channel codeword directly, model parameters untouched;
* transceiver full-model adaptation: update both sides, where the
  receiver-side update is quantized, priced under the model-delta prior
  (so the objective trades content rate, distortion, and model rate),
  and shipped as an entropy-coded stream.

Each step samples a fresh CSI realization from the domain sampler, so
averaging over steps is a single-sample Monte-Carlo estimate of the
expectation over the channel domain.
"""

from __future__ import annotations

import copy
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import torch
from torch.func import functional_call

from . import delta_codec
from .channel import transmit
from .delta_codec import DeltaQuantConfig, QuantizedDelta
from .entropy_model import RateAllocation
from .errors import ConfigError, InternalConsistencyError
from .jscc import ChannelSymbols, power_normalize
from .metrics import psnr as psnr_metric
from .model import (
    ENCODER_GROUPS,
    RECEIVER_GROUPS,
    Codec,
    TransmissionOutputs,
    snr_inputs,
)
from .transforms import LatentTokens

#: Distortion is measured in 8-bit pixel units (MSE * 255^2) so the
#: customary lambda magnitudes trade sensibly against per-dimension rates.
DISTORTION_SCALE = 255.0**2

ADAPT_MODES = ("tx_model", "tx_code", "txrx_full")

ADAPT_LOG_HEADER = ["step", "R", "M", "D", "loss", "psnr"]


@dataclass(frozen=True)
class RdObjective:
    """Weights of the instance rate-distortion objective.

    The rate term is (eta_y * R_y + eta_z * R_z) / m in channel uses per
    source dimension; the hyper rate is included even though the side
    information is never transmitted, which stabilizes the optimization.
    """

    lambda_: float
    eta_y: float = 0.2
    eta_z: float = 0.5

    def __post_init__(self) -> None:
        if self.lambda_ <= 0:
            raise ConfigError("lambda must be > 0")
        if self.eta_y <= 0 or self.eta_z < 0:
            raise ConfigError("rate scalings must be positive")


@dataclass(frozen=True)
class LossParts:
    """Float64 accounting of one objective evaluation.

    ``loss`` recomposes exactly from the parts, so logged trajectories can
    be audited: loss = lambda * rate + distortion + beta * model.
    """

    rate: float
    distortion: float
    model: float
    lambda_: float
    beta: float
    rate_y_bits: float
    rate_z_bits: float
    mse: float
    psnr: float

    @property
    def loss(self) -> float:
        return self.lambda_ * self.rate + self.distortion + self.beta * self.model


@dataclass(frozen=True)
class StepRecord:
    step: int
    rate: float
    model: float
    distortion: float
    loss: float
    psnr: float

    @classmethod
    def from_parts(cls, step: int, parts: LossParts) -> "StepRecord":
        return cls(
            step=step,
            rate=parts.rate,
            model=parts.model,
            distortion=parts.distortion,
            loss=parts.loss,
            psnr=parts.psnr,
        )


def _f(t: torch.Tensor) -> float:
    return float(t.detach())


def _finish_parts(
    x: torch.Tensor,
    out: TransmissionOutputs,
    obj: RdObjective,
    beta: float,
    model_bits: Optional[torch.Tensor],
) -> tuple[torch.Tensor, LossParts]:
    m = x.numel()
    rate_t = (obj.eta_y * out.rate_y_bits + obj.eta_z * out.hyper_bits) / m
    err = ((x - out.x_hat) ** 2).mean()
    dist_t = err * DISTORTION_SCALE
    loss = obj.lambda_ * rate_t + dist_t
    model_t = None
    if model_bits is not None:
        model_t = model_bits / m
        loss = loss + beta * model_t
    with torch.no_grad():
        quality = psnr_metric(x, out.x_hat.clamp(0.0, 1.0))
    parts = LossParts(
        rate=_f(rate_t),
        distortion=_f(dist_t),
        model=0.0 if model_t is None else _f(model_t),
        lambda_=obj.lambda_,
        beta=0.0 if model_t is None else beta,
        rate_y_bits=_f(out.rate_y_bits),
        rate_z_bits=_f(out.hyper_bits),
        mse=_f(err),
        psnr=quality,
    )
    return loss, parts


def rd_loss(
    codec: Codec,
    x: torch.Tensor,
    csi,
    noise_power: float,
    obj: RdObjective,
    *,
    rng: Optional[torch.Generator] = None,
    train_mode: bool = True,
    proxy_noise: Optional[bool] = None,
    param_override: Optional[dict[str, torch.Tensor]] = None,
    latents: Optional[LatentTokens] = None,
    alloc: Optional[RateAllocation] = None,
    channel_noise: Optional[torch.Tensor] = None,
    z_noise: Optional[torch.Tensor] = None,
    decoder_snr: str = "csi",
) -> tuple[torch.Tensor, LossParts, TransmissionOutputs]:
    """Instance RD objective: lambda * rate + distortion.

    Returns the differentiable scalar, its float accounting, and the full
    forward outputs.  ``param_override`` evaluates the model functionally
    at substitute parameter values without touching the module.
    """
    kwargs = dict(
        rng=rng,
        train_mode=train_mode,
        proxy_noise=proxy_noise,
        alloc=alloc,
        channel_noise=channel_noise,
        z_noise=z_noise,
        decoder_snr=decoder_snr,
        latents=latents,
    )
    if param_override:
        out = functional_call(
            codec, param_override, (x, csi, noise_power, obj.eta_y), kwargs
        )
    else:
        out = codec(x, csi, noise_power, obj.eta_y, **kwargs)
    loss, parts = _finish_parts(x, out, obj, beta=0.0, model_bits=None)
    return loss, parts, out


def rdm_loss(
    codec: Codec,
    x: torch.Tensor,
    csi,
    noise_power: float,
    obj: RdObjective,
    beta: float,
    dcfg: DeltaQuantConfig,
    *,
    delta: torch.Tensor,
    receiver_base: dict[str, torch.Tensor],
    encoder_override: Optional[dict[str, torch.Tensor]] = None,
    rng: Optional[torch.Generator] = None,
    delta_noise: Optional[torch.Tensor] = None,
    proxy_noise: Optional[bool] = None,
    train_mode: bool = True,
    decoder_snr: str = "csi",
) -> tuple[torch.Tensor, LossParts, TransmissionOutputs]:
    """Rate-distortion-model objective for transceiver adaptation.

    The receiver runs at base + quantize(delta) (straight-through
    gradients), while the model-rate term prices the uniformly-noised
    proxy under the relaxed prior, so both paths reach the update vector.
    """
    if beta < 0:
        raise ConfigError("beta must be >= 0")
    dbar = delta_codec.quantize(delta, dcfg)
    override = dict(encoder_override or {})
    pos = 0
    for name, base in receiver_base.items():
        n = base.numel()
        override[name] = base + dbar[pos : pos + n].view(base.shape)
        pos += n
    if pos != delta.numel():
        raise ConfigError("delta length does not match the receiver layout")
    use_noise = train_mode if proxy_noise is None else proxy_noise
    if delta_noise is not None:
        noisy = delta + delta_noise
    elif use_noise:
        noisy = delta_codec.add_delta_noise(delta, dcfg, rng)
    else:
        noisy = delta
    model_bits = dcfg.eta_delta * delta_codec.rate_proxy(noisy, dcfg)
    out = functional_call(
        codec,
        override,
        (x, csi, noise_power, obj.eta_y),
        dict(rng=rng, train_mode=train_mode, proxy_noise=proxy_noise,
             decoder_snr=decoder_snr),
    )
    loss, parts = _finish_parts(x, out, obj, beta=beta, model_bits=model_bits)
    return loss, parts, out


@dataclass(frozen=True)
class AdaptConfig:
    """Hyperparameters of one online adaptation run."""

    mode: str
    lambda_: float
    steps: int = 100
    y_steps: int = 50
    s_steps: int = 50
    lr: float = 1e-4
    lr_enc: float = 1e-5
    lr_dec: float = 1e-4
    beta: float = 1.0
    eta_y: float = 0.2
    eta_z: float = 0.5
    optimizer: str = "adam"
    domain_scope: str = "instance"
    seed: int = 0
    eval_every: int = 100
    use_noise_proxy: bool = True

    def __post_init__(self) -> None:
        if self.mode not in ADAPT_MODES:
            raise ConfigError(f"unknown adaptation mode {self.mode!r}")
        if min(self.steps, self.y_steps, self.s_steps) < 0:
            raise ConfigError("step counts must be >= 0")
        if min(self.lr, self.lr_enc, self.lr_dec) < 0:
            raise ConfigError("learning rates must be >= 0")
        if self.lambda_ <= 0:
            raise ConfigError("lambda must be > 0")
        if self.beta < 0:
            raise ConfigError("beta must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.domain_scope not in ("instance", "domain"):
            raise ConfigError(f"unknown domain scope {self.domain_scope!r}")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")

    @property
    def objective(self) -> RdObjective:
        return RdObjective(lambda_=self.lambda_, eta_y=self.eta_y, eta_z=self.eta_z)


@dataclass
class AdaptResult:
    """Outputs of one adaptation run."""

    mode: str
    codec: Codec
    trajectory: list[StepRecord]
    steps_executed: int
    wall_seconds: float
    y_star: Optional[torch.Tensor] = None
    s_star: Optional[ChannelSymbols] = None
    alloc_star: Optional[RateAllocation] = None
    delta: Optional[QuantizedDelta] = None
    stream: Optional[bytes] = None
    model_bits: int = 0
    best_step: Optional[int] = None

    @property
    def initial_loss(self) -> float:
        return self.trajectory[0].loss

    @property
    def final_loss(self) -> float:
        return self.trajectory[-1].loss


def make_optimizer(groups: Sequence[dict], kind: str) -> torch.optim.Optimizer:
    """Adaptive-moment by default; plain gradient descent on request."""
    if kind == "adam":
        return torch.optim.Adam(groups)
    if kind == "sgd":
        return torch.optim.SGD(groups)
    raise ConfigError(f"unknown optimizer {kind!r}")


def run_gradient_loop(
    loss_fn: Callable[[int], tuple[torch.Tensor, LossParts]],
    optimizer: torch.optim.Optimizer,
    steps: int,
    start_step: int = 0,
    on_step_end: Optional[Callable[[int], None]] = None,
) -> list[StepRecord]:
    """Shared descent engine: evaluate, record, backpropagate, update.

    Returns one record per executed step, each taken before that step's
    update (the caller appends the final-state record).
    """
    records = []
    for t in range(steps):
        optimizer.zero_grad(set_to_none=True)
        loss, parts = loss_fn(start_step + t)
        records.append(StepRecord.from_parts(start_step + t, parts))
        loss.backward()
        optimizer.step()
        if on_step_end is not None:
            on_step_end(start_step + t)
    return records


def _clone_group(codec: Codec, groups) -> dict[str, torch.Tensor]:
    return {
        name: p.detach().clone()
        for name, p in codec.group_parameters(*groups).items()
    }


def _load_values(codec: Codec, values: dict[str, torch.Tensor]) -> None:
    params = dict(codec.named_parameters())
    with torch.no_grad():
        for name, value in values.items():
            params[name].copy_(value)


def tx_model_adapt(codec: Codec, x: torch.Tensor, csi_sampler, cfg: AdaptConfig) -> AdaptResult:
    """Overfit the analysis transform and JSCC encoder to one instance.

    The entropy model, synthesis transform, and JSCC decoder stay
    bit-identical to the baseline, so nothing is shipped to the receiver.
    """
    if cfg.mode != "tx_model":
        raise ConfigError("cfg.mode must be tx_model")
    start = time.perf_counter()
    rng = torch.Generator().manual_seed(cfg.seed)
    noise_power = csi_sampler.noise_variance
    obj = cfg.objective
    work = {
        name: p.detach().clone().requires_grad_(True)
        for name, p in codec.group_parameters(*ENCODER_GROUPS).items()
    }
    opt = make_optimizer([{"params": list(work.values()), "lr": cfg.lr}], cfg.optimizer)

    def loss_fn(_t: int):
        loss, parts, _ = rd_loss(
            codec, x, csi_sampler, noise_power, obj,
            rng=rng, proxy_noise=cfg.use_noise_proxy, param_override=work,
        )
        return loss, parts

    records = run_gradient_loop(loss_fn, opt, cfg.steps)
    with torch.no_grad():
        _, parts, _ = rd_loss(
            codec, x, csi_sampler, noise_power, obj,
            rng=rng, proxy_noise=cfg.use_noise_proxy, param_override=work,
        )
    records.append(StepRecord.from_parts(cfg.steps, parts))
    adapted = copy.deepcopy(codec)
    _load_values(adapted, work)
    return AdaptResult(
        mode=cfg.mode,
        codec=adapted,
        trajectory=records,
        steps_executed=cfg.steps,
        wall_seconds=time.perf_counter() - start,
    )


def tx_code_adapt(codec: Codec, x: torch.Tensor, csi_sampler, cfg: AdaptConfig) -> AdaptResult:
    """Overfit the latent tokens, then the channel codeword, sequentially.

    Phase one re-derives the prior, allocation, and codeword from the
    evolving tokens every step; phase two freezes the tokens, re-encodes,
    and perturbs the codeword directly on the unit-power sphere (the rate
    terms are constants there).  Model parameters are untouched.
    """
    if cfg.mode != "tx_code":
        raise ConfigError("cfg.mode must be tx_code")
    start = time.perf_counter()
    rng = torch.Generator().manual_seed(cfg.seed)
    noise_power = csi_sampler.noise_variance
    obj = cfg.objective
    with torch.no_grad():
        latents0 = codec.analysis(x)
    grid = latents0.grid
    y = latents0.tokens.detach().clone().requires_grad_(True)
    opt_y = make_optimizer([{"params": [y], "lr": cfg.lr}], cfg.optimizer)

    def y_loss(_t: int):
        loss, parts, _ = rd_loss(
            codec, x, csi_sampler, noise_power, obj,
            rng=rng, proxy_noise=cfg.use_noise_proxy,
            latents=LatentTokens(y, grid),
        )
        return loss, parts

    records = run_gradient_loop(y_loss, opt_y, cfg.y_steps)

    # Phase two: freeze y*, re-encode, then optimize the codeword itself.
    y_star = y.detach().clone()
    with torch.no_grad():
        _, _, out = rd_loss(
            codec, x, csi_sampler, noise_power, obj,
            rng=rng, proxy_noise=cfg.use_noise_proxy,
            latents=LatentTokens(y_star, grid),
        )
    alloc_star = out.alloc
    rate_const = float(
        (obj.eta_y * out.rate_y_bits + obj.eta_z * out.hyper_bits) / x.numel()
    )
    s = out.s.symbols.detach().clone().requires_grad_(True)
    spans = out.s.spans
    opt_s = make_optimizer([{"params": [s], "lr": cfg.lr}], cfg.optimizer)

    def s_loss(_t: int):
        s_norm = power_normalize(s)
        k = s_norm.numel()
        h = csi_sampler.sample(k)
        snr_tok, _ = snr_inputs(h, noise_power, spans)
        s_hat = transmit(s_norm, h, noise_power, rng)
        y_hat = codec.dec(
            ChannelSymbols(symbols=s_hat, spans=spans),
            alloc_star,
            snr_tok if codec.config.modnet else None,
        )
        x_hat = codec.synthesis(LatentTokens(y_hat, grid))
        err = ((x - x_hat) ** 2).mean()
        dist = err * DISTORTION_SCALE
        loss = dist + obj.lambda_ * rate_const
        with torch.no_grad():
            quality = psnr_metric(x, x_hat.clamp(0.0, 1.0))
        parts = LossParts(
            rate=rate_const, distortion=_f(dist), model=0.0,
            lambda_=obj.lambda_, beta=0.0,
            rate_y_bits=_f(out.rate_y_bits), rate_z_bits=_f(out.hyper_bits),
            mse=_f(err), psnr=quality,
        )
        return loss, parts

    records += run_gradient_loop(s_loss, opt_s, cfg.s_steps, start_step=cfg.y_steps)
    with torch.no_grad():
        _, parts = s_loss(cfg.y_steps + cfg.s_steps)
    records.append(StepRecord.from_parts(cfg.y_steps + cfg.s_steps, parts))
    s_star = power_normalize(s.detach())
    return AdaptResult(
        mode=cfg.mode,
        codec=codec,
        trajectory=records,
        steps_executed=cfg.y_steps + cfg.s_steps,
        wall_seconds=time.perf_counter() - start,
        y_star=y_star,
        s_star=ChannelSymbols(symbols=s_star, spans=spans),
        alloc_star=alloc_star,
    )


def txrx_model_adapt(
    codec: Codec,
    instances: torch.Tensor | Sequence[torch.Tensor],
    csi_sampler,
    cfg: AdaptConfig,
    dcfg: DeltaQuantConfig,
) -> AdaptResult:
    """Full-model adaptation with a costed, entropy-coded model stream.

    Every step quantizes the running receiver update, runs the forward at
    the quantized receiver parameters, and backpropagates through the
    straight-through quantizer; the RDM loss prices the noised update
    under the delta prior.  The step with the best held-out RDM loss wins;
    its quantized update is entropy-coded, decoded back, and the returned
    receiver model is rebuilt from the decoded stream (never from the raw
    updated parameters).
    """
    if cfg.mode != "txrx_full":
        raise ConfigError("cfg.mode must be txrx_full")
    start = time.perf_counter()
    if isinstance(instances, torch.Tensor):
        scope = [instances]
    else:
        scope = list(instances)
    if not scope:
        raise ConfigError("empty adaptation scope")
    if cfg.domain_scope == "instance" and len(scope) != 1:
        raise ConfigError("instance scope expects exactly one image")
    rng = torch.Generator().manual_seed(cfg.seed)
    eval_seed = cfg.seed + 0x9E3779B1
    noise_power = csi_sampler.noise_variance
    obj = cfg.objective

    enc_base = _clone_group(codec, ENCODER_GROUPS)
    recv_base = _clone_group(codec, RECEIVER_GROUPS)
    work_enc = {n: t.clone().requires_grad_(True) for n, t in enc_base.items()}
    work_recv = {n: t.clone().requires_grad_(True) for n, t in recv_base.items()}
    flat_base = torch.cat([t.reshape(-1) for t in recv_base.values()])
    layout = tuple((n, tuple(t.shape)) for n, t in recv_base.items())
    opt = make_optimizer(
        [
            {"params": list(work_enc.values()), "lr": cfg.lr_enc},
            {"params": list(work_recv.values()), "lr": cfg.lr_dec},
        ],
        cfg.optimizer,
    )

    def current_delta() -> torch.Tensor:
        return torch.cat([work_recv[n].reshape(-1) for n in work_recv]) - flat_base

    def objective_at(x: torch.Tensor, gen: torch.Generator, proxy: bool):
        return rdm_loss(
            codec, x, csi_sampler, noise_power, obj, cfg.beta, dcfg,
            delta=current_delta(), receiver_base=recv_base,
            encoder_override=work_enc, rng=gen, proxy_noise=proxy,
        )

    eval_images = scope[: min(len(scope), 8)]

    def heldout_loss() -> float:
        gen = torch.Generator().manual_seed(eval_seed)
        with torch.no_grad():
            vals = [
                objective_at(img, gen, cfg.use_noise_proxy)[1].loss
                for img in eval_images
            ]
        return float(np.mean(vals))

    best = {"loss": heldout_loss(), "step": 0,
            "enc": {n: t.detach().clone() for n, t in work_enc.items()},
            "recv": {n: t.detach().clone() for n, t in work_recv.items()}}

    def consider(step: int) -> None:
        val = heldout_loss()
        if val < best["loss"]:
            best.update(
                loss=val, step=step,
                enc={n: t.detach().clone() for n, t in work_enc.items()},
                recv={n: t.detach().clone() for n, t in work_recv.items()},
            )

    def loss_fn(t: int):
        if cfg.domain_scope == "domain" and len(scope) > 1:
            pick = int(torch.randint(len(scope), (1,), generator=rng))
        else:
            pick = 0
        loss, parts, _ = objective_at(scope[pick], rng, cfg.use_noise_proxy)
        return loss, parts

    def on_step_end(t: int) -> None:
        if (t + 1) % cfg.eval_every == 0:
            consider(t + 1)

    records = run_gradient_loop(loss_fn, opt, cfg.steps, on_step_end=on_step_end)
    if cfg.steps % cfg.eval_every != 0:
        consider(cfg.steps)

    # Restore the selected step and emit its model stream.
    for n in work_enc:
        work_enc[n] = best["enc"][n]
    for n in work_recv:
        work_recv[n] = best["recv"][n]
    with torch.no_grad():
        final_delta = current_delta()
        dbar = delta_codec.quantize(final_delta, dcfg)
    qd = QuantizedDelta(values=dbar, layout=layout)
    stream = delta_codec.encode_stream(qd, dcfg)
    np_dtype = np.float64 if dbar.dtype == torch.float64 else np.float32
    decoded = torch.from_numpy(
        delta_codec.decode_stream(stream, dbar.numel(), dcfg, dtype=np_dtype)
    ).to(dbar.dtype)
    if not torch.equal(decoded, dbar):
        raise InternalConsistencyError("model stream round trip altered the update")

    adapted = copy.deepcopy(codec)
    _load_values(adapted, work_enc)
    recv_values = {}
    pos = 0
    for name, base in recv_base.items():
        n = base.numel()
        recv_values[name] = base + decoded[pos : pos + n].view(base.shape)
        pos += n
    _load_values(adapted, recv_values)

    with torch.no_grad():
        _, parts, _ = objective_at(scope[0], rng, cfg.use_noise_proxy)
    records.append(StepRecord.from_parts(cfg.steps, parts))
    return AdaptResult(
        mode=cfg.mode,
        codec=adapted,
        trajectory=records,
        steps_executed=cfg.steps,
        wall_seconds=time.perf_counter() - start,
        delta=qd,
        stream=stream,
        model_bits=len(stream) * 8,
        best_step=best["step"],
    )
