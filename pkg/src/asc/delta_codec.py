"""Quantization, pricing, and entropy coding of receiver-model updates.

Parameter updates delta = theta* - theta are rounded onto N width-Delta
bins (straight-through gradients inside the clip range), priced under a
zero-centered Gaussian or spike-and-slab mixture prior, and range-coded
into a self-describing byte stream.  Tail mass beyond the outermost bins
is folded into the edge bins so the discrete pmf is a valid coding
distribution.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch
from scipy import special as sp_special

from . import rangecoder
from .errors import DecodeError, StreamConfigMismatch
from .errors import ConfigError

PRIOR_KINDS = ("gaussian", "spike_slab")

_HEADER = struct.Struct("<BBHfIee")  # magic, kind, N, Delta, count, alpha, sigma
_MAGIC = 0xA5
HEADER_BYTES = _HEADER.size  # 16

_LIKELIHOOD_BOUND = 1e-12


@dataclass(frozen=True)
class DeltaQuantConfig:
    """Quantizer and prior configuration for the model-update stream.

    ``eta_delta`` converts stream bits into channel symbols (1 / bits per
    symbol of the link assumed to carry the stream).
    """

    bin_width: float = 0.005
    num_bins: int = 41
    prior_kind: str = "spike_slab"
    slab_sigma: float = 0.05
    spike_weight: float = 1000.0
    eta_delta: float = 0.5

    def __post_init__(self) -> None:
        if self.bin_width <= 0:
            raise ConfigError("bin_width must be > 0")
        if self.num_bins < 3 or self.num_bins % 2 == 0:
            raise ConfigError("num_bins must be an odd integer >= 3")
        if self.prior_kind not in PRIOR_KINDS:
            raise ConfigError(f"unknown prior kind {self.prior_kind!r}")
        if self.slab_sigma <= 0:
            raise ConfigError("slab_sigma must be > 0")
        if self.spike_weight < 0:
            raise ConfigError("spike_weight must be >= 0")
        if self.eta_delta <= 0:
            raise ConfigError("eta_delta must be > 0")

    @property
    def spike_sigma(self) -> float:
        """Spike std is pinned to bin_width / 6 (3-sigma inside the zero bin)."""
        return self.bin_width / 6.0

    @property
    def half_levels(self) -> int:
        return (self.num_bins - 1) // 2

    @property
    def clip_limit(self) -> float:
        return self.half_levels * self.bin_width

    def bin_centers(self) -> np.ndarray:
        idx = np.arange(self.num_bins) - self.half_levels
        return idx * self.bin_width


def _mixture_cdf_np(x: np.ndarray, cfg: DeltaQuantConfig) -> np.ndarray:
    slab = sp_special.ndtr(x / cfg.slab_sigma)
    if cfg.prior_kind == "gaussian":
        return slab
    spike = sp_special.ndtr(x / cfg.spike_sigma)
    return (slab + cfg.spike_weight * spike) / (1.0 + cfg.spike_weight)


def _mixture_cdf_torch(x: torch.Tensor, cfg: DeltaQuantConfig) -> torch.Tensor:
    slab = torch.special.ndtr(x / cfg.slab_sigma)
    if cfg.prior_kind == "gaussian":
        return slab
    spike = torch.special.ndtr(x / cfg.spike_sigma)
    return (slab + cfg.spike_weight * spike) / (1.0 + cfg.spike_weight)


class _QuantizeSTE(torch.autograd.Function):
    """Round-to-bin with clipping; saturating straight-through backward."""

    @staticmethod
    def forward(ctx, delta, bin_width, half_levels):
        idx = torch.round(delta / bin_width)
        ctx.save_for_backward((idx.abs() <= half_levels).to(delta.dtype))
        return torch.clamp(idx, -half_levels, half_levels) * bin_width

    @staticmethod
    def backward(ctx, grad_output):
        (mask,) = ctx.saved_tensors
        return grad_output * mask, None, None


def quantize(delta: torch.Tensor, cfg: DeltaQuantConfig) -> torch.Tensor:
    """Nearest-bin quantization clipped to +-(N-1)*Delta/2.

    The backward pass is exactly the identity where clipping did not
    engage and zero elsewhere.
    """
    return _QuantizeSTE.apply(delta, cfg.bin_width, float(cfg.half_levels))


def bin_pmf(cfg: DeltaQuantConfig) -> np.ndarray:
    """Discrete pmf over the N bins with tail mass folded into the edges.

    Sums to 1 (up to float rounding); this is the coding distribution.
    """
    centers = cfg.bin_centers()
    upper = _mixture_cdf_np(centers + cfg.bin_width / 2, cfg)
    lower = _mixture_cdf_np(centers - cfg.bin_width / 2, cfg)
    pmf = upper - lower
    pmf[0] = upper[0]
    pmf[-1] = 1.0 - lower[-1]
    return pmf


def prior_mass(value, cfg: DeltaQuantConfig):
    """Probability of the width-Delta bin centered at ``value``.

    For the outermost bin centers the clipped tail mass is folded in, so
    the masses over all N centers sum to one.
    """
    v = np.asarray(value, dtype=np.float64)
    upper = _mixture_cdf_np(v + cfg.bin_width / 2, cfg)
    lower = _mixture_cdf_np(v - cfg.bin_width / 2, cfg)
    mass = upper - lower
    lim = cfg.clip_limit
    tol = cfg.bin_width * 1e-9
    mass = np.where(v <= -lim + tol, upper, mass)
    mass = np.where(v >= lim - tol, 1.0 - lower, mass)
    if np.ndim(value) == 0:
        return float(mass)
    return mass


def rate_proxy(delta_noisy: torch.Tensor, cfg: DeltaQuantConfig) -> torch.Tensor:
    """Model-stream rate in bits of the uniformly-noised proxy.

    Uses the continuous relaxed prior (density convolved over the bin
    width, no edge folding); differentiable in the input.
    """
    x = -delta_noisy.abs()  # symmetric prior; keep both CDFs in the low tail
    upper = _mixture_cdf_torch(x + cfg.bin_width / 2, cfg)
    lower = _mixture_cdf_torch(x - cfg.bin_width / 2, cfg)
    mass = torch.clamp(upper - lower, min=_LIKELIHOOD_BOUND)
    return -torch.log2(mass).sum()


def add_delta_noise(
    delta: torch.Tensor, cfg: DeltaQuantConfig, rng: Optional[torch.Generator] = None
) -> torch.Tensor:
    """The uniformly-noised proxy delta + U(-Delta/2, Delta/2)."""
    o = (torch.rand(delta.shape, generator=rng, dtype=delta.dtype) - 0.5) * cfg.bin_width
    return delta + o


@dataclass
class QuantizedDelta:
    """A flat vector of quantized updates plus the parameter layout it maps to."""

    values: torch.Tensor
    layout: tuple[tuple[str, tuple[int, ...]], ...]

    def __post_init__(self) -> None:
        n = sum(int(np.prod(shape)) for _, shape in self.layout)
        if n != self.values.numel():
            raise ConfigError(
                f"layout covers {n} elements, values hold {self.values.numel()}"
            )

    def unflatten(self) -> dict[str, torch.Tensor]:
        out = {}
        pos = 0
        for name, shape in self.layout:
            n = int(np.prod(shape))
            out[name] = self.values[pos : pos + n].reshape(shape)
            pos += n
        return out


def flatten_named(params: dict[str, torch.Tensor]) -> tuple[torch.Tensor, tuple]:
    """Concatenate named tensors into one flat vector plus its layout."""
    layout = tuple((name, tuple(t.shape)) for name, t in params.items())
    flat = torch.cat([t.reshape(-1) for t in params.values()]) if params else torch.zeros(0)
    return flat, layout


def encode_stream(qd, cfg: DeltaQuantConfig) -> bytes:
    """Entropy-code quantized updates into a self-describing byte stream.

    Accepts a QuantizedDelta, tensor, or array of bin-center values.
    Layout: 16-byte header (magic, prior kind, N, Delta, element count,
    alpha and sigma at half precision) followed by the range-coded
    payload, byte aligned.
    """
    values = qd.values if isinstance(qd, QuantizedDelta) else qd
    if isinstance(values, torch.Tensor):
        values = values.detach().cpu().numpy()
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    idx = np.round(values / cfg.bin_width).astype(np.int64)
    if np.any(np.abs(idx) > cfg.half_levels):
        raise ConfigError("values outside the quantizer range; quantize first")
    header = _HEADER.pack(
        _MAGIC,
        PRIOR_KINDS.index(cfg.prior_kind),
        cfg.num_bins,
        np.float32(cfg.bin_width),
        len(values),
        np.float16(cfg.spike_weight),
        np.float16(cfg.slab_sigma),
    )
    freq = rangecoder.quantize_pmf(bin_pmf(cfg))
    payload = rangecoder.encode_symbols(idx + cfg.half_levels, freq)
    return header + payload


def decode_stream(
    data: bytes, count: int, cfg: DeltaQuantConfig, dtype=np.float32
) -> np.ndarray:
    """Decode ``count`` quantized values; the header must match ``cfg``.

    Values are reconstructed as index * Delta in ``dtype``; using the
    dtype the quantizer ran in reproduces its output bit-exactly.
    """
    if len(data) < HEADER_BYTES:
        raise DecodeError("stream shorter than its header")
    magic, kind, nbins, binw, n, alpha, sigma = _HEADER.unpack(data[:HEADER_BYTES])
    if magic != _MAGIC:
        raise DecodeError(f"bad stream magic 0x{magic:02X}")
    same = (
        kind == PRIOR_KINDS.index(cfg.prior_kind)
        and nbins == cfg.num_bins
        and binw == np.float32(cfg.bin_width)
        and alpha == float(np.float16(cfg.spike_weight))
        and sigma == float(np.float16(cfg.slab_sigma))
    )
    if not same:
        raise StreamConfigMismatch("stream header disagrees with decoder config")
    if n != count:
        raise DecodeError(f"stream holds {n} elements, caller expected {count}")
    freq = rangecoder.quantize_pmf(bin_pmf(cfg))
    symbols = rangecoder.decode_symbols(data[HEADER_BYTES:], count, freq)
    dtype = np.dtype(dtype).type
    return (symbols - cfg.half_levels).astype(dtype) * dtype(cfg.bin_width)
