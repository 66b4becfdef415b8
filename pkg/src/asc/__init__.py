"""Desk-scale adaptive joint source-channel coding laboratory.

A neural transmission pipeline (nonlinear transforms, entropy-guided
variable-rate JSCC, simulated fading channels) with three online
overfitting procedures, a quantizer/prior/entropy-coder for shipping
receiver-model updates, SNR-conditioned modulation, and a harness that
measures rate-distortion(-model) tradeoffs.
"""

__version__ = "0.1.0"

from .adaptation import (
    AdaptConfig,
    AdaptResult,
    RdObjective,
    rd_loss,
    rdm_loss,
    tx_code_adapt,
    tx_model_adapt,
    txrx_model_adapt,
)
from .channel import ChannelConfig, CsiSampler, CsiTrace, average_snr, per_token_snr, sample_csi, transmit
from .checkpoint import load_checkpoint, save_checkpoint
from .delta_codec import (
    DeltaQuantConfig,
    QuantizedDelta,
    decode_stream,
    encode_stream,
    prior_mass,
    quantize,
    rate_proxy,
)
from .entropy_model import (
    FactorizedDensity,
    LatentPriorParams,
    RateAllocation,
    add_uniform_noise,
    allocate_bandwidth,
    hyper_rate,
    latent_rate,
)
from .harness import (
    ExperimentConfig,
    ingest_external_curve,
    load_config,
    run_adaptation_campaign,
    train_baseline,
)
from .jscc import ChannelSymbols, power_normalize
from .metrics import RDMRecord, bd_psnr, bd_rate, content_cbr, model_cbr, psnr
from .model import Codec, CodecConfig, build_codec
from .plotting import plot_reports
