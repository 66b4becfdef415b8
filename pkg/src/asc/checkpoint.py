"""Checkpoint archive: parameter name -> float32 array, plus metadata.

A checkpoint is a single ``.npz`` archive holding one little-endian
float32 array per named parameter and a ``__meta__`` JSON record with
the model configuration and training provenance (patch size, channels,
value set, eta_y, lambda, training SNR, seed).  Round trips are
bit-exact for float32 models.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from .errors import DataError
from .model import Codec, CodecConfig

META_KEY = "__meta__"


def checkpoint_metadata(codec: Codec, **extra) -> dict:
    meta = {
        "config": asdict(codec.config),
        "patch_size": codec.config.patch_size,
        "side_info_bits": codec.config.side_info_bits,
    }
    meta.update(extra)
    return meta


def save_checkpoint(path: str | Path, codec: Codec, **extra) -> Path:
    """Write the codec's parameters and metadata to ``path``."""
    path = Path(path)
    if path.suffix != ".npz":
        path = path.with_suffix(path.suffix + ".npz")
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {
        name: tensor.detach().cpu().numpy().astype("<f4")
        for name, tensor in codec.state_dict().items()
    }
    meta = checkpoint_metadata(codec, **extra)
    blob = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    np.savez(path, **{META_KEY: blob}, **arrays)
    return path


def load_checkpoint(path: str | Path) -> tuple[Codec, dict]:
    """Rebuild a codec from a checkpoint archive."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint {path} does not exist")
    with np.load(path) as archive:
        if META_KEY not in archive:
            raise DataError(f"{path} is not a codec checkpoint (missing metadata)")
        meta = json.loads(bytes(archive[META_KEY].tobytes()).decode("utf-8"))
        arrays = {k: archive[k] for k in archive.files if k != META_KEY}
    cfg_dict = dict(meta["config"])
    cfg_dict["stage_strides"] = tuple(cfg_dict["stage_strides"])
    cfg_dict["value_set"] = tuple(cfg_dict["value_set"])
    codec = Codec(CodecConfig(**cfg_dict))
    state = {k: torch.from_numpy(v.copy()) for k, v in arrays.items()}
    missing = set(codec.state_dict()) - set(state)
    if missing:
        raise DataError(f"{path} misses parameters: {sorted(missing)[:3]}...")
    codec.load_state_dict(state)
    return codec, meta


def load_compatible_subset(codec: Codec, path: str | Path) -> list[str]:
    """Load every matching parameter from ``path`` into ``codec``.

    Used to warm-start a channel-adaptive model from a plain checkpoint:
    the ModNet parameters stay at their passthrough initialization.
    Returns the names that were loaded.
    """
    donor, _ = load_checkpoint(path)
    own = codec.state_dict()
    loaded = []
    for name, tensor in donor.state_dict().items():
        if name in own and own[name].shape == tensor.shape:
            own[name] = tensor
            loaded.append(name)
    codec.load_state_dict(own)
    return loaded
