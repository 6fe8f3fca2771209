"""Checkpoint container.

A checkpoint is a ``torch.save`` dict::

    {"format": "hvtrack-checkpoint", "version": 1,
     "config": {...ModelConfig fields...},
     "state_dict": {name: tensor}, "meta": {...}}
"""

from __future__ import annotations

from pathlib import Path

import torch

from .config import ConfigError, ModelConfig, architecture
from .network import HVTrack

FORMAT = "hvtrack-checkpoint"
VERSION = 1


def save_checkpoint(path, model: HVTrack, meta: dict | None = None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "format": FORMAT,
            "version": VERSION,
            "config": model.cfg.to_dict(),
            "state_dict": {k: v.detach().clone() for k, v in model.state_dict().items()},
            "meta": meta or {},
        },
        path,
    )


def load_checkpoint(path, expected: ModelConfig | None = None, **overrides) -> tuple[HVTrack, dict]:
    """Rebuild the model stored at ``path``.

    ``overrides`` may change runtime-only fields such as ``k_test``. With
    ``expected`` given, any architecture difference raises ConfigError.
    """
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(blob, dict) or blob.get("format") != FORMAT:
        raise ConfigError(f"{path} is not an hvtrack checkpoint")
    if blob.get("version") != VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version {blob.get('version')}")
    cfg_dict = dict(blob["config"])
    cfg_dict.update(overrides)
    cfg = ModelConfig.from_dict(cfg_dict)
    if architecture(cfg) != architecture(ModelConfig.from_dict(blob["config"])):
        raise ConfigError("overrides may only change runtime fields")
    if expected is not None and architecture(expected) != architecture(cfg):
        diff = {k: (v, architecture(cfg)[k]) for k, v in architecture(expected).items() if architecture(cfg)[k] != v}
        raise ConfigError(f"checkpoint config does not match the expected config: {diff}")
    model = HVTrack(cfg)
    sd = blob["state_dict"]
    dtype = next(iter(sd.values())).dtype
    model.to(dtype)
    model.load_state_dict(sd)
    model.eval()
    return model, blob.get("meta", {})
