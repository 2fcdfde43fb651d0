"""Single checkpoint archive format shared by the denoiser pair and the
biomarker classifier.  One torch archive per checkpoint, carrying a format
version and a kind tag so mismatches fail loudly at load time."""

from dataclasses import asdict
from pathlib import Path

import torch

from . import schedules as sched
from .denoiser import CondUNet, DenoiserPair, TrainConfig
from .errors import CheckpointFormatError

FORMAT_VERSION = 1


def _load_archive(path, kind):
    path = Path(path)
    if not path.exists():
        raise CheckpointFormatError(f"checkpoint not found: {path}")
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(blob, dict) or "format_version" not in blob:
        raise CheckpointFormatError(f"{path} is not a stardiff checkpoint")
    if blob["format_version"] != FORMAT_VERSION:
        raise CheckpointFormatError(
            f"{path}: format version {blob['format_version']} unsupported "
            f"(expected {FORMAT_VERSION})")
    if blob.get("kind") != kind:
        raise CheckpointFormatError(
            f"{path}: checkpoint kind {blob.get('kind')!r}, expected {kind!r}")
    return blob


def save_denoiser(path, pair, schedule, cfg, orientation, base_channels=24):
    torch.save({
        "format_version": FORMAT_VERSION,
        "kind": "denoiser",
        "restorer_state": pair.restorer.state_dict(),
        "noiser_state": pair.noiser.state_dict(),
        "t_embedding_dim": pair.t_embedding_dim,
        "base_channels": base_channels,
        "schedule": schedule.to_dict(),
        "train_config": asdict(cfg),
        "orientation": orientation,
    }, path)


def load_denoiser(path):
    """Returns (DenoiserPair, SchedulePair, TrainConfig, orientation)."""
    blob = _load_archive(path, "denoiser")
    base = blob["base_channels"]
    t_dim = blob["t_embedding_dim"]
    pair = DenoiserPair(CondUNet(base, t_dim), CondUNet(base, t_dim), t_dim)
    pair.restorer.load_state_dict(blob["restorer_state"])
    pair.noiser.load_state_dict(blob["noiser_state"])
    pair.eval()
    schedule = sched.SchedulePair.from_dict(blob["schedule"])
    pair.max_t = schedule.T
    cfg = TrainConfig(**blob["train_config"])
    return pair, schedule, cfg, blob["orientation"]


def save_classifier(path, model, meta):
    torch.save({
        "format_version": FORMAT_VERSION,
        "kind": "classifier",
        "model_state": model.state_dict(),
        "meta": dict(meta),
    }, path)


def load_classifier(path, factory):
    """factory(meta) must build an uninitialized model of the right shape."""
    blob = _load_archive(path, "classifier")
    model = factory(blob["meta"])
    model.load_state_dict(blob["model_state"])
    model.eval()
    return model, blob["meta"]
