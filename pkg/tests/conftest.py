"""Shared desk-scale fixtures.

The toy training run and classifier are expensive (minutes), so they are
session-scoped and shared between the module tests and the acceptance suite.
All fixture seeds are frozen; every number asserted downstream was produced
by these exact configurations.
"""

import time

import numpy as np
import pytest
import torch

from stardiff import dataio, denoiser, diffusion, schedules as sched, sfs as sfs_mod

torch.set_num_threads(4)

SIZE = 32
TOY_T = 20


@pytest.fixture(scope="session")
def synth_patches():
    return dataio.synth_dataset(160, size=SIZE, seed=7)


@pytest.fixture(scope="session")
def toy_schedule():
    return sched.make_schedule(TOY_T)


@pytest.fixture(scope="session")
def toy_model(synth_patches, toy_schedule):
    """The standard desk-scale training run (well under the 15 min budget)."""
    cfg = denoiser.TrainConfig(epochs=40, batch_size=16, learning_rate=3e-3,
                               T=TOY_T, seed=0, checkpoint_interval=20)
    start = time.monotonic()
    pair, log = denoiser.train(synth_patches, cfg, schedule=toy_schedule,
                               base_channels=16)
    log["train_seconds"] = time.monotonic() - start
    return pair, log, cfg


@pytest.fixture(scope="session")
def classifier_stages(synth_patches):
    stages, curves = sfs_mod.train_classifier(
        synth_patches[:120], synth_patches[120:], epochs=25, seed=0,
        stage_epochs=(1, 12, 25))
    return stages, curves


@pytest.fixture(scope="session")
def eval_patches():
    """48 held-out patches with exactly balanced binary labels."""
    pool = dataio.synth_dataset(120, size=SIZE, seed=99)
    pos = [p for p in pool if p.binary_label == 1][:24]
    neg = [p for p in pool if p.binary_label == 0][:24]
    assert len(pos) == len(neg) == 24
    return sorted(pos + neg, key=lambda p: p.id)


@pytest.fixture(scope="session")
def generated_sets(toy_model, toy_schedule, eval_patches):
    """vIHC for the eval set under each sampling-path mask, model range."""
    pair, _, _ = toy_model
    masks = {
        "both": diffusion.PathMask(True, True),
        "restoration": diffusion.PathMask(True, False),
        "noise": diffusion.PathMask(False, True),
    }
    out = {}
    for name, mask in masks.items():
        imgs = []
        for i, p in enumerate(eval_patches):
            he = dataio.normalize(p.he).astype(np.float64)
            imgs.append(diffusion.sample_ihc(he, pair, toy_schedule,
                                             mask=mask, rng_seed=500 + i))
        out[name] = np.stack(imgs)
    return out
