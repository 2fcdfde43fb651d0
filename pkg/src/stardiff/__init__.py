"""stardiff: dual-path restoration diffusion for H&E-to-IHC virtual staining
with a misalignment-robust evaluation stack."""

__version__ = "0.1.0"

from .schedules import SchedulePair, make_schedule, reverse_coefficients
from .diffusion import PathMask, DiffusionSample, residual, forward_sample, reverse_step, sample_ihc
from .sfs import SFSReport, class_recalls, compute_sfs

__all__ = [
    "SchedulePair", "make_schedule", "reverse_coefficients",
    "PathMask", "DiffusionSample", "residual", "forward_sample",
    "reverse_step", "sample_ihc",
    "SFSReport", "class_recalls", "compute_sfs",
]
