"""Controlled spatial perturbations of IHC patches and the robustness battery
comparing how SSIM/PSNR vs Accuracy/SFS degrade under misalignment.

All transforms use reflect padding and bilinear interpolation so that no
artificial black borders depress the pixel metrics.
"""

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter, map_coordinates, rotate as nd_rotate, shift as nd_shift

from .errors import StarDiffError
from .quality_metrics import psnr, ssim
from .sfs import compute_sfs

# Severity -> displacement amplitude (px); smoothing sigma is fixed.
ELASTIC_LEVELS = {"low": 2.0, "medium": 6.0, "high": 12.0}
ELASTIC_SIGMA = 8.0


@dataclass(frozen=True)
class Perturbation:
    """kind: translate (magnitude in px, applied diagonally), rotate
    (degrees), or elastic (magnitude is a severity level name)."""

    kind: str
    magnitude: float | str
    seed: int = 0

    def label(self):
        if self.kind == "translate":
            return f"translate {self.magnitude:g}px"
        if self.kind == "rotate":
            return f"rotate {self.magnitude:g}°"
        return f"elastic {self.magnitude}"


def _elastic_field(shape, severity, seed):
    if severity not in ELASTIC_LEVELS:
        raise ValueError(f"elastic severity must be one of {sorted(ELASTIC_LEVELS)}, "
                         f"got {severity!r}")
    amp = ELASTIC_LEVELS[severity]
    rng = np.random.default_rng(seed)
    d = gaussian_filter(rng.uniform(-1, 1, size=(2, *shape)), sigma=(0, ELASTIC_SIGMA, ELASTIC_SIGMA))
    peak = np.max(np.abs(d))
    if peak > 0:
        d = d / peak * amp
    return d


def apply(img, p):
    """Apply one perturbation to a (3, H, W) image; output keeps the shape."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"expected (3, H, W) image, got {img.shape}")
    h, w = img.shape[1:]
    if p.kind == "translate":
        mag = float(p.magnitude)
        if mag < 0 or mag > min(h, w) / 2:
            raise ValueError(f"translation {mag}px exceeds half the image size")
        if mag == 0:
            return img.copy()
        return nd_shift(img, (0, mag, mag), order=1, mode="reflect")
    if p.kind == "rotate":
        ang = float(p.magnitude)
        if ang == 0:
            return img.copy()
        return nd_rotate(img, ang, axes=(2, 1), reshape=False, order=1, mode="reflect")
    if p.kind == "elastic":
        d = _elastic_field((h, w), p.magnitude, p.seed)
        yy, xx = np.meshgrid(np.arange(h, dtype=np.float64),
                             np.arange(w, dtype=np.float64), indexing="ij")
        coords = np.stack([yy + d[0], xx + d[1]])
        out = np.empty_like(img)
        for c in range(3):
            out[c] = map_coordinates(img[c], coords, order=1, mode="reflect")
        return out
    raise ValueError(f"unknown perturbation kind {p.kind!r}")


DEFAULT_BATTERY = (
    [Perturbation("translate", m) for m in (5, 10, 15)]
    + [Perturbation("rotate", m) for m in (5, 10, 15)]
    + [Perturbation("elastic", lv) for lv in ("low", "medium", "high")]
)


@dataclass
class PerturbationReport:
    baseline: dict
    rows: list

    def to_dict(self):
        return {"baseline": self.baseline, "rows": self.rows}

    def to_markdown(self):
        lines = [
            "| Perturbation | SSIM | PSNR (dB) | Accuracy | SFS | SSIM drop % | Acc drop % | SFS drop % |",
            "|---|---|---|---|---|---|---|---|",
            "| identical pair | 1.00 | Inf | {accuracy:.2f} | {sfs:.2f} | - | - | - |".format(
                **self.baseline),
        ]
        for r in self.rows:
            lines.append(
                "| {label} | {ssim:.2f} | {psnr_db:.2f} | {accuracy:.2f} | {sfs:.2f} "
                "| {ssim_drop_pct:.1f} | {accuracy_drop_pct:.1f} | {sfs_drop_pct:.1f} |".format(**r))
        return "\n".join(lines) + "\n"


def run_battery(ihc_images, labels, classifier, perturbations=DEFAULT_BATTERY,
                n_classes=2):
    """Perturbation analysis with the identical-pair case as baseline.

    ihc_images: array (N, 3, H, W) in [0, 1].  For each perturbation the
    SSIM/PSNR are computed between original and perturbed images, and the
    classifier's Accuracy/SFS on the perturbed set use the originals as the
    real reference.  Percentage drops are relative to the baseline row; the
    PSNR drop is omitted because the baseline is infinite.
    """
    images = np.asarray(ihc_images, dtype=np.float64)
    labels = np.asarray(labels)
    if len(images) == 0:
        raise ValueError("empty evaluation set")
    if classifier is None:
        raise StarDiffError("an evaluation classifier is required")

    model_range = images * 2.0 - 1.0
    real_preds = classifier.predict_labels(model_range)
    base_acc = float(np.mean(real_preds == labels))
    base_sfs = compute_sfs(real_preds, real_preds, labels, n_classes).sfs
    baseline = {"label": "identical pair", "ssim": 1.0, "psnr_db": float("inf"),
                "accuracy": base_acc, "sfs": base_sfs}

    rows = []
    for p in perturbations:
        perturbed = np.stack([apply(img, p) for img in images])
        ssims = [ssim(a, b) for a, b in zip(images, perturbed)]
        psnrs = [psnr(a, b) for a, b in zip(images, perturbed)]
        gen_preds = classifier.predict_labels(perturbed * 2.0 - 1.0)
        report = compute_sfs(real_preds, gen_preds, labels, n_classes)
        acc = float(np.mean(gen_preds == labels))
        row = {
            "label": p.label(),
            "kind": p.kind,
            "magnitude": p.magnitude,
            "ssim": float(np.mean(ssims)),
            "psnr_db": float(np.mean(psnrs)),
            "accuracy": acc,
            "sfs": report.sfs,
        }
        row["ssim_drop_pct"] = (1.0 - row["ssim"]) * 100.0
        row["accuracy_drop_pct"] = (base_acc - acc) / base_acc * 100.0 if base_acc else 0.0
        row["sfs_drop_pct"] = (base_sfs - report.sfs) / base_sfs * 100.0 if base_sfs else 0.0
        rows.append(row)
    return PerturbationReport(baseline=baseline, rows=rows)
