"""Paired-stain dataset handling: BCI-style directory ingestion and a
synthetic paired H&E/IHC generator with a controllable HER2 signal.

Directory convention (shared by real and synthetic data):

    root/
      HE/<id>.png
      IHC/<id>.png
      labels.csv      # columns: id, her2[, split]

Synthetic pairs render one shared smoothed-blob tissue structure into both
stains: pink/purple for H&E, DAB brown for IHC with brown intensity rising
monotonically in the HER2 class.  Pairs are pixel-aligned by construction
unless an explicit misalignment shift is requested.
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter, shift as nd_shift

from .errors import LabelParseError, MissingPairError

HER2_TOKENS = {"0": 0, "1": 1, "2": 2, "3": 3, "1+": 1, "2+": 2, "3+": 3}

# Absorption vectors per channel (R, G, B): hematoxylin/eosin mix for H&E,
# DAB brown for IHC.  Brown absorbs blue most, red least.
_HE_ABSORB = np.array([0.30, 0.52, 0.14])
_DAB_ABSORB = np.array([0.28, 0.55, 0.80])
_BACKGROUND = np.array([0.94, 0.91, 0.93])


@dataclass
class PairedPatch:
    """One aligned (H&E, IHC, HER2 label) record.  Images are uint8 (3, H, W)."""

    id: str
    he: np.ndarray
    ihc: np.ndarray
    her2: int

    def __post_init__(self):
        if self.he.shape != self.ihc.shape:
            raise ValueError(f"patch {self.id}: he/ihc shape mismatch")
        if self.her2 not in (0, 1, 2, 3):
            raise ValueError(f"patch {self.id}: her2 must be 0..3, got {self.her2}")

    @property
    def binary_label(self):
        """HER2-positive iff score is 2+ or 3+."""
        return int(self.her2 >= 2)


@dataclass
class DatasetSplit:
    train: list = field(default_factory=list)
    val: list = field(default_factory=list)
    test: list = field(default_factory=list)


def normalize(img):
    """uint8 [0, 255] -> float32 [-1, 1]."""
    return (np.asarray(img, dtype=np.float32) / 127.5) - 1.0


def denormalize(img):
    """float [-1, 1] -> uint8, inverse of normalize within 1/255."""
    x = (np.clip(np.asarray(img, dtype=np.float64), -1.0, 1.0) + 1.0) * 127.5
    return np.round(x).astype(np.uint8)


def _render(structure, texture, absorb, stain_strength):
    """Beer-Lambert-ish rendering: white background minus stain absorption."""
    img = _BACKGROUND[:, None, None] - stain_strength * structure[None] * absorb[:, None, None]
    img = img + texture
    return np.clip(img, 0.0, 1.0)


def synth_dataset(n, size=64, class_balance=(0.25, 0.25, 0.25, 0.25), seed=0,
                  misalign_px=0.0):
    """Generate n synthetic paired patches, fully determined by seed.

    Each record shares one smoothed-blob tissue mask between the two stains.
    IHC brown intensity is base + k*her2, so mean stain rises strictly with
    class; H&E carries a milder class-correlated intensity so the mapping is
    learnable from the source stain.  misalign_px > 0 shifts the IHC
    rendering to emulate slide-level (not pixel-level) co-registration.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    balance = np.asarray(class_balance, dtype=np.float64)
    if balance.shape != (4,) or np.any(balance < 0) or abs(balance.sum() - 1.0) > 1e-9:
        raise ValueError("class_balance must be 4 non-negative probabilities summing to 1")

    rng = np.random.default_rng(seed)
    # Separate stream for the misalignment offsets so the rendered patches
    # are identical with and without misalignment.
    offset_rng = np.random.default_rng((seed, 1))
    patches = []
    for i in range(n):
        her2 = int(rng.choice(4, p=balance))
        field_ = gaussian_filter(rng.standard_normal((size, size)), sigma=size / 10.0)
        # Quantile threshold keeps tissue coverage near-constant (~35%) so
        # class is carried by stain intensity, not by blob area.
        mask = (field_ > np.quantile(field_, 0.65)).astype(np.float64)
        structure = gaussian_filter(mask, sigma=1.0)

        he_tex = rng.normal(0.0, 0.035, size=(3, size, size))
        ihc_tex = rng.normal(0.0, 0.035, size=(3, size, size))

        he_strength = 0.42 + 0.08 * her2
        ihc_strength = 0.22 + 0.17 * her2

        he = _render(structure, he_tex, _HE_ABSORB, he_strength)
        ihc_structure = structure
        if misalign_px > 0:
            dx, dy = offset_rng.uniform(-misalign_px, misalign_px, size=2)
            ihc_structure = nd_shift(structure, (dy, dx), order=1, mode="reflect")
        ihc = _render(ihc_structure, ihc_tex, _DAB_ABSORB, ihc_strength)

        patches.append(PairedPatch(
            id=f"synth_{i:05d}",
            he=np.round(he * 255).astype(np.uint8),
            ihc=np.round(ihc * 255).astype(np.uint8),
            her2=her2,
        ))
    return patches


def _save_png(path, img_chw):
    Image.fromarray(np.transpose(img_chw, (1, 2, 0))).save(path, format="PNG")


def _load_png(path):
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return np.transpose(arr, (2, 0, 1))


def export_bci(patches, root_dir, test_fraction=0.2):
    """Write patches in the BCI directory layout.

    Split assignment is deterministic: every k-th record (by position) goes to
    test so reruns produce byte-identical files.
    """
    root = Path(root_dir)
    (root / "HE").mkdir(parents=True, exist_ok=True)
    (root / "IHC").mkdir(parents=True, exist_ok=True)
    stride = max(2, int(round(1.0 / test_fraction))) if test_fraction > 0 else 0
    with open(root / "labels.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["id", "her2", "split"])
        for i, p in enumerate(patches):
            split = "test" if stride and i % stride == stride - 1 else "train"
            _save_png(root / "HE" / f"{p.id}.png", p.he)
            _save_png(root / "IHC" / f"{p.id}.png", p.ihc)
            writer.writerow([p.id, str(p.her2), split])
    return root


def load_bci(root_dir, val_fraction=0.2):
    """Load a BCI-layout directory into PairedPatch records plus a split.

    Every HE file must have a same-named IHC mate and a labels.csv row.  The
    train portion is further carved into train/val (val_fraction of it, taken
    deterministically from the sorted tail).
    """
    root = Path(root_dir)
    he_dir, ihc_dir = root / "HE", root / "IHC"
    if not he_dir.is_dir() or not ihc_dir.is_dir():
        raise FileNotFoundError(f"{root} does not contain HE/ and IHC/ subdirectories")

    labels, splits = {}, {}
    labels_path = root / "labels.csv"
    if not labels_path.exists():
        raise FileNotFoundError(f"missing label manifest {labels_path}")
    with open(labels_path, newline="") as f:
        for row in csv.DictReader(f):
            token = row["her2"].strip()
            if token not in HER2_TOKENS:
                raise LabelParseError(f"unknown HER2 label token {token!r} for id {row['id']!r}")
            labels[row["id"]] = HER2_TOKENS[token]
            splits[row["id"]] = row.get("split", "train") or "train"

    he_ids = {p.stem for p in he_dir.glob("*.png")}
    ihc_ids = {p.stem for p in ihc_dir.glob("*.png")}
    for pid in sorted(he_ids ^ ihc_ids):
        side = "IHC" if pid in he_ids else "HE"
        raise MissingPairError(f"patch {pid!r} has no {side} mate")

    patches = []
    for pid in sorted(he_ids):
        if pid not in labels:
            raise LabelParseError(f"patch {pid!r} has no labels.csv row")
        patches.append(PairedPatch(
            id=pid,
            he=_load_png(he_dir / f"{pid}.png"),
            ihc=_load_png(ihc_dir / f"{pid}.png"),
            her2=labels[pid],
        ))

    train_ids = [p.id for p in patches if splits[p.id] == "train"]
    test_ids = [p.id for p in patches if splits[p.id] == "test"]
    n_val = int(round(len(train_ids) * val_fraction))
    split = DatasetSplit(
        train=train_ids[:len(train_ids) - n_val],
        val=train_ids[len(train_ids) - n_val:],
        test=test_ids,
    )
    return patches, split
