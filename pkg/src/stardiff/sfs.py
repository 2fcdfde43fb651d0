"""Biomarker classifier training at three fit stages and the Semantic
Fidelity Score.

SFS combines the classifier's accuracy on generated images with the mean
class-wise recall degradation relative to real images:

    AvgDeg = mean_c (R_real[c] - R_gen[c])
    SFS    = clamp((Acc_gen + (1 - AvgDeg)) / 2, 0, 1)

The degradation term calibrates away classifier bias, which is what makes the
score stable across underfit / properly-fit / overfit evaluation classifiers.
"""

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .dataio import normalize

STAGE_NAMES = ("underfit", "properly_fit", "overfit")


@dataclass
class ClassifierStage:
    stage: str
    epoch: int
    train_acc: float
    test_acc: float


@dataclass
class SFSReport:
    n_classes: int
    class_counts: list
    recall_real: list
    recall_gen: list
    avg_deg: float
    acc_gen: float
    sfs: float
    raw_sfs: float
    classifier_stage: ClassifierStage | None = None

    def to_dict(self):
        d = {
            "n_classes": self.n_classes,
            "class_counts": self.class_counts,
            "recall_real": self.recall_real,
            "recall_gen": self.recall_gen,
            "avg_deg": self.avg_deg,
            "acc_gen": self.acc_gen,
            "sfs": self.sfs,
            "raw_sfs": self.raw_sfs,
        }
        if self.classifier_stage is not None:
            d["classifier_stage"] = vars(self.classifier_stage)
        return d


def class_recalls(preds, truth, n_classes):
    """Per-class recall R_c = TP_c / N_c; classes absent from truth get NaN
    and are excluded from the degradation average downstream."""
    preds = np.asarray(preds)
    truth = np.asarray(truth)
    if preds.shape != truth.shape:
        raise ValueError(f"length mismatch: {preds.shape} vs {truth.shape}")
    recalls = np.full(n_classes, np.nan)
    for c in range(n_classes):
        n_c = int(np.sum(truth == c))
        if n_c > 0:
            recalls[c] = float(np.sum((truth == c) & (preds == c))) / n_c
    return recalls


def compute_sfs(real_preds, gen_preds, truth, n_classes=2, classifier_stage=None):
    """Semantic Fidelity Score from paired predictions on real and generated
    images sharing one ground-truth labeling."""
    real_preds = np.asarray(real_preds)
    gen_preds = np.asarray(gen_preds)
    truth = np.asarray(truth)
    if not (real_preds.shape == gen_preds.shape == truth.shape):
        raise ValueError("real_preds, gen_preds and truth must have equal length")
    if truth.size == 0:
        raise ValueError("empty evaluation set")

    r_real = class_recalls(real_preds, truth, n_classes)
    r_gen = class_recalls(gen_preds, truth, n_classes)
    present = ~np.isnan(r_real)
    avg_deg = float(np.mean(r_real[present] - r_gen[present]))
    acc_gen = float(np.mean(gen_preds == truth))
    raw = (acc_gen + 1.0 - avg_deg) / 2.0
    counts = [int(np.sum(truth == c)) for c in range(n_classes)]
    return SFSReport(
        n_classes=n_classes,
        class_counts=counts,
        recall_real=[None if np.isnan(v) else float(v) for v in r_real],
        recall_gen=[None if np.isnan(v) else float(v) for v in r_gen],
        avg_deg=avg_deg,
        acc_gen=acc_gen,
        sfs=float(np.clip(raw, 0.0, 1.0)),
        raw_sfs=float(raw),
        classifier_stage=classifier_stage,
    )


class Her2Classifier(nn.Module):
    """Small residual CNN over IHC patches; global pooling keeps the decision
    driven by stain statistics rather than absolute position."""

    def __init__(self, n_classes=2, base=16):
        super().__init__()
        self.n_classes = n_classes
        self.base = base
        self.stem = nn.Sequential(nn.Conv2d(3, base, 3, padding=1), nn.ReLU())
        self.block1 = nn.Sequential(
            nn.Conv2d(base, base, 3, padding=1), nn.ReLU(),
            nn.Conv2d(base, base, 3, padding=1))
        self.down = nn.Sequential(nn.MaxPool2d(2), nn.Conv2d(base, base * 2, 3, padding=1),
                                  nn.ReLU())
        self.block2 = nn.Sequential(
            nn.Conv2d(base * 2, base * 2, 3, padding=1), nn.ReLU(),
            nn.Conv2d(base * 2, base * 2, 3, padding=1))
        self.head = nn.Linear(base * 2, n_classes)
        self.act = nn.ReLU()

    def forward(self, x):
        h = self.stem(x)
        h = self.act(h + self.block1(h))
        h = self.down(h)
        h = self.act(h + self.block2(h))
        h = h.mean(dim=(2, 3))
        return self.head(h)

    def predict_labels(self, images, batch_size=64):
        """images: array (N, 3, H, W) in [-1, 1] (float) or uint8."""
        images = np.asarray(images)
        if images.dtype == np.uint8:
            images = normalize(images)
        out = []
        self.eval()
        with torch.no_grad():
            for start in range(0, len(images), batch_size):
                x = torch.as_tensor(images[start:start + batch_size], dtype=torch.float32)
                out.append(self(x).argmax(dim=1).numpy())
        return np.concatenate(out)


def _accuracy(model, x, y, batch_size=64):
    preds = model.predict_labels(x.numpy(), batch_size)
    return float(np.mean(preds == y.numpy()))


def train_classifier(train_patches, test_patches, epochs=40, seed=0,
                     stage_epochs=None, learning_rate=1e-3, batch_size=32,
                     binarize=True):
    """Train the biomarker classifier and snapshot it at the three fit stages.

    Returns (stages, curves): stages maps stage name -> (model, ClassifierStage)
    with deep-copied parameters at the configured epochs; curves holds
    per-epoch train/test accuracy for the fit-stage plot.  Default stage
    epochs follow a 1/3 : 2/3 : 1 split of the training length.
    """
    label = (lambda p: p.binary_label) if binarize else (lambda p: p.her2)
    n_classes = 2 if binarize else 4
    y_train = np.array([label(p) for p in train_patches])
    y_test = np.array([label(p) for p in test_patches])
    if len(np.unique(y_train)) < 2:
        raise ValueError("training set contains a single class")
    if stage_epochs is None:
        stage_epochs = (max(1, round(epochs / 3)), max(2, round(2 * epochs / 3)), epochs)
    if len(stage_epochs) != 3 or max(stage_epochs) > epochs:
        raise ValueError("stage_epochs must be 3 epochs within the training length")

    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    model = Her2Classifier(n_classes=n_classes)
    opt = torch.optim.Adam(model.parameters(), lr=learning_rate)
    loss_fn = nn.CrossEntropyLoss()

    x_train = torch.as_tensor(np.stack([normalize(p.ihc) for p in train_patches]))
    x_test = torch.as_tensor(np.stack([normalize(p.ihc) for p in test_patches]))
    yt = torch.as_tensor(y_train, dtype=torch.long)
    y_test_t = torch.as_tensor(y_test, dtype=torch.long)

    stages = {}
    curves = {"epoch": [], "train_acc": [], "test_acc": []}
    stage_by_epoch = dict(zip(stage_epochs, STAGE_NAMES))
    for epoch in range(1, epochs + 1):
        model.train()
        order = rng.permutation(len(x_train))
        for start in range(0, len(x_train), batch_size):
            batch = order[start:start + batch_size]
            opt.zero_grad()
            loss = loss_fn(model(x_train[batch]), yt[batch])
            loss.backward()
            opt.step()
        tr_acc = _accuracy(model, x_train, yt)
        te_acc = _accuracy(model, x_test, y_test_t)
        curves["epoch"].append(epoch)
        curves["train_acc"].append(tr_acc)
        curves["test_acc"].append(te_acc)
        if epoch in stage_by_epoch:
            snap = Her2Classifier(n_classes=n_classes)
            snap.load_state_dict({k: v.clone() for k, v in model.state_dict().items()})
            snap.eval()
            name = stage_by_epoch[epoch]
            stages[name] = (snap, ClassifierStage(name, epoch, tr_acc, te_acc))
    return stages, curves


def stage_robustness(gen_images, real_images, truth, stage_models, n_classes=2):
    """Evaluate one generated set under each classifier stage.

    stage_models: {stage name: (model, ClassifierStage)}.  Returns a dict with
    per-stage accuracy/SFS rows plus the across-stage ranges.
    """
    if not stage_models:
        raise ValueError("no classifier stages supplied")
    truth = np.asarray(truth)
    rows = []
    for name, (model, stage) in stage_models.items():
        real_preds = model.predict_labels(real_images)
        gen_preds = model.predict_labels(gen_images)
        report = compute_sfs(real_preds, gen_preds, truth, n_classes, classifier_stage=stage)
        rows.append({"stage": name, "epoch": stage.epoch,
                     "accuracy": report.acc_gen, "sfs": report.sfs})
    accs = [r["accuracy"] for r in rows]
    sfss = [r["sfs"] for r in rows]
    return {
        "rows": rows,
        "accuracy_range": float(max(accs) - min(accs)),
        "sfs_range": float(max(sfss) - min(sfss)),
    }
