"""Command-line surface: reproducible workflows tying the package together.

Every command writes a manifest.json echoing its fully-resolved configuration
so any output directory can be regenerated from the manifest alone.  Reports
are emitted as JSON plus Markdown, with matplotlib figures rendered alongside.
"""

import csv
import datetime
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import checkpoint as ckpt
from . import dataio, denoiser, diffusion, perturb as perturb_mod, plotting, quality_metrics as qm
from . import saliency as saliency_mod, schedules as sched, sfs as sfs_mod
from .errors import StarDiffError

FORMAT_VERSION = 1


def _classifier_factory(meta):
    return sfs_mod.Her2Classifier(n_classes=meta["n_classes"], base=meta.get("base", 16))


def _write_manifest(out_dir, command, config):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "format_version": FORMAT_VERSION,
        "config": {k: (str(v) if isinstance(v, Path) else v) for k, v in config.items()},
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    with open(out_dir / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)


def _write_json(path, obj):
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)


def _apply_config_file(ctx, param, value):
    """--config: JSON file whose entries override unset flags."""
    if value:
        with open(value) as f:
            overrides = json.load(f)
        ctx.default_map = {**(ctx.default_map or {}), **overrides}
    return value


config_option = click.option(
    "--config", type=click.Path(exists=True), callback=_apply_config_file,
    expose_value=False, is_eager=True, help="JSON config file; flags override it.")


@click.group()
def main():
    """Star-Diff virtual staining and evaluation toolkit."""


def _select_patches(root, split_name):
    patches, split = dataio.load_bci(root)
    by_id = {p.id: p for p in patches}
    if split_name == "all":
        return patches, split
    ids = getattr(split, split_name)
    return [by_id[i] for i in ids], split


def _parse_balance(text):
    parts = [float(x) for x in text.split(",")]
    if len(parts) != 4:
        raise click.BadParameter("class balance needs 4 comma-separated probabilities")
    return parts


@main.command("synth-data")
@config_option
@click.option("--n", default=200, show_default=True)
@click.option("--size", default=64, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--class-balance", default="0.25,0.25,0.25,0.25", show_default=True)
@click.option("--misalign-px", default=0.0, show_default=True)
@click.option("--out", required=True, type=click.Path())
def cmd_synth_data(n, size, seed, class_balance, misalign_px, out):
    """Generate a synthetic paired-stain dataset in the BCI layout."""
    balance = _parse_balance(class_balance)
    patches = dataio.synth_dataset(n, size=size, class_balance=balance, seed=seed,
                                   misalign_px=misalign_px)
    dataio.export_bci(patches, out)
    _write_manifest(out, "synth-data", dict(n=n, size=size, seed=seed,
                                            class_balance=class_balance,
                                            misalign_px=misalign_px, out=out))
    click.echo(f"wrote {len(patches)} pairs to {out}")


@main.command("train")
@config_option
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--epochs", default=30, show_default=True)
@click.option("--batch-size", default=16, show_default=True)
@click.option("--lr", default=2e-3, show_default=True)
@click.option("--timesteps", "T", default=20, show_default=True)
@click.option("--noise-shape", default="linear", type=click.Choice(sched.NOISE_SHAPES))
@click.option("--restoration-shape", default="linear", type=click.Choice(sched.RESTORATION_SHAPES))
@click.option("--w-res", default=1.0, show_default=True)
@click.option("--w-eps", default=1.0, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--checkpoint-interval", default=10, show_default=True)
@click.option("--orientation", default="he_minus_ihc", type=click.Choice(diffusion.ORIENTATIONS))
@click.option("--base-channels", default=24, show_default=True)
def cmd_train(data, out, epochs, batch_size, lr, T, noise_shape, restoration_shape,
              w_res, w_eps, seed, checkpoint_interval, orientation, base_channels):
    """Train the restoration and noise prediction networks."""
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    patches, _ = _select_patches(data, "train")
    cfg = denoiser.TrainConfig(epochs=epochs, batch_size=batch_size, learning_rate=lr,
                               T=T, w_res=w_res, w_eps=w_eps, seed=seed,
                               checkpoint_interval=checkpoint_interval)
    schedule = sched.make_schedule(T, noise_shape, restoration_shape)

    def save_ckpt(epoch, pair):
        ckpt.save_denoiser(out_dir / "checkpoint.pt", pair, schedule, cfg, orientation,
                           base_channels=base_channels)

    pair, log = denoiser.train(patches, cfg, schedule=schedule, orientation=orientation,
                               checkpoint_fn=save_ckpt, base_channels=base_channels)
    ckpt.save_denoiser(out_dir / "checkpoint.pt", pair, schedule, cfg, orientation,
                       base_channels=base_channels)
    with open(out_dir / "loss.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "loss", "loss_res", "loss_eps"])
        for i, (l, lr_, le) in enumerate(zip(log["epoch_loss"], log["epoch_loss_res"],
                                             log["epoch_loss_eps"]), start=1):
            writer.writerow([i, f"{l:.6f}", f"{lr_:.6f}", f"{le:.6f}"])
    plotting.save_loss_curve(log, out_dir / "loss.png")
    _write_manifest(out_dir, "train", dict(
        data=data, out=out, epochs=epochs, batch_size=batch_size, lr=lr, T=T,
        noise_shape=noise_shape, restoration_shape=restoration_shape, w_res=w_res,
        w_eps=w_eps, seed=seed, checkpoint_interval=checkpoint_interval,
        orientation=orientation, base_channels=base_channels))
    click.echo(f"final loss {log['epoch_loss'][-1]:.6f}; checkpoint at {out_dir / 'checkpoint.pt'}")


def _mask_from_name(name):
    return {
        "both": diffusion.PathMask(True, True),
        "restoration": diffusion.PathMask(True, False),
        "noise": diffusion.PathMask(False, True),
    }[name]


def _sample_set(patches, pair, schedule, mask, seed):
    out = {}
    for i, p in enumerate(patches):
        he = dataio.normalize(p.he).astype(np.float64)
        vihc = diffusion.sample_ihc(he, pair, schedule, mask=mask, rng_seed=seed + i)
        out[p.id] = dataio.denormalize(vihc)
    return out


@main.command("sample")
@config_option
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--mask", default="both", type=click.Choice(["both", "restoration", "noise"]),
              show_default=True, help="Sampling-path ablation mode.")
@click.option("--split", default="test", type=click.Choice(["train", "val", "test", "all"]))
@click.option("--seed", default=0, show_default=True)
def cmd_sample(data, checkpoint_path, out, mask, split, seed):
    """Generate virtual IHC images for a dataset split."""
    pair, schedule, _, _ = ckpt.load_denoiser(checkpoint_path)
    patches, _ = _select_patches(data, split)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    generated = _sample_set(patches, pair, schedule, _mask_from_name(mask), seed)
    for pid, img in generated.items():
        dataio._save_png(out_dir / f"{pid}.png", img)
    _write_manifest(out_dir, "sample", dict(data=data, checkpoint=checkpoint_path,
                                            out=out, mask=mask, split=split, seed=seed))
    click.echo(f"wrote {len(generated)} vIHC patches to {out_dir}")


def _method_metrics(gen_by_id, ref_patches, classifier, n_classes=2):
    pairs = []
    gen_imgs, real_imgs, truth = [], [], []
    for p in ref_patches:
        if p.id not in gen_by_id:
            raise StarDiffError(f"generated set is missing patch id {p.id!r}")
        gen01 = gen_by_id[p.id].astype(np.float64) / 255.0
        ref01 = p.ihc.astype(np.float64) / 255.0
        pairs.append((ref01, gen01))
        gen_imgs.append(gen01 * 2 - 1)
        real_imgs.append(ref01 * 2 - 1)
        truth.append(p.binary_label)
    quality = qm.evaluate_pairs(pairs)
    result = {"ssim": quality.ssim, "psnr_db": quality.psnr_db, "n_pairs": quality.n_pairs}
    if classifier is not None:
        real_preds = classifier.predict_labels(np.stack(real_imgs))
        gen_preds = classifier.predict_labels(np.stack(gen_imgs))
        report = sfs_mod.compute_sfs(real_preds, gen_preds, np.array(truth), n_classes)
        result["accuracy"] = report.acc_gen
        result["sfs"] = report.sfs
        result["sfs_report"] = report.to_dict()
    return result, quality


def _load_generated_dir(path):
    d = Path(path)
    if not d.is_dir():
        raise StarDiffError(f"generated directory not found: {d}")
    return {p.stem: dataio._load_png(p) for p in sorted(d.glob("*.png"))}


@main.command("evaluate")
@config_option
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--generated", "generated_specs", multiple=True,
              help="NAME=DIR of generated images; repeat for multi-method ranking.")
@click.option("--classifier", "classifier_path", type=click.Path(), default=None)
@click.option("--checkpoint", "checkpoint_path", type=click.Path(), default=None,
              help="Denoiser checkpoint; required with --runs.")
@click.option("--runs", default=0, show_default=True,
              help="Sample this many seeds internally and report mean ± std.")
@click.option("--split", default="test", type=click.Choice(["train", "val", "test", "all"]))
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
def cmd_evaluate(data, generated_specs, classifier_path, checkpoint_path, runs,
                 split, seed, out):
    """Compute SSIM/PSNR and Accuracy/SFS for generated IHC sets."""
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ref_patches, _ = _select_patches(data, split)
    classifier = None
    if classifier_path:
        classifier, _ = ckpt.load_classifier(classifier_path, _classifier_factory)

    report = {"split": split, "methods": {}}
    quality_by_method = {}

    if runs:
        if not checkpoint_path:
            raise StarDiffError("--runs requires --checkpoint to sample from")
        pair, schedule, _, _ = ckpt.load_denoiser(checkpoint_path)
        per_run = []
        for k in range(runs):
            gen = _sample_set(ref_patches, pair, schedule,
                              diffusion.PathMask(), seed + 1000 * k)
            metrics, _ = _method_metrics(gen, ref_patches, classifier)
            metrics.pop("sfs_report", None)
            per_run.append(metrics)
        keys = [k for k in per_run[0] if isinstance(per_run[0][k], float)]
        summary = {f"{k}_mean": float(np.mean([r[k] for r in per_run])) for k in keys}
        summary.update({f"{k}_std": float(np.std([r[k] for r in per_run])) for k in keys})
        report["methods"]["stardiff"] = {"runs": per_run, **summary}
    for spec in generated_specs:
        name, _, path = spec.partition("=")
        if not path:
            name, path = Path(spec).name, spec
        metrics, quality = _method_metrics(_load_generated_dir(path), ref_patches, classifier)
        report["methods"][name] = metrics
        quality_by_method[name] = quality

    if len(quality_by_method) >= 2:
        ranking = qm.quality_rank(quality_by_method)
        report["quality_rank"] = {
            "composite": ranking.composite,
            "final_rank": ranking.final_rank,
        }

    _write_json(out_dir / "metrics.json", report)
    lines = ["| Method | SSIM | PSNR (dB) | Accuracy | SFS |", "|---|---|---|---|---|"]
    for name, m in report["methods"].items():
        ssim_v = m.get("ssim", m.get("ssim_mean"))
        psnr_v = m.get("psnr_db", m.get("psnr_db_mean"))
        acc = m.get("accuracy", m.get("accuracy_mean"))
        sfs_v = m.get("sfs", m.get("sfs_mean"))
        fmt = lambda v: "-" if v is None else f"{v:.3f}"
        lines.append(f"| {name} | {fmt(ssim_v)} | {fmt(psnr_v)} | {fmt(acc)} | {fmt(sfs_v)} |")
    (out_dir / "metrics.md").write_text("\n".join(lines) + "\n")
    _write_manifest(out_dir, "evaluate", dict(
        data=data, generated=list(generated_specs), classifier=classifier_path,
        checkpoint=checkpoint_path, runs=runs, split=split, seed=seed, out=out))
    click.echo(json.dumps({k: {kk: vv for kk, vv in v.items() if not isinstance(vv, (list, dict))}
                           for k, v in report["methods"].items()}, indent=2, sort_keys=True))


@main.command("classifier")
@config_option
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--epochs", default=40, show_default=True)
@click.option("--stage-epochs", default=None,
              help="Comma-separated underfit,properly_fit,overfit epochs.")
@click.option("--lr", default=1e-3, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--four-class", is_flag=True, help="Use 4-class HER2 scores instead of binary.")
def cmd_classifier(data, out, epochs, stage_epochs, lr, seed, four_class):
    """Train the biomarker classifier and save the three fit-stage checkpoints."""
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_patches, _ = _select_patches(data, "train")
    test_patches, _ = _select_patches(data, "test")
    stage_tuple = None
    if stage_epochs:
        stage_tuple = tuple(int(x) for x in stage_epochs.split(","))
    stages, curves = sfs_mod.train_classifier(
        train_patches, test_patches, epochs=epochs, seed=seed,
        stage_epochs=stage_tuple, learning_rate=lr, binarize=not four_class)
    n_classes = 4 if four_class else 2
    for name, (model, stage) in stages.items():
        ckpt.save_classifier(out_dir / f"classifier_{name}.pt", model,
                             {"n_classes": n_classes, "base": model.base,
                              "stage": name, "epoch": stage.epoch,
                              "train_acc": stage.train_acc, "test_acc": stage.test_acc})
    with open(out_dir / "curves.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "train_acc", "test_acc"])
        for e, tr, te in zip(curves["epoch"], curves["train_acc"], curves["test_acc"]):
            writer.writerow([e, f"{tr:.4f}", f"{te:.4f}"])
    plotting.save_accuracy_curves(curves, stages, out_dir / "curves.png")
    _write_manifest(out_dir, "classifier", dict(
        data=data, out=out, epochs=epochs, stage_epochs=stage_epochs, lr=lr,
        seed=seed, four_class=four_class))
    for name, (_, stage) in stages.items():
        click.echo(f"{name}: epoch {stage.epoch}, train {stage.train_acc:.3f}, "
                   f"test {stage.test_acc:.3f}")


@main.command("perturb")
@config_option
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--classifier", "classifier_path", required=True, type=click.Path())
@click.option("--split", default="test", type=click.Choice(["train", "val", "test", "all"]))
@click.option("--limit", default=0, show_default=True, help="Cap the evaluation set size.")
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
def cmd_perturb(data, classifier_path, split, limit, seed, out):
    """Run the spatial-perturbation robustness battery on real IHC patches."""
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    patches, _ = _select_patches(data, split)
    if limit:
        patches = patches[:limit]
    classifier, _ = ckpt.load_classifier(classifier_path, _classifier_factory)
    images = np.stack([p.ihc for p in patches]).astype(np.float64) / 255.0
    labels = np.array([p.binary_label for p in patches])
    battery = [perturb_mod.Perturbation(p.kind, p.magnitude, seed)
               for p in perturb_mod.DEFAULT_BATTERY]
    report = perturb_mod.run_battery(images, labels, classifier, battery)
    _write_json(out_dir / "report.json", report.to_dict())
    (out_dir / "report.md").write_text(report.to_markdown())
    plotting.save_perturbation_drops(report, out_dir / "drops.png")
    _write_manifest(out_dir, "perturb", dict(data=data, classifier=classifier_path,
                                             split=split, limit=limit, seed=seed, out=out))
    click.echo(report.to_markdown())


@main.command("saliency")
@config_option
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path())
@click.option("--patch-id", default=None, help="Defaults to the first test patch.")
@click.option("--timesteps", default=None, help="Comma-separated timesteps to probe.")
@click.option("--n-masks", default=1000, show_default=True)
@click.option("--keep-prob", default=0.5, show_default=True)
@click.option("--cell", default=8, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
def cmd_saliency(data, checkpoint_path, patch_id, timesteps, n_masks, keep_prob,
                 cell, seed, out):
    """RISE-style saliency of the H&E input over the denoising trajectory."""
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    pair, schedule, _, _ = ckpt.load_denoiser(checkpoint_path)
    patches, _ = _select_patches(data, "test")
    if patch_id:
        match = [p for p in patches if p.id == patch_id]
        if not match:
            raise StarDiffError(f"patch id {patch_id!r} not in the test split")
        patch = match[0]
    else:
        patch = patches[0]
    ts = [int(x) for x in timesteps.split(",")] if timesteps else None
    he = dataio.normalize(patch.he).astype(np.float64)
    sal = saliency_mod.rise_saliency(he, pair, schedule, timesteps=ts,
                                     n_masks=n_masks, p=keep_prob, cell=cell, seed=seed)
    np.savez(out_dir / "saliency.npz",
             **{f"t{t}": sal.maps[t] for t in sal.timesteps})
    he01 = patch.he.astype(np.float64) / 255.0
    plotting.save_saliency_panel(he01, sal, out_dir / "saliency.png")
    for t in sal.timesteps:
        overlay = plotting.saliency_overlay(he01, sal.maps[t])
        dataio._save_png(out_dir / f"overlay_t{t}.png",
                         np.round(overlay * 255).astype(np.uint8))
    _write_manifest(out_dir, "saliency", dict(
        data=data, checkpoint=checkpoint_path, patch_id=patch.id,
        timesteps=timesteps, n_masks=n_masks, keep_prob=keep_prob, cell=cell,
        seed=seed, out=out))
    click.echo(f"probed timesteps {sal.timesteps} for patch {patch.id}")


def run():
    """Entry point with one-line machine-parsable errors."""
    try:
        main(standalone_mode=False)
    except click.ClickException as e:
        click.echo(f"error: {e.format_message()}", err=True)
        sys.exit(e.exit_code or 1)
    except click.Abort:
        sys.exit(130)
    except (StarDiffError, FileNotFoundError, ValueError) as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(1)


if __name__ == "__main__":
    run()
