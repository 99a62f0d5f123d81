"""Command line entry points.

Every command reads and writes inside --output-dir, resolves dataset
paths through JSON manifests, and drops a run_manifest.json describing
what it produced. Exit codes: 2 usage (click), 3 I/O, 4 invalid data,
5 training failure.
"""

from __future__ import annotations

import functools
import json
import logging
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import click

from . import augment, manifest, metrics, nifti, pipeline
from .ensemble import PredictionSet, majority_vote
from .model import (
    TrainConfig,
    TrainingDivergedError,
    load_model,
    predict,
    save_model,
    train,
)
from .phantom import PhantomSpec
from .volume import GeometryMismatchError

logger = logging.getLogger(__name__)

EXIT_IO = 3
EXIT_INVALID = 4
EXIT_TRAINING = 5

_LOG_LEVELS = ("debug", "info", "warning", "error")


@dataclass
class CliState:
    seed: int
    threads: int
    output_dir: Path


def _handled(fn):
    """Map domain errors onto the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except TrainingDivergedError as e:
            click.echo(f"error: training failed: {e}", err=True)
            sys.exit(EXIT_TRAINING)
        except (
            nifti.NiftiError,
            manifest.ManifestSchemaError,
            json.JSONDecodeError,
        ) as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(EXIT_IO)
        except OSError as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(EXIT_IO)
        except (GeometryMismatchError, ValueError, KeyError) as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(EXIT_INVALID)

    return wrapper


def _write_run_manifest(state: CliState, command: str, parameters: dict, outputs):
    doc = {
        "command": command,
        "parameters": parameters,
        "outputs": sorted(str(o) for o in outputs),
    }
    path = state.output_dir / "run_manifest.json"
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def _load_manifest(path: Path):
    return manifest.read_manifest(path), path.parent


def _write_dataset(out_dir: Path, rows) -> list[Path]:
    """rows: (sample_id, Volume3D, TractLabelMap, Provenance).

    Writes one image and one mask file per tract, plus manifest.json.
    Returns the written paths.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    entries = []
    for sample_id, image, labels, prov in rows:
        image_name = f"{sample_id}_image.nii.gz"
        nifti.write_volume(image, out_dir / image_name)
        written.append(out_dir / image_name)
        label_paths = []
        for tract, mask in labels.channels:
            mask_name = f"{sample_id}_{tract}.nii.gz"
            nifti.write_mask(mask, out_dir / mask_name)
            written.append(out_dir / mask_name)
            label_paths.append((tract, mask_name))
        entries.append(
            manifest.ManifestEntry(
                sample_id=sample_id,
                image_path=image_name,
                label_paths=tuple(label_paths),
                provenance=prov,
            )
        )
    mpath = out_dir / "manifest.json"
    manifest.write_manifest(manifest.DatasetManifest(tuple(entries)), mpath)
    written.append(mpath)
    return written


@click.group()
@click.option("--seed", type=int, default=0, show_default=True,
              help="Master seed for anything random.")
@click.option("--threads", type=click.IntRange(min=1), default=1,
              show_default=True, help="Worker processes for studies.")
@click.option("--log-level", type=click.Choice(_LOG_LEVELS),
              default=None, envvar="TRACTAUG_LOG_LEVEL",
              help="Defaults to warning (env TRACTAUG_LOG_LEVEL).")
@click.option("--output-dir", type=click.Path(path_type=Path),
              default=Path("."), envvar="TRACTAUG_OUTPUT_DIR",
              show_default=True, help="Where outputs land.")
@click.pass_context
def main(ctx, seed, threads, log_level, output_dir):
    """Masking-based augmentation toolkit for one-shot tract segmentation."""
    logging.basicConfig(
        level=getattr(logging, (log_level or "warning").upper()),
        format="%(levelname)s %(name)s: %(message)s",
    )
    output_dir.mkdir(parents=True, exist_ok=True)
    ctx.obj = CliState(seed=seed, threads=threads, output_dir=output_dir)


@main.group()
def phantom():
    """Synthetic tube-phantom datasets."""


def _spec_options(fn):
    fn = click.option("--dims", type=int, nargs=3, default=(48, 48, 48),
                      show_default=True)(fn)
    fn = click.option("--existing", type=int, default=6, show_default=True,
                      help="Number of pretraining tracts.")(fn)
    fn = click.option("--novel", type=int, default=4, show_default=True,
                      help="Number of held-out tracts.")(fn)
    fn = click.option("--noise", type=float, default=0.05,
                      show_default=True)(fn)
    return fn


@phantom.command("gen")
@_spec_options
@click.option("--pretrain", "n_pretrain", type=int, default=10,
              show_default=True)
@click.option("--test", "n_test", type=int, default=16, show_default=True)
@click.pass_obj
@_handled
def phantom_gen(state, dims, existing, novel, noise, n_pretrain, n_test):
    """Generate pretrain/one-shot/test splits as NIfTI plus manifests."""
    spec = PhantomSpec(
        dims=tuple(dims),
        n_existing_tracts=existing,
        n_novel_tracts=novel,
        noise_sigma=noise,
        seed=state.seed,
    )
    cfg = pipeline.ExperimentConfig(
        phantom=spec, n_pretrain=n_pretrain, n_test=n_test
    )
    splits = pipeline.build_data(cfg, state.seed)
    outputs = []
    for split_name, samples in (
        ("pretrain", splits.pretrain),
        ("one_shot", (splits.one_shot,)),
        ("test", splits.test),
    ):
        rows = [
            (s.subject_id, s.image, s.labels, manifest.Provenance.real())
            for s in samples
        ]
        outputs += _write_dataset(state.output_dir / split_name, rows)
    _write_run_manifest(
        state,
        "phantom gen",
        {
            "seed": state.seed,
            "dims": list(dims),
            "existing": existing,
            "novel": novel,
            "noise": noise,
            "pretrain": n_pretrain,
            "test": n_test,
        },
        outputs,
    )
    click.echo(f"wrote {len(outputs)} files under {state.output_dir}")


@main.command("augment")
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(path_type=Path))
@click.option("--sample", "sample_id", default=None,
              help="Sample to augment; defaults to the first entry.")
@click.option("--strategy", required=True,
              type=click.Choice(manifest.STRATEGY_NAMES))
@click.option("--count", type=int, default=None,
              help="Defaults to min(2^N - 1, 100) for N tracts.")
@click.pass_obj
@_handled
def augment_cmd(state, manifest_path, sample_id, strategy, count):
    """Make masked synthetic samples from one labeled sample."""
    doc, base = _load_manifest(manifest_path)
    entries = {e.sample_id: e for e in doc.entries}
    if sample_id is None:
        entry = doc.entries[0]
    elif sample_id in entries:
        entry = entries[sample_id]
    else:
        raise ValueError(f"sample {sample_id!r} not in manifest")
    image, labels = manifest.load_sample(entry, base)
    strat = augment.Strategy.from_name(strategy)
    plan = augment.AugmentationPlan(
        strategy=strat,
        count=count if count is not None else augment.default_count(len(labels)),
        master_seed=state.seed,
    )
    samples = augment.generate_dataset(image, labels, plan)
    rows = [
        (
            f"{entry.sample_id}_{strategy.lower()}_{s.index:03d}",
            s.image,
            s.labels,
            manifest.Provenance.synthetic(s.strategy.name, s.seed, s.index),
        )
        for s in samples
    ]
    outputs = _write_dataset(state.output_dir / "synthetic", rows)
    _write_run_manifest(
        state,
        "augment",
        {
            "seed": state.seed,
            "manifest": str(manifest_path),
            "sample": entry.sample_id,
            "strategy": strategy,
            "count": plan.count,
        },
        outputs,
    )
    click.echo(f"wrote {len(samples)} synthetic samples")


def _train_options(fn):
    fn = click.option("--epochs", type=int, required=True)(fn)
    fn = click.option("--lr", type=float, default=0.02, show_default=True)(fn)
    fn = click.option("--batch-size", type=int, default=2048,
                      show_default=True)(fn)
    fn = click.option("--steps-per-volume", type=int, default=4,
                      show_default=True)(fn)
    return fn


@main.command("train-pretrain")
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(path_type=Path))
@click.option("--hidden", type=int, default=32, show_default=True)
@_train_options
@click.pass_obj
@_handled
def train_pretrain(state, manifest_path, hidden, epochs, lr, batch_size,
                   steps_per_volume):
    """Train a segmenter from scratch on a labeled dataset."""
    from .model import TrainingExample, init_model
    from .rng import make_rng, mix

    doc, base = _load_manifest(manifest_path)
    examples = []
    names = None
    for entry in doc.entries:
        image, labels = manifest.load_sample(entry, base)
        names = labels.names
        examples.append(TrainingExample.from_volume(image, labels))
    model = init_model(hidden, names, make_rng(state.seed, "init"))
    cfg = TrainConfig(
        epochs=epochs,
        lr=lr,
        batch_size=batch_size,
        steps_per_volume=steps_per_volume,
        seed=mix(state.seed, "pretrain"),
    )
    result = train(model, examples, cfg)
    out = state.output_dir / "pretrained.json"
    save_model(result.model, out)
    _write_run_manifest(
        state,
        "train-pretrain",
        {
            "seed": state.seed,
            "manifest": str(manifest_path),
            "hidden": hidden,
            "epochs": epochs,
            "lr": lr,
            "batch_size": batch_size,
            "steps_per_volume": steps_per_volume,
        },
        [out],
    )
    click.echo(f"final loss {result.loss_curve[-1]:.6f}" if result.loss_curve
               else "no training steps run")
    click.echo(f"saved {out}")


@main.command("adapt")
@click.option("--model", "model_path", required=True,
              type=click.Path(path_type=Path))
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(path_type=Path),
              help="Manifest holding the one-shot sample.")
@click.option("--sample", "sample_id", default=None)
@click.option("--method", required=True,
              type=click.Choice([m.value for m in pipeline.AdaptationStrategy],
                                case_sensitive=False))
@click.option("--strategy", "strategies", multiple=True,
              type=click.Choice(manifest.STRATEGY_NAMES),
              help="Masking strategies for OURS; default all four.")
@click.option("--warmup-epochs", type=int, default=15, show_default=True)
@click.option("--finetune-epochs", type=int, default=15, show_default=True)
@click.option("--lr", type=float, default=0.02, show_default=True)
@click.option("--batch-size", type=int, default=2048, show_default=True)
@click.option("--steps-per-volume", type=int, default=4, show_default=True)
@click.pass_obj
@_handled
def adapt(state, model_path, manifest_path, sample_id, method, strategies,
          warmup_epochs, finetune_epochs, lr, batch_size, steps_per_volume):
    """Adapt a pretrained model to new tracts from one sample.

    CFT and IFT write adapted.json; OURS writes one adapted_<strategy>.json
    per masking strategy, ready for `ensemble`-style voting via `predict`.
    """
    doc, base = _load_manifest(manifest_path)
    entries = {e.sample_id: e for e in doc.entries}
    if sample_id is None:
        entry = doc.entries[0]
    elif sample_id in entries:
        entry = entries[sample_id]
    else:
        raise ValueError(f"sample {sample_id!r} not in manifest")
    image, labels = manifest.load_sample(entry, base)
    from .phantom import PhantomSample

    shot = PhantomSample(image=image, labels=labels, subject_id=entry.sample_id)
    pretrained = load_model(model_path)

    stage = TrainConfig(epochs=1, lr=lr, batch_size=batch_size,
                        steps_per_volume=steps_per_volume)
    strat = (
        tuple(augment.Strategy.from_name(s) for s in strategies)
        if strategies
        else pipeline.ExperimentConfig().strategies
    )
    cfg = pipeline.ExperimentConfig(
        warmup=replace(stage, epochs=warmup_epochs),
        finetune=replace(stage, epochs=finetune_epochs,
                         lr=lr / 2 if lr > 0 else lr),
        strategies=strat,
    )

    method = method.upper()
    outputs = []
    if method == "CFT":
        adapted = pipeline.adapt_cft(pretrained, shot, cfg, state.seed)
        out = state.output_dir / "adapted.json"
        save_model(adapted, out)
        outputs.append(out)
    elif method == "IFT":
        adapted = pipeline.adapt_ift(pretrained, shot, cfg, state.seed)
        out = state.output_dir / "adapted.json"
        save_model(adapted, out)
        outputs.append(out)
    else:
        for s in cfg.strategies:
            adapted = pipeline.adapt_ours(pretrained, shot, s, cfg, state.seed)
            out = state.output_dir / f"adapted_{s.name.lower()}.json"
            save_model(adapted, out)
            outputs.append(out)
    _write_run_manifest(
        state,
        "adapt",
        {
            "seed": state.seed,
            "model": str(model_path),
            "manifest": str(manifest_path),
            "sample": entry.sample_id,
            "method": method,
            "strategies": [s.name for s in cfg.strategies],
            "warmup_epochs": warmup_epochs,
            "finetune_epochs": finetune_epochs,
            "lr": lr,
        },
        outputs,
    )
    for out in outputs:
        click.echo(f"saved {out}")


@main.command("predict")
@click.option("--model", "model_path", required=True,
              type=click.Path(path_type=Path))
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(path_type=Path))
@click.option("--name", "out_name", default="predictions",
              show_default=True, help="Output subdirectory.")
@click.pass_obj
@_handled
def predict_cmd(state, model_path, manifest_path, out_name):
    """Segment every sample in a manifest with a trained model."""
    model = load_model(model_path)
    doc, base = _load_manifest(manifest_path)
    rows = []
    for entry in doc.entries:
        image = nifti.read_volume(base / entry.image_path)
        pred = predict(model, image)
        rows.append(
            (entry.sample_id, image, pred, manifest.Provenance.real())
        )
    outputs = _write_dataset(state.output_dir / out_name, rows)
    _write_run_manifest(
        state,
        "predict",
        {
            "model": str(model_path),
            "manifest": str(manifest_path),
            "name": out_name,
        },
        outputs,
    )
    click.echo(f"predicted {len(rows)} samples into {state.output_dir / out_name}")


@main.command("ensemble")
@click.option("--pred", "pred_paths", multiple=True, required=True,
              type=click.Path(path_type=Path),
              help="Prediction manifests to fuse (repeatable).")
@click.option("--name", "out_name", default="ensemble", show_default=True)
@click.pass_obj
@_handled
def ensemble_cmd(state, pred_paths, out_name):
    """Majority-vote fusion of prediction sets (ties go to foreground)."""
    if len(pred_paths) < 1:
        raise ValueError("need at least one prediction manifest")
    docs = [_load_manifest(p) for p in pred_paths]
    first, first_base = docs[0]
    rows = []
    for entry in first.entries:
        maps = []
        image = nifti.read_volume(first_base / entry.image_path)
        for doc, base in docs:
            match = [e for e in doc.entries if e.sample_id == entry.sample_id]
            if not match:
                raise ValueError(
                    f"sample {entry.sample_id!r} missing from one input"
                )
            _, labels = manifest.load_sample(match[0], base)
            maps.append(labels)
        fused = majority_vote(PredictionSet(tuple(maps)))
        rows.append((entry.sample_id, image, fused, manifest.Provenance.real()))
    outputs = _write_dataset(state.output_dir / out_name, rows)
    _write_run_manifest(
        state,
        "ensemble",
        {"pred": [str(p) for p in pred_paths], "name": out_name},
        outputs,
    )
    click.echo(f"fused {len(pred_paths)} prediction sets")


@main.command("dice")
@click.option("--pred", "pred_path", required=True,
              type=click.Path(path_type=Path))
@click.option("--truth", "truth_path", required=True,
              type=click.Path(path_type=Path))
@click.pass_obj
@_handled
def dice_cmd(state, pred_path, truth_path):
    """Dice table for predictions against reference labels."""
    pred_doc, pred_base = _load_manifest(pred_path)
    truth_doc, truth_base = _load_manifest(truth_path)
    truth_by_id = {e.sample_id: e for e in truth_doc.entries}
    scores = {}
    subjects = []
    tracts = None
    for entry in pred_doc.entries:
        if entry.sample_id not in truth_by_id:
            raise ValueError(f"no reference labels for {entry.sample_id!r}")
        _, pred_labels = manifest.load_sample(entry, pred_base)
        _, truth_labels = manifest.load_sample(
            truth_by_id[entry.sample_id], truth_base
        )
        tracts = truth_labels.names
        subjects.append(entry.sample_id)
        for tract in tracts:
            scores[(tract, entry.sample_id)] = metrics.dice(
                pred_labels.mask(tract), truth_labels.mask(tract)
            )
    report = metrics.aggregate(scores, tracts=tracts, subjects=subjects)
    doc = {
        "grand_mean": report.grand_mean,
        "per_tract_mean": report.per_tract_mean,
        "per_tract_per_subject": report.per_tract_per_subject,
    }
    out = state.output_dir / "dice.json"
    with open(out, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
    _write_run_manifest(
        state,
        "dice",
        {"pred": str(pred_path), "truth": str(truth_path)},
        [out],
    )
    for tract in report.tract_order:
        click.echo(f"{tract:<16}{report.per_tract_mean[tract]:.4f}")
    click.echo(f"{'mean':<16}{report.grand_mean:.4f}")


@main.group()
def experiment():
    """End-to-end protocol runs."""


@experiment.command("run")
@_spec_options
@click.option("--pretrain-subjects", type=int, default=10, show_default=True)
@click.option("--test-subjects", type=int, default=16, show_default=True)
@click.option("--hidden", type=int, default=32, show_default=True)
@click.option("--pretrain-epochs", type=int, default=40, show_default=True)
@click.option("--warmup-epochs", type=int, default=15, show_default=True)
@click.option("--finetune-epochs", type=int, default=15, show_default=True)
@click.option("--batch-size", type=int, default=2048, show_default=True)
@click.option("--steps-per-volume", type=int, default=4, show_default=True)
@click.option("--synthetic-count", type=int, default=None,
              help="Synthetic samples per strategy; default min(2^N-1, 100).")
@click.option("--seeds", "n_seeds", type=int, default=20, show_default=True,
              help="Master seeds, consecutive from --seed.")
@click.option("--report", "report_name", default="study.json",
              show_default=True)
@click.pass_obj
@_handled
def experiment_run(state, dims, existing, novel, noise, pretrain_subjects,
                   test_subjects, hidden, pretrain_epochs, warmup_epochs,
                   finetune_epochs, batch_size, steps_per_volume,
                   synthetic_count, n_seeds, report_name):
    """Run the full pretrain/adapt/evaluate comparison over many seeds."""
    base = pipeline.ExperimentConfig()

    def stage(tpl, epochs):
        return replace(
            tpl,
            epochs=epochs,
            batch_size=batch_size,
            steps_per_volume=steps_per_volume,
        )
    cfg = pipeline.ExperimentConfig(
        phantom=PhantomSpec(
            dims=tuple(dims),
            n_existing_tracts=existing,
            n_novel_tracts=novel,
            noise_sigma=noise,
        ),
        n_pretrain=pretrain_subjects,
        n_test=test_subjects,
        hidden_size=hidden,
        pretrain=stage(base.pretrain, pretrain_epochs),
        warmup=stage(base.warmup, warmup_epochs),
        finetune=stage(base.finetune, finetune_epochs),
        synthetic_count=synthetic_count,
    )
    seeds = range(state.seed, state.seed + n_seeds)
    study = pipeline.run_study(cfg, seeds, threads=state.threads)
    out = state.output_dir / report_name
    pipeline.write_study_report(study, out)
    _write_run_manifest(
        state,
        "experiment run",
        {
            "seed": state.seed,
            "seeds": n_seeds,
            "dims": list(dims),
            "existing": existing,
            "novel": novel,
            "noise": noise,
            "pretrain_subjects": pretrain_subjects,
            "test_subjects": test_subjects,
            "hidden": hidden,
            "pretrain_epochs": pretrain_epochs,
            "warmup_epochs": warmup_epochs,
            "finetune_epochs": finetune_epochs,
            "batch_size": batch_size,
            "steps_per_volume": steps_per_volume,
            "synthetic_count": synthetic_count,
            "report": report_name,
        },
        [out],
    )
    click.echo(pipeline.format_study_table(study), nl=False)
    click.echo(f"report: {out}")


if __name__ == "__main__":
    main()
