"""Pretrain, adapt, evaluate: the one-shot transfer protocol.

Three adaptation routes start from the same pretrained feature
extractor and the same fresh head:

  CFT   all weights on the real one-shot sample, one stage
  IFT   head-only warmup on the real sample, then all weights
  OURS  head-only warmup on masked synthetic samples (plus the real
        one), then all weights on the real sample only

OURS runs once per masking strategy; the final prediction is the
majority vote across the four per-strategy models. All randomness
descends from one master seed, so a run is reproducible bit for bit,
and study aggregation uses order-independent sums so the report does
not depend on worker scheduling.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .augment import AugmentationPlan, Strategy, default_count, generate_dataset
from .ensemble import PredictionSet, majority_vote
from .features import extract_features
from .metrics import DiceReport, aggregate, dice, paired_t_test
from .model import (
    SegmenterModel,
    TrainConfig,
    TrainingExample,
    forward,
    init_model,
    predict,
    reinit_head,
    train,
)
from .phantom import PhantomSample, PhantomSpec, PhantomSplits, generate_splits
from .rng import make_rng, mix
from .volume import BinaryMask3D, TractLabelMap

REPORT_VERSION = 1

# row order in reports; Ours is the strategy-ensemble column
METHOD_ORDER = ("CFT", "IFT", "RC1", "RC2", "TC1", "TC2", "Ours")


class AdaptationStrategy(Enum):
    CFT = "CFT"
    IFT = "IFT"
    OURS = "OURS"


@dataclass(frozen=True)
class ExperimentConfig:
    """Desk-scale defaults: a full run fits in well under a minute."""

    phantom: PhantomSpec = PhantomSpec()
    n_pretrain: int = 10
    n_test: int = 16
    hidden_size: int = 32
    # stage templates; the pipeline sets trainable and seed itself
    pretrain: TrainConfig = field(
        default_factory=lambda: TrainConfig(
            epochs=40, lr=0.02, batch_size=2048, steps_per_volume=4
        )
    )
    warmup: TrainConfig = field(
        default_factory=lambda: TrainConfig(
            epochs=15, lr=0.02, batch_size=2048, steps_per_volume=4
        )
    )
    finetune: TrainConfig = field(
        default_factory=lambda: TrainConfig(
            epochs=15, lr=0.01, batch_size=2048, steps_per_volume=4
        )
    )
    strategies: tuple[Strategy, ...] = (
        Strategy.RC1,
        Strategy.RC2,
        Strategy.TC1,
        Strategy.TC2,
    )
    synthetic_count: int | None = None  # None: min(2^N - 1, 100)
    warmup_includes_real: bool = True
    master_seed: int = 0

    def __post_init__(self):
        if self.n_pretrain < 1 or self.n_test < 1:
            raise ValueError("need at least one pretrain and one test subject")
        if self.hidden_size < 1:
            raise ValueError("hidden_size must be >= 1")
        if not self.strategies:
            raise ValueError("need at least one masking strategy")
        if len(set(self.strategies)) != len(self.strategies):
            raise ValueError("duplicate strategies")
        if self.synthetic_count is not None and self.synthetic_count < 1:
            raise ValueError("synthetic_count must be >= 1 when given")


def _stage(template: TrainConfig, trainable: str, seed: int) -> TrainConfig:
    return replace(template, trainable=trainable, seed=seed)


def _example(sample: PhantomSample) -> TrainingExample:
    return TrainingExample.from_volume(sample.image, sample.labels)


def build_data(config: ExperimentConfig, master_seed: int) -> PhantomSplits:
    """Phantom population for one master seed.

    Tract geometry is re-drawn per master seed (the template seed is
    derived from it), so repeated runs test different anatomies.
    """
    spec = replace(config.phantom, seed=mix(master_seed, "templates"))
    rng = make_rng(master_seed, "subjects")
    return generate_splits(spec, config.n_pretrain, config.n_test, rng)


def pretrain_model(
    config: ExperimentConfig,
    pretrain_samples,
    master_seed: int,
) -> SegmenterModel:
    """Supervised pretraining on existing tracts; final-epoch weights."""
    samples = list(pretrain_samples)
    model = init_model(
        config.hidden_size,
        samples[0].labels.names,
        make_rng(master_seed, "init"),
    )
    cfg = _stage(config.pretrain, "all", mix(master_seed, "pretrain"))
    return train(model, [_example(s) for s in samples], cfg).model


def _fresh_head(
    pretrained: SegmenterModel, tract_names, master_seed: int
) -> SegmenterModel:
    # one shared head init for every adaptation route, so routes differ
    # only in how they train, not where they start
    return reinit_head(pretrained, tract_names, make_rng(master_seed, "head_init"))


def adapt_cft(
    pretrained: SegmenterModel,
    one_shot: PhantomSample,
    config: ExperimentConfig,
    master_seed: int,
) -> SegmenterModel:
    """Conventional fine-tuning: all weights at once on the real sample.

    Gets the combined warmup+finetune epoch budget so every route sees
    the same number of updates.
    """
    model = _fresh_head(pretrained, one_shot.labels.names, master_seed)
    real = _example(one_shot)
    cfg = _stage(config.finetune, "all", mix(master_seed, "cft"))
    cfg = replace(cfg, epochs=config.warmup.epochs + config.finetune.epochs)
    return train(model, [real], cfg, validation=real).model


def adapt_ift(
    pretrained: SegmenterModel,
    one_shot: PhantomSample,
    config: ExperimentConfig,
    master_seed: int,
) -> SegmenterModel:
    """Two-stage fine-tuning: head-only warmup, then all weights."""
    model = _fresh_head(pretrained, one_shot.labels.names, master_seed)
    real = _example(one_shot)
    warm = _stage(config.warmup, "head_only", mix(master_seed, "ift", "warm"))
    model = train(model, [real], warm, validation=real).model
    fine = _stage(config.finetune, "all", mix(master_seed, "ift", "fine"))
    return train(model, [real], fine, validation=real).model


def synthetic_examples(
    one_shot: PhantomSample,
    strategy: Strategy,
    config: ExperimentConfig,
    master_seed: int,
):
    count = config.synthetic_count
    if count is None:
        count = default_count(len(one_shot.labels))
    plan = AugmentationPlan(
        strategy=strategy,
        count=count,
        master_seed=mix(master_seed, "aug", strategy.value),
    )
    samples = generate_dataset(one_shot.image, one_shot.labels, plan)
    return [TrainingExample.from_volume(s.image, s.labels) for s in samples]


def adapt_ours(
    pretrained: SegmenterModel,
    one_shot: PhantomSample,
    strategy: Strategy,
    config: ExperimentConfig,
    master_seed: int,
) -> SegmenterModel:
    """Masked-augmentation warmup, then all-weights on the real sample."""
    model = _fresh_head(pretrained, one_shot.labels.names, master_seed)
    real = _example(one_shot)
    warm_set = synthetic_examples(one_shot, strategy, config, master_seed)
    if config.warmup_includes_real:
        warm_set = warm_set + [real]
    warm = _stage(
        config.warmup, "head_only", mix(master_seed, "ours", strategy.value, "warm")
    )
    model = train(model, warm_set, warm, validation=real).model
    fine = _stage(
        config.finetune, "all", mix(master_seed, "ours", strategy.value, "fine")
    )
    return train(model, [real], fine, validation=real).model


def _predict_from_features(model, features, geometry, names) -> TractLabelMap:
    probs = forward(model, features)
    channels = tuple(
        (
            name,
            BinaryMask3D(
                geometry,
                (probs[:, t] >= 0.5).astype(np.uint8).reshape(geometry.dims),
            ),
        )
        for t, name in enumerate(names)
    )
    return TractLabelMap(geometry, channels)


def score_predictions(predictions: dict[str, TractLabelMap], truths) -> DiceReport:
    """predictions: subject_id -> label map; truths: matching samples."""
    scores = {}
    for sample in truths:
        pred = predictions[sample.subject_id]
        for name in sample.labels.names:
            scores[(name, sample.subject_id)] = dice(
                pred.mask(name), sample.labels.mask(name)
            )
    return aggregate(
        scores,
        tracts=truths[0].labels.names,
        subjects=tuple(s.subject_id for s in truths),
    )


@dataclass(frozen=True)
class ExperimentResult:
    master_seed: int
    reports: dict[str, DiceReport]  # keyed by METHOD_ORDER names
    tests: dict[str, tuple[float, float]]  # (t, p) per comparison

    def grand_means(self) -> dict[str, float]:
        return {m: self.reports[m].grand_mean for m in METHOD_ORDER}


def run_experiment(
    config: ExperimentConfig, master_seed: int | None = None
) -> ExperimentResult:
    """One full protocol run on a fresh phantom population."""
    if master_seed is None:
        master_seed = config.master_seed
    splits = build_data(config, master_seed)
    pretrained = pretrain_model(config, splits.pretrain, master_seed)
    one_shot = splits.one_shot

    models: dict[str, SegmenterModel] = {}
    models["CFT"] = adapt_cft(pretrained, one_shot, config, master_seed)
    models["IFT"] = adapt_ift(pretrained, one_shot, config, master_seed)
    for strategy in config.strategies:
        models[strategy.name] = adapt_ours(
            pretrained, one_shot, strategy, config, master_seed
        )

    # features per test subject are extracted once and shared
    names = one_shot.labels.names
    predictions: dict[str, dict[str, TractLabelMap]] = {
        m: {} for m in models
    }
    ensemble_pred: dict[str, TractLabelMap] = {}
    for sample in splits.test:
        feats = extract_features(sample.image)
        for method, model in models.items():
            predictions[method][sample.subject_id] = _predict_from_features(
                model, feats, sample.image.geometry, names
            )
        member_maps = tuple(
            predictions[s.name][sample.subject_id] for s in config.strategies
        )
        ensemble_pred[sample.subject_id] = majority_vote(
            PredictionSet(member_maps)
        )

    reports = {
        method: score_predictions(predictions[method], splits.test)
        for method in models
    }
    reports["Ours"] = score_predictions(ensemble_pred, splits.test)

    subjects = reports["Ours"].subject_order
    per_subject = {
        m: [r.per_subject_mean(s) for s in subjects]
        for m, r in reports.items()
    }
    tests = {
        "ours_vs_cft": paired_t_test(per_subject["Ours"], per_subject["CFT"]),
        "ours_vs_ift": paired_t_test(per_subject["Ours"], per_subject["IFT"]),
    }
    return ExperimentResult(master_seed=master_seed, reports=reports, tests=tests)


@dataclass(frozen=True)
class StudyResult:
    seeds: tuple[int, ...]
    per_seed: tuple[dict[str, float], ...]  # method -> grand mean, per seed
    method_means: dict[str, float]
    tests: dict[str, tuple[float, float]]


def _seed_worker(args) -> dict[str, float]:
    config, seed = args
    return run_experiment(config, seed).grand_means()


def run_study(
    config: ExperimentConfig, seeds, threads: int = 1
) -> StudyResult:
    """run_experiment per seed, aggregated across seeds.

    Results are keyed and ordered by seed, and cross-seed means use
    fsum, so the report bytes do not depend on `threads`.
    """
    seeds = tuple(int(s) for s in seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    if len(set(seeds)) != len(seeds):
        raise ValueError("duplicate seeds")
    if threads < 1:
        raise ValueError("threads must be >= 1")

    jobs = [(config, s) for s in seeds]
    if threads == 1 or len(seeds) == 1:
        per_seed = tuple(_seed_worker(j) for j in jobs)
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            per_seed = tuple(pool.map(_seed_worker, jobs))

    method_means = {
        m: math.fsum(row[m] for row in per_seed) / len(per_seed)
        for m in METHOD_ORDER
    }
    series = {m: [row[m] for row in per_seed] for m in METHOD_ORDER}
    if len(seeds) >= 2:
        tests = {
            "ours_vs_cft": paired_t_test(series["Ours"], series["CFT"]),
            "ours_vs_ift": paired_t_test(series["Ours"], series["IFT"]),
            "ift_vs_cft": paired_t_test(series["IFT"], series["CFT"]),
        }
    else:
        tests = {}  # a paired test needs at least two seeds
    return StudyResult(
        seeds=seeds,
        per_seed=per_seed,
        method_means=method_means,
        tests=tests,
    )


def study_report_dict(study: StudyResult) -> dict:
    """JSON-ready study summary; deterministic for fixed seeds."""
    return {
        "format_version": REPORT_VERSION,
        "seeds": list(study.seeds),
        "per_seed": [
            {m: row[m] for m in METHOD_ORDER} for row in study.per_seed
        ],
        "method_means": {m: study.method_means[m] for m in METHOD_ORDER},
        "tests": {
            name: {"t": t, "p": p}
            for name, (t, p) in sorted(study.tests.items())
        },
    }


def write_study_report(study: StudyResult, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(study_report_dict(study), f, indent=2, sort_keys=True)
        f.write("\n")


def format_study_table(study: StudyResult) -> str:
    """Fixed-width text summary of a study."""
    lines = []
    lines.append(f"{'method':<8}{'mean dice':>12}")
    for m in METHOD_ORDER:
        lines.append(f"{m:<8}{study.method_means[m]:>12.4f}")
    lines.append("")
    for name, (t, p) in sorted(study.tests.items()):
        lines.append(f"{name}: t={t:+.4f} p={p:.6f}")
    return "\n".join(lines) + "\n"
