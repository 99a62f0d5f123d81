"""Exit-gate checks for the shipped guarantees.

Each test covers one guarantee end to end, against an oracle computed
independently inside this file, and prints a single PASS/FAIL line
(visible with -s; `pytest -v` adds its own line per test). Budgets are
wall-clock on a single core, after the session-wide kernel warmup.
"""

import math
import time
from dataclasses import replace

import mpmath
import numpy as np
import pytest

from tractaug.augment import (
    AugmentationPlan,
    Strategy,
    apply_cutout,
    box_to_mask,
    default_count,
    generate_dataset,
    sample_lambda,
    subset_to_mask,
)
from tractaug.ensemble import PredictionSet, majority_vote
from tractaug.metrics import dice, paired_t_test
from tractaug.model import (
    SegmenterModel,
    TrainConfig,
    bce_loss,
    bce_loss_and_grads,
    init_model,
)
from tractaug.phantom import PhantomSpec
from tractaug.pipeline import (
    ExperimentConfig,
    adapt_ift,
    adapt_ours,
    build_data,
    pretrain_model,
    run_study,
    write_study_report,
)
from tractaug.rng import make_rng
from tractaug.volume import (
    BinaryMask3D,
    Geometry,
    TractLabelMap,
    Volume3D,
)


def report(ok: bool, label: str, elapsed: float, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    extra = f" [{detail}]" if detail else ""
    print(f"{status} {label} ({elapsed:.2f}s){extra}")
    assert ok, f"{label}{extra}"


def geom(dims):
    return Geometry(tuple(dims), (1.0, 1.0, 1.0))


def test_01_cutout_equals_naive_triple_loop():
    rng = make_rng(1001)
    t0 = time.perf_counter()
    ok = True
    for _ in range(100):
        dims = tuple(int(d) for d in rng.integers(1, 17, size=3))
        g = geom(dims)
        x = Volume3D(g, rng.random(dims).astype(np.float32))
        m = BinaryMask3D(g, (rng.random(dims) < 0.3).astype(np.uint8))
        got = apply_cutout(x, m)
        want = np.empty(dims, dtype=np.float32)
        for i in range(dims[0]):
            for j in range(dims[1]):
                for k in range(dims[2]):
                    v = x.data[i, j, k]
                    want[i, j, k] = np.float32(0.0) if m.data[i, j, k] else v
        if got.data.tobytes() != want.tobytes():
            ok = False
            break
    elapsed = time.perf_counter() - t0
    report(ok and elapsed < 5.0, "01 cutout matches naive loop bit-exactly",
           elapsed)


def test_02_box_scale_statistics():
    rng = make_rng(1002)
    t0 = time.perf_counter()
    lams = np.array([sample_lambda(rng) for _ in range(100_000)])
    mean_lam = float(lams.mean())
    mean_width = float(((1.0 - lams) ** 1.5).mean())
    elapsed = time.perf_counter() - t0
    ok = abs(mean_lam - 0.5) <= 0.01 and abs(mean_width - 0.400) <= 0.01
    report(ok and elapsed < 5.0, "02 lambda draws: mean 0.5, (1-l)^1.5 0.400",
           elapsed, f"mean={mean_lam:.4f} width={mean_width:.4f}")


def test_03_ceiling_of_mean_equals_union():
    rng = make_rng(1003)
    t0 = time.perf_counter()
    ok = True
    for _ in range(1000):
        n = int(rng.integers(1, 7))
        dims = tuple(int(d) for d in rng.integers(1, 7, size=3))
        g = geom(dims)
        channels = tuple(
            (f"t{j}", BinaryMask3D(g, (rng.random(dims) < 0.4).astype(np.uint8)))
            for j in range(n)
        )
        labels = TractLabelMap(g, channels)
        bits = tuple(int(b) for b in rng.integers(0, 2, size=n))
        if sum(bits) == 0:
            bits = tuple(1 if j == 0 else b for j, b in enumerate(bits))
        from tractaug.augment import TractSubset

        got = subset_to_mask(labels, TractSubset(bits))
        chosen = [m.data for (_, m), b in zip(channels, bits) if b]
        want = np.ceil(np.mean(chosen, axis=0)).astype(np.uint8)
        if got.data.tobytes() != want.tobytes():
            ok = False
            break
    elapsed = time.perf_counter() - t0
    report(ok and elapsed < 10.0,
           "03 ceiling-of-mean equals boolean union", elapsed)


def _distinct_labels(g, n, rng):
    """n non-empty, pairwise distinct single-blob channels."""
    total = int(np.prod(g.dims))
    picks = rng.choice(total, size=n, replace=False)
    channels = []
    for j, flat in enumerate(picks):
        arr = np.zeros(g.dims, dtype=np.uint8)
        arr[np.unravel_index(int(flat), g.dims)] = 1
        channels.append((f"t{j}", BinaryMask3D(g, arr)))
    return TractLabelMap(g, tuple(channels))


def _sample_key(s):
    return (
        s.image.canonical_bytes(),
        tuple(m.canonical_bytes() for m in s.labels.masks),
    )


def test_04_dataset_count_and_distinctness():
    rng = make_rng(1004)
    t0 = time.perf_counter()
    g = geom((10, 10, 10))
    ok = True
    detail = ""
    for n in (1, 2, 3, 7, 12):
        x = Volume3D(g, (rng.random(g.dims) + 0.5).astype(np.float32))
        labels = _distinct_labels(g, n, rng)
        expected = min(2**n - 1, 100)
        assert default_count(n) == expected
        for strategy in Strategy:
            plan = AugmentationPlan(
                strategy=strategy, count=expected, master_seed=40 + n
            )
            samples = generate_dataset(x, labels, plan)
            keys = {_sample_key(s) for s in samples}
            if len(samples) != expected or len(keys) != expected:
                ok = False
                detail = f"N={n} {strategy.name}: {len(samples)}/{len(keys)}"
                break
        if not ok:
            break
    # three tracts: tract-cutout enumerates exactly the non-empty subsets
    if ok:
        x = Volume3D(g, (rng.random(g.dims) + 0.5).astype(np.float32))
        labels = _distinct_labels(g, 3, rng)
        plan = AugmentationPlan(strategy=Strategy.TC2, count=7, master_seed=99)
        samples = generate_dataset(x, labels, plan)
        seen = set()
        for s in samples:
            seen.add(tuple(s.provenance.bits))
            mask = subset_to_mask(labels, s.provenance)
            zeroed = s.image.data == 0
            if not np.array_equal(zeroed, mask.data.astype(bool)):
                ok = False
                detail = "image zeros do not match the subset mask"
                break
        want = {
            (a, b, c)
            for a in (0, 1)
            for b in (0, 1)
            for c in (0, 1)
            if a + b + c > 0
        }
        if seen != want:
            ok = False
            detail = f"subsets {sorted(seen)}"
    elapsed = time.perf_counter() - t0
    report(ok and elapsed < 30.0,
           "04 dataset size min(2^N-1,100), samples pairwise distinct",
           elapsed, detail)


def test_05_label_rules():
    rng = make_rng(1005)
    t0 = time.perf_counter()
    g = geom((8, 9, 7))
    ok = True
    for trial in range(25):
        x = Volume3D(g, (rng.random(g.dims) + 0.5).astype(np.float32))
        n = int(rng.integers(1, 5))
        channels = tuple(
            (f"t{j}", BinaryMask3D(g, (rng.random(g.dims) < 0.2).astype(np.uint8)))
            for j in range(n)
        )
        labels = TractLabelMap(g, channels)
        for strategy in Strategy:
            plan = AugmentationPlan(
                strategy=strategy, count=3, master_seed=500 + trial
            )
            try:
                samples = generate_dataset(x, labels, plan)
            except ValueError:
                continue  # degenerate draw (tiny subset space), not under test
            for s in samples:
                if strategy.uses_box:
                    mask = box_to_mask(s.provenance, g)
                else:
                    mask = subset_to_mask(labels, s.provenance)
                if strategy.keeps_labels:
                    same = all(
                        a.data.tobytes() == b.data.tobytes()
                        for a, b in zip(s.labels.masks, labels.masks)
                    )
                    ok = ok and same
                else:
                    for (_, orig), (_, got) in zip(channels, s.labels.channels):
                        want = np.empty(g.dims, dtype=np.uint8)
                        for i in range(g.dims[0]):
                            for j in range(g.dims[1]):
                                for k in range(g.dims[2]):
                                    want[i, j, k] = orig.data[i, j, k] * (
                                        1 - mask.data[i, j, k]
                                    )
                        ok = ok and got.data.tobytes() == want.tobytes()
            if not ok:
                break
        if not ok:
            break
    elapsed = time.perf_counter() - t0
    report(ok and elapsed < 10.0,
           "05 label rules: RC2/TC2 keep labels, RC1/TC1 mask them", elapsed)


def test_06_majority_vote_truth_table():
    t0 = time.perf_counter()
    g = geom((16, 1, 1))
    votes = np.array(
        [[(i >> k) & 1 for i in range(16)] for k in range(4)], dtype=np.uint8
    )  # (4 models, 16 voxel patterns)
    maps = tuple(
        TractLabelMap(
            g, (("t", BinaryMask3D(g, votes[k].reshape(16, 1, 1))),)
        )
        for k in range(4)
    )
    fused = majority_vote(PredictionSet(maps))
    got = fused.mask("t").data.ravel()
    want = np.array(
        [1 if bin(i).count("1") >= 2 else 0 for i in range(16)], dtype=np.uint8
    )
    ok = np.array_equal(got, want)
    rng = make_rng(1006)
    for _ in range(100):
        order = rng.permutation(4)
        shuffled = majority_vote(PredictionSet(tuple(maps[i] for i in order)))
        ok = ok and np.array_equal(shuffled.mask("t").data.ravel(), want)
    elapsed = time.perf_counter() - t0
    report(ok and elapsed < 1.0,
           "06 majority vote matches 16-case table, ties to 1, order-free",
           elapsed)


def test_07_metric_identities_and_t_test():
    t0 = time.perf_counter()
    g = geom((4, 4, 4))
    a = np.zeros(g.dims, dtype=np.uint8)
    a[0, 0, :4] = 1
    b = np.zeros(g.dims, dtype=np.uint8)
    b[0, 0, 2:4] = 1
    b[0, 1, 0:2] = 1  # |A|=4, |B|=4, |A ^ B| = 2
    ok = dice(BinaryMask3D(g, a), BinaryMask3D(g, a)) == 1.0
    disjoint = np.zeros(g.dims, dtype=np.uint8)
    disjoint[3, 3, :4] = 1
    ok = ok and dice(BinaryMask3D(g, a), BinaryMask3D(g, disjoint)) == 0.0
    ok = ok and dice(BinaryMask3D(g, a), BinaryMask3D(g, b)) == 0.5

    mpmath.mp.dps = 50
    rng = make_rng(1007)
    worst = 0.0
    for n in (3, 10, 30):
        for _ in range(10):
            x = rng.standard_normal(n) + 0.3
            y = rng.standard_normal(n)
            t, p = paired_t_test(x, y)
            d = x - y
            t_ref = float(
                d.mean() / (d.std(ddof=1) / math.sqrt(n))
            )
            ok = ok and abs(t - t_ref) < 1e-10
            df = n - 1
            x_beta = df / (df + t_ref * t_ref)
            p_ref = float(
                mpmath.betainc(df / 2, mpmath.mpf(1) / 2, 0, x_beta,
                               regularized=True)
            )
            worst = max(worst, abs(p - p_ref))
            ok = ok and abs(p - p_ref) < 1e-6
    elapsed = time.perf_counter() - t0
    report(ok and elapsed < 5.0,
           "07 dice identities and t-test p vs incomplete beta",
           elapsed, f"max |dp|={worst:.2e}")


def test_08_gradients_match_central_differences():
    t0 = time.perf_counter()
    h = 1e-5
    worst = 0.0
    for trial in range(20):
        rng = make_rng(1008, trial)
        f = int(rng.integers(2, 6))
        hid = int(rng.integers(2, 5))
        t = int(rng.integers(1, 4))
        model = init_model(
            hid,
            tuple(f"t{i}" for i in range(t)),
            rng,
            feature_names=tuple(f"f{i}" for i in range(f)),
        )
        feats = rng.standard_normal((4, f))
        targets = (rng.random((4, t)) < 0.5).astype(np.float64)
        _, grads = bce_loss_and_grads(model, feats, targets, "all")
        for name in ("w1", "b1", "w2", "b2"):
            base = np.array(getattr(model, name))
            it = np.nditer(base, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                plus = base.copy()
                plus[idx] += h
                minus = base.copy()
                minus[idx] -= h

                def patched(arr):
                    fields = {
                        "w1": model.w1,
                        "b1": model.b1,
                        "w2": model.w2,
                        "b2": model.b2,
                    }
                    fields[name] = arr
                    return SegmenterModel(
                        tract_names=model.tract_names,
                        feature_names=model.feature_names,
                        **fields,
                    )

                fd = (
                    bce_loss(patched(plus), feats, targets)
                    - bce_loss(patched(minus), feats, targets)
                ) / (2 * h)
                an = float(grads[name][idx])
                rel = abs(an - fd) / max(abs(an), abs(fd), 1e-8)
                worst = max(worst, rel)
    elapsed = time.perf_counter() - t0
    report(worst < 1e-4 and elapsed < 10.0,
           "08 analytic gradients vs central differences",
           elapsed, f"max rel err {worst:.2e}")


def test_09_warmup_freezes_features_in_both_paths():
    t0 = time.perf_counter()
    cfg = ExperimentConfig(
        phantom=PhantomSpec(
            dims=(20, 20, 20),
            n_existing_tracts=2,
            n_novel_tracts=2,
            radius_range=(1.3, 2.0),
        ),
        n_pretrain=2,
        n_test=1,
        hidden_size=8,
        pretrain=TrainConfig(epochs=2, lr=0.02, batch_size=512,
                             steps_per_volume=2),
        warmup=TrainConfig(epochs=3, lr=0.02, batch_size=512,
                           steps_per_volume=2),
        finetune=TrainConfig(epochs=0, lr=0.01, batch_size=512,
                             steps_per_volume=2),
    )
    splits = build_data(cfg, 11)
    pretrained = pretrain_model(cfg, splits.pretrain, 11)
    ref = pretrained.feature_bytes()
    ift = adapt_ift(pretrained, splits.one_shot, cfg, 11)
    ok = ift.feature_bytes() == ref
    for strategy in (Strategy.RC1, Strategy.TC2):
        ours = adapt_ours(pretrained, splits.one_shot, strategy, cfg, 11)
        ok = ok and ours.feature_bytes() == ref
        # the head did train
        ok = ok and ours.w2.tobytes() != pretrained.w2.tobytes()
    elapsed = time.perf_counter() - t0
    report(ok and elapsed < 30.0,
           "09 head-only warmup leaves features bit-identical (IFT, OURS)",
           elapsed)


@pytest.fixture(scope="module")
def default_study():
    cfg = ExperimentConfig()
    t0 = time.perf_counter()
    study = run_study(cfg, range(20), threads=1)
    elapsed = time.perf_counter() - t0
    return cfg, study, elapsed


def test_10_end_to_end_ordering(default_study):
    _, study, elapsed = default_study
    m = study.method_means
    ordered = m["Ours"] > m["IFT"] > m["CFT"]
    p_cft = study.tests["ours_vs_cft"][1]
    p_ift = study.tests["ours_vs_ift"][1]
    significant = p_cft < 0.05 and p_ift < 0.05
    strategies_beat_ift = all(
        m[s] > m["IFT"] for s in ("RC1", "RC2", "TC1", "TC2")
    )
    ok = ordered and significant and strategies_beat_ift
    budget = elapsed < 15 * 60  # single-core run of the 4-core budget
    detail = (
        f"Ours={m['Ours']:.3f} IFT={m['IFT']:.3f} CFT={m['CFT']:.3f} "
        f"p={p_cft:.1e}/{p_ift:.1e}"
    )
    report(ok and budget, "10 ordering Ours>IFT>CFT over 20 seeds", elapsed,
           detail)


def test_11_report_bytes_independent_of_threads(default_study, tmp_path):
    cfg, study, _ = default_study
    t0 = time.perf_counter()
    again = run_study(cfg, range(20), threads=2)
    elapsed = time.perf_counter() - t0
    p1 = tmp_path / "study_t1.json"
    p2 = tmp_path / "study_t2.json"
    write_study_report(study, p1)
    write_study_report(again, p2)
    ok = p1.read_bytes() == p2.read_bytes()
    report(ok, "11 rerun with different --threads is byte-identical", elapsed)
