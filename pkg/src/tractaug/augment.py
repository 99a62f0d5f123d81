"""Masking-based augmentation for one-shot tract segmentation.

Four strategies build synthetic training pairs from a single annotated
scan by zeroing out a region M of the image:

  RC1  random box, labels masked the same way (y * (1 - M))
  RC2  random box, labels kept verbatim
  TC1  union of a random tract subset, labels masked
  TC2  union of a random tract subset, labels kept verbatim

Box sampling: a shared lambda ~ U(0,1) sets the box extent per axis as
w_i = R_i * sqrt(1 - lambda); origins are uniform per axis. The
rasterized box is the voxel range [floor(r_i), min(floor(r_i + w_i),
R_i - 1)] per axis, empty when any w_i < 1, and clipped at the volume
bounds. Tract subsets are per-tract Bernoulli(0.5) bits with the empty
subset rejected and redrawn (it would reproduce the source scan, which
the no-duplicate rule forbids).

Dataset generation is deterministic: sample i draws from a PCG64 stream
seeded by mix(master_seed, strategy_id, i), with a fixed sampling order
(lambda, then r_x, r_y, r_z; subset bits in channel order). Duplicates
are detected by content hash and redrawn from the same stream.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .rng import mix
from .volume import (
    BinaryMask3D,
    Geometry,
    TractLabelMap,
    Volume3D,
    content_hash,
    mask_union,
    voxelwise_mask_apply,
)

COUNT_CAP = 100

# retries per sample index before declaring the input too degenerate to
# yield distinct samples
_RETRY_BUDGET = 1000


class Strategy(enum.Enum):
    RC1 = 1
    RC2 = 2
    TC1 = 3
    TC2 = 4

    @property
    def uses_box(self) -> bool:
        return self in (Strategy.RC1, Strategy.RC2)

    @property
    def keeps_labels(self) -> bool:
        """True when the sample keeps the source annotation verbatim."""
        return self in (Strategy.RC2, Strategy.TC2)

    @classmethod
    def from_name(cls, name: str) -> "Strategy":
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown strategy {name!r}") from None


class DegenerateInputError(ValueError):
    """Raised when the requested number of distinct samples is unreachable."""


@dataclass(frozen=True)
class BoxRegion:
    r: tuple[float, float, float]
    w: tuple[float, float, float]
    lam: float

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda out of range: {self.lam}")


@dataclass(frozen=True)
class TractSubset:
    bits: tuple[int, ...]

    def __post_init__(self):
        if not self.bits or not any(self.bits):
            raise ValueError("tract subset must select at least one tract")
        if any(b not in (0, 1) for b in self.bits):
            raise ValueError("subset bits must be 0 or 1")

    @classmethod
    def from_index(cls, k: int, n_tracts: int) -> "TractSubset":
        """Subset number k in canonical order: bit j-1 of k selects tract j."""
        if not 1 <= k <= 2**n_tracts - 1:
            raise ValueError(f"subset index {k} out of range for N={n_tracts}")
        return cls(tuple((k >> j) & 1 for j in range(n_tracts)))

    @property
    def index(self) -> int:
        return sum(b << j for j, b in enumerate(self.bits))


@dataclass(frozen=True)
class AugmentationPlan:
    strategy: Strategy
    count: int
    master_seed: int

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be >= 1")


@dataclass(frozen=True)
class SyntheticSample:
    image: Volume3D
    labels: TractLabelMap
    strategy: Strategy
    seed: int
    index: int
    provenance: BoxRegion | TractSubset

    def __post_init__(self):
        if self.strategy.uses_box != isinstance(self.provenance, BoxRegion):
            raise ValueError("provenance type does not match strategy family")


def default_count(n_tracts: int) -> int:
    """Samples per strategy: min(2^N - 1, 100) for N annotated tracts."""
    if n_tracts < 1:
        raise ValueError("need at least one tract")
    return min(2**n_tracts - 1, COUNT_CAP)


def sample_lambda(rng: np.random.Generator) -> float:
    # Beta(1,1) is the uniform distribution on [0,1)
    return float(rng.random())


def sample_box(geometry: Geometry, rng: np.random.Generator) -> BoxRegion:
    lam = sample_lambda(rng)
    r = tuple(float(rng.uniform(0.0, dim)) for dim in geometry.dims)
    scale = math.sqrt(1.0 - lam)
    w = tuple(dim * scale for dim in geometry.dims)
    return BoxRegion(r=r, w=w, lam=lam)


def box_to_mask(box: BoxRegion, geometry: Geometry) -> BinaryMask3D:
    arr = np.zeros(geometry.dims, dtype=np.uint8)
    if all(wi >= 1.0 for wi in box.w):
        lo = [math.floor(ri) for ri in box.r]
        hi = [
            min(math.floor(ri + wi), dim - 1)
            for ri, wi, dim in zip(box.r, box.w, geometry.dims)
        ]
        arr[lo[0] : hi[0] + 1, lo[1] : hi[1] + 1, lo[2] : hi[2] + 1] = 1
    return BinaryMask3D(geometry, arr)


def sample_tract_subset(
    n_tracts: int, rng: np.random.Generator
) -> TractSubset:
    if n_tracts < 1:
        raise ValueError("need at least one tract")
    while True:
        bits = tuple(int(rng.random() < 0.5) for _ in range(n_tracts))
        if any(bits):
            return TractSubset(bits)


def subset_to_mask(labels: TractLabelMap, a: TractSubset) -> BinaryMask3D:
    if len(a.bits) != len(labels):
        raise ValueError(
            f"subset length {len(a.bits)} != tract count {len(labels)}"
        )
    chosen = [m for bit, (_, m) in zip(a.bits, labels.channels) if bit]
    return mask_union(chosen)


def apply_cutout(x: Volume3D, m: BinaryMask3D) -> Volume3D:
    """Zero the masked region: x * (1 - m), elementwise."""
    return voxelwise_mask_apply(x, m)


def derive_labels(
    y: TractLabelMap, m: BinaryMask3D, strategy: Strategy
) -> TractLabelMap:
    if strategy.keeps_labels:
        return y
    # mask every channel, including tracts outside the chosen subset
    inv = 1 - m.data
    channels = tuple(
        (name, BinaryMask3D(y.geometry, mask.data * inv))
        for name, mask in y.channels
    )
    return TractLabelMap(y.geometry, channels)


def _build_sample(x, y, strategy, mask, provenance, seed, index):
    image = apply_cutout(x, mask)
    labels = derive_labels(y, mask, strategy)
    return SyntheticSample(
        image=image,
        labels=labels,
        strategy=strategy,
        seed=seed,
        index=index,
        provenance=provenance,
    )


def _sample_hash(s: SyntheticSample) -> tuple[int, int]:
    return (content_hash(s.image), content_hash(s.labels))


def _generate_tc_exhaustive(x, y, plan):
    n = len(y)
    samples = []
    seen = set()
    for i in range(plan.count):
        k = i + 1
        seed = mix(plan.master_seed, plan.strategy.value, i)
        subset = TractSubset.from_index(k, n)
        mask = subset_to_mask(y, subset)
        s = _build_sample(x, y, plan.strategy, mask, subset, seed, i)
        h = _sample_hash(s)
        if h in seen:
            raise DegenerateInputError(
                f"subsets {k} and an earlier one produce identical content; "
                f"cannot emit {plan.count} distinct samples"
            )
        seen.add(h)
        samples.append(s)
    return samples


def _generate_sampled(x, y, plan):
    n = len(y)
    geometry = x.geometry
    samples = []
    seen_hashes = set()
    seen_subsets = set()
    for i in range(plan.count):
        seed = mix(plan.master_seed, plan.strategy.value, i)
        rng = np.random.Generator(np.random.PCG64(seed))
        for _ in range(_RETRY_BUDGET):
            if plan.strategy.uses_box:
                provenance = sample_box(geometry, rng)
                mask = box_to_mask(provenance, geometry)
            else:
                provenance = sample_tract_subset(n, rng)
                if provenance.index in seen_subsets:
                    continue
                mask = subset_to_mask(y, provenance)
            s = _build_sample(x, y, plan.strategy, mask, provenance, seed, i)
            h = _sample_hash(s)
            if h in seen_hashes:
                if not plan.strategy.uses_box:
                    seen_subsets.add(provenance.index)
                continue
            seen_hashes.add(h)
            if not plan.strategy.uses_box:
                seen_subsets.add(provenance.index)
            samples.append(s)
            break
        else:
            raise DegenerateInputError(
                f"could not draw a distinct sample for index {i} within "
                f"{_RETRY_BUDGET} tries; input too degenerate for "
                f"{plan.count} distinct samples"
            )
    return samples


def generate_dataset(
    x: Volume3D, y: TractLabelMap, plan: AugmentationPlan
) -> list[SyntheticSample]:
    """Produce plan.count pairwise-distinct synthetic samples.

    Tract-cutout plans with 2^N - 1 <= 100 enumerate the non-empty
    subsets exhaustively in ascending bit-pattern order; larger tract
    counts draw subsets without replacement. Box plans redraw on the
    (in practice never observed) content-hash collision.
    """
    if x.geometry != y.geometry:
        raise ValueError("image and labels must share geometry")
    n = len(y)
    if n < 1:
        raise ValueError("need at least one tract channel")
    if not plan.strategy.uses_box:
        full = 2**n - 1
        if plan.count > full:
            raise DegenerateInputError(
                f"only {full} non-empty subsets exist for N={n}; "
                f"cannot emit {plan.count} distinct tract-cutout samples"
            )
        if full <= COUNT_CAP:
            return _generate_tc_exhaustive(x, y, plan)
    return _generate_sampled(x, y, plan)
