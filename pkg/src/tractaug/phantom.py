"""Synthetic tube phantoms standing in for annotated tract scans.

Each tract is a smooth polynomial curve spanning the volume along one
axis, rasterized as a tube of fixed radius. The image is a constant
background plus one additive intensity bump per tract (crossings add
up) plus Gaussian noise. Tract shape templates depend only on the spec
seed; subjects differ by control-point jitter and noise, both derived
from the subject seed, so any (spec, subject_seed) pair is bit
reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import tube_mask
from .rng import make_rng
from .volume import BinaryMask3D, Geometry, TractLabelMap, Volume3D

BACKGROUND_LEVEL = 0.1
_BUMP_BASE = 0.8
_BUMP_STEP = 0.08
_JITTER_SIGMA = 1.5
_MARGIN = 0.15  # off-axis control points keep this fraction off the faces


class PhantomError(ValueError):
    """A requested tract could not be placed inside the volume."""


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple[int, int, int] = (48, 48, 48)
    n_existing_tracts: int = 6
    n_novel_tracts: int = 4
    radius_range: tuple[float, float] = (1.5, 2.5)
    control_points: int = 4
    noise_sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.n_existing_tracts < 1 or self.n_novel_tracts < 1:
            raise ValueError("tract counts must be >= 1")
        lo, hi = self.radius_range
        if lo < 1.0 or hi < lo:
            raise ValueError("radius range must satisfy 1 <= lo <= hi")
        if self.control_points < 2:
            raise ValueError("need at least 2 control points")
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be >= 0")
        if len(self.dims) != 3 or any(d < 4 for d in self.dims):
            raise ValueError("dims must be 3 axes of at least 4 voxels")

    @property
    def existing_names(self) -> tuple[str, ...]:
        return tuple(f"existing_{i}" for i in range(self.n_existing_tracts))

    @property
    def novel_names(self) -> tuple[str, ...]:
        return tuple(f"novel_{i}" for i in range(self.n_novel_tracts))

    @property
    def all_names(self) -> tuple[str, ...]:
        return self.existing_names + self.novel_names


@dataclass(frozen=True)
class PhantomSample:
    image: Volume3D
    labels: TractLabelMap
    subject_id: str


@dataclass(frozen=True)
class _TractTemplate:
    name: str
    control_points: np.ndarray  # (K, 3)
    radius: float
    bump: float


def _build_template(spec: PhantomSpec, index: int, name: str) -> _TractTemplate:
    rng = make_rng(spec.seed, "template", name)
    axis = int(rng.integers(3))
    k = spec.control_points
    dims = np.asarray(spec.dims, dtype=np.float64)
    pts = np.empty((k, 3))
    for i in range(k):
        along = i / (k - 1) * (dims[axis] - 1)
        for ax in range(3):
            if ax == axis:
                pts[i, ax] = along
            else:
                lo = _MARGIN * dims[ax]
                hi = (1 - _MARGIN) * dims[ax]
                pts[i, ax] = rng.uniform(lo, hi)
    radius = float(rng.uniform(*spec.radius_range))
    bump = _BUMP_BASE + _BUMP_STEP * index
    return _TractTemplate(name, pts, radius, bump)


def _templates(spec: PhantomSpec) -> tuple[_TractTemplate, ...]:
    return tuple(
        _build_template(spec, i, name)
        for i, name in enumerate(spec.all_names)
    )


def _curve_points(control: np.ndarray, n_samples: int) -> np.ndarray:
    """Interpolating polynomial through the control points."""
    k = len(control)
    u = np.linspace(0.0, 1.0, k)
    us = np.linspace(0.0, 1.0, n_samples)
    pts = np.empty((n_samples, 3))
    for ax in range(3):
        coeffs = np.polynomial.polynomial.polyfit(u, control[:, ax], k - 1)
        pts[:, ax] = np.polynomial.polynomial.polyval(us, coeffs)
    return pts


def _tract_mask(spec, template, subject_seed) -> np.ndarray:
    rng = make_rng(spec.seed, "jitter", subject_seed, template.name)
    jitter = rng.normal(0.0, _JITTER_SIGMA, size=template.control_points.shape)
    control = template.control_points + jitter
    upper = np.asarray(spec.dims, dtype=np.float64) - 1.0
    control = np.clip(control, 0.0, upper)
    n_samples = 4 * max(spec.dims)
    pts = _curve_points(control, n_samples)
    mask = tube_mask(spec.dims, pts, template.radius)
    if not mask.any():
        raise PhantomError(
            f"tract {template.name!r} fell outside the volume "
            f"(seed {spec.seed}, subject {subject_seed})"
        )
    return mask


def generate_phantom(
    spec: PhantomSpec, subject_seed: int, tracts: str = "all"
) -> PhantomSample:
    """One synthetic subject; `tracts` picks which labels to attach.

    The image always contains every tract's intensity bump; `tracts`
    ("all", "existing", or "novel") only selects the annotation
    channels, the way a scan shows all anatomy but comes annotated for
    some structures only.
    """
    if tracts not in ("all", "existing", "novel"):
        raise ValueError(f"tracts must be all|existing|novel, got {tracts!r}")
    geometry = Geometry(dims=tuple(spec.dims))
    img = np.full(spec.dims, BACKGROUND_LEVEL, dtype=np.float64)
    masks: dict[str, np.ndarray] = {}
    for template in _templates(spec):
        m = _tract_mask(spec, template, subject_seed)
        masks[template.name] = m
        img += template.bump * m
    if spec.noise_sigma > 0:
        noise_rng = make_rng(spec.seed, "noise", subject_seed)
        img += spec.noise_sigma * noise_rng.standard_normal(spec.dims)
    if tracts == "existing":
        names = spec.existing_names
    elif tracts == "novel":
        names = spec.novel_names
    else:
        names = spec.all_names
    labels = TractLabelMap(
        geometry,
        tuple((n, BinaryMask3D(geometry, masks[n])) for n in names),
    )
    return PhantomSample(
        image=Volume3D(geometry, img.astype(np.float32)),
        labels=labels,
        subject_id=f"subject_{subject_seed:016x}",
    )


@dataclass(frozen=True)
class PhantomSplits:
    pretrain: tuple[PhantomSample, ...]
    one_shot: PhantomSample
    test: tuple[PhantomSample, ...]


def generate_splits(
    spec: PhantomSpec,
    n_pretrain: int,
    n_test: int,
    rng: np.random.Generator,
) -> PhantomSplits:
    """Disjoint pretrain/one-shot/test subjects.

    Pretrain subjects carry existing-tract labels; the one-shot and
    test subjects carry novel-tract labels. The one-shot subject doubles
    as the validation scan during adaptation.
    """
    if n_pretrain < 1 or n_test < 1:
        raise ValueError("need at least one pretrain and one test subject")
    total = n_pretrain + 1 + n_test
    seeds: list[int] = []
    seen = set()
    while len(seeds) < total:
        s = int(rng.integers(0, 2**63))
        if s not in seen:
            seen.add(s)
            seeds.append(s)
    pre = tuple(
        generate_phantom(spec, s, tracts="existing")
        for s in seeds[:n_pretrain]
    )
    one = generate_phantom(spec, seeds[n_pretrain], tracts="novel")
    test = tuple(
        generate_phantom(spec, s, tracts="novel")
        for s in seeds[n_pretrain + 1 :]
    )
    return PhantomSplits(pretrain=pre, one_shot=one, test=test)
