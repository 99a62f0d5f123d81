"""JSON dataset manifests tying sample ids to image and label files.

A manifest row points at one image volume and one label mask per tract,
with provenance saying whether the sample is a real scan or a synthetic
one (and if synthetic: which strategy, seed, and index produced it).
Paths are stored relative to the manifest file. Key order inside
label_paths is meaningful: it fixes the tract channel order.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .nifti import read_mask, read_volume
from .volume import TractLabelMap, Volume3D

FORMAT_VERSION = 1

STRATEGY_NAMES = ("RC1", "RC2", "TC1", "TC2")


class ManifestSchemaError(ValueError):
    pass


@dataclass(frozen=True)
class Provenance:
    kind: str  # "real" | "synthetic"
    strategy: str | None = None
    seed: int | None = None
    sample_index: int | None = None

    def __post_init__(self):
        if self.kind == "real":
            if (self.strategy, self.seed, self.sample_index) != (
                None,
                None,
                None,
            ):
                raise ManifestSchemaError(
                    "real provenance carries no strategy/seed/index"
                )
        elif self.kind == "synthetic":
            if self.strategy not in STRATEGY_NAMES:
                raise ManifestSchemaError(
                    f"synthetic strategy must be one of {STRATEGY_NAMES}, "
                    f"got {self.strategy!r}"
                )
            if not isinstance(self.seed, int) or isinstance(self.seed, bool):
                raise ManifestSchemaError("synthetic provenance needs a seed")
            if not isinstance(self.sample_index, int) or isinstance(
                self.sample_index, bool
            ):
                raise ManifestSchemaError(
                    "synthetic provenance needs a sample_index"
                )
        else:
            raise ManifestSchemaError(f"unknown provenance kind {self.kind!r}")

    @staticmethod
    def real() -> "Provenance":
        return Provenance(kind="real")

    @staticmethod
    def synthetic(strategy: str, seed: int, sample_index: int) -> "Provenance":
        return Provenance(
            kind="synthetic",
            strategy=strategy,
            seed=seed,
            sample_index=sample_index,
        )


@dataclass(frozen=True)
class ManifestEntry:
    sample_id: str
    image_path: str
    label_paths: tuple[tuple[str, str], ...]  # (tract name, path) in order
    provenance: Provenance

    def __post_init__(self):
        if not self.sample_id:
            raise ManifestSchemaError("sample_id must be non-empty")
        names = [n for n, _ in self.label_paths]
        if len(set(names)) != len(names):
            raise ManifestSchemaError(
                f"{self.sample_id}: duplicate tract names in label_paths"
            )
        for name, p in self.label_paths:
            if not p:
                raise ManifestSchemaError(
                    f"{self.sample_id}: empty path for tract {name!r}"
                )

    @property
    def tract_names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.label_paths)


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...] = ()
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        if self.format_version != FORMAT_VERSION:
            raise ManifestSchemaError(
                f"unsupported format_version {self.format_version}"
            )
        ids = [e.sample_id for e in self.entries]
        dupes = {i for i in ids if ids.count(i) > 1}
        if dupes:
            raise ManifestSchemaError(f"duplicate sample_ids: {sorted(dupes)}")
        tract_sets = {e.tract_names for e in self.entries}
        if len(tract_sets) > 1:
            raise ManifestSchemaError(
                "entries disagree on tract names/order: "
                f"{sorted(tract_sets)}"
            )

    def __len__(self):
        return len(self.entries)

    @property
    def tract_names(self) -> tuple[str, ...]:
        if not self.entries:
            return ()
        return self.entries[0].tract_names


_ENTRY_FIELDS = {"sample_id", "image_path", "label_paths", "provenance"}
_PROV_FIELDS = {"kind", "strategy", "seed", "sample_index"}


def _entry_from_obj(obj) -> ManifestEntry:
    if not isinstance(obj, dict):
        raise ManifestSchemaError(f"entry must be an object, got {type(obj)}")
    unknown = set(obj) - _ENTRY_FIELDS
    if unknown:
        raise ManifestSchemaError(f"unknown entry fields: {sorted(unknown)}")
    missing = _ENTRY_FIELDS - set(obj)
    if missing:
        raise ManifestSchemaError(f"missing entry fields: {sorted(missing)}")
    prov_obj = obj["provenance"]
    if not isinstance(prov_obj, dict):
        raise ManifestSchemaError("provenance must be an object")
    unknown = set(prov_obj) - _PROV_FIELDS
    if unknown:
        raise ManifestSchemaError(
            f"unknown provenance fields: {sorted(unknown)}"
        )
    prov = Provenance(
        kind=prov_obj.get("kind"),
        strategy=prov_obj.get("strategy"),
        seed=prov_obj.get("seed"),
        sample_index=prov_obj.get("sample_index"),
    )
    labels = obj["label_paths"]
    if not isinstance(labels, dict):
        raise ManifestSchemaError("label_paths must be an object")
    return ManifestEntry(
        sample_id=obj["sample_id"],
        image_path=obj["image_path"],
        label_paths=tuple((str(k), str(v)) for k, v in labels.items()),
        provenance=prov,
    )


def _entry_to_obj(e: ManifestEntry) -> dict:
    prov: dict = {"kind": e.provenance.kind}
    if e.provenance.kind == "synthetic":
        prov["strategy"] = e.provenance.strategy
        prov["seed"] = e.provenance.seed
        prov["sample_index"] = e.provenance.sample_index
    return {
        "sample_id": e.sample_id,
        "image_path": e.image_path,
        "label_paths": dict(e.label_paths),
        "provenance": prov,
    }


def read_manifest(path) -> DatasetManifest:
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    if not isinstance(doc, dict):
        raise ManifestSchemaError("manifest root must be an object")
    unknown = set(doc) - {"format_version", "entries"}
    if unknown:
        raise ManifestSchemaError(f"unknown manifest fields: {sorted(unknown)}")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ManifestSchemaError(f"unsupported format_version {version!r}")
    entries = doc.get("entries")
    if not isinstance(entries, list):
        raise ManifestSchemaError("entries must be a list")
    return DatasetManifest(
        entries=tuple(_entry_from_obj(o) for o in entries),
        format_version=version,
    )


def write_manifest(m: DatasetManifest, path) -> None:
    doc = {
        "format_version": m.format_version,
        "entries": [_entry_to_obj(e) for e in m.entries],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")


def load_sample(
    entry: ManifestEntry, base_dir
) -> tuple[Volume3D, TractLabelMap]:
    """Read one manifest row's image and label masks from disk.

    Relative paths resolve against base_dir (the manifest's directory).
    """
    base = os.fspath(base_dir)
    image = read_volume(os.path.join(base, entry.image_path))
    channels = []
    for name, rel in entry.label_paths:
        mask = read_mask(os.path.join(base, rel))
        channels.append((name, mask))
    labels = TractLabelMap(image.geometry, tuple(channels))
    return image, labels
