"""Majority-vote fusion of binary per-tract predictions.

A voxel's tract label is 1 when at least half the models vote 1, so
exact ties (even model counts) resolve to 1. Voting happens on binary
maps; probability averaging is deliberately not offered.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .volume import BinaryMask3D, GeometryMismatchError, TractLabelMap


@dataclass(frozen=True)
class PredictionSet:
    predictions: tuple[TractLabelMap, ...]

    def __post_init__(self):
        if not self.predictions:
            raise ValueError("need at least one prediction")
        first = self.predictions[0]
        for p in self.predictions[1:]:
            if p.geometry != first.geometry:
                raise GeometryMismatchError(
                    "predictions disagree on geometry"
                )
            if p.names != first.names:
                raise ValueError(
                    f"predictions disagree on channels: "
                    f"{p.names} vs {first.names}"
                )

    def __len__(self):
        return len(self.predictions)


def majority_vote(p: PredictionSet) -> TractLabelMap:
    """Per voxel per tract: 1 iff the 1-votes reach K/2 (ties go to 1)."""
    k = len(p)
    first = p.predictions[0]
    channels = []
    for name in first.names:
        votes = np.zeros(first.geometry.dims, dtype=np.int64)
        for pred in p.predictions:
            votes += pred.mask(name).data
        fused = (2 * votes >= k).astype(np.uint8)
        channels.append((name, BinaryMask3D(first.geometry, fused)))
    return TractLabelMap(first.geometry, tuple(channels))
