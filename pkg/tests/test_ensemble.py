import itertools

import numpy as np
import pytest

from tractaug.ensemble import PredictionSet, majority_vote
from tractaug.volume import Geometry, GeometryMismatchError, TractLabelMap


def labelmap_from_bits(g, bits_by_tract):
    """One-voxel-per-entry label maps for truth-table style tests."""
    channels = []
    for name, bits in bits_by_tract.items():
        arr = np.array(bits, dtype=np.uint8).reshape(g.dims)
        channels.append((name, arr))
    return TractLabelMap.from_arrays(g, channels)


class TestPredictionSet:
    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            PredictionSet(())

    def test_rejects_geometry_mismatch(self):
        a = labelmap_from_bits(Geometry(dims=(1, 1, 1)), {"t": [1]})
        b = labelmap_from_bits(Geometry(dims=(1, 1, 2)), {"t": [1, 0]})
        with pytest.raises(GeometryMismatchError):
            PredictionSet((a, b))

    def test_rejects_channel_mismatch(self):
        g = Geometry(dims=(1, 1, 1))
        a = labelmap_from_bits(g, {"t": [1]})
        b = labelmap_from_bits(g, {"u": [1]})
        with pytest.raises(ValueError):
            PredictionSet((a, b))


class TestMajorityVote:
    def test_k4_full_truth_table(self):
        # all 16 vote patterns in one 16-voxel volume
        g = Geometry(dims=(16, 1, 1))
        patterns = list(itertools.product([0, 1], repeat=4))
        maps = []
        for model in range(4):
            bits = [p[model] for p in patterns]
            maps.append(labelmap_from_bits(g, {"t": bits}))
        fused = majority_vote(PredictionSet(tuple(maps)))
        got = fused.mask("t").data.reshape(-1)
        for i, p in enumerate(patterns):
            expect = 1 if sum(p) >= 2 else 0
            assert got[i] == expect, f"votes {p}"

    def test_tie_goes_to_one(self):
        g = Geometry(dims=(1, 1, 1))
        maps = [
            labelmap_from_bits(g, {"t": [v]}) for v in (1, 1, 0, 0)
        ]
        fused = majority_vote(PredictionSet(tuple(maps)))
        assert fused.mask("t").data[0, 0, 0] == 1

    def test_minority_stays_zero(self):
        g = Geometry(dims=(1, 1, 1))
        maps = [
            labelmap_from_bits(g, {"t": [v]}) for v in (1, 0, 0, 0)
        ]
        fused = majority_vote(PredictionSet(tuple(maps)))
        assert fused.mask("t").data[0, 0, 0] == 0

    def test_k1_identity(self):
        g = Geometry(dims=(2, 1, 1))
        m = labelmap_from_bits(g, {"t": [0, 1]})
        fused = majority_vote(PredictionSet((m,)))
        np.testing.assert_array_equal(
            fused.mask("t").data, m.mask("t").data
        )

    def test_permutation_invariance(self):
        rng = np.random.default_rng(0)
        g = Geometry(dims=(5, 4, 3))
        maps = tuple(
            TractLabelMap.from_arrays(
                g,
                [
                    ("a", (rng.random(g.dims) < 0.5).astype(np.uint8)),
                    ("b", (rng.random(g.dims) < 0.5).astype(np.uint8)),
                ],
            )
            for _ in range(4)
        )
        base = majority_vote(PredictionSet(maps))
        for _ in range(20):
            perm = rng.permutation(4)
            shuffled = majority_vote(
                PredictionSet(tuple(maps[i] for i in perm))
            )
            for name in ("a", "b"):
                np.testing.assert_array_equal(
                    shuffled.mask(name).data, base.mask(name).data
                )

    def test_unanimity(self):
        rng = np.random.default_rng(1)
        g = Geometry(dims=(4, 4, 4))
        m = TractLabelMap.from_arrays(
            g, [("t", (rng.random(g.dims) < 0.3).astype(np.uint8))]
        )
        fused = majority_vote(PredictionSet((m, m, m)))
        np.testing.assert_array_equal(fused.mask("t").data, m.mask("t").data)

    def test_k3_strict_majority(self):
        g = Geometry(dims=(1, 1, 1))
        maps = [labelmap_from_bits(g, {"t": [v]}) for v in (1, 1, 0)]
        assert majority_vote(PredictionSet(tuple(maps))).mask("t").data[0, 0, 0] == 1
        maps = [labelmap_from_bits(g, {"t": [v]}) for v in (1, 0, 0)]
        assert majority_vote(PredictionSet(tuple(maps))).mask("t").data[0, 0, 0] == 0
