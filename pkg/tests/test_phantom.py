import numpy as np
import pytest
from scipy import ndimage

from tractaug.phantom import (
    BACKGROUND_LEVEL,
    PhantomSpec,
    generate_phantom,
    generate_splits,
)
from tractaug.volume import content_hash


def small_spec(**kw):
    defaults = dict(
        dims=(20, 20, 20),
        n_existing_tracts=2,
        n_novel_tracts=2,
        noise_sigma=0.05,
        seed=3,
    )
    defaults.update(kw)
    return PhantomSpec(**defaults)


class TestSpecValidation:
    def test_bad_counts(self):
        with pytest.raises(ValueError):
            small_spec(n_existing_tracts=0)

    def test_bad_radius(self):
        with pytest.raises(ValueError):
            small_spec(radius_range=(0.5, 2.0))
        with pytest.raises(ValueError):
            small_spec(radius_range=(2.0, 1.5))

    def test_bad_sigma(self):
        with pytest.raises(ValueError):
            small_spec(noise_sigma=-0.1)

    def test_names(self):
        s = small_spec()
        assert s.existing_names == ("existing_0", "existing_1")
        assert s.novel_names == ("novel_0", "novel_1")
        assert s.all_names == s.existing_names + s.novel_names


class TestGeneratePhantom:
    def test_deterministic(self):
        spec = small_spec()
        a = generate_phantom(spec, 17)
        b = generate_phantom(spec, 17)
        assert content_hash(a.image) == content_hash(b.image)
        assert content_hash(a.labels) == content_hash(b.labels)
        assert a.subject_id == b.subject_id

    def test_subjects_differ(self):
        spec = small_spec()
        a = generate_phantom(spec, 1)
        b = generate_phantom(spec, 2)
        assert content_hash(a.image) != content_hash(b.image)

    def test_channel_selection(self):
        spec = small_spec()
        assert generate_phantom(spec, 5, "existing").labels.names == (
            "existing_0",
            "existing_1",
        )
        assert generate_phantom(spec, 5, "novel").labels.names == (
            "novel_0",
            "novel_1",
        )
        assert len(generate_phantom(spec, 5, "all").labels) == 4

    def test_image_same_regardless_of_selection(self):
        spec = small_spec()
        a = generate_phantom(spec, 9, "existing")
        b = generate_phantom(spec, 9, "novel")
        assert content_hash(a.image) == content_hash(b.image)

    def test_all_channels_nonempty(self):
        spec = small_spec(n_novel_tracts=4)
        s = generate_phantom(spec, 21)
        for name in s.labels.names:
            assert s.labels.mask(name).voxel_count > 0

    def test_noiseless_single_tract_levels(self):
        spec = PhantomSpec(
            dims=(20, 20, 20),
            n_existing_tracts=1,
            n_novel_tracts=1,
            noise_sigma=0.0,
            seed=11,
        )
        s = generate_phantom(spec, 1, "all")
        img = s.image.data
        m0 = s.labels.mask("existing_0").data.astype(bool)
        m1 = s.labels.mask("novel_0").data.astype(bool)
        outside = ~(m0 | m1)
        np.testing.assert_allclose(img[outside], BACKGROUND_LEVEL, rtol=1e-6)
        only0 = m0 & ~m1
        if only0.any():
            lvl = img[only0]
            assert np.allclose(lvl, lvl[0])
            assert lvl[0] > BACKGROUND_LEVEL

    def test_tubes_are_single_6connected_components(self):
        spec = small_spec(seed=29)
        structure = ndimage.generate_binary_structure(3, 1)  # 6-connectivity
        for subj in (1, 2, 3):
            s = generate_phantom(spec, subj)
            for name in s.labels.names:
                _, n = ndimage.label(
                    s.labels.mask(name).data, structure=structure
                )
                assert n == 1, f"{name} split into {n} components"

    def test_bad_selection_rejected(self):
        with pytest.raises(ValueError):
            generate_phantom(small_spec(), 1, "bogus")


class TestGenerateSplits:
    def test_sizes_and_labels(self):
        spec = small_spec()
        rng = np.random.default_rng(0)
        splits = generate_splits(spec, n_pretrain=3, n_test=4, rng=rng)
        assert len(splits.pretrain) == 3
        assert len(splits.test) == 4
        assert splits.pretrain[0].labels.names == spec.existing_names
        assert splits.one_shot.labels.names == spec.novel_names
        assert splits.test[0].labels.names == spec.novel_names

    def test_subject_ids_distinct(self):
        spec = small_spec()
        splits = generate_splits(spec, 3, 4, np.random.default_rng(1))
        ids = [s.subject_id for s in splits.pretrain]
        ids.append(splits.one_shot.subject_id)
        ids += [s.subject_id for s in splits.test]
        assert len(set(ids)) == len(ids) == 8

    def test_reproducible(self):
        spec = small_spec()
        a = generate_splits(spec, 2, 2, np.random.default_rng(5))
        b = generate_splits(spec, 2, 2, np.random.default_rng(5))
        assert content_hash(a.one_shot.image) == content_hash(b.one_shot.image)
        for s, t in zip(a.test, b.test):
            assert content_hash(s.image) == content_hash(t.image)
            assert content_hash(s.labels) == content_hash(t.labels)
