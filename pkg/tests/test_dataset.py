"""Tests for synthetic data generation, splits, and binary storage."""

import struct

import numpy as np
import pytest

from oan.dataset import (
    MAGIC,
    CrossModalDataset,
    SeenUnseenSplit,
    generate_synthetic,
    load_dataset,
    make_split,
    save_dataset,
)
from oan.errors import ConfigError, FormatError, LabelError, ShapeError, VersionError


class TestGenerate:
    def test_instance_counts(self):
        ds = generate_synthetic(15, 20, 16, 0.5, 0.1, seed=0)
        assert len(ds) == 600
        assert ds.d_in == 16
        assert ds.num_classes == 15
        for c in range(15):
            mask = ds.class_ids == c
            assert mask.sum() == 40
            assert (ds.modality[mask] == 0).sum() == 20
            assert (ds.modality[mask] == 1).sum() == 20

    def test_degenerate_collapses_to_point(self):
        ds = generate_synthetic(3, 4, 8, 0.0, 0.0, seed=1)
        for c in range(3):
            rows = ds.features[ds.class_ids == c]
            assert np.ptp(rows, axis=0).max() == 0.0

    def test_modality_gap_is_global(self):
        # zero noise isolates the offset: image mean - sketch mean must be
        # the same vector for every class
        ds = generate_synthetic(4, 3, 6, 0.7, 0.0, seed=2)
        gaps = []
        for c in range(4):
            sk = ds.features[(ds.class_ids == c) & (ds.modality == 0)].mean(axis=0)
            im = ds.features[(ds.class_ids == c) & (ds.modality == 1)].mean(axis=0)
            gaps.append(im - sk)
        for g in gaps[1:]:
            np.testing.assert_allclose(g, gaps[0], atol=1e-12)

    def test_same_seed_bit_identical(self):
        a = generate_synthetic(5, 6, 10, 0.5, 0.1, seed=3)
        b = generate_synthetic(5, 6, 10, 0.5, 0.1, seed=3)
        assert a.same_content(b)

    def test_different_seed_differs(self):
        a = generate_synthetic(5, 6, 10, 0.5, 0.1, seed=3)
        b = generate_synthetic(5, 6, 10, 0.5, 0.1, seed=4)
        assert not a.same_content(b)

    def test_noise_toggle_keeps_structure(self):
        base = generate_synthetic(4, 5, 8, 0.5, 0.0, seed=5)
        noisy = generate_synthetic(4, 5, 8, 0.5, 0.1, seed=5)
        np.testing.assert_array_equal(base.class_ids, noisy.class_ids)
        np.testing.assert_array_equal(base.modality, noisy.modality)
        diff = np.abs(noisy.features - base.features)
        assert diff.max() < 0.6  # pure noise at std 0.1
        assert diff.max() > 0.0

    def test_nearest_class_mean_is_perfect_at_low_noise(self):
        ds = generate_synthetic(6, 8, 12, 0.0, 0.05, seed=6)
        means = np.stack([ds.features[ds.class_ids == c].mean(axis=0) for c in range(6)])
        d = ((ds.features[:, None, :] - means[None, :, :]) ** 2).sum(-1)
        np.testing.assert_array_equal(d.argmin(axis=1), ds.class_ids)

    def test_validation(self):
        with pytest.raises(ConfigError):
            generate_synthetic(1, 5, 8, 0.5, 0.1, seed=0)
        with pytest.raises(ConfigError):
            generate_synthetic(3, 5, 8, 0.5, -0.1, seed=0)
        with pytest.raises(ConfigError):
            generate_synthetic(3, 0, 8, 0.5, 0.1, seed=0)


class TestDatasetType:
    def test_missing_modality_rejected(self):
        with pytest.raises(LabelError):
            CrossModalDataset(np.ones((2, 3)), [0, 0], [0, 0])  # class 0 has no image

    def test_bad_modality_rejected(self):
        with pytest.raises(LabelError):
            CrossModalDataset(np.ones((2, 3)), [0, 0], [0, 5])

    def test_arrays_frozen(self):
        ds = generate_synthetic(2, 2, 4, 0.1, 0.0, seed=0)
        with pytest.raises(ValueError):
            ds.features[0, 0] = 9.0

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            CrossModalDataset(np.ones((3, 2)), [0, 0], [0, 1, 0])

    def test_subset_mask(self):
        ds = generate_synthetic(3, 2, 4, 0.1, 0.0, seed=1)
        feats, ids, mods = ds.subset(ds.class_ids == 1)
        assert (ids == 1).all()
        assert feats.shape == (4, 4) and mods.shape == (4,)


class TestSplit:
    def test_sizes(self):
        ds = generate_synthetic(15, 2, 4, 0.1, 0.0, seed=0)
        split = make_split(ds, num_unseen=5, seed=1)
        assert len(split.seen) == 10 and len(split.unseen) == 5

    def test_disjoint_and_covering(self):
        ds = generate_synthetic(9, 2, 4, 0.1, 0.0, seed=0)
        split = make_split(ds, num_unseen=3, seed=2)
        assert not set(split.seen) & set(split.unseen)
        assert split.covers(9)

    def test_boundary_single_seen(self):
        ds = generate_synthetic(4, 2, 4, 0.1, 0.0, seed=0)
        split = make_split(ds, num_unseen=3, seed=3)
        assert len(split.seen) == 1

    def test_deterministic(self):
        ds = generate_synthetic(8, 2, 4, 0.1, 0.0, seed=0)
        assert make_split(ds, 3, seed=4) == make_split(ds, 3, seed=4)
        assert make_split(ds, 3, seed=4) != make_split(ds, 3, seed=5)

    def test_bounds(self):
        ds = generate_synthetic(4, 2, 4, 0.1, 0.0, seed=0)
        with pytest.raises(ConfigError):
            make_split(ds, 0, seed=0)
        with pytest.raises(ConfigError):
            make_split(ds, 4, seed=0)

    def test_direct_construction_validation(self):
        with pytest.raises(ConfigError):
            SeenUnseenSplit(seen=(0, 1), unseen=(1, 2))
        with pytest.raises(ConfigError):
            SeenUnseenSplit(seen=(), unseen=(0,))

    def test_seen_index_dense(self):
        split = SeenUnseenSplit(seen=(7, 2, 9), unseen=(1,))
        assert split.seen_index() == {2: 0, 7: 1, 9: 2}


class TestStorage:
    def test_round_trip_bit_exact(self, tmp_path):
        ds = generate_synthetic(5, 4, 7, 0.5, 0.1, seed=9)
        p = tmp_path / "ds.bin"
        save_dataset(ds, p)
        again = load_dataset(p)
        assert ds.same_content(again)
        # and the file itself is stable
        save_dataset(again, tmp_path / "ds2.bin")
        assert (tmp_path / "ds.bin").read_bytes() == (tmp_path / "ds2.bin").read_bytes()

    def test_externally_written_file_loads(self, tmp_path):
        # build the byte layout by hand, independent of save_dataset
        d_in = 3
        rows = [
            (0, 0, [1.0, 2.0, 3.0]),
            (0, 1, [4.0, 5.0, 6.0]),
            (1, 0, [7.0, 8.0, 9.0]),
            (1, 1, [0.5, 0.25, 0.125]),
        ]
        blob = MAGIC + struct.pack("<III", len(rows), d_in, 2)
        for cid, mod, feats in rows:
            blob += struct.pack("<IB", cid, mod) + struct.pack("<3d", *feats)
        p = tmp_path / "ext.bin"
        p.write_bytes(blob)
        ds = load_dataset(p)
        assert len(ds) == 4 and ds.d_in == 3 and ds.num_classes == 2
        np.testing.assert_array_equal(ds.features[3], [0.5, 0.25, 0.125])
        np.testing.assert_array_equal(ds.class_ids, [0, 0, 1, 1])
        np.testing.assert_array_equal(ds.modality, [0, 1, 0, 1])

    def test_truncated_file_names_offset(self, tmp_path):
        ds = generate_synthetic(2, 2, 4, 0.1, 0.0, seed=0)
        p = tmp_path / "ds.bin"
        save_dataset(ds, p)
        whole = p.read_bytes()
        cut = tmp_path / "cut.bin"
        cut.write_bytes(whole[: len(whole) - 7])
        with pytest.raises(FormatError, match="offset"):
            load_dataset(cut)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "junk.bin"
        p.write_bytes(b"NOTME!" + b"\x00" * 40)
        with pytest.raises(FormatError):
            load_dataset(p)

    def test_future_version_distinct_error(self, tmp_path):
        ds = generate_synthetic(2, 2, 4, 0.1, 0.0, seed=0)
        p = tmp_path / "ds.bin"
        save_dataset(ds, p)
        blob = bytearray(p.read_bytes())
        blob[5] = ord("7")  # OANDS7
        v = tmp_path / "v7.bin"
        v.write_bytes(bytes(blob))
        with pytest.raises(VersionError):
            load_dataset(v)

    def test_trailing_garbage_rejected(self, tmp_path):
        ds = generate_synthetic(2, 2, 4, 0.1, 0.0, seed=0)
        p = tmp_path / "ds.bin"
        save_dataset(ds, p)
        t = tmp_path / "trail.bin"
        t.write_bytes(p.read_bytes() + b"\x00\x01")
        with pytest.raises(FormatError, match="trailing"):
            load_dataset(t)

    def test_out_of_range_class_id_rejected(self, tmp_path):
        d_in = 2
        blob = MAGIC + struct.pack("<III", 2, d_in, 1)
        blob += struct.pack("<IB", 0, 0) + struct.pack("<2d", 1.0, 2.0)
        blob += struct.pack("<IB", 3, 1) + struct.pack("<2d", 3.0, 4.0)
        p = tmp_path / "bad.bin"
        p.write_bytes(blob)
        with pytest.raises(FormatError, match="class id"):
            load_dataset(p)

    def test_decodable_but_invalid_dataset(self, tmp_path):
        # two sketches, no image for the class
        blob = MAGIC + struct.pack("<III", 2, 2, 1)
        blob += struct.pack("<IB", 0, 0) + struct.pack("<2d", 1.0, 2.0)
        blob += struct.pack("<IB", 0, 0) + struct.pack("<2d", 3.0, 4.0)
        p = tmp_path / "inv.bin"
        p.write_bytes(blob)
        with pytest.raises(FormatError):
            load_dataset(p)
