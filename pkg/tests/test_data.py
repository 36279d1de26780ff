import numpy as np
import pytest

from stfusion.data import (
    DAY_STEPS,
    SignalTensor,
    SplitSpec,
    fit_normalizer,
    load_labels,
    load_signal,
    make_samples,
    prepare_dataset,
    save_labels,
    save_signal,
    synth_traffic,
    window_count,
)
from stfusion.errors import IngestionError
from stfusion.similarity import dtw_distance


class TestSignalFormats:
    def test_csv_shape(self, tmp_path):
        p = tmp_path / "sig.csv"
        p.write_text("a,b,c\n1,2,3\n4,5,6\n")
        sig = load_signal(p, fmt="csv")
        assert sig.values.shape == (2, 3, 1)
        assert sig.values[1, 2, 0] == 6

    def test_csv_multifeature(self, tmp_path):
        p = tmp_path / "sig.csv"
        p.write_text("h\n1,2,3,4\n5,6,7,8\n")
        sig = load_signal(p, fmt="csv", features=2)
        assert sig.values.shape == (2, 2, 2)
        assert sig.values[0, 1].tolist() == [3, 4]

    def test_binary_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        sig = SignalTensor(rng.normal(size=(7, 4, 2)).astype(np.float32))
        p = tmp_path / "sig.stfd"
        save_signal(sig, p)
        back = load_signal(p)
        assert np.array_equal(back.values, sig.values)

    def test_csv_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        sig = SignalTensor(rng.normal(size=(5, 3, 1)).astype(np.float32))
        p = tmp_path / "sig.csv"
        save_signal(sig, p)
        back = load_signal(p, features=1)
        assert np.array_equal(back.values, sig.values)

    def test_truncated_binary(self, tmp_path):
        sig = SignalTensor(np.ones((4, 3, 1), dtype=np.float32))
        p = tmp_path / "sig.stfd"
        save_signal(sig, p)
        data = p.read_bytes()
        p.write_bytes(data[:-8])
        with pytest.raises(IngestionError, match="payload"):
            load_signal(p)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "junk.stfd"
        p.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(IngestionError, match="magic"):
            load_signal(p)

    def test_ragged_csv_rejected(self, tmp_path):
        p = tmp_path / "sig.csv"
        p.write_text("h\n1,2,3\n1,2\n")
        with pytest.raises(IngestionError, match="line 3"):
            load_signal(p, fmt="csv")

    def test_non_numeric_cell(self, tmp_path):
        p = tmp_path / "sig.csv"
        p.write_text("h\n1,2,zzz\n")
        with pytest.raises(IngestionError, match="line 2"):
            load_signal(p, fmt="csv")

    def test_format_inferred_from_extension(self, tmp_path):
        sig = SignalTensor(np.ones((3, 2, 1), dtype=np.float32))
        save_signal(sig, tmp_path / "x.csv")
        assert load_signal(tmp_path / "x.csv").values.shape == (3, 2, 1)


class TestNormalizer:
    def test_constant_signal_maps_to_zero(self):
        sig = SignalTensor(np.full((10, 3, 1), 5.0, dtype=np.float32))
        norm = fit_normalizer(sig, (0, 10))
        assert np.all(norm.std == 1)
        assert np.all(norm.apply(sig.values) == 0)

    def test_two_point_stats(self):
        sig = SignalTensor(np.array([[[0.0]], [[2.0]]], dtype=np.float32))
        norm = fit_normalizer(sig, (0, 2))
        assert norm.mean[0] == 1 and norm.std[0] == 1
        assert norm.apply(sig.values).ravel().tolist() == [-1, 1]

    def test_round_trip_identity(self):
        rng = np.random.default_rng(2)
        sig = SignalTensor(rng.normal(13.0, 4.0, size=(50, 6, 2)).astype(np.float32))
        norm = fit_normalizer(sig, (0, 30))
        back = norm.invert(norm.apply(sig.values))
        assert np.allclose(back, sig.values, rtol=1e-6)

    def test_stats_ignore_val_test(self):
        rng = np.random.default_rng(3)
        values = rng.normal(size=(40, 4, 1)).astype(np.float32)
        sig_a = SignalTensor(values.copy())
        mutated = values.copy()
        mutated[30:] += 1000
        sig_b = SignalTensor(mutated)
        na = fit_normalizer(sig_a, (0, 30))
        nb = fit_normalizer(sig_b, (0, 30))
        assert np.array_equal(na.mean, nb.mean)
        assert np.array_equal(na.std, nb.std)

    def test_empty_range_rejected(self):
        sig = SignalTensor(np.ones((4, 2, 1), dtype=np.float32))
        with pytest.raises(ValueError):
            fit_normalizer(sig, (3, 3))


class TestWindows:
    def test_window_count_formula(self):
        assert window_count(24, 12, 12) == 1
        assert window_count(100, 12, 12) == 77
        assert window_count(23, 12, 12) == 0

    def test_split_ranges(self):
        spec = SplitSpec()
        assert spec.ranges(120) == ((0, 72), (72, 96), (96, 120))

    def test_bad_split(self):
        with pytest.raises(ValueError):
            SplitSpec(0.5, 0.2, 0.2)

    def test_sample_adjacency(self):
        values = np.arange(40, dtype=np.float32).reshape(40, 1, 1)
        sig = SignalTensor(values)
        train, val, test = make_samples(sig, 3, 2, SplitSpec(0.5, 0.25, 0.25))
        # train range [0, 20): 20 - 5 + 1 = 16 samples
        assert len(train) == 16 and len(val) == 6 and len(test) == 6
        assert train.inputs[0].ravel().tolist() == [0, 1, 2]
        assert train.targets[0].ravel().tolist() == [3, 4]
        # no leakage: val windows start at or after step 20
        assert val.inputs.min() >= 20
        assert train.targets.max() < 20

    def test_short_range_rejected(self):
        sig = SignalTensor(np.ones((30, 2, 1), dtype=np.float32))
        with pytest.raises(ValueError, match="too short"):
            make_samples(sig, 12, 12, SplitSpec())

    def test_prepare_dataset(self):
        rng = np.random.default_rng(4)
        sig = SignalTensor(rng.normal(size=(120, 3, 1)).astype(np.float32))
        bundle = prepare_dataset(sig, 12, 12)
        assert len(bundle.train) == 72 - 24 + 1
        assert len(bundle.val) == 1 and len(bundle.test) == 1
        assert bundle.normalizer.std.shape == (1,)

    def test_prepare_dataset_global_stats(self):
        rng = np.random.default_rng(5)
        values = rng.normal(size=(120, 3, 1)).astype(np.float32)
        values[100:] += 50  # shift the test range
        sig = SignalTensor(values)
        train_only = prepare_dataset(sig, 12, 12)
        global_fit = prepare_dataset(sig, 12, 12, stats_range="all")
        assert global_fit.normalizer.mean[0] > train_only.normalizer.mean[0]
        with pytest.raises(ValueError):
            prepare_dataset(sig, 12, 12, stats_range="bogus")


class TestSynthetic:
    def test_zero_noise_same_cluster_identical(self):
        sig, labels, _ = synth_traffic(6, 3, 200, 0.0, seed=9)
        same = np.flatnonzero(labels == labels[0])
        a, b = same[0], same[1]
        assert np.array_equal(sig.values[:, a], sig.values[:, b])
        assert dtw_distance(sig.values[:, a, 0], sig.values[:, b, 0], band=5) == 0

    def test_deterministic_per_seed(self):
        a = synth_traffic(8, 2, 300, 0.3, seed=42)
        b = synth_traffic(8, 2, 300, 0.3, seed=42)
        assert np.array_equal(a[0].values, b[0].values)
        assert np.array_equal(a[1], b[1])
        assert np.array_equal(a[2], b[2])
        c = synth_traffic(8, 2, 300, 0.3, seed=43)
        assert not np.array_equal(a[0].values, c[0].values)

    def test_period_structure(self):
        sig, _, _ = synth_traffic(2, 1, 2 * DAY_STEPS, 0.0, seed=0)
        day1 = sig.values[:DAY_STEPS, 0, 0]
        day2 = sig.values[DAY_STEPS:, 0, 0]
        assert np.allclose(day1, day2, atol=1e-5)

    def test_positive_signal(self):
        sig, _, _ = synth_traffic(10, 4, 500, 0.0, seed=5)
        assert np.all(sig.values > 0)

    def test_ring_adjacency(self):
        _, labels, adj = synth_traffic(9, 3, 50, 0.0, seed=1)
        assert np.array_equal(adj, adj.T)
        assert np.all(np.diag(adj) == 0)
        # within a 3-node cluster the ring is the triangle
        members = np.flatnonzero(labels == 0)
        for a, b in zip(members, np.roll(members, -1)):
            assert adj[a, b] == 1
        # no cross-cluster edges
        for i in range(9):
            for j in range(9):
                if adj[i, j]:
                    assert labels[i] == labels[j]

    def test_labels_round_trip(self, tmp_path):
        _, labels, _ = synth_traffic(7, 3, 30, 0.0, seed=2)
        p = tmp_path / "labels.csv"
        save_labels(labels, p)
        assert np.array_equal(load_labels(p), labels)

    def test_cluster_count_validation(self):
        with pytest.raises(ValueError):
            synth_traffic(3, 5, 100, 0.0, seed=0)
