import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stfusion.errors import InfeasibleBandError
from stfusion.similarity import (
    BandSpec,
    UNBOUNDED,
    dtw_distance,
    dtw_path,
    local_cost,
    pairwise_distances,
)

from oracles import brute_force_dtw, brute_force_paths


class TestLocalCost:
    def test_identical_points(self):
        assert local_cost(5, 5) == 0

    def test_scalar_difference(self):
        assert local_cost(1, 4) == 3

    def test_l1_over_dims(self):
        assert local_cost((1, 2), (4, 0)) == 5

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            local_cost((1, 2), (1, 2, 3))


class TestDtwDistance:
    def test_identical_series(self):
        for band in (0, 1, 5, None):
            assert dtw_distance([3, 1, 4], [3, 1, 4], band=band) == 0

    def test_single_cell(self):
        assert dtw_distance([1], [4], band=0) == 3

    def test_offset_ramp(self):
        # brute-force oracle over all monotone paths gives sqrt(2)
        expected = brute_force_dtw([1, 2, 3], [2, 3, 4])
        assert expected == pytest.approx(math.sqrt(2), abs=1e-12)
        assert dtw_distance([1, 2, 3], [2, 3, 4]) == expected

    def test_multivariate_l1(self):
        x = [[0.0, 0.0], [1.0, 1.0]]
        y = [[0.5, 0.0], [1.0, 0.0]]
        assert dtw_distance(x, y) == pytest.approx(brute_force_dtw(x, y), rel=1e-12)

    def test_infeasible_band(self):
        with pytest.raises(InfeasibleBandError):
            dtw_distance([1, 2, 3, 4, 5], [1], band=2)

    def test_empty_series(self):
        with pytest.raises(ValueError):
            dtw_distance([], [1, 2])

    def test_band_spec_objects(self):
        d1 = dtw_distance([1, 2, 3], [2, 3, 4], band=BandSpec(2))
        d2 = dtw_distance([1, 2, 3], [2, 3, 4], band=2)
        assert d1 == d2
        assert dtw_distance([1, 2], [3], band=UNBOUNDED) > 0

    def test_negative_band_rejected(self):
        with pytest.raises(ValueError):
            BandSpec(-1)


class TestDtwPath:
    def test_diagonal_for_identical(self):
        path = dtw_path([1, 2, 3], [1, 2, 3])
        assert path.tolist() == [[0, 0], [1, 1], [2, 2]]

    def test_single_row_path(self):
        path = dtw_path([1], [1, 1, 1])
        assert path.tolist() == [[0, 0], [0, 1], [0, 2]]

    def test_path_achieves_minimum(self):
        x, y = [1, 2, 3], [2, 3, 4]
        path = dtw_path(x, y)
        assert len(path) in (3, 4)
        cost = sum(abs(x[i] - y[j]) ** 2 for i, j in path)
        assert cost == pytest.approx(2.0, abs=1e-12)

    def test_path_shape_rules(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            n, m = rng.integers(1, 7, size=2)
            x, y = rng.normal(size=n), rng.normal(size=m)
            path = dtw_path(x, y)
            assert tuple(path[0]) == (0, 0)
            assert tuple(path[-1]) == (n - 1, m - 1)
            assert max(n, m) <= len(path) <= n + m
            deltas = np.diff(path, axis=0)
            assert np.all((deltas == 0) | (deltas == 1))
            assert np.all(deltas.sum(axis=1) >= 1)

    def test_banded_path_stays_in_band(self):
        rng = np.random.default_rng(3)
        x, y = rng.normal(size=9), rng.normal(size=9)
        for b in (1, 2, 4):
            path = dtw_path(x, y, band=b)
            assert np.all(np.abs(path[:, 0] - path[:, 1]) <= b)

    def test_tie_break_prefers_diagonal(self):
        # all-equal series: every path costs 0, diagonal must win ties
        path = dtw_path([5, 5, 5], [5, 5, 5])
        assert path.tolist() == [[0, 0], [1, 1], [2, 2]]


class TestAgainstBruteForce:
    @settings(max_examples=150, deadline=None)
    @given(
        st.lists(st.integers(0, 2), min_size=1, max_size=6),
        st.lists(st.integers(0, 2), min_size=1, max_size=6),
        st.integers(0, 6),
    )
    def test_oracle_equivalence(self, xs, ys, extra_band):
        band = abs(len(xs) - len(ys)) + extra_band
        got = dtw_distance(xs, ys, band=band)
        want = brute_force_dtw(xs, ys, band=band)
        assert got == want  # integer arithmetic: exact in either route

    @settings(max_examples=60, deadline=None)
    @given(
        st.lists(st.floats(-2, 2, allow_nan=False), min_size=1, max_size=5),
        st.lists(st.floats(-2, 2, allow_nan=False), min_size=1, max_size=5),
    )
    def test_path_consistency(self, xs, ys):
        dist = dtw_distance(xs, ys)
        path = dtw_path(xs, ys)
        acc = sum(abs(xs[i] - ys[j]) ** 2 for i, j in path)
        assert math.sqrt(acc) == pytest.approx(dist, rel=1e-9, abs=1e-12)

    def test_path_is_a_valid_optimal_path(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            x = rng.integers(0, 3, size=5).astype(float)
            y = rng.integers(0, 3, size=5).astype(float)
            all_paths = brute_force_paths(x, y)
            best = min(cost for cost, _ in all_paths)
            got = dtw_path(x, y)
            acc = sum(abs(x[i] - y[j]) ** 2 for i, j in got)
            assert acc == best


class TestBandProperties:
    def test_monotone_in_band(self):
        rng = np.random.default_rng(0)
        x, y = rng.normal(size=30), rng.normal(size=30)
        dists = [dtw_distance(x, y, band=b) for b in range(0, 31, 3)]
        assert all(a >= b for a, b in zip(dists, dists[1:]))

    def test_wide_band_equals_unbounded(self):
        rng = np.random.default_rng(1)
        x, y = rng.normal(size=20), rng.normal(size=25)
        assert dtw_distance(x, y, band=25) == dtw_distance(x, y)

    def test_symmetry_equal_lengths(self):
        rng = np.random.default_rng(2)
        x, y = rng.normal(size=17), rng.normal(size=17)
        for b in (2, 5, None):
            assert dtw_distance(x, y, band=b) == dtw_distance(y, x, band=b)

    def test_cell_counter_bound(self):
        rng = np.random.default_rng(4)
        n = 40
        x, y = rng.normal(size=n), rng.normal(size=n)
        for b in (0, 3, 12, 40):
            _, cells = dtw_distance(x, y, band=b, with_cell_count=True)
            assert cells <= n * (2 * b + 2)
            assert cells >= n  # at least the diagonal


class TestPairwise:
    def test_single_series(self):
        out = pairwise_distances(np.zeros((1, 4)))
        assert out.shape == (1, 1) and out[0, 0] == 0

    def test_identical_pair(self):
        s = np.array([[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]])
        assert np.all(pairwise_distances(s) == 0)

    def test_matches_per_pair_distances(self):
        series = np.array([[1, 2, 3], [2, 3, 4], [9, 9, 9]], dtype=float)
        out = pairwise_distances(series)
        assert out[0, 1] == pytest.approx(brute_force_dtw(series[0], series[1]))
        assert out[0, 2] > out[0, 1]
        assert np.all(np.diag(out) == 0)
        assert np.array_equal(out, out.T)

    def test_banded_matches_direct_calls(self):
        rng = np.random.default_rng(5)
        series = rng.normal(size=(6, 15))
        out = pairwise_distances(series, band=4)
        for i in range(6):
            for j in range(i + 1, 6):
                assert out[i, j] == dtw_distance(series[i], series[j], band=4)

    def test_worker_count_does_not_change_result(self):
        rng = np.random.default_rng(6)
        series = rng.normal(size=(10, 20))
        a = pairwise_distances(series, band=5, workers=1)
        b = pairwise_distances(series, band=5, workers=4)
        assert np.array_equal(a, b)

    def test_mixed_lengths_rejected(self):
        with pytest.raises(ValueError):
            pairwise_distances([[1, 2, 3], [1, 2]])
