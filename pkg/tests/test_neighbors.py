import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wshar.dataset import Segment
from wshar.errors import ParameterError
from wshar.neighbors import build_index, feature_neighbors, read_index, temporal_neighbors, write_index


def brute_knn(x, n):
    """Second implementation: full distance matrix, then a stable sort per row."""
    size = len(x)
    out = []
    for i in range(size):
        d = [(sum((x[i][c] - x[j][c]) ** 2 for c in range(len(x[i]))), j) for j in range(size) if j != i]
        d.sort()
        out.append(tuple(j for _, j in d[:n]))
    return out


def segs(counts):
    out = []
    for sid, count in enumerate(counts):
        out += [Segment(index=k, samples=np.zeros((1, 1)), stream_id=f"s{sid}") for k in range(count)]
    return out


def test_points_on_a_line():
    assert feature_neighbors(np.array([[0.0], [1.0], [10.0]]), 1) == [(1,), (0,), (1,)]


def test_duplicates_pick_the_lower_index():
    x = np.array([[0.0], [5.0], [5.0], [5.0]])
    assert feature_neighbors(x, 1)[0] == (1,)
    assert feature_neighbors(x, 2)[3] == (1, 2)


@pytest.mark.parametrize("size", [50, 200])
def test_matches_brute_force_oracle(size):
    x = np.random.default_rng(size).normal(size=(size, 4))
    assert feature_neighbors(x, 5) == brute_knn(x.tolist(), 5)


def test_matches_oracle_on_a_coarse_grid():
    # many exact ties
    x = np.random.default_rng(3).integers(0, 3, size=(60, 2)).astype(float)
    assert feature_neighbors(x, 7) == brute_knn(x.tolist(), 7)


def test_self_is_never_a_neighbour():
    x = np.zeros((6, 2))
    nb = feature_neighbors(x, 5)
    assert all(i not in row and len(row) == 5 for i, row in enumerate(nb))


def test_n_too_large():
    with pytest.raises(ParameterError):
        feature_neighbors(np.zeros((3, 1)), 3)
    with pytest.raises(ParameterError):
        feature_neighbors(np.zeros((3, 1)), 0)


def test_distance_symmetry():
    x = np.random.default_rng(9).normal(size=(40, 5)) * 1e3
    d = ((x[:, None, :] - x[None, :, :]) ** 2).sum(-1)
    assert np.abs(d - d.T).max() <= 1e-12 * d.max()


def test_temporal_examples():
    s = segs([5])
    nb = temporal_neighbors(s, 2)
    assert set(nb[2]) == {1, 3}
    assert nb[0] == (1, 2)
    assert temporal_neighbors(segs([1]), 3) == [()]


def test_temporal_tie_prefers_earlier():
    assert temporal_neighbors(segs([5]), 1)[2] == (1,)
    assert temporal_neighbors(segs([5]), 3)[2] == (1, 3, 0)


@given(st.lists(st.integers(1, 12), min_size=1, max_size=5), st.integers(1, 6))
@settings(max_examples=200, deadline=None)
def test_temporal_neighbours_stay_in_stream(counts, m):
    s = segs(counts)
    nb = temporal_neighbors(s, m)
    for i, row in enumerate(nb):
        assert i not in row
        assert len(row) == min(m, counts[int(s[i].stream_id[1:])] - 1)
        assert all(s[j].stream_id == s[i].stream_id for j in row)
        gaps = [abs(s[j].index - s[i].index) for j in row]
        assert gaps == sorted(gaps)


def test_temporal_accepts_manifest_rows():
    rows = [{"stream_id": "a", "window_index": k} for k in (0, 1, 2)]
    assert temporal_neighbors(rows, 1) == [(1,), (0,), (1,)]


def test_rebuild_is_identical_and_round_trips(tmp_path):
    s = segs([20, 15])
    x = np.random.default_rng(1).normal(size=(35, 3))
    a, b = build_index(s, x, 2, 5), build_index(s, x, 2, 5)
    assert a == b
    path = tmp_path / "nb.csv"
    write_index(a, path)
    assert read_index(path, 35) == a
