import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lrsm.errors import DataError, InvalidArgument
from lrsm.sites import (
    SiteSet,
    build_vecchia_plan,
    distance_matrix,
    knn_to_targets,
    maxmin_ordering,
    sample_uniform_sites,
)

from oracles import knn_brute, maxmin_brute, permutations_maxmin_check


def test_sample_single_site_in_square():
    s = sample_uniform_sites(1, 0)
    assert s.n == 1
    assert np.all((s.coords >= 0) & (s.coords <= 1))


def test_sample_distinct_and_deterministic():
    a = sample_uniform_sites(500, 7)
    b = sample_uniform_sites(500, 7)
    np.testing.assert_array_equal(a.coords, b.coords)
    d = distance_matrix(a)
    assert d[np.triu_indices(500, 1)].min() > 0


def test_sample_zero_sites_rejected():
    with pytest.raises(InvalidArgument):
        sample_uniform_sites(0, 1)


def test_siteset_rejects_duplicates_and_nonfinite():
    with pytest.raises(InvalidArgument):
        SiteSet([[0.1, 0.2], [0.1, 0.2]])
    with pytest.raises(InvalidArgument):
        SiteSet([[0.1, np.nan]])
    with pytest.raises(InvalidArgument):
        SiteSet(np.zeros((2, 3)))


def test_distance_examples():
    d = distance_matrix(SiteSet([[0, 0], [0, 0.3]]))
    assert d[0, 1] == pytest.approx(0.3)
    d = distance_matrix(SiteSet([[0, 0], [0.6 * 0.5, 0.8 * 0.5]]))
    assert d[0, 1] == pytest.approx(0.5, abs=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 30), st.integers(0, 10_000))
def test_distance_symmetric_zero_diag_triangle(n, seed):
    s = sample_uniform_sites(n, seed)
    d = distance_matrix(s)
    np.testing.assert_array_equal(d, d.T)
    assert np.all(np.diag(d) == 0) and np.all(d >= 0)
    rng = np.random.default_rng(seed)
    for _ in range(20):
        i, j, k = rng.integers(0, n, 3)
        assert d[i, k] <= d[i, j] + d[j, k] + 1e-12


def test_maxmin_single():
    assert list(maxmin_ordering(SiteSet([[0.3, 0.3]]))) == [0]


def test_maxmin_corners():
    corners = [[0, 0], [1, 0], [0, 1], [1, 1]]
    order = list(maxmin_ordering(SiteSet(corners)))
    assert order[0] == 0 and order[1] == 3
    assert order in permutations_maxmin_check(corners)


def test_maxmin_collinear():
    pts = [[0, 0], [0.5, 0], [1, 0]]
    order = list(maxmin_ordering(SiteSet(pts)))
    assert order[0] == 1 and order[1] in (0, 2)
    assert order == maxmin_brute(pts)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 25), st.integers(0, 10_000))
def test_maxmin_matches_brute_force_and_is_permutation(n, seed):
    s = sample_uniform_sites(n, seed)
    order = maxmin_ordering(s)
    assert sorted(order) == list(range(n))
    assert list(order) == maxmin_brute(s.coords)


def test_vecchia_plan_saturated_and_first_empty():
    s = sample_uniform_sites(12, 3)
    plan = build_vecchia_plan(s, 11)
    assert len(plan.neighbor_sets[0]) == 0
    for i, nb in enumerate(plan.neighbor_sets):
        assert set(nb) == set(plan.ordering[:i])


def test_vecchia_plan_line_m2_bruteforce():
    pts = np.array([[0.0, 0], [0.1, 0], [0.35, 0], [0.6, 0], [0.9, 0]])
    s = SiteSet(pts)
    plan = build_vecchia_plan(s, 2)
    for i in range(1, 5):
        prev = plan.ordering[:i]
        target = pts[plan.ordering[i]]
        d = sorted((np.linalg.norm(pts[p] - target), pos) for pos, p in enumerate(prev))
        expect = [prev[pos] for _, pos in d[:2]]
        assert list(plan.neighbor_sets[i]) == expect


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 40), st.integers(1, 8), st.integers(0, 10_000))
def test_vecchia_plan_sizes_and_subsets(n, m, seed):
    s = sample_uniform_sites(n, seed)
    plan = build_vecchia_plan(s, m)
    for i, nb in enumerate(plan.neighbor_sets):
        assert len(nb) == min(i, m)
        assert set(nb) <= set(plan.ordering[:i])


def test_knn_examples():
    s = sample_uniform_sites(10, 5)
    t = SiteSet(s.coords[[4]])
    assert knn_to_targets(s, t, 3)[0, 0] == 4
    allk = knn_to_targets(s, t, 10)[0]
    assert sorted(allk) == list(range(10))
    d = distance_matrix(t, s)[0]
    assert np.all(np.diff(d[allk]) >= 0)
    tg = SiteSet([[0.5, 0.5]])
    assert list(knn_to_targets(s, tg, 3)[0]) == knn_brute(s.coords, [0.5, 0.5], 3)
    with pytest.raises(InvalidArgument):
        knn_to_targets(s, tg, 11)


def test_sites_csv_roundtrip(tmp_path):
    s = sample_uniform_sites(7, 2)
    s.to_csv(tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "x,y"
    np.testing.assert_array_equal(SiteSet.from_csv(tmp_path / "s.csv").coords, s.coords)
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(DataError):
        SiteSet.from_csv(tmp_path / "bad.csv")
