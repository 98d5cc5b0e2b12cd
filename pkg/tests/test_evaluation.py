import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from paretotsp.errors import ContractError, DimensionError, ParseError
from paretotsp.evaluation import (ArchiveEntry, HvConfig, ParetoArchive,
                                  approximate_pf, compute_hv_protocol,
                                  denormalize, dominates, hypervolume_2d,
                                  normalize, pareto_filter,
                                  pareto_filter_indices, read_pf_csv,
                                  union_bounds, write_hv_report, write_pf_csv)
from paretotsp.instances import Tour, generate_random
from paretotsp.model import ActorParams, ModelConfig

from oracles import hv_grid, pareto_brute


# ---------------------------------------------------------------------------
# dominance


def test_dominates_basics():
    assert dominates((1, 1), (2, 2))
    assert not dominates((1, 2), (2, 1))
    assert not dominates((2, 1), (1, 2))
    assert not dominates((1.5, 2.5), (1.5, 2.5))
    assert dominates((1, 2), (1, 3))


def test_dominates_dimension_mismatch():
    with pytest.raises(DimensionError):
        dominates((1, 2), (1, 2, 3))


# ---------------------------------------------------------------------------
# pareto filter


def test_pareto_filter_example():
    out = pareto_filter([(1, 2), (2, 1), (2, 2)])
    np.testing.assert_array_equal(out, [(1, 2), (2, 1)])


def test_pareto_filter_single_point():
    np.testing.assert_array_equal(pareto_filter([(3.0, 4.0)]), [(3.0, 4.0)])


def test_pareto_filter_empty_rejected():
    with pytest.raises(ContractError):
        pareto_filter(np.empty((0, 2)))


def test_pareto_filter_dedup_keeps_first():
    pts = [(2, 1), (1, 2), (2, 1), (1, 2)]
    idx = pareto_filter_indices(pts)
    np.testing.assert_array_equal(idx, [0, 1])


@pytest.mark.parametrize("seed", range(100))
def test_pareto_filter_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    pts = rng.random((200, 2))
    if seed % 3 == 0:                       # inject duplicates sometimes
        pts[::7] = pts[0]
    np.testing.assert_array_equal(pareto_filter_indices(pts), pareto_brute(pts))


def test_pareto_filter_idempotent():
    rng = np.random.default_rng(123)
    pts = rng.random((50, 2))
    once = pareto_filter(pts)
    twice = pareto_filter(once)
    np.testing.assert_array_equal(once, twice)


# ---------------------------------------------------------------------------
# normalization


def test_normalize_endpoints():
    ideal, nadir = np.array([1.0, 2.0]), np.array([3.0, 6.0])
    np.testing.assert_array_equal(normalize([ideal], ideal, nadir), [[0.0, 0.0]])
    np.testing.assert_array_equal(normalize([nadir], ideal, nadir), [[1.0, 1.0]])


def test_normalize_round_trip():
    rng = np.random.default_rng(5)
    pts = rng.random((20, 2)) * 10.0
    ideal, nadir = np.array([-1.0, 0.5]), np.array([12.0, 11.0])
    back = denormalize(normalize(pts, ideal, nadir), ideal, nadir)
    np.testing.assert_allclose(back, pts, atol=1e-12)


def test_normalize_degenerate_bounds():
    with pytest.raises(ContractError):
        normalize([[1.0, 1.0]], np.array([0.0, 2.0]), np.array([1.0, 2.0]))


# ---------------------------------------------------------------------------
# hypervolume


def test_hv_single_origin_point():
    assert abs(hypervolume_2d([(0.0, 0.0)]) - 1.44) < 1e-12


def test_hv_three_point_example():
    pts = [(0.2, 0.8), (0.5, 0.5), (0.8, 0.2)]
    hv = hypervolume_2d(pts)
    assert abs(hv - 0.73) < 1e-12
    assert abs(hv - hv_grid(pts, (1.2, 1.2))) < 1e-3


def test_hv_dominated_point_contributes_zero():
    base = [(0.2, 0.8), (0.5, 0.5), (0.8, 0.2)]
    with_dominated = base + [(0.6, 0.6), (0.5, 0.5)]
    assert hypervolume_2d(with_dominated) == hypervolume_2d(base)


def test_hv_points_beyond_ref_dropped_with_warning(caplog):
    with caplog.at_level(logging.WARNING, logger="paretotsp.evaluation"):
        hv = hypervolume_2d([(0.5, 0.5), (1.3, 0.1), (0.2, 1.2)])
    assert abs(hv - 0.7 * 0.7) < 1e-12
    assert "dropping" in caplog.text


def test_hv_empty_effective_set(caplog):
    with caplog.at_level(logging.WARNING, logger="paretotsp.evaluation"):
        assert hypervolume_2d([(1.5, 1.5)]) == 0.0
    assert "HV = 0" in caplog.text


@pytest.mark.parametrize("seed", range(100))
def test_hv_matches_grid_oracle(seed):
    rng = np.random.default_rng(1000 + seed)
    k = rng.integers(1, 11)
    pts = rng.random((k, 2))
    assert abs(hypervolume_2d(pts) - hv_grid(pts, (1.2, 1.2))) < 1e-3


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_hv_monotone_in_new_nondominated_point(seed):
    rng = np.random.default_rng(seed)
    pts = rng.random((6, 2))
    before = hypervolume_2d(pts)
    extra = rng.random(2) * 0.5              # strong candidate point
    after = hypervolume_2d(np.vstack([pts, extra]))
    assert after >= before - 1e-12


def test_hv_removal_bounded_by_exclusive_contribution():
    rng = np.random.default_rng(77)
    pts = pareto_filter(rng.random((12, 2)))
    full = hypervolume_2d(pts)
    for i in range(pts.shape[0]):
        rest = np.delete(pts, i, axis=0)
        if rest.shape[0] == 0:
            continue
        drop = full - hypervolume_2d(rest)
        assert -1e-12 <= drop <= full + 1e-12


# ---------------------------------------------------------------------------
# archives


def _entry(f1, f2, sub=1, n=4):
    return ArchiveEntry(Tour(tuple(range(n))), np.array([f1, f2]), sub)


def test_archive_rejects_dominated_entries():
    with pytest.raises(ContractError):
        ParetoArchive([_entry(1.0, 1.0), _entry(2.0, 2.0)])


def test_archive_rejects_duplicates():
    with pytest.raises(ContractError):
        ParetoArchive([_entry(1.0, 2.0), _entry(1.0, 2.0)])


def test_archive_from_candidates_filters():
    tours = [Tour((0, 1, 2, 3))] * 4
    rows = np.array([[1.0, 2.0], [2.0, 1.0], [2.0, 2.0], [1.0, 2.0]])
    archive = ParetoArchive.from_candidates(tours, rows, [1, 2, 3, 4])
    assert [e.subproblem for e in archive.entries] == [1, 2]
    np.testing.assert_array_equal(archive.points(), [[1.0, 2.0], [2.0, 1.0]])


def _tiny_actors(count, n_heads=2):
    cfg = ModelConfig(d_h=8, n_heads=n_heads, d_ff=16)
    return [ActorParams.init(cfg, np.random.default_rng(1000 + i), dtype=np.float64)
            for i in range(count)]


def test_approximate_pf_identical_models_collapse():
    inst = generate_random(6, seed=0)
    actor = _tiny_actors(1)[0]
    archive = approximate_pf(inst, [actor] * 5)
    assert len(archive) == 1
    assert archive.entries[0].subproblem == 1


def test_approximate_pf_size_bounded_and_order_invariant():
    inst = generate_random(7, seed=3)
    actors = _tiny_actors(4)
    fwd = approximate_pf(inst, actors)
    rev = approximate_pf(inst, actors[::-1])
    assert len(fwd) <= 4 and len(rev) <= 4
    fwd_set = {tuple(np.round(e.objectives, 12)) for e in fwd.entries}
    rev_set = {tuple(np.round(e.objectives, 12)) for e in rev.entries}
    assert fwd_set == rev_set


def test_approximate_pf_needs_models():
    with pytest.raises(ContractError):
        approximate_pf(generate_random(5, seed=1), [])


# ---------------------------------------------------------------------------
# HV protocol


def test_protocol_same_archive_twice_identical():
    archive = ParetoArchive([_entry(1.0, 3.0), _entry(2.0, 2.0), _entry(3.0, 1.0)])
    hvs = compute_hv_protocol([archive, archive])
    assert hvs[0] == hvs[1] > 0.0


def test_protocol_dominating_archive_scores_higher():
    good = ParetoArchive([_entry(1.0, 3.0), _entry(2.0, 2.0), _entry(3.0, 1.0)])
    bad = ParetoArchive([_entry(2.0, 4.0), _entry(3.0, 3.0), _entry(4.0, 2.0)])
    hvs = compute_hv_protocol([good, bad])
    assert hvs[0] > hvs[1]


def test_protocol_degenerate_bounds_rejected():
    single = ParetoArchive([_entry(1.0, 1.0)])
    with pytest.raises(ContractError):
        compute_hv_protocol([single, single])


def test_protocol_explicit_bounds():
    archive = ParetoArchive([_entry(1.0, 3.0), _entry(3.0, 1.0)])
    cfg = HvConfig(ideal=np.array([0.0, 0.0]), nadir=np.array([4.0, 4.0]))
    hvs = compute_hv_protocol([archive], cfg)
    expected = hypervolume_2d(normalize(archive.points(), cfg.ideal, cfg.nadir))
    assert hvs[0] == expected


def test_union_bounds():
    a = ParetoArchive([_entry(1.0, 5.0)])
    b = ParetoArchive([_entry(2.0, 3.0)])
    ideal, nadir = union_bounds([a, b])
    np.testing.assert_array_equal(ideal, [1.0, 3.0])
    np.testing.assert_array_equal(nadir, [2.0, 5.0])


# ---------------------------------------------------------------------------
# CSV formats


def test_pf_csv_round_trip(tmp_path):
    archive = ParetoArchive([
        ArchiveEntry(Tour((2, 0, 1, 3)), np.array([1.25, 3.5]), 1),
        ArchiveEntry(Tour((0, 3, 1, 2)), np.array([2.0, 2.0]), 3),
    ])
    weights = np.array([[0.0, 1.0], [0.5, 0.5], [1.0, 0.0]])
    path = tmp_path / "pf.csv"
    write_pf_csv(path, archive, weights)
    lines = path.read_text().splitlines()
    assert lines[0] == "subproblem,lambda1,lambda2,f1,f2,tour"
    assert lines[1].startswith("1,0,1,1.25,3.5,2-0-1-3")
    again = read_pf_csv(path)
    np.testing.assert_array_equal(again.points(), archive.points())
    assert [e.tour.order for e in again.entries] == [e.tour.order for e in archive.entries]
    assert [e.subproblem for e in again.entries] == [1, 3]


@pytest.mark.parametrize("mutate, line_no", [
    (lambda lines: ["bogus,header"] + lines[1:], 1),
    (lambda lines: [lines[0], "1,0,1,2.5"], 2),
    (lambda lines: [lines[0], "1,0,1,x,2.0,0-1-2-3"], 2),
    (lambda lines: [lines[0], "1,0,1,1.0,2.0,0-1-3-4"], 2),
    (lambda lines: [lines[0], "1,0,1,1.0,2.0,0-1-2-2"], 2),
    (lambda lines: [lines[0]], 1),
])
def test_pf_csv_malformed(tmp_path, mutate, line_no):
    archive = ParetoArchive([ArchiveEntry(Tour((0, 1, 2, 3)), np.array([1.0, 2.0]), 1)])
    path = tmp_path / "pf.csv"
    write_pf_csv(path, archive, np.array([[0.5, 0.5]]))
    path.write_text("\n".join(mutate(path.read_text().splitlines())) + "\n")
    with pytest.raises(ParseError) as err:
        read_pf_csv(path)
    assert err.value.line_no == line_no


def test_hv_report_format(tmp_path):
    path = tmp_path / "report.csv"
    write_hv_report(path, [("inst0", "trained", 0.7312345, 7),
                           ("inst0", "random", 0.25, 10)])
    lines = path.read_text().splitlines()
    assert lines[0] == "instance,method,hv,n_points"
    assert lines[1] == "inst0,trained,0.73123450000000001,7"
    assert lines[2] == "inst0,random,0.25,10"
