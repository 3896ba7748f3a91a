import math
import warnings

import numpy as np
import pytest

from pamvalley.level_sets import (LineRegion, QuadrantRegion, ResourceError, SpaceTimeSet,
                                  ValleyParams, XiRegion, pixelate, shell_bounds, stretch,
                                  valley_set, xi_q)
from pamvalley.she import GridSpec, LatticeField, Trajectory


def synthetic_traj(fn, times, half=3.0, dx=0.5):
    g = GridSpec(dx=dx, dt=0.25, x_min=-half, x_max=half, t_end=max(times),
                 snapshot_times=tuple(times))
    snaps = [LatticeField(t, fn(t, g.x), g) for t in times]
    return Trajectory(snaps, 0, g, {"master_seed": 1})


TIMES = (1.0, 2.0, 2.75, 3.0, 4.0, 6.0)


def test_valley_params():
    ValleyParams(0.1, 2.0)
    with pytest.raises(ValueError):
        ValleyParams(0.0)
    with pytest.raises(ValueError):
        ValleyParams(0.1, -1.0)


def test_valley_examples():
    tr = synthetic_traj(lambda t, x: np.full(x.size, math.exp(-t / 12)), TIMES)
    assert len(valley_set(tr, 1 / 6)) == 0
    v = valley_set(tr, 1 / 24)
    late = [t for t in TIMES if t > math.e]
    assert len(v) == len(late) * tr.grid.m
    assert set(v.points[:, 0]) == set(late)


def test_valley_threshold_strict():
    g = 0.1
    tr = synthetic_traj(lambda t, x: np.full(x.size, math.exp(-g * t)), TIMES)
    assert len(valley_set(tr, g)) == 0


def test_valley_no_late_snapshot_warns():
    tr = synthetic_traj(lambda t, x: np.full(x.size, 1e-9), (1.0, 2.0))
    with pytest.warns(UserWarning, match="empty"):
        v = valley_set(tr, 0.1)
    assert len(v) == 0


def test_valley_gamma_containment():
    rng = np.random.default_rng(0)
    tr = synthetic_traj(lambda t, x: np.exp(-0.08 * t + 0.3 * rng.normal(size=x.size)), TIMES)
    gammas = [0.02, 0.04, 0.06, 0.08, 0.1, 0.12]
    sets = [valley_set(tr, g) for g in gammas]
    for a, b in zip(sets, sets[1:]):
        assert b.issubset(a)


def test_stretch_examples():
    s = stretch(SpaceTimeSet("real", [(2.0, 3.0)]), 1.0)
    assert s.points[0, 0] == pytest.approx(math.e ** 2) and s.points[0, 1] == 3.0
    assert s.points[0, 0] == pytest.approx(7.3891, abs=1e-4)
    big = stretch(SpaceTimeSet("real", [(1.0, 0.0)]), 1e6).points[0, 0]
    assert abs(big - (1 + 1e-6)) < 1e-5
    pts = np.random.default_rng(1).uniform(0.1, 5, size=(50, 2))
    out = stretch(SpaceTimeSet("real", pts), 2.5)
    assert len(out) == 50
    np.testing.assert_array_equal(np.sort(out.points[:, 1]), np.sort(pts[:, 1]))
    with pytest.raises(ValueError):
        stretch(SpaceTimeSet("real", [(0.0, 1.0)]), 1.0)


def test_pixelate_examples():
    assert pixelate(SpaceTimeSet("real", [(2.3, 0.7)])).points.tolist() == [[2, 0]]
    ints = SpaceTimeSet("pixel", [(3, -2), (5, 1)])
    assert pixelate(ints).points.tolist() == ints.points.tolist()
    assert len(pixelate(SpaceTimeSet("real", [(2.1, 0.2), (2.9, 0.8)]))) == 1
    neg = pixelate(SpaceTimeSet("real", [(1.5, -0.5)]))
    assert neg.points.tolist() == [[1, -1]]


def test_set_dedup_and_membership():
    s = SpaceTimeSet("pixel", [(1, 2), (1, 2), (3, 4)])
    assert len(s) == 2 and (1, 2) in s and (2, 1) not in s


def test_set_csv_round_trip(tmp_path):
    s = SpaceTimeSet("pixel", [(1, 2), (3, -4)], meta={"source": "test", "seed": 5})
    p = tmp_path / "s.csv"
    s.to_csv(p)
    header = open(p).readline()
    assert header.startswith("# kind=pixel, source=test, seed=5")
    back = SpaceTimeSet.from_csv(p)
    assert back.kind == "pixel" and back.points.tolist() == s.points.tolist()
    assert (tmp_path / "s.csv.json").exists()
    r = SpaceTimeSet("real", [(1.25, -0.5)])
    r.to_csv(tmp_path / "r.csv")
    assert SpaceTimeSet.from_csv(tmp_path / "r.csv").points.tolist() == [[1.25, -0.5]]


def brute_xi(q, n_max):
    s_hi, j_lo, j_hi = shell_bounds(n_max)
    out = set()
    for s in range(0, s_hi + 1):
        for j in range(j_lo, j_hi + 1):
            if s > 0 and j > 0 and j >= s ** q:
                out.add((s, j))
    return out


def test_shell_bounds():
    # integer points of V_1 = [0, e) x [-e, e): s in 0..2, j in -2..2
    assert shell_bounds(1) == (2, -2, 2)
    assert shell_bounds(3) == (20, -20, 20)
    assert shell_bounds(2) == (7, -7, 7)


def test_xi_examples():
    x1 = xi_q(1, 3)
    assert (3, 5) in x1 and (5, 3) not in x1
    for q in (0.3, 0.5, 1.0, 1.7, 2.0, 3.0):
        assert (1, 1) in xi_q(q, 2)


@pytest.mark.parametrize("q", [2.0, 0.5, 1.0, 1.5, 3.0, 0.25])
def test_xi_brute_force(q):
    pix = {tuple(p) for p in xi_q(q, 3).points.tolist()}
    assert pix == brute_xi(q, 3)


def test_xi2_count_n3():
    # s = 1..4 with j from s^2 to 20
    assert len(xi_q(2, 3)) == 54 == len(brute_xi(2, 3))


def test_xi_budget():
    with pytest.raises(ResourceError):
        xi_q(0.5, 12, budget=1000)
    with pytest.raises(ValueError):
        xi_q(0.0, 3)


REGIONS = [XiRegion(2.0), XiRegion(0.5), XiRegion(1.5), XiRegion(1 / 3), XiRegion(3.0),
           QuadrantRegion(), LineRegion()]


@pytest.mark.parametrize("region", REGIONS, ids=lambda r: str(r.describe()))
def test_region_classify_exact_all_sizes(region):
    rng = np.random.default_rng(8)
    for _ in range(300):
        r = int(2 ** rng.integers(0, 5))
        a, b = (int(v) for v in rng.integers(-5, 40, size=2))
        inside = [region.contains(s, j) for s in range(a, a + r) for j in range(b, b + r)]
        expect = 0 if not any(inside) else (2 if all(inside) else 1)
        assert region.classify(a, b, r) == expect


@pytest.mark.parametrize("region", REGIONS, ids=lambda r: str(r.describe()))
def test_region_column_count(region):
    s = np.arange(-2, 30)
    got = region.column_count(s, -3, 25)
    ref = [sum(region.contains(si, j) for j in range(-3, 25)) for si in s.tolist()]
    assert np.asarray(got).tolist() == ref


def test_region_matches_enumeration():
    region = XiRegion(2.0)
    pix = {tuple(p) for p in xi_q(2.0, 3).points.tolist()}
    s_hi, j_lo, j_hi = shell_bounds(3)
    for s in range(0, s_hi + 1):
        for j in range(j_lo, j_hi + 1):
            assert region.contains(s, j) == ((s, j) in pix)


def test_region_set():
    st = SpaceTimeSet.from_region(QuadrantRegion())
    assert (3, 4) in st and (0, 4) not in st
    with pytest.raises(TypeError):
        len(st)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert pixelate(st) is st
