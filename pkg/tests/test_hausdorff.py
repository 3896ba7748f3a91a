import json
import math

import numpy as np
import pytest

from pamvalley.hausdorff import (BudgetError, ContentTable, content_profile,
                                 density_lower_bound, dimension_estimate, mu_n, nu_content,
                                 shell_clip, single_scale_counts, top_level)
from pamvalley.level_sets import (LineRegion, QuadrantRegion, SpaceTimeSet, XiRegion,
                                  shell_bounds, xi_q)


# --- independent oracles ----------------------------------------------------

def in_shell(t, x, n):
    def inV(k):
        e = math.exp(k)
        return 0 <= t < e and -e <= x < e
    return inV(n) and not inV(n - 1)


def shell_cells(n):
    s_hi, j_lo, j_hi = shell_bounds(n)
    return [(s, j) for s in range(0, s_hi + 1) for j in range(j_lo, j_hi + 1) if in_shell(s, j, n)]


def exact_oracle(points, n, rho):
    """Minimum cover cost by set partition over all subsets (3^k dynamic program).

    A square covering a subset needs side max(spread_s, spread_j) + 1; any cover
    can be turned into a partition of no larger cost.
    """
    pts = [p for p in points if in_shell(p[0], p[1], n)]
    k = len(pts)
    if k == 0:
        return 0.0
    cost = [0.0] * (1 << k)
    for mask in range(1, 1 << k):
        sub = [pts[i] for i in range(k) if mask >> i & 1]
        ss = [p[0] for p in sub]
        jj = [p[1] for p in sub]
        side = max(max(ss) - min(ss), max(jj) - min(jj)) + 1
        cost[mask] = (side / math.exp(n)) ** rho
    best = [math.inf] * (1 << k)
    best[0] = 0.0
    for mask in range(1, 1 << k):
        low = mask & -mask
        rest = mask ^ low
        sub = rest
        while True:
            m = sub | low
            v = cost[m] + best[mask ^ m]
            if v < best[mask]:
                best[mask] = v
            if sub == 0:
                break
            sub = (sub - 1) & rest
    return best[-1]


def single_oracle(points, n, rho):
    pts = [p for p in points if in_shell(p[0], p[1], n)]
    if not pts:
        return 0.0
    K = math.ceil(n * math.log2(math.e))
    best = math.inf
    for k in range(K + 1):
        boxes = {(s >> k, j >> k) for s, j in pts}
        best = min(best, len(boxes) * ((2 ** k) / math.exp(n)) ** rho)
    return best


def mu_oracle(points, n, gamma):
    c = 0
    for s, j in points:
        if math.exp(n) < s <= math.exp(n + 1) and 0 <= j < math.exp(n * (1 - gamma)):
            c += 1
    return c


def random_shell_set(rng, n, k):
    cells = shell_cells(n)
    idx = rng.choice(len(cells), size=min(k, len(cells)), replace=False)
    return [cells[i] for i in idx]


def pix(points):
    return SpaceTimeSet("pixel", np.array(points, dtype=np.int64).reshape(-1, 2))


# --- shells -----------------------------------------------------------------

def test_shell_clip_examples():
    st = SpaceTimeSet("real", [(1.5, 0.0), (0.5, 0.0)])
    assert shell_clip(st, 1).points.tolist() == [[1.5, 0.0]]
    for n in range(1, 6):
        assert [0.5, 0.0] not in shell_clip(st, n).points.tolist()


def test_shell_clip_partition():
    rng = np.random.default_rng(0)
    pts = np.column_stack([rng.uniform(0, 150, 500), rng.uniform(-150, 150, 500)])
    st = SpaceTimeSet("real", pts)
    parts = [shell_clip(st, n) for n in range(1, 7)]
    total = sum(len(p) for p in parts)
    outside_v0 = sum(1 for t, x in st.points if not (t < 1 and -1 <= x < 1))
    assert total == outside_v0
    for n, p in enumerate(parts, start=1):
        assert all(in_shell(t, x, n) for t, x in p.points)


# --- nu_content -------------------------------------------------------------

def test_empty_set_zero():
    for strat in ("exact_small", "single_scale", "greedy_multiscale"):
        assert nu_content(pix([]), 2, 1.0, strat) == 0.0


@pytest.mark.parametrize("strategy", ["exact_small", "single_scale", "greedy_multiscale"])
@pytest.mark.parametrize("n,rho", [(1, 0.5), (2, 1.0), (3, 1.7), (5, 0.2)])
def test_single_point(strategy, n, rho):
    p = shell_cells(n)[3]
    assert nu_content(pix([p]), n, rho, strategy) == pytest.approx(math.exp(-n * rho))


def test_five_points_s2():
    rng = np.random.default_rng(11)
    pts = random_shell_set(rng, 2, 5)
    st = pix(pts)
    ex = nu_content(st, 2, 1.0, "exact_small")
    gr = nu_content(st, 2, 1.0, "greedy_multiscale")
    ss = nu_content(st, 2, 1.0, "single_scale")
    assert ex == pytest.approx(exact_oracle(pts, 2, 1.0), rel=1e-12)
    assert ex <= gr + 1e-12 <= ss + 2e-12


@pytest.mark.parametrize("seed", range(6))
def test_exact_matches_partition_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    k = int(rng.integers(1, 11))
    pts = random_shell_set(rng, n, k)
    for rho in (0.3, 1.0, 1.6):
        assert nu_content(pix(pts), n, rho, "exact_small") == pytest.approx(
            exact_oracle(pts, n, rho), rel=1e-12)


@pytest.mark.parametrize("seed", range(6))
def test_single_scale_matches_oracle(seed):
    rng = np.random.default_rng(100 + seed)
    n = int(rng.integers(1, 5))
    pts = random_shell_set(rng, n, int(rng.integers(1, 60)))
    for rho in (0.1, 0.9, 2.0):
        assert nu_content(pix(pts), n, rho, "single_scale") == pytest.approx(
            single_oracle(pts, n, rho), rel=1e-12)


def test_exact_budget():
    pts = random_shell_set(np.random.default_rng(0), 3, 30)
    with pytest.raises(BudgetError):
        nu_content(pix(pts), 3, 1.0, "exact_small")
    with pytest.raises(BudgetError):
        nu_content(SpaceTimeSet.from_region(QuadrantRegion()), 3, 1.0, "exact_small")


def test_real_points_use_pixels():
    # (2.2, 0.3) lies in V_1; (2.9, 0.9) is in S_2 although its pixel (2, 0) is not
    st = SpaceTimeSet("real", [(2.2, 0.3), (2.9, 0.9), (5.5, -3.5)])
    a = nu_content(st, 2, 0.8, "exact_small")
    assert a == pytest.approx(2 * math.exp(-2 * 0.8))
    assert nu_content(SpaceTimeSet("real", [(2.9, 0.1), (2.95, 0.7)]), 2, 0.8) == pytest.approx(
        math.exp(-1.6))


def test_bad_arguments():
    with pytest.raises(ValueError):
        nu_content(pix([(3, 0)]), 0, 1.0)
    with pytest.raises(ValueError):
        nu_content(pix([(3, 0)]), 1, -1.0)
    with pytest.raises(ValueError):
        nu_content(pix([(3, 0)]), 1, 1.0, "nope")


def test_scale_bounds():
    rng = np.random.default_rng(5)
    for n in (2, 3, 4):
        pts = random_shell_set(rng, n, 200)
        units = len(set(pts))
        for rho in (0.5, 1.0, 2.0):
            v = nu_content(pix(pts), n, rho)
            assert v <= 2 * math.e * units * math.exp(-n * rho)
            # V_n (height 2e^n) is covered by two squares of side 2^(K+1) < 4e^n
            assert v <= 2 * 4 ** rho


def test_region_matches_enumerated_set():
    for q in (2.0, 0.5):
        region = SpaceTimeSet.from_region(XiRegion(q))
        enum = xi_q(q, 5)
        for n in (2, 4, 5):
            for strat in ("single_scale", "greedy_multiscale"):
                a = content_profile(region, n, [0.5, 1.0, 1.5], strat)
                # enumeration uses dense offsets for tiny shells; compare on offset 0 via large sets
                b = content_profile(enum, n, [0.5, 1.0, 1.5], strat)
                if strat == "single_scale" or len(shell_clip(enum, n)) > 64:
                    np.testing.assert_allclose(a, b, rtol=1e-12)
                else:
                    assert np.all(b <= a + 1e-12)
    line = SpaceTimeSet.from_region(LineRegion())
    enum_line = pix([(s, 0) for s in range(1, 150)])
    assert np.allclose(single_scale_counts(line, 4), single_scale_counts(enum_line, 4))


def test_profile_matches_single_calls():
    pts = random_shell_set(np.random.default_rng(9), 3, 15)
    rhos = [0.2, 0.7, 1.3]
    prof = content_profile(pix(pts), 3, rhos)
    assert prof.tolist() == [nu_content(pix(pts), 3, r) for r in rhos]


def test_top_level():
    assert top_level(1) == 2 and top_level(3) == 5 and top_level(12) == 18


# --- mu_n and density bound ---------------------------------------------------

def test_mu_examples():
    assert mu_n(pix([]), 1, 0.5) == 0
    assert mu_n(pix([(3, 0)]), 1, 0.5) == 1
    with pytest.raises(TypeError, match="pixelate"):
        mu_n(SpaceTimeSet("real", [(3.0, 0.0)]), 1, 0.5)
    with pytest.raises(ValueError):
        mu_n(pix([(3, 0)]), 1, 2.0)


@pytest.mark.parametrize("n", range(1, 7))
@pytest.mark.parametrize("gamma", [0.25, 0.5, 1.0, 1.5])
def test_mu_full_grid(n, gamma):
    s_hi = math.floor(math.exp(n + 1)) + 2
    j_hi = math.ceil(math.exp(n * (1 - gamma))) + 2
    grid = [(s, j) for s in range(0, s_hi) for j in range(-3, j_hi)]
    count_s = sum(1 for s in range(0, s_hi) if math.exp(n) < s <= math.exp(n + 1))
    count_j = sum(1 for j in range(-3, j_hi) if 0 <= j < math.exp(n * (1 - gamma)))
    assert mu_n(pix(grid), n, gamma) == count_s * count_j == mu_oracle(grid, n, gamma)


def test_mu_region_matches_enumeration():
    for q in (2.0, 0.5):
        for n in (1, 2, 3):
            for g in (0.25, 0.5, 1.5):
                assert mu_n(SpaceTimeSet.from_region(XiRegion(q)), n, g) == mu_n(xi_q(q, n + 1), n, g)


def test_density_bound():
    assert density_lower_bound(pix([]), 1, 0.5) == 0.0
    assert density_lower_bound(pix([(3, 0)]), 1, 0.5) == pytest.approx(0.22313, abs=1e-5)
    one = density_lower_bound(pix([(3, 0)]), 1, 0.5)
    assert density_lower_bound(pix([(3, 0), (4, 1), (5, 0)]), 1, 0.5) == pytest.approx(3 * one)


def test_density_diagnostic_small_sets():
    # constant-1 density bound vs exact content; logged, the true constant is unknown
    rng = np.random.default_rng(3)
    fails = 0
    for _ in range(40):
        n = int(rng.integers(1, 3))
        cells = [(s, j) for s in range(math.floor(math.exp(n)) + 1, math.floor(math.exp(n + 1)) + 1)
                 for j in range(0, 8)]
        idx = rng.choice(len(cells), size=min(int(rng.integers(1, 12)), len(cells)), replace=False)
        pts = [cells[i] for i in idx]
        g = float(rng.choice([0.25, 0.5, 1.0, 1.5]))
        ex = nu_content(pix(pts), n, 2 - g, "exact_small") + nu_content(pix(pts), n + 1, 2 - g, "exact_small")
        if ex < density_lower_bound(pix(pts), n, g):
            fails += 1
    print(f"density bound (C = 1) violated on {fails}/40 small sets")


# --- tables and dimension ------------------------------------------------------

def test_content_table(tmp_path):
    t = ContentTable()
    t.add(1, 0.5, 2.0, "single_scale", mu=3)
    t.add(2, 0.5, 1.0, "single_scale")
    assert t.partial_sums(0.5).tolist() == [2.0, 3.0]
    t.to_csv(tmp_path / "c.csv")
    lines = open(tmp_path / "c.csv").read().splitlines()
    assert lines[0] == "n,rho,nu_hat,mu_n,strategy"
    assert len(lines) == 3


def test_dimension_undefined_for_empty():
    est = dimension_estimate(pix([]))
    assert est.status == "undefined" and est.rho_star is None
    json.loads(est.to_json())


def test_dimension_argument_checks():
    with pytest.raises(ValueError):
        dimension_estimate(pix([(3, 0)]), n_range=[1, 2, 3])
    with pytest.raises(ValueError):
        dimension_estimate(pix([(3, 0)]), rho_grid=[0.5, 1.0, 1.5])


def test_dimension_line_and_quadrant_quick():
    est = dimension_estimate(SpaceTimeSet.from_region(LineRegion()), n_range=range(4, 9))
    assert est.rho_star == pytest.approx(1.0, abs=0.1)
    assert 0.0 <= est.band[0] <= est.rho_star <= est.band[1] <= 2.0
    est = dimension_estimate(SpaceTimeSet.from_region(QuadrantRegion()), n_range=range(4, 9))
    assert est.rho_star == pytest.approx(2.0, abs=0.1)


def test_dimension_table_filled(tmp_path):
    table = ContentTable()
    est = dimension_estimate(SpaceTimeSet.from_region(LineRegion()), n_range=range(3, 7), table=table)
    assert len(table.rows) == len(est.rho_grid) * 4
    est.to_json(tmp_path / "d.json")
    assert json.load(open(tmp_path / "d.json"))["status"] == "ok"


def test_dimension_of_finite_set_is_zero():
    # a bounded set has no content beyond the shells it meets
    est = dimension_estimate(pix([(3, 0), (5, 1), (12, 4)]), n_range=range(1, 7))
    assert est.rho_star <= 0.25 or est.status == "undefined"
