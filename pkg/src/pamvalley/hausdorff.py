"""Macroscopic Hausdorff content on exponential shells and dimension read-off.

Shells are ``S_n = V_n minus V_{n-1}`` with ``V_n = [0, e^n) x [-e^n, e^n)``.
The content of a set ``E`` in shell ``n`` at exponent ``rho`` is

    nu_{n, rho}(E) = inf sum_i (side(Q_i) / e^n)^rho

over covers of ``E`` intersected with ``S_n`` by half-open squares of side at least 1.
Covers are restricted to integer corners and integer sides; for a real point
``p`` and an integer box, ``p`` in box iff ``floor(p)`` in box, so every set is
handled through its pixelation.

Three strategies:

``exact_small``
    weighted set cover solved exactly by branch and bound (small sets only).
``single_scale``
    best single dyadic grid: ``min_r N_r (r / e^n)^rho``.
``greedy_multiscale``
    optimal cover by dyadic squares of mixed sizes, minimised over a fixed
    family of grid offsets.  Each offset is solved exactly by a quadtree
    recursion, so the value is monotone in the set; the zero offset alone is
    already at most ``single_scale``.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import isotonic_regression
from scipy.stats import linregress

from .level_sets import Region, SpaceTimeSet, pixelate, shell_bounds

STRATEGIES = ("exact_small", "single_scale", "greedy_multiscale")
EXACT_BUDGET = 24
DENSE_OFFSET_POINTS = 64


class BudgetError(RuntimeError):
    """The exact solver was asked for more points than its budget."""


# ---------------------------------------------------------------------------
# shells


def _in_shell_real(t, x, n):
    en, ep = math.exp(n), math.exp(n - 1)
    outer = (t >= 0) & (t < en) & (x >= -en) & (x < en)
    inner = (t >= 0) & (t < ep) & (x >= -ep) & (x < ep)
    return outer & ~inner


def shell_clip(st: SpaceTimeSet, n: int) -> SpaceTimeSet:
    """Points of ``st`` lying in ``S_n``."""
    if n < 1:
        raise ValueError("n >= 1 required")
    if st.kind == "region":
        return st
    p = st.points
    if p.shape[0] == 0:
        return SpaceTimeSet(st.kind, p, meta=dict(st.meta))
    keep = _in_shell_real(p[:, 0], p[:, 1], n)
    return SpaceTimeSet(st.kind, p[keep], meta={**st.meta, "shell": n})


def _shell_pixels(st: SpaceTimeSet, n: int) -> np.ndarray:
    return pixelate(shell_clip(st, n)).points


def top_level(n: int) -> int:
    """``K`` with ``2^K`` the largest single-scale box, ``K = ceil(n log2 e)``."""
    return max(0, math.ceil(n * math.log2(math.e) - 1e-12))


# ---------------------------------------------------------------------------
# dyadic trees


@dataclass
class _Tree:
    """Nonempty dyadic nodes of one shell, level 0 (unit boxes) upward.

    The top level is one above the largest single-scale box, so a single
    square can cover the whole of ``V_n``.

    ``full[k]`` marks nodes whose box lies entirely inside the set (leaves);
    ``parent[k]`` indexes level ``k + 1``.
    """

    n: int
    a: list
    b: list
    full: list
    parent: list

    @property
    def K(self):
        return len(self.a) - 1


def _shell_classify(a, b, r, n):
    """0 / 1 / 2 = box misses / meets / lies inside ``S_n`` (integer pixels)."""
    s_hi, j_lo, j_hi = shell_bounds(n)
    i_hi, ij_lo, ij_hi = shell_bounds(n - 1)
    a_last = a + r - 1
    b_last = b + r - 1
    # intersection with the outer rectangle
    ca, cb = np.maximum(a, 0), np.maximum(b, j_lo)
    ca2, cb2 = np.minimum(a_last, s_hi), np.minimum(b_last, j_hi)
    meets_outer = (ca <= ca2) & (cb <= cb2)
    in_inner = (ca2 <= i_hi) & (cb >= ij_lo) & (cb2 <= ij_hi)
    nonempty = meets_outer & ~in_inner
    inside_outer = (a >= 0) & (a_last <= s_hi) & (b >= j_lo) & (b_last <= j_hi)
    meets_inner = (a <= i_hi) & (a_last >= 0) & (b <= ij_hi) & (b_last >= ij_lo)
    full = inside_outer & ~meets_inner
    out = np.where(nonempty, 1, 0).astype(np.int8)
    out[nonempty & full] = 2
    return out


def _roots(n, K, offset):
    s_hi, j_lo, j_hi = shell_bounds(n)
    R = 1 << K
    o1, o2 = offset
    a0 = o1 - R * math.ceil((o1 - 0) / R)
    while a0 + R - 1 < 0:
        a0 += R
    b0 = o2 - R * math.ceil((o2 - j_lo) / R)
    while b0 + R - 1 < j_lo:
        b0 += R
    aa = np.arange(a0, s_hi + 1, R, dtype=np.int64)
    bb = np.arange(b0, j_hi + 1, R, dtype=np.int64)
    A, B = np.meshgrid(aa, bb, indexing="ij")
    return A.ravel(), B.ravel()


def _region_tree(region: Region, n: int, offset=(0, 0)) -> _Tree:
    K = top_level(n) + 1
    a, b = _roots(n, K, offset)
    levels_a, levels_b, levels_full, levels_parent = [], [], [], []
    parent_of_current = np.full(a.shape[0], -1, dtype=np.int64)
    for k in range(K, -1, -1):
        r = 1 << k
        cls = np.minimum(_shell_classify(a, b, r, n), region.classify(a, b, r))
        full = cls == 2
        keep = cls > 0
        a, b, full, par = a[keep], b[keep], full[keep], parent_of_current[keep]
        levels_a.append(a)
        levels_b.append(b)
        levels_full.append(full)
        levels_parent.append(par)
        if k == 0:
            break
        split = np.nonzero(~full)[0]
        h = r >> 1
        ca = np.repeat(a[split], 4) + np.tile(np.array([0, h, 0, h], dtype=np.int64), split.size)
        cb = np.repeat(b[split], 4) + np.tile(np.array([0, 0, h, h], dtype=np.int64), split.size)
        parent_of_current = np.repeat(split, 4)
        a, b = ca, cb
    levels_a.reverse()
    levels_b.reverse()
    levels_full.reverse()
    levels_parent.reverse()
    # levels_parent[k] indexes level k + 1
    return _Tree(n, levels_a, levels_b, levels_full, levels_parent)


def _pixel_tree(pix: np.ndarray, n: int, offset=(0, 0)) -> _Tree:
    K = top_level(n) + 1
    o = np.asarray(offset, dtype=np.int64)
    rel = pix - o
    la, lb, lf, lp = [], [], [], []
    cur = np.unique(rel, axis=0) if rel.shape[0] else np.empty((0, 2), dtype=np.int64)
    for k in range(K + 1):
        la.append(cur[:, 0] + o[0])
        lb.append(cur[:, 1] + o[1])
        lf.append(np.full(cur.shape[0], k == 0))
        if k == K:
            lp.append(np.full(cur.shape[0], -1, dtype=np.int64))
            break
        # parent corner at level k + 1
        pk = np.floor_divide(cur, 1 << (k + 1)) * (1 << (k + 1)) if cur.shape[0] else cur
        nxt, inv = (np.unique(pk, axis=0, return_inverse=True) if pk.shape[0]
                    else (pk, np.empty(0, dtype=np.int64)))
        lp.append(np.asarray(inv, dtype=np.int64).ravel())
        cur = nxt
    return _Tree(n, la, lb, lf, lp)


def _side_costs(n, K, rho):
    return np.array([((1 << k) * math.exp(-n)) ** rho for k in range(K + 1)])


def _full_costs(c):
    # best dyadic cover of a completely filled box at each level
    f = np.empty_like(c)
    f[0] = c[0]
    for k in range(1, c.shape[0]):
        f[k] = min(c[k], 4.0 * f[k - 1])
    return f


def _tree_dp(tree: _Tree, rho: float) -> float:
    K = tree.K
    c = _side_costs(tree.n, K, rho)
    f = _full_costs(c)
    cost = np.where(tree.full[0], f[0], 0.0)
    for k in range(1, K + 1):
        m = tree.a[k].shape[0]
        child = np.bincount(tree.parent[k - 1], weights=cost, minlength=m) if cost.size else np.zeros(m)
        cost = np.where(tree.full[k], f[k], np.minimum(c[k], child))
    return float(cost.sum())


def _tree_counts(tree: _Tree) -> np.ndarray:
    """Occupied aligned boxes per level, ``N_k`` for ``k = 0..K``."""
    K = tree.K
    nonempty = [None] * (K + 1)
    nonempty[0] = np.ones(tree.a[0].shape[0], dtype=bool)
    for k in range(1, K + 1):
        m = tree.a[k].shape[0]
        kids = np.bincount(tree.parent[k - 1], weights=nonempty[k - 1].astype(float), minlength=m)
        nonempty[k] = tree.full[k] | (kids > 0)
    counts = np.zeros(K + 1)
    for k in range(K + 1):
        counts[k] += np.count_nonzero(nonempty[k])
        # full leaves stand for all their descendants
        fl = np.count_nonzero(tree.full[k] & nonempty[k])
        for j in range(k):
            counts[j] += fl * 4.0 ** (k - j)
    return counts


def _offsets(n: int, dense: bool):
    K = top_level(n)
    R = 1 << K
    if not dense:
        return [(0, 0)]
    step = max(1, R // 8)
    vals = range(0, R, step)
    return [(o1, o2) for o1 in vals for o2 in vals]


# ---------------------------------------------------------------------------
# exact solver


def cover_candidates(pix: np.ndarray, n: int, rho: float):
    """Candidate squares spanned by the points: ``(masks, costs, sides, corners)``.

    Any square of an optimal cover can be shrunk to the square with corner
    ``(min s, min j)`` over the points it covers and side ``max(spread) + 1``;
    all such squares are enumerated, deduplicated by coverage.
    """
    N = pix.shape[0]
    s, j = pix[:, 0], pix[:, 1]
    A = np.unique(s)
    B = np.unique(j)
    Aa, Bb, C = np.meshgrid(A, B, np.arange(N), indexing="ij")
    Aa, Bb, C = Aa.ravel(), Bb.ravel(), C.ravel()
    ok = (s[C] >= Aa) & (j[C] >= Bb)
    Aa, Bb, C = Aa[ok], Bb[ok], C[ok]
    side = np.maximum(s[C] - Aa, j[C] - Bb) + 1
    inside = ((s[None, :] >= Aa[:, None]) & (s[None, :] < (Aa + side)[:, None])
              & (j[None, :] >= Bb[:, None]) & (j[None, :] < (Bb + side)[:, None]))
    weights = np.array([1 << i for i in range(N)], dtype=object)
    masks = np.array([int(x) for x in (inside.astype(object) @ weights)], dtype=object)
    cost = (side * math.exp(-n)) ** rho
    order = np.lexsort((cost, masks.astype(str)))
    best = {}
    for idx in order:
        mk = int(masks[idx])
        if mk not in best or cost[idx] < best[mk][0]:
            best[mk] = (float(cost[idx]), int(side[idx]), (int(Aa[idx]), int(Bb[idx])))
    keys = list(best)
    return (keys, [best[k][0] for k in keys], [best[k][1] for k in keys],
            [best[k][2] for k in keys])


def _exact_cover(pix: np.ndarray, n: int, rho: float, upper: float) -> float:
    N = pix.shape[0]
    if N == 0:
        return 0.0
    masks, costs, _, _ = cover_candidates(pix, n, rho)
    # drop candidates dominated by a cheaper superset
    order = sorted(range(len(masks)), key=lambda i: (costs[i], -bin(masks[i]).count("1")))
    kept_m, kept_c = [], []
    for i in order:
        mi = masks[i]
        if any((mi & ~mk) == 0 for mk in kept_m):
            continue
        kept_m.append(mi)
        kept_c.append(costs[i])
    pop = [bin(m).count("1") for m in kept_m]
    h = [min(c / p for m, c, p in zip(kept_m, kept_c, pop) if m >> q & 1) for q in range(N)]
    by_point = []
    for q in range(N):
        cand = [(c, m) for m, c in zip(kept_m, kept_c) if m >> q & 1]
        cand.sort(key=lambda cm: cm[0] / bin(cm[1]).count("1"))
        by_point.append(cand)
    full = (1 << N) - 1
    best = [upper]
    seen = {}

    def lower(unc):
        tot = 0.0
        while unc:
            low = unc & -unc
            tot += h[low.bit_length() - 1]
            unc ^= low
        return tot

    def rec(unc, cost):
        if unc == 0:
            if cost < best[0]:
                best[0] = cost
            return
        if cost + lower(unc) >= best[0]:
            return
        prev = seen.get(unc)
        if prev is not None and prev <= cost:
            return
        seen[unc] = cost
        # branch on the uncovered point with the fewest options
        q = min((i for i in range(N) if unc >> i & 1), key=lambda i: len(by_point[i]))
        for c, m in by_point[q]:
            rec(unc & ~m, cost + c)

    rec(full, 0.0)
    return best[0]


# ---------------------------------------------------------------------------
# public content functions


def nu_content(st: SpaceTimeSet, n: int, rho: float, strategy: str = "greedy_multiscale",
               budget: int = EXACT_BUDGET) -> float:
    """Content ``nu_{n, rho}`` of ``st`` in shell ``n`` (restricted infimum).

    Parameters
    ----------
    st : SpaceTimeSet
        Real, pixel or implicit-region set; clipped to ``S_n`` internally.
    n : int
        Shell index, ``n >= 1``.
    rho : float
        Exponent, ``rho >= 0``.
    strategy : str
        ``exact_small``, ``single_scale`` or ``greedy_multiscale``.
    budget : int
        Point budget for ``exact_small``.
    """
    if n < 1:
        raise ValueError("n >= 1 required")
    if rho < 0:
        raise ValueError("rho >= 0 required")
    if strategy not in STRATEGIES:
        raise ValueError(f"strategy must be one of {STRATEGIES}")
    return content_profile(st, n, [rho], strategy, budget)[0]


def content_profile(st: SpaceTimeSet, n: int, rhos: Sequence[float],
                    strategy: str = "greedy_multiscale", budget: int = EXACT_BUDGET) -> np.ndarray:
    """``nu_{n, rho}`` for several ``rho`` sharing one tree construction."""
    rhos = [float(r) for r in rhos]
    if st.kind == "region":
        if strategy == "exact_small":
            raise BudgetError("exact_small needs a finite pixel set")
        trees = [_region_tree(st.region, n, o) for o in _offsets(n, dense=False)]
        pix = None
    else:
        pix = _shell_pixels(st, n)
        if pix.shape[0] == 0:
            return np.zeros(len(rhos))
        if strategy == "exact_small" and pix.shape[0] > budget:
            raise BudgetError(f"exact_small budget is {budget} points, shell {n} holds {pix.shape[0]}")
        dense = pix.shape[0] <= DENSE_OFFSET_POINTS and strategy != "single_scale"
        offs = _offsets(n, dense) if strategy != "single_scale" else [(0, 0)]
        trees = [_pixel_tree(pix, n, o) for o in offs]
    out = np.empty(len(rhos))
    if strategy == "single_scale":
        K = top_level(n)
        counts = _tree_counts(trees[0])[:K + 1]
        for i, rho in enumerate(rhos):
            out[i] = float(np.min(counts * _side_costs(n, K, rho)))
        return out
    for i, rho in enumerate(rhos):
        out[i] = min(_tree_dp(t, rho) for t in trees)
    if strategy == "exact_small":
        for i, rho in enumerate(rhos):
            out[i] = _exact_cover(pix, n, rho, out[i])
    return out


def single_scale_counts(st: SpaceTimeSet, n: int) -> np.ndarray:
    """Occupied aligned ``2^k`` boxes in shell ``n`` for ``k = 0..K``."""
    K = top_level(n)
    if st.kind == "region":
        return _tree_counts(_region_tree(st.region, n))[:K + 1]
    pix = _shell_pixels(st, n)
    if pix.shape[0] == 0:
        return np.zeros(K + 1)
    return _tree_counts(_pixel_tree(pix, n))[:K + 1]


def _mu_bounds(n, gamma):
    s_lo = math.floor(math.exp(n)) + 1
    s_hi = math.floor(math.exp(n + 1))
    j_hi = math.ceil(math.exp(n * (1.0 - gamma))) - 1
    return s_lo, s_hi, j_hi


def mu_n(st: SpaceTimeSet, n: int, gamma: float) -> int:
    """Pixels ``(s, j)`` of the set with ``e^n < s <= e^{n+1}`` and ``0 <= j < e^{n(1-gamma)}``."""
    if not 0 < gamma < 2:
        raise ValueError("gamma must lie in (0, 2)")
    s_lo, s_hi, j_hi = _mu_bounds(n, gamma)
    if st.kind == "region":
        s = np.arange(s_lo, s_hi + 1, dtype=np.int64)
        return int(st.region.column_count(s, 0, j_hi + 1).sum())
    if st.kind != "pixel":
        raise TypeError("mu_n needs a pixel set; call pixelate() first")
    p = st.points
    if p.shape[0] == 0:
        return 0
    sel = (p[:, 0] >= s_lo) & (p[:, 0] <= s_hi) & (p[:, 1] >= 0) & (p[:, 1] <= j_hi)
    return int(np.count_nonzero(sel))


def density_lower_bound(st: SpaceTimeSet, n: int, gamma: float) -> float:
    """``e^{-(2 - gamma) n} mu_n``: the density bound with its constant set to 1."""
    return math.exp(-(2.0 - gamma) * n) * mu_n(st, n, gamma)


# ---------------------------------------------------------------------------
# tables and dimension read-off


@dataclass
class ContentTable:
    rows: list = field(default_factory=list)

    def add(self, n, rho, nu_hat, strategy, mu=None, gamma=None):
        self.rows.append({"n": int(n), "rho": float(rho), "nu_hat": float(nu_hat),
                          "mu_n": mu, "gamma": gamma, "strategy": strategy})

    def values(self, rho_grid, n_range):
        lut = {(r["n"], r["rho"]): r["nu_hat"] for r in self.rows}
        return np.array([[lut[(n, float(r))] for n in n_range] for r in rho_grid])

    def partial_sums(self, rho):
        rows = sorted((r for r in self.rows if r["rho"] == float(rho)), key=lambda r: r["n"])
        return np.cumsum([r["nu_hat"] for r in rows])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "rho", "nu_hat", "mu_n", "strategy"])
            for r in self.rows:
                w.writerow([r["n"], repr(r["rho"]), repr(r["nu_hat"]),
                            "" if r["mu_n"] is None else r["mu_n"], r["strategy"]])


@dataclass
class DimensionEstimate:
    """Result of :func:`dimension_estimate`.

    ``status`` is ``"ok"`` or ``"undefined"`` (every shell empty, ``rho_star`` None).
    """

    status: str
    rho_star: Optional[float]
    rho_grid: list
    n_range: list
    strategy: str
    slopes: list = field(default_factory=list)
    slope_stderr: list = field(default_factory=list)
    slopes_isotonic: list = field(default_factory=list)
    band: Optional[list] = None
    kappa: Optional[float] = None

    def to_json(self, path=None):
        text = json.dumps(asdict(self), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def hinge_fit(rho, b):
    """Fit ``b(rho) = -kappa * max(0, rho - r0)`` by least squares; return ``(r0, kappa)``.

    Below the dimension the content stays of order one (slope 0); above it
    the content decays at rate growing linearly in ``rho``.
    """
    rho = np.asarray(rho, dtype=float)
    b = np.asarray(b, dtype=float)
    span = rho.max() - rho.min()
    cand = np.linspace(rho.min() - 0.5 * span, rho.max(), 4001)
    best = (np.inf, rho.max(), 0.0)
    for r0 in cand:
        z = np.maximum(0.0, rho - r0)
        zz = float(z @ z)
        kappa = max(0.0, -float(z @ b) / zz) if zz > 0 else 0.0
        sse = float(np.sum((b + kappa * z) ** 2))
        if sse < best[0] - 1e-15:
            best = (sse, r0, kappa)
    return best[1], best[2]


def dimension_estimate(st: SpaceTimeSet, rho_grid=None, n_range=None,
                       strategy: str = "greedy_multiscale", table: Optional[ContentTable] = None):
    """Estimate the macroscopic dimension from the growth of ``nu_{n, rho}`` in ``n``.

    For each ``rho`` the slope ``b(rho)`` of ``log nu`` against ``n`` is fitted;
    ``b`` is made nonincreasing by isotonic regression and the dimension is
    read off as the kink of a hinge fit (``b = 0`` up to the kink, then linear
    decay), clipped to ``[0, 2]``.

    Parameters
    ----------
    st : SpaceTimeSet
    rho_grid : sequence of float, optional
        Defaults to ``0.05, 0.10, ..., 2.50``; must reach at least 2.
    n_range : sequence of int, optional
        At least four shells; defaults to ``4..12``.
    strategy : str
    table : ContentTable, optional
        Filled with the computed contents when given.
    """
    rho_grid = np.round(np.arange(1, 51) * 0.05, 10) if rho_grid is None else np.asarray(rho_grid, float)
    n_range = list(range(4, 13)) if n_range is None else [int(n) for n in n_range]
    if len(n_range) < 4:
        raise ValueError("dimension_estimate needs at least 4 shells")
    if rho_grid.min() > 0.25 or rho_grid.max() < 2.0:
        raise ValueError("rho_grid must span [0, 2]")
    nu = np.empty((rho_grid.size, len(n_range)))
    for k, n in enumerate(n_range):
        nu[:, k] = content_profile(st, n, rho_grid, strategy)
        if table is not None:
            for r, v in zip(rho_grid, nu[:, k]):
                table.add(n, r, v, strategy)
    base = dict(rho_grid=rho_grid.tolist(), n_range=n_range, strategy=strategy)
    occupied = nu[0] > 0
    if not occupied.any():
        return DimensionEstimate(status="undefined", rho_star=None, **base)
    ns = np.asarray(n_range, dtype=float)[occupied]
    if ns.size < 2:
        return DimensionEstimate(status="undefined", rho_star=None, **base)
    slopes, errs = [], []
    for i in range(rho_grid.size):
        fit = linregress(ns, np.log(nu[i, occupied]))
        slopes.append(float(fit.slope))
        errs.append(float(fit.stderr) if np.isfinite(fit.stderr) else 0.0)
    slopes = np.array(slopes)
    errs = np.array(errs)
    iso = isotonic_regression(slopes, increasing=False).x
    r0, kappa = hinge_fit(rho_grid, iso)
    lo, _ = hinge_fit(rho_grid, isotonic_regression(slopes + 2 * errs, increasing=False).x)
    hi, _ = hinge_fit(rho_grid, isotonic_regression(slopes - 2 * errs, increasing=False).x)
    clip = lambda v: float(min(2.0, max(0.0, v)))
    return DimensionEstimate(
        status="ok", rho_star=clip(r0), slopes=slopes.tolist(), slope_stderr=errs.tolist(),
        slopes_isotonic=iso.tolist(), band=sorted([clip(lo), clip(hi)]), kappa=float(kappa), **base)
