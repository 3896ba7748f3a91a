import math
import warnings

import numpy as np
from hypothesis import given, settings, strategies as st

from pamvalley.hausdorff import mu_n, nu_content
from pamvalley.level_sets import SpaceTimeSet, pixelate, shell_bounds, stretch, valley_nodes
from pamvalley.noise import NoiseStream, gaussian, noise_plane
from pamvalley.she import GridSpec, InitialData, simulate_block
from pamvalley.noise import derive_key
from pamvalley.tails import wilson

FAST = settings(max_examples=40, deadline=None, derandomize=True)


def pixels_in_shell(n):
    s_hi, j_lo, j_hi = shell_bounds(n)
    return st.lists(st.tuples(st.integers(0, s_hi), st.integers(j_lo, j_hi)), min_size=1,
                    max_size=12, unique=True)


@FAST
@given(pixels_in_shell(2), st.data(), st.sampled_from([0.25, 0.5, 1.0, 1.5, 2.0]))
def test_content_monotone_in_set(pts, data, rho):
    k = data.draw(st.integers(1, len(pts)))
    sub = SpaceTimeSet("pixel", pts[:k])
    full = SpaceTimeSet("pixel", pts)
    for strat in ("exact_small", "single_scale", "greedy_multiscale"):
        assert nu_content(sub, 2, rho, strat) <= nu_content(full, 2, rho, strat) + 1e-12


@FAST
@given(pixels_in_shell(2), st.sampled_from([0.25, 0.5, 1.0, 1.5, 2.0]))
def test_strategy_ordering(pts, rho):
    s = SpaceTimeSet("pixel", pts)
    ex = nu_content(s, 2, rho, "exact_small")
    gr = nu_content(s, 2, rho, "greedy_multiscale")
    sc = nu_content(s, 2, rho, "single_scale")
    assert ex <= gr + 1e-12 <= sc + 2e-12
    assert ex <= len(pts) * math.exp(-2 * rho) + 1e-12


@FAST
@given(pixels_in_shell(3), st.floats(0.05, 1.95), st.floats(0.05, 1.95))
def test_mu_monotone_in_gamma(pts, g1, g2):
    s = SpaceTimeSet("pixel", pts)
    lo, hi = sorted((g1, g2))
    assert mu_n(s, 3, hi) <= mu_n(s, 3, lo)


@FAST
@given(st.lists(st.tuples(st.floats(-50, 50), st.floats(-50, 50)), min_size=1, max_size=30))
def test_pixelate_idempotent(pts):
    once = pixelate(SpaceTimeSet("real", pts))
    assert pixelate(once).points.tolist() == once.points.tolist()
    assert len(once) <= len(pts)


@FAST
@given(st.lists(st.integers(1, 3000), min_size=2, max_size=20, unique=True),
       st.floats(0.5, 20))
def test_stretch_preserves_time_order(ticks, beta):
    ts = [k / 100 for k in ticks]
    pts = [(t, 0.0) for t in ts]
    out = stretch(SpaceTimeSet("real", pts), beta).points
    order_in = np.argsort(ts)
    ref = np.exp(np.asarray(ts)[order_in] / beta)
    assert np.all(np.diff(ref) > 0)
    assert np.all(np.diff(np.sort(out[:, 0])) >= 0)
    np.testing.assert_allclose(np.sort(out[:, 0]), ref, rtol=1e-12)


@FAST
@given(st.integers(0, 2 ** 64 - 1), st.integers(0, 2 ** 20), st.integers(0, 10 ** 6),
       st.integers(1, 40))
def test_noise_range_matches_pointwise(seed, n, i0, width):
    s = NoiseStream(seed, 0)
    plane = noise_plane(s, n, range(i0, i0 + width))
    for k in (0, width // 2, width - 1):
        assert plane[k] == gaussian(s, n, i0 + k)


@FAST
@given(st.lists(st.floats(1e-6, 2.0), min_size=1, max_size=10), st.floats(0.01, 1.0),
       st.floats(0.01, 1.0))
def test_valley_nodes_nested(vals, g1, g2):
    times = np.linspace(3.0, 6.0, len(vals))
    lo, hi = sorted((g1, g2))
    a = valley_nodes(times, np.asarray(vals)[:, None], hi)
    b = valley_nodes(times, np.asarray(vals)[:, None], lo)
    assert np.all(b[a])


@FAST
@given(st.integers(0, 200), st.integers(1, 200))
def test_wilson_contains_estimate(h, n):
    h = min(h, n)
    lo, hi = wilson(h, n)
    assert 0.0 <= lo <= h / n <= hi <= 1.0


@settings(max_examples=15, deadline=None, derandomize=True)
@given(st.integers(0, 2 ** 63), st.floats(0.1, 10.0))
def test_positivity_and_linearity(seed, c):
    g = GridSpec.symmetric(1.0, 0.1, 0.3)
    keys = np.array([derive_key(seed, 0)], dtype=np.uint64)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a, _ = simulate_block(g, InitialData.flat(1.0), keys)
        b, _ = simulate_block(g, InitialData.flat(c), keys)
    assert np.all(a > 0)
    np.testing.assert_allclose(b, c * a, rtol=1e-12)
