"""Monte Carlo tail probabilities, exponent fits and distributional checks.

Ensembles are consumed chunk by chunk by *reducers* that keep only counts
and sums, so several statistics can share one pass over the trajectories and
results do not depend on chunk size or worker count.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy import stats
from scipy.optimize import isotonic_regression

from .kpz import modulus_rows, sup_parabola_rows, upsilon_values
from .noise import derive_key, hash_pair
from .she import ConfigError, GridSpec, InitialData, simulate_block

EVENT_KINDS = (
    "one_point_lower", "one_point_upper", "upsilon_lower", "upsilon_upper",
    "sup_parabola_upper", "sup_parabola_lower", "argsup_outside", "modulus_exceed", "box_inf",
)
# the parameter each event family is swept over
SWEEP_PARAM = {
    "one_point_lower": "gamma", "one_point_upper": "gamma",
    "upsilon_lower": "s", "upsilon_upper": "s",
    "sup_parabola_upper": "s", "sup_parabola_lower": "s",
    "argsup_outside": "M", "modulus_exceed": "s", "box_inf": "a",
}


# ---------------------------------------------------------------------------
# ensembles


@dataclass(frozen=True)
class EnsembleSpec:
    """``n`` trajectories with stream ids ``first_stream, first_stream + 1, ...``."""

    grid: GridSpec
    init: InitialData
    master_seed: int
    n: int
    chunk: int = 512
    first_stream: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.n <= 0:
            raise ConfigError("ensemble size N must be positive")

    def sub(self, tag: int) -> "EnsembleSpec":
        """Independent ensemble with the seed hashed from ``(master_seed, tag)``."""
        return replace(self, master_seed=derive_sub_seed(self.master_seed, tag))


def derive_sub_seed(master_seed: int, index: int) -> int:
    return int(hash_pair(np.uint64(master_seed & 0xFFFFFFFFFFFFFFFF),
                         np.uint64((index + 0x5EED) & 0xFFFFFFFFFFFFFFFF)))


def _run_chunk(args):
    grid, init, master_seed, ids = args
    keys = np.array([derive_key(master_seed, int(s)) for s in ids], dtype=np.uint64)
    return simulate_block(grid, init, keys)


def run_ensemble(spec: EnsembleSpec, reducers: Sequence) -> None:
    """Simulate ``spec`` and feed every chunk to each reducer, in stream order."""
    spec.grid.validate()
    times = np.array(spec.grid.snapshot_times)
    starts = range(spec.first_stream, spec.first_stream + spec.n, spec.chunk)
    tasks = [(spec.grid, spec.init, spec.master_seed,
              np.arange(s, min(s + spec.chunk, spec.first_stream + spec.n), dtype=np.int64))
             for s in starts]

    def feed(ids, out):
        snaps, div = out
        for r in reducers:
            r.update(ids, snaps, div, times, spec.grid)

    if spec.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            for task, out in zip(tasks, pool.map(_run_chunk, tasks)):
                feed(task[3], out)
    else:
        for task in tasks:
            feed(task[3], _run_chunk(task))


def _snap_index(times, t):
    k = np.nonzero(np.abs(times - t) <= 1e-9 * max(1.0, t))[0]
    if k.size == 0:
        raise ConfigError(f"no snapshot at t={t}")
    return int(k[0])


# ---------------------------------------------------------------------------
# events


@dataclass(frozen=True)
class EventSpec:
    """A tail event; unused parameters stay ``None``.

    ``window`` is the half-width of the range over which sups and argsups
    are taken (rescaled units); ``b`` is the lower x-edge of a box event.
    """

    kind: str
    t: Optional[float] = None
    x: float = 0.0
    gamma: Optional[float] = None
    s: Optional[float] = None
    nu: Optional[float] = None
    M: Optional[float] = None
    window: Optional[float] = None
    a: Optional[float] = None
    eps: Optional[float] = None
    l1: Optional[float] = None
    l2: Optional[float] = None
    b: float = 0.0

    def problems(self, sweep_name=None):
        e = []
        if self.kind not in EVENT_KINDS:
            return [f"kind: must be one of {EVENT_KINDS}"]
        if self.kind != "box_inf" and not (self.t is not None and self.t > 0):
            e.append("t: t > 0 required")
        if self.kind in ("one_point_lower", "one_point_upper", "box_inf") and sweep_name != "gamma":
            if not (self.gamma is not None and self.gamma > 0):
                e.append("gamma: gamma > 0 required")
        if self.kind == "box_inf":
            if self.gamma is not None and not self.gamma > 1.0 / 24:
                e.append("gamma: box_inf needs gamma > 1/24")
            if self.l1 is None or self.l1 < 0 or self.l2 is None or self.l2 < 0:
                e.append("l1, l2: box extents must be >= 0")
        if self.kind.startswith("sup_parabola") or self.kind == "argsup_outside":
            if not (self.nu is not None and 0 < self.nu < 1):
                e.append("nu: nu in (0, 1) required")
        if self.kind.startswith("sup_parabola") and self.M is None:
            e.append("M: window half-width required")
        if self.kind == "argsup_outside" and self.window is None:
            e.append("window: sup window half-width required")
        if self.kind == "modulus_exceed":
            if self.a is None or self.eps is None or not self.eps >= 0:
                e.append("a, eps: modulus event needs a and eps >= 0")
        return e

    def validate(self, sweep_name=None):
        errs = self.problems(sweep_name)
        if errs:
            raise ConfigError("; ".join(errs))
        return self


def _upsilon_block(snaps, times, grid, t, x_tilde):
    u = snaps[:, _snap_index(times, t), :]
    with np.errstate(divide="ignore"):
        h = np.log(u)
    return upsilon_values(h, grid.x, t, x_tilde)


def _rescaled_nodes(grid, t, lo, hi):
    xt = grid.x / t ** (2.0 / 3.0)
    tol = 1e-9 * max(1.0, abs(lo), abs(hi))
    sel = (xt >= lo - tol) & (xt <= hi + tol)
    if not sel.any():
        raise ConfigError("event window contains no grid node")
    if lo < xt[0] - tol or hi > xt[-1] + tol:
        raise ConfigError("event window exceeds the simulated domain")
    return sel, xt


def event_hits(ev: EventSpec, values, snaps, times, grid):
    """Boolean ``(B, len(values))`` hit matrix of ``ev`` swept over ``values``."""
    values = np.asarray(values, dtype=float)
    B = snaps.shape[0]
    k = ev.kind
    if k in ("one_point_lower", "one_point_upper"):
        u = snaps[:, _snap_index(times, ev.t), grid.index_of(ev.x)]
        low = u[:, None] <= np.exp(-values[None, :] * ev.t)
        return low if k == "one_point_lower" else ~low
    if k in ("upsilon_lower", "upsilon_upper"):
        y = _upsilon_block(snaps, times, grid, ev.t, np.array([ev.x]))[:, 0] + 0.5 * ev.x ** 2
        if k == "upsilon_upper":
            return y[:, None] >= values[None, :]
        return y[:, None] <= -values[None, :]
    if k in ("sup_parabola_upper", "sup_parabola_lower", "argsup_outside"):
        W = ev.M if k != "argsup_outside" else ev.window
        sel, xt = _rescaled_nodes(grid, ev.t, -W, W)
        ups = _upsilon_block(snaps, times, grid, ev.t, xt[sel])
        sup, arg = sup_parabola_rows(ups, xt[sel], ev.nu, -W, W)
        if k == "sup_parabola_upper":
            return sup[:, None] >= values[None, :]
        if k == "sup_parabola_lower":
            return sup[:, None] <= -values[None, :]
        if values.max() > W + 1e-12:
            raise ConfigError("argsup sweep value exceeds the sup window")
        return np.abs(arg)[:, None] > values[None, :] + 1e-12
    if k == "modulus_exceed":
        out = np.zeros((B, values.size), dtype=bool)
        for j, s in enumerate(values):
            half = ev.eps * math.sqrt(s) / 16.0
            sel, xt = _rescaled_nodes(grid, ev.t, ev.a, ev.a + half)
            if np.count_nonzero(sel) < 2:
                raise ConfigError(f"modulus interval at s={s} holds fewer than 2 grid points")
            ups = _upsilon_block(snaps, times, grid, ev.t, xt[sel])
            xs = xt[sel]
            # nodes already restricted to [a, a + half]; span them exactly
            dev = modulus_rows(ups, xs, ev.a, xs[-1] - ev.a)
            out[:, j] = dev >= math.sqrt(ev.eps) * s
        return out
    if k == "box_inf":
        x = grid.x
        tol = 1e-9
        xs = (x > ev.b + tol) & (x <= ev.b + ev.l2 + tol)
        if ev.l2 == 0:
            xs = np.abs(x - ev.b) <= tol
        if not xs.any():
            raise ConfigError("box contains no grid node in x")
        out = np.zeros((B, values.size), dtype=bool)
        for j, a in enumerate(values):
            if ev.l1 == 0:
                ts = np.abs(times - a) <= tol
            else:
                ts = (times > a + tol) & (times <= a + ev.l1 + tol)
            if not ts.any():
                raise ConfigError(f"box at a={a} contains no snapshot time")
            thr = np.exp(-ev.gamma * times[ts])
            sub = snaps[:, ts][:, :, xs]
            out[:, j] = np.any(sub < thr[None, :, None], axis=(1, 2))
        return out
    raise ConfigError(f"unknown event kind {k!r}")


# ---------------------------------------------------------------------------
# curves


def wilson(hits, n, level=0.95):
    """Wilson score interval for a binomial proportion."""
    if n == 0:
        return 0.0, 1.0
    ci = stats.binomtest(int(hits), int(n)).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


@dataclass
class TailCurve:
    """Hit counts of one event family against a swept parameter."""

    event: dict
    param: str
    values: list
    hits: list
    n: int
    censored: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def p_hat(self) -> np.ndarray:
        return np.asarray(self.hits, dtype=float) / self.n

    @property
    def stderr(self) -> np.ndarray:
        p = self.p_hat
        return np.sqrt(p * (1 - p) / self.n)

    def ci(self):
        return np.array([wilson(h, self.n) for h in self.hits])

    def rows(self):
        out = []
        for v, h, (lo, hi) in zip(self.values, self.hits, self.ci()):
            out.append({self.param: float(v), "hits": int(h), "N": self.n,
                        "p_hat": h / self.n, "ci_low": lo, "ci_high": hi})
        return out

    def to_csv(self, path):
        rows = self.rows()
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)

    def to_dict(self):
        return {"event": self.event, "param": self.param, "rows": self.rows(),
                "censored": self.censored, "meta": self.meta}


class TailReducer:
    def __init__(self, event: EventSpec, values):
        self.event = event.validate(SWEEP_PARAM.get(event.kind))
        self.values = np.asarray(values, dtype=float)
        self.hits = np.zeros(self.values.size, dtype=np.int64)
        self.n = 0
        self.censored = 0

    def update(self, ids, snaps, diverged, times, grid):
        ok = ~diverged
        self.censored += int(np.count_nonzero(diverged))
        if not ok.any():
            return
        h = event_hits(self.event, self.values, snaps[ok], times, grid)
        self.hits += h.sum(axis=0)
        self.n += int(np.count_nonzero(ok))

    def result(self, **meta) -> TailCurve:
        if self.n == 0:
            raise RuntimeError("every trajectory diverged; no estimate")
        return TailCurve(event={k: v for k, v in asdict(self.event).items() if v is not None},
                         param=SWEEP_PARAM[self.event.kind], values=self.values.tolist(),
                         hits=self.hits.tolist(), n=self.n, censored=self.censored, meta=meta)


def estimate_tail(ens: EnsembleSpec, event: EventSpec, sweep) -> TailCurve:
    """Frequency estimate of ``event`` over the swept parameter values.

    Parameters
    ----------
    ens : EnsembleSpec
        At least 100 trajectories.
    event : EventSpec
    sweep : sequence of float
        Values of the family's sweep parameter (see ``SWEEP_PARAM``).
    """
    if ens.n < 100:
        raise ConfigError("estimate_tail needs N >= 100")
    if len(sweep) == 0:
        raise ConfigError("empty sweep")
    red = TailReducer(event, sweep)
    run_ensemble(ens, [red])
    return red.result(master_seed=ens.master_seed)


# ---------------------------------------------------------------------------
# exponent fits


@dataclass
class ExponentFit:
    """``p(s) = exp(-c s^alpha)`` fitted as ``log(-log p) = log c + alpha log s``."""

    alpha: float
    c: float
    alpha_se: float
    c_se: float
    s_range: tuple
    r2: float
    rows_used: int


def fit_exponent(curve: TailCurve, min_hits: int = 10) -> ExponentFit:
    s = np.asarray(curve.values, dtype=float)
    p = curve.p_hat
    hits = np.asarray(curve.hits)
    use = (hits >= min_hits) & (p > 0) & (p < 1) & (s > 0)
    if np.count_nonzero(use) < 4:
        raise ValueError(f"fit_exponent needs >= 4 rows with >= {min_hits} hits and 0 < p < 1")
    xs = np.log(s[use])
    ys = np.log(-np.log(p[use]))
    fit = stats.linregress(xs, ys)
    c = math.exp(fit.intercept)
    return ExponentFit(alpha=float(fit.slope), c=c, alpha_se=float(fit.stderr),
                       c_se=float(c * fit.intercept_stderr), s_range=(float(s[use].min()), float(s[use].max())),
                       r2=float(fit.rvalue ** 2), rows_used=int(np.count_nonzero(use)))


# ---------------------------------------------------------------------------
# moments


class MomentReducer:
    """Per-trajectory site averages of ``u(t, .)^k`` at the snapshot times."""

    def __init__(self, t_grid, ks=(1, 2, 3)):
        self.t_grid = np.asarray(t_grid, dtype=float)
        self.ks = tuple(int(k) for k in ks)
        self.parts = []
        self.censored = 0

    def update(self, ids, snaps, diverged, times, grid):
        self.censored += int(np.count_nonzero(diverged))
        idx = [_snap_index(times, t) for t in self.t_grid]
        u = snaps[~diverged][:, idx, :]
        self.parts.append(np.stack([np.mean(u ** k, axis=2) for k in self.ks], axis=-1))

    def samples(self):
        """``(N, len(t_grid), len(ks))`` array of per-trajectory site averages."""
        return np.concatenate(self.parts, axis=0)


@dataclass
class MomentFit:
    k: int
    slope: float
    ci: tuple
    t_used: list
    log_moments: list
    rel_stderr: list
    effective_samples: list
    dropped: list
    n: int


def moment_lyapunov(k: int, t_grid, ens: Optional[EnsembleSpec] = None, *, samples=None,
                    ks=None, n_boot: int = 1000, max_rel_stderr: float = 0.5,
                    seed: int = 0) -> MomentFit:
    """Slope of ``log E[u(t, .)^k]`` against ``t`` for flat initial data.

    ``E`` is estimated by averaging over trajectories and lattice sites (the
    field is stationary in space).  Times whose relative standard error
    exceeds ``max_rel_stderr`` are dropped with a warning.  The confidence
    interval is a percentile bootstrap over trajectories.

    Pass ``samples`` (from :class:`MomentReducer`, with its ``ks``) to reuse
    one ensemble for several ``k``.
    """
    if k < 1:
        raise ValueError("k must be a positive integer")
    if k > 3:
        warnings.warn("k > 3: Monte Carlo moment estimates are dominated by rare samples", stacklevel=2)
    t_grid = np.asarray(t_grid, dtype=float)
    if samples is None:
        if ens is None:
            raise ValueError("need an ensemble or precomputed samples")
        if ens.init.kind != "flat" or ens.init.c != 1.0:
            raise ConfigError("moment_lyapunov expects flat initial data u0 = 1")
        red = MomentReducer(t_grid, (k,))
        run_ensemble(ens, [red])
        samples, ks = red.samples(), (k,)
    ks = tuple(ks)
    col = samples[:, :, ks.index(k)]
    N = col.shape[0]
    mean = col.mean(axis=0)
    se = col.std(axis=0, ddof=1) / math.sqrt(N)
    rel = se / mean
    ess = col.sum(axis=0) ** 2 / np.sum(col ** 2, axis=0)
    keep = rel <= max_rel_stderr
    dropped = t_grid[~keep].tolist()
    if dropped:
        warnings.warn(f"k={k}: dropped t={dropped} (relative stderr > {max_rel_stderr})", stacklevel=2)
    if np.count_nonzero(keep) < 2:
        raise ValueError("fewer than two usable times")
    tt = t_grid[keep]
    slope = float(np.polyfit(tt, np.log(mean[keep]), 1)[0])
    rng = np.random.default_rng(seed)
    boots = np.empty(n_boot)
    sub = col[:, keep]
    for i in range(n_boot):
        w = np.bincount(rng.integers(0, N, N), minlength=N)
        m = (w @ sub) / N
        boots[i] = np.polyfit(tt, np.log(m), 1)[0]
    lo, hi = np.percentile(boots, [2.5, 97.5])
    return MomentFit(k=k, slope=slope, ci=(float(lo), float(hi)), t_used=tt.tolist(),
                     log_moments=np.log(mean).tolist(), rel_stderr=rel.tolist(),
                     effective_samples=ess.tolist(), dropped=dropped, n=N)


# ---------------------------------------------------------------------------
# convolution identity


@dataclass
class KSReport:
    statistic: float
    pvalue: float
    n_direct: int
    n_convolved: int
    tail_mass_bound: float
    edge_mass: float
    direct: Optional[np.ndarray] = None
    convolved: Optional[np.ndarray] = None


def convolution_samples(grid: GridSpec, u0: InitialData, master_seed: int, n: int,
                        chunk: int = 512, tail_tol: float = 0.01, noise: bool = True):
    """Both sides of the convolution identity at ``x = 0`` and ``t = grid.t_end``.

    Direct: ``log u(t, 0)`` from ``u0``.  Convolved: ``log(int u0(-y) Z(t, y) dy)``
    with ``Z`` an independent run from Dirac initial data at 0 (trapezoid rule
    over the periodic grid).  Raises if the heat-kernel mass outside the
    domain exceeds ``tail_tol``.  ``noise=False`` gives the deterministic
    heat-equation version of both sides.
    """
    t = grid.t_end
    if t < 0.5:
        raise ConfigError("convolution test needs t >= 0.5")
    if grid.boundary != "periodic":
        raise ConfigError("convolution test needs a periodic grid")
    half = min(-grid.x_min, grid.x_max)
    tail = 2.0 * stats.norm.sf(half / math.sqrt(t))
    if tail > tail_tol:
        raise ConfigError(f"domain too small: heat-kernel mass beyond the ends {tail:.3g} > {tail_tol}")
    g = replace(grid, snapshot_times=(t,))
    i0 = g.index_of(0.0)
    u0v = u0.on_grid(g)
    # u0(-y) on the grid: reflect indices about the node at 0
    refl = u0v[(2 * i0 - np.arange(g.m)) % g.m]
    seed_a = derive_sub_seed(master_seed, 1)
    seed_b = derive_sub_seed(master_seed, 2)
    direct, conv, edge = [], [], []
    ids = np.arange(n)
    outer = np.abs(g.x) > 0.75 * half
    for start in range(0, n, chunk):
        part = ids[start:start + chunk]
        keys = np.array([derive_key(seed_a, int(s)) for s in part], dtype=np.uint64)
        snaps, _ = simulate_block(g, u0, keys, noise=noise)
        direct.append(np.log(snaps[:, 0, i0]))
        keys = np.array([derive_key(seed_b, int(s)) for s in part], dtype=np.uint64)
        z, _ = simulate_block(g, InitialData.dirac(0.0), keys, noise=noise)
        z = z[:, 0, :]
        integ = g.dx * (z @ refl)
        conv.append(np.log(integ))
        edge.append((z[:, outer] @ refl[outer]) * g.dx / integ)
    return np.concatenate(direct), np.concatenate(conv), tail, float(np.mean(np.concatenate(edge)))


def convolution_test(grid: GridSpec, u0: InitialData, n: int, master_seed: int = 0,
                     keep_samples: bool = False, noise: bool = True) -> KSReport:
    """Two-sample KS test of the convolution identity (see :func:`convolution_samples`)."""
    if n < 2:
        raise ConfigError("need at least two samples per side")
    d, c, tail, edge = convolution_samples(grid, u0, master_seed, n, noise=noise)
    ks = stats.ks_2samp(d, c)
    return KSReport(statistic=float(ks.statistic), pvalue=float(ks.pvalue), n_direct=d.size,
                    n_convolved=c.size, tail_mass_bound=float(tail), edge_mass=edge,
                    direct=d if keep_samples else None, convolved=c if keep_samples else None)


# ---------------------------------------------------------------------------
# FKG


@dataclass
class FKGReport:
    p1: float
    p2: float
    p_joint: float
    product: float
    diff: float
    stderr: float
    z: float
    n: int
    inconclusive: bool


class SupReducer:
    """Per-trajectory ``sup`` and ``argsup`` of ``Upsilon + nu x^2 / 2`` on given intervals."""

    def __init__(self, t, nu, intervals):
        self.t, self.nu = float(t), float(nu)
        self.intervals = [tuple(map(float, iv)) for iv in intervals]
        self.sups, self.args = [], []
        self.censored = 0

    def update(self, ids, snaps, diverged, times, grid):
        self.censored += int(np.count_nonzero(diverged))
        snaps = snaps[~diverged]
        lo = min(iv[0] for iv in self.intervals)
        hi = max(iv[1] for iv in self.intervals)
        sel, xt = _rescaled_nodes(grid, self.t, lo, hi)
        ups = _upsilon_block(snaps, times, grid, self.t, xt[sel])
        cols_s, cols_a = [], []
        for a, b in self.intervals:
            s, x = sup_parabola_rows(ups, xt[sel], self.nu, a, b)
            cols_s.append(s)
            cols_a.append(x)
        self.sups.append(np.column_stack(cols_s))
        self.args.append(np.column_stack(cols_a))

    def result(self):
        return np.concatenate(self.sups), np.concatenate(self.args)


def fkg_from_sups(sup1, sup2, s) -> FKGReport:
    """Compare ``P(A1 and A2)`` with ``P(A1) P(A2)`` for ``A_i = {sup_i <= s}``."""
    e1 = sup1 <= s
    e2 = sup2 <= s
    n = e1.size
    p1, p2 = e1.mean(), e2.mean()
    p12 = np.mean(e1 & e2)
    diff = p12 - p1 * p2
    # delta method: influence function of p12 - p1 p2
    infl = (e1 & e2).astype(float) - p2 * e1 - p1 * e2
    se = float(np.std(infl, ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
    inconclusive = p1 in (0.0, 1.0) or p2 in (0.0, 1.0)
    z = diff / se if se > 0 else (0.0 if diff == 0 else math.copysign(math.inf, diff))
    return FKGReport(p1=float(p1), p2=float(p2), p_joint=float(p12), product=float(p1 * p2),
                     diff=float(diff), stderr=se, z=float(z), n=n, inconclusive=inconclusive)


def fkg_test(ens: EnsembleSpec, t, interval1, interval2, s, nu) -> FKGReport:
    """FKG check for two disjoint intervals on a narrow-wedge ensemble."""
    (a, b), (c, d) = sorted([tuple(interval1), tuple(interval2)])
    if not (a < b and c < d and b < c):
        raise ConfigError("intervals must be nondegenerate and disjoint")
    if not 0 < nu < 1:
        raise ConfigError("nu in (0, 1) required")
    red = SupReducer(t, nu, [interval1, interval2])
    run_ensemble(ens, [red])
    sups, _ = red.result()
    return fkg_from_sups(sups[:, 0], sups[:, 1], s)


# ---------------------------------------------------------------------------
# argsup, modulus and box events


@dataclass
class LocalizationCurve:
    curve: TailCurve
    p_isotonic: list
    max_violation: float
    fit: Optional[ExponentFit]


def localization_from_args(args, M_sweep, event: dict) -> LocalizationCurve:
    M = np.asarray(M_sweep, dtype=float)
    order = np.argsort(M)
    hits = (np.abs(args)[:, None] > M[None, :] + 1e-12).sum(axis=0)
    curve = TailCurve(event=event, param="M", values=M.tolist(), hits=hits.tolist(), n=args.size)
    p = curve.p_hat[order]
    iso = isotonic_regression(p, increasing=False).x
    viol = float(np.max(np.maximum(0.0, np.diff(p)))) if p.size > 1 else 0.0
    try:
        fit = fit_exponent(curve)
    except ValueError:
        fit = None
    out = np.empty_like(iso)
    out[order] = iso
    return LocalizationCurve(curve=curve, p_isotonic=out.tolist(), max_violation=viol, fit=fit)


def argsup_localization(ens: EnsembleSpec, t, nu, M_sweep, window) -> LocalizationCurve:
    """``P(|argsup| > M)`` over ``[-window, window]`` for each ``M``."""
    if window < 4 * max(M_sweep):
        raise ConfigError("window must be at least 4 * max(M_sweep)")
    red = SupReducer(t, nu, [(-window, window)])
    run_ensemble(ens, [red])
    _, args = red.result()
    return localization_from_args(args[:, 0], M_sweep,
                                  {"kind": "argsup_outside", "t": t, "nu": nu, "window": window})


def modulus_tail(ens: EnsembleSpec, t, a, eps, s_sweep):
    """Curve of the modulus-of-continuity event; exponent fit attached when possible."""
    curve = estimate_tail(ens, EventSpec("modulus_exceed", t=t, a=a, eps=eps), s_sweep)
    try:
        fit = fit_exponent(curve)
    except ValueError:
        fit = None
    return curve, fit


def box_inf_tail(ens: EnsembleSpec, a_sweep, l1, l2, gamma, b=0.0) -> TailCurve:
    """``P(u < e^{-gamma t} somewhere in (a, a + l1] x (b, b + l2])`` for each ``a``."""
    return estimate_tail(ens, EventSpec("box_inf", gamma=gamma, l1=l1, l2=l2, b=b), a_sweep)


def to_json(obj, path=None):
    def enc(o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, (np.floating, np.integer)):
            return o.item()
        if hasattr(o, "__dataclass_fields__"):
            return asdict(o)
        raise TypeError(type(o))
    text = json.dumps(asdict(obj) if hasattr(obj, "__dataclass_fields__") else obj,
                      default=enc, indent=2, sort_keys=True)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    return text
