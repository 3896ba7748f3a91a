"""Valley sets, the stretch map, pixelation and synthetic benchmark sets."""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .she import Trajectory


@dataclass(frozen=True)
class ValleyParams:
    gamma: float
    beta: float = 1.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma > 0 required")
        if not self.beta > 0:
            raise ValueError("beta > 0 required")


class ResourceError(RuntimeError):
    """A set would exceed the configured pixel budget."""


# ---------------------------------------------------------------------------
# implicit regions (sets too large to enumerate)


class Region:
    """An infinite pixel set described by closed-form box tests.

    Boxes are pixel index ranges ``[a, a + r) x [b, b + r)``.  ``classify``
    returns 0 when the box holds no pixel of the region, 2 when it holds only
    region pixels, and 1 otherwise; it must be exact for ``r == 1``.
    """

    name = "region"

    def contains(self, s, j):
        raise NotImplementedError

    def classify(self, a, b, r):
        raise NotImplementedError

    def column_count(self, s, j_lo, j_hi):
        """Number of ``j`` in ``[j_lo, j_hi)`` with ``(s, j)`` in the region."""
        raise NotImplementedError

    def describe(self):
        return {"region": self.name}


class EpigraphRegion(Region):
    """Pixels ``(s, j)`` with ``s >= 1`` and ``j >= max(1, thr(s))``, ``thr`` nondecreasing."""

    name = "epigraph"

    def threshold(self, s):
        raise NotImplementedError

    def _lo(self, s):
        return np.maximum(1, self.threshold(np.maximum(s, 1)))

    def contains(self, s, j):
        s = np.asarray(s, dtype=np.int64)
        j = np.asarray(j, dtype=np.int64)
        return (s >= 1) & (j >= self._lo(s))

    def classify(self, a, b, r):
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        r = np.asarray(r, dtype=np.int64)
        s_last = a + r - 1
        j_last = b + r - 1
        s_first = np.maximum(a, 1)
        nonempty = (s_last >= 1) & (j_last >= self._lo(s_first))
        full = (a >= 1) & (b >= self._lo(np.maximum(s_last, 1)))
        out = np.where(nonempty, 1, 0).astype(np.int8)
        out[nonempty & full] = 2
        return out

    def column_count(self, s, j_lo, j_hi):
        s = np.asarray(s, dtype=np.int64)
        lo = np.maximum(j_lo, self._lo(s))
        cnt = np.maximum(0, j_hi - lo)
        return np.where(s >= 1, cnt, 0)


class XiRegion(EpigraphRegion):
    """Integer pixels of ``{(x, y) in (0, inf)^2 : y >= x^q}``."""

    name = "xi"

    def __init__(self, q: float):
        if not q > 0:
            raise ValueError("q > 0 required")
        self.q = float(q)
        self._int_q = int(round(q)) if abs(q - round(q)) < 1e-12 else None
        inv = 1.0 / q
        self._root = int(round(inv)) if abs(inv - round(inv)) < 1e-12 else None

    def threshold(self, s):
        s = np.asarray(s, dtype=np.int64)
        if self._int_q is not None:
            return s ** self._int_q
        if self._root is not None:
            # smallest j with j**k >= s, corrected in integers
            k = self._root
            j = np.ceil(np.power(s.astype(float), 1.0 / k)).astype(np.int64)
            j = np.where((j - 1) ** k >= s, j - 1, j)
            j = np.where(j ** k < s, j + 1, j)
            return j
        return np.ceil(np.power(s.astype(float), self.q) - 1e-12).astype(np.int64)

    def describe(self):
        return {"region": "xi", "q": self.q}


class QuadrantRegion(EpigraphRegion):
    """All pixels with ``s >= 1`` and ``j >= 1``."""

    name = "quadrant"

    def threshold(self, s):
        return np.ones_like(np.asarray(s, dtype=np.int64))


class LineRegion(Region):
    """The horizontal line ``{(s, 0) : s >= 1}``."""

    name = "line"

    def contains(self, s, j):
        return (np.asarray(s) >= 1) & (np.asarray(j) == 0)

    def classify(self, a, b, r):
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        r = np.asarray(r, dtype=np.int64)
        nonempty = (b <= 0) & (b + r - 1 >= 0) & (a + r - 1 >= 1)
        out = np.where(nonempty, 1, 0).astype(np.int8)
        out[nonempty & (r == 1)] = 2
        return out

    def column_count(self, s, j_lo, j_hi):
        s = np.asarray(s, dtype=np.int64)
        hit = (j_lo <= 0) & (0 < j_hi)
        return np.where((s >= 1) & hit, 1, 0)


# ---------------------------------------------------------------------------


@dataclass
class SpaceTimeSet:
    """Finite set of ``(t, x)`` points or integer pixels, or an implicit region.

    ``kind`` is ``"real"``, ``"pixel"`` or ``"region"``.  Points are stored as an
    ``(K, 2)`` array, first column the time-like coordinate.
    """

    kind: str
    points: np.ndarray
    meta: dict = field(default_factory=dict)
    region: Optional[Region] = None

    def __post_init__(self):
        if self.kind == "region":
            if self.region is None:
                raise ValueError("region sets need a Region")
            self.points = np.empty((0, 2), dtype=np.int64)
            return
        dtype = np.int64 if self.kind == "pixel" else float
        p = np.asarray(self.points, dtype=dtype).reshape(-1, 2)
        if p.shape[0]:
            p = np.unique(p, axis=0)
        self.points = p

    @classmethod
    def from_region(cls, region: Region, **meta):
        return cls("region", np.empty((0, 2)), meta={**region.describe(), **meta}, region=region)

    def __len__(self):
        if self.kind == "region":
            raise TypeError("region sets are infinite")
        return self.points.shape[0]

    def __contains__(self, item):
        s, j = item
        if self.kind == "region":
            return bool(self.region.contains(s, j))
        p = self.points
        return bool(np.any((p[:, 0] == s) & (p[:, 1] == j)))

    def issubset(self, other: "SpaceTimeSet") -> bool:
        if len(self) == 0:
            return True
        a = {tuple(r) for r in self.points.tolist()}
        b = {tuple(r) for r in other.points.tolist()}
        return a <= b

    # -- persistence ---------------------------------------------------------

    def to_csv(self, path, source="", seed=None):
        """CSV with a one-line ``# kind=..., source=..., seed=...`` header and a JSON sidecar."""
        if self.kind == "region":
            raise TypeError("region sets have no finite CSV form")
        with open(path, "w") as fh:
            fh.write(f"# kind={self.kind}, source={source or self.meta.get('source', '')}, "
                     f"seed={seed if seed is not None else self.meta.get('seed', '')}\n")
            fmt = "{:d},{:d}\n" if self.kind == "pixel" else "{!r},{!r}\n"
            for a, b in self.points.tolist():
                fh.write(fmt.format(a, b))
        with open(str(path) + ".json", "w") as fh:
            json.dump({"kind": self.kind, "count": len(self), **_jsonable(self.meta)}, fh,
                      indent=2, sort_keys=True)

    @classmethod
    def from_csv(cls, path):
        with open(path) as fh:
            header = fh.readline()
            if not header.startswith("#"):
                raise ValueError("missing set header line")
            fields = dict(kv.strip().split("=", 1) for kv in header[1:].split(",") if "=" in kv)
            kind = fields.get("kind", "real")
            dtype = np.int64 if kind == "pixel" else float
            rows = [line.strip().split(",") for line in fh if line.strip()]
        pts = np.array(rows, dtype=dtype).reshape(-1, 2) if rows else np.empty((0, 2), dtype=dtype)
        meta = {"source": fields.get("source", ""), "seed": fields.get("seed", "")}
        return cls(kind, pts, meta=meta)


def _jsonable(d):
    out = {}
    for k, v in d.items():
        if isinstance(v, (np.integer,)):
            v = int(v)
        elif isinstance(v, (np.floating,)):
            v = float(v)
        out[k] = v
    return out


def valley_nodes(times, values, gamma):
    """Boolean mask of grid nodes with ``t > e`` and ``u < exp(-gamma t)``."""
    times = np.asarray(times, dtype=float)
    thr = np.exp(-gamma * times)[:, None]
    return (times[:, None] > math.e) & (values < thr)


def valley_set(traj: Trajectory, gamma: float) -> SpaceTimeSet:
    """Grid nodes of ``{(t, x) : t > e, u(t, x) < exp(-gamma t)}``."""
    if not gamma > 0:
        raise ValueError("gamma > 0 required")
    times = traj.times
    meta = {"source": "valley", "gamma": gamma, "dt": traj.grid.dt, "dx": traj.grid.dx,
            "seed": traj.metadata.get("master_seed"), "stream_id": traj.stream_id}
    if not np.any(times > math.e):
        warnings.warn("no snapshot with t > e: valley set is empty", stacklevel=2)
        return SpaceTimeSet("real", np.empty((0, 2)), meta=meta)
    mask = valley_nodes(times, traj.values(), gamma)
    ti, xi = np.nonzero(mask)
    pts = np.column_stack([times[ti], traj.grid.x[xi]])
    return SpaceTimeSet("real", pts, meta=meta)


def stretch(st: SpaceTimeSet, beta: float) -> SpaceTimeSet:
    """Apply ``(t, x) -> (exp(t / beta), x)``."""
    if not beta > 0:
        raise ValueError("beta > 0 required")
    if st.kind == "region":
        raise TypeError("cannot stretch an implicit region")
    p = st.points.astype(float)
    if p.shape[0] and np.any(p[:, 0] <= 0):
        raise ValueError("stretch needs positive t-coordinates")
    out = np.column_stack([np.exp(p[:, 0] / beta), p[:, 1]]) if p.shape[0] else np.empty((0, 2))
    return SpaceTimeSet("real", out, meta={**st.meta, "stretch_beta": beta})


def pixelate(st: SpaceTimeSet) -> SpaceTimeSet:
    """Floor both coordinates onto the unit lattice (half-open cells)."""
    if st.kind in ("pixel", "region"):
        return st
    p = np.floor(st.points).astype(np.int64) if len(st) else np.empty((0, 2), dtype=np.int64)
    return SpaceTimeSet("pixel", p, meta={**st.meta, "pixelation": "floor"})


def shell_bounds(n: int):
    """Inclusive integer bounds of the pixels of ``V_n``: ``(s_hi, j_lo, j_hi)``.

    A pixel ``(s, j)`` lies in ``V_n = [0, e^n) x [-e^n, e^n)`` iff
    ``0 <= s <= s_hi`` and ``j_lo <= j <= j_hi``.
    """
    e = math.exp(n)
    hi = math.ceil(e) - 1
    return hi, -math.floor(e), hi


def xi_q(q: float, n_max: int, budget: int = 5_000_000) -> SpaceTimeSet:
    """Enumerated pixels of ``Xi_q`` inside ``V_{n_max}``."""
    if not q > 0:
        raise ValueError("q > 0 required")
    if n_max < 1:
        raise ValueError("n_max >= 1 required")
    region = XiRegion(q)
    s_hi, j_lo, j_hi = shell_bounds(n_max)
    s = np.arange(1, s_hi + 1, dtype=np.int64)
    counts = region.column_count(s, max(j_lo, 1), j_hi + 1)
    total = int(counts.sum())
    if total > budget:
        raise ResourceError(f"Xi_{q} in V_{n_max} has {total} pixels, budget is {budget}; "
                            "use XiRegion for implicit evaluation")
    lo = np.maximum(1, region.threshold(s))
    cols = [np.column_stack([np.full(c, si), np.arange(l, l + c)])
            for si, l, c in zip(s.tolist(), lo.tolist(), counts.tolist()) if c > 0]
    pts = np.concatenate(cols) if cols else np.empty((0, 2), dtype=np.int64)
    return SpaceTimeSet("pixel", pts, meta={"source": "xi_q", "q": q, "n_max": n_max})
