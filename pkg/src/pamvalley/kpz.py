"""Cole--Hopf heights, the rescaled narrow-wedge field and its functionals."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .she import GridSpec, LatticeField


@dataclass
class HeightField:
    t: float
    values: np.ndarray
    grid: GridSpec

    @property
    def x(self):
        return self.grid.x


@dataclass
class UpsilonField:
    """``(H(t, t^{2/3} x) + t/24) / t^{1/3}`` on a rescaled coordinate grid."""

    t: float
    x: np.ndarray
    values: np.ndarray

    def to_csv(self, path, metadata: Optional[dict] = None):
        with open(path, "w") as fh:
            meta = dict(metadata or {})
            meta.setdefault("t", self.t)
            fh.write("# " + ", ".join(f"{k}={v}" for k, v in meta.items()) + "\n")
            fh.write("x_tilde,upsilon\n")
            for a, b in zip(self.x, self.values):
                fh.write(f"{a!r},{b!r}\n")


def cole_hopf(field: LatticeField) -> HeightField:
    """Elementwise logarithm of a strictly positive field."""
    v = np.asarray(field.values, dtype=float)
    bad = np.nonzero(~(v > 0))[0]
    if bad.size:
        i = int(bad[0])
        raise ValueError(
            f"cole_hopf: u[{i}] = {v[i]!r} at x = {field.grid.x[i]:g} is not positive "
            "(use the splitting scheme; explicit runs can cross zero)")
    return HeightField(t=field.t, values=np.log(v), grid=field.grid)


def upsilon_values(h, x_phys, t, x_tilde):
    """Rescale height samples ``h`` at ``x_phys`` onto ``x_tilde`` (vectorised over rows).

    ``h`` may be 1-D or 2-D ``(B, m)``; interpolation is linear in x.
    """
    pos = t ** (2.0 / 3.0) * np.asarray(x_tilde, dtype=float)
    if pos.min() < x_phys[0] - 1e-12 or pos.max() > x_phys[-1] + 1e-12:
        raise ValueError("requested x-range exceeds the simulated domain")
    # explicit two-point interpolation so 2-D input is handled in one pass
    dx = x_phys[1] - x_phys[0]
    f = (pos - x_phys[0]) / dx
    i0 = np.clip(np.floor(f).astype(np.int64), 0, len(x_phys) - 2)
    w = f - i0
    h = np.asarray(h, dtype=float)
    hi = h[..., i0] * (1.0 - w) + h[..., i0 + 1] * w
    # exact node values where pos hits a grid node (up to rounding of f)
    near = np.rint(f).astype(np.int64)
    on = (np.abs(f - near) < 1e-9) & (near >= 0) & (near < len(x_phys))
    if np.any(on):
        hi[..., on] = h[..., near[on]]
    return (hi + t / 24.0) / t ** (1.0 / 3.0)


def upsilon(height: HeightField, t: Optional[float] = None, x_tilde=None) -> UpsilonField:
    """Rescaled narrow-wedge field.

    Parameters
    ----------
    height : HeightField
        ``log u`` from a run started from Dirac initial data.
    t : float, optional
        Defaults to ``height.t``; must be positive.
    x_tilde : array, optional
        Rescaled coordinates; by default the grid nodes mapped by ``t^{-2/3}``.
    """
    t = height.t if t is None else t
    if not t > 0:
        raise ValueError("t > 0 required")
    xp = height.grid.x
    if x_tilde is None:
        x_tilde = xp / t ** (2.0 / 3.0)
    x_tilde = np.asarray(x_tilde, dtype=float)
    return UpsilonField(t=t, x=x_tilde, values=upsilon_values(height.values, xp, t, x_tilde))


def _window_mask(x, lo, hi):
    tol = 1e-9 * max(1.0, abs(lo), abs(hi))
    return (x >= lo - tol) & (x <= hi + tol)


def sup_parabola(ups: UpsilonField, nu: float, window):
    """``(max, argmax)`` of ``Upsilon(x) + nu x^2 / 2`` over grid points in a window.

    ``window`` is ``M`` (meaning ``[-M, M]``) or a pair ``(lo, hi)``.  Ties go
    to the leftmost maximiser.
    """
    lo, hi = (-window, window) if np.isscalar(window) else window
    mask = _window_mask(ups.x, lo, hi)
    if not mask.any():
        raise ValueError("empty window")
    if ups.x[0] > lo + 1e-9 or ups.x[-1] < hi - 1e-9:
        raise ValueError("window extends beyond the available grid")
    xs = ups.x[mask]
    vals = ups.values[mask] + 0.5 * nu * xs ** 2
    k = int(np.argmax(vals))  # first occurrence = leftmost
    return float(vals[k]), float(xs[k])


def sup_parabola_rows(values, x, nu, lo, hi):
    """Row-wise version of :func:`sup_parabola` for a ``(B, m)`` array."""
    mask = _window_mask(x, lo, hi)
    if not mask.any():
        raise ValueError("empty window")
    xs = x[mask]
    vals = values[:, mask] + 0.5 * nu * xs ** 2
    k = np.argmax(vals, axis=1)
    return vals[np.arange(vals.shape[0]), k], xs[k]


def modulus_deviation(ups: UpsilonField, a: float, half_len: float) -> float:
    """``sup_{x in [a, a + half_len]} |U(x) + x^2/2 - U(a) - a^2/2|`` over grid points."""
    return float(modulus_rows(ups.values[None, :], ups.x, a, half_len)[0])


def modulus_rows(values, x, a, half_len):
    if half_len < 0:
        raise ValueError("half_len must be nonnegative")
    tol = 1e-9 * max(1.0, abs(a))
    ia = np.nonzero(np.abs(x - a) <= max(tol, 1e-9))[0]
    if ia.size == 0:
        raise ValueError(f"a={a} is not a grid point")
    if a + half_len > x[-1] + 1e-9 or a < x[0] - 1e-9:
        raise ValueError("interval outside grid")
    mask = _window_mask(x, a, a + half_len)
    g = values[:, mask] + 0.5 * x[mask] ** 2
    base = values[:, ia[0]] + 0.5 * a * a
    return np.max(np.abs(g - base[:, None]), axis=1)
