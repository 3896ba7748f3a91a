"""Counter-addressed Gaussian noise for the lattice white-noise field.

Every value is a pure function of ``(master_seed, stream_id, n, i)``: the pair
``(master_seed, stream_id)`` is hashed into a 64-bit Philox key, the site
``(n, i)`` becomes the Philox counter, and the 64 output bits are mapped to a
standard normal through the inverse normal CDF.  There is no generator state,
so values can be produced in any order, on any number of workers, and
re-produced after a restart.

Counter layout: ``(i >> 1, n)`` as two 64-bit halves, so one Philox4x32 block
feeds the even site ``2b`` (words 0, 1) and the odd site ``2b + 1``
(words 2, 3).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np

MASK32 = np.uint64(0xFFFFFFFF)
_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_S32 = np.uint64(32)
_TWO_M53 = 1.0 / 9007199254740992.0


@nb.njit(cache=True, inline="always")
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Philox4x32-10 block function on 32-bit words held in uint64."""
    for _ in range(10):
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0 = p0 >> _S32
        lo0 = p0 & MASK32
        hi1 = p1 >> _S32
        lo1 = p1 & MASK32
        c0 = hi1 ^ c1 ^ k0
        c1 = lo1
        c2 = hi0 ^ c3 ^ k1
        c3 = lo0
        k0 = (k0 + _W0) & MASK32
        k1 = (k1 + _W1) & MASK32
    return c0, c1, c2, c3


@nb.njit(cache=True)
def _philox_words(counter, key):
    # kept for known-answer tests
    c0, c1, c2, c3 = philox4x32(
        np.uint64(counter[0]), np.uint64(counter[1]),
        np.uint64(counter[2]), np.uint64(counter[3]),
        np.uint64(key[0]), np.uint64(key[1]),
    )
    return np.array([c0, c1, c2, c3], dtype=np.uint64)


def philox_block(counter, key):
    """Philox4x32-10 on four 32-bit counter words and two key words."""
    out = _philox_words(np.asarray(counter, dtype=np.uint64),
                        np.asarray(key, dtype=np.uint64))
    return tuple(int(v) for v in out)


@nb.njit(cache=True, inline="always")
def _uniform53(a, b):
    # 27 + 26 bits, centred in its cell so the result lies in (0, 1)
    x = (a >> np.uint64(5)) * np.uint64(67108864) + (b >> np.uint64(6))
    return (float(x) + 0.5) * _TWO_M53


@nb.njit(cache=True)
def ndtri(p):
    """Inverse standard normal CDF (Wichura, AS 241, PPND16)."""
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        num = (((((((2509.0809287301226727 * r + 33430.575583588128105) * r
                    + 67265.770927008700853) * r + 45921.953931549871457) * r
                  + 13731.693765509461125) * r + 1971.5909503065514427) * r
                + 133.14166789178437745) * r + 3.387132872796366608)
        den = (((((((5226.495278852854561 * r + 28729.085735721942674) * r
                    + 39307.89580009271061) * r + 21213.794301586595867) * r
                  + 5394.1960214247511077) * r + 687.1870074920579083) * r
                + 42.313330701600911252) * r + 1.0)
        return q * num / den
    r = p if q < 0.0 else 1.0 - p
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r -= 1.6
        num = (((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r
                    + 0.24178072517745061177) * r + 1.27045825245236838258) * r
                  + 3.64784832476320460504) * r + 5.7694972214606914055) * r
                + 4.6303378461565452959) * r + 1.42343711074968357734)
        den = (((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r
                    + 0.0151986665636164571966) * r + 0.14810397642748007459) * r
                  + 0.68976733498510000455) * r + 1.6763848301838038494) * r
                + 2.05319162663775882187) * r + 1.0)
    else:
        r -= 5.0
        num = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r
                    + 0.0012426609473880784386) * r + 0.026532189526576123093) * r
                  + 0.29656057182850489123) * r + 1.7848265399172913358) * r
                + 5.4637849111641143699) * r + 6.6579046435011037772)
        den = (((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r
                    + 1.8463183175100546818e-5) * r + 7.868691311456132591e-4) * r
                  + 0.0148753612908506148525) * r + 0.13692988092273580531) * r
                + 0.59983220655588793769) * r + 1.0)
    val = num / den
    return -val if q < 0.0 else val


@nb.njit(cache=True, inline="always")
def _mix64(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@nb.njit(cache=True)
def hash_pair(a, b):
    """Hash two 64-bit integers into one (splitmix64 finaliser, chained)."""
    golden = np.uint64(0x9E3779B97F4A7C15)
    h = _mix64(np.uint64(a) + golden)
    return _mix64(h ^ (np.uint64(b) + golden + (h << np.uint64(6)) + (h >> np.uint64(2))))


def derive_key(master_seed: int, stream_id: int) -> int:
    """64-bit Philox key of one trajectory stream."""
    return int(hash_pair(np.uint64(master_seed & 0xFFFFFFFFFFFFFFFF),
                         np.uint64(stream_id & 0xFFFFFFFFFFFFFFFF)))


@nb.njit(cache=True, inline="always")
def gaussian_at(key, n, i):
    """Standard normal at time index ``n`` and site ``i`` for a 64-bit key."""
    k0 = key & MASK32
    k1 = key >> _S32
    b = np.uint64(i) >> np.uint64(1)
    nn = np.uint64(n)
    c0, c1, c2, c3 = philox4x32(b & MASK32, b >> _S32, nn & MASK32, nn >> _S32, k0, k1)
    if np.uint64(i) & np.uint64(1):
        return ndtri(_uniform53(c2, c3))
    return ndtri(_uniform53(c0, c1))


@nb.njit(cache=True, error_model="numpy", inline="always")
def _ndtri_central(p):
    q = p - 0.5
    r = 0.180625 - q * q
    num = (((((((2509.0809287301226727 * r + 33430.575583588128105) * r
                + 67265.770927008700853) * r + 45921.953931549871457) * r
              + 13731.693765509461125) * r + 1971.5909503065514427) * r
            + 133.14166789178437745) * r + 3.387132872796366608)
    den = (((((((5226.495278852854561 * r + 28729.085735721942674) * r
                + 39307.89580009271061) * r + 21213.794301586595867) * r
              + 5394.1960214247511077) * r + 687.1870074920579083) * r
            + 42.313330701600911252) * r + 1.0)
    return q * num / den


@nb.njit(cache=True, error_model="numpy")
def fill_gaussians(key, n, i0, out):
    """Write the Gaussians of sites ``i0 .. i0 + len(out) - 1`` at time ``n``.

    Identical, value for value, to calling :func:`gaussian_at` on each site;
    the work is split into passes (counters, central branch, tails) so the
    first two vectorise.
    """
    m = out.shape[0]
    if m == 0:
        return
    k0 = key & MASK32
    k1 = key >> _S32
    nn = np.uint64(n)
    n_lo = nn & MASK32
    n_hi = nn >> _S32
    odd = i0 & 1
    b0 = (i0 - odd) >> 1
    nb_ = (odd + m + 1) >> 1
    buf = np.empty(2 * nb_)
    for j in range(nb_):
        b = np.uint64(b0 + j)
        c0, c1, c2, c3 = philox4x32(b & MASK32, b >> _S32, n_lo, n_hi, k0, k1)
        buf[2 * j] = _uniform53(c0, c1)
        buf[2 * j + 1] = _uniform53(c2, c3)
    src = buf[odd:odd + m]
    for j in range(m):
        out[j] = _ndtri_central(src[j])
    for j in range(m):
        p = src[j]
        if abs(p - 0.5) > 0.425:
            out[j] = ndtri(p)


@nb.njit(cache=True)
def _plane(key, n0, n1, i0, i1):
    out = np.empty((n1 - n0, i1 - i0))
    for r in range(n1 - n0):
        fill_gaussians(key, n0 + r, i0, out[r])
    return out


@dataclass(frozen=True)
class NoiseStream:
    """One trajectory's noise source.

    Attributes
    ----------
    master_seed : int
        Experiment-wide seed (64-bit).
    stream_id : int
        Trajectory index (64-bit).
    """

    master_seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("master_seed", "stream_id"):
            v = getattr(self, name)
            if not 0 <= int(v) < 2**64:
                raise ValueError(f"{name} must be a 64-bit unsigned integer, got {v}")

    @property
    def key(self) -> int:
        return derive_key(self.master_seed, self.stream_id)


def gaussian(stream: NoiseStream, n: int, i: int) -> float:
    """Standard normal variate addressed by time index ``n`` and site ``i``."""
    if n < 0 or i < 0:
        raise ValueError("indices must be nonnegative")
    return float(gaussian_at(np.uint64(stream.key), np.int64(n), np.int64(i)))


def noise_plane(stream: NoiseStream, n, i_range) -> np.ndarray:
    """Vector of Gaussians over a site range at one or more time indices.

    Parameters
    ----------
    stream : NoiseStream
    n : int or range
        A single time index gives a 1-D result; a ``range`` gives a
        ``(len(n), len(i_range))`` plane.
    i_range : range
        Contiguous site indices (step 1).
    """
    if len(i_range) == 0:
        raise ValueError("i_range must be nonempty")
    if getattr(i_range, "step", 1) != 1:
        raise ValueError("i_range must be contiguous")
    i0, i1 = i_range.start, i_range.stop
    key = np.uint64(stream.key)
    if isinstance(n, range):
        if n.step != 1:
            raise ValueError("time range must be contiguous")
        return _plane(key, np.int64(n.start), np.int64(n.stop), np.int64(i0), np.int64(i1))
    out = np.empty(i1 - i0)
    fill_gaussians(key, np.int64(n), np.int64(i0), out)
    return out
