"""Compiled inner loops shared by the solvers.

All kernels operate on a ``(B, m)`` block: ``B`` independent trajectories of
``m`` lattice sites.  Each row is processed with the same sequence of IEEE
operations whatever ``B`` is, so a trajectory computed alone is bit-identical
to the same trajectory computed inside a large batch.
"""
from __future__ import annotations

import math

import numba as nb
import numpy as np

from .noise import fill_gaussians

_JIT = dict(cache=True, error_model="numpy")

_LN2_HI = 6.93147180369123816490e-01
_LN2_LO = 1.90821492927058770002e-10
_INV_LN2 = 1.44269504088896338700e00
# 2**k for k in [-1100, 1100]; subnormal and overflow ends saturate naturally
_POW2 = np.array([math.ldexp(1.0, k) if k < 1024 else math.inf for k in range(-1100, 1101)])


@nb.njit(inline="always", **_JIT)
def fast_exp(x):
    """exp(x) to ~1 ulp using only arithmetic and a table lookup.

    Written so that LLVM can vectorise loops over it; the result does not
    depend on whether a given element went through the vector or scalar path.
    """
    x = min(max(x, -745.2), 709.8)
    k = math.floor(x * _INV_LN2 + 0.5)
    r = (x - k * _LN2_HI) - k * _LN2_LO
    p = 1.0 / 6227020800.0
    p = p * r + 1.0 / 479001600.0
    p = p * r + 1.0 / 39916800.0
    p = p * r + 1.0 / 3628800.0
    p = p * r + 1.0 / 362880.0
    p = p * r + 1.0 / 40320.0
    p = p * r + 1.0 / 5040.0
    p = p * r + 1.0 / 720.0
    p = p * r + 1.0 / 120.0
    p = p * r + 1.0 / 24.0
    p = p * r + 1.0 / 6.0
    p = p * r + 0.5
    p = p * r + 1.0
    p = p * r + 1.0
    return p * _POW2[int(k) + 1100]


@nb.njit(**_JIT)
def exp_array(x, out):
    for i in range(x.shape[0]):
        out[i] = fast_exp(x[i])


@nb.njit(**_JIT)
def gaussian_block(keys, n, i0, out):
    """Gaussians of sites ``i0 .. i0 + m - 1`` at time ``n`` for each key."""
    for b in range(keys.shape[0]):
        fill_gaussians(keys[b], n, i0, out[b])


@nb.njit(**_JIT)
def heat_periodic(u, w, out, ext):
    """Circulant convolution with symmetric weights ``w[0..J]`` (row-wise)."""
    B, m = u.shape
    J = w.shape[0] - 1
    # loops index only with plain range variables: negative-index
    # wraparound checks would otherwise block vectorisation
    core = ext[J:J + m]
    left_pad = ext[:J]
    right_pad = ext[J + m:]
    for b in range(B):
        row = u[b]
        for i in range(J):
            left_pad[i] = row[(i + m - J) % m]
            right_pad[i] = row[i % m]
        for i in range(m):
            core[i] = row[i]
        o = out[b]
        w0 = w[0]
        for i in range(m):
            o[i] = w0 * core[i]
        for j in range(1, J + 1):
            wj = w[j]
            lo = ext[J - j:J - j + m]
            hi = ext[J + j:J + j + m]
            for i in range(m):
                o[i] += wj * (lo[i] + hi[i])


@nb.njit(**_JIT)
def heat_cn_dirichlet(u, r, out, cp, dp):
    """One Crank--Nicolson step of ``u_t = (1/2) u_xx`` with zero exterior.

    ``r = dt / (2 dx^2)``; solves ``(1 + r) v_i - (r/2)(v_{i-1} + v_{i+1}) = rhs_i``
    by the Thomas algorithm.
    """
    B, m = u.shape
    a = -0.5 * r
    diag = 1.0 + r
    for b in range(B):
        row = u[b]
        o = out[b]
        for i in range(m):
            left = row[i - 1] if i > 0 else 0.0
            right = row[i + 1] if i < m - 1 else 0.0
            o[i] = (1.0 - r) * row[i] + 0.5 * r * (left + right)
        cp[0] = a / diag
        dp[0] = o[0] / diag
        for i in range(1, m):
            den = diag - a * cp[i - 1]
            cp[i] = a / den
            dp[i] = (o[i] - a * dp[i - 1]) / den
        o[m - 1] = dp[m - 1]
        for i in range(m - 2, -1, -1):
            o[i] = dp[i] - cp[i] * o[i + 1]


@nb.njit(**_JIT)
def laplacian_step(u, lam, periodic, out):
    """``out = u + lam * (u_{i+1} - 2 u_i + u_{i-1})`` row-wise."""
    B, m = u.shape
    for b in range(B):
        row = u[b]
        o = out[b]
        for i in range(m):
            if i > 0:
                left = row[i - 1]
            elif periodic:
                left = row[m - 1]
            else:
                left = 0.0
            if i < m - 1:
                right = row[i + 1]
            elif periodic:
                right = row[0]
            else:
                right = 0.0
            o[i] = row[i] + lam * (left - 2.0 * row[i] + right)


@nb.njit(**_JIT)
def apply_lognormal(u, z, sigma):
    """``u *= exp(sigma z - sigma^2 / 2)`` with per-site ``sigma``."""
    B, m = u.shape
    for b in range(B):
        row = u[b]
        zr = z[b]
        for i in range(m):
            s = sigma[i]
            row[i] *= fast_exp(s * zr[i] - 0.5 * s * s)


@nb.njit(**_JIT)
def apply_euler_noise(u_heat, u_old, z, sigma):
    """``u_heat += u_old * sigma * z`` (Ito increment, per-site ``sigma``)."""
    B, m = u_heat.shape
    for b in range(B):
        for i in range(m):
            u_heat[b, i] += u_old[b, i] * sigma[i] * z[b, i]


@nb.njit(**_JIT)
def rows_nonfinite(u):
    B, m = u.shape
    flags = np.zeros(B, dtype=np.bool_)
    for b in range(B):
        for i in range(m):
            if not np.isfinite(u[b, i]):
                flags[b] = True
                break
    return flags
