"""Binary checkpoints and CSV export of trajectories.

A checkpoint is a sequence of frames, one per snapshot, each laid out as::

    b"PAMF"  u32 version
    f64 dx   f64 dt   f64 t
    u64 m    f64[m] values
    u32 len  UTF-8 JSON metadata

All numbers are little-endian whatever the host byte order.
"""
from __future__ import annotations

import json
import struct

import numpy as np

from .she import GridSpec, LatticeField, Trajectory

MAGIC = b"PAMF"
VERSION = 1
_HEAD = struct.Struct("<4sIdddQ")
_LEN = struct.Struct("<I")


class FormatError(ValueError):
    """Malformed, truncated or unsupported checkpoint data."""


def _frame(field_: LatticeField, meta: dict) -> bytes:
    g = field_.grid
    vals = np.ascontiguousarray(field_.values, dtype="<f8")
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    return b"".join([_HEAD.pack(MAGIC, VERSION, g.dx, g.dt, field_.t, vals.shape[0]),
                     vals.tobytes(), _LEN.pack(len(blob)), blob])


def checkpoint(traj: Trajectory) -> bytes:
    """Serialise every snapshot of ``traj``."""
    common = {"stream_id": traj.stream_id, "diverged": traj.diverged,
              "n_snapshots": len(traj.snapshots), "grid": traj.grid.to_dict(),
              "metadata": traj.metadata,
              "seed": traj.metadata.get("master_seed"),
              "scheme": traj.grid.scheme, "boundary": traj.grid.boundary}
    return b"".join(_frame(f, {**common, "index": k}) for k, f in enumerate(traj.snapshots))


def _read_frame(buf: bytes, pos: int):
    if len(buf) - pos < _HEAD.size:
        raise FormatError("truncated frame header")
    magic, version, dx, dt, t, m = _HEAD.unpack_from(buf, pos)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    pos += _HEAD.size
    need = 8 * m
    if len(buf) - pos < need + _LEN.size:
        raise FormatError("truncated values block")
    vals = np.frombuffer(buf, dtype="<f8", count=m, offset=pos).astype(float)
    pos += need
    (ln,) = _LEN.unpack_from(buf, pos)
    pos += _LEN.size
    if len(buf) - pos < ln:
        raise FormatError("truncated metadata")
    try:
        meta = json.loads(buf[pos:pos + ln].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable metadata: {exc}") from None
    return (dx, dt, t, vals, meta), pos + ln


def restore(data: bytes) -> Trajectory:
    """Inverse of :func:`checkpoint`; raises :class:`FormatError` on bad input."""
    data = bytes(data)
    if not data:
        raise FormatError("empty checkpoint")
    frames, pos = [], 0
    while pos < len(data):
        fr, pos = _read_frame(data, pos)
        frames.append(fr)
    meta0 = frames[0][4]
    if len(frames) != meta0.get("n_snapshots"):
        raise FormatError(f"expected {meta0.get('n_snapshots')} frames, found {len(frames)}")
    grid = GridSpec(**{**meta0["grid"], "snapshot_times": tuple(meta0["grid"]["snapshot_times"])})
    snaps = [LatticeField(t=t, values=v, grid=grid) for (_, _, t, v, _) in frames]
    return Trajectory(snapshots=snaps, stream_id=meta0["stream_id"], grid=grid,
                      metadata=meta0["metadata"], diverged=meta0["diverged"])


def save(traj: Trajectory, path) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint(traj))


def load(path) -> Trajectory:
    with open(path, "rb") as fh:
        return restore(fh.read())


def to_csv(traj: Trajectory, path) -> None:
    """Long-format CSV with columns ``t,x,u``."""
    x = traj.grid.x
    with open(path, "w") as fh:
        fh.write("t,x,u\n")
        for f in traj.snapshots:
            for xi, ui in zip(x.tolist(), np.asarray(f.values).tolist()):
                fh.write(f"{f.t!r},{xi!r},{ui!r}\n")
