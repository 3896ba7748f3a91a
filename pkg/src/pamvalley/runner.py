"""Experiment pipelines, run manifests and parameter sweeps.

Every run stages its files in ``<out>/.staging`` next to an ``INCOMPLETE``
marker.  Only after the pipeline succeeds are the files moved into place and
``manifest.json`` written (atomically, last), so an interrupted run never
leaves a manifest describing files that are not all there.
"""
from __future__ import annotations

import copy
import csv
import datetime as _dt
import hashlib
import json
import math
import os
import shutil
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import __version__
from .config import ExperimentConfig, PARAMS, ValidationError, check, event_from_params
from .hausdorff import ContentTable, dimension_estimate, shell_clip
from .level_sets import (LineRegion, QuadrantRegion, SpaceTimeSet, XiRegion, pixelate, stretch,
                         valley_set, xi_q)
from .noise import derive_key
from .she import LatticeField, Trajectory, simulate_block, window_sites
from .snapshots import save as save_traj, to_csv as traj_csv
from .tails import (EnsembleSpec, MomentReducer, SupReducer, TailReducer, convolution_test,
                    derive_sub_seed, fit_exponent, fkg_from_sups, moment_lyapunov, run_ensemble)

MARKER = "INCOMPLETE"
MANIFEST = "manifest.json"


class RunAborted(RuntimeError):
    """A pipeline failed; the output directory carries the incomplete marker."""


@dataclass
class RunManifest:
    config_hash: str
    tool_version: str
    kind: str
    master_seed: int
    started: str
    finished: str
    trajectories: dict
    outputs: dict
    summary: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _dump(obj, path):
    with open(path, "w") as fh:
        fh.write(json.dumps(obj, indent=2, sort_keys=True, default=_jsonify) + "\n")


def _jsonify(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if hasattr(o, "__dataclass_fields__"):
        return asdict(o)
    raise TypeError(f"not serialisable: {type(o)}")


class _Status:
    def __init__(self):
        self.ok = 0
        self.diverged = []

    def add(self, ids, div):
        self.ok += int(np.count_nonzero(~div))
        self.diverged += [int(i) for i in np.asarray(ids)[div]]

    def as_dict(self):
        return {"ok": self.ok, "diverged": len(self.diverged), "diverged_ids": self.diverged}


class _StatusReducer:
    def __init__(self, status):
        self.status = status

    def update(self, ids, snaps, diverged, times, grid):
        self.status.add(ids, diverged)


def _ensemble(cfg: ExperimentConfig, **kw) -> EnsembleSpec:
    return EnsembleSpec(cfg.grid, kw.pop("init", cfg.init), kw.pop("seed", cfg.master_seed),
                        kw.pop("n", cfg.n), chunk=cfg.chunk, workers=cfg.workers)


def _trajectories(cfg, status):
    """Yield trajectories one by one (simulated chunk-wise)."""
    g = cfg.grid
    for start in range(0, cfg.n, cfg.chunk):
        ids = np.arange(start, min(start + cfg.chunk, cfg.n))
        keys = np.array([derive_key(cfg.master_seed, int(i)) for i in ids], dtype=np.uint64)
        snaps, div = simulate_block(g, cfg.init, keys)
        status.add(ids, div)
        for b, sid in enumerate(ids):
            fields = [LatticeField(t=t, values=snaps[b, k].copy(), grid=g)
                      for k, t in enumerate(g.snapshot_times)]
            meta = {"master_seed": cfg.master_seed, "stream_id": int(sid), "scheme": g.scheme,
                    "boundary": g.boundary, "grid": g.to_dict(), "init": cfg.init.to_dict(),
                    "config_hash": cfg.hash()}
            yield Trajectory(fields, int(sid), g, meta, bool(div[b]))


# ---------------------------------------------------------------------------
# pipelines: each writes into ``stage`` and returns (summary, status)


def _simulate(cfg, stage):
    status = _Status()
    for traj in _trajectories(cfg, status):
        save_traj(traj, os.path.join(stage, f"traj_{traj.stream_id:06d}.pamf"))
        if cfg.params.get("csv"):
            traj_csv(traj, os.path.join(stage, f"traj_{traj.stream_id:06d}.csv"))
    return {"trajectories": cfg.n}, status


def _valleys(cfg, stage):
    p = cfg.params
    status = _Status()
    gammas = sorted(p["gamma"])
    rows = []
    for traj in _trajectories(cfg, status):
        if traj.diverged:
            continue
        for gi, g in enumerate(gammas):
            vs = valley_set(traj, g)
            pix = pixelate(stretch(vs, p["beta"])) if len(vs) else pixelate(vs)
            pix.meta.update({"seed": cfg.master_seed, "config_hash": cfg.hash()})
            pix.to_csv(os.path.join(stage, f"valley_{traj.stream_id:06d}_g{gi}.csv"),
                       source="valley", seed=cfg.master_seed)
            for n in range(1, p["n_max"] + 1):
                rows.append((traj.stream_id, g, n, len(shell_clip(pix, n)), len(vs)))
    with open(os.path.join(stage, "valley_occupancy.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stream_id", "gamma", "n", "shell_pixels", "valley_nodes"])
        for r in rows:
            w.writerow([r[0], repr(r[1]), r[2], r[3], r[4]])
    occ = {repr(g): sum(r[3] for r in rows if r[1] == g) for g in gammas}
    nodes = {repr(g): sum(r[4] for r in rows if r[1] == g and r[2] == 1) for g in gammas}
    return {"shell_pixels": occ, "valley_nodes": nodes}, status


def _stretch(cfg, stage):
    st = SpaceTimeSet.from_csv(cfg.params["input"])
    out = stretch(st, cfg.params["beta"])
    out.to_csv(os.path.join(stage, "stretched.csv"), source="stretch", seed=cfg.master_seed)
    return {"points": len(out)}, None


def dim_set(p):
    kind = p["set"]
    if kind == "xi":
        return SpaceTimeSet.from_region(XiRegion(p["q"]))
    if kind == "quadrant":
        return SpaceTimeSet.from_region(QuadrantRegion())
    if kind == "line":
        return SpaceTimeSet.from_region(LineRegion())
    return SpaceTimeSet.from_csv(p["path"])


def _dim(cfg, stage):
    p = cfg.params
    rho = np.round(np.arange(p["rho_min"], p["rho_max"] + 1e-9, p["rho_step"]), 10)
    table = ContentTable()
    est = dimension_estimate(dim_set(p), rho, range(p["n_min"], p["n_max"] + 1),
                             p["strategy"], table=table)
    table.to_csv(os.path.join(stage, "content.csv"))
    est.to_json(os.path.join(stage, "dimension.json"))
    return {"rho_star": est.rho_star, "status": est.status}, None


def _xi_gen(cfg, stage):
    p = cfg.params
    st = xi_q(p["q"], p["n_max"], budget=p["budget"])
    st.to_csv(os.path.join(stage, "xi.csv"), source=f"xi_q(q={p['q']})", seed=cfg.master_seed)
    return {"pixels": len(st)}, None


def _tails(cfg, stage):
    p = cfg.params
    status = _Status()
    red = TailReducer(event_from_params(p), p["sweep"])
    run_ensemble(_ensemble(cfg), [red, _StatusReducer(status)])
    curve = red.result(master_seed=cfg.master_seed, config_hash=cfg.hash())
    curve.to_csv(os.path.join(stage, "tail_curve.csv"))
    report = curve.to_dict()
    fit = None
    if p.get("fit"):
        try:
            fit = fit_exponent(curve)
        except ValueError as exc:
            report["fit_error"] = str(exc)
    report["fit"] = fit
    _dump(report, os.path.join(stage, "tail_report.json"))
    return {"p_hat": curve.p_hat.tolist(), "alpha": fit.alpha if fit else None}, status


def _moments(cfg, stage):
    p = cfg.params
    status = _Status()
    ks = tuple(p["k"])
    red = MomentReducer(p["t_grid"], ks)
    run_ensemble(_ensemble(cfg), [red, _StatusReducer(status)])
    samples = red.samples()
    fits = [moment_lyapunov(k, p["t_grid"], samples=samples, ks=ks, n_boot=p["n_boot"],
                            max_rel_stderr=p["max_rel_stderr"], seed=cfg.master_seed)
            for k in ks]
    _dump({"fits": fits, "config_hash": cfg.hash()}, os.path.join(stage, "moments.json"))
    return {f"slope_k{f.k}": f.slope for f in fits}, status


def _convtest(cfg, stage):
    reps = []
    for r in range(cfg.params["reps"]):
        rep = convolution_test(cfg.grid, cfg.init, cfg.n, derive_sub_seed(cfg.master_seed, r))
        reps.append(rep)
    _dump({"reps": reps, "config_hash": cfg.hash()}, os.path.join(stage, "convtest.json"))
    return {"pvalues": [r.pvalue for r in reps]}, None


def _fkg(cfg, stage):
    p = cfg.params
    status = _Status()
    red = SupReducer(p["t"], p["nu"], [p["interval1"], p["interval2"]])
    run_ensemble(_ensemble(cfg), [red, _StatusReducer(status)])
    sups, _ = red.result()
    rep = fkg_from_sups(sups[:, 0], sups[:, 1], p["s"])
    _dump({"report": rep, "config_hash": cfg.hash()}, os.path.join(stage, "fkg.json"))
    return {"diff": rep.diff, "z": rep.z}, status


def _proxy(cfg, stage):
    p = cfg.params
    g = replace(cfg.grid, snapshot_times=(p["t"],))
    ic = g.index_of(p["center"])
    rows = []
    for w in p["half_widths"]:
        window = window_sites(g, p["center"], w)
        diffs = []
        for start in range(0, cfg.n, cfg.chunk):
            ids = range(start, min(start + cfg.chunk, cfg.n))
            keys = np.array([derive_key(cfg.master_seed, i) for i in ids], dtype=np.uint64)
            full, _ = simulate_block(g, cfg.init, keys)
            loc, _ = simulate_block(g, cfg.init, keys, window=window)
            diffs.append(np.abs(full[:, 0, ic] - loc[:, 0, ic]))
        d = np.concatenate(diffs)
        rows.append((w, float(d.mean()), float(d.std(ddof=1) / math.sqrt(d.size)) if d.size > 1 else 0.0))
    with open(os.path.join(stage, "proxy.csv"), "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["half_width", "mean_abs_diff", "stderr"])
        for r in rows:
            wr.writerow([repr(r[0]), repr(r[1]), repr(r[2])])
    return {"mean_abs_diff": [r[1] for r in rows]}, None


PIPELINES = {"simulate": _simulate, "valleys": _valleys, "stretch": _stretch, "dim": _dim,
             "xi-gen": _xi_gen, "tails": _tails, "moments": _moments, "convtest": _convtest,
             "fkg": _fkg, "proxy": _proxy}


# ---------------------------------------------------------------------------


def _atomic_json(obj, path):
    tmp = path + ".tmp"
    _dump(obj, tmp)
    os.replace(tmp, path)


def run(cfg: ExperimentConfig, out: str = None) -> RunManifest:
    """Run one validated experiment into ``out`` (defaults to ``cfg.out``)."""
    errors, warns = check(cfg)
    if errors:
        raise ValidationError(errors)
    out = out or cfg.out
    os.makedirs(out, exist_ok=True)
    stage = os.path.join(out, ".staging")
    shutil.rmtree(stage, ignore_errors=True)
    os.makedirs(stage)
    marker = os.path.join(out, MARKER)
    with open(marker, "w") as fh:
        fh.write(f"run started {_now()} config {cfg.hash()}\n")
    started = _now()
    try:
        summary, status = PIPELINES[cfg.kind](cfg, stage)
        _dump({"config": cfg.canonical(), "config_hash": cfg.hash()},
              os.path.join(stage, "config.json"))
    except BaseException as exc:
        shutil.rmtree(stage, ignore_errors=True)
        with open(marker, "a") as fh:
            fh.write(f"aborted {_now()}: {type(exc).__name__}: {exc}\n")
        if isinstance(exc, Exception):
            raise RunAborted(f"{cfg.kind} run failed: {exc}") from exc
        raise
    # commit: the old manifest goes first so a crash mid-move cannot pair it with new files
    old = os.path.join(out, MANIFEST)
    if os.path.exists(old):
        os.remove(old)
    outputs = {}
    for name in sorted(os.listdir(stage)):
        dst = os.path.join(out, name)
        os.replace(os.path.join(stage, name), dst)
        outputs[name] = _sha256(dst)
    os.rmdir(stage)
    man = RunManifest(config_hash=cfg.hash(), tool_version=__version__, kind=cfg.kind,
                      master_seed=cfg.master_seed, started=started, finished=_now(),
                      trajectories=status.as_dict() if status else {},
                      outputs=outputs, summary=summary, warnings=list(warns))
    _atomic_json(asdict(man), old)
    os.remove(marker)
    return man


def read_manifest(out: str):
    """The manifest of a completed run, or ``None`` when the run is incomplete."""
    if os.path.exists(os.path.join(out, MARKER)):
        return None
    path = os.path.join(out, MANIFEST)
    if not os.path.exists(path):
        return None
    with open(path) as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# sweeps

# parameters that change the simulated trajectories; everything else only
# changes how shared trajectories are analysed
_SIM_KEYS = {"grid.dx", "grid.dt", "grid.t_end", "experiment.N", "init.c", "init.x0"}


def _set_param(cfg, name, value):
    sec, _, key = name.rpartition(".")
    sec = sec or "params"
    cfg = copy.deepcopy(cfg)
    if sec == "params":
        typ = PARAMS[cfg.kind].get(key)
        if typ is None:
            raise ValidationError([f"sweep: {name!r} is not a parameter of {cfg.kind}"])
        cur = cfg.params.get(key)
        cfg.params[key] = [value] if isinstance(cur, list) else value
    elif sec == "grid" and cfg.grid is not None and key in ("dx", "dt", "t_end"):
        cfg.grid = replace(cfg.grid, **{key: value})
    elif sec == "experiment" and key == "N":
        cfg.n = int(value)
    elif sec == "init" and cfg.init is not None and key in ("c", "x0"):
        cfg.init = replace(cfg.init, **{key: value})
    else:
        raise ValidationError([f"sweep: {name!r} is not sweepable for {cfg.kind}"])
    return cfg


def _flat_summary(summary):
    # one-entry dicts (per-gamma summaries of a single-gamma run) become scalars
    row = {}
    for k, val in sorted(summary.items()):
        if isinstance(val, dict) and len(val) == 1:
            val = next(iter(val.values()))
        row[k] = val if isinstance(val, (int, float, str)) or val is None else \
            json.dumps(val, sort_keys=True, default=_jsonify)
    return row


def sweep(cfg: ExperimentConfig, parameter: str, values, out: str = None):
    """One sub-run per value plus an aggregated ``sweep.csv``.

    Sub-runs that only re-analyse trajectories (for example ``gamma`` of a
    valley run) share the master seed, so results are coupled across values
    and containment relations hold sample by sample.  Sweeps over simulation
    inputs use seeds hashed from ``(master_seed, value index)``.
    """
    values = list(values)
    if not values:
        raise ValidationError(["sweep: empty value list"])
    out = out or cfg.out
    name = parameter if "." in parameter else f"params.{parameter}"
    coupled = name not in _SIM_KEYS
    subs = []
    for i, v in enumerate(values):
        sub = _set_param(cfg, name, v)
        if not coupled:
            sub.master_seed = derive_sub_seed(cfg.master_seed, i)
        errors, _ = check(sub)
        if errors:
            raise ValidationError(errors)
        subs.append(sub)
    os.makedirs(out, exist_ok=True)
    rows = []
    for i, (v, sub) in enumerate(zip(values, subs)):
        man = run(sub, os.path.join(out, f"sweep_{i:03d}"))
        rows.append({"index": i, "value": v, "master_seed": sub.master_seed,
                     "config_hash": man.config_hash, **_flat_summary(man.summary)})
    tmp = os.path.join(out, "sweep.csv.tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    os.replace(tmp, os.path.join(out, "sweep.csv"))
    return rows
