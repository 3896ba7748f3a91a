"""Experiment configuration: parsing, typing and validation.

Configs are INI-style text (``key = value`` under ``[experiment]``, ``[grid]``,
``[init]`` and ``[params]``) or JSON objects with the same four sections.
Lists are comma separated in the INI form.
"""
from __future__ import annotations

import configparser
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from typing import Optional

from .she import GridSpec, InitialData

KINDS = ("simulate", "valleys", "stretch", "dim", "tails", "moments", "convtest",
         "fkg", "proxy", "xi-gen")
# kinds that run the SPDE and therefore need [grid] and [init]
SIMULATING = ("simulate", "valleys", "tails", "moments", "convtest", "fkg", "proxy")
WORKERS_ENV = "PAMVALLEY_WORKERS"


class ValidationError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


def _floats(v):
    if isinstance(v, (list, tuple)):
        return [float(x) for x in v]
    return [float(x) for x in str(v).replace(";", ",").split(",") if x.strip()]


def _ints(v):
    return [int(x) for x in _floats(v)]


def _bool(v):
    if isinstance(v, bool):
        return v
    return str(v).strip().lower() in ("1", "true", "yes", "on")


# (type, default); a default of ... means required
PARAMS = {
    "simulate": {"csv": (_bool, False)},
    "valleys": {"gamma": (_floats, ...), "beta": (float, 1.0), "n_max": (int, 3)},
    "stretch": {"input": (str, ...), "beta": (float, ...)},
    "dim": {"set": (str, ...), "q": (float, None), "path": (str, None),
            "rho_min": (float, 0.05), "rho_max": (float, 2.5), "rho_step": (float, 0.05),
            "n_min": (int, 4), "n_max": (int, 12), "strategy": (str, "greedy_multiscale")},
    "xi-gen": {"q": (float, ...), "n_max": (int, ...), "budget": (int, 5_000_000)},
    "tails": {"event": (str, ...), "sweep": (_floats, ...), "t": (float, None), "x": (float, 0.0),
              "gamma": (float, None), "s": (float, None), "nu": (float, None), "M": (float, None),
              "window": (float, None), "a": (float, None), "eps": (float, None),
              "l1": (float, None), "l2": (float, None), "b": (float, 0.0), "fit": (_bool, True)},
    "moments": {"k": (_ints, [1, 2, 3]), "t_grid": (_floats, ...),
                "max_rel_stderr": (float, 0.5), "n_boot": (int, 1000)},
    "convtest": {"reps": (int, 1)},
    "fkg": {"t": (float, 1.0), "nu": (float, ...), "interval1": (_floats, ...),
            "interval2": (_floats, ...), "s": (float, ...)},
    "proxy": {"t": (float, ...), "center": (float, 0.0), "half_widths": (_floats, ...)},
}


@dataclass
class ExperimentConfig:
    kind: str
    master_seed: int = 0
    n: int = 1
    grid: Optional[GridSpec] = None
    init: Optional[InitialData] = None
    params: dict = field(default_factory=dict)
    out: str = "out"
    workers: int = 1
    chunk: int = 512
    warnings: list = field(default_factory=list)

    def canonical(self) -> dict:
        """Everything that determines the results (no output path, no worker count)."""
        return {"kind": self.kind, "master_seed": self.master_seed, "N": self.n,
                "grid": self.grid.to_dict() if self.grid else None,
                "init": self.init.to_dict() if self.init else None,
                "params": self.params}

    def hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def read_raw(path_or_text: str) -> dict:
    """Parse INI or JSON text (or a file holding it) into ``{section: {key: value}}``."""
    text = path_or_text
    if "\n" not in path_or_text and os.path.exists(path_or_text):
        with open(path_or_text) as fh:
            text = fh.read()
    stripped = text.lstrip()
    if stripped.startswith("{"):
        raw = json.loads(text)
        return {str(k): dict(v) for k, v in raw.items()}
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    cp.read_string(text)
    return {s: dict(cp[s]) for s in cp.sections()}


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply ``section.key=value`` strings."""
    for item in overrides or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ValidationError([f"override {item!r}: expected section.key=value"])
        lhs, val = item.split("=", 1)
        sec, key = lhs.split(".", 1)
        raw.setdefault(sec.strip(), {})[key.strip()] = val.strip()
    return raw


def _grid_from(raw_grid, errors):
    g = dict(raw_grid)
    try:
        dx = float(g.pop("dx"))
    except KeyError:
        errors.append("grid.dx: required")
        return None
    if "dt" in g:
        dt = float(g.pop("dt"))
        g.pop("tau", None)
    else:
        dt = float(g.pop("tau", 1.0)) * dx * dx
    if "half_length" in g:
        h = float(g.pop("half_length"))
        x_min, x_max = -h, h
    else:
        try:
            x_min, x_max = float(g.pop("x_min")), float(g.pop("x_max"))
        except KeyError:
            errors.append("grid.x_min/x_max: domain required (or grid.half_length)")
            return None
    try:
        t_end = float(g.pop("t_end"))
    except KeyError:
        errors.append("grid.t_end: required")
        return None
    if "snapshot_every" in g:
        step = float(g.pop("snapshot_every"))
        k = int(round(t_end / step))
        snaps = [round(step * (i + 1), 12) for i in range(k)]
    else:
        snaps = _floats(g.pop("snapshot_times", t_end))
    boundary = g.pop("boundary", "periodic")
    scheme = g.pop("scheme", "splitting")
    for k in g:
        errors.append(f"grid.{k}: unknown key")
    return GridSpec(dx=dx, dt=dt, x_min=x_min, x_max=x_max, t_end=t_end,
                    snapshot_times=tuple(snaps), boundary=boundary, scheme=scheme)


def _init_from(raw_init, errors):
    kind = raw_init.get("kind", "flat")
    try:
        if kind == "flat":
            return InitialData.flat(float(raw_init.get("c", 1.0)))
        if kind == "dirac":
            return InitialData.dirac(float(raw_init.get("x0", 0.0)))
        if kind == "sampled":
            return InitialData.sampled(_floats(raw_init["values"]))
    except (KeyError, ValueError) as exc:
        errors.append(f"init: {exc}")
        return None
    errors.append(f"init.kind: must be flat, dirac or sampled (got {kind!r})")
    return None


def _params_from(kind, raw_params, errors):
    schema = PARAMS[kind]
    out = {}
    for key, (typ, default) in schema.items():
        if key in raw_params and raw_params[key] not in ("", None):
            try:
                out[key] = typ(raw_params[key])
            except (TypeError, ValueError):
                errors.append(f"params.{key}: cannot parse {raw_params[key]!r}")
        elif default is ...:
            errors.append(f"params.{key}: required for {kind}")
        else:
            out[key] = default
    for key in raw_params:
        if key not in schema:
            errors.append(f"params.{key}: unknown for {kind}")
    return out


def build(raw: dict, kind: Optional[str] = None, seed: Optional[int] = None,
          workers: Optional[int] = None, out: Optional[str] = None):
    """Typed config plus ``(errors, warnings)``; nothing is raised here."""
    errors = []
    exp = dict(raw.get("experiment", {}))
    kind = kind or exp.get("kind")
    if kind not in KINDS:
        return None, [f"experiment.kind: must be one of {KINDS} (got {kind!r})"], []
    try:
        master_seed = int(seed if seed is not None else exp.get("master_seed", 0))
    except ValueError:
        errors.append("experiment.master_seed: not an integer")
        master_seed = 0
    if not 0 <= master_seed < 2 ** 64:
        errors.append("experiment.master_seed: must be a 64-bit unsigned integer")
    n = int(float(exp.get("N", exp.get("n", 1))))
    if workers is None:
        workers = int(exp.get("workers", os.environ.get(WORKERS_ENV, 1)))
    cfg = ExperimentConfig(kind=kind, master_seed=master_seed, n=n,
                           out=out or exp.get("out", "out"), workers=workers,
                           chunk=int(exp.get("chunk", 512)))
    if kind in SIMULATING:
        if "grid" not in raw:
            errors.append("grid: section required")
        else:
            cfg.grid = _grid_from(raw["grid"], errors)
        cfg.init = _init_from(raw.get("init", {}), errors)
    cfg.params = _params_from(kind, raw.get("params", {}), errors)
    e2, w2 = check(cfg)
    cfg.warnings = w2
    return cfg, errors + e2, w2


def check(cfg: ExperimentConfig):
    """Module-level rules for a typed config: ``(errors, warnings)``."""
    errors, warns = [], []
    p = cfg.params
    if cfg.workers < 1:
        errors.append("experiment.workers: must be >= 1")
    if cfg.kind in SIMULATING:
        if cfg.n <= 0:
            errors.append("experiment.N: N > 0 required")
        if cfg.grid is not None:
            ge, gw = cfg.grid.problems()
            errors += [f"grid.{e}" for e in ge]
            warns += gw
    if cfg.kind == "valleys":
        if any(not g > 0 for g in p.get("gamma", [])):
            errors.append("params.gamma: γ > 0 required")
        if not p.get("beta", 1.0) > 0:
            errors.append("params.beta: β > 0 required")
        if cfg.grid is not None and cfg.grid.t_end <= math.e:
            warns.append("grid.t_end: no snapshot with t > e, valley sets will be empty")
    if cfg.kind == "stretch" and not p.get("beta", 1.0) > 0:
        errors.append("params.beta: β > 0 required")
    if cfg.kind == "dim":
        if p.get("set") not in ("xi", "quadrant", "line", "file"):
            errors.append("params.set: must be xi, quadrant, line or file")
        if p.get("set") == "xi" and not (p.get("q") or 0) > 0:
            errors.append("params.q: q > 0 required")
        if p.get("set") == "file" and not p.get("path"):
            errors.append("params.path: required for set = file")
        if p.get("n_max", 12) - p.get("n_min", 4) + 1 < 4:
            errors.append("params.n_min/n_max: at least 4 shells required")
        if p.get("n_min", 4) < 1:
            errors.append("params.n_min: n >= 1 required")
        if p.get("rho_min", 0.05) > 0.25 or p.get("rho_max", 2.5) < 2.0:
            errors.append("params.rho_min/rho_max: grid must span [0, 2]")
        if p.get("strategy") not in ("exact_small", "single_scale", "greedy_multiscale"):
            errors.append("params.strategy: unknown strategy")
    if cfg.kind == "xi-gen":
        if not p.get("q", 1) > 0:
            errors.append("params.q: q > 0 required")
        if p.get("n_max", 1) < 1:
            errors.append("params.n_max: n_max >= 1 required")
    if cfg.kind == "tails":
        from .tails import EVENT_KINDS, SWEEP_PARAM
        ev = p.get("event")
        if ev not in EVENT_KINDS:
            errors.append(f"params.event: must be one of {EVENT_KINDS}")
        else:
            spec = event_from_params(p)
            sweep_name = SWEEP_PARAM[ev]
            if sweep_name == "gamma" and any(not g > 0 for g in p.get("sweep", [])):
                errors.append("params.sweep: γ > 0 required")
            errors += [f"params.{e}" for e in spec.problems(sweep_name)]
            if cfg.n < 100:
                errors.append("experiment.N: tail estimates need N >= 100")
        if not p.get("sweep"):
            errors.append("params.sweep: empty value list")
    if cfg.kind == "moments":
        if any(k < 1 for k in p.get("k", [])):
            errors.append("params.k: positive integers required")
        if any(k > 3 for k in p.get("k", [])):
            warns.append("params.k: k > 3 estimates are dominated by rare samples")
        if cfg.init is not None and (cfg.init.kind != "flat" or cfg.init.c != 1.0):
            errors.append("init: moments need flat initial data with c = 1")
        if cfg.grid is not None:
            snaps = set(round(t, 9) for t in cfg.grid.snapshot_times)
            miss = [t for t in p.get("t_grid", []) if round(t, 9) not in snaps]
            if miss:
                errors.append(f"params.t_grid: times {miss} are not snapshot times")
    if cfg.kind == "fkg":
        if not 0 < p.get("nu", 0.5) < 1:
            errors.append("params.nu: ν in (0, 1) required")
        i1, i2 = p.get("interval1", [0, 1]), p.get("interval2", [2, 3])
        if len(i1) != 2 or len(i2) != 2:
            errors.append("params.interval1/interval2: two numbers each")
        else:
            (a, b), (c, d) = sorted([tuple(i1), tuple(i2)])
            if not (a < b < c < d):
                errors.append("params.interval1/interval2: intervals must be disjoint")
    if cfg.kind == "convtest" and cfg.grid is not None and cfg.grid.t_end < 0.5:
        errors.append("grid.t_end: convolution test needs t >= 0.5")
    if cfg.kind == "proxy" and any(not w > 0 for w in p.get("half_widths", [])):
        errors.append("params.half_widths: must be positive")
    return errors, warns


def event_from_params(p):
    from .tails import EventSpec  # noqa: F401  (deferred import)
    keys = ("t", "x", "gamma", "s", "nu", "M", "window", "a", "eps", "l1", "l2", "b")
    return EventSpec(p["event"], **{k: p.get(k) for k in keys if p.get(k) is not None})


def validate(raw_or_cfg, **kw):
    """Validated :class:`ExperimentConfig`, or :class:`ValidationError` listing every problem."""
    if isinstance(raw_or_cfg, ExperimentConfig):
        errors, warns = check(raw_or_cfg)
        cfg = raw_or_cfg
        cfg.warnings = warns
    else:
        raw = read_raw(raw_or_cfg) if isinstance(raw_or_cfg, str) else raw_or_cfg
        cfg, errors, warns = build(raw, **kw)
    if errors:
        raise ValidationError(errors)
    return cfg
