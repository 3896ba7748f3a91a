import csv
import hashlib
import json
import os

import numpy as np
import pytest

from pamvalley.config import ValidationError, read_raw, validate
from pamvalley.level_sets import SpaceTimeSet
from pamvalley.runner import MARKER, RunAborted, read_manifest, run, sweep
from pamvalley.snapshots import load

VALLEYS = """
[experiment]
kind = valleys
master_seed = 11
N = 2

[grid]
dx = 0.25
half_length = 8
t_end = 4
snapshot_every = 0.5

[init]
kind = flat

[params]
gamma = 0.05
n_max = 2
"""


def cfg_from(text, **kw):
    return validate(read_raw(text), **kw)


def files(out):
    return {n: open(os.path.join(out, n), "rb").read() for n in sorted(os.listdir(out))
            if n != "manifest.json"}


def test_rerun_byte_identical(tmp_path):
    cfg = cfg_from(VALLEYS)
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    ma, mb = run(cfg, a), run(cfg, b)
    assert files(a) == files(b)
    assert ma.outputs == mb.outputs and ma.config_hash == mb.config_hash
    assert not os.path.exists(os.path.join(a, MARKER))


def test_manifest_checksums(tmp_path):
    out = str(tmp_path / "r")
    run(cfg_from(VALLEYS), out)
    man = read_manifest(out)
    for name, digest in man["outputs"].items():
        assert hashlib.sha256(open(os.path.join(out, name), "rb").read()).hexdigest() == digest
    assert man["trajectories"]["ok"] == 2


def test_n_zero_is_validation_error():
    with pytest.raises(ValidationError, match="N > 0"):
        cfg_from(VALLEYS.replace("N = 2", "N = 0"))


def test_dim_on_xi2(tmp_path):
    cfg = cfg_from("[experiment]\nkind = dim\n[params]\nset = xi\nq = 2\nn_min = 4\nn_max = 9\n")
    man = run(cfg, str(tmp_path / "d"))
    assert abs(man.summary["rho_star"] - 1.0) < 0.25
    est = json.load(open(tmp_path / "d" / "dimension.json"))
    assert est["rho_star"] == man.summary["rho_star"]


def test_gamma_sweep_nonincreasing(tmp_path):
    cfg = cfg_from(VALLEYS)
    out = str(tmp_path / "sw")
    rows = sweep(cfg, "gamma", [0.02, 0.05, 0.1], out=out)
    assert len(rows) == 3
    nodes = [r["valley_nodes"] for r in rows]
    assert nodes == sorted(nodes, reverse=True)
    assert len({r["master_seed"] for r in rows}) == 1
    with open(os.path.join(out, "sweep.csv")) as fh:
        assert len(list(csv.DictReader(fh))) == 3
    again = sweep(cfg, "gamma", [0.02, 0.05, 0.1], out=str(tmp_path / "sw2"))
    assert [r["config_hash"] for r in again] == [r["config_hash"] for r in rows]


def test_simulation_sweep_uses_distinct_seeds(tmp_path):
    cfg = cfg_from(VALLEYS)
    rows = sweep(cfg, "init.c", [1.0, 2.0], out=str(tmp_path / "s"))
    assert rows[0]["master_seed"] != rows[1]["master_seed"] != cfg.master_seed


def test_sweep_errors(tmp_path):
    cfg = cfg_from(VALLEYS)
    with pytest.raises(ValidationError, match="empty"):
        sweep(cfg, "gamma", [], out=str(tmp_path / "e"))
    with pytest.raises(ValidationError):
        sweep(cfg, "colour", [1.0], out=str(tmp_path / "e"))
    with pytest.raises(ValidationError):
        sweep(cfg, "gamma", [0.1, -1.0], out=str(tmp_path / "e"))
    assert not os.path.exists(tmp_path / "e" / "sweep_000")


def test_failed_run_leaves_marker(tmp_path):
    out = str(tmp_path / "f")
    good = cfg_from(VALLEYS)
    run(good, out)
    bad = cfg_from("[experiment]\nkind = stretch\n[params]\ninput = missing.csv\nbeta = 1\n")
    with pytest.raises(RunAborted):
        run(bad, out)
    assert os.path.exists(os.path.join(out, MARKER))
    assert read_manifest(out) is None
    assert not os.path.exists(os.path.join(out, ".staging"))
    # a later successful run clears the marker
    run(good, out)
    assert read_manifest(out) is not None


def test_simulate_valleys_dim_chain(tmp_path):
    sim = cfg_from(VALLEYS.replace("kind = valleys", "kind = simulate")
                   .replace("gamma = 0.05\nn_max = 2\n", ""))
    run(sim, str(tmp_path / "sim"))
    tr = load(str(tmp_path / "sim" / "traj_000000.pamf"))
    assert tr.metadata["master_seed"] == 11 and len(tr.snapshots) == 8

    run(cfg_from(VALLEYS), str(tmp_path / "v"))
    pix = SpaceTimeSet.from_csv(str(tmp_path / "v" / "valley_000000_g0.csv"))
    assert pix.kind == "pixel"

    text = ("[experiment]\nkind = dim\n[params]\nset = file\npath = {p}\nn_min = 1\nn_max = 4\n"
            .format(p=tmp_path / "v" / "valley_000000_g0.csv"))
    m1 = run(cfg_from(text), str(tmp_path / "d1"))
    m2 = run(cfg_from(text), str(tmp_path / "d2"))
    assert m1.outputs == m2.outputs


def test_snapshot_values_match_direct_solve(tmp_path):
    from pamvalley.noise import NoiseStream
    from pamvalley.she import solve
    sim = cfg_from(VALLEYS.replace("kind = valleys", "kind = simulate")
                   .replace("gamma = 0.05\nn_max = 2\n", ""))
    run(sim, str(tmp_path / "sim"))
    tr = load(str(tmp_path / "sim" / "traj_000001.pamf"))
    ref = solve(sim.grid, sim.init, NoiseStream(11, 1))
    for a, b in zip(tr.snapshots, ref.snapshots):
        np.testing.assert_array_equal(a.values, b.values)
