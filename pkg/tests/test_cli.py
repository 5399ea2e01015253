import csv
import json

import numpy as np
import pytest

from chemolayer.cli import main
from chemolayer.io import load_field, load_grid

TINY = {"Nx": 8, "Ny": 65, "Nz": 128, "dt": 1e-3, "T": 0.01,
        "epsilons": [0.2, 0.1, 0.05], "samples": 2}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "cfg.json").write_text(json.dumps(TINY))
    assert main(["outer", "--config", str(d / "cfg.json"), "--out", str(d / "outer")]) == 0
    assert main(["layers", "--config", str(d / "cfg.json"), "--out", str(d / "layers")]) == 0
    return d


def test_outer_outputs(workdir):
    out = workdir / "outer"
    hdr, n = load_field(out / "n_final.bin")
    assert n.shape == (8, 65) and hdr["time"] == pytest.approx(0.01)
    assert (out / "omega_0000000.bin").exists()
    g, lg = load_grid(out / "grid.json")
    assert g.Ny == 65 and lg is None
    rows = list(csv.DictReader(open(out / "traces.csv")))
    assert len(rows) == 8 * 11
    assert {"t", "x", "dyc", "dyyu2"} <= set(rows[0])


def test_layers_from_recorded_traces_match_live(workdir):
    cfg = str(workdir / "cfg.json")
    rec = workdir / "layers_csv"
    assert main(["layers", "--traces", str(workdir / "outer" / "traces.csv"),
                 "--config", cfg, "--out", str(rec)]) == 0
    for k in ("u1b1", "cb2", "nb2"):
        a = load_field(workdir / "layers" / f"{k}_ring2.bin")[1]
        b = load_field(rec / f"{k}_ring2.bin")[1]
        assert np.max(np.abs(a - b)) <= 1e-12 * max(1.0, np.max(np.abs(a)))
    rows = list(csv.reader(open(rec / "fF.csv")))
    assert rows[0] == ["t", "x", "f", "F"] and len(rows) == 1 + 8 * 10


def test_compose(workdir):
    out = workdir / "compose"
    assert main(["compose", "--outer", str(workdir / "outer"), "--layers", str(workdir / "layers"),
                 "--epsilon", "0.1", "--out", str(out)]) == 0
    for name in ("na", "ca", "u1a", "u2a", "N", "K", "U1", "U2"):
        hdr, v = load_field(out / f"{name}.bin")
        assert v.shape == (8, 65) and np.all(np.isfinite(v))
    wall = json.loads((out / "wall.json").read_text())
    assert wall["u2_minus_f"] <= 1e-10


def test_viscous(workdir):
    out = workdir / "visc"
    assert main(["viscous", "--epsilon", "0.1", "--config", str(workdir / "cfg.json"),
                 "--out", str(out)]) == 0
    _, w = load_field(out / "omega_final.bin")
    assert np.all(w[:, 0] == 0)


def test_viscous_rejects_unresolved_layer(workdir, capsys):
    rc = main(["viscous", "--epsilon", "0.001", "--config", str(workdir / "cfg.json"),
               "--out", str(workdir / "bad")])
    assert rc == 2
    assert "resolve" in capsys.readouterr().err


def test_norms(workdir, capsys):
    out = workdir / "outer"
    rc = main(["norms", str(out / "c_final.bin"), "--out", str(workdir / "norms.csv")])
    assert rc == 0
    assert "Y^{0,0}" in capsys.readouterr().out
    rows = list(csv.reader(open(workdir / "norms.csv")))
    assert rows[0][0] == "time" and float(rows[1][-1]) > 0
    rc = main(["norms", str(workdir / "layers" / "cb1_ring2.bin"), "--kind", "Z"])
    assert rc == 0


def test_converge(workdir):
    out = workdir / "conv"
    assert main(["converge", "--config", str(workdir / "cfg.json"), "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert len(rep["rows"]) == 3 and (out / "report.csv").exists()
    assert (out / "plots" / "remainders_K.dat").exists()


def test_fluidfree(workdir, capsys):
    cfg = dict(TINY, family="fluid_free", T=0.02)
    (workdir / "ff.json").write_text(json.dumps(cfg))
    rc = main(["fluidfree", "--config", str(workdir / "ff.json"), "--out", str(workdir / "ff")])
    assert rc == 0
    assert "PASS" in capsys.readouterr().out
    rep = json.loads((workdir / "ff" / "fluidfree.json").read_text())
    assert rep["passed"]
