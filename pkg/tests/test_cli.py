import json
import os

import numpy as np
import pytest

from axijet.cli import main
from axijet.config import ConfigError, RunConfig

COARSE = """
[flow]
Q = 0.02
[grid]
hx = 0.0625
hy = 0.0625
[truncation]
levels = 1.0, 3.0
[tolerances]
prebracket = no
"""


def test_config_round_trip():
    cfg = RunConfig(Q=0.5, preset="quadratic-bump", levels=((0.5, 1.5), (1.0, 3.0)),
                    lambdas=(0.03, 0.05), prebracket=False, threads=2)
    back = RunConfig.from_ini(cfg.to_ini())
    assert back == cfg
    assert back.digest() == cfg.digest()


def test_config_hash_tracks_values():
    a = RunConfig()
    b = RunConfig(eps=0.021)
    assert a.digest() != b.digest()
    assert RunConfig().digest() == a.digest()


def test_config_rejects_bad_input():
    with pytest.raises(ConfigError, match="unknown section"):
        RunConfig.from_ini("[bogus]\nx = 1\n")
    with pytest.raises(ConfigError, match="unknown key"):
        RunConfig.from_ini("[flow]\nq = 1\n")
    with pytest.raises(ConfigError):
        RunConfig.from_ini("[truncation]\nlevels = 1, 3; 0.5, 4\n")
    with pytest.raises(ConfigError):
        RunConfig(gamma=1.0)


def write_cfg(tmp_path, text):
    p = tmp_path / "run.ini"
    p.write_text(text)
    return str(p)


def test_upstream_command(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "[flow]\nQ = 1.01192885125388139\n")
    out = tmp_path / "up"
    assert main(["upstream", "--config", cfg, "--out", str(out)]) == 0
    text = capsys.readouterr().out
    pbar = float(text.split("pbar")[1].split()[0])
    assert pbar == pytest.approx(0.32, abs=1e-9)
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "upstream" and man["config_hash"] == RunConfig.load(cfg).digest()


def test_inadmissible_upstream_exits_2(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "[flow]\nQ = 1.2\n")
    assert main(["upstream", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "no admissible subsonic upstream state" in capsys.readouterr().err


def test_out_precedence(tmp_path, monkeypatch):
    cfg = write_cfg(tmp_path, "[flow]\nQ = 1.0\n[run]\nout = " + str(tmp_path / "cfgout") + "\n")
    monkeypatch.setenv("AXIJET_OUT", str(tmp_path / "envout"))
    main(["upstream", "--config", cfg])
    assert (tmp_path / "envout" / "manifest.json").exists()
    main(["upstream", "--config", cfg, "--out", str(tmp_path / "argout")])
    assert (tmp_path / "argout" / "manifest.json").exists()
    assert not (tmp_path / "cfgout").exists()


def test_sweep_sorted(tmp_path):
    cfg = write_cfg(tmp_path, COARSE)
    out = tmp_path / "sw"
    assert main(["sweep", "--config", cfg, "--out", str(out), "--lambdas", "0.06,0.03"]) == 0
    rows = (out / "sweep.csv").read_text().splitlines()
    assert rows[0] == "Lambda,Upsilon_top,H_low_est,energy"
    lams = [float(r.split(",")[0]) for r in rows[1:]]
    assert lams == [0.03, 0.06]
    phis = [float(r.split(",")[1]) for r in rows[1:]]
    assert phis[0] > phis[1]


@pytest.fixture(scope="module")
def solved(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("solve")
    cfg = write_cfg(tmp, COARSE)
    out = tmp / "run"
    assert main(["solve", "--config", cfg, "--out", str(out)]) == 0
    return cfg, out


def test_solve_outputs(solved):
    cfg, out = solved
    names = set(os.listdir(out))
    for n in ("fields.csv", "boundary.csv", "boundary_tail.csv", "summary.txt", "fit_log.csv",
              "continuation.csv", "solution.npz", "manifest.json", "config.ini"):
        assert n in names
    assert not any(n.endswith(".partial") for n in names)
    man = json.loads((out / "manifest.json").read_text())
    assert man["flags"]["subsonic"] and "continuation" in man["stage_seconds"]
    assert RunConfig.load(str(out / "config.ini")) == RunConfig.load(cfg)


def test_export_is_bit_identical(solved, tmp_path):
    cfg, out = solved
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["export", "--config", cfg, "--out", str(a), "--from", str(out)]) == 0
    assert main(["export", "--config", cfg, "--out", str(b), "--from", str(out)]) == 0
    for n in ("fields.csv", "boundary.csv", "boundary_tail.csv", "summary.txt"):
        assert (a / n).read_bytes() == (b / n).read_bytes() == (out / n).read_bytes()


def test_export_missing_solution_marks_partial(tmp_path, capsys):
    cfg = write_cfg(tmp_path, COARSE)
    out = tmp_path / "empty"
    assert main(["export", "--config", cfg, "--out", str(out)]) == 1
    assert "stage load failed" in capsys.readouterr().err


def test_nozzle_table_columns(tmp_path):
    y = np.linspace(1.0, 1.95, 40)
    N = -np.tan(np.pi * (y - 1.0) / 2.0)
    tab = tmp_path / "wall.csv"
    tab.write_text("y,N\n" + "".join(f"{a:.17g},{b:.17g}\n" for a, b in zip(y, N)))
    noz = RunConfig(nozzle_table=str(tab)).nozzle()
    assert noz.N(1.5) == pytest.approx(-1.0, abs=1e-3)
