"""Tests for the command-line interface: configs, manifests, exit codes."""

import hashlib
import json
import math

import numpy as np
import pytest

from isingspec.cli import RunConfig, normalize_config, run, validate_config

UNIT_ATOM_TEXT = "m1 1.0\natom 1.0 1.0\n"
THREE_ATOMS_TEXT = ("m1 1.0\natom 1.0 1.0\natom 1.618 1.0\n"
                    "atom 1.989 1.0\n")


def _read_csv(path):
    header, rows, comments = None, [], []
    for line in path.read_text().splitlines():
        if line.startswith("#"):
            comments.append(line)
        elif header is None:
            header = line.split(",")
        else:
            rows.append(line.split(","))
    return comments, header, rows


def _manifest_hash_of(out_dir):
    text = (out_dir / "manifest.txt").read_text()
    return hashlib.sha256(text.encode()).hexdigest()[:12]


def _assert_stamped(out_dir, *names):
    mhash = _manifest_hash_of(out_dir)
    for name in names:
        comments, _, _ = _read_csv(out_dir / name)
        assert comments[0] == f"# manifest: {mhash}", name


# ---------------------------------------------------------------- validation


def test_validate_reports_every_error_with_line_numbers():
    text = ("command = simulate\n"
            "n = -4\n"
            "samples = twelve\n"
            "bogus = 1\n"
            "samples = 10\n")
    errors = validate_config(text)
    assert isinstance(errors, list)
    joined = "\n".join(errors)
    assert "line 2: n:" in joined
    assert "line 3: samples:" in joined
    assert "line 4: unknown key 'bogus'" in joined
    assert "line 5: duplicate key 'samples'" in joined
    assert "missing required key 'n'" in joined


def test_validate_command_handling():
    errors = validate_config("command = fit\nin = K.csv\nterms = 2\n",
                             command="simulate")
    assert any("config is for 'fit', not 'simulate'" in e for e in errors)
    errors = validate_config("command = bogus\n")
    assert any("unknown command 'bogus'" in e for e in errors)
    assert validate_config("") == ["no command given"]


def test_validate_fills_defaults():
    cfg = validate_config("command = simulate\nn = 8\nsamples = 40\n")
    assert isinstance(cfg, RunConfig)
    p = cfg.params
    assert p["n"] == 8 and p["samples"] == 40
    assert p["chains"] == 1 and p["thin"] == 1
    assert p["algorithm"] == "mixed" and p["seed"] == 0
    assert p["h"] == 0.0
    assert "therm" not in p


def test_validate_accepts_both_line_forms_and_comments():
    text = ("# a comment line\n"
            "command spectral\n"
            "measure = m.txt   # trailing comment\n"
            "k-grid = 0:0.5:2\n")
    cfg = validate_config(text)
    assert isinstance(cfg, RunConfig)
    assert cfg.params["measure"] == "m.txt"
    assert cfg.params["k_grid"] == (0.0, 0.5, 2.0)


def test_normalize_is_canonical_and_idempotent():
    messy = ("command spectral\n"
             "k-grid = 0:0.5:2\n"
             "measure m.txt\n")
    canon = normalize_config(messy)
    assert canon.splitlines()[0] == "command = spectral"
    assert normalize_config(canon) == canon
    with pytest.raises(ValueError, match="unknown key"):
        normalize_config("command = spectral\nmeasure = m\nwat = 1\n")


def test_structured_values_round_trip():
    cfg = validate_config("command = fit\nin = K.csv\nterms = 3\n"
                          "window = 2:10\n")
    assert cfg.params["window"] == (2.0, 10.0)
    cfg2 = validate_config(cfg.serialize())
    assert cfg2.params == cfg.params
    gp = validate_config("command = gp-sample\nmeasure = m\n"
                         "grid = 0,0.25,8\npaths = 4\n")
    assert gp.params["grid"] == (0.0, 0.25, 8)
    assert validate_config(gp.serialize()).params == gp.params


# ---------------------------------------------------------------- exit codes


def test_usage_exit_codes(capsys):
    assert run([]) == 2
    assert run(["bogus-command"]) == 2
    assert run(["spectral", "--no-such-flag", "x"]) == 2
    rc = run(["fit", "--out", "x"])
    assert rc == 2
    err = capsys.readouterr().err
    assert "missing required key 'in'" in err
    assert "missing required key 'terms'" in err


def test_missing_out_is_usage_error(tmp_path, capsys):
    m = tmp_path / "m.txt"
    m.write_text(UNIT_ATOM_TEXT)
    rc = run(["spectral", "--measure", str(m), "--K-grid", "0:1:2"])
    assert rc == 2
    assert "--out is required" in capsys.readouterr().err


def test_domain_error_exit_code(tmp_path, capsys):
    m = tmp_path / "m.txt"
    m.write_text("m1 1.0\npiece 1.0 inf 1.0 -0.5\n")
    rc = run(["gp-sample", "--measure", str(m), "--grid", "0,0.1,16",
              "--paths", "4", "--out", str(tmp_path / "out")])
    assert rc == 1
    assert "exponent < -1" in capsys.readouterr().err


def test_missing_config_file_is_io_error(tmp_path):
    rc = run(["spectral", "--config", str(tmp_path / "nope.cfg"),
              "--out", str(tmp_path / "out")])
    assert rc == 1


# ---------------------------------------------------------------- spectral


def test_spectral_writes_exact_kernel_values(tmp_path):
    m = tmp_path / "m.txt"
    m.write_text(UNIT_ATOM_TEXT)
    grid = tmp_path / "grid.txt"
    grid.write_text("0.5 0.0\n1.0 1.0\n")
    out = tmp_path / "out"
    rc = run(["spectral", "--measure", str(m), "--K-grid", "0:0.5:2",
              "--H-grid", str(grid), "--out", str(out)])
    assert rc == 0
    _assert_stamped(out, "K.csv", "H.csv")
    _, header, rows = _read_csv(out / "K.csv")
    assert header[:2] == ["s", "K"]
    table = {float(r[0]): float(r[1]) for r in rows}
    # Unit atom: K(s) = pi e^{-|s|}.
    assert table[0.0] == pytest.approx(math.pi, rel=1e-12)
    assert table[2.0] == pytest.approx(math.pi * math.exp(-2.0), rel=1e-10)
    _, _, hrows = _read_csv(out / "H.csv")
    assert len(hrows) == 2


def test_spectral_requires_some_grid(tmp_path, capsys):
    m = tmp_path / "m.txt"
    m.write_text(UNIT_ATOM_TEXT)
    rc = run(["spectral", "--measure", str(m), "--out", str(tmp_path / "o")])
    assert rc == 1
    assert "grid" in capsys.readouterr().err


# ---------------------------------------------------------------- fit


def test_fit_recovers_three_atoms_from_spectral_output(tmp_path):
    m = tmp_path / "m.txt"
    m.write_text(THREE_ATOMS_TEXT)
    kdir = tmp_path / "k"
    assert run(["spectral", "--measure", str(m), "--K-grid", "0.25:0.25:10",
                "--out", str(kdir)]) == 0
    fdir = tmp_path / "f"
    rc = run(["fit", "--in", str(kdir / "K.csv"), "--terms", "3",
              "--out", str(fdir)])
    assert rc == 0
    payload = json.loads((fdir / "fit.json").read_text())
    assert payload["manifest"] == _manifest_hash_of(fdir)
    assert payload["masses"] == pytest.approx([1.0, 1.618, 1.989], rel=1e-6)
    assert payload["gap_check"]["ok"] is True
    assert payload["converged"] is True


# ---------------------------------------------------------------- asymptotics


def test_asymptotics_reports_plateau_limits(tmp_path):
    m = tmp_path / "m.txt"
    m.write_text(UNIT_ATOM_TEXT)
    out = tmp_path / "out"
    rc = run(["asymptotics", "--measure", str(m), "--t", "30",
              "--out", str(out)])
    assert rc == 0
    _, _, rows = _read_csv(out / "asymptotics.csv")
    table = {r[0]: float(r[1]) for r in rows}
    assert table["process_limit"] == pytest.approx(math.pi, rel=1e-12)
    assert table["field_limit"] == pytest.approx(math.sqrt(math.pi / 2),
                                                 rel=1e-12)
    assert table["field_ratio"] == pytest.approx(table["field_limit"],
                                                 rel=0.01)


# ---------------------------------------------------------------- gp-sample


def test_gp_sample_few_paths_flagged(tmp_path, capsys):
    m = tmp_path / "m.txt"
    m.write_text(UNIT_ATOM_TEXT)
    out = tmp_path / "out"
    rc = run(["gp-sample", "--measure", str(m), "--grid", "0,0.25,64",
              "--paths", "20", "--out", str(out)])
    assert rc == 3
    assert "few-paths" in capsys.readouterr().err
    comments, header, rows = _read_csv(out / "paths.csv")
    assert "# form: wide" in comments
    assert len(rows) == 64
    assert len(header) == 21
    assert not (out / "cov.csv").exists()


def test_gp_sample_deterministic_under_rerun(tmp_path):
    m = tmp_path / "m.txt"
    m.write_text(UNIT_ATOM_TEXT)
    args = ["gp-sample", "--measure", str(m), "--grid", "0,0.5,16",
            "--paths", "8", "--seed", "11"]
    run(args + ["--out", str(tmp_path / "a")])
    run(args + ["--out", str(tmp_path / "b")])
    assert ((tmp_path / "a" / "paths.csv").read_bytes()
            == (tmp_path / "b" / "paths.csv").read_bytes())


# ---------------------------------------------------------------- simulate


@pytest.fixture(scope="module")
def sim_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim") / "run"
    rc = run(["simulate", "--n", "8", "--samples", "48", "--chains", "2",
              "--h", "40", "--seed", "3", "--snapshots", "--out", str(out)])
    assert rc in (0, 3)
    return out


@pytest.mark.mc
def test_simulate_outputs(sim_run):
    _assert_stamped(sim_run, "chain_00.csv", "chain_01.csv", "two_point.csv")
    snaps = sorted((sim_run / "snapshots").glob("*.snap"))
    assert len(snaps) == 2 * 48
    _, _, rows = _read_csv(sim_run / "two_point.csv")
    # (0,0) plus both axes out to n/2.
    assert len(rows) == 1 + 2 * 4
    assert float(rows[0][2]) == 1.0
    text = (sim_run / "manifest.txt").read_text()
    assert "therm = " in text
    assert "threads" not in text
    assert "version = " in text


@pytest.mark.mc
def test_simulate_rerun_from_manifest_is_byte_identical(sim_run, tmp_path):
    out2 = tmp_path / "replay"
    rc = run(["simulate", "--config", str(sim_run / "manifest.txt"),
              "--out", str(out2)])
    assert rc in (0, 3)
    files = sorted(p.relative_to(sim_run) for p in sim_run.rglob("*")
                   if p.is_file())
    assert files == sorted(p.relative_to(out2) for p in out2.rglob("*")
                           if p.is_file())
    for rel in files:
        assert (sim_run / rel).read_bytes() == (out2 / rel).read_bytes(), rel


@pytest.mark.mc
def test_simulate_threads_do_not_change_results(sim_run, tmp_path):
    out2 = tmp_path / "threaded"
    rc = run(["simulate", "--config", str(sim_run / "manifest.txt"),
              "--threads", "2", "--out", str(out2)])
    assert rc in (0, 3)
    for name in ("chain_00.csv", "chain_01.csv", "two_point.csv"):
        assert (sim_run / name).read_bytes() == (out2 / name).read_bytes()


@pytest.mark.mc
def test_flag_overrides_config(sim_run, tmp_path):
    out2 = tmp_path / "override"
    rc = run(["simulate", "--config", str(sim_run / "manifest.txt"),
              "--samples", "12", "--out", str(out2)])
    assert rc in (0, 3)
    assert "samples = 12" in (out2 / "manifest.txt").read_text()
    assert len(sorted((out2 / "snapshots").glob("chain_00_*.snap"))) == 12


# ---------------------------------------------------------------- estimate


@pytest.mark.mc
def test_estimate_from_simulate_run(sim_run, tmp_path):
    out = tmp_path / "est"
    rc = run(["estimate", "--run", str(sim_run), "--block", "2",
              "--strips", "0.25,0.5", "--eps", "0.02", "--out", str(out)])
    assert rc in (0, 3)
    _assert_stamped(out, "H.csv", "K.csv", "clt.csv")
    _, header, rows = _read_csv(out / "H.csv")
    assert header == ["s", "y", "H", "stderr"]
    assert rows
    _, header, rows = _read_csv(out / "K.csv")
    assert header == ["s", "K", "stderr", "tail_flag"]
    text = (out / "manifest.txt").read_text()
    assert "eps = 0.02" in text


@pytest.mark.mc
def test_estimate_requires_snapshots(tmp_path, capsys):
    bare = tmp_path / "bare"
    rc = run(["simulate", "--n", "8", "--samples", "16", "--out", str(bare)])
    assert rc in (0, 3)
    rc = run(["estimate", "--run", str(bare), "--out", str(tmp_path / "e")])
    assert rc == 1
    assert "snapshot" in capsys.readouterr().err.lower()


# ---------------------------------------------------------------- pipeline


@pytest.mark.mc
def test_pipeline_runs_all_stages(tmp_path):
    out = tmp_path / "pipe"
    rc = run(["pipeline", "--n", "8", "--samples", "40", "--chains", "2",
              "--h", "40", "--seed", "5", "--block", "2",
              "--strips", "0.25,0.5", "--eps", "0.02", "--terms", "1",
              "--out", str(out)])
    assert rc in (0, 3)
    for name in ("manifest.txt", "two_point.csv", "H.csv", "K.csv",
                 "clt.csv", "fit.json"):
        assert (out / name).exists(), name
    payload = json.loads((out / "fit.json").read_text())
    assert payload["manifest"] == _manifest_hash_of(out)


# ---------------------------------------------------------------- out root


def test_out_root_redirects_relative_paths(tmp_path, monkeypatch):
    m = tmp_path / "m.txt"
    m.write_text(UNIT_ATOM_TEXT)
    monkeypatch.setenv("ISINGSPEC_OUT_ROOT", str(tmp_path / "root"))
    rc = run(["spectral", "--measure", str(m), "--K-grid", "0:1:1",
              "--out", "rel/dir"])
    assert rc == 0
    assert (tmp_path / "root" / "rel" / "dir" / "K.csv").exists()
    absout = tmp_path / "abs"
    rc = run(["spectral", "--measure", str(m), "--K-grid", "0:1:1",
              "--out", str(absout)])
    assert rc == 0
    assert (absout / "K.csv").exists()
