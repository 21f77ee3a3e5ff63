import csv
import json

import pytest

from lattice_coherence.cli import EXIT_INADMISSIBLE, EXIT_OK, EXIT_PRECONDITION, PRESETS, build_parser, main
from lattice_coherence.simulator import SimConfig


def rows(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    assert lines[0].startswith("# generated ")
    return list(csv.DictReader(lines[1:]))


@pytest.fixture
def consensus_file(tmp_path):
    p = tmp_path / "consensus.toml"
    p.write_text('[model]\nbuilder = "standard_consensus"\n')
    return str(p)


@pytest.fixture
def bad_file(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({
        "kind": "consensus_dynamic",
        "arrays": {
            "A": {"offsets": [], "values": []},
            "B": {"offsets": [[-1], [0], [1]], "values": [0.0, -1.0, 1.0]},
            "F": {"nearest": 1.0},
        },
    }))
    return str(p)


def test_density(tmp_path, consensus_file):
    out = tmp_path / "out"
    assert main(["density", "--model", consensus_file, "--grid", "4", "--out", str(out)]) == EXIT_OK
    r = rows(out / "density_consensus.csv")
    pi_row = [x for x in r if float(x["theta_1"]) == pytest.approx(3.141592653589793)]
    assert float(pi_row[0]["p_hat"]) == pytest.approx(0.125)
    assert any("refused" in x["flag"] for x in r)


def test_density_empty_grid(tmp_path, consensus_file):
    main(["density", "--model", consensus_file, "--grid", "0", "--out", str(tmp_path)])
    assert rows(tmp_path / "density_consensus.csv") == []


def test_density_dapi_is_finite(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text('[model]\nname = "dapi"\nbuilder = "dapi"\nparams = {f_plus = 1, g_o = 1, a_plus = 1, c_o = 1}\n')
    main(["density", "--config", str(cfg), "--grid", "64", "--out", str(tmp_path)])
    vals = [float(x["p_hat"]) for x in rows(tmp_path / "density_dapi.csv") if x["flag"] == ""]
    assert max(vals) < 1.0


def test_variance(tmp_path, consensus_file):
    code = main(["variance", "--model", consensus_file, "--L", "3", "8", "8", "--oracle", "--out", str(tmp_path)])
    assert code == EXIT_OK
    r = rows(tmp_path / "variance_consensus.csv")
    assert [x["L"] for x in r] == ["3", "8"]
    assert float(r[0]["v_exact"]) == pytest.approx(1 / 9)
    assert float(r[1]["v_oracle"]) == pytest.approx(float(r[1]["v_exact"]), rel=1e-8)


def test_admissible(tmp_path, consensus_file, bad_file):
    assert main(["admissible", "--model", consensus_file, "--out", str(tmp_path)]) == EXIT_OK
    assert main(["admissible", "--model", bad_file, "--L-max", "256", "--out", str(tmp_path)]) == EXIT_INADMISSIBLE
    doc = json.loads((tmp_path / "verdict_bad.json").read_text())
    assert doc["necessary_conditions"]["failed_condition"] == "Theorem 3"
    assert doc["critical_L"]["L_crit"] is not None
    assert doc["grid"]["witness"] is not None


def test_precondition_exit_codes(tmp_path, consensus_file):
    assert main(["variance", "--model", consensus_file, "--L", "2", "--out", str(tmp_path)]) == EXIT_PRECONDITION
    assert main(["variance", "--model", str(tmp_path / "missing.toml"), "--L", "8"]) == EXIT_PRECONDITION
    assert main(["variance", "--L", "8"]) == EXIT_PRECONDITION
    assert main(["variance", "--preset", "nope", "--L", "8"]) == EXIT_PRECONDITION


def test_scaling(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text('[models.platoon]\nbuilder = "lookahead"\nparams = {f_plus = 1, f_minus = 1, g_plus = 1, g_minus = 1}\n')
    main(["scaling", "--config", str(cfg), "--L", "32", "64", "128", "256", "--out", str(tmp_path)])
    r = rows(tmp_path / "scaling.csv")
    assert r[0]["model_id"] == "platoon"
    assert float(r[0]["slope"]) == pytest.approx(3.0, abs=0.1)


def test_effort(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text(
        '[model]\nname = "pi"\nkind = "consensus_dynamic"\n'
        '[model.arrays.A]\nnearest = 0.5\nabsolute = 0.5\n'
        '[model.arrays.B]\nnearest = 1.0\n'
        '[model.arrays.F]\nnearest = 1.0\n'
    )
    assert main(["effort", "--config", str(cfg), "--L", "16", "--out", str(tmp_path)]) == EXIT_OK
    r = rows(tmp_path / "effort_pi.csv")
    assert r[0]["satisfies_bounds"] == "True"


def test_simulate(tmp_path, consensus_file):
    code = main([
        "simulate", "--model", consensus_file, "--L", "6", "--topology", "string", "--dt", "0.1",
        "--t-end", "1200", "--warmup", "100", "--trajectories", "2", "--record-every", "100",
        "--seed", "4", "--threads", "2", "--out", str(tmp_path),
    ])
    assert code == EXIT_OK
    s = rows(tmp_path / "summary_consensus.csv")
    assert s[0]["N"] == "6" and s[0]["topology"] == "string"
    assert (tmp_path / "positions_consensus_string_L6.csv").exists()
    assert (tmp_path / "trace_consensus_string_L6.csv").exists()


def test_simulate_defaults_match_protocol():
    args = build_parser().parse_args(["simulate"])
    assert args.dt is None and args.t_end is None  # fall through to SimConfig
    assert SimConfig(20).dt == 0.1 and SimConfig(20).t_end == 2e4


@pytest.mark.parametrize("preset", PRESETS)
def test_presets_resolve(preset, tmp_path):
    code = main(["variance", "--preset", preset, "--L", "8", "--out", str(tmp_path)])
    assert code == EXIT_OK
    assert list(tmp_path.glob("variance_*.csv"))
