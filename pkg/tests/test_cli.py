import csv
import json
import math
import subprocess
import sys
from pathlib import Path

import pytest

from excursions import __version__
from excursions.cli import load_config, main

SHIPPED = Path(__file__).resolve().parents[1] / "configs" / "bm.json"

BASE = {
    "diffusion": {"a": "1", "b": "0"},
    "levels": [0.0, 1.0],
    "x_grid": {"min": 1e-4, "max": 1e3, "points": 400},
    "lambda_grid": {"min": 0.1, "max": 10.0, "points": 3},
    "simulation": {"h": 1e-3, "T": 2.0, "seed": 5, "replications": 4},
}


@pytest.fixture
def config(tmp_path):
    def write(overrides=None, name="cfg.json"):
        data = json.loads(json.dumps(BASE))
        for k, v in (overrides or {}).items():
            data[k] = v
        p = tmp_path / name
        p.write_text(json.dumps(data))
        return str(p)
    return write


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def table(text):
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def test_psi_table(capsys, config):
    code, out, _ = run(capsys, "psi", config(), "--level", 1, "--case", "one_plus")
    assert code == 0
    assert out.startswith(f"# excursions {__version__} psi config_sha256=")
    rows = table(out)
    assert [r["lambda"] for r in rows] == ["0.1", "1.0", "10.0"]
    assert float(rows[1]["psi"]) == pytest.approx(0.5 - math.sqrt(2) / 2 / math.sinh(math.sqrt(2)), rel=1e-9)


def test_all_exponents_listed(capsys, config):
    code, out, _ = run(capsys, "psi", config())
    cases = {(r["level_index"], r["case"]) for r in table(out)}
    assert ("1", "one_plus") in cases and ("2", "one_minus") in cases and ("1", "one_minus") not in cases


def test_tails_columns(capsys, config):
    code, out, _ = run(capsys, "tails", config(), "--level", 1, "--case", "sum_plus")
    rows = table(out)
    assert code == 0 and len(rows) == 400
    assert list(rows[0]) == ["level_index", "case", "x", "tail", "hazard"]
    assert float(rows[0]["tail"]) > float(rows[-1]["tail"])


def test_hazard_json(capsys, config):
    code, out, _ = run(capsys, "hazard", config(), "--side", "up", "--age", "0.2")
    doc = json.loads(out)
    assert code == 0 and doc["version"] == __version__
    ps = {t["level"]: t["p"] for t in doc["targets"]}
    assert set(ps) == {1, 2} and sum(ps.values()) + doc["p_never"] == pytest.approx(1.0, abs=1e-9)
    assert doc["total_hazard"] == pytest.approx(sum(t["hazard"] for t in doc["targets"]))


def test_hazard_out_of_support_exits_2(capsys, config):
    code, _, err = run(capsys, "hazard", config(), "--side", "up", "--age", "5000")
    assert code == 2 and "compensator.end_law" in err


def test_decreasing_levels_exit_1(capsys, config):
    code, _, err = run(capsys, "psi", config({"levels": [1.0, 0.0]}))
    assert code == 1 and "LevelSet" in err


@pytest.mark.parametrize(
    "overrides, where",
    [
        ({"colour": "red"}, "cli.RunConfig"),
        ({"diffusion": {"a": "1", "b": "0", "sigma": 1}}, "cli.RunConfig.diffusion"),
        ({"simulation": {"h": 1e-3, "dt": 1}}, "cli.RunConfig.simulation"),
        ({"inversion_order": 9}, "cli.RunConfig"),
        ({"diffusion": {"a": "-1", "b": "0"}}, "diffusion_model"),
        ({"diffusion": {"a": "1 +", "b": "0"}}, "coeff_expr.parse"),
        ({"x_grid": {"min": 1.0, "max": 0.5, "points": 10}}, "cli.RunConfig.x_grid"),
    ],
)
def test_invalid_config_exit_1(capsys, config, overrides, where):
    code, _, err = run(capsys, "psi", config(overrides))
    assert code == 1 and where in err


def test_missing_and_malformed_files(capsys, tmp_path):
    assert run(capsys, "psi", tmp_path / "nope.json")[0] == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert run(capsys, "psi", bad)[0] == 1


def test_compensate(capsys, config, tmp_path):
    hist = tmp_path / "history.csv"
    hist.write_text("time,level,side\n0.0,1,up\n0.7,2,up\n1.9,2,down\n")
    code, out, _ = run(capsys, "compensate", config(), "--history", hist, "--target", 2, "--floor", 0.1,
                       "--times", "0,1,2.5")
    rows = table(out)
    assert code == 0 and "# target=2 floor=0.1" in out
    assert [r["count"] for r in rows] == ["0", "1", "2"]
    comp = [float(r["compensator"]) for r in rows]
    assert comp[0] == 0.0 and comp[0] < comp[1] < comp[2]


def test_compensate_rejects_bad_history(capsys, config, tmp_path):
    hist = tmp_path / "history.csv"
    hist.write_text("time,level,side\n0.0,1,up\n0.7,3,up\n")
    code, _, err = run(capsys, "compensate", config(), "--history", hist, "--target", 2)
    assert code == 1 and "ObservationHistory" in err


def test_simulate_output_deterministic(capsys, config, tmp_path):
    cfg = config()
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run(capsys, "simulate", cfg, "-o", a)[0] == 0
    assert run(capsys, "simulate", cfg, "-o", b)[0] == 0
    assert a.read_bytes() == b.read_bytes()
    rows = table(a.read_text())
    assert list(rows[0]) == ["start_time", "end_time", "start_level", "side", "duration", "end_level", "censored",
                             "replication"]
    assert {r["replication"] for r in rows} == {"0", "1", "2", "3"}
    assert all(r["end_level"] == "" for r in rows if r["censored"] == "1")


def test_header_hash_tracks_config(config):
    a = load_config(config())
    b = load_config(config({"levels": [0.0, 2.0]}, name="other.json"))
    assert len(a.digest) == 16 and a.digest != b.digest
    assert load_config(config(name="again.json")).digest == a.digest


def test_crosscheck(capsys, config):
    code, out, _ = run(capsys, "crosscheck", config())
    assert code == 0 and "max_relative_discrepancy=" in out
    code, _, err = run(capsys, "crosscheck", config(), "--tolerance", "1e-9")
    assert code == 3 and "laplace.crosscheck_convolution" in err


def test_verify_oracle_only(capsys):
    code, out, _ = run(capsys, "verify", SHIPPED, "--oracle", "bm", "--oracle-only")
    assert code == 0
    assert out.splitlines()[-1] == "5/5 passed"


def test_verify_needs_standard_bm(capsys, config):
    code, _, err = run(capsys, "verify", config({"diffusion": {"a": "1", "b": "0.5"}}), "--oracle", "bm",
                       "--oracle-only")
    assert code == 1 and "cli.verify" in err


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "excursions.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip() == f"excursions {__version__}"
