import csv
import json
import subprocess
import sys

import pytest

from levyrisk import presets
from levyrisk.cli import main


@pytest.fixture
def config(tmp_path):
    def write(body, name="cfg.json"):
        p = tmp_path / name
        p.write_text(json.dumps(body) if not isinstance(body, str) else body)
        return str(p)
    return write


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_presets_listing_has_bundled_penalties(capsys):
    assert main(["presets"]) == 0
    out = capsys.readouterr().out
    for name in ("entropic", "worst_case", "zero"):
        assert f"  {name} " in out


def test_user_preset_file_appears_and_malformed_is_invalid(tmp_path):
    good = tmp_path / "good.json"
    good.write_text(json.dumps({"models": {"my_model": {"atoms": [[0.5, 2.0]], "about": "mine"}}}))
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"models": {"broken": {"atoms": [[0.0, 1.0]]}}}))
    junk = tmp_path / "junk.json"
    junk.write_text("{not json")
    text = presets.list_presets([good, bad, junk])
    assert "my_model" in text and "mine" in text
    invalid = text.split("[invalid]")[1]
    assert "bad.json" in invalid and "junk.json" in invalid
    assert "broken" not in text.split("[invalid]")[0]


def test_worst_case_preset(config, tmp_path, capsys):
    assert main(["run", "--config", config({"preset": "worst_case_3pt", "seed": 7}),
                 "--out", str(tmp_path / "o")]) == 0
    rows = read_rows(tmp_path / "o" / "finite-duality.csv")
    assert rows and all(float(r["value"]) == 0.0 for r in rows if r["operation"] == "minimal_penalty")
    assert "passed" in capsys.readouterr().out


def test_martingale_zero_all_ones(config, tmp_path):
    assert main(["run", "--config", config({"preset": "martingale_zero", "seed": 3}),
                 "--out", str(tmp_path), "--quiet"]) == 0
    rows = read_rows(tmp_path / "martingale.csv")
    assert all(float(r["estimate"]) == 1.0 for r in rows)


def test_constant_sequence_zero_columns(config, tmp_path):
    assert main(["run", "--config", config({"preset": "qv_constant", "seed": 3}),
                 "--out", str(tmp_path), "--quiet"]) == 0
    rows = read_rows(tmp_path / "qv-convergence.csv")
    assert all(float(r["L1_mean"]) == 0.0 and float(r["qv_exceed_prob"]) == 0.0 for r in rows)


def test_tolerance_failure_exits_one(config, tmp_path, capsys):
    cfg = {"preset": "risk_entropic", "seed": 1, "n_paths": 2000,
           "expected": {"value": 0.5, "tolerance": 1e-6}}
    assert main(["run", "--config", config(cfg), "--out", str(tmp_path), "--quiet"]) == 1
    assert (tmp_path / "risk.csv").exists()
    err = capsys.readouterr().err
    assert json.loads(err.splitlines()[0])["error"] == "tolerance"


@pytest.mark.parametrize("body", [
    "{broken",
    {"experiment": "martingale", "model": "two_atom", "theta": "zero"},          # no seed
    {"experiment": "nonsense", "seed": 1},
    {"experiment": "martingale", "model": "no_such_model", "theta": "zero", "seed": 1},
    {"preset": "martingale_zero", "seed": 1, "theta": "const:0,-3"},
])
def test_config_errors_exit_two_without_csv(body, config, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--config", config(body), "--out", str(out)]) == 2
    assert not out.exists() or not any(out.iterdir())
    record = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert record["error"] == "config"


def test_seed_and_paths_flags_override(config, tmp_path):
    cfg = config({"preset": "penalty_entropic", "seed": 1})
    main(["run", "--config", cfg, "--seed", "5", "--paths", "500", "--out", str(tmp_path / "a"), "--quiet"])
    main(["run", "--config", cfg, "--seed", "6", "--paths", "500", "--out", str(tmp_path / "b"), "--quiet"])
    a = (tmp_path / "a" / "penalty.csv").read_bytes()
    b = (tmp_path / "b" / "penalty.csv").read_bytes()
    assert a != b


def test_byte_identical_rerun_via_module(config, tmp_path):
    cfg = config({"preset": "compensator_bounded", "seed": 11, "n_paths": 3000})
    outs = []
    for d in ("x", "y"):
        proc = subprocess.run([sys.executable, "-m", "levyrisk", "run", "--config", cfg,
                               "--out", str(tmp_path / d), "--quiet"], capture_output=True)
        assert proc.returncode == 0, proc.stderr
        outs.append((tmp_path / d / "compensator.csv").read_bytes())
    assert outs[0] == outs[1]
