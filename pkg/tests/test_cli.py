import json
import os
import subprocess
import sys

import numpy as np
import pytest
import yaml

from firelp.cli import IRF_HEADER, main

MODEL = {"outcome": "emp", "shock": "burn", "horizons": 6, "outcome_lags": 4, "shock_lags": 4}
SYNTH = {"n_counties": 80, "n_periods": 120, "burn_sigma": 1.0}


def write_config(path, **sections):
    cfg = {"model": dict(MODEL), "output": "out", "seed": 3}
    cfg.update(sections)
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    cfg = write_config(d / "synth.yaml", synth=SYNTH, output="data")
    assert main(["synth", "-c", cfg]) == 0
    return d / "data"


def run_config(tmp_path, data, **extra):
    sections = {"data": {"panel": str(data / "panel.csv"),
                         "attributes": str(data / "attributes.csv"),
                         "adjacency": str(data / "adjacency.txt")}}
    sections.update(extra)
    return write_config(tmp_path / "run.yaml", **sections)


def test_synth_writes_expected_files(synth_dir):
    names = sorted(os.listdir(synth_dir))
    assert names == ["adjacency.txt", "attributes.csv", "panel.csv", "truth_irf.csv"]
    assert (synth_dir / "truth_irf.csv").read_text().splitlines()[0] == "horizon,truth"
    assert (synth_dir / "adjacency.txt").read_text().startswith("#")


def test_synth_then_irf_recovers_truth(tmp_path, synth_dir, capsys):
    cfg = run_config(tmp_path, synth_dir, truth=str(synth_dir / "truth_irf.csv"))
    assert main(["irf", "-c", cfg]) == 0
    assert "recovery: PASS" in capsys.readouterr().out
    lines = (tmp_path / "out" / "irf_burn.csv").read_text().splitlines()
    assert lines[0] == IRF_HEADER
    assert len(lines) == 1 + 7


def test_full_horizon_table_has_37_rows(tmp_path, synth_dir):
    cfg = run_config(tmp_path, synth_dir)
    assert main(["irf", "-c", cfg, "--set", "model.horizons=36",
                 "--set", "model.outcome_lags=2", "--set", "model.shock_lags=2"]) == 0
    lines = (tmp_path / "out" / "irf_burn.csv").read_text().splitlines()
    assert len(lines) == 38
    assert [int(l.split(",")[0]) for l in lines[1:]] == list(range(37))


def test_reruns_are_byte_identical(tmp_path, synth_dir):
    cfg = run_config(tmp_path, synth_dir, inference={"jackknife": {"K": 10}})
    outputs = []
    for run in range(2):
        out = tmp_path / f"run{run}"
        assert main(["cumulative", "-c", cfg, "-o", str(out)]) == 0
        outputs.append({n: (out / n).read_bytes() for n in sorted(os.listdir(out))})
    assert outputs[0] == outputs[1]
    text = outputs[0]["cumulative.txt"].decode()
    assert text.startswith("phi: ") and "K: 10" in text and "seed: 3" in text


def test_synth_is_byte_identical(tmp_path):
    for name in ("a", "b"):
        cfg = write_config(tmp_path / f"{name}.yaml", synth={"n_counties": 5, "n_periods": 20},
                           output=name)
        assert main(["synth", "-c", cfg]) == 0
    for f in ("panel.csv", "attributes.csv", "adjacency.txt", "truth_irf.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_missing_panel_exit_2_names_path(tmp_path, capsys):
    missing = tmp_path / "nowhere" / "panel.csv"
    cfg = write_config(tmp_path / "c.yaml", data={"panel": str(missing)})
    assert main(["irf", "-c", cfg]) == 2
    err = json.loads(capsys.readouterr().err.strip())
    assert err["path"] == str(missing)
    assert str(missing) in err["message"]


def test_missing_config_and_bad_override(tmp_path, capsys):
    assert main(["irf", "-c", str(tmp_path / "none.yaml")]) == 2
    assert "none.yaml" in capsys.readouterr().err
    cfg = write_config(tmp_path / "c.yaml")
    assert main(["irf", "-c", cfg, "--set", "novalue"]) == 2


def test_estimation_failure_exit_1(tmp_path, synth_dir, capsys):
    cfg = run_config(tmp_path, synth_dir)
    # lags eat nearly all periods: too few rows for the regressors at h=2
    args = ["--set", "model.outcome_lags=50", "--set", "model.shock_lags=50",
            "--set", "model.horizons=70"]
    assert main(["irf", "-c", cfg, *args]) == 1
    err = json.loads(capsys.readouterr().err.strip())
    assert err["error"] == "EstimationError"
    assert err["message"].count("horizon") == 1


def test_lags_beyond_panel_exit_2(tmp_path, synth_dir, capsys):
    cfg = run_config(tmp_path, synth_dir)
    assert main(["irf", "-c", cfg, "--set", "model.outcome_lags=119"]) == 2
    assert "exceed available periods" in capsys.readouterr().err


def test_state_dump_columns_sum_to_shock(tmp_path, synth_dir):
    cfg = run_config(tmp_path, synth_dir)
    assert main(["irf", "-c", cfg, "--state", "--dump-designs", "0,3"]) == 0
    out = tmp_path / "out"
    assert {"irf_burn_high.csv", "irf_burn_low.csv"} <= set(os.listdir(out))
    for h in (0, 3):
        arr = np.genfromtxt(out / "designs" / f"h{h}.csv", delimiter=",", names=True)
        np.testing.assert_array_equal(arr["burn_high"] + arr["burn_low"], arr["burn"])


def test_split_recovers_group_kernels(tmp_path):
    synth = dict(SYNTH, n_counties=200, kernel=[-0.0005, -0.0004],
                 group_kernel=[-0.0015, 0.0003])
    cfg = write_config(tmp_path / "s.yaml", synth=synth, output="data")
    assert main(["synth", "-c", cfg]) == 0
    data = tmp_path / "data"
    header = (data / "truth_irf.csv").read_text().splitlines()[0]
    assert header == "horizon,truth,truth_group"
    cfg = run_config(tmp_path, data, truth=str(data / "truth_irf.csv"))
    assert main(["irf", "-c", cfg, "--split", "hhi"]) == 0
    report = (tmp_path / "out" / "recovery.txt").read_text()
    assert "[above]" in report and "[below]" in report
    assert "FAIL" not in report
    above = np.genfromtxt(tmp_path / "out" / "above" / "irf_burn.csv", delimiter=",", names=True)
    below = np.genfromtxt(tmp_path / "out" / "below" / "irf_burn.csv", delimiter=",", names=True)
    # the two groups carry visibly different impact responses
    assert above["scaled_beta"][0] < below["scaled_beta"][0]


def test_hei_command(tmp_path, synth_dir):
    cfg = run_config(tmp_path, synth_dir, hei={"L": 6})
    assert main(["hei", "-c", cfg]) == 0
    lines = (tmp_path / "out" / "hei.csv").read_text().splitlines()
    assert lines[0] == "region,period,impact_pp"
    regions = [l.split(",")[0] for l in lines[1:]]
    assert regions == sorted(regions)
    assert len(lines) - 1 == len(set(regions)) * 120


def test_console_script_help():
    r = subprocess.run([sys.executable, "-m", "firelp.cli", "--help"], capture_output=True,
                       text=True)
    assert r.returncode == 0
    for cmd in ("irf", "cumulative", "jackknife", "hei", "synth"):
        assert cmd in r.stdout
