import json
import math

import numpy as np
import pytest

from branchmc import models
from branchmc.cli import main, write_csv


def read(path):
    return path.read_bytes()


def test_fig1_reruns_are_byte_identical(tmp_path):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    for out in (out_a, out_b):
        assert main(["fig1", "--algorithm", "tdmc", "--seed", "7",
                     "--replicas", "30", "--out", str(out)]) == 0
    for name in ("fig1_summary.json", "fig1_points.csv", "fig1_tdmc.dat"):
        assert read(out_a / name) == read(out_b / name), name


def test_lj_paper_eps_resolves_table_row_configuration(tmp_path):
    code = main([
        "lj", "--gamma", "0.4", "--lambda", "1.9", "--paper-eps",
        "--horizon", "0.002", "--replicas", "2", "--m", "1",
        "--out", str(tmp_path),
    ])
    assert code == 0
    summary = json.loads((tmp_path / "lj_summary.json").read_text())
    cfg = summary["config"]
    assert cfg["eps"] == 1e-4
    assert cfg["gamma"] == 0.4
    assert cfg["lambda"] == 1.9
    assert cfg["horizon"] == 0.002
    # the resolved configuration is echoed into the CSV header too
    header = (tmp_path / "lj.csv").read_text().splitlines()
    assert "# eps=0.0001" in header
    assert "# gamma=0.4" in header


def test_compare_report_has_variance_and_workload_sections(tmp_path):
    code = main(["compare", "--eps", "0.1", "--replicas", "300",
                 "--seed", "3", "--out", str(tmp_path)])
    assert code == 0
    summary = json.loads((tmp_path / "compare_summary.json").read_text())
    (case,) = summary["cases"]
    assert "variance" in case and "workload" in case
    assert set(case["variance"]) >= {"dmc", "tdmc", "z", "tdmc_dominates_99"}
    assert set(case["workload"]) >= {"dmc", "tdmc", "diff", "tolerance", "consistent"}


def test_unknown_flag_exits_with_configuration_code(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["fig1", "--bogus"])
    assert exc.value.code == 1
    assert "configuration error" in capsys.readouterr().err


def test_unknown_subcommand_exits_1():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1


def test_misaligned_horizon_is_configuration_error(tmp_path, capsys):
    code = main(["compare", "--eps", "0.3", "--horizon", "1.0",
                 "--replicas", "10", "--out", str(tmp_path)])
    assert code == 1
    assert "configuration error" in capsys.readouterr().err


def test_population_explosion_exits_2_with_location(tmp_path, capsys):
    code = main([
        "lj", "--gamma", "0.4", "--lambda", "30.0", "--eps", "0.001",
        "--horizon", "0.05", "--replicas", "20", "--pop-cap", "3",
        "--out", str(tmp_path),
    ])
    assert code == 2
    err = capsys.readouterr().err
    assert "runtime error" in err
    assert "step=" in err and "replica=" in err


def test_filter_outputs_roundtrip(tmp_path):
    code = main(["filter", "--m", "3", "--horizon", "0.05",
                 "--seed", "2", "--out", str(tmp_path)])
    assert code == 0
    summary = json.loads((tmp_path / "filter_summary.json").read_text())
    assert summary["config"]["eps"] == 1e-3
    assert summary["config"]["sign_convention"] == "classical"
    assert len(summary["rmse"]) == 3
    hidden = models.read_hidden_csv(tmp_path / "hidden_path.csv")
    assert hidden.shape == (51, 3)
    obs = models.ObservationPath.read_csv(tmp_path / "observations.csv", eps=1e-3)
    assert obs.increments.shape == (50, 3)


def test_filter_as_printed_flag(tmp_path):
    code = main(["filter", "--m", "2", "--horizon", "0.01", "--as-printed",
                 "--out", str(tmp_path)])
    assert code == 0
    summary = json.loads((tmp_path / "filter_summary.json").read_text())
    assert summary["config"]["sign_convention"] == "as_printed"


def test_oracle_walk_reports_analytic(tmp_path):
    code = main(["oracle", "--model", "walk", "--eps", "0.1", "--horizon", "1.0",
                 "--replicas", "4000", "--seed", "5", "--out", str(tmp_path)])
    assert code == 0
    summary = json.loads((tmp_path / "oracle_summary.json").read_text())
    assert summary["config"]["analytic"] == pytest.approx(math.exp(0.5), rel=1e-9)
    est = summary["estimate"]
    assert abs(est["value"] - math.exp(0.5)) <= 5 * est["stderr"]
    assert est["workload"] == 4000 * 10


def test_oracle_json_roundtrips_to_equal_values(tmp_path):
    main(["oracle", "--model", "walk", "--replicas", "500", "--eps", "0.1",
          "--horizon", "0.5", "--out", str(tmp_path), "--format", "json"])
    text = (tmp_path / "oracle_summary.json").read_text()
    assert json.loads(text) == json.loads(json.dumps(json.loads(text)))
    assert not (tmp_path / "oracle.csv").exists()  # json format: summary only


def test_empty_report_gives_header_only_csv(tmp_path):
    path = write_csv(tmp_path / "empty.csv", {"experiment": "x"}, ["a", "b"], [])
    lines = path.read_text().splitlines()
    assert lines == ["# experiment=x", "a,b"]


def test_csv_floats_round_trip_full_precision(tmp_path):
    value = 1.6487212707001282
    path = write_csv(tmp_path / "v.csv", {}, ["v"], [[value]])
    text = path.read_text().splitlines()[-1]
    assert float(text) == value
