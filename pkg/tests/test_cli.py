"""End-to-end tests of the command-line interface and configuration layer."""

import csv
import json
import os

import pytest

from cglblow.cli import main
from cglblow.io import ConfigError, apply_overrides, load_config


def _read_json(path):
    with open(path) as fh:
        return json.load(fh)


def _csv_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# --- configuration ------------------------------------------------------------


def test_defaults_require_output_dir():
    with pytest.raises(ConfigError):
        load_config(None, [])


def test_overrides_are_toml_typed(tmp_path):
    cfg = load_config(
        None,
        [
            f'suite.output_dir="{tmp_path}"',
            "run.nodes=512",
            "params.delta=0.5",
            "simulate.dhat=[0.1, 0.0, 0.0, 0.0]",
            "suite.figures=true",
        ],
    )
    assert cfg.run.nodes == 512
    assert cfg.params.delta == 0.5
    assert cfg.simulate.dhat == (0.1, 0.0, 0.0, 0.0)
    assert cfg.suite.figures is True
    assert cfg.suite.output_dir == str(tmp_path)


def test_override_rejects_malformed_entries(tmp_path):
    # parse-level failures
    for bad in ("nodots=3", "run.nodes", "nosection.nodes=3"):
        with pytest.raises(ConfigError):
            apply_overrides({}, [bad])
    # field-level failures surface when the sections are built
    out = f'suite.output_dir="{tmp_path}"'
    for bad in ("run.unknown=1", "run.nodes=]["):
        with pytest.raises(ConfigError):
            load_config(None, [out, bad])


def test_config_file_roundtrip(tmp_path):
    cfg_file = tmp_path / "lab.toml"
    cfg_file.write_text(
        "\n".join(
            [
                "[params]",
                "delta = 0.25",
                "[run]",
                "nodes = 512",
                "s_max = 9.0",
                "[suite]",
                f'output_dir = "{tmp_path / "out"}"',
                "seed = 11",
            ]
        )
    )
    cfg = load_config(str(cfg_file), ["run.nodes=1024"])
    assert cfg.params.delta == 0.25
    assert cfg.run.nodes == 1024  # override wins over the file
    assert cfg.run.s_max == 9.0
    assert cfg.suite.seed == 11


def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.toml"), [])
    bad = tmp_path / "bad.toml"
    bad.write_text("run = ][")
    with pytest.raises(ConfigError):
        load_config(str(bad), [])
    unknown = tmp_path / "unknown.toml"
    unknown.write_text("[nosuch]\nx = 1\n")
    with pytest.raises(ConfigError):
        load_config(str(unknown), [])


def test_invalid_settings_become_config_errors(tmp_path):
    out = f'suite.output_dir="{tmp_path}"'
    for override in ("run.nodes=17", "run.s_max=7.0", "run.tol_constraint=0.0", "sweep.points=1"):
        with pytest.raises(ConfigError):
            load_config(None, [out, override])


# --- exit codes ----------------------------------------------------------------


def test_missing_output_dir_exits_2(capsys):
    assert main(["verify-spectral"]) == 2
    assert "configuration error" in capsys.readouterr().err


def test_bad_override_exits_2(tmp_path, capsys):
    assert main(["verify-spectral", "--outdir", str(tmp_path), "--set", "run.nodes=17"]) == 2
    assert main(["verify-spectral", "--outdir", str(tmp_path), "--set", "run.nodes=abc"]) == 2
    capsys.readouterr()


def test_verify_spectral_passes_and_writes_artifacts(tmp_path, capsys):
    rc = main(["verify-spectral", "--outdir", str(tmp_path)])
    out = capsys.readouterr().out
    assert rc == 0
    assert "verify-spectral: ok" in out
    for name in (
        "orthogonality.csv",
        "jordan_table.csv",
        "jordan_ratios.csv",
        "jordan_refinement.csv",
        "spectral_summary.json",
    ):
        assert (tmp_path / name).exists()
    summary = _read_json(tmp_path / "spectral_summary.json")
    assert summary["schema"] == 1
    assert summary["ok"] is True
    assert set(summary["criteria"]) == {"hermite_orthogonality", "jordan_refinement"}
    rows = _csv_rows(tmp_path / "orthogonality.csv")
    assert rows and max(float(r["rel"]) for r in rows) < 1e-8


def test_simulate_out_of_set_seed_exits_1(tmp_path, capsys):
    rc = main(
        [
            "simulate",
            "--outdir",
            str(tmp_path),
            "--set",
            "simulate.dhat=[1.5, 0.0, 0.0, 0.0]",
            "--set",
            "run.nodes=512",
            "--set",
            "run.s_max=8.2",
        ]
    )
    out = capsys.readouterr().out
    assert rc == 1
    assert "simulate: FAILED" in out
    summary = _read_json(tmp_path / "simulate_summary.json")
    assert summary["ok"] is False
    assert summary["exited"] is True
    assert summary["criteria"]["constraints_maintained"] is False
    assert (tmp_path / "trace.csv").exists()


def test_trace_columns_follow_contract(tmp_path):
    rc = main(
        [
            "simulate",
            "--outdir",
            str(tmp_path),
            "--set",
            "run.nodes=512",
            "--set",
            "run.s_max=8.3",
            "--set",
            "simulate.dhat=[0.0, 0.0, 0.0, 0.0]",
        ]
    )
    assert rc in (0, 1)  # coarse short run; column contract is the point here
    with open(tmp_path / "trace.csv", newline="") as fh:
        header = next(csv.reader(fh))
    assert header[:6] == ["s", "b", "theta", "bprime", "thetaprime", "ds"]
    for n in range(7):
        assert f"hat{n}" in header and f"check{n}" in header
    for name in ("minus_hat_norm", "minus_check_norm", "margin_max", "inside"):
        assert name in header


def test_reruns_are_byte_identical(tmp_path):
    d1, d2 = tmp_path / "a", tmp_path / "b"
    assert main(["verify-rhs", "--outdir", str(d1)]) == 0
    assert main(["verify-rhs", "--outdir", str(d2)]) == 0
    names = sorted(p.name for p in d1.iterdir() if p.suffix == ".csv")
    assert names
    for name in names:
        assert (d1 / name).read_bytes() == (d2 / name).read_bytes()


def test_figures_flag_renders_png(tmp_path):
    rc = main(["verify-modulation", "--outdir", str(tmp_path), "--figures"])
    assert rc == 0
    assert (tmp_path / "newton_convergence.png").exists()
    assert (tmp_path / "newton_convergence.csv").exists()


def test_report_mode_aggregates_suites(tmp_path, capsys):
    rc = main(["report", "--outdir", str(tmp_path), "--set", "suite.samples=2"])
    capsys.readouterr()
    assert rc == 0
    summary = _read_json(tmp_path / "report_summary.json")
    prefixes = {key.split(":")[0] for key in summary["criteria"]}
    assert prefixes == {"spectral", "semigroup", "rhs", "modulation"}
    assert summary["ok"] is True
    # report always renders the figure set
    for name in ("jordan_refinement.png", "gap_fit.png", "nonlinearity_order.png", "newton_convergence.png"):
        assert (tmp_path / name).exists()
