import json
import subprocess
import sys
from pathlib import Path

import pytest

from maxreg.cli import main, render_rows
from maxreg.config import KINDS, OUTPUT_ENV, parse_config, parse_value
from maxreg.errors import CatalogError, ConfigError

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

TRACE_INEQ = """
[experiment]
kind = lemma31
expect = {expect}
seed = 3
output = out/trace_ineq

[params]
trials = 200
invariance_trials = 50
"""

SWEEP = """
[experiment]
kind = estimate-sweep
output = out/sweep

[domain]
name = paraboloid

[fields]
basket = wave, trig

[quadrature]
resolutions = 6

[params]
mode = magnetic
alphas = 0.4, 0.2

[tolerances]
trace = {trace}
"""


@pytest.fixture
def outdir(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "results"))
    return tmp_path / "results"


def _write(tmp_path, text, name="exp.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_parse_value():
    assert parse_value("3") == 3
    assert parse_value("0.5, 0.25") == (0.5, 0.25)
    assert parse_value("wave, trig") == ("wave", "trig")
    assert parse_value("yes") is True
    assert parse_value("[[1, 0], [0, 1]]") == [[1, 0], [0, 1]]
    assert parse_value("flat") == "flat"


def test_parse_config_defaults_and_case():
    cfg = parse_config("[experiment]\nkind = pullback\n[diffeo]\nname = affine\nA = [[2,0,0],[0,1,0],[0,0,1]]\n")
    assert cfg.domain.name == "flat" and cfg.coefficient.name == "identity"
    assert cfg.diffeo.params == {"A": [[2, 0, 0], [0, 1, 0], [0, 0, 1]]}
    assert cfg.resolutions == (8,) and cfg.expect == "pass" and cfg.output_prefix() is None


@pytest.mark.parametrize(
    "text, match",
    [
        ("[domain]\nname = flat\n", "missing \\[experiment\\]"),
        ("[experiment]\nkind = nope\n", "valid kinds"),
        ("[experiment]\nkind = gaffney\nexpect = maybe\n", "expect"),
        ("[experiment]\nkind = gaffney\nseed = -1\n", "seed"),
        ("[experiment]\nkind = gaffney\n[quadrature]\nresolutions = 16, 8\n", "increasing"),
        ("[experiment]\nkind = gaffney\n[quadrature]\nresolutions = 1\n", ">= 2"),
        ("[experiment]\nkind = gaffney\n[tolerances]\norder_min = high\n", "numeric"),
        ("[experiment]\nkind = gaffney\n[domain]\nsize = 2\n", "'name'"),
        ("not an ini file", "cannot parse"),
    ],
)
def test_parse_config_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text)


@pytest.mark.parametrize(
    "section, name, listed",
    [("domain", "cone", "paraboloid"), ("coefficient", "metal", "aniso"), ("diffeo", "twist", "cusp32")],
)
def test_unknown_catalog_names_list_valid_ones(section, name, listed):
    with pytest.raises(CatalogError, match=listed):
        parse_config(f"[experiment]\nkind = gaffney\n[{section}]\nname = {name}\n")
    with pytest.raises(CatalogError, match="rotation"):
        parse_config("[experiment]\nkind = gaffney\n[fields]\nbasket = wave, swirl\n")


def test_verify_pass_writes_outputs(tmp_path, outdir, capsys):
    assert main(["verify", _write(tmp_path, TRACE_INEQ.format(expect="pass"))]) == 0
    out = capsys.readouterr().out
    assert "PASS lemma31" in out
    assert (outdir / "trace_ineq.csv").exists() and (outdir / "trace_ineq.json").exists()
    data = json.loads((outdir / "trace_ineq.json").read_text())
    assert data["overall_pass"] and "wall_time" in data["timing"]
    assert data["config"]["seed"] == 3


def test_verify_expected_fail_mismatch_exits_one(tmp_path, outdir, capsys):
    assert main(["verify", _write(tmp_path, TRACE_INEQ.format(expect="fail"))]) == 1
    assert "FAIL lemma31" in capsys.readouterr().out


def test_verify_expected_fail_config_passes(outdir):
    assert main(["verify", str(CONFIGS / "w23_cusp12.ini")]) == 0
    data = json.loads((outdir / "w23_cusp12.json").read_text())
    assert not data["claims_hold"] and data["overall_pass"]


def test_verify_config_error_exits_two(tmp_path, capsys):
    assert main(["verify", _write(tmp_path, "[experiment]\nkind = nope\n")]) == 2
    assert capsys.readouterr().err.startswith("error[E_CONFIG]:")
    assert main(["verify", str(tmp_path / "missing.ini")]) == 2
    assert main(["verify", _write(tmp_path, "[experiment]\nkind = gaffney\n[domain]\nname = cone\n")]) == 2
    assert "error[E_CATALOG]" in capsys.readouterr().err


def test_verify_precondition_error_exits_two(tmp_path, capsys):
    text = "[experiment]\nkind = pullback\n[diffeo]\nname = affine\nA = [[1,0,0],[0,1,0],[0,0,0]]\n"
    assert main(["verify", _write(tmp_path, text)]) == 2
    assert capsys.readouterr().err.startswith("error[E_PRECONDITION]:")


def test_verify_self_test_failure_exits_three(tmp_path, capsys):
    text = "[experiment]\nkind = mollify\n[params]\nkernel_panels = 1\nkernel_order = 1\n"
    assert main(["verify", _write(tmp_path, text)]) == 3
    assert capsys.readouterr().err.startswith("error[E_SELFTEST]:")


def test_verify_invalid_cell_budget_exits_four(tmp_path, outdir, capsys):
    assert main(["verify", _write(tmp_path, SWEEP.format(trace=-1.0))]) == 4
    assert capsys.readouterr().err.startswith("error[E_INVALID_CELLS]:")
    assert main(["verify", _write(tmp_path, SWEEP.format(trace=1e-10))]) == 0


def test_list_catalogs(capsys):
    assert main(["list-catalogs"]) == 0
    out = capsys.readouterr().out
    assert f"kinds: {', '.join(KINDS)}" in out
    for name in ("paraboloid", "aniso", "rotation", "cusp12", "extended"):
        assert name in out


def test_report_formats(tmp_path, outdir, capsys):
    main(["verify", _write(tmp_path, TRACE_INEQ.format(expect="pass"))])
    capsys.readouterr()
    js = str(outdir / "trace_ineq.json")
    assert main(["report", js, "--format", "csv"]) == 0
    csv_out = capsys.readouterr().out
    assert csv_out.splitlines()[0] == "name,value,tolerance,relation,pass,role,source"
    assert main(["report", js]) == 0
    md = capsys.readouterr().out
    assert md.startswith("| name | value |") and "**PASS** lemma31" in md
    assert main(["report", str(tmp_path / "none.json")]) == 2


def test_render_rows_md_formats_floats():
    rows = [{"name": "x", "value": 1 / 3, "tolerance": 1e-6, "relation": "<", "pass": True,
             "role": "claim", "source": "s"}]
    assert "0.333333" in render_rows(rows, "md")
    assert "0.3333333333333333" in render_rows(rows, "csv")


def test_output_is_deterministic(tmp_path, monkeypatch):
    cfg = _write(tmp_path, TRACE_INEQ.format(expect="pass"))
    texts = []
    for run in ("a", "b"):
        monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / run))
        assert main(["verify", cfg]) == 0
        texts.append((tmp_path / run / "trace_ineq.csv").read_bytes())
    assert texts[0] == texts[1]


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "maxreg.cli", "list-catalogs"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0 and "domains:" in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "maxreg.cli", "verify", str(tmp_path / "x.ini")],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 2 and proc.stderr.startswith("error[E_CONFIG]")
