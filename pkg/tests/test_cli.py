import csv
import json
import math

import numpy as np
import pytest

from levysle import io as lio
from levysle.cli import OUTPUT_ENV, PRESETS, build_parser, main, resolve_config


def _files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.name != "timing.json"}


def _run(argv, tmp_path, name="out"):
    out = tmp_path / name
    code = main(argv + ["--output-dir", str(out)])
    return code, out


def test_trace_command_writes_csv_and_svg(tmp_path):
    code, out = _run(["trace", "--kappa", "2", "--theta", "0", "--horizon", "1", "--tol", "1e-3",
                      "--seed", "7", "--n-points", "33"], tmp_path)
    assert code == 0
    names = {p.name for p in out.iterdir()}
    assert {"trace.csv", "trace.svg", "chain.json", "manifest.json", "summary.txt", "timing.json"} <= names
    rows = list(csv.reader((out / "trace.csv").open(newline="")))
    assert rows[0] == ["t", "re", "im", "depth", "deriv_mag", "converged"]
    assert len(rows) >= 34
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["seed"] == 7
    assert set(manifest["files"]) == {"trace.csv", "trace.svg", "chain.json"}


def test_verify_moments_reports_two_over_pi(tmp_path):
    code, out = _run(["verify-moments", "--alpha", "1", "--c", "1", "--t", "1", "--k", "1",
                      "--samples", "100000"], tmp_path)
    rep = json.loads((out / "report.json").read_text())
    assert code == 0 and rep["passed"]
    assert rep["target"] == pytest.approx(2 / math.pi, rel=1e-15)
    assert "wall_time" not in rep


def test_comb_command(tmp_path):
    code, out = _run(["comb", "--budget", "4"], tmp_path)
    assert code == 0
    assert (out / "comb.svg").read_text().startswith("<svg")
    assert json.loads((out / "report.json").read_text())["passed"]


@pytest.mark.parametrize("argv", [
    ["simulate", "--kappa", "2", "--horizon", "0.2", "--seed", "3"],
    ["hull", "--kappa", "2", "--horizon", "0.1", "--resolution", "0.05", "--seed", "3"],
    ["verify-jumps", "--n", "1", "--samples", "2000", "--seed", "5"],
    ["verify-superharmonic", "--preset", "subcritical", "--n-u", "5", "--n-y", "3", "--deltas", "0.25,0.125"],
])
def test_rerun_reproduces_files(tmp_path, argv):
    code, out = _run(argv, tmp_path, "first")
    assert code == 0
    code2 = main(["rerun", str(out / "manifest.json"), "--output-dir", str(tmp_path / "second")])
    assert code2 == 0
    a, b = _files(out), _files(tmp_path / "second")
    assert a == b
    manifest = json.loads(a["manifest.json"])
    for name, digest in manifest["files"].items():
        assert lio.sha256_file(out / name) == digest


@pytest.mark.parametrize("cmd", ["trace", "hull", "verify-derivative-tail", "verify-supermartingale"])
@pytest.mark.parametrize("kappa", ["4", "8"])
def test_kappa_four_and_eight_rejected_for_curves(tmp_path, capsys, cmd, kappa):
    code, _ = _run([cmd, "--kappa", kappa], tmp_path)
    assert code == 2
    assert f"kappa={kappa}" in capsys.readouterr().err


def test_kappa_four_accepted_for_driver_and_moments(tmp_path):
    code, _ = _run(["simulate", "--kappa", "4", "--horizon", "0.1"], tmp_path, "a")
    assert code == 0
    code, _ = _run(["verify-moments", "--samples", "2000"], tmp_path, "b")
    assert code == 0


def test_regime_mismatch_names_the_constraint(tmp_path, capsys):
    code, _ = _run(["verify-superharmonic", "--kappa", "9", "--b", "0.75"], tmp_path)
    assert code == 2
    assert "kappa > 8 needs b in (0, 1/2)" in capsys.readouterr().err


def test_output_dir_from_environment(tmp_path, monkeypatch):
    target = tmp_path / "env-out"
    monkeypatch.setenv(OUTPUT_ENV, str(target))
    assert main(["verify-jumps", "--samples", "500"]) == 0
    assert (target / "report.json").exists()


def test_presets_resolve():
    parser = build_parser()
    for name, values in PRESETS.items():
        cfg = resolve_config(parser.parse_args(["verify-superharmonic", "--preset", name]))
        for k, v in values.items():
            assert cfg[k] == v
    assert PRESETS["supercritical"]["b"] == pytest.approx(13 / 36)
    assert PRESETS["subcritical"]["b"] == 0.75


def test_explicit_flag_overrides_preset():
    cfg = resolve_config(build_parser().parse_args(["verify-superharmonic", "--preset", "subcritical",
                                                    "--kappa1", "3.0"]))
    assert cfg["kappa1"] == 3.0 and cfg["kappa"] == 2.0


def test_csv_format(tmp_path):
    p = lio.write_csv(tmp_path / "x.csv", ["a", "b"], [(0.1, 1e-20), (-2.0, True)])
    raw = p.read_bytes()
    assert b"\r" not in raw
    assert raw.decode().splitlines() == ["a,b", "0.1,1e-20", "-2.0,1"]


def test_fmt_round_trips():
    rng = np.random.default_rng(0)
    for v in rng.standard_normal(200) * 10.0 ** rng.integers(-20, 20, 200):
        assert float(lio.fmt(v)) == v


def test_svg_is_deterministic(tmp_path):
    pts = np.array([0j, 0.5 + 1j, -0.2 + 2j])
    a = lio.trace_svg(tmp_path / "a.svg", pts, jumps_break=[2]).read_bytes()
    b = lio.trace_svg(tmp_path / "b.svg", pts, jumps_break=[2]).read_bytes()
    assert a == b
    samples = [(0.0, 0.0, 0.0), (1.5, 0.0, 0.5), (1.75, 1.0, 0.5)]
    assert lio.comb_svg(tmp_path / "c.svg", samples).read_bytes() == lio.comb_svg(tmp_path / "d.svg", samples).read_bytes()


def test_module_entry_point_help(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    assert "verify-moments" in capsys.readouterr().out
