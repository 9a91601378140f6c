from __future__ import annotations

import csv
import json

import pytest

from gmusic_clt.cli import run


def _scenario(tmp_path, name: str, **fields) -> str:
    data = {"M": 10, "N": 20, "sigma2": 1.0, "signal_eigenvalues": [10, 10, 10, 5, 5], "seed": 1}
    data.update(fields)
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


def test_support_command(tmp_path) -> None:
    out = tmp_path / "support.json"
    assert run(["support", "--scenario", _scenario(tmp_path, "fig3.json"), "--out", str(out)]) == 0
    sup = json.loads(out.read_text())["support"]
    assert sup["Q"] == 3
    assert sup["separated_A1"] and sup["separated_A2"]


def test_estimate_is_byte_stable(tmp_path) -> None:
    sc = _scenario(tmp_path, "fig3.json")
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for out in (a, b):
        assert run(["estimate", "--scenario", sc, "--out", str(out), "--deterministic"]) == 0
    assert a.read_bytes() == b.read_bytes()
    est = json.loads(a.read_text())["estimates"]
    assert abs(est["eta_improved"]["re"] - est["eta_improved_quadrature"]["re"]) < 1e-8
    assert est["eta_true"]["re"] == 1.0


def test_timestamp_present_without_flag(tmp_path) -> None:
    out = tmp_path / "s.json"
    run(["support", "--scenario", _scenario(tmp_path, "s.json"), "--out", str(out)])
    assert "generated_at" in json.loads(out.read_text())


def test_subthreshold_exit_code(tmp_path) -> None:
    sc = _scenario(tmp_path, "sub.json", signal_eigenvalues=[0.3])
    assert run(["estimate", "--scenario", sc]) == 3


@pytest.mark.parametrize(
    "argv",
    [
        ["estimate", "--scenario", "missing.json"],
        ["frobnicate", "--scenario", "x.json"],
        ["support"],
    ],
)
def test_config_errors_exit_2(argv) -> None:
    assert run(argv) == 2


def test_invalid_model_exit_2(tmp_path) -> None:
    assert run(["support", "--scenario", _scenario(tmp_path, "bad.json", N=5)]) == 2


def test_density_and_spectrum_csv(tmp_path) -> None:
    sc = _scenario(tmp_path, "fig3.json")
    dens = tmp_path / "d.csv"
    assert run(["density", "--scenario", sc, "--out", str(dens), "--points", "50"]) == 0
    rows = list(csv.reader(dens.open()))
    assert rows[0] == ["x", "density"] and len(rows) == 51
    spec = tmp_path / "s.csv"
    assert run(["spectrum", "--scenario", sc, "--out", str(spec), "--seed", "4"]) == 0
    rows = list(csv.reader(spec.open()))
    assert rows[0] == ["index", "lambda_hat", "omega_hat"] and len(rows) == 11


def test_variance_command(tmp_path) -> None:
    sc = _scenario(tmp_path, "fig5.json", M=20, N=40, signal_eigenvalues=[5, 6])
    out = tmp_path / "v.json"
    assert run(["variance", "--scenario", sc, "--out", str(out), "--method", "spiked"]) == 0
    payload = json.loads(out.read_text())
    assert payload["table"]["method"] == "spiked_closed"
    assert run(["variance", "--scenario", sc, "--method", "bogus"]) == 2


def test_clt_command_writes_histogram(tmp_path, capsys) -> None:
    sc = _scenario(tmp_path, "fig5.json", M=20, N=40, signal_eigenvalues=[5, 6])
    out = tmp_path / "report.json"
    code = run(["clt", "--scenario", sc, "--trials", "200", "--seed", "1", "--out", str(out),
                "--deterministic", "--log"])
    assert code == 0
    rep = json.loads(out.read_text())
    assert rep["trials"] == 200 and sum(rep["histogram"]["counts"]) == 200
    hist = list(csv.reader((tmp_path / "report.histogram.csv").open()))
    assert hist[0] == ["bin_left", "bin_right", "count", "normal_pdf_at_center"]
    assert "trials:" in capsys.readouterr().err
