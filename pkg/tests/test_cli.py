import json

import pytest
import yaml

from multihomog.cli import main


def write_coef(tmp_path, **data):
    path = tmp_path / "coef.yaml"
    path.write_text(yaml.safe_dump(data))
    return str(path)


def run(capsys, argv):
    rc = main(argv)
    out = capsys.readouterr()
    return rc, out.out, out.err


def test_approx(capsys):
    rc, out, _ = run(capsys, ["approx", "--alphas", "0.41421356237309503", "--Q", "10"])
    data = json.loads(out)
    assert rc == 0 and 1 <= data["q"] <= 10


def test_approx_fraction_argument(capsys):
    rc, out, _ = run(capsys, ["approx", "--alphas", "1/3,2/7", "--Q", "30"])
    assert rc == 0 and json.loads(out)["q"] == 21


def test_reperiodize(tmp_path, capsys):
    coef = write_coef(tmp_path, expr="(2+sin(2*pi*y1))*(2+cos(2*pi*y2))*(2+sin(2*pi*y3))",
                      scales=[0.1, 0.0137, 0.001], ellipticity=1 / 27)
    rc, out, _ = run(capsys, ["reperiodize", "--coef", coef, "--Q", "5", "--points", "100", "--seed", "1"])
    data = json.loads(out)
    assert rc == 0 and data["identity_residual"] <= 1e-10


def test_cell_and_table_file(tmp_path, capsys):
    coef = write_coef(tmp_path, expr="(2+sin(2*pi*y1))*(2+cos(2*pi*y2))", scales=[0.1, 0.01], ellipticity=1 / 9)
    rc, out, _ = run(capsys, ["cell", "--coef", coef, "--h", "1/16", "--lattice", "4", "--out", str(tmp_path)])
    data = json.loads(out)
    assert rc == 0 and data["min_eigenvalue"] > 0 and (tmp_path / "correctors.mhg").exists()


def test_cell_single_scale(tmp_path, capsys):
    coef = write_coef(tmp_path, expr="1/(2+sin(2*pi*y1))", scales=[0.1], ellipticity=1 / 3)
    rc, out, _ = run(capsys, ["cell", "--coef", coef, "--h", "1/512"])
    data = json.loads(out)
    assert rc == 0 and data["effective"][0][0] == pytest.approx(0.5, rel=1e-6)


def test_solve(tmp_path, capsys):
    coef = write_coef(tmp_path, expr="2+sin(2*pi*y1)", scales=[0.125], ellipticity=1 / 3)
    rc, out, _ = run(capsys, ["solve", "--coef", coef, "--F", "1", "--h", "1/128", "--out", str(tmp_path)])
    assert rc == 0 and json.loads(out)["grad_L2"] > 0
    assert (tmp_path / "u.mhg").exists() and (tmp_path / "grad_u.mhg").exists()


def test_reduce(tmp_path, capsys):
    coef = write_coef(tmp_path, expr="(2+sin(2*pi*y1))*(2+cos(2*pi*y2))", scales=[0.1, 0.01], ellipticity=1 / 9)
    rc, out, _ = run(capsys, ["reduce", "--coef", coef, "--h", "1/1024", "--r", "0.25"])
    data = json.loads(out)
    assert rc == 0 and data["error"] >= 0


def test_sweep_cz(tmp_path, capsys):
    rc, out, _ = run(capsys, ["sweep-cz", "--out", str(tmp_path)])
    assert rc == 0 and out.splitlines() and all(line.startswith("PASS") for line in out.splitlines())
    assert (tmp_path / "report.json").exists() and (tmp_path / "rates.csv").exists()


def test_rate_prints_csv(tmp_path, capsys):
    cfg = tmp_path / "rate.yaml"
    cfg.write_text(yaml.safe_dump({"experiment": "rate", "locally_periodic": {"eps": [0.1, 0.05, 0.025, 0.0125]}}))
    rc, out, _ = run(capsys, ["rate", "--config", str(cfg)])
    assert out.startswith("key,") and len(out.splitlines()) == 5
    assert rc in (0, 1)


def test_failing_sweep_exit_code(tmp_path, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text(yaml.safe_dump({"experiment": "cz", "p": [2], "outputs": {"figures": False},
                                   "coefficient": {"expr": "sin(2*pi*y1)", "ellipticity": 0.5}}))
    rc, out, _ = run(capsys, ["sweep", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert rc == 1 and "FAIL" in out


def test_error_exit_code(tmp_path, capsys):
    coef = write_coef(tmp_path, expr="2+", scales=[0.1])
    rc, _, err = run(capsys, ["solve", "--coef", coef])
    assert rc == 2 and err.startswith("error: ")


def test_sweep_requires_config():
    with pytest.raises(SystemExit):
        main(["sweep"])
