import hashlib
import json
import math
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from multihomog.errors import WindowEmpty
from multihomog.harness import (ExperimentReport, compute_verdicts, csv_text, emit_report, harmonic_profile,
                                parse_config, parse_config_dict, recompute_verdicts, run_experiment)
from multihomog.harness.report import Verdict
from multihomog.harness.sweeps import cz_verdicts, lipschitz_window

FIXTURES = Path(__file__).parent / "fixtures"
SHORT_FAMILY = {"eps1": [2.0**-4, 2.0**-5, 2.0**-6, 2.0**-7]}


def cz_config(**overrides):
    data = {"experiment": "cz", "family": SHORT_FAMILY, "outputs": {"figures": False}}
    data.update(overrides)
    return parse_config_dict(data)


# ------------------------------------------------------------ CZ


def test_constant_coefficient_ratio_is_eps_independent():
    rep = run_experiment(cz_config(coefficient={"expr": "2"}, p=[2]))
    for forcing in ("smooth", "piecewise"):
        R = [r["R"] for r in rep.records if r["forcing"] == forcing]
        assert max(R) - min(R) <= 1e-6
    assert not rep.failed
    assert all(v.status == "PASS" for v in rep.verdicts)


def test_every_record_carries_hash():
    rep = run_experiment(cz_config(p=[2]))
    assert all(r["config_hash"] == rep.config_hash for r in rep.records)
    keys = [(r["key"], r["p"]) for r in rep.records]
    assert keys == sorted(keys)


def test_failing_instance_does_not_abort_sweep():
    rep = run_experiment(cz_config(coefficient={"expr": "sin(2*pi*y1)*sin(2*pi*y2)", "ellipticity": 0.5}, p=[2]))
    assert rep.records and all(r["status"] == "error" for r in rep.records)
    assert rep.failed


def test_grid_budget_skips_instances():
    rep = run_experiment(cz_config(grid={"max_cells": 2048}, p=[2]))
    status = {r["eps_n"]: r["status"] for r in rep.records}
    assert "skipped" in status.values() and "ok" in status.values()
    finest = min(status)
    assert status[finest] == "skipped"


def test_threads_give_identical_records():
    one = run_experiment(cz_config(p=[2]))
    two = run_experiment(replace(cz_config(p=[2]), threads=3))
    # threads is part of the config hash, so compare everything else
    strip = lambda rows: [{k: v for k, v in r.items() if k != "config_hash"} for r in rows]
    assert csv_text(strip(one.records)) == csv_text(strip(two.records))


def test_quasiperiodic_identity_frequency_reduces_to_periodic():
    eps = [2.0**-4, 2.0**-5, 2.0**-6]
    qp = run_experiment(parse_config_dict({
        "experiment": "quasiperiodic", "p": [2], "quasiperiodic": {"B": "2+sin(2*pi*y1)", "M": [[1]], "eps": eps},
        "coefficient": {"ellipticity": 1 / 3}}))
    periodic = run_experiment(cz_config(p=[2], coefficient={"expr": "2+sin(2*pi*y1)", "ellipticity": 1 / 3},
                                        family={"instances": [[e] for e in eps]}))
    np.testing.assert_allclose(sorted(r["R"] for r in qp.records), sorted(r["R"] for r in periodic.records),
                               rtol=1e-12)


def test_two_frequency_quasiperiodic_passes():
    rep = run_experiment(parse_config_dict({
        "experiment": "quasiperiodic", "quasiperiodic": {"M": [[1], [math.sqrt(2)]]}}))
    assert all(v.status == "PASS" for v in rep.verdicts), rep.summary_lines()


def test_cz_verdict_detects_log_growth():
    rows = [{"forcing": "f", "p": 2.0, "status": "ok", "eps_n": 2.0**-k, "R": 1 + 0.5 * k} for k in range(4, 10)]
    (v,) = cz_verdicts(rows)
    assert v.status == "FAIL"


# ------------------------------------------------------------ Lipschitz


def test_window_two_scales():
    lo, hi, q, bound = lipschitz_window([0.1, 0.01], 0.25, 0.5)
    assert lo == pytest.approx(0.01**0.75) and hi == 0.5 and q == 1 and bound is None
    with pytest.raises(WindowEmpty):
        lipschitz_window([0.9, 0.45], 0.25, 0.5)


def test_window_three_scales_q_bound():
    delta = 2.0**-6 * 0.37 * 0.29
    scales = [2.0**-6, 2.0**-6 * 0.37, delta]
    alpha = 1 / 2
    lo, hi, q, bound = lipschitz_window(scales, alpha, 0.5)
    assert bound == pytest.approx(delta ** (-(3 - 1) * alpha))
    assert 1 <= q <= bound
    assert lo == pytest.approx(q * delta)


def test_harmonic_profile_monotone():
    prof = harmonic_profile()
    assert np.all(np.diff(prof) >= -1e-9)
    lin = harmonic_profile(boundary=lambda p: 1 + 2 * p[:, 0] - p[:, 1])
    np.testing.assert_allclose(lin, math.sqrt(5), rtol=1e-8)


# ------------------------------------------------------------ reports


def test_verdicts_recomputed_from_json(tmp_path):
    rep = run_experiment(cz_config())
    paths = emit_report(rep, tmp_path, figures=True)
    loaded = ExperimentReport.from_json(paths["json"].read_text())
    assert [v.to_dict() for v in recompute_verdicts(loaded)] == [v.to_dict() for v in rep.verdicts]
    assert compute_verdicts("cz", loaded.records) == recompute_verdicts(loaded)
    assert paths["figure"].stat().st_size > 0
    assert loaded.provenance["seed"] == 0 and "timestamp" in loaded.provenance


def test_csv_formatting():
    text = csv_text([{"key": "b", "x": 0.1, "flag": True, "none": None, "config_hash": "h"},
                     {"key": "a", "x": 1e-20, "flag": False, "config_hash": "h"}])
    assert text.splitlines() == ["key,flag,none,x,config_hash", "b,true,,0.1,h", "a,false,,1e-20,h"]


def test_verdict_status_checked():
    with pytest.raises(ValueError):
        Verdict("x", "MAYBE")


def test_golden_config_is_bit_stable(tmp_path):
    cfg = parse_config(FIXTURES / "golden.yaml")
    paths = emit_report(run_experiment(cfg), tmp_path, figures=False)
    digest = hashlib.sha256(paths["rates"].read_bytes()).hexdigest()
    assert digest == (FIXTURES / "golden_rates.sha256").read_text().strip()
    data = json.loads(paths["json"].read_text())
    assert data["config_hash"] == cfg.config_hash()
