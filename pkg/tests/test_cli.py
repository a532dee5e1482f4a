import json
import subprocess
import sys
from fractions import Fraction

import pytest

from sepprob.cli import ConfigError, RunConfig, main
from sepprob.linalg import BipartiteDims
from sepprob.metrics import MetricKind


def _run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def _strip(text):
    d = json.loads(text)
    d.pop("metadata", None)
    return json.dumps(d, sort_keys=True)


def test_config_round_trip():
    cfg = RunConfig.from_dict({
        "command": "enumerate", "dims": "2x3", "n1": 8, "n2": 8, "det_threshold": "1/2560000",
        "metrics": "min,kmb,identric", "bins": True, "bin_width": "1/10", "workers": 3,
    })
    assert cfg.dims == BipartiteDims(2, 3)
    assert cfg.det_threshold == Fraction(1, 2560000)
    assert cfg.metrics == (MetricKind.MINIMAL, MetricKind.KMB, MetricKind.IDENTRIC)
    again = RunConfig.from_dict(json.loads(cfg.canonical()))
    assert again == cfg and again.canonical() == cfg.canonical()


@pytest.mark.parametrize("bad", [
    {"command": "enumerate", "dims": "2x2", "n1": 5},
    {"command": "enumerate", "dims": "2x2", "n1": 5, "n2": 3, "det_threshold": "1/100"},
    {"command": "product-sample", "dims": "2x2", "samples": 0},
    {"command": "product-sample", "dims": "2x2", "samples": 10, "nu": "-1"},
    {"command": "product-sample", "dims": "2x2", "samples": 10, "nu": "1,2"},
    {"command": "random-search", "dims": "2x2", "radius": "3/4", "trials": 10},
    {"command": "random-search", "dims": "2x2", "trials": 10, "format": "csv"},
    {"command": "product-sample", "dims": "2x2", "samples": 10, "format": "csv"},
])
def test_invalid_configs(bad):
    with pytest.raises((ConfigError, ValueError)):
        RunConfig.from_dict(bad)


@pytest.mark.parametrize("argv", [
    ["enumerate", "--dims", "2x2", "--n1", "4"],
    ["random-search", "--radius", "0.6", "--trials", "5"],
    ["product-sample", "--samples", "10", "--nu", "0"],
    ["product-sample", "--samples", "10", "--dims", "1x2"],
    ["enumerate", "--n1", "4", "--n2", "2", "--metrics", "bogus"],
    ["nonsense"],
])
def test_error_exit_codes(capsys, argv):
    code, out, err = _run(capsys, *argv)
    assert code == 2 and out == ""
    e = json.loads(err.strip().splitlines()[-1])
    assert e["code"] == 2 and e["error"] == "invalid_config" and e["message"]


def test_grid_info(capsys):
    code, out, _ = _run(capsys, "grid-info", "--n2", "7")
    info = json.loads(out)
    assert code == 0 and info["grid_points"] == 32 and abs(info["min_modulus"] - 0.101015) < 1e-6
    assert not info["contains_origin"]
    info = json.loads(_run(capsys, "grid-info", "--n2", "8")[1])
    assert info["grid_points"] == 49 and info["contains_origin"]
    info = json.loads(_run(capsys, "grid-info", "--n1", "23", "--K", "4")[1])
    assert info["simplex_points"] == 2600
    text = _run(capsys, "grid-info", "--n2", "7", "--format", "text")[1]
    assert "32 grid points" in text


def test_enumerate_report(capsys):
    code, out, _ = _run(capsys, "enumerate", "--dims", "2x3", "--n1", "8", "--n2", "8")
    r = json.loads(out)
    assert code == 0
    assert r["schema"] == "sepprob.report/1"
    assert r["totals"]["states"] == 7581 and r["totals"]["separable"] == 5205
    assert abs(r["metrics"]["min"]["p"] - 0.643091) < 2e-4
    assert r["config"]["det_threshold"] == "0" and "workers" not in r["config"]


def test_enumerate_csv(capsys, tmp_path):
    out = tmp_path / "bins.csv"
    code, _, _ = _run(capsys, "enumerate", "--n1", "12", "--n2", "5", "--bins", "--format", "csv", "--out", str(out))
    lines = out.read_text().splitlines()
    assert code == 0
    assert lines[0] == "bin_lo,bin_hi,metric,mass,mass_separable,p_conditional"
    assert len(lines) == 1 + 3 * 61
    assert not (tmp_path / "bins.csv.ckpt").exists()


def test_workers_do_not_change_results(capsys):
    argv = ["enumerate", "--n1", "12", "--n2", "5", "--bins", "--block-size", "4"]
    one = _run(capsys, *argv)[1]
    two = _run(capsys, *argv, "--workers", "2", "--deterministic-reduce")[1]
    assert _strip(one) == _strip(two)
    argv = ["product-sample", "--samples", "25000", "--seed", "9"]
    assert _strip(_run(capsys, *argv)[1]) == _strip(_run(capsys, *argv, "--workers", "2")[1])


def test_same_seed_same_bytes(capsys):
    for argv in (["product-sample", "--dims", "2x3", "--nu", "0.5", "--samples", "5000", "--seed", "4"],
                 ["random-search", "--radius", "1/4", "--trials", "200000", "--seed", "4", "--bins"]):
        a, b = _run(capsys, *argv)[1], _run(capsys, *argv)[1]
        assert _strip(a) == _strip(b)
        assert json.loads(a).keys() == json.loads(b).keys()
    c = _run(capsys, "product-sample", "--dims", "2x3", "--nu", "0.5", "--samples", "5000", "--seed", "5")[1]
    assert _strip(c) != _strip(_run(capsys, "product-sample", "--dims", "2x3", "--nu", "0.5", "--samples", "5000", "--seed", "4")[1])


def test_budget_checkpoint_and_resume(capsys, tmp_path):
    ck = tmp_path / "run.ckpt"
    argv = ["enumerate", "--n1", "12", "--n2", "5", "--block-size", "8", "--checkpoint", str(ck)]
    code, out, err = _run(capsys, *argv, "--node-budget", "5000")
    assert code == 3 and json.loads(err)["error"] == "budget_exceeded"
    partial = json.loads(out)
    assert partial["extra"]["partial"] and ck.exists()
    done = json.loads(ck.read_text())["next_partition"]
    assert 0 < done < partial["extra"]["partitions"]
    code, out, _ = _run(capsys, *argv)
    resumed = json.loads(out)
    assert code == 0 and resumed["metadata"]["resumed_from"] == done
    ck.unlink()
    fresh = json.loads(_run(capsys, *argv)[1])
    assert resumed["totals"] == fresh["totals"] and resumed["metrics"] == fresh["metrics"]
    # a checkpoint from another run is refused
    code, _, err = _run(capsys, "enumerate", "--n1", "10", "--n2", "5", "--block-size", "8", "--checkpoint", str(ck))
    assert code == 2 and "different run" in err


def test_product_sample_report(capsys):
    code, out, _ = _run(capsys, "product-sample", "--dims", "3x3", "--nu", "3/2", "--samples", "3000", "--seed", "1")
    r = json.loads(out)
    assert code == 0 and r["label"].startswith("PPT-pass rate")
    assert not r["extra"]["ppt_sufficient"]
    p, se = r["extra"]["p_hat"], r["extra"]["stderr"]
    # converged PPT-pass rate for nu = 3/2 is 0.3778 +- 0.0015 (1e5 samples);
    # an older 3000-sample count of 1296 (0.432) sits about 6 of its own standard errors above this
    assert abs(p - 0.3778) < 5 * se


def test_random_search_hit_rate(capsys):
    code, out, _ = _run(capsys, "random-search", "--radius", "1/4", "--trials", "1000000", "--seed", "7")
    r = json.loads(out)
    assert code == 0
    assert 1e-4 <= r["extra"]["hit_rate"] <= 4e-4
    assert r["extra"]["hits"] == r["totals"]["states"]
    assert r["extra"]["hits_separable"] <= r["extra"]["hits"]


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "sepprob", "grid-info", "--n2", "2"], capture_output=True, text=True)
    assert res.returncode == 0 and json.loads(res.stdout)["grid_points"] == 5
