"""End-to-end tests of the crittail command line.

Contract under test:

* five subcommands: calibrate / simulate / renewal / check / report;
* fixed artifact set with golden headers, byte-identical across worker
  counts and re-runs (runinfo.txt is the one deliberately wall-clock
  file and stays outside the manifest);
* config_sha256 hashes exactly the number-determining config keys, so
  --out and --workers never change it;
* exit codes: 0 ok, 1 a requested check failed, 2 usage/config error.

Runs here are small (2e4-1.4e5 draws) -- enough for the default
first-order band, far below the scales the acceptance tests use.
"""

import hashlib
import json
import math
import os
import subprocess
import sys

import pytest

from crittail import cli

REPORT_HEADER = "x,n,k,p_hat,ci_lo,ci_hi,ratio,residual"
BATCH_HEADER = "x,n,exceed_count,exceed_neg_count"
ARTIFACTS = ("batch.csv", "report.csv", "summary.txt", "manifest.json")


def write_cfg(path, cfg):
    path.write_text(json.dumps(cfg))
    return str(path)


def tp_config(out, samples, seed, checks=None):
    """Two-point coefficient calibrated to alpha = 1, Pareto(1) noise."""
    cfg = {
        "model": {
            "kind": "affine",
            "coeff": {
                "family": "two-point",
                "calibrate": {"alpha": 1.0, "a1": 2.0, "a2": math.exp(-1)},
            },
            "noise": {"family": "constant", "alpha": 1.0, "x_b": 1.0},
        },
        "grid": {"lo": math.exp(6.0), "hi": math.exp(8.0), "count": 5},
        "run": {"samples": samples, "seed": seed, "out": str(out)},
    }
    if checks is not None:
        cfg["checks"] = checks
    return cfg


def ln_config(out, samples, seed, checks=None):
    """Lognormal(-1/2, 1) coefficient: strongly non-lattice, rho = 1/2."""
    cfg = tp_config(out, samples, seed, checks)
    cfg["model"]["coeff"] = {"family": "lognormal", "params": [-0.5, 1.0]}
    return cfg


def read_summary(out):
    items = {}
    for line in (out / "summary.txt").read_text().splitlines():
        k, _, v = line.partition("=")
        items[k] = v
    return items


def read_report_rows(out):
    lines = (out / "report.csv").read_text().splitlines()
    assert lines[0] == REPORT_HEADER
    return [line.split(",") for line in lines[1:]]


# ---------------------------------------------------------------------------
# shared full pipeline run (check subcommand, first-order)
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def check_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("check_run")
    cfg = tp_config(out, 140000, 31, checks=["first-order"])
    path = write_cfg(out / "cfg.json", cfg)
    rc = cli.main(["check", "--config", path])
    return rc, out, path, cfg


def test_check_pipeline_exits_zero_on_pass(check_run):
    rc, out, _, _ = check_run
    assert rc == 0
    s = read_summary(out)
    assert s["check.first-order.passed"] == "true"
    assert s["check.first-order.levels_used"] == "5"
    assert s["check.first-order.normalization"] == "rho"
    assert s["n"] == "140000"
    assert s["regime"] == "critical-heavy"
    assert s["backend"] in ("numba", "numpy")


def test_report_csv_golden_shape(check_run):
    _, out, _, _ = check_run
    rows = read_report_rows(out)
    assert len(rows) == 5
    ks = []
    for cols in rows:
        assert len(cols) == 8
        # first-order fills the ratio column; residual needs second-order
        assert 0.9 < float(cols[6]) < 1.3
        assert cols[7] == ""
        assert int(cols[2]) == round(float(cols[3]) * int(cols[1]))
        ks.append(int(cols[2]))
    assert ks == sorted(ks, reverse=True)


def test_batch_csv_golden_shape(check_run):
    _, out, _, _ = check_run
    lines = (out / "batch.csv").read_text().splitlines()
    assert lines[0] == BATCH_HEADER
    assert len(lines) == 6
    assert all(line.split(",")[1] == "140000" for line in lines[1:])


def test_manifest_hashes_artifacts_and_skips_runinfo(check_run):
    _, out, _, cfg = check_run
    manifest = json.loads((out / "manifest.json").read_text())
    assert set(manifest) == {
        "config_sha256",
        "model_id",
        "seed",
        "n",
        "backend",
        "batch",
        "checks",
        "files",
    }
    assert set(manifest["files"]) == {"batch.csv", "report.csv", "summary.txt"}
    for name, digest in manifest["files"].items():
        assert digest == hashlib.sha256((out / name).read_bytes()).hexdigest()
    assert manifest["config_sha256"] == cli.config_hash(cfg)
    # wall-clock facts live in runinfo.txt, never in the manifest
    assert "elapsed" not in (out / "manifest.json").read_text()
    assert (out / "runinfo.txt").exists()


def test_runinfo_carries_wall_clock_facts(check_run):
    _, out, _, _ = check_run
    keys = [line.split("=")[0] for line in (out / "runinfo.txt").read_text().splitlines()]
    assert keys == ["backend", "elapsed_seconds", "finished_unix", "workers"]


def test_report_roundtrip_reproduces_bytes(check_run):
    rc, out, path, _ = check_run
    assert rc == 0
    before = {name: (out / name).read_bytes() for name in ("report.csv", "summary.txt", "manifest.json")}
    os.remove(out / "report.csv")
    assert cli.main(["report", "--config", path]) == 0
    for name, blob in before.items():
        assert (out / name).read_bytes() == blob, name


def test_report_refuses_raw_only_tags(check_run, capsys):
    _, _, path, _ = check_run
    assert cli.main(["report", "--config", path, "--check", "holder"]) == 2
    assert "cannot re-run" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# exit codes
# ---------------------------------------------------------------------------


def test_check_band_failure_exits_one(tmp_path):
    cfg = tp_config(tmp_path, 20000, 31, checks=["first-order"])
    cfg["checks_params"] = {"first-order": {"band": [0.999, 1.001]}}
    rc = cli.main(["check", "--config", write_cfg(tmp_path / "c.json", cfg)])
    assert rc == 1
    assert read_summary(tmp_path)["check.first-order.passed"] == "false"


def test_empty_run_writes_header_only_report(tmp_path):
    cfg = tp_config(tmp_path, 0, 0, checks=[])
    rc = cli.main(["check", "--config", write_cfg(tmp_path / "c.json", cfg)])
    assert rc == 0
    assert (tmp_path / "report.csv").read_text() == REPORT_HEADER + "\n"
    lines = (tmp_path / "batch.csv").read_text().splitlines()
    assert lines[0] == BATCH_HEADER
    assert all(line.split(",")[1:] == ["0", "0", "0"] for line in lines[1:])


def test_missing_config_file_exits_two(tmp_path, capsys):
    rc = cli.main(["check", "--config", str(tmp_path / "nope.json")])
    assert rc == 2
    assert capsys.readouterr().err.startswith("error:")


def test_invalid_json_exits_two(tmp_path, capsys):
    path = tmp_path / "c.json"
    path.write_text("{ nope")
    assert cli.main(["check", "--config", str(path)]) == 2
    assert "not valid JSON" in capsys.readouterr().err


def test_non_object_config_exits_two(tmp_path, capsys):
    path = tmp_path / "c.json"
    path.write_text("[1, 2]")
    assert cli.main(["check", "--config", str(path)]) == 2
    assert "top level" in capsys.readouterr().err


def test_missing_model_key_exits_two(tmp_path, capsys):
    cfg = tp_config(tmp_path, 0, 0)
    del cfg["model"]["noise"]
    assert cli.main(["calibrate", "--config", write_cfg(tmp_path / "c.json", cfg)]) == 2
    assert "model section is missing key" in capsys.readouterr().err


def test_infeasible_calibration_exits_two(tmp_path, capsys):
    cfg = tp_config(tmp_path, 0, 0)
    cfg["model"]["coeff"]["calibrate"]["a2"] = 1.5
    assert cli.main(["calibrate", "--config", write_cfg(tmp_path / "c.json", cfg)]) == 2
    assert "outside (0,1)" in capsys.readouterr().err


def test_bad_grid_exits_two(tmp_path, capsys):
    cfg = tp_config(tmp_path, 1000, 0)
    cfg["grid"]["lo"] = 0.0
    assert cli.main(["simulate", "--config", write_cfg(tmp_path / "c.json", cfg)]) == 2
    assert "grid needs" in capsys.readouterr().err


def test_unknown_check_tag_exits_two(tmp_path, capsys):
    cfg = tp_config(tmp_path, 1000, 3)
    path = write_cfg(tmp_path / "c.json", cfg)
    assert cli.main(["check", "--config", path, "--check", "bogus"]) == 2
    assert "unknown check tag" in capsys.readouterr().err


def test_checks_without_samples_exit_two(tmp_path, capsys):
    cfg = tp_config(tmp_path, 0, 0, checks=["first-order"])
    assert cli.main(["check", "--config", write_cfg(tmp_path / "c.json", cfg)]) == 2
    assert "no samples" in capsys.readouterr().err


def test_truncation_bias_exits_two(tmp_path, capsys):
    cfg = tp_config(tmp_path, 20000, 3, checks=["first-order"])
    cfg["trunc"] = {"eps": 1e-12, "max_depth": 5}
    assert cli.main(["check", "--config", write_cfg(tmp_path / "c.json", cfg)]) == 2
    assert "depth cap" in capsys.readouterr().err


def test_report_rejects_foreign_batch_file(tmp_path, capsys):
    cfg = tp_config(tmp_path, 1000, 3, checks=["first-order"])
    (tmp_path / "batch.csv").write_text("x,count\n1.0,2\n")
    assert cli.main(["report", "--config", write_cfg(tmp_path / "c.json", cfg)]) == 2
    assert "does not look like a batch file" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# determinism and config hashing
# ---------------------------------------------------------------------------


def test_simulate_bytes_survive_workers_and_reruns(tmp_path):
    outs = [tmp_path / f"run{i}" for i in range(3)]
    for out, workers in zip(outs, (1, 3, 1)):
        cfg = tp_config(out, 70000, 5)
        cfg["run"]["workers"] = workers
        path = write_cfg(tmp_path / f"{out.name}.json", cfg)
        assert cli.main(["simulate", "--config", path]) == 0
    for name in ("batch.csv", "summary.txt", "manifest.json"):
        blobs = [(out / name).read_bytes() for out in outs]
        assert blobs[0] == blobs[1] == blobs[2], name
    # the worker count is logged, just not in the deterministic set
    assert "workers=3" in (outs[1] / "runinfo.txt").read_text()


def test_workers_env_override_and_flag_precedence(tmp_path, monkeypatch):
    monkeypatch.setenv("CRITTAIL_WORKERS", "3")
    out_env = tmp_path / "env"
    path = write_cfg(tmp_path / "a.json", tp_config(out_env, 20000, 5))
    assert cli.main(["simulate", "--config", path]) == 0
    assert "workers=3" in (out_env / "runinfo.txt").read_text()

    out_flag = tmp_path / "flag"
    path = write_cfg(tmp_path / "b.json", tp_config(out_flag, 20000, 5))
    assert cli.main(["simulate", "--config", path, "--workers", "2"]) == 0
    assert "workers=2" in (out_flag / "runinfo.txt").read_text()

    assert (out_env / "batch.csv").read_bytes() == (out_flag / "batch.csv").read_bytes()


def test_samples_flag_overrides_config(tmp_path):
    path = write_cfg(tmp_path / "c.json", tp_config(tmp_path, 70000, 5))
    assert cli.main(["simulate", "--config", path, "--samples", "1000"]) == 0
    assert read_summary(tmp_path)["n"] == "1000"


def test_config_hash_ignores_out_and_workers_only(tmp_path):
    base = tp_config(tmp_path, 1000, 7)
    h = cli.config_hash(base)

    moved = json.loads(json.dumps(base))
    moved["run"]["out"] = "/somewhere/else"
    moved["run"]["workers"] = 16
    assert cli.config_hash(moved) == h

    # key order never matters: canonical form sorts keys
    shuffled = {k: base[k] for k in reversed(list(base))}
    assert cli.config_hash(shuffled) == h

    for key, value in (("seed", 8), ("samples", 1001)):
        changed = json.loads(json.dumps(base))
        changed["run"][key] = value
        assert cli.config_hash(changed) != h
    changed = json.loads(json.dumps(base))
    changed["model"]["coeff"]["calibrate"]["a1"] = 3.0
    assert cli.config_hash(changed) != h


# ---------------------------------------------------------------------------
# remaining check tags through the CLI
# ---------------------------------------------------------------------------


def test_second_order_through_cli(tmp_path):
    cfg = ln_config(tmp_path, 50000, 44, checks=["first-order", "second-order"])
    rc = cli.main(["check", "--config", write_cfg(tmp_path / "c.json", cfg)])
    assert rc == 0
    s = read_summary(tmp_path)
    assert s["check.second-order.passed"] == "true"
    assert float(s["check.second-order.slope_se"]) > 0.0
    # coupled representation of the second-order constant rides along
    assert float(s["check.second-order.coupled_constant"]) > 0.0
    assert float(s["check.second-order.coupled_se"]) > 0.0
    for cols in read_report_rows(tmp_path):
        assert cols[6] != "" and cols[7] != ""
        float(cols[7])


def test_second_order_refuses_lattice_model_via_cli(tmp_path, capsys):
    cfg = tp_config(tmp_path, 5000, 44, checks=["second-order"])
    assert cli.main(["check", "--config", write_cfg(tmp_path / "c.json", cfg)]) == 2
    assert "non-lattice" in capsys.readouterr().err


def test_holder_through_cli(tmp_path):
    cfg = tp_config(tmp_path, 50000, 55, checks=["holder"])
    cfg["model"]["kind"] = "extremal"
    cfg["model"]["coeff"] = {
        "family": "lognormal",
        "calibrate": {"alpha": 1.0, "sigma": 1.4},
    }
    rc = cli.main(["check", "--config", write_cfg(tmp_path / "c.json", cfg)])
    assert rc == 0
    s = read_summary(tmp_path)
    assert s["check.holder.passed"] == "true"
    assert s["check.holder.sandwich_ordered"] == "true"
    # rho = 0.98 for sigma = 1.4, so 1/(2 rho) and eta/(2 rho):
    assert math.isclose(float(s["check.holder.indicator_limit"]), 0.5 / 0.98, rel_tol=1e-9)
    assert math.isclose(float(s["check.holder.gap_bound"]), 0.2 / 0.98, rel_tol=1e-9)
    # holder does not fill report columns beyond the estimates
    assert all(cols[6] == "" for cols in read_report_rows(tmp_path))


def test_signed_ladder_through_cli(tmp_path):
    cfg = tp_config(tmp_path, 50000, 66, checks=["signed-ladder"])
    cfg["model"]["coeff"] = {
        "family": "signed-lognormal",
        "params": [-0.5, 1.0],
        "sign_flip": 0.5,
    }
    cfg["model"]["noise"].update({"p_right": 0.5, "left_eta": 0.0})
    rc = cli.main(["check", "--config", write_cfg(tmp_path / "c.json", cfg)])
    assert rc == 0
    s = read_summary(tmp_path)
    assert s["check.signed-ladder.passed"] == "true"
    # 2 rho = 1 for the calibrated signed lognormal
    assert s["check.signed-ladder.log_moment_target"] == "1"
    assert abs(float(s["check.signed-ladder.alpha_moment"]) - 1.0) < 0.05
    assert 0.7 < float(s["check.signed-ladder.tail_ratio"]) < 1.3
    assert s["signed"] == "true"


# ---------------------------------------------------------------------------
# calibrate and renewal subcommands
# ---------------------------------------------------------------------------


def test_calibrate_prints_model_facts(tmp_path, capsys):
    path = write_cfg(tmp_path / "c.json", tp_config(tmp_path, 0, 0))
    assert cli.main(["calibrate", "--config", path]) == 0
    out = capsys.readouterr().out
    facts = dict(line.partition("=")[::2] for line in out.splitlines())
    assert facts["model_id"].startswith("affine:two-point(2,")
    assert facts["alpha"] == "1"
    assert math.isclose(float(facts["rho"]), 0.3115123587717441, rel_tol=1e-11)
    assert facts["regime"] == "critical-heavy"
    assert facts["strongly_nonlattice"] == "false"
    assert any(k.startswith("mixed_moment[") for k in facts)


def test_renewal_lattice_model_skips_stone(tmp_path):
    cfg = tp_config(tmp_path, 20000, 9)
    cfg["renewal"] = {"method": "monte-carlo", "x_min": -8.0, "x_max": 4.0, "probe": 2.0}
    assert cli.main(["renewal", "--config", write_cfg(tmp_path / "c.json", cfg)]) == 0
    s = read_summary(tmp_path)
    # Blackwell target is t / E Z = 1 / rho for the alpha-tilted walk
    assert math.isclose(float(s["renewal.blackwell.target"]), 1 / 0.3115123587717441, rel_tol=1e-11)
    inc = float(s["renewal.blackwell.increment"])
    assert abs(inc - float(s["renewal.blackwell.target"])) < 1.0  # smoke: small probe, 2e4 paths
    assert not any(k.startswith("renewal.stone") for k in s)
    assert (tmp_path / "renewal.csv").read_text().splitlines()[0] == "x,H"
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert set(manifest["files"]) == {"renewal.csv", "summary.txt"}
    assert manifest["renewal"]["method"] == "monte-carlo"
    for name, digest in manifest["files"].items():
        assert digest == hashlib.sha256((tmp_path / name).read_bytes()).hexdigest()


def test_renewal_nonlattice_model_reports_stone(tmp_path):
    cfg = ln_config(tmp_path, 20000, 12)
    del cfg["grid"]
    cfg["renewal"] = {"method": "monte-carlo", "x_min": -8.0, "x_max": 8.0, "probe": 4.0}
    assert cli.main(["renewal", "--config", write_cfg(tmp_path / "c.json", cfg)]) == 0
    s = read_summary(tmp_path)
    assert float(s["renewal.blackwell.target"]) == 2.0  # 1 / rho, rho = 1/2
    assert abs(float(s["renewal.blackwell.increment"]) - 2.0) < 0.2
    assert float(s["renewal.stone.target"]) == 2.5  # E Z^2 / (2 (E Z)^2)
    assert abs(float(s["renewal.stone.fit"]) - 2.5) < 0.2
    assert s["renewal.ez"] == "0.5"


def test_renewal_needs_critical_model(tmp_path, capsys):
    cfg = ln_config(tmp_path, 0, 0)
    cfg["model"]["coeff"]["params"] = [math.log(0.8) - 0.5, 1.0]
    cfg["model"]["target_alpha"] = 1.0
    assert cli.main(["renewal", "--config", write_cfg(tmp_path / "c.json", cfg)]) == 2
    assert "needs a critical model" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def test_module_help_lists_subcommands():
    proc = subprocess.run(
        [sys.executable, "-m", "crittail.cli", "--help"],
        capture_output=True,
        text=True,
        timeout=120,
    )
    assert proc.returncode == 0
    for name in ("calibrate", "simulate", "renewal", "check", "report"):
        assert name in proc.stdout
