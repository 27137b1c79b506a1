import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from stablab import __version__
from stablab.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main
from stablab.config import BoundsJob, ConfigError, TailJob, VerifyJob, parse_config, render_config
from stablab.functionals import ColorThreshold, FunctionalDescriptor
from stablab.clt_harness import ExperimentConfig
from stablab.measures import TestFunction
from stablab.point_process import Density, save_density_csv

MINIMAL = """\
kind = knn
k = 1
lambda = [256, 1024]
m = 100
seed = 1
"""


def write(tmp_path, text, name="job.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# parsing


def test_minimal_config():
    cfg = parse_config(MINIMAL, "experiment")
    assert isinstance(cfg, ExperimentConfig)
    assert cfg.descriptor == FunctionalDescriptor("knn-edge-length", k=1)
    assert cfg.lambdas == [256.0, 1024.0]
    assert (cfg.replicates, cfg.seed) == (100, 1)
    assert cfg.density == Density.uniform()
    assert cfg.test_function == TestFunction("constant", 1.0)


def test_range_error_names_field():
    with pytest.raises(ConfigError) as err:
        parse_config(MINIMAL.replace("k = 1", "k = 0"), "experiment")
    assert "k" in str(err.value)
    assert err.value.line == 2


def test_unknown_key_has_line():
    with pytest.raises(ConfigError) as err:
        parse_config(MINIMAL + "foo = 3\n", "experiment")
    assert err.value.line == 6
    assert "foo" in str(err.value)


@pytest.mark.parametrize("text,line", [
    ("kind = knn\nlambda = [256, 1x]\nm = 10\nseed = 1\n", 2),
    ("kind = knn\nlambda = [256]\nseed = 1\n", None),
    ("kind = knn\nlambda = [512, 256]\nm = 10\nseed = 1\n", 2),
    ("kind = knn\nkind = sig\nlambda = [256]\nm = 10\nseed = 1\n", 2),
    ("kind = knn\nlambda = [256]\nm = 10\nseed = 1\n[density]\nkind = blob\n", 6),
    ("kind = knn\nlambda = [256]\nm = 10\nseed = 1\n[colors]\n", 5),
])
def test_config_errors(text, line):
    with pytest.raises(ConfigError) as err:
        parse_config(text, "experiment")
    if line is not None:
        assert err.value.line == line


def test_round_trip_experiment(tmp_path):
    grid = Density.grid([0, 0], [1, 1], [[1, 2], [3, 4]])
    save_density_csv(grid, tmp_path / "grid.csv")
    grid.source = "grid.csv"
    configs = [
        parse_config(MINIMAL, "experiment"),
        ExperimentConfig(FunctionalDescriptor("two-color-mismatch", q=ColorThreshold(0.25, (0.5, -0.125))),
                         Density.uniform([0, 0], [2, 1]), TestFunction("box", lower=(0.0, 0.0), upper=(0.5, 0.5)),
                         [16.0, 64.0], 10, 7, rho_alpha=1.5),
        ExperimentConfig(FunctionalDescriptor("independence-ratio", b=0.55), grid,
                         TestFunction("linear", coef=(1.0, 2.0), offset=0.1), [100.0], 5, 0),
        ExperimentConfig(FunctionalDescriptor("sig-degree-indicator", delta=2), Density.uniform([0], [1]),
                         TestFunction("constant", 2.5), [4.0, 8.0, 16.0], 3, 11),
    ]
    for cfg in configs:
        back = parse_config(render_config(cfg), "experiment", base=tmp_path)
        assert back == cfg


def test_round_trip_other_jobs():
    tails = TailJob(FunctionalDescriptor("knn-distance-indicator", s=0.3), Density.uniform(), "nn-distance", None,
                    [100.0, 200.0], [[0.5, 0.5]], 50, [0.5, 1.0], 4)
    verify = VerifyJob(FunctionalDescriptor("independence-ratio", b=0.7), Density.uniform(),
                       "component-extent-plus-2b", None, 400.0, 20, 3, 2, False, True)
    bounds = BoundsJob({"q": 3.0, "D": 2, "V": 100, "theta": 0.1})
    assert parse_config(render_config(tails), "tails") == tails
    assert parse_config(render_config(verify), "verify-stab") == verify
    assert parse_config(render_config(bounds), "bounds") == bounds


def test_negative_control_needs_matching_kind():
    text = "kind = knn\nrule = nn\nlambda = 100\ntrials = 5\nseed = 1\nnegative_control = true\n"
    with pytest.raises(ConfigError):
        parse_config(text, "verify-stab")


# running


def test_experiment_outputs(tmp_path):
    cfg = write(tmp_path, "kind = knn\nlambda = [16, 32, 64]\nm = 30\nseed = 2\n")
    out = tmp_path / "out"
    assert main(["experiment", str(cfg), "--out", str(out)]) == EXIT_OK
    for name in ("summary.json", "raw.csv", "var_scaling.csv", "ks_vs_lambda.csv", "manifest.json"):
        assert (out / name).exists()
    assert read_csv(out / "var_scaling.csv")[0] == ["lambda", "variance", "stderr"]
    assert read_csv(out / "ks_vs_lambda.csv")[0] == ["lambda", "ks_distance", "stderr"]
    assert len(read_csv(out / "raw.csv")) == 1 + 3 * 30
    summary = json.loads((out / "summary.json").read_text())
    manifest = json.loads((out / "manifest.json").read_text())
    assert summary["version"] == manifest["version"] == __version__
    assert manifest["suite"] == "experiment"
    assert "raw.csv" in manifest["artifacts"]


def test_rerun_is_byte_identical(tmp_path):
    cfg = write(tmp_path, "kind = sig\nlambda = [16, 32, 64]\nm = 20\nseed = 5\n")
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["experiment", str(cfg), "--out", str(a)]) == EXIT_OK
    assert main(["experiment", str(cfg), "--out", str(b), "--threads", "3"]) == EXIT_OK
    for name in ("raw.csv", "var_scaling.csv", "ks_vs_lambda.csv", "summary.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_seed_flag_overrides(tmp_path):
    cfg = write(tmp_path, "kind = knn\nlambda = [16]\nm = 5\nseed = 5\n")
    assert main(["experiment", str(cfg), "--out", str(tmp_path / "a"), "--seed", "9"]) == EXIT_OK
    assert json.loads((tmp_path / "a" / "summary.json").read_text())["seed"] == 9


def test_tails_output_monotone(tmp_path):
    cfg = write(tmp_path, "kind = two-color\nq_intercept = 0.5\nrule = nn\nlambda = [100, 400]\n"
                          "replicates = 200\nt = [0.25, 0.5, 1.0, 1.5, 2.0]\nseed = 3\n")
    out = tmp_path / "out"
    assert main(["tails", str(cfg), "--out", str(out)]) == EXIT_OK
    rows = read_csv(out / "tail.csv")
    assert rows[0] == ["t", "tau_hat", "stderr", "n"]
    tau = np.array([float(r[1]) for r in rows[1:]])
    assert np.all(np.diff(tau) <= 0)


def test_verify_outputs(tmp_path):
    cfg = write(tmp_path, "kind = independence\nb = 0.7\nrule = component\nlambda = 400\ntrials = 50\n"
                          "seed = 1\ninstances = 2\nnegative_control = true\n")
    out = tmp_path / "out"
    assert main(["verify-stab", str(cfg), "--out", str(out)]) == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert summary["total_violations"] >= 1
    assert read_csv(out / "violations.csv")[0] == ["instance", "points", "radius", "violations"]


def test_bounds_summary(tmp_path):
    cfg = write(tmp_path, "[bounds]\nq = 3\nD = 2\nV = 100\ntheta = 0.1\n")
    out = tmp_path / "out"
    assert main(["bounds", str(cfg), "--out", str(out)]) == EXIT_OK
    text = (out / "summary.json").read_text()
    assert abs(json.loads(text)["bounds"]["chen_shao"] - 7680) < 1e-9
    assert "7680" in text


def test_exit_codes(tmp_path, capsys):
    bad = write(tmp_path, "kind = knn\nk = 0\nlambda = [16]\nm = 5\nseed = 1\n")
    assert main(["experiment", str(bad), "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    assert "line 2" in capsys.readouterr().err
    assert main(["experiment", str(tmp_path / "missing.cfg")]) == EXIT_CONFIG
    # most replicates at lambda = 2 have fewer than four points
    failing = write(tmp_path, "kind = knn\nk = 3\nlambda = [2]\nm = 50\nseed = 1\n", "fail.cfg")
    assert main(["experiment", str(failing), "--out", str(tmp_path / "y")]) == EXIT_RUNTIME


def test_module_entry_point(tmp_path):
    cfg = write(tmp_path, "[bounds]\nq = 3\nD = 1\nV = 1\ntheta = 1\n")
    proc = subprocess.run([sys.executable, "-m", "stablab", "bounds", str(cfg), "--out", str(tmp_path / "o")],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert json.loads((tmp_path / "o" / "summary.json").read_text())["bounds"]["chen_shao"] == 75.0
