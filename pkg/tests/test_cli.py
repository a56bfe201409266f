import csv
import math

import numpy as np
import pytest

from twotime.cli import main
from twotime.config import RunConfig, parse_override
from twotime.errors import ConfigError
from twotime.estimator import CorrelationSeries, kinsler_drummond_T
from twotime.seriesio import COLUMNS, read_series, write_csv, write_json

DECAY_CFG = """
[model]
type = "two_level_decay"
gamma = 1.0
[engine]
kind = "optimized"
[run]
trajectories = 1
dt = 0.001
t_max = 5.0
sample_every = 0.1
seed = 0
[observable]
A = "sigma_dagger"
[initial]
psi0 = "excited"
B = "sigma"
[output]
path = "out.csv"
format = "csv"
normalized = true
"""


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("TWOTIME_SEED", raising=False)
    monkeypatch.delenv("TWOTIME_WORKERS", raising=False)
    (tmp_path / "decay.toml").write_text(DECAY_CFG)
    return tmp_path


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_config_defaults_and_overrides(workdir):
    cfg = RunConfig.load("decay.toml", ["run.trajectories=7", "engine.kind=gardiner_zoller"],
                         env={"TWOTIME_SEED": "42", "TWOTIME_WORKERS": "3"})
    assert cfg.run["trajectories"] == 7 and cfg.engine["kind"] == "gardiner_zoller"
    assert cfg.run["seed"] == 42 and cfg.run["workers"] == 3
    assert cfg.times().size == 51 and cfg.times()[-1] == pytest.approx(5.0)
    assert parse_override("output.path=x.csv") == (["output", "path"], "x.csv")
    assert parse_override("run.dt=0.5") == (["run", "dt"], 0.5)


@pytest.mark.parametrize("override", [
    "run.trajectories=0", "run.dt=0.03", "run.seed=-1", "output.format=xml",
    "engine.kind=magic", "model.type=atom", "run.sample_every=0", "run.workers=0",
])
def test_config_validation(workdir, override):
    with pytest.raises(ConfigError):
        RunConfig.load("decay.toml", [override], env={})


def test_config_parse_errors(workdir):
    (workdir / "bad.toml").write_text("[run\n")
    with pytest.raises(ConfigError):
        RunConfig.load("bad.toml", env={})
    (workdir / "extra.toml").write_text("[nonsense]\na = 1\n")
    with pytest.raises(ConfigError):
        RunConfig.load("extra.toml", env={})
    with pytest.raises(ConfigError):
        RunConfig.load("missing.toml", env={})
    with pytest.raises(ConfigError):
        parse_override("run.seed")


def test_default_step_divides_sampling(workdir):
    cfg = RunConfig.load("decay.toml", [], env={})
    del cfg.run["dt"]
    cfg.run["sample_every"] = 0.1
    model = cfg.build_model()
    h = cfg.step(model)
    assert h <= 0.05 / model.rate_scale + 1e-15
    assert (0.1 / h) == pytest.approx(round(0.1 / h))


def test_simulate_single_trajectory(workdir, capsys):
    assert main(["simulate", "decay.toml"]) == 0
    out = capsys.readouterr().out
    assert "K=1" in out and "mean_jumps=0" in out and "error_bound=" in out and "wall_time=" in out
    with open("out.csv") as fh:
        assert fh.readline().strip() == ",".join(COLUMNS)
    rows = _rows("out.csv")
    t = np.array([float(r["time"]) for r in rows])
    g = np.array([float(r["g_norm_real"]) for r in rows])
    assert np.max(np.abs(g - np.exp(-t))) <= 1e-6
    assert all(r["K"] == "1" for r in rows)


def test_simulate_seed_independent_when_deterministic(workdir):
    texts = []
    for seed in (1, 2):
        assert main(["simulate", "decay.toml", "--trajectories", "100", "--seed", str(seed),
                     "--set", "run.dt=0.01", "-o", f"s{seed}.csv"]) == 0
        texts.append((workdir / f"s{seed}.csv").read_bytes())
    assert texts[0] == texts[1]


def test_byte_identical_across_workers(workdir):
    args = ["simulate", "decay.toml", "--set", "model.type=driven_two_level",
            "--set", "model.omega=4.0", "--set", "run.dt=0.01", "--set", "run.t_max=1.0",
            "--trajectories", "5000"]
    assert main(args + ["--workers", "1", "-o", "w1.csv"]) == 0
    assert main(args + ["--workers", "2", "-o", "w2.csv"]) == 0
    assert (workdir / "w1.csv").read_bytes() == (workdir / "w2.csv").read_bytes()


def test_json_mirror(workdir):
    assert main(["simulate", "decay.toml", "--set", "output.format=json", "-o", "o.json",
                 "--set", "run.dt=0.01"]) == 0
    series = read_series("o.json")
    assert series.K == 1
    np.testing.assert_allclose(series.normalized, np.exp(-series.times), atol=1e-6)


def test_exact_command(workdir):
    assert main(["exact", "decay.toml", "-o", "ex.csv"]) == 0
    rows = _rows("ex.csv")
    assert all(r["K"] == "0" and float(r["stderr_real"]) == 0 for r in rows)
    t = np.array([float(r["time"]) for r in rows])
    np.testing.assert_allclose([float(r["g_norm_real"]) for r in rows], np.exp(-t), atol=1e-9)
    assert main(["exact", "decay.toml", "--set", "run.t_max=0", "-o", "z.csv"]) == 0
    rows = _rows("z.csv")
    assert len(rows) == 1 and float(rows[0]["g_real"]) == pytest.approx(1.0)


def test_exact_dopo_small_and_too_large(workdir):
    dopo = ["--set", "model.type=dopo", "--set", "model.lam=1.5", "--set", "initial.psi0=vacuum",
            "--set", "initial.B=a1_dagger", "--set", "observable.A=a1", "--set", "run.t_max=1.0"]
    assert main(["exact", "decay.toml", *dopo, "--set", "model.n1_max=4", "--set",
                 "model.n2_max=2", "-o", "d.csv"]) == 0
    assert main(["exact", "decay.toml", *dopo, "--set", "model.n1_max=10",
                 "--set", "model.n2_max=10"]) == 4


def test_exit_codes(workdir):
    (workdir / "bad.toml").write_text("[run]\ntrajectories = 0\n")
    assert main(["simulate", "bad.toml"]) == 2
    assert main(["simulate", "decay.toml", "--set", "initial.psi0=ground"]) == 3
    assert main(["simulate", "decay.toml", "--set", "observable.A=a1"]) == 2


def _report(path):
    out = {}
    for r in _rows(path):
        out.setdefault(r["engine"], []).append(r)
    return out


def test_compare(workdir, capsys):
    base = ["compare", "decay.toml", "--trajectories", "20000", "--set", "run.t_max=2.0",
            "--set", "run.dt=0.01", "--set", "run.sample_every=0.5"]
    assert main(base + ["--engines", "gardiner_zoller", "doubled_hilbert", "optimized",
                        "--report", "a.csv"]) == 0
    rep = _report("a.csv")
    gz, bkp, opt = rep["gardiner_zoller"][-1], rep["doubled_hilbert"][-1], rep["optimized"][-1]
    assert float(gz["time"]) == pytest.approx(2.0)
    assert float(gz["needed_K"]) >= 20 * float(bkp["needed_K"])
    assert float(opt["stderr_norm"]) == 0
    # empirical second-moment ratios against the analytic growth laws
    assert float(gz["second_moment_ratio"]) == pytest.approx(math.exp(4), rel=0.25)
    assert float(bkp["second_moment_ratio"]) == pytest.approx(2 / (1 + math.exp(-4)), rel=0.05)
    assert main(base + ["--engines", "optimized", "doubled_hilbert", "gardiner_zoller",
                        "--report", "b.csv"]) == 0
    swapped = _report("b.csv")
    assert swapped == rep
    assert main(base + ["--engines", "optimized"]) == 2


def test_fit_command(workdir, capsys):
    t = np.linspace(0, 300, 61)
    write_csv(CorrelationSeries(t, np.exp(-2 * t / 100), 0 * t, 0 * t, 0, 1.0), "syn.csv")
    capsys.readouterr()
    assert main(["fit", "syn.csv", "--window", "0", "300"]) == 0
    assert float(capsys.readouterr().out) == pytest.approx(100, abs=1e-6)
    assert main(["fit", "syn.csv", "--window", "0", "900"]) == 2


def test_spectrum_command(workdir, capsys):
    assert main(["exact", "decay.toml", "--set", "run.t_max=40", "--set", "run.sample_every=0.01",
                 "-o", "long.csv"]) == 0
    assert main(["spectrum", "long.csv", "--omega-max", "4", "--omega-step", "0.5",
                 "-o", "spec.csv"]) == 0
    rows = _rows("spec.csv")
    w = np.array([float(r["omega"]) for r in rows])
    s = np.array([float(r["S"]) for r in rows])
    np.testing.assert_allclose(s, 2 / (1 + w ** 2), atol=1e-3)


def test_dk_time_command(capsys):
    assert main(["dk-time", "--lam", "2", "--G", repr(1 / math.sqrt(8))]) == 0
    value = float(capsys.readouterr().out)
    assert value == kinsler_drummond_T(2.0, 1 / math.sqrt(8), 1.0)
    assert main(["dk-time", "--lam", "2", "--kappa", "1", "--gamma1", "1", "--gamma2", "4"]) == 0
    assert float(capsys.readouterr().out) == pytest.approx(value, rel=1e-15)
    assert main(["dk-time", "--lam", "0.5"]) == 2


def test_series_roundtrip(tmp_path, rng):
    t = np.linspace(0, 1, 11)
    mean = rng.normal(size=11) + 1j * rng.normal(size=11)
    s = CorrelationSeries(t, mean, np.abs(mean.real), np.abs(mean.imag), 17, 0.3 - 0.1j)
    write_csv(s, tmp_path / "r.csv")
    write_json(s, tmp_path / "r.json")
    for name in ("r.csv", "r.json"):
        back = read_series(tmp_path / name)
        assert back.times.tobytes() == t.tobytes()
        assert back.mean.tobytes() == s.mean.tobytes()
        assert back.K == 17
        assert back.normalization == pytest.approx(0.3 - 0.1j, rel=1e-14)
