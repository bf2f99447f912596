import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from lowhtr.baselines import HUGE, BaselineConfig, baseline_explore_length, run_baseline_subgaussian
from lowhtr.cli import main
from lowhtr.config import (
    AlgorithmSpec,
    ConfigError,
    EnvironmentSpec,
    ExperimentConfig,
    RunSpec,
    figure1_config,
    load_config,
)
from lowhtr.env import Environment, FixedArms, gaussian, gen_scenario1
from lowhtr.runner import (
    AGGREGATE_COLUMNS,
    aggregate_traces,
    build_algorithm,
    build_environment,
    compute_oracle_regret,
    ensure_writable,
    resolve_threads,
    run_experiment,
    run_replication,
)
from lowhtr.trace import CSV_COLUMNS, RegretTrace

SMALL_TOML = """
schema_version = 1

[environment]
scenario = "scenario1"
noise = "pareto"
n_arms = 30

[run]
horizon = 300
replications = 3
base_seed = 5

[[algorithms]]
name = "lotus"
kind = "lotus"
T0 = 20
explore_scale = 0.1
refresh_every = 10
lamm_stop_eps = 1e-4

[[algorithms]]
name = "base"
kind = "baseline-subg"
refresh_every = 10
"""


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "exp.toml"
    path.write_text(SMALL_TOML)
    return load_config(path)


def read_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


class TestConfig:
    def test_load(self, small_config):
        assert small_config.run.horizon == 300
        assert [a.name for a in small_config.algorithms] == ["lotus", "base"]
        assert small_config.algorithms[0].params["T0"] == 20

    def test_round_trip_and_digest(self, small_config):
        again = ExperimentConfig.from_dict(small_config.to_dict())
        assert again == small_config
        assert again.digest() == small_config.digest()
        assert small_config.with_run(base_seed=6).digest() != small_config.digest()

    def test_with_run_ignores_none(self, small_config):
        assert small_config.with_run(horizon=None, base_seed=None) == small_config

    @pytest.mark.parametrize("mutate", [
        lambda d: d.update(schema_version=2),
        lambda d: d.update(extra=1),
        lambda d: d["environment"].update(scenario="scenario9"),
        lambda d: d["environment"].update(noise="cauchy"),
        lambda d: d["environment"].update(colour="red"),
        lambda d: d["run"].update(horizon=0),
        lambda d: d["run"].update(horizon=10),
        lambda d: d["run"].update(format="xml"),
        lambda d: d["algorithms"][0].update(kind="oful"),
        lambda d: d["algorithms"][0].update(unknown_knob=3),
        lambda d: d["algorithms"][1].update(name="lotus"),
        lambda d: d.update(algorithms=[]),
    ])
    def test_schema_errors(self, small_config, mutate):
        d = small_config.to_dict()
        mutate(d)
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict(d)

    def test_bad_toml(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("schema_version = = 1")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_config(tmp_path / "nope.toml")

    def test_select(self, small_config):
        assert [a.name for a in small_config.select(["base"]).algorithms] == ["base"]
        with pytest.raises(ConfigError):
            small_config.select(["ghost"])

    def test_figure1_preset(self):
        cfg = figure1_config()
        assert cfg.environment.noise == "pareto" and cfg.run.horizon == 20000
        assert [a.kind for a in cfg.algorithms] == ["lotus", "baseline-subg"]


class TestBuild:
    def test_lotus_defaults_from_noise(self, small_config):
        env = build_environment(small_config.environment, 0, 300)
        cfg = build_algorithm(small_config.algorithms[0], env)
        assert cfg.delta == env.noise.delta and cfg.c_moment == env.noise.c_bound
        assert cfg.mode == "rank-agnostic" and cfg.rank is None

    def test_baseline_uses_true_rank(self, small_config):
        env = build_environment(small_config.environment, 0, 300)
        cfg = build_algorithm(small_config.algorithms[1], env)
        assert cfg.rank == 2 and cfg.D_rr == pytest.approx(4.0)

    def test_lower_bound_environment(self):
        spec = EnvironmentSpec(scenario="lower-bound", d=5, r=2, delta=1.0)
        env = build_environment(spec, 0, 1000)
        assert env.arms(1).shape[0] == 8

    def test_replication_metadata(self, small_config):
        trace, records = run_replication(small_config, 0, 1)
        assert trace.metadata["seed"] == 6 and trace.metadata["replication"] == 1
        assert trace.metadata["config_hash"] == small_config.digest()
        assert len(trace) == 300 and records


class TestThreads:
    def test_resolve(self, monkeypatch):
        monkeypatch.delenv("LOWHTR_THREADS", raising=False)
        assert resolve_threads() == 1
        monkeypatch.setenv("LOWHTR_THREADS", "3")
        assert resolve_threads() == 3
        assert resolve_threads(2) == 2
        monkeypatch.setenv("LOWHTR_THREADS", "many")
        with pytest.raises(ValueError):
            resolve_threads()
        with pytest.raises(ValueError):
            resolve_threads(0)


class TestPersistence:
    def test_layout_and_columns(self, small_config, tmp_path):
        summary = run_experiment(small_config, out_dir=tmp_path)
        names = sorted(p.name for p in (tmp_path / "traces").iterdir())
        assert names == [f"{a}_rep{j:03d}.csv" for a in ("base", "lotus") for j in range(3)]
        with open(tmp_path / "aggregate.csv") as fh:
            assert tuple(next(csv.reader(fh))) == AGGREGATE_COLUMNS
        with open(tmp_path / "traces" / "lotus_rep000.csv") as fh:
            assert tuple(next(csv.reader(fh))) == CSV_COLUMNS
        on_disk = json.loads((tmp_path / "summary.json").read_text())
        assert on_disk["config_hash"] == small_config.digest()
        assert on_disk["algorithms"]["lotus"]["seeds"] == [5, 6, 7]
        assert summary["algorithms"]["base"]["median_final_regret"] == pytest.approx(
            np.median(on_disk["algorithms"]["base"]["final_regret"]))

    def test_aggregate_recomputed_from_traces(self, small_config, tmp_path):
        run_experiment(small_config, out_dir=tmp_path)
        rows = list(csv.DictReader(open(tmp_path / "aggregate.csv")))
        for name in ("lotus", "base"):
            cum = np.stack([np.cumsum([float(r["inst_regret"]) for r in
                                       csv.DictReader(open(tmp_path / "traces" / f"{name}_rep{j:03d}.csv"))])
                            for j in range(3)])
            mine = [r for r in rows if r["algo"] == name]
            assert [int(r["round"]) for r in mine] == list(range(1, 301))
            np.testing.assert_allclose([float(r["median_cumreg"]) for r in mine], np.median(cum, axis=0),
                                       rtol=1e-12)
            np.testing.assert_allclose([float(r["q25"]) for r in mine], np.percentile(cum, 25, axis=0),
                                       rtol=1e-12)
            np.testing.assert_allclose([float(r["q75"]) for r in mine], np.percentile(cum, 75, axis=0),
                                       rtol=1e-12)

    def test_aggregate_single_replication(self):
        rows = aggregate_traces({"a": [1.0, 2.0, 4.0]})
        assert rows == [(1, "a", 1.0, 1.0, 1.0), (2, "a", 2.0, 2.0, 2.0), (3, "a", 4.0, 4.0, 4.0)]

    def test_deterministic_bytes(self, small_config, tmp_path):
        run_experiment(small_config, out_dir=tmp_path / "a")
        run_experiment(small_config, out_dir=tmp_path / "b")
        assert read_bytes(tmp_path / "a") == read_bytes(tmp_path / "b")

    def test_threads_match_serial(self, small_config, tmp_path):
        run_experiment(small_config, threads=1, out_dir=tmp_path / "serial")
        run_experiment(small_config, threads=4, out_dir=tmp_path / "parallel")
        assert read_bytes(tmp_path / "serial") == read_bytes(tmp_path / "parallel")

    def test_json_format(self, small_config, tmp_path):
        cfg = small_config.with_run(format="json", replications=1)
        run_experiment(cfg, out_dir=tmp_path)
        data = json.loads((tmp_path / "traces" / "lotus_rep000.json").read_text())
        assert len(data["records"]) == 300
        assert data["metadata"]["seed"] == 5

    def test_trace_csv_round_trip(self, tmp_path):
        trace = RegretTrace()
        rng = np.random.default_rng(0)
        for j in range(50):
            trace.record(j // 10, ("warmup", "explore", "exploit")[j % 3], j % 7, float(rng.exponential()))
        trace.write_csv(tmp_path / "t.csv")
        back = RegretTrace.read_csv(tmp_path / "t.csv")
        assert back.inst_regret == trace.inst_regret
        assert back.phase == trace.phase and back.batch == trace.batch

    def test_unwritable_dir_fails_before_simulation(self, small_config, tmp_path, monkeypatch):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        called = []
        monkeypatch.setattr("lowhtr.runner._job", lambda args: called.append(args))
        with pytest.raises(OSError):
            run_experiment(small_config, out_dir=blocker / "sub")
        assert called == []

    def test_ensure_writable_creates(self, tmp_path):
        path = ensure_writable(tmp_path / "x" / "y")
        assert path.is_dir() and list(path.iterdir()) == []


class TestOracleRegret:
    def test_indices_and_matrices_agree(self):
        env = gen_scenario1(0, n_arms=20)
        arms = env.arms(1)
        picks = [0, 5, 19, int(np.argmax(env.mean_rewards(1)))]
        by_index = compute_oracle_regret(env, picks)
        by_matrix = compute_oracle_regret(env, [arms[k] for k in picks])
        np.testing.assert_allclose(by_index, by_matrix)
        brute = [max(np.sum(a * env.theta_star) for a in arms) - np.sum(arms[k] * env.theta_star)
                 for k in picks]
        np.testing.assert_allclose(by_index, brute, atol=1e-12)
        assert by_index[-1] == 0


class TestBaseline:
    def test_explore_length(self):
        # sqrt(10^3 * 2 * 20000) / 4 = 1581.14
        assert baseline_explore_length(10, 2, 20000, 4.0) == 1582
        assert baseline_explore_length(10, 2, 20000, 4.0, scale=0.01) == 16
        assert baseline_explore_length(10, 2, 10, 4.0) == 10

    def test_gaussian_trend(self):
        env = gen_scenario1(0, noise=gaussian(0.1), n_arms=40)
        cfg = BaselineConfig(rank=2, D_rr=4.0, explore_len=400, variance=0.01, c_beta=0.0, beta_scale=0.01,
                             refresh_every=10)
        trace = run_baseline_subgaussian(env, cfg, 2000, np.random.default_rng(0))
        n = trace.metadata["explore_len"]
        inst = np.asarray(trace.inst_regret)
        assert len(trace) == 2000 and set(trace.phase[:n]) == {"explore"}
        assert inst[-500:].mean() < 0.2 * inst[:n].mean()

    def test_huge_threshold_is_square_loss(self):
        from lowhtr.huber import huber_loss
        r = np.linspace(-50, 50, 11)
        np.testing.assert_allclose(huber_loss(r, HUGE), r ** 2 / 2)

    def test_all_exploration(self):
        env = Environment(np.diag([1.0, 0.0]), FixedArms(np.stack([np.eye(2) / 2, -np.eye(2) / 2])),
                          gaussian(), S=1.0)
        trace = run_baseline_subgaussian(env, BaselineConfig(rank=1, D_rr=1.0, explore_len=10 ** 6), 30,
                                         np.random.default_rng(0))
        assert set(trace.phase) == {"explore"} and len(trace) == 30


class TestCli:
    def test_missing_config(self, tmp_path, capsys):
        assert main(["simulate", "--config", str(tmp_path / "none.toml")]) == 1
        err = capsys.readouterr().err
        assert err.count("\n") == 1 and "not found" in err

    def test_bad_flag(self, capsys):
        assert main(["bench", "--horizon", "many"]) == 1
        assert main(["frobnicate"]) == 1

    def test_invalid_config(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("schema_version = 1\n[run]\nhorizon = -3\n")
        assert main(["bench", "--config", str(path)]) == 1

    def test_bad_threads(self, tmp_path):
        assert main(["validate", "--threads", "0"]) == 1

    def test_unwritable_out_dir(self, tmp_path, capsys):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        path = tmp_path / "exp.toml"
        path.write_text(SMALL_TOML)
        assert main(["bench", "--config", str(path), "--out-dir", str(blocker / "out")]) == 1
        assert "not writable" in capsys.readouterr().err

    def test_lower_bound(self, capsys):
        assert main(["lower-bound", "--d", "5", "--r", "2", "--delta", "1"]) == 0
        out = capsys.readouterr().out
        assert out.splitlines()[0] == "K=8"
        assert "FAILED" not in out

    def test_lower_bound_invalid(self):
        assert main(["lower-bound", "--d", "2", "--r", "2", "--delta", "1"]) == 1

    def test_validate(self, capsys):
        assert main(["validate"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines and all(line.startswith("PASS") for line in lines)

    def test_estimate(self, capsys):
        assert main(["estimate", "--n", "200,400", "--replications", "2"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "n,median_err,q25,q75" and len(lines) == 3

    def test_simulate_and_bench(self, tmp_path, capsys):
        path = tmp_path / "exp.toml"
        path.write_text(SMALL_TOML)
        out = tmp_path / "out"
        assert main(["simulate", "--config", str(path), "--algo", "base", "--out-dir", str(out),
                     "--replications", "1"]) == 0
        assert sorted(p.name for p in (out / "traces").iterdir()) == ["base_rep000.csv"]
        assert main(["bench", "--config", str(path), "--out-dir", str(tmp_path / "b"),
                     "--replications", "1", "--format", "json"]) == 0
        assert (tmp_path / "b" / "traces" / "lotus_rep000.json").exists()
        assert "aggregate written" in capsys.readouterr().out

    def test_console_script(self):
        proc = subprocess.run([sys.executable, "-m", "lowhtr.cli", "lower-bound", "--d", "5", "--r", "2",
                               "--delta", "1"], capture_output=True, text=True)
        assert proc.returncode == 0 and proc.stdout.startswith("K=8")


def test_run_spec_defaults():
    assert RunSpec().horizon == 20000 and RunSpec().format == "csv"
    with pytest.raises(ConfigError):
        AlgorithmSpec("x", "lotus", {"colour": 1})
