import itertools
import json
import re

import pandas as pd
import pytest

from strads.cli import main, manifest_path, parse_arguments, resolve_spec
from strads.lasso import LassoApplication
from strads.utils import StradsConfigError


SUMMARY = re.compile(r"^scheduler=(\w+) final_objective=(\S+) rounds=(\d+) wallclock_s=\d+\.\d{3}$")


def stderr_text(capsys) -> str:
    return " ".join(capsys.readouterr().err.split())


@pytest.fixture(autouse=True)
def no_seed_override(monkeypatch):
    monkeypatch.delenv("STRADS_SEED", raising=False)


@pytest.fixture
def lasso_files(tmp_path):
    out = tmp_path / "lasso"
    argv = ["gen-data", "lasso", "--n", "30", "--j", "12", "--nonzero", "3", "--block", "4", "--corr", "0.5"]
    assert main(argv + ["--seed", "7", "--out", str(out)]) == 0
    return out / "X.csv", out / "y.csv"


def run_args(lasso_files, trace, *extra):
    X, y = lasso_files
    return [
        "run",
        "--data",
        str(X),
        "--y",
        str(y),
        "--workers",
        "2",
        "--candidates",
        "4",
        "--max-iter",
        "200",
        "--clock",
        "simulated",
        "--out",
        str(trace),
        *extra,
    ]


class TestGenData:
    def test_lasso_files_and_manifest(self, lasso_files):
        X, y = lasso_files
        assert pd.read_csv(X, header=None).shape == (30, 12)
        assert pd.read_csv(y, header=None).shape == (30, 1)
        manifest = json.loads((X.parent / "manifest.json").read_text())
        assert manifest["command"] == "gen-data"
        assert manifest["kind"] == "lasso"
        assert manifest["seed"] == 7
        assert set(manifest["outputs"]) == {"X", "y", "beta_true"}
        assert manifest["generator"]["noise"] == 0.1

    def test_ratings(self, tmp_path):
        assert main(["gen-data", "mf", "--n", "40", "--m", "30", "--nnz", "300", "--out", str(tmp_path)]) == 0
        header = (tmp_path / "ratings.mtx").read_text().splitlines()[0]
        assert header.split()[:2] == ["40", "30"]

    def test_missing_size_is_a_usage_error(self):
        with pytest.raises(SystemExit) as info:
            parse_arguments(["gen-data", "lasso", "--j", "10"])
        assert info.value.code == 2


class TestRun:
    def test_summary_and_trace(self, lasso_files, tmp_path, capsys):
        trace = tmp_path / "trace.csv"
        assert main(run_args(lasso_files, trace)) == 0
        match = SUMMARY.match(capsys.readouterr().out.strip())
        assert match is not None
        assert match.group(1) == "sap"
        frame = pd.read_csv(trace)
        columns = ["iter", "wallclock_s", "objective", "active_vars", "updates_applied", "scheduler"]
        assert list(frame.columns) == columns
        assert len(frame) == int(match.group(3))
        assert frame["objective"].iloc[-1] < 0.5
        manifest = json.loads(manifest_path(trace).read_text())
        assert manifest["command"] == "run"
        assert set(manifest["inputs"]) == {str(path) for path in lasso_files}

    def test_debug_verbosity_replays_trace(self, lasso_files, tmp_path, capsys):
        assert main(["--verbosity-level", "2"] + run_args(lasso_files, tmp_path / "t.csv", "--max-iter", "10")) == 0
        assert "Trace replay: sap" in stderr_text(capsys)

    def test_same_seed_same_trace(self, lasso_files, tmp_path):
        first, second = tmp_path / "first.csv", tmp_path / "second.csv"
        assert main(run_args(lasso_files, first, "--seed", "3")) == 0
        assert main(run_args(lasso_files, second, "--seed", "3")) == 0
        assert first.read_bytes() == second.read_bytes()

    def test_large_lambda(self, lasso_files, tmp_path, capsys):
        assert main(run_args(lasso_files, tmp_path / "t.csv", "--lambda", "10")) == 0
        match = SUMMARY.match(capsys.readouterr().out.strip())
        assert match.group(3) == "1"
        assert float(match.group(2)) == pytest.approx(0.5)

    @pytest.mark.parametrize(
        "extra, message",
        [
            (["--scheduler", "shotgun"], "scheduler 'shotgun' is not valid"),
            (["--candidates", "2"], "must exceed workers"),
            (["--rho", "1.5"], "rho must lie in"),
        ],
    )
    def test_config_errors(self, lasso_files, tmp_path, capsys, extra, message):
        assert main(run_args(lasso_files, tmp_path / "t.csv") + extra) == 2
        assert message in stderr_text(capsys)

    def test_missing_file(self, tmp_path, capsys):
        missing = str(tmp_path / "nope.csv")
        code = main(["run", "--data", missing, "--y", missing, "--workers", "2", "--candidates", "4"])
        assert code == 3
        assert "no such file" in stderr_text(capsys)

    def test_numerical_failure_keeps_partial_trace(self, lasso_files, tmp_path, monkeypatch):
        calls = itertools.count(1)
        original = LassoApplication.objective

        def flaky(self):
            return float("nan") if next(calls) == 3 else original(self)

        monkeypatch.setattr(LassoApplication, "objective", flaky)
        trace = tmp_path / "t.csv"
        assert main(run_args(lasso_files, trace)) == 4
        assert pd.read_csv(trace)["iter"].tolist() == [1, 2]


class TestReplay:
    def test_replay_reproduces_trace(self, lasso_files, tmp_path):
        trace = tmp_path / "trace.csv"
        assert main(run_args(lasso_files, trace, "--seed", "5")) == 0
        replay = tmp_path / "replay.csv"
        assert main(["run", "--manifest", str(manifest_path(trace)), "--out", str(replay)]) == 0
        assert replay.read_bytes() == trace.read_bytes()

    def test_changed_input_is_rejected(self, lasso_files, tmp_path, capsys):
        trace = tmp_path / "trace.csv"
        assert main(run_args(lasso_files, trace)) == 0
        y = lasso_files[1]
        y.write_text(y.read_text().replace("\n", "0\n", 1))
        assert main(["run", "--manifest", str(manifest_path(trace))]) == 3
        assert "changed since the manifest was written" in stderr_text(capsys)


class TestCompare:
    def test_lasso_grid_and_medians(self, lasso_files, tmp_path, capsys):
        X, y = lasso_files
        out = tmp_path / "comparison.csv"
        argv = ["compare", "--data", str(X), "--y", str(y), "--workers", "2", "--candidates", "4"]
        argv += ["--schedulers", "sap", "random", "--seeds", "1..2", "--max-iter", "30", "--grid-every", "10"]
        assert main(argv + ["--clock", "simulated", "--out", str(out)]) == 0
        table = pd.read_csv(out, dtype={"seed": str})
        assert len(table) == 2 * 2 * 3 + 2 * 3
        medians = table[table["seed"] == "median"]
        assert medians["scheduler"].tolist() == ["sap"] * 3 + ["random"] * 3
        assert medians["iter"].tolist() == [10, 20, 30] * 2
        lines = capsys.readouterr().out.strip().splitlines()
        assert [line.split()[0] for line in lines] == ["scheduler=sap", "scheduler=random"]
        assert manifest_path(out).exists()

    def test_scheduler_ordering_on_default_preset(self, tmp_path):
        out = tmp_path / "ordering.csv"
        argv = ["compare", "--schedulers", "sap", "static", "random", "--seeds", "1..5", "--grid-every", "2000"]
        assert main(argv + ["--clock", "simulated", "--out", str(out)]) == 0
        table = pd.read_csv(out, dtype={"seed": str})
        final = table[(table["seed"] == "median") & (table["iter"] == 2000)].set_index("scheduler")["objective"]
        assert final["sap"] <= final["static"] <= final["random"]
        assert final["sap"] <= 0.95 * final["random"]

    def test_needs_two_schedulers(self, lasso_files, tmp_path):
        X, y = lasso_files
        argv = ["compare", "--data", str(X), "--y", str(y), "--workers", "2", "--candidates", "4"]
        assert main(argv + ["--schedulers", "sap", "--out", str(tmp_path / "c.csv")]) == 2

    def test_manifests_on_different_datasets(self, lasso_files, tmp_path, capsys):
        other = tmp_path / "other"
        argv = ["gen-data", "lasso", "--n", "30", "--j", "12", "--nonzero", "3", "--block", "4"]
        assert main(argv + ["--seed", "8", "--out", str(other)]) == 0
        first, second = tmp_path / "a.csv", tmp_path / "b.csv"
        assert main(run_args(lasso_files, first, "--max-iter", "5")) == 0
        assert main(run_args((other / "X.csv", other / "y.csv"), second, "--max-iter", "5")) == 0
        manifests = [str(manifest_path(first)), str(manifest_path(second))]
        assert main(["compare", "--manifests", *manifests, "--out", str(tmp_path / "c.csv")]) == 2
        assert "one dataset" in stderr_text(capsys)

    def test_balanced_critical_path(self, tmp_path):
        argv = ["gen-data", "mf", "--n", "60", "--m", "40", "--rank", "3", "--nnz", "600", "--zipf", "1.5"]
        assert main(argv + ["--out", str(tmp_path)]) == 0
        out = tmp_path / "mf.csv"
        argv = ["compare", "--app", "mf", "--data", str(tmp_path / "ratings.mtx"), "--workers", "4", "--rank", "3"]
        argv += ["--schedulers", "balanced", "uniform", "--seeds", "1", "--max-iter", "2", "--grid-every", "1"]
        assert main(argv + ["--clock", "simulated", "--out", str(out)]) == 0
        table = pd.read_csv(out, dtype={"seed": str})
        medians = table[table["seed"] == "median"].set_index(["scheduler", "iter"])
        for epoch in (1, 2):
            balanced = medians.loc[("balanced", epoch)]
            uniform = medians.loc[("uniform", epoch)]
            assert balanced["critical_path_cost"] <= uniform["critical_path_cost"]
            assert balanced["objective"] == uniform["objective"]


class TestCheckTheory:
    def test_enumeration_bound(self, capsys):
        assert main(["check-theory", "--vars", "20"]) == 2
        assert "enumeration bound exceeded" in stderr_text(capsys)

    def test_odd_variable_count(self):
        assert main(["check-theory", "--vars", "7"]) == 2

    def test_default_run_passes(self, capsys):
        assert main(["check-theory"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 4 * 20 + 1
        assert lines[-1].split()[1] == "theorem_direction_rate"


class TestSeedOverride:
    def test_environment_wins(self, monkeypatch):
        monkeypatch.setenv("STRADS_SEED", "42")
        spec = resolve_spec(parse_arguments(["run", "--seed", "3"]))
        assert spec.config.seed == 42

    def test_flags_override_preset(self):
        spec = resolve_spec(parse_arguments(["run", "--app", "mf", "--workers", "10", "--lambda", "0.2"]))
        assert spec.scheduler == "balanced"
        assert spec.config.workers == spec.config.candidates == 10
        assert spec.config.lambda_mf == 0.2

    def test_bad_environment_seed(self, monkeypatch):
        monkeypatch.setenv("STRADS_SEED", "soon")
        with pytest.raises(StradsConfigError, match="STRADS_SEED must be an integer"):
            resolve_spec(parse_arguments(["run"]))
