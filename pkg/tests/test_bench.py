import csv
import io
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from robscatter import cli
from robscatter.bench import (
    CSV_COLUMNS,
    ConfigError,
    ExperimentSpec,
    TrialReport,
    export,
    parse_config,
    run_experiment,
    scaling_sweep,
    to_csv,
)
from robscatter.checks import CheckResult, run_all

FAST = dict(p=3, n=400, trials=2, epochs=20, estimators=("gan-g1", "kendall", "tyler", "sample-cov"))


@pytest.fixture(scope="module")
def small_report():
    return run_experiment(ExperimentSpec(eps=0.1, **FAST))


class TestSpec:
    def test_ar_exact(self):
        m = ExperimentSpec(sigma="ar", p=7).true_scatter()
        j, k = np.indices(m.shape)
        assert np.all(m - 0.5 ** np.abs(j - k) == 0)

    @pytest.mark.parametrize(
        "kw", [dict(family="cauchy"), dict(eps=1.0), dict(sigma="toeplitz"), dict(estimators=("mcd",)), dict(n=1)]
    )
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            ExperimentSpec(**kw)

    def test_id_depends_on_fields(self):
        a, b = ExperimentSpec(), ExperimentSpec(master_seed=1)
        assert a.experiment_id() != b.experiment_id()
        assert a.experiment_id() == ExperimentSpec().experiment_id()


class TestConfigFile:
    def test_parse(self):
        spec = parse_config(
            "# comment\nfamily = t\ndof = 4\nn = 300   # trailing\nestimators = gan-g2, gan-g1:beta(1,0.5), tyler\n"
        )
        assert spec.family == "t" and spec.dof == 4.0 and spec.n == 300
        assert spec.estimators == ("gan-g2", "gan-g1:beta(1,0.5)", "tyler")

    @pytest.mark.parametrize(
        "text,msg",
        [("colour = red", "unknown"), ("n = 3\nn = 4", "duplicate"), ("n = many", "bad value"), ("just words", "key = value")],
    )
    def test_errors(self, text, msg):
        with pytest.raises(ConfigError, match=msg):
            parse_config(text)


class TestReport:
    def test_row_count_and_order(self, small_report):
        assert len(small_report.rows) == 2 * 4
        assert [(r.trial, r.estimator) for r in small_report.rows[:4]] == [(0, e) for e in FAST["estimators"]]

    def test_aggregates_recomputable(self, small_report):
        for agg in small_report.aggregates():
            errs = [r.err_op for r in small_report.rows if r.estimator == agg["estimator"]]
            assert abs(agg["err_op_mean"] - sum(errs) / len(errs)) <= 1e-12
            mu = sum(errs) / len(errs)
            assert abs(agg["err_op_std"] - math.sqrt(sum((e - mu) ** 2 for e in errs) / len(errs))) <= 1e-12

    def test_single_trial_aggregate(self):
        rep = run_experiment(ExperimentSpec(**{**FAST, "trials": 1}))
        for agg, row in zip(rep.aggregates(), rep.rows):
            assert agg["err_op_mean"] == row.err_op and agg["err_op_std"] == 0.0

    def test_location_error_only_when_estimated(self):
        rep = run_experiment(ExperimentSpec(p=2, n=300, trials=1, epochs=10, theta=1.0, estimators=("gan-g3", "kendall")))
        g3, ken = rep.rows
        assert np.isfinite(g3.err_loc) and math.isnan(ken.err_loc)

    def test_failure_is_nan_row(self):
        # Tyler needs n > p; the other estimator still runs
        rep = run_experiment(ExperimentSpec(p=4, n=3, trials=1, estimators=("tyler", "sample-cov")))
        tyl, cov = rep.rows
        assert math.isnan(tyl.err_op) and tyl.error
        assert np.isfinite(cov.err_op)

    def test_threads_do_not_change_rows(self, monkeypatch):
        spec = ExperimentSpec(**FAST)
        monkeypatch.setenv("BENCH_THREADS", "1")
        a = to_csv(run_experiment(spec), include_seconds=False)
        monkeypatch.setenv("BENCH_THREADS", "3")
        assert to_csv(run_experiment(spec), include_seconds=False) == a

    def test_bad_thread_env(self, monkeypatch):
        monkeypatch.setenv("BENCH_THREADS", "lots")
        with pytest.raises(ConfigError):
            run_experiment(ExperimentSpec(**FAST))


class TestExport:
    def test_csv_columns(self, small_report):
        rows = list(csv.reader(io.StringIO(to_csv(small_report))))
        assert tuple(rows[0]) == CSV_COLUMNS
        assert len(rows) - 1 == 2 * 4

    def test_empty_header_only(self):
        assert to_csv(TrialReport({})) == ",".join(CSV_COLUMNS) + "\n"

    def test_json_round_trip(self, small_report, tmp_path):
        path = tmp_path / "r.json"
        export(small_report, path, "json")
        back = TrialReport.from_json(path.read_text())
        assert json.dumps(back.aggregates()) == json.dumps(small_report.aggregates())
        assert json.loads(path.read_text())["aggregates"] == json.loads(json.dumps(small_report.aggregates()))

    def test_csv_floats_round_trip(self, small_report):
        rows = list(csv.DictReader(io.StringIO(to_csv(small_report))))
        for parsed, row in zip(rows, small_report.rows):
            assert float(parsed["err_op"]) == row.err_op

    def test_unknown_format(self, small_report, tmp_path):
        with pytest.raises(ConfigError):
            export(small_report, tmp_path / "x", "parquet")

    def test_io_error_surfaces(self, small_report, tmp_path):
        with pytest.raises(FileNotFoundError):
            export(small_report, tmp_path / "missing" / "x.csv")


class TestSweep:
    def test_single_value_matches_run(self):
        spec = ExperimentSpec(**FAST)
        sweep = scaling_sweep(spec, "n", [400])
        run = run_experiment(spec)
        strip = lambda rows: [(r.experiment_id, r.trial, r.estimator, r.err_op, r.err_loc) for r in rows]
        assert strip(sweep.rows) == strip(run.rows)

    def test_axis_column(self):
        rep = scaling_sweep(ExperimentSpec(**{**FAST, "estimators": ("kendall",)}), "eps", [0.0, 0.1])
        rows = list(csv.reader(io.StringIO(to_csv(rep))))
        assert rows[0][-1] == "eps"
        assert [r[-1] for r in rows[1:]] == ["0.0", "0.0", "0.1", "0.1"]
        assert [float(r[5]) for r in rows[1:]] == [0.0, 0.0, 0.1, 0.1]

    def test_bad_axis_and_empty(self):
        with pytest.raises(ConfigError):
            scaling_sweep(ExperimentSpec(**FAST), "q", [1])
        with pytest.raises(ConfigError):
            scaling_sweep(ExperimentSpec(**FAST), "n", [])

    def test_t_family_axis(self):
        rep = scaling_sweep(ExperimentSpec(**{**FAST, "family": "t", "estimators": ("kendall", "tyler")}), "v", [4])
        assert all(np.isfinite(r.err_op) for r in rep.rows)


class TestDeskExample:
    def test_gan_far_below_kendall(self):
        spec = ExperimentSpec(
            p=10, n=5000, eps=0.2, contaminant="gaussian", trials=2, master_seed=11, estimators=("gan-g1", "kendall")
        )
        agg = {a["estimator"]: a["err_op_mean"] for a in run_experiment(spec).aggregates()}
        assert 5 * agg["gan-g1"] <= agg["kendall"]


class TestCli:
    def _cfg(self, tmp_path, extra=""):
        path = tmp_path / "e.cfg"
        path.write_text("p = 2\nn = 200\ntrials = 2\nepochs = 10\nestimators = gan-g1, kendall\n" + extra)
        return path

    def test_run_and_export(self, tmp_path, capsys):
        sd = str(tmp_path / "state")
        assert cli.main(["--state-dir", sd, "run", "--config", str(self._cfg(tmp_path))]) == 0
        assert "gan-g1" in capsys.readouterr().out
        out = tmp_path / "r.json"
        assert cli.main(["--state-dir", sd, "export", "--format", "json", "--out", str(out)]) == 0
        assert len(json.loads(out.read_text())["rows"]) == 4

    def test_sweep(self, tmp_path):
        out = tmp_path / "s.csv"
        rc = cli.main(
            ["--state-dir", str(tmp_path), "sweep", "--axis", "n", "--values", "150,300",
             "--config", str(self._cfg(tmp_path)), "--out", str(out)]
        )
        assert rc == 0
        assert len(out.read_text().splitlines()) == 1 + 2 * 2 * 2

    @pytest.mark.parametrize("extra", ["bogus = 1\n", "eps = 2\n"])
    def test_config_error_exit(self, tmp_path, extra):
        assert cli.main(["--state-dir", str(tmp_path), "run", "--config", str(self._cfg(tmp_path, extra))]) == 2

    def test_missing_config_exit(self, tmp_path):
        assert cli.main(["run", "--config", str(tmp_path / "nope.cfg")]) == 2

    def test_full_flag_switches_schedule(self, tmp_path, monkeypatch):
        seen = []
        monkeypatch.setattr(cli, "run_experiment", lambda spec: seen.append(spec) or TrialReport(spec.to_dict()))
        cli.main(["--state-dir", str(tmp_path), "run", "--full", "--config", str(self._cfg(tmp_path))])
        cli.main(["--state-dir", str(tmp_path), "run", "--config", str(self._cfg(tmp_path))])
        assert [s.train_preset for s in seen] == ["published", "desk"]

    def test_export_without_report(self, tmp_path):
        assert cli.main(["--state-dir", str(tmp_path), "export", "--format", "csv", "--out", str(tmp_path / "x")]) == 2

    def test_check_failure_exit(self, monkeypatch, capsys):
        fake = [CheckResult("a", True, 0.0, "x"), CheckResult("b", False, 1.0, "y")]
        monkeypatch.setattr("robscatter.checks.run_all", lambda quick=False: fake)
        assert cli.main(["check"]) == 1
        lines = capsys.readouterr().out.splitlines()
        assert len(lines) == 2 and "FAIL" in lines[1]

    def test_entry_point_subprocess(self, tmp_path):
        outs = []
        for k in range(2):
            out = tmp_path / f"{k}.csv"
            subprocess.run(
                [sys.executable, "-m", "robscatter.cli", "--state-dir", str(tmp_path / str(k)), "run",
                 "--config", str(self._cfg(tmp_path)), "--out", str(out)],
                check=True,
            )
            outs.append([row[:-1] for row in csv.reader(out.open())])
        assert outs[0] == outs[1]


class TestChecks:
    def test_quick_report_passes(self):
        results = run_all(quick=True)
        assert {r.name for r in results} >= {"gradient_suite", "flat_landscape", "t2_nonrobust_minimizer"}
        for r in results:
            assert r.passed, r.line()

    def test_line_format(self):
        line = CheckResult("x", False, 0.25, "<= 0.1").line()
        assert line == "[FAIL] x: 0.25 (<= 0.1)"
