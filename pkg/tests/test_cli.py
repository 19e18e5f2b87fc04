"""Emission formats, command wiring, and file-level determinism."""

import json
import math

import numpy as np
import pytest

from driftpref.cli import (
    _atlas_ledger,
    _checkpoint_slope,
    _sem,
    dump_json,
    execute_report,
    execute_run,
    fmt_float,
    main,
    phases_csv,
    steps_csv,
    write_text,
)
from driftpref.config import RunConfig
from driftpref.errors import ConfigError, ContractError
from driftpref.prefloop import PhaseReport
from driftpref.regret import RegretLedger


class TestFmtFloat:
    def test_round_trips_float64(self):
        for x in (1.0 / 3.0, 0.1, 1e-300, 123456.789, -2.5e17):
            assert float(fmt_float(x)) == x

    def test_plain_integers_stay_short(self):
        assert fmt_float(2.0) == "2"


class TestDumpJson:
    def test_parseable_and_ordered(self):
        obj = {"b": 1, "a": [1.5, None, True], "c": {"x": "hi"}}
        text = dump_json(obj)
        parsed = json.loads(text)
        assert parsed == {"b": 1, "a": [1.5, None, True], "c": {"x": "hi"}}
        # insertion order is preserved, not sorted
        assert text.index('"b"') < text.index('"a"') < text.index('"c"')

    def test_nan_and_inf_become_null(self):
        parsed = json.loads(dump_json({"a": float("nan"), "b": float("inf")}))
        assert parsed == {"a": None, "b": None}

    def test_integral_floats_keep_a_decimal_point(self):
        assert dump_json(2.0) == "2.0"
        assert json.loads(dump_json({"x": 8000.0}))["x"] == 8000.0

    def test_seventeen_digit_floats_round_trip(self):
        x = 0.1 + 0.2
        assert json.loads(dump_json({"x": x}))["x"] == x

    def test_string_escaping(self):
        assert json.loads(dump_json('say "hi" \\ there')) == 'say "hi" \\ there'

    def test_numpy_scalars(self):
        text = dump_json({"i": np.int64(3), "f": np.float64(0.5),
                          "b": np.bool_(True)})
        assert json.loads(text) == {"i": 3, "f": 0.5, "b": True}

    def test_empty_containers(self):
        assert dump_json({}) == "{}"
        assert dump_json([]) == "[]"

    def test_unserializable_rejected(self):
        with pytest.raises(ContractError):
            dump_json({"x": {1, 2}})


def tiny_ledger():
    return RegretLedger(
        t=np.array([1, 2]),
        phase=np.array([1, 1]),
        bias=np.array([0.5, 0.25]),
        error=np.array([0.1, 0.2]),
        regret_step=np.array([0.6, 0.45]),
        regret_cum=np.array([0.6, 1.05]),
        oracle_arm=np.array([2, 0]),
        switch=np.array([0, 1]),
    )


class TestStepsCsv:
    def test_header_and_rows(self):
        text = steps_csv(tiny_ledger())
        lines = text.strip().split("\n")
        assert lines[0] == "t,phase,bias,error,regret_step,regret_cum,oracle_arm,switch"
        assert len(lines) == 3
        first = lines[1].split(",")
        assert first[0] == "1"
        assert float(first[2]) == 0.5
        assert first[6] == "2"

    def test_values_round_trip(self):
        led = tiny_ledger()
        led.bias[0] = 1.0 / 3.0
        text = steps_csv(led)
        assert float(text.strip().split("\n")[1].split(",")[2]) == 1.0 / 3.0


def make_phase(k=1, decision="accept", delta_s=0.01, kl_hat=0.001, n_pairs=20):
    return PhaseReport(
        phase_index=k, n_pairs=n_pairs, loss_trace=[], delta_s=delta_s,
        kl_hat=kl_hat, decision=decision, accepted=decision == "accept",
        chosen="full" if decision == "accept" else "",
        ref_version_before=0, ref_version_after=1 if decision == "accept" else 0,
        beta=0.6, eps_s=0.0007, delta_H=0.002, gate_size=20,
    )


class TestPhasesCsv:
    def test_header_and_rows(self):
        text = phases_csv([make_phase(1), make_phase(2, decision="reject")])
        lines = text.strip().split("\n")
        assert lines[0] == "k,n_pairs,delta_S,kl_hat,accepted,beta,eps_s,delta_H"
        assert lines[1].split(",")[4] == "1"
        assert lines[2].split(",")[4] == "0"

    def test_skipped_phase_emits_nan_statistics(self):
        skipped = make_phase(3, decision="skipped", delta_s=float("nan"),
                             kl_hat=float("nan"), n_pairs=0)
        skipped.accepted = False
        line = phases_csv([skipped]).strip().split("\n")[1]
        fields = line.split(",")
        assert fields[1] == "0"
        assert fields[2] == "nan"
        assert fields[3] == "nan"


class TestCheckpointSlope:
    def test_linear_growth_has_unit_slope(self):
        cum = np.cumsum(np.full(400, 2.0))
        assert abs(_checkpoint_slope(cum) - 1.0) < 1e-9

    def test_short_runs_give_none(self):
        assert _checkpoint_slope(np.array([1.0, 2.0, 3.0])) is None

    def test_nonpositive_checkpoint_gives_none(self):
        assert _checkpoint_slope(np.zeros(40)) is None


class FakeIslandResult:
    def __init__(self):
        self.round_best = np.array([-0.4, math.nan, -0.2])
        self.round_best_anchor = np.array([3, -1, 5])
        self.round_phase = np.array([1, 1, 1])


class TestAtlasLedger:
    def test_mapping(self):
        led = _atlas_ledger(FakeIslandResult())
        assert np.array_equal(led.t, np.array([1, 2, 3]))
        assert led.regret_step[0] == 0.4
        assert math.isnan(led.regret_step[1])
        # the nan round does not advance the cumulative column
        assert np.allclose(led.regret_cum, np.array([0.4, 0.4, 0.6]))
        assert np.array_equal(led.oracle_arm, np.array([3, -1, 5]))
        assert np.array_equal(led.switch, np.array([0, 1, 1]))


class TestSem:
    def test_matches_ddof_one(self):
        vals = [1.0, 2.0, 4.0]
        want = float(np.std(np.asarray(vals), ddof=1) / np.sqrt(3))
        assert abs(_sem(vals) - want) < 1e-15

    def test_singleton_is_zero(self):
        assert _sem([3.0]) == 0.0


EVO_CFG = """\
mode = evodpo
K = 3
d = 3
H = 60
delta_min = 0.05
delta_max = 0.2
V_T = 1000000
seeds = 0..1
"""


class TestExecuteRun:
    def test_preference_run_emits_expected_files(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text(EVO_CFG)
        out = tmp_path / "out"
        assert main(["run", "--config", str(cfg_file), "--out", str(out)]) == 0
        for seed in (0, 1):
            assert (out / f"evodpo_seed{seed}_steps.csv").is_file()
            assert (out / f"evodpo_seed{seed}_phases.csv").is_file()
        summary = json.loads((out / "evodpo_summary.json").read_text())
        assert summary["mode"] == "evodpo"
        assert summary["seeds"] == [0, 1]
        assert len(summary["final_metric_per_seed"]) == 2
        assert summary["mean"] == pytest.approx(
            np.mean(summary["final_metric_per_seed"]))
        assert "sem" in summary and "slope_exponent" in summary

    def test_accept_rate_recomputable_from_phase_csvs(self, tmp_path):
        cfg = RunConfig(mode="evodpo", K=3, d=3, H=60, seeds=(0, 1, 2),
                        drift_mode="frozen", eps_s=0.0, delta_H=1e9)
        out = tmp_path / "out"
        execute_run(cfg, out)
        summary = json.loads((out / "evodpo_summary.json").read_text())
        accepted = gated = 0
        for seed in (0, 1, 2):
            lines = (out / f"evodpo_seed{seed}_phases.csv").read_text().strip()
            for row in lines.split("\n")[1:]:
                fields = row.split(",")
                if int(fields[1]) > 0:  # skipped phases carry zero pairs
                    gated += 1
                    accepted += int(fields[4])
        assert gated > 0
        assert summary["accept_rate"] == pytest.approx(accepted / gated)

    def test_reward_bandit_run(self, tmp_path):
        cfg = RunConfig(mode="reward-bandit", K=4, d=3, H=120, seeds=(0, 1),
                        window_size=16)
        out = tmp_path / "out"
        execute_run(cfg, out)
        summary = json.loads((out / "reward-bandit_summary.json").read_text())
        assert summary["accept_rate"] is None
        steps = (out / "reward-bandit_seed0_steps.csv").read_text()
        assert len(steps.strip().split("\n")) == 121
        phases = (out / "reward-bandit_seed0_phases.csv").read_text()
        assert phases.strip().split("\n") == [
            "k,n_pairs,delta_S,kl_hat,accepted,beta,eps_s,delta_H"
        ]

    def test_atlas_run(self, tmp_path):
        cfg = RunConfig(mode="atlas", K=3, d=3, rounds=20, phase_length=10,
                        islands=2, proposals_per_island=1, eval_horizon=60,
                        eval_episodes=1, top_s=3, seeds=(0,))
        out = tmp_path / "out"
        execute_run(cfg, out)
        summary = json.loads((out / "atlas_summary.json").read_text())
        assert summary["mode"] == "atlas"
        steps = (out / "atlas_seed0_steps.csv").read_text()
        assert len(steps.strip().split("\n")) == 21
        phases = (out / "atlas_seed0_phases.csv").read_text()
        assert len(phases.strip().split("\n")) >= 2

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg = RunConfig(mode="evodpo", K=3, d=3, H=60, seeds=(0,))
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        execute_run(cfg, out_a)
        execute_run(cfg, out_b)
        for name in ("evodpo_seed0_steps.csv", "evodpo_seed0_phases.csv",
                     "evodpo_summary.json"):
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes()


class TestExecuteVerify:
    def test_verify_subcommand_emits_reports(self, tmp_path):
        cfg_file = tmp_path / "verify.cfg"
        cfg_file.write_text("mode = verify\ntrials = 40\n")
        out = tmp_path / "out"
        assert main(["verify", "--config", str(cfg_file), "--out", str(out)]) == 0
        payload = json.loads((out / "verify_reports.json").read_text())
        assert [c["lemma_id"] for c in payload["checks"]] == [
            "kl-perturbation", "switching-budget", "local-variation",
            "self-normalized", "estimation-error",
        ]
        assert all(c["passed"] for c in payload["checks"])
        lines = (out / "verify_summary.csv").read_text().strip().split("\n")
        assert lines[0] == ("check,trials,violations,excluded,max_ratio,"
                            "violation_rate,allowed_rate,passed")
        assert len(lines) == 6


class TestExecuteReport:
    def make_summaries(self, tmp_path):
        out = tmp_path / "runs"
        execute_run(RunConfig(mode="evodpo", K=3, d=3, H=60, seeds=(0,)), out)
        execute_run(RunConfig(mode="fixed-ref", K=3, d=3, H=60, seeds=(0,)), out)
        return [str(out / "evodpo_summary.json"),
                str(out / "fixed-ref_summary.json")]

    def test_aggregates_rows(self, tmp_path, capsys):
        paths = self.make_summaries(tmp_path)
        out = tmp_path / "rep"
        assert execute_report(paths, out) == 0
        table = (out / "report.csv").read_text()
        lines = table.strip().split("\n")
        assert lines[0] == "mode,n_seeds,final_mean,final_sem,slope_exponent,accept_rate"
        assert len(lines) == 3
        assert lines[1].startswith("evodpo,1,")
        assert lines[2].startswith("fixed-ref,1,")
        # the fixed-reference variant has no accept rate: empty cell
        assert lines[2].endswith(",")
        assert capsys.readouterr().out == table

    def test_missing_file_named(self, tmp_path):
        with pytest.raises(ConfigError, match="no_such.json"):
            execute_report([str(tmp_path / "no_such.json")], tmp_path)

    def test_unparseable_file_rejected(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{ not json")
        with pytest.raises(ConfigError, match="unparseable"):
            execute_report([str(bad)], tmp_path)

    def test_missing_keys_listed(self, tmp_path):
        bad = tmp_path / "partial.json"
        bad.write_text(json.dumps({"mode": "evodpo", "seeds": [0]}))
        with pytest.raises(ConfigError, match="mean"):
            execute_report([str(bad)], tmp_path)

    def test_no_paths_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            execute_report([], tmp_path)


class TestMainWiring:
    def test_missing_config_file_exits_two(self, tmp_path, capsys):
        code = main(["run", "--config", str(tmp_path / "ghost.cfg"),
                     "--out", str(tmp_path)])
        assert code == 2
        assert "error:" in capsys.readouterr().err

    def test_config_parse_error_exits_two(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("wat = 1\n")
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path)]) == 2
        assert "line 1" in capsys.readouterr().err

    def test_sweep_requires_seeds(self, tmp_path, capsys):
        assert main(["sweep", "--out", str(tmp_path)]) == 2
        assert "--seeds" in capsys.readouterr().err

    def test_sweep_with_seed_range(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(EVO_CFG)
        out = tmp_path / "out"
        code = main(["sweep", "--config", str(cfg), "--seeds", "5..6",
                     "--out", str(out)])
        assert code == 0
        assert (out / "evodpo_seed5_steps.csv").is_file()
        assert (out / "evodpo_seed6_steps.csv").is_file()

    def test_seed_flag_overrides_config(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(EVO_CFG)
        out = tmp_path / "out"
        assert main(["run", "--config", str(cfg), "--seed", "9",
                     "--out", str(out)]) == 0
        assert (out / "evodpo_seed9_steps.csv").is_file()
        assert not (out / "evodpo_seed0_steps.csv").exists()

    def test_mode_flag_overrides_config(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(EVO_CFG)
        out = tmp_path / "out"
        assert main(["run", "--config", str(cfg), "--mode", "fixed-ref",
                     "--out", str(out)]) == 0
        assert (out / "fixed-ref_summary.json").is_file()

    def test_bad_mode_override_exits_two(self, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(EVO_CFG)
        assert main(["run", "--config", str(cfg), "--mode", "nonsense",
                     "--out", str(tmp_path)]) == 2
        assert "mode" in capsys.readouterr().err

    def test_report_subcommand(self, tmp_path, capsys):
        out = tmp_path / "runs"
        execute_run(RunConfig(mode="evodpo", K=3, d=3, H=60, seeds=(0,)), out)
        capsys.readouterr()
        code = main(["report", str(out / "evodpo_summary.json"),
                     "--out", str(tmp_path / "rep")])
        assert code == 0
        assert (tmp_path / "rep" / "report.csv").is_file()


class TestWriteText:
    def test_creates_parents(self, tmp_path):
        target = tmp_path / "deep" / "nest" / "file.txt"
        write_text(target, "hello\n")
        assert target.read_text() == "hello\n"

    def test_unwritable_path_raises_config_error(self, tmp_path):
        blocker = tmp_path / "blocker"
        blocker.write_text("a file, not a directory")
        with pytest.raises(ConfigError, match="cannot write"):
            write_text(blocker / "child.txt", "x")
