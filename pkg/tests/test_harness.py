import csv
import json
import math
from dataclasses import replace

import numpy as np
import pytest

from cdp_lab.core import Policy
from cdp_lab.environments.classes import qstar, realizable_class
from cdp_lab.environments.mdp import make_random_mdp
from cdp_lab.errors import ArgumentError, ConfigError
from cdp_lab.function_class import greedy_policy, product_class
from cdp_lab.harness import get_available_experiments, get_experiment
from cdp_lab.harness.config import load_config, parse_config
from cdp_lab.harness.experiments import (
    audit_saved_trace,
    export_rank_files,
    lowerbound_demo,
    run_experiment,
    tracker_details,
)
from cdp_lab.harness.output import (
    ITERATION_COLUMNS,
    emit_plot_data,
    load_summary,
    write_plot_data,
)
from cdp_lab.harness.templates import render_summary
from cdp_lab.oracle import BellmanOracle
from cdp_lab.serialization import save_class, save_environment


def olive_document(output, **changes) -> dict:
    document = {
        "kind": "olive",
        "seeds": [1, 2, 3],
        "output": str(output),
        "environment": {"generator": "mdp", "params": {"states": 3, "actions": 2, "horizon": 3}},
        "function_class": {"kind": "realizable", "size": 12},
        "algorithm": {"epsilon": 0.05, "delta": 0.1, "rank": 3, "zeta": 3.5, "mode": "population"},
    }
    document.update(changes)
    return document


def read_bytes(directory) -> dict:
    return {
        path.relative_to(directory).as_posix(): path.read_bytes()
        for path in sorted(directory.rglob("*"))
        if path.is_file()
    }


class TestConfig:
    def test_parses(self, tmp_path):
        config = parse_config(olive_document(tmp_path))
        assert config.kind == "olive"
        assert config.algorithm.rank == 3
        assert config.function_class.size == 12
        assert "output" not in config.echo()
        assert "n_jobs" not in config.echo()

    @pytest.mark.parametrize(
        "changes,path",
        [
            ({"kind": "search"}, "kind"),
            ({"seeds": []}, "seeds"),
            ({"seeds": [1, "two"]}, "seeds[1]"),
            ({"colour": "red"}, "colour"),
            ({"environment": {"generator": "maze"}}, "environment.generator"),
            ({"environment": {"generator": "mdp", "seed": 3}}, "environment.seed"),
            ({"environment": {"generator": "mdp", "sampling_only": "yes"}}, "environment.sampling_only"),
            ({"environment": {"file": "absent.json"}}, "environment.file"),
            ({"function_class": {"kind": "neural"}}, "function_class.kind"),
            ({"function_class": {"kind": "file"}}, "function_class.file"),
            ({"function_class": {"size": 0}}, "function_class.size"),
            ({"algorithm": {"epsilon": 1.5, "delta": 0.1}}, "algorithm.epsilon"),
            ({"algorithm": {"epsilon": 0.1, "delta": 0.1, "rank": "3"}}, "algorithm.rank"),
            ({"algorithm": {"epsilon": 0.1}}, "algorithm.delta"),
            ({"algorithm": {"epsilon": 0.1, "delta": 0.1, "speed": 2}}, "algorithm.speed"),
            ({"limits": {"max_states": "many"}}, "limits.max_states"),
            ({"n_jobs": 0}, "n_jobs"),
        ],
    )
    def test_errors_name_the_field(self, tmp_path, changes, path):
        with pytest.raises(ConfigError) as error:
            parse_config(olive_document(tmp_path, **changes), base_dir=tmp_path)
        assert error.value.path == path

    def test_trace_audit_only_for_elimination_runs(self, tmp_path):
        document = olive_document(tmp_path, kind="rank", trace_audit=True)
        with pytest.raises(ConfigError) as error:
            parse_config(document)
        assert error.value.path == "trace_audit"

    def test_rank_needs_an_environment(self):
        with pytest.raises(ConfigError) as error:
            parse_config({"kind": "rank", "seeds": [0]})
        assert error.value.path == "environment"

    def test_files_resolve_against_the_config(self, tmp_path):
        env = make_random_mdp(3, 2, 2, seed=0)
        save_environment(env, tmp_path / "env.json")
        save_class(realizable_class(env, 4, 0.3, 0), tmp_path / "class.json")
        document = olive_document(
            "out",
            environment={"file": "env.json"},
            function_class={"kind": "file", "file": "class.json"},
        )
        (tmp_path / "config.json").write_text(json.dumps(document))

        config = load_config(tmp_path / "config.json", kind="oliver", output=str(tmp_path / "o"))
        assert config.kind == "oliver"
        assert config.output == str(tmp_path / "o")
        assert config.environment.file == str((tmp_path / "env.json").resolve())

    def test_unreadable_config(self, tmp_path):
        (tmp_path / "bad.json").write_text("{not json")
        with pytest.raises(ConfigError):
            load_config(tmp_path / "bad.json")
        with pytest.raises(ConfigError):
            load_config(tmp_path / "missing.json")

    def test_algorithm_and_file_overrides(self, tmp_path):
        env = make_random_mdp(3, 2, 2, seed=0)
        save_environment(env, tmp_path / "env.json")
        save_class(realizable_class(env, 4, 0.3, 0), tmp_path / "class.json")
        (tmp_path / "config.json").write_text(json.dumps(olive_document("out")))

        config = load_config(
            tmp_path / "config.json",
            algorithm={"epsilon": 0.2, "theta_m": 0.01, "mode": "sampled", "n": None},
            environment_file=tmp_path / "env.json",
            class_file=tmp_path / "class.json",
        )
        assert config.algorithm.epsilon == 0.2
        assert config.algorithm.theta_m == 0.01
        assert config.algorithm.mode == "sampled"
        assert config.algorithm.rank == 3
        assert config.environment.generator is None
        assert config.environment.file == str((tmp_path / "env.json").resolve())
        assert config.function_class.kind == "file"

    def test_config_from_overrides_alone(self, tmp_path):
        env = make_random_mdp(3, 2, 2, seed=0)
        save_environment(env, tmp_path / "env.json")
        config = load_config(
            None,
            kind="olive",
            algorithm={"epsilon": 0.1, "delta": 0.1},
            environment_file=tmp_path / "env.json",
            seeds=[4],
        )
        assert config.seeds == [4]
        assert config.algorithm.rank == 1
        assert config.function_class.kind == "realizable"

        with pytest.raises(ConfigError) as error:
            load_config(None, kind="olive", environment_file=tmp_path / "env.json", seeds=[4])
        assert error.value.path == "algorithm"

    def test_override_needs_an_object_block(self, tmp_path):
        (tmp_path / "config.json").write_text(json.dumps(olive_document("out", algorithm=[1])))
        with pytest.raises(ConfigError) as error:
            load_config(tmp_path / "config.json", algorithm={"epsilon": 0.2})
        assert error.value.path == "algorithm"


class TestRegistry:
    def test_kinds(self):
        assert set(get_available_experiments()) == {
            "olive",
            "oliver",
            "guessm",
            "rank",
            "geometry",
            "lowerbound-demo",
        }

    def test_unknown_kind(self):
        with pytest.raises(KeyError):
            get_experiment("search")


class TestRuns:
    def test_olive_population(self, tmp_path):
        config = parse_config(olive_document(tmp_path / "run"))
        summary = run_experiment(config)

        assert summary.all_succeeded
        for outcome in summary.outcomes:
            assert outcome.value_source == "exact"
            assert outcome.metrics["suboptimality"] <= 0.05 + 1e-12
            assert outcome.metrics["episodes"] == 0
            for level, count in outcome.details["level_counts"].items():
                assert count <= outcome.details["level_limit"]

        assert (tmp_path / "run" / "summary.json").exists()
        assert (tmp_path / "run" / "summary.md").exists()
        with open(tmp_path / "run" / "seeds" / "seed_1_iterations.csv", newline="") as f:
            rows = list(csv.DictReader(f))
        assert tuple(rows[0].keys()) == ITERATION_COLUMNS
        assert rows[-1]["h_t"] == ""

    def test_sampling_only_values_are_estimated(self, tmp_path):
        document = olive_document(
            tmp_path,
            seeds=[4],
            environment={
                "generator": "mdp",
                "params": {"states": 2, "actions": 2, "horizon": 2},
                "sampling_only": True,
            },
            function_class={"kind": "realizable", "size": 4},
            algorithm={
                "epsilon": 0.2,
                "delta": 0.1,
                "rank": 2,
                "zeta": 2.9,
                "phi": 0.03,
                "n_est": 500,
                "n_eval": 1000,
                "n": 5000,
            },
        )
        summary = run_experiment(parse_config(document), write=False)
        outcome = summary.outcomes[0]
        assert outcome.metrics["episodes"] > 0
        if outcome.success:
            assert outcome.value_source == "monte-carlo"
            assert "suboptimality" not in outcome.metrics

    def test_oliver_with_trace_audit(self, tmp_path):
        document = olive_document(tmp_path, kind="oliver", trace_audit=True)
        document["algorithm"]["theta"] = 0.0
        summary = run_experiment(parse_config(document), write=False)
        assert summary.all_succeeded
        for outcome in summary.outcomes:
            audit = outcome.details["trace_audit"]
            assert audit["passed"]
            for level in audit["levels"].values():
                assert level["within_limit"]
                assert not level["flagged"]

    def test_guessm_on_low_rank(self, tmp_path):
        document = olive_document(
            tmp_path,
            kind="guessm",
            environment={
                "generator": "lowrank",
                "params": {"states": 6, "actions": 2, "horizon": 3, "rank": 3},
            },
        )
        summary = run_experiment(parse_config(document), write=False)
        assert summary.all_succeeded
        for outcome in summary.outcomes:
            assert outcome.metrics["env_rank"] == 3
            assert outcome.metrics["guessed_rank"] <= 6

    def test_rank_of_low_rank_mdps(self, tmp_path):
        document = {
            "kind": "rank",
            "seeds": [0, 1, 2],
            "output": str(tmp_path),
            "environment": {
                "generator": "lowrank",
                "params": {"states": 6, "actions": 2, "horizon": 3, "rank": 2},
            },
        }
        summary = run_experiment(parse_config(document))
        assert summary.all_succeeded
        assert summary.max_rank <= 2
        for outcome in summary.outcomes:
            assert outcome.metrics["factorization_dimension"] == 2
            assert outcome.metrics["max_residual"] <= 1e-8
            assert outcome.metrics["max_norm_product"] <= 2 * math.sqrt(2) + 1e-12

    def test_rank_of_reactive_pomdps_with_random_classes(self, tmp_path):
        document = {
            "kind": "rank",
            "seeds": [0, 1],
            "output": str(tmp_path),
            "environment": {
                "generator": "pomdp",
                "params": {"states": 3, "observations": 12, "actions": 2, "horizon": 3},
            },
            "function_class": {"kind": "random", "size": 16},
        }
        summary = run_experiment(parse_config(document), write=False)
        assert summary.all_succeeded
        assert summary.max_rank <= 3

    def test_realizable_class_on_ambiguous_pomdp_fails_the_seed(self, tmp_path):
        document = {
            "kind": "rank",
            "seeds": [0],
            "output": str(tmp_path),
            "environment": {"generator": "pomdp", "params": {"states": 3, "observations": 12}},
        }
        summary = run_experiment(parse_config(document), write=False)
        assert not summary.all_succeeded
        assert "hidden state" in summary.outcomes[0].failure

    def test_product_class_reports_its_log_size(self, tmp_path):
        env = make_random_mdp(2, 2, 2, seed=0)
        optimal = qstar(env)
        policies = [greedy_policy(optimal), Policy.constant(env.context_counts, 1)]
        values = [
            tuple(table.max(axis=1) for table in optimal.values),
            tuple(np.zeros(count) for count in env.context_counts),
            tuple(np.full(count, 0.5) for count in env.context_counts),
        ]
        save_environment(env, tmp_path / "env.json")
        save_class(product_class(policies, values, env.action_count), tmp_path / "pairs.json")
        document = {
            "kind": "rank",
            "seeds": [0],
            "output": str(tmp_path / "out"),
            "environment": {"file": "env.json"},
            "function_class": {"kind": "file", "file": "pairs.json"},
        }
        summary = run_experiment(parse_config(document, base_dir=tmp_path), write=False)
        metrics = summary.outcomes[0].metrics
        assert metrics["class_size"] == 6
        assert metrics["log_class_size"] == pytest.approx(math.log(2) + math.log(3))
        rows = emit_plot_data([summary], "seed", "log_class_size")
        assert rows[0]["y"] == pytest.approx(math.log(6))

    def test_geometry(self, tmp_path):
        config = parse_config({"kind": "geometry", "seeds": [0], "output": str(tmp_path)})
        summary = run_experiment(config)
        outcome = summary.outcomes[0]
        assert outcome.success
        assert outcome.metrics["containment_violations"] == 0
        assert outcome.metrics["max_third_ratio"] < 0.6
        assert outcome.metrics["grid_points"] == 63 * 3

    def test_lowerbound_demo(self, tmp_path):
        config = parse_config({"kind": "geometry", "seeds": [0], "output": str(tmp_path)})
        summary = lowerbound_demo(config)
        assert summary.kind == "lowerbound-demo"
        outcome = summary.outcomes[0]
        assert outcome.success
        assert outcome.metrics["tree_class_size"] == 8
        assert outcome.metrics["chain_optimal_value"] == pytest.approx(
            outcome.metrics["chain_closed_form_value"], abs=1e-10
        )
        assert outcome.details["tree"]["baseline_episodes"] >= 64


class TestSavedTraceAudit:
    def run_with_factorizations(self, tmp_path, **changes):
        document = olive_document(tmp_path / "run", **changes)
        config = parse_config(document)
        summary = run_experiment(config)
        export_rank_files(config, tmp_path / "rank")
        return summary

    def paths(self, tmp_path, seed: int):
        return (
            tmp_path / "run" / "seeds" / f"seed_{seed}.json",
            [tmp_path / "rank" / "seeds" / f"seed_{seed}_factorizations.json"],
        )

    def test_replay_matches_the_in_run_audit(self, tmp_path):
        summary = self.run_with_factorizations(tmp_path, kind="oliver", trace_audit=True)
        for outcome in summary.outcomes:
            report = audit_saved_trace(*self.paths(tmp_path, outcome.seed))
            assert report.passed
            assert tracker_details(report) == outcome.details["trace_audit"]

    def test_replay_without_an_in_run_audit(self, tmp_path):
        summary = self.run_with_factorizations(tmp_path)
        outcome = summary.outcomes[0]
        report = audit_saved_trace(*self.paths(tmp_path, outcome.seed))
        picked = {r.level for r in outcome.records if not r.terminated}
        assert set(report.levels) == picked
        assert sum(audit.cut_count for audit in report.levels.values()) == len(
            [r for r in outcome.records if not r.terminated]
        )

    def test_factorizations_of_another_seed_are_rejected(self, tmp_path):
        self.run_with_factorizations(tmp_path)
        trace, _ = self.paths(tmp_path, 1)
        _, other = self.paths(tmp_path, 2)
        with pytest.raises(ArgumentError, match="saved for environment"):
            audit_saved_trace(trace, other)

    def test_missing_level_is_named(self, tmp_path):
        summary = self.run_with_factorizations(tmp_path)
        outcome = next(o for o in summary.outcomes if any(not r.terminated for r in o.records))
        trace, factorization_files = self.paths(tmp_path, outcome.seed)
        document = json.loads(factorization_files[0].read_text())
        picked = min(r.level for r in outcome.records if not r.terminated)
        document["levels"] = [entry for entry in document["levels"] if entry["level"] != picked]
        factorization_files[0].write_text(json.dumps(document))
        with pytest.raises(ArgumentError, match="No factorization"):
            audit_saved_trace(trace, factorization_files)

    def test_rank_sweeps_are_not_traces(self, tmp_path):
        document = olive_document(tmp_path / "rank", kind="rank", seeds=[1])
        config = parse_config(document)
        run_experiment(config)
        files = export_rank_files(config, tmp_path / "rank")
        with pytest.raises(ArgumentError, match="not an olive or oliver trace"):
            audit_saved_trace(tmp_path / "rank" / "seeds" / "seed_1.json", files)

    def test_error_matrices_as_csv(self, tmp_path):
        env = make_random_mdp(3, 2, 2, seed=0)
        fclass = realizable_class(env, 5, 0.3, 0)
        save_environment(env, tmp_path / "env.json")
        save_class(fclass, tmp_path / "class.json")
        document = {
            "kind": "rank",
            "seeds": [0],
            "environment": {"file": "env.json"},
            "function_class": {"kind": "file", "file": "class.json"},
        }
        config = parse_config(document, base_dir=tmp_path)
        files = export_rank_files(config, tmp_path / "out", matrices_csv=True)
        assert [path.name for path in files] == [
            "seed_0_factorizations.json",
            "seed_0_errors_h1.csv",
            "seed_0_errors_h2.csv",
        ]

        oracle = BellmanOracle(env, fclass)
        for h in (1, 2):
            with open(tmp_path / "out" / "seeds" / f"seed_0_errors_h{h}.csv") as f:
                rows = list(csv.DictReader(f))
            assert len(rows) == 5
            assert list(rows[0]) == ["roll_in", "f0", "f1", "f2", "f3", "f4"]
            table = np.array([[float(row[f"f{j}"]) for j in range(5)] for row in rows])
            np.testing.assert_array_equal(table, oracle.error_matrix(h).matrix)


class TestReproducibility:
    def test_reruns_are_byte_identical(self, tmp_path):
        first = parse_config(olive_document(tmp_path / "a"))
        second = replace(first, output=str(tmp_path / "b"))
        run_experiment(first)
        run_experiment(second)
        assert read_bytes(tmp_path / "a") == read_bytes(tmp_path / "b")

    def test_parallel_matches_sequential(self, tmp_path):
        document = olive_document(
            tmp_path,
            algorithm={
                "epsilon": 0.2,
                "delta": 0.1,
                "rank": 3,
                "zeta": 3.5,
                "phi": 0.03,
                "n_est": 200,
                "n_eval": 300,
                "n": 2000,
                "max_iterations": 30,
            },
        )
        sequential = parse_config({**document, "output": str(tmp_path / "seq")})
        parallel = parse_config({**document, "output": str(tmp_path / "par"), "n_jobs": 2})
        run_experiment(sequential)
        run_experiment(parallel)
        assert read_bytes(tmp_path / "seq") == read_bytes(tmp_path / "par")


class TestPlotData:
    def test_metric_rows(self, tmp_path):
        document = {
            "kind": "rank",
            "seeds": [0, 1],
            "output": str(tmp_path / "rank"),
            "environment": {"generator": "mdp", "params": {"states": 3}},
        }
        run_experiment(parse_config(document))
        summary = load_summary(tmp_path / "rank")

        rows = emit_plot_data([summary], "seed", "rank")
        assert [row["seed"] for row in rows] == [0, 1]
        assert all(row["series"] == "rank" for row in rows)

        labelled = emit_plot_data([summary, summary], "seed", "rank")
        assert {row["series"] for row in labelled} == {"rank[0]", "rank[1]"}

        path = write_plot_data(tmp_path / "plot.csv", rows)
        assert path.read_text().splitlines()[0] == "x,y,series,seed"

    def test_grid_rows(self, tmp_path):
        config = parse_config(
            {"kind": "geometry", "seeds": [0], "output": str(tmp_path), "geometry": {"dimensions": [2, 3]}}
        )
        summary = run_experiment(config, write=False)
        rows = emit_plot_data([summary], "dimension", "volume_ratio", series="grid")
        assert len(rows) == 6
        assert {row["series"] for row in rows} == {"grid"}

    def test_bad_requests(self, tmp_path):
        with pytest.raises(ArgumentError):
            emit_plot_data([], "seed", "rank")
        config = parse_config({"kind": "geometry", "seeds": [0], "output": str(tmp_path)})
        summary = run_experiment(config, write=False)
        with pytest.raises(ArgumentError):
            emit_plot_data([summary], "seed", "colour")

    def test_markdown_report(self, tmp_path):
        summary = run_experiment(parse_config(olive_document(tmp_path)), write=False)
        report = render_summary(summary)
        assert report.startswith("# olive run")
        assert "3 of 3 seeds succeeded" in report
        assert "## Aggregates" in report
