"""Tests for the experiment harness and CLI.

A module-scoped miniature experiment (short sources, tiny grids, few
iterations) keeps the end-to-end checks fast; determinism checks compare
everything except the runtime column, which is wall-clock by nature.
"""

import csv
import json
from pathlib import Path

import numpy as np
import pytest
from numpy.testing import assert_allclose

from spotform.beamform import delay_and_sum
from spotform.cli import main
from spotform.evaluate import filtered_sdr, si_sdr
from spotform.harness import (
    ExperimentConfig,
    _run_task,
    derive_seed,
    emit_plots,
    enumerate_tasks,
    prepare_pipeline,
    run_experiment,
    run_single,
)
from spotform.roomsim import default_scene
from spotform.signal import read_wav
from spotform.synth import write_demo_sources


@pytest.fixture(scope="module")
def sources(tmp_path_factory):
    d = tmp_path_factory.mktemp("srcs")
    return tuple(str(p) for p in write_demo_sources(d, 3, 1.2, 16000, seed=0))


@pytest.fixture(scope="module")
def small_cfg(sources, tmp_path_factory):
    return ExperimentConfig(
        scene=default_scene(2, 0.0),
        source_paths=sources,
        methods=("bf-only", "nmf", "ntf"),
        k_grid=(4,),
        tau_grid=(0.05,),
        mu_grid=(10.0,),
        n_seeds=2,
        iterations=12,
        warmup_iterations=6,
        out_dir=str(tmp_path_factory.mktemp("out")),
    )


@pytest.fixture(scope="module")
def state(small_cfg):
    return prepare_pipeline(small_cfg)


@pytest.fixture(scope="module")
def experiment(small_cfg):
    return run_experiment(small_cfg)


class TestConfig:
    def test_json_roundtrip(self, small_cfg, tmp_path):
        path = tmp_path / "cfg.json"
        small_cfg.save(path)
        assert ExperimentConfig.load(path).to_dict() == small_cfg.to_dict()

    def test_source_count_must_match_scene(self, sources):
        with pytest.raises(ValueError, match="source"):
            ExperimentConfig(scene=default_scene(2, 0.0),
                             source_paths=sources[:2])

    def test_unknown_method_rejected(self, sources):
        with pytest.raises(ValueError, match="unknown method"):
            ExperimentConfig(scene=default_scene(2, 0.0),
                             source_paths=sources, methods=("pca",))

    def test_zero_seeds_rejected(self, sources):
        with pytest.raises(ValueError, match="n_seeds"):
            ExperimentConfig(scene=default_scene(2, 0.0),
                             source_paths=sources, n_seeds=0)

    def test_empty_grid_rejected_when_needed(self, sources):
        with pytest.raises(ValueError, match="tau grid"):
            ExperimentConfig(scene=default_scene(2, 0.0),
                             source_paths=sources, methods=("nmf",),
                             tau_grid=())
        with pytest.raises(ValueError, match="mu grid"):
            ExperimentConfig(scene=default_scene(2, 0.0),
                             source_paths=sources, methods=("ntf",),
                             mu_grid=())

    def test_warmup_beyond_iterations_rejected(self, sources):
        with pytest.raises(ValueError, match="warmup"):
            ExperimentConfig(scene=default_scene(2, 0.0),
                             source_paths=sources, iterations=5,
                             warmup_iterations=6)


class TestSeeding:
    def test_deterministic(self):
        assert derive_seed(0, "ntf", 30, 100.0, 3) == derive_seed(
            0, "ntf", 30, 100.0, 3)

    def test_keys_give_distinct_streams(self):
        seeds = {
            derive_seed(m, meth, k, h, i)
            for m in (0, 1)
            for meth in ("nmf", "ntf")
            for k in (10, 30)
            for h in (0.1, 100.0)
            for i in (0, 1)
        }
        assert len(seeds) == 32


class TestEnumerateTasks:
    def test_counts(self, small_cfg):
        tasks = enumerate_tasks(small_cfg)
        # bf-only: 2 arrays x 2 seeds; nmf: 1 K x 1 tau x 2; ntf: 1 x 1 x 2
        assert len(tasks) == 4 + 2 + 2
        assert sum(t[0] == "bf-only" for t in tasks) == 4

    def test_order_is_stable(self, small_cfg):
        assert enumerate_tasks(small_cfg) == enumerate_tasks(small_cfg)


class TestRunSingle:
    def test_ntf_emits_per_array_plus_fused(self, small_cfg, state):
        paths, row = run_single(small_cfg, "ntf", 4, 10.0, 0, state=state)
        assert row.status == "ok"
        assert [p.name for p in paths] == ["array0.wav", "array1.wav",
                                           "fused.wav"]
        assert all(p.exists() for p in paths)

    def test_repeat_invocation_is_bit_identical(self, small_cfg, state):
        paths1, _ = run_single(small_cfg, "ntf", 4, 10.0, 1, state=state)
        first = [p.read_bytes() for p in paths1]
        paths2, _ = run_single(small_cfg, "ntf", 4, 10.0, 1, state=state)
        assert [p.read_bytes() for p in paths2] == first

    def test_nmf_zero_threshold_reduces_to_fused_bf(self, small_cfg, state):
        # tau = 0 keeps every basis (V stays positive), so the mask is all
        # ones and the fused output is just delay-and-sum of the BF outputs
        row, _, fused = _run_task(small_cfg, state, ("nmf", 4, 0.0, 0),
                                  keep_waves=True)
        assert row.status == "ok"
        want = delay_and_sum(state.bf_waves)
        assert_allclose(fused.samples, want.samples, atol=1e-9)

    def test_bf_only_rows_are_seed_invariant(self, small_cfg, state):
        r0, _, _ = _run_task(small_cfg, state, ("bf-only", 0, 1.0, 0))
        r1, _, _ = _run_task(small_cfg, state, ("bf-only", 0, 1.0, 1))
        assert r0.sdr_filtered_db == r1.sdr_filtered_db
        assert r0.sdr_si_db == r1.sdr_si_db

    def test_bad_array_index_marks_row_failed(self, small_cfg, state):
        paths, row = run_single(small_cfg, "bf-only", 0, 9.0, 0, state=state)
        assert row.status == "failed"
        assert "array index" in row.reason
        assert np.isnan(row.sdr_filtered_db)
        assert paths == []


class TestRunExperiment:
    def test_row_count_matches_grid(self, small_cfg, experiment):
        rows, _ = experiment
        assert len(rows) == len(enumerate_tasks(small_cfg))
        assert all(r.status == "ok" for r in rows)

    def test_rows_sorted_by_key(self, experiment):
        rows, _ = experiment
        keys = [r.sort_key() for r in rows]
        assert keys == sorted(keys)

    def test_output_files_exist(self, small_cfg, experiment):
        out = Path(small_cfg.out_dir)
        assert (out / "results.csv").exists()
        assert (out / "summary.csv").exists()
        assert (out / "manifest.json").exists()
        assert (out / "plots" / "sdr_vs_k_A2_t60_0.csv").exists()

    def test_results_csv_schema(self, small_cfg, experiment):
        lines = (Path(small_cfg.out_dir) / "results.csv").read_text().splitlines()
        assert lines[0] == "# schema: spotform/results/v1"
        header = lines[1].split(",")
        assert header[:6] == ["method", "n_arrays", "t60", "k", "tau_or_mu",
                              "seed"]
        assert len(lines) == 2 + len(experiment[0])

    def test_deterministic_apart_from_runtime(self, small_cfg, tmp_path):
        from dataclasses import replace

        cfg2 = replace(small_cfg, out_dir=str(tmp_path / "rerun"))
        rows2, _ = run_experiment(cfg2)
        rows1, _ = run_experiment(replace(small_cfg,
                                          out_dir=str(tmp_path / "rerun2")))
        strip = lambda r: (r.method, r.k, r.tau_or_mu, r.seed,
                           r.sdr_filtered_db, r.sdr_si_db, r.status, r.reason)
        assert [strip(r) for r in rows1] == [strip(r) for r in rows2]

    def test_summary_matches_rows(self, small_cfg, experiment):
        rows, stats = experiment
        vals = [r.sdr_filtered_db for r in rows
                if (r.method, r.k, r.tau_or_mu) == ("ntf", 4, 10.0)]
        st = stats[("ntf", "filtered-sdr", 4, 10.0)]
        assert st.n == len(vals) == 2
        assert st.mean_db == pytest.approx(np.mean(vals), abs=1e-12)

    def test_plot_series_match_summary(self, small_cfg, experiment):
        _, stats = experiment
        path = Path(small_cfg.out_dir) / "plots" / "sdr_vs_k_A2_t60_0.csv"
        with open(path) as f:
            f.readline()  # schema comment
            for rec in csv.DictReader(f):
                key = (rec["method"], rec["variant"], int(rec["k"]),
                       float(rec["tau_or_mu"]))
                assert float(rec["mean_db"]) == pytest.approx(
                    stats[key].mean_db, abs=1e-6)
                assert int(rec["n"]) == stats[key].n

    def test_manifest_restates_config(self, small_cfg, experiment):
        doc = json.loads((Path(small_cfg.out_dir) / "manifest.json").read_text())
        assert doc["config"] == small_cfg.to_dict()
        assert doc["n_rows"] == len(experiment[0])
        assert doc["n_failed"] == 0

    def test_worker_pool_matches_inline(self, small_cfg, tmp_path):
        from dataclasses import replace

        cfg = replace(small_cfg, methods=("bf-only", "ntf"), n_seeds=1,
                      workers=2, out_dir=str(tmp_path / "pool"))
        rows_pool, _ = run_experiment(cfg)
        rows_inline, _ = run_experiment(
            replace(cfg, workers=1, out_dir=str(tmp_path / "inline")))
        strip = lambda r: (r.method, r.k, r.tau_or_mu, r.seed,
                           r.sdr_filtered_db, r.sdr_si_db)
        assert [strip(r) for r in rows_pool] == [strip(r) for r in rows_inline]

    def test_missing_combination_listed_in_plot_manifest(self, small_cfg,
                                                         experiment, tmp_path):
        from dataclasses import replace

        _, stats = experiment
        pruned = dict(stats)
        del pruned[("ntf", "filtered-sdr", 4, 10.0)]
        cfg = replace(small_cfg, out_dir=str(tmp_path))
        emit_plots(pruned, cfg)
        doc = json.loads((tmp_path / "plots" / "plot_manifest.json").read_text())
        assert ["ntf", "filtered-sdr", 4, 10.0] in doc["missing_combinations"]


class TestCli:
    def test_eval_prints_both_metrics(self, sources, capsys):
        assert main(["eval", sources[0], sources[0]]) == 0
        out = capsys.readouterr().out
        assert f"filtered_sdr_db={filtered_sdr(read_wav(sources[0]), read_wav(sources[0])):.4f}" in out
        assert "si_sdr_db=" in out

    def test_simulate_writes_rirs_and_observations(self, tmp_path, capsys):
        code = main(["simulate", "--arrays", "1", "--duration", "0.4",
                     "--out", str(tmp_path / "sim")])
        assert code == 0
        assert (tmp_path / "sim" / "rirs.npz").exists()
        assert (tmp_path / "sim" / "obs_a0m0.wav").exists()
        doc = json.loads((tmp_path / "sim" / "simulate_manifest.json").read_text())
        assert doc["n_arrays"] == 1 and doc["n_mics"] == 3

    def test_spotform_writes_estimates(self, sources, tmp_path, capsys):
        code = main(["spotform", sources[0], sources[1], "--method", "nmf",
                     "--k", "3", "--hyper", "0.01", "--iterations", "8",
                     "--out", str(tmp_path / "spot")])
        assert code == 0
        names = sorted(p.name for p in (tmp_path / "spot").iterdir())
        assert names == ["estimate_array0.wav", "estimate_array1.wav",
                         "estimate_fused.wav"]

    def test_run_from_config_file(self, small_cfg, tmp_path, capsys):
        from dataclasses import replace

        cfg = replace(small_cfg, methods=("bf-only",), n_seeds=1,
                      out_dir=str(tmp_path / "cli_out"))
        cfg_path = tmp_path / "exp.json"
        cfg.save(cfg_path)
        assert main(["run", "--config", str(cfg_path)]) == 0
        assert (tmp_path / "cli_out" / "results.csv").exists()

    def test_run_out_override(self, small_cfg, tmp_path, capsys):
        from dataclasses import replace

        cfg = replace(small_cfg, methods=("bf-only",), n_seeds=1)
        cfg_path = tmp_path / "exp.json"
        cfg.save(cfg_path)
        assert main(["run", "--config", str(cfg_path),
                     "--out", str(tmp_path / "elsewhere")]) == 0
        assert (tmp_path / "elsewhere" / "results.csv").exists()
