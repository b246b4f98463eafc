"""Experiment orchestration: pipeline wiring, sweeps, and CSV emission.

One experiment = one scene, one set of dry sources, and a grid of
(method, K, threshold-or-weight) combinations, each repeated over several
seeds.  The pipeline per run is simulate -> beamform -> factorize -> mask ->
reconstruct -> fuse -> score; the simulation and beamforming stages are
shared across the sweep because only the factorization stage is seeded.

Seeding: each run draws its stream seed as the first 8 bytes of
sha256("<master>|<method>|<K>|<hyper>|<seed index>"), so any single row can
be reproduced in isolation.  Output CSVs are byte-deterministic given the
config, except the runtime_ms column and rows failed by wall-clock timeout.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
import warnings
from concurrent.futures import ProcessPoolExecutor, TimeoutError as FutTimeout
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from spotform.beamform import BfOutputTensor, delay_and_sum, mvdr, oracle_quantities
from spotform.evaluate import SdrReport, AggregateStats, aggregate, filtered_sdr, si_sdr
from spotform.nmf import build_concat, fit_nmf, nmf_wiener, threshold_mask
from spotform.ntf import (
    RegularizationSchedule,
    build_prop_tensor,
    fit_ntf,
    ntf_wiener,
)
from spotform.roomsim import Scene, render_observations, simulate_rirs
from spotform.signal import (
    ComplexSpectrogram,
    StftConfig,
    Waveform,
    istft,
    normalize_energy,
    read_wav,
    resample,
    write_wav,
)

METHODS = ("bf-only", "nmf", "ntf")
RESULTS_SCHEMA = "spotform/results/v1"
SUMMARY_SCHEMA = "spotform/summary/v1"
PLOT_SCHEMA = "spotform/plot/v1"

RESULT_FIELDS = (
    "method", "n_arrays", "t60", "k", "tau_or_mu", "seed",
    "sdr_filtered_db", "sdr_si_db", "runtime_ms", "status", "reason",
)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a sweep needs; serializable to/from JSON."""

    scene: Scene
    source_paths: tuple[str, ...]
    stft: StftConfig = StftConfig()
    methods: tuple[str, ...] = METHODS
    k_grid: tuple[int, ...] = (10, 20, 30, 40, 50)
    tau_grid: tuple[float, ...] = tuple(np.geomspace(1e-4, 1.0, 12))
    mu_grid: tuple[float, ...] = (1.0, 10.0, 100.0, 1000.0)
    n_seeds: int = 10
    iterations: int = 100
    warmup_iterations: int = 50
    master_seed: int = 0
    out_dir: str = "results"
    workers: int = 1
    timeout_s: float = 600.0
    filter_taps: int = 512

    def __post_init__(self):
        if len(self.source_paths) != self.scene.n_sources:
            raise ValueError(
                f"scene has {self.scene.n_sources} sources, config lists "
                f"{len(self.source_paths)} paths"
            )
        if not self.methods:
            raise ValueError("no methods selected")
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}")
        if self.n_seeds < 1:
            raise ValueError("n_seeds must be >= 1")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0 <= self.warmup_iterations <= self.iterations:
            raise ValueError("warmup must lie within the iteration count")
        needs_k = {"nmf", "ntf"} & set(self.methods)
        if needs_k and not self.k_grid:
            raise ValueError("K grid is empty but nmf/ntf selected")
        if "nmf" in self.methods and not self.tau_grid:
            raise ValueError("tau grid is empty but nmf selected")
        if "ntf" in self.methods and not self.mu_grid:
            raise ValueError("mu grid is empty but ntf selected")

    def to_dict(self) -> dict:
        return {
            "scene": self.scene.to_dict(),
            "source_paths": list(self.source_paths),
            "stft": {
                "window_length_ms": self.stft.window_length_ms,
                "hop_ms": self.stft.hop_ms,
                "sample_rate": self.stft.sample_rate,
                "window": self.stft.window,
            },
            "methods": list(self.methods),
            "k_grid": list(self.k_grid),
            "tau_grid": list(self.tau_grid),
            "mu_grid": list(self.mu_grid),
            "n_seeds": self.n_seeds,
            "iterations": self.iterations,
            "warmup_iterations": self.warmup_iterations,
            "master_seed": self.master_seed,
            "out_dir": self.out_dir,
            "workers": self.workers,
            "timeout_s": self.timeout_s,
            "filter_taps": self.filter_taps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        d["scene"] = Scene.from_dict(d["scene"])
        d["stft"] = StftConfig(**d["stft"])
        for key in ("source_paths", "methods", "k_grid", "tau_grid", "mu_grid"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class ResultRow:
    """One scored run; failed rows carry a reason and NaN scores."""

    method: str
    n_arrays: int
    t60: float
    k: int
    tau_or_mu: float
    seed: int
    sdr_filtered_db: float
    sdr_si_db: float
    runtime_ms: float
    status: str = "ok"
    reason: str = ""

    def sort_key(self):
        return (self.method, self.k, self.tau_or_mu, self.seed)


@dataclass
class PipelineState:
    """Seed-independent stages shared by every run of a sweep."""

    rirs: object
    bf_tensor: BfOutputTensor
    bf_waves: list[Waveform]
    references: list[Waveform]


def derive_seed(master_seed: int, method: str, k: int, hyper: float,
                seed_index: int) -> int:
    """Stable per-run stream seed; documented in the run manifest."""
    key = f"{master_seed}|{method}|{k}|{hyper!r}|{seed_index}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little")


def load_sources(cfg: ExperimentConfig) -> list[Waveform]:
    """Dry sources, resampled to the scene rate and set to unit energy."""
    rate = cfg.scene.sample_rate
    out = []
    for p in cfg.source_paths:
        wav = read_wav(p)
        if wav.sample_rate != rate:
            wav = resample(wav, rate)
        out.append(wav)
    return normalize_energy(out)


def prepare_pipeline(cfg: ExperimentConfig) -> PipelineState:
    """Simulate, render, and beamform once for the whole sweep."""
    sources = load_sources(cfg)
    rirs = simulate_rirs(cfg.scene)
    obs = render_observations(sources, rirs)
    d, R = oracle_quantities(rirs, cfg.scene, cfg.stft)
    Y = mvdr(obs, d, R)
    bf_waves = [
        istft(ComplexSpectrogram(Y.values[:, :, a], cfg.stft), cfg.stft,
              obs.n_samples)
        for a in range(cfg.scene.n_arrays)
    ]
    tgt = cfg.scene.target_index
    references = [
        Waveform(obs.images[tgt, a, 0], obs.sample_rate)
        for a in range(cfg.scene.n_arrays)
    ]
    return PipelineState(rirs, Y, bf_waves, references)


def _reconstruct(cfg: ExperimentConfig, state: PipelineState,
                 specs: list[ComplexSpectrogram]) -> tuple[list[Waveform], Waveform]:
    n = state.references[0].samples.shape[0]
    waves = [istft(s, cfg.stft, n) for s in specs]
    fused = delay_and_sum(waves)
    return waves, fused


def _execute(cfg: ExperimentConfig, state: PipelineState, method: str,
             k: int, hyper: float, seed_index: int
             ) -> tuple[list[Waveform], Waveform, Waveform]:
    """Run one method; returns (per-array estimates, fused output, reference)."""
    Y = state.bf_tensor
    A = cfg.scene.n_arrays
    J = Y.values.shape[1]
    stream_seed = derive_seed(cfg.master_seed, method, k, hyper, seed_index)
    if method == "bf-only":
        array = int(hyper)
        if not 0 <= array < A:
            raise ValueError(f"bf-only hyper must be an array index, got {hyper}")
        wave = state.bf_waves[array]
        return [wave], wave, state.references[array]
    if method == "nmf":
        model = fit_nmf(build_concat(Y), k, cfg.iterations, stream_seed)
        mask = threshold_mask(model, A, J, hyper)
        specs = nmf_wiener(model, mask, Y)
        waves, fused = _reconstruct(cfg, state, specs)
        return waves, fused, state.references[0]
    if method == "ntf":
        schedule = RegularizationSchedule(hyper, cfg.warmup_iterations,
                                          cfg.iterations)
        model, assignment, _ = fit_ntf(build_prop_tensor(Y), k, schedule,
                                       stream_seed)
        specs = ntf_wiener(model, assignment, Y)
        waves, fused = _reconstruct(cfg, state, specs)
        return waves, fused, state.references[0]
    raise ValueError(f"unknown method {method!r}")


def _score(cfg: ExperimentConfig, fused: Waveform,
           reference: Waveform) -> tuple[float, float]:
    return (filtered_sdr(fused, reference, cfg.filter_taps),
            si_sdr(fused, reference))


def _run_task(cfg: ExperimentConfig, state: PipelineState,
              task: tuple[str, int, float, int],
              keep_waves: bool = False
              ) -> tuple[ResultRow, list[Waveform], Waveform | None]:
    method, k, hyper, seed_index = task
    waves: list[Waveform] = []
    fused = None
    start = time.perf_counter()
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            waves, fused, reference = _execute(cfg, state, method, k, hyper,
                                               seed_index)
            f_db, s_db = _score(cfg, fused, reference)
        status, reason = "ok", ""
    except Exception as exc:  # noqa: BLE001 - row-level fault isolation
        f_db = s_db = float("nan")
        status, reason = "failed", f"{type(exc).__name__}: {exc}"
    runtime_ms = (time.perf_counter() - start) * 1000.0
    row = ResultRow(method, cfg.scene.n_arrays, cfg.scene.t60, k, hyper,
                    seed_index, f_db, s_db, runtime_ms, status, reason)
    if not keep_waves:
        waves, fused = [], None
    return row, waves, fused


def run_single(cfg: ExperimentConfig, method: str, k: int, hyper: float,
               seed_index: int, state: PipelineState | None = None,
               ) -> tuple[list[Path], ResultRow]:
    """Run one combination and write its estimate WAVs.

    Emits one WAV per array plus the fused output, named after the run, and
    returns their paths with the scored row.
    """
    if state is None:
        state = prepare_pipeline(cfg)
    row, waves, fused = _run_task(cfg, state, (method, k, hyper, seed_index),
                                  keep_waves=True)
    paths: list[Path] = []
    if row.status == "ok":
        tag = f"{method}_K{k}_h{hyper:g}_s{seed_index}"
        d = Path(cfg.out_dir) / "wavs" / tag
        d.mkdir(parents=True, exist_ok=True)
        for a, w in enumerate(waves):
            paths.append(d / f"array{a}.wav")
            write_wav(paths[-1], w)
        paths.append(d / "fused.wav")
        write_wav(paths[-1], fused)
    return paths, row


def enumerate_tasks(cfg: ExperimentConfig) -> list[tuple[str, int, float, int]]:
    """Sweep grid in deterministic order; bf-only sweeps the array index."""
    tasks = []
    for method in cfg.methods:
        if method == "bf-only":
            combos = [(0, float(a)) for a in range(cfg.scene.n_arrays)]
        elif method == "nmf":
            combos = [(k, float(t)) for k in cfg.k_grid for t in cfg.tau_grid]
        else:
            combos = [(k, float(m)) for k in cfg.k_grid for m in cfg.mu_grid]
        for k, hyper in combos:
            for s in range(cfg.n_seeds):
                tasks.append((method, k, hyper, s))
    return tasks


_WORKER_CFG: ExperimentConfig | None = None
_WORKER_STATE: PipelineState | None = None


def _init_worker(cfg: ExperimentConfig, state: PipelineState) -> None:
    global _WORKER_CFG, _WORKER_STATE
    _WORKER_CFG = cfg
    _WORKER_STATE = state


def _worker_run(task: tuple[str, int, float, int]) -> ResultRow:
    return _run_task(_WORKER_CFG, _WORKER_STATE, task)[0]


def run_experiment(cfg: ExperimentConfig
                   ) -> tuple[list[ResultRow], dict[tuple, AggregateStats]]:
    """Run the full sweep; writes results.csv, summary.csv, and plot data.

    Single-worker sweeps run inline (no preemption, so timeout_s is not
    enforced); multi-worker sweeps run in a process pool where a run
    exceeding timeout_s is marked failed and the sweep continues.
    """
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    state = prepare_pipeline(cfg)
    tasks = enumerate_tasks(cfg)
    if cfg.workers <= 1:
        rows = [_run_task(cfg, state, t)[0] for t in tasks]
    else:
        rows = []
        with ProcessPoolExecutor(max_workers=cfg.workers,
                                 initializer=_init_worker,
                                 initargs=(cfg, state)) as pool:
            futures = [pool.submit(_worker_run, t) for t in tasks]
            for t, fut in zip(tasks, futures):
                try:
                    rows.append(fut.result(timeout=cfg.timeout_s))
                except FutTimeout:
                    method, k, hyper, s = t
                    rows.append(ResultRow(
                        method, cfg.scene.n_arrays, cfg.scene.t60, k, hyper,
                        s, float("nan"), float("nan"),
                        cfg.timeout_s * 1000.0, "failed", "timeout"))
    rows.sort(key=ResultRow.sort_key)
    stats = _aggregate_rows(rows)
    write_results_csv(out / "results.csv", rows)
    write_summary_csv(out / "summary.csv", stats)
    emit_plots(stats, cfg)
    _write_manifest(out / "manifest.json", cfg, rows)
    return rows, stats


def _aggregate_rows(rows: list[ResultRow]) -> dict[tuple, AggregateStats]:
    reports = []
    for r in rows:
        if r.status != "ok":
            continue
        reports.append(SdrReport(r.method, "filtered-sdr", r.k, r.tau_or_mu,
                                 r.seed, r.sdr_filtered_db))
        reports.append(SdrReport(r.method, "si-sdr", r.k, r.tau_or_mu,
                                 r.seed, r.sdr_si_db))
    return aggregate(reports) if reports else {}


def _fmt(x: float) -> str:
    return "nan" if np.isnan(x) else f"{x:.6f}"


def write_results_csv(path, rows: list[ResultRow]) -> None:
    with open(path, "w", newline="") as f:
        f.write(f"# schema: {RESULTS_SCHEMA}\n")
        w = csv.writer(f)
        w.writerow(RESULT_FIELDS)
        for r in rows:
            w.writerow([
                r.method, r.n_arrays, f"{r.t60:g}", r.k, f"{r.tau_or_mu:.9g}",
                r.seed, _fmt(r.sdr_filtered_db), _fmt(r.sdr_si_db),
                f"{r.runtime_ms:.3f}", r.status, r.reason,
            ])


def write_summary_csv(path, stats: dict[tuple, AggregateStats]) -> None:
    with open(path, "w", newline="") as f:
        f.write(f"# schema: {SUMMARY_SCHEMA}\n")
        w = csv.writer(f)
        w.writerow(["method", "variant", "k", "tau_or_mu", "n",
                    "mean_db", "std_db"])
        for key in sorted(stats):
            method, variant, k, hyper = key
            st = stats[key]
            w.writerow([method, variant, k, f"{hyper:.9g}", st.n,
                        f"{st.mean_db:.6f}", f"{st.std_db:.6f}"])


def emit_plots(stats: dict[tuple, AggregateStats], cfg: ExperimentConfig
               ) -> list[Path]:
    """SDR-vs-K series per (method, variant, hyper), one file per condition.

    Combinations without an aggregate (every seed failed) are left out of the
    series and listed in the plot manifest instead.
    """
    plot_dir = Path(cfg.out_dir) / "plots"
    plot_dir.mkdir(parents=True, exist_ok=True)
    A, t60 = cfg.scene.n_arrays, cfg.scene.t60
    path = plot_dir / f"sdr_vs_k_A{A}_t60_{t60:g}.csv"
    missing = []
    with open(path, "w", newline="") as f:
        f.write(f"# schema: {PLOT_SCHEMA}\n")
        w = csv.writer(f)
        w.writerow(["method", "variant", "tau_or_mu", "k", "mean_db",
                    "std_db", "n"])
        for method in cfg.methods:
            if method == "bf-only":
                continue
            grid = cfg.tau_grid if method == "nmf" else cfg.mu_grid
            for variant in ("filtered-sdr", "si-sdr"):
                for hyper in grid:
                    for k in cfg.k_grid:
                        key = (method, variant, k, float(hyper))
                        if key not in stats:
                            missing.append(list(key))
                            continue
                        st = stats[key]
                        w.writerow([method, variant, f"{hyper:.9g}", k,
                                    f"{st.mean_db:.6f}", f"{st.std_db:.6f}",
                                    st.n])
    manifest = plot_dir / "plot_manifest.json"
    manifest.write_text(json.dumps(
        {"files": [path.name], "missing_combinations": missing}, indent=1))
    return [path, manifest]


def _write_manifest(path, cfg: ExperimentConfig, rows: list[ResultRow]) -> None:
    failed = [
        {"method": r.method, "k": r.k, "tau_or_mu": r.tau_or_mu,
         "seed": r.seed, "reason": r.reason}
        for r in rows if r.status != "ok"
    ]
    doc = {
        "config": cfg.to_dict(),
        "schemas": {"results": RESULTS_SCHEMA, "summary": SUMMARY_SCHEMA,
                    "plots": PLOT_SCHEMA},
        "seed_scheme": "first 8 bytes of sha256('<master>|<method>|<K>|"
                       "<hyper>|<seed index>'), little-endian",
        "n_rows": len(rows),
        "n_failed": len(failed),
        "failed": failed,
    }
    Path(path).write_text(json.dumps(doc, indent=1))
