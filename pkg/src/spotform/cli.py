"""Command-line front end.

Subcommands mirror the pipeline stages:

  simulate   scene -> RIRs and rendered microphone observations
  run        full sweep from a JSON experiment config
  spotform   one method applied to already-beamformed per-array WAVs
  eval       score an estimate WAV against a reference WAV
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from spotform.beamform import BfOutputTensor, delay_and_sum
from spotform.evaluate import filtered_sdr, si_sdr
from spotform.harness import ExperimentConfig, load_sources, run_experiment
from spotform.nmf import build_concat, fit_nmf, nmf_wiener, threshold_mask
from spotform.ntf import (
    RegularizationSchedule,
    build_prop_tensor,
    fit_ntf,
    ntf_wiener,
)
from spotform.roomsim import default_scene, render_observations, save_rirs, simulate_rirs
from spotform.signal import StftConfig, Waveform, istft, read_wav, stft, write_wav
from spotform.synth import write_demo_sources


def _cmd_simulate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.config:
        cfg = ExperimentConfig.load(args.config)
        scene = cfg.scene
        sources = load_sources(cfg)
        source_paths = list(cfg.source_paths)
    else:
        scene = default_scene(n_arrays=args.arrays, t60=args.t60)
        paths = write_demo_sources(out / "sources", scene.n_sources,
                                   args.duration, scene.sample_rate,
                                   seed=args.seed)
        source_paths = [str(p) for p in paths]
        cfg = ExperimentConfig(scene=scene,
                               source_paths=tuple(source_paths),
                               out_dir=str(out))
        sources = load_sources(cfg)
    rirs = simulate_rirs(scene)
    save_rirs(out / "rirs.npz", rirs)
    obs = render_observations(sources, rirs)
    for a in range(scene.n_arrays):
        for m in range(obs.mixture.shape[1]):
            write_wav(out / f"obs_a{a}m{m}.wav",
                      Waveform(obs.mixture[a, m], obs.sample_rate))
    manifest = {
        "scene": scene.to_dict(),
        "source_paths": source_paths,
        "rirs": "rirs.npz",
        "n_arrays": scene.n_arrays,
        "n_mics": obs.mixture.shape[1],
        "n_samples": obs.n_samples,
    }
    (out / "simulate_manifest.json").write_text(json.dumps(manifest, indent=1))
    print(f"wrote RIRs and {scene.n_arrays}x{obs.mixture.shape[1]} "
          f"observation WAVs to {out}")
    return 0


def _cmd_run(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.out is not None:
        overrides["out_dir"] = args.out
    if overrides:
        cfg = replace(cfg, **overrides)
    rows, _ = run_experiment(cfg)
    failed = sum(r.status != "ok" for r in rows)
    print(f"{len(rows)} rows ({failed} failed) -> {cfg.out_dir}/results.csv")
    return 0 if failed == 0 else 1


def _cmd_spotform(args) -> int:
    waves = [read_wav(p) for p in args.bf_wavs]
    rate = waves[0].sample_rate
    if any(w.sample_rate != rate for w in waves):
        raise SystemExit("all BF WAVs must share one sample rate")
    n = min(len(w) for w in waves)
    cfg = StftConfig(sample_rate=rate)
    specs = [stft(Waveform(w.samples[:n], rate), cfg) for w in waves]
    Y = BfOutputTensor(np.stack([s.values for s in specs], axis=2), cfg, rate, n)
    if args.method == "nmf":
        model = fit_nmf(build_concat(Y), args.k, args.iterations, args.seed)
        mask = threshold_mask(model, len(waves), Y.values.shape[1], args.hyper)
        out_specs = nmf_wiener(model, mask, Y)
    else:
        schedule = RegularizationSchedule(args.hyper, args.warmup,
                                          args.iterations)
        model, assignment, _ = fit_ntf(build_prop_tensor(Y), args.k, schedule,
                                       args.seed)
        out_specs = ntf_wiener(model, assignment, Y)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    estimates = [istft(s, cfg, n) for s in out_specs]
    for a, w in enumerate(estimates):
        write_wav(out / f"estimate_array{a}.wav", w)
    write_wav(out / "estimate_fused.wav", delay_and_sum(estimates))
    print(f"wrote {len(estimates) + 1} WAVs to {out}")
    return 0


def _cmd_eval(args) -> int:
    est = read_wav(args.estimate)
    ref = read_wav(args.reference)
    print(f"filtered_sdr_db={filtered_sdr(est, ref, args.taps):.4f}")
    print(f"si_sdr_db={si_sdr(est, ref):.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spotform",
                                description="multi-array target extraction")
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="simulate RIRs and observations")
    sim.add_argument("--config", help="experiment config JSON")
    sim.add_argument("--arrays", type=int, default=2,
                     help="arrays in the default scene (no --config)")
    sim.add_argument("--t60", type=float, default=0.0,
                     help="reverberation time for the default scene")
    sim.add_argument("--duration", type=float, default=2.5,
                     help="synthetic source length in seconds (no --config)")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", default="simulated")
    sim.set_defaults(func=_cmd_simulate)

    run = sub.add_parser("run", help="run a full experiment sweep")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int, default=None,
                     help="override the master seed")
    run.add_argument("--workers", type=int, default=None)
    run.add_argument("--out", default=None)
    run.set_defaults(func=_cmd_run)

    spot = sub.add_parser("spotform",
                          help="extract the common component of BF outputs")
    spot.add_argument("bf_wavs", nargs="+",
                      help="one beamformed WAV per array")
    spot.add_argument("--method", choices=("nmf", "ntf"), required=True)
    spot.add_argument("--k", type=int, default=30)
    spot.add_argument("--hyper", type=float, required=True,
                      help="threshold tau (nmf) or weight mu (ntf)")
    spot.add_argument("--seed", type=int, default=0)
    spot.add_argument("--iterations", type=int, default=100)
    spot.add_argument("--warmup", type=int, default=50)
    spot.add_argument("--out", default="spotformed")
    spot.set_defaults(func=_cmd_spotform)

    ev = sub.add_parser("eval", help="score an estimate against a reference")
    ev.add_argument("estimate")
    ev.add_argument("reference")
    ev.add_argument("--taps", type=int, default=512)
    ev.set_defaults(func=_cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
