"""Command-line entry point: reproducible experiments over one config
grammar.

Subcommands: gen-data, train, bench, fft-align, simflight, fuse,
eval-traj, compress.  Configuration is flat key=value text (``#``
comments); command-line ``key=value`` arguments override file entries.
Unknown keys are rejected and every run writes its fully-resolved config
beside its outputs.  Exit codes: 0 success, 1 usage error, 2 data/config
error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .errors import ConfigError


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("PRGFLOW_THREADS")
    return max(1, int(env)) if env else 1


def _load_config(path: str | None, overrides, allowed):
    """Merge config file + key=value overrides; reject unknown keys."""
    cfg = {}
    base = "."
    if path:
        if not os.path.isfile(path):
            raise ConfigError(f"config file not found: {path}")
        base = os.path.dirname(os.path.abspath(path))
        with open(path, encoding="utf-8") as f:
            for ln, line in enumerate(f, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{ln}: expected key=value, got {line!r}")
                k, v = (s.strip() for s in line.split("=", 1))
                cfg[k] = v
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"expected key=value override, got {item!r}")
        k, v = (s.strip() for s in item.split("=", 1))
        cfg[k] = v
    for k in cfg:
        if k not in allowed:
            raise ConfigError(f"unknown config key {k!r} (allowed: {', '.join(sorted(allowed))})")
    cfg["_base"] = base
    return cfg


def _resolve_path(cfg, value):
    if os.path.isabs(value):
        return value
    return os.path.normpath(os.path.join(cfg.get("_base", "."), value))


def _write(path, text):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(text)


def _corpus(cfg, default):
    spec = cfg.get("corpus", default)
    from .bench import load_corpus

    if not spec.startswith("procedural:"):
        spec = _resolve_path(cfg, spec)
    return load_corpus(spec)


def _echo_config(outdir, name, cfg, args):
    lines = [f"{k}={v}" for k, v in sorted(cfg.items()) if not k.startswith("_")]
    lines.append(f"seed={args.seed}")
    lines.append(f"threads={_threads(args)}")
    _write(os.path.join(outdir, name), "\n".join(lines) + "\n")


def _ranges(cfg):
    from .bench import WarpRange

    names = cfg.get("gammas", "gamma1,gamma2").split(",")
    return [(n.strip(), WarpRange.preset(n.strip())) for n in names if n.strip()]


# --- subcommands ----------------------------------------------------------------


def _cmd_gen_data(args):
    from .bench import gen_pair, WarpRange

    cfg = _load_config(args.config, args.set, {"corpus", "gamma", "count", "out"})
    corpus = _corpus(cfg, "procedural:16x320:0")
    rng_range = WarpRange.preset(cfg.get("gamma", "gamma1"))
    count = int(cfg.get("count", "8"))
    outdir = cfg.get("out", args.out or "pairs")
    os.makedirs(outdir, exist_ok=True)
    rows = ["index,s,tx,ty"]
    for i in range(count):
        p1, p2, truth = gen_pair(corpus[i % len(corpus)], rng_range, args.seed + i)
        p1.save(os.path.join(outdir, f"pair{i:04d}_a.png"))
        p2.save(os.path.join(outdir, f"pair{i:04d}_b.png"))
        rows.append(f"{i},{truth.s:.9f},{truth.tx:.9f},{truth.ty:.9f}")
    _write(os.path.join(outdir, "truth.csv"), "\n".join(rows) + "\n")
    _echo_config(outdir, "resolved-config.txt", cfg, args)
    print(f"wrote {count} pairs to {outdir}")
    return 0


_TRAIN_KEYS = {"corpus", "cascade", "preset", "lr", "batch", "epochs", "patience",
               "gamma", "loss", "pairs_per_image", "out"}


def _train_config(cfg, args):
    from .bench import WarpRange
    from .losses import parse_loss_spec
    from .training import TrainConfig

    loss = cfg.get("loss", "supervised")
    if loss != "supervised":
        loss = parse_loss_spec(loss)
    return TrainConfig(
        lr=float(cfg.get("lr", "1e-4")),
        batch=int(cfg.get("batch", "32")),
        epochs=int(cfg.get("epochs", "20")),
        patience=int(cfg.get("patience", "5")),
        gamma=WarpRange.preset(cfg.get("gamma", "gamma1")),
        loss=loss,
        seed=args.seed,
        pairs_per_image=int(cfg.get("pairs_per_image", "1")),
    )


def _cmd_train(args):
    from .estimators import CascadeConfig
    from .network import PRESETS, save_weights
    from .training import history_csv, train

    cfg = _load_config(args.config, args.set, _TRAIN_KEYS)
    corpus = _corpus(cfg, "procedural:64x320:0")
    cascade = CascadeConfig.parse(cfg.get("cascade", "Tx2,Sx2"))
    preset = cfg.get("preset", "small")
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}")
    outdir = cfg.get("out", args.out or "train-out")
    weights, history = train(corpus, _train_config(cfg, args), cascade,
                             widths=PRESETS[preset],
                             log=lambda m: print(m, flush=True))
    os.makedirs(outdir, exist_ok=True)
    save_weights(weights, os.path.join(outdir, "weights.prgw"))
    _write(os.path.join(outdir, "history.csv"), history_csv(history))
    _echo_config(outdir, "resolved-config.txt", cfg, args)
    print(f"trained {len(history)} epochs -> {outdir}")
    return 0


def _cmd_compress(args):
    from .estimators import CascadeConfig
    from .network import PRESETS, load_weights, save_weights
    from .training import train_student

    keys = _TRAIN_KEYS | {"teacher", "mode", "student_preset"}
    cfg = _load_config(args.config, args.set, keys)
    if "teacher" not in cfg:
        raise ConfigError("compress requires teacher=<weights file>")
    teacher = load_weights(_resolve_path(cfg, cfg["teacher"]))
    corpus = _corpus(cfg, "procedural:64x320:0")
    mode = cfg.get("mode", "distill")
    preset = cfg.get("student_preset", "tiny")
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}")
    outdir = cfg.get("out", args.out or "compress-out")
    student = train_student(teacher, mode, corpus, _train_config(cfg, args),
                            widths=PRESETS[preset],
                            log=lambda m: print(m, flush=True))
    os.makedirs(outdir, exist_ok=True)
    save_weights(student, os.path.join(outdir, f"student-{mode}.prgw"))
    _echo_config(outdir, "resolved-config.txt", cfg, args)
    print(f"{mode} student -> {outdir}")
    return 0


def _cmd_bench(args):
    from .bench import report_csv, run_benchmark

    cfg = _load_config(args.config, args.set,
                       {"corpus", "estimators", "gammas", "n_pairs", "out", "timing"})
    corpus = _corpus(cfg, "procedural:16x320:0")
    # estimator specs contain commas (cascade grammar), so the list
    # separator is "|": e.g. estimators=fft|lk:Tx2,Sx2
    estimators = [e.strip() for e in cfg.get("estimators", "lk:Tx2,Sx2").split("|")
                  if e.strip()]
    records = run_benchmark(corpus, estimators, _ranges(cfg),
                            n_pairs=int(cfg.get("n_pairs", "50")), seed=args.seed,
                            threads=_threads(args),
                            timing=cfg.get("timing", "0") not in ("0", "false", "no"))
    outdir = cfg.get("out", args.out or "bench-out")
    _write(os.path.join(outdir, "report.csv"), report_csv(records))
    _echo_config(outdir, "resolved-config.txt", cfg, args)
    print(report_csv(records), end="")
    return 0


def _cmd_fft_align(args):
    from .estimators import fft_scale_translation
    from .image import ImagePlane

    if not args.inputs or len(args.inputs) != 2:
        print("fft-align requires exactly two image paths", file=sys.stderr)
        return 1
    for p in args.inputs:
        if not os.path.isfile(p):
            raise ConfigError(f"image not found: {p}")
    a, b = (ImagePlane.load(p) for p in args.inputs)
    h = fft_scale_translation(a, b)
    line = f"s,tx,ty\n{h.s:.9f},{h.tx:.9f},{h.ty:.9f}\n"
    if args.out:
        _write(args.out, line)
    print(line, end="")
    return 0


_SIM_KEYS = {"shape", "size", "period", "altitude", "alt_amplitude", "duration",
             "texture_size", "texture_seed", "m_per_px", "window",
             "gyro_noise", "accel_noise", "mag_noise", "sonar_noise", "frames", "out"}


def _sim_setup(cfg, args):
    from .image import multi_octave_texture
    from .sim import (CameraIntrinsics, GroundPlane, NoiseSpec, Trajectory,
                      TrajectoryParams)

    params = TrajectoryParams(
        shape=cfg.get("shape", "circle"),
        size=float(cfg.get("size", "1.5")),
        period=float(cfg["period"]) if "period" in cfg else None,
        altitude=float(cfg.get("altitude", "2.0")),
        alt_amplitude=float(cfg.get("alt_amplitude", "0.3")),
        duration=float(cfg.get("duration", "60.0")),
    )
    traj = Trajectory(params)
    noise = NoiseSpec(
        gyro=float(cfg.get("gyro_noise", "0.005")),
        accel=float(cfg.get("accel_noise", "0.05")),
        mag=float(cfg.get("mag_noise", "0.01")),
        sonar=float(cfg.get("sonar_noise", "0.02")),
    )
    ground = GroundPlane(
        multi_octave_texture(int(cfg.get("texture_size", "2048")),
                             int(cfg.get("texture_seed", str(args.seed)))),
        float(cfg.get("m_per_px", "0.0025")),
    )
    K = CameraIntrinsics.default()
    return traj, noise, ground, K


def _cmd_simflight(args):
    from .image import ImagePlane
    from .sim import (IMU_RATE, RenderedFrames, alt_csv, frames_csv, gt_csv,
                      imu_csv, make_sensor_log)

    cfg = _load_config(args.config, args.set, _SIM_KEYS)
    traj, noise, ground, K = _sim_setup(cfg, args)
    outdir = cfg.get("out", args.out or "sim-out")
    os.makedirs(outdir, exist_ok=True)
    slog = make_sensor_log(traj, noise, seed=args.seed)
    _write(os.path.join(outdir, "imu.csv"), imu_csv(slog.imu))
    _write(os.path.join(outdir, "alt.csv"), alt_csv(slog.alt))
    gts = [traj.sample(t) for t in traj.sample_times(IMU_RATE)]
    _write(os.path.join(outdir, "gt.csv"), gt_csv(gts))
    _write(os.path.join(outdir, "frames.csv"), frames_csv(slog.cam_t))
    if cfg.get("frames", "0") not in ("0", "false", "no"):
        window = int(cfg["window"]) if "window" in cfg else None
        frames = RenderedFrames(traj, ground, K, times=slog.cam_t, window=window)
        for i in range(len(frames)):
            frames.frame(i).save(os.path.join(outdir, f"frame{i:06d}.png"))
    _echo_config(outdir, "resolved-config.txt", cfg, args)
    print(f"simulated {traj.params.shape} flight -> {outdir}")
    return 0


def _cmd_fuse(args):
    from .fusion import VioConfig, run_vio, trajectory_csv
    from .sim import RenderedFrames

    keys = _SIM_KEYS | {"stride", "patch", "cascade"}
    cfg = _load_config(args.config, args.set, keys)
    traj, noise, ground, K = _sim_setup(cfg, args)
    from .sim import make_sensor_log

    slog = make_sensor_log(traj, noise, seed=args.seed)
    window = int(cfg.get("window", "256"))
    frames = RenderedFrames(traj, ground, K, times=slog.cam_t, window=window)
    vio = VioConfig(stride=int(cfg.get("stride", "4")),
                    patch=int(cfg.get("patch", "128")),
                    cascade=cfg.get("cascade", "PSx1"))
    est_traj, diag = run_vio(frames, slog, frames.K, vio)
    outdir = cfg.get("out", args.out or "fuse-out")
    _write(os.path.join(outdir, "trajectory.csv"), trajectory_csv(est_traj))
    from .sim import IMU_RATE, gt_csv

    gts = [traj.sample(t) for t in traj.sample_times(IMU_RATE)]
    _write(os.path.join(outdir, "gt.csv"), gt_csv(gts))
    _echo_config(outdir, "resolved-config.txt", cfg, args)
    print(f"fused trajectory ({diag['steps']} steps, {diag['holds']} holds) -> {outdir}")
    return 0


def _cmd_eval_traj(args):
    from .fusion import align_and_rmse, eval_csv

    if not args.inputs or len(args.inputs) != 2:
        print("eval-traj requires <estimate.csv> <gt.csv>", file=sys.stderr)
        return 1
    for p in args.inputs:
        if not os.path.isfile(p):
            raise ConfigError(f"trajectory file not found: {p}")
    est = np.genfromtxt(args.inputs[0], delimiter=",", skip_header=1)[:, :4]
    gt = np.genfromtxt(args.inputs[1], delimiter=",", skip_header=1)[:, :4]
    per_axis, rmse, length = align_and_rmse(est, gt)
    text = eval_csv([(os.path.basename(args.inputs[0]), *per_axis, rmse, length)])
    if args.out:
        _write(args.out, text)
    print(text, end="")
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "bench": _cmd_bench,
    "fft-align": _cmd_fft_align,
    "simflight": _cmd_simflight,
    "fuse": _cmd_fuse,
    "eval-traj": _cmd_eval_traj,
    "compress": _cmd_compress,
}


def _parser():
    p = argparse.ArgumentParser(prog="prgflow",
                                description="pseudo-similarity ego-motion pipeline")
    sub = p.add_subparsers(dest="command")
    for name in _COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("inputs", nargs="*", help="positional inputs (command specific)")
        sp.add_argument("--config", help="key=value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="config override (repeatable)")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--threads", type=int, default=None,
                        help="parallelism cap (default: PRGFLOW_THREADS or 1)")
        sp.add_argument("--out", help="output file/directory")
    return p


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 1
    if not args.command:
        parser.print_usage(sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())
