"""Command-line entry point: ``torusbfn <command> [options]``.

Every command accepts ``--seed``, ``--config`` and ``--out-dir`` and writes
``manifest.json`` into the output directory before computing anything.
Exit codes: 0 success, 1 runtime failure, 2 invalid configuration.
"""

import argparse
import copy
import csv
import json
import logging
import sys
import time
from dataclasses import asdict
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from torusbfn import __version__
from torusbfn import pipeline as pl
from torusbfn.kernels import BACKEND
from torusbfn.net import load_checkpoint, save_checkpoint
from torusbfn.schedule import SolverError, cached_vm_schedule
from torusbfn.special import DomainError, angle_to_frac, frac_to_angle
from torusbfn.torus_flow import (
    TorusBelief,
    demonstrate_nonadditivity,
    draw_sender_sequence,
    fold_draws,
    resultant_draws,
)
from torusbfn.von_mises import entropy

log = logging.getLogger("torusbfn")

EXIT_RUNTIME = 1
EXIT_CONFIG = 2

DEFAULTS = {
    "schedule": {"c_final": 1000.0, "steps": 100, "tol": 1e-8},
    "simulate": {"mode": "fast", "x": 0.3, "c_final": 1000.0, "steps": 100, "trajectories": 1000},
    "nonadditivity": {"x": 0.5, "alpha_a": 5.0, "alpha_b": 5.0, "trials": 100000, "bins": 40},
    "sample": {"nfe": 50, "count": 5000, "chunk_size": 1024},
    "ablation": {"eval_count": 5000, "nfe": [10, 50]},
}


class ConfigError(Exception):
    pass


def load_schema():
    return json.loads(resources.files("torusbfn").joinpath("config.schema.json").read_text())


def validate_config(cfg):
    try:
        jsonschema.validate(cfg, load_schema())
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {path}: {exc.message}") from None


def _common(sp):
    sp.add_argument("--seed", type=int, default=None, help="root random seed (default 0)")
    sp.add_argument("--config", type=Path, default=None, help="JSON config file (see `torusbfn schema`)")
    sp.add_argument("--out-dir", type=Path, default=None, help="output directory (default runs/<command>)")
    sp.add_argument("--threads", type=int, default=None, help="worker threads for batched sampling")
    sp.add_argument("--schedule-cache-dir", type=Path, default=None,
                    help="directory of cached torus schedules (default <out-dir>/schedule_cache)")
    sp.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])


def _on_off(value):
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on or off")
    return value == "on"


def build_parser():
    p = argparse.ArgumentParser(prog="torusbfn", description="Periodic Bayesian flow networks on the torus.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("schedule", help="solve the linear-entropy torus accuracy schedule")
    _common(sp)
    sp.add_argument("--c-final", type=float, help="final receiver concentration c(1)")
    sp.add_argument("--steps", type=int, help="number of steps n")
    sp.add_argument("--tol", type=float, help="entropy residual tolerance")

    sp = sub.add_parser("simulate", help="sample torus flow trajectories (fast or iterated)")
    _common(sp)
    sp.add_argument("--mode", choices=["fast", "iterated"])
    sp.add_argument("--x", type=float, help="ground-truth fractional coordinate in [0, 1)")
    sp.add_argument("--c-final", type=float)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--trajectories", type=int)

    sp = sub.add_parser("nonadditivity", help="one update at alpha_a+alpha_b vs two successive updates")
    _common(sp)
    sp.add_argument("--x", type=float, help="ground-truth fractional coordinate in [0, 1)")
    sp.add_argument("--alpha-a", type=float)
    sp.add_argument("--alpha-b", type=float)
    sp.add_argument("--trials", type=int)
    sp.add_argument("--bins", type=int)

    sp = sub.add_parser("train", help="train the joint predictor on synthetic toy crystals")
    _common(sp)
    sp.add_argument("--steps", type=int, help="optimizer steps")
    sp.add_argument("--n", type=int, help="number of flow steps")
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--hidden", type=int)
    sp.add_argument("--layers", type=int)
    sp.add_argument("--entropy-cond", type=_on_off, metavar="on|off")
    sp.add_argument("--equivariant", type=_on_off, metavar="on|off")

    sp = sub.add_parser("sample", help="generate toy crystals from a checkpoint")
    _common(sp)
    sp.add_argument("--checkpoint", type=Path, help="model file (default <out-dir>/checkpoints/model.npz)")
    sp.add_argument("--nfe", type=int, help="sampling steps (network evaluations)")
    sp.add_argument("--count", type=int)
    sp.add_argument("--chunk-size", type=int)

    sp = sub.add_parser("eval", help="score samples against the synthetic distribution")
    _common(sp)
    sp.add_argument("--samples", type=Path, help="samples.csv to score")
    sp.add_argument("--oracle-count", type=int, help="score this many draws from the synthetic spec instead")

    sp = sub.add_parser("ablation", help="entropy conditioning on vs off under equal budgets")
    _common(sp)
    sp.add_argument("--steps", type=int, help="optimizer steps per model")
    sp.add_argument("--eval-count", type=int)
    sp.add_argument("--nfe", type=int, nargs="+")

    sub.add_parser("schema", help="print the JSON config schema")
    return p


_FLAG_SECTIONS = {
    "schedule": {"c_final": "c_final", "steps": "steps", "tol": "tol"},
    "simulate": {"mode": "mode", "x": "x", "c_final": "c_final", "steps": "steps", "trajectories": "trajectories"},
    "nonadditivity": {"x": "x", "alpha_a": "alpha_a", "alpha_b": "alpha_b", "trials": "trials", "bins": "bins"},
    "train": {"steps": "steps", "n": "n", "batch_size": "batch_size", "lr": "lr", "hidden": "hidden",
              "layers": "layers", "entropy_cond": "entropy_cond", "equivariant": "equivariant"},
    "sample": {"nfe": "nfe", "count": "count", "chunk_size": "chunk_size"},
    "ablation": {"eval_count": "eval_count", "nfe": "nfe"},
}
_TRAIN_FLAGS_FOR = {"ablation": {"steps": "steps"}}


def resolve_config(args):
    """Merge defaults, the --config file and explicit flags; validate the result."""
    cfg = {}
    if args.config is not None:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        validate_config(cfg)
    cfg = copy.deepcopy(cfg)
    section = args.command
    merged = {**DEFAULTS.get(section, {}), **cfg.get(section, {})}
    for flag, key in _FLAG_SECTIONS.get(section, {}).items():
        value = getattr(args, flag, None)
        if value is not None:
            merged[key] = value
    if merged:
        cfg[section] = merged
    for flag, key in _TRAIN_FLAGS_FOR.get(section, {}).items():
        value = getattr(args, flag, None)
        if value is not None:
            cfg.setdefault("train", {})[key] = value
    if args.seed is not None:
        cfg["seed"] = args.seed
    cfg.setdefault("seed", 0)
    if args.threads is not None:
        cfg["threads"] = args.threads
    cfg.setdefault("threads", 1)
    validate_config(cfg)
    return cfg


def make_spec(cfg):
    raw = cfg.get("synthetic", {})
    tupled = {k: (tuple(tuple(r) if isinstance(r, list) else r for r in v) if isinstance(v, list) else v)
              for k, v in raw.items()}
    try:
        return pl.SyntheticSpec(**tupled)
    except DomainError as exc:
        raise ConfigError(f"synthetic: {exc}") from None


def make_train_config(cfg):
    raw = {**cfg.get("train", {})}
    raw.setdefault("seed", cfg["seed"])
    try:
        return pl.TrainConfig(**raw)
    except DomainError as exc:
        raise ConfigError(f"train: {exc}") from None


def write_manifest(out_dir, command, cfg, argv):
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "argv": list(argv),
        "config": cfg,
        "seed": cfg["seed"],
        "version": __version__,
        "kernels": BACKEND,
        "started_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


def _finish_manifest(path, status):
    manifest = json.loads(path.read_text())
    manifest["finished_at"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    manifest["status"] = status
    path.write_text(json.dumps(manifest, indent=2))


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _write_json(path, payload):
    Path(path).write_text(json.dumps(payload, indent=2))


def cmd_schedule(cfg, ctx):
    s = cfg["schedule"]
    t0 = time.perf_counter()
    sched = cached_vm_schedule(s["c_final"], s["steps"], s["tol"], cache_dir=ctx["cache_dir"])
    elapsed = time.perf_counter() - t0
    H = entropy(sched.c_targets)
    rows = [(i + 1, repr(float(t)), repr(float(a)), repr(float(c)), repr(float(h)))
            for i, (t, a, c, h) in enumerate(zip(sched.times, sched.alphas, sched.c_targets, H))]
    _write_csv(ctx["out"] / "schedule.csv", ["i", "t", "alpha", "c_target", "entropy"], rows)
    log.info("schedule n=%d c_final=%g solved/loaded in %.2fs; max entropy residual %.2e",
             sched.n, sched.c_final, elapsed, float(np.max(np.abs(sched.entropy_residuals()))))


def cmd_simulate(cfg, ctx):
    s = cfg["simulate"]
    rng = np.random.default_rng(cfg["seed"])
    x = frac_to_angle(s["x"])
    T, n = s["trajectories"], s["steps"]
    prior = TorusBelief.prior(T, rng)
    if n == 0:
        ms, cs = prior.m[None], prior.c[None]
    else:
        sched = cached_vm_schedule(s["c_final"], n, cache_dir=ctx["cache_dir"])
        y = draw_sender_sequence(np.full(T, x), sched.alphas, rng)
        fold = fold_draws if s["mode"] == "iterated" else resultant_draws
        ms, cs = fold(y, sched.alphas, prior)
    rows = []
    for traj in range(T):
        for step in range(ms.shape[0]):
            rows.append((traj, step, repr(step / n if n else 0.0), repr(float(ms[step, traj])), repr(float(cs[step, traj]))))
    _write_csv(ctx["out"] / "trajectories.csv", ["trajectory", "step", "t", "m", "c"], rows)
    log.info("wrote %d trajectories x %d steps (%s mode)", T, n, s["mode"])


def cmd_nonadditivity(cfg, ctx):
    s = cfg["nonadditivity"]
    rng = np.random.default_rng(cfg["seed"])
    report = demonstrate_nonadditivity(frac_to_angle(s["x"]), s["alpha_a"], s["alpha_b"], s["trials"], rng, s["bins"])
    report["x_fraction"] = s["x"]
    _write_json(ctx["out"] / "nonadditivity.json", report)
    log.info("one-step c=%.4g; two-step mean=%.4g var=%.4g",
             report["one_step_c"], report["two_step_mean"], report["two_step_var"])


def _save_loss_curve(path, curve):
    keys = ["step", "total", "A", "F", "L", "lr"]
    _write_csv(path, keys, [[repr(row[k]) for k in keys] for row in curve])


def cmd_train(cfg, ctx):
    spec = make_spec(cfg)
    tc = make_train_config(cfg)
    out = ctx["out"]
    _write_json(out / "config.json", cfg)
    result = pl.train(tc, spec, cache_dir=ctx["cache_dir"],
                      progress=lambda step, b: log.info("step %d total %.4f (A %.3f F %.3f L %.3f)",
                                                        step, b["total"], b["A"], b["F"], b["L"]))
    extra = {"train": asdict(tc), "synthetic": asdict(spec)}
    save_checkpoint(out / "checkpoints" / "model.npz", result.params, result.cfg, extra)
    _save_loss_curve(out / "loss_curve.csv", result.curve)
    _write_json(out / "metrics.json", {"validation": result.val, "final_step": result.curve[-1]})


def _spec_from_extra(extra):
    raw = extra["synthetic"]
    return pl.SyntheticSpec(**{k: (tuple(tuple(r) if isinstance(r, list) else r for r in v)
                                    if isinstance(v, list) else v) for k, v in raw.items()})


def _samples_rows(samples):
    F = angle_to_frac(samples.F)
    return [[*map(int, a), *map(repr, map(float, f)), *map(repr, map(float, l))]
            for a, f, l in zip(samples.A, F, samples.L)]


def _samples_header(N, D, Ld):
    return [f"a{j}" for j in range(N)] + [f"f{j}" for j in range(D)] + [f"l{j}" for j in range(Ld)]


def read_samples(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = np.array([[float(v) for v in row] for row in reader]).reshape(-1, len(header))
    cols = {p: [j for j, h in enumerate(header) if h[0] == p] for p in "afl"}
    F = frac_to_angle(data[:, cols["f"]])
    return pl.ToyCrystal(data[:, cols["a"]].astype(np.int64), np.asarray(F), data[:, cols["l"]])


def cmd_sample(cfg, ctx, args):
    s = cfg["sample"]
    ckpt = args.checkpoint or ctx["out"] / "checkpoints" / "model.npz"
    if not Path(ckpt).exists():
        raise ConfigError(f"checkpoint {ckpt} not found")
    params, ncfg, extra = load_checkpoint(ckpt)
    tc = pl.TrainConfig(**extra["train"])
    spec = _spec_from_extra(extra)
    sched = pl.build_schedules(s["nfe"], tc.c_final, tc.sigma1_sq, tc.beta1, spec.K, ctx["cache_dir"])
    shapes = (spec.N, spec.K, spec.D, spec.lattice_dim)
    samples = pl.sample(pl.network_predictor(params, ncfg), shapes, sched, s["count"], cfg["seed"],
                        chunk_size=s["chunk_size"], threads=cfg["threads"])
    _write_csv(ctx["out"] / "samples.csv", _samples_header(spec.N, spec.D, spec.lattice_dim), _samples_rows(samples))
    metrics = {"nfe": s["nfe"], "count": s["count"]}
    if len(samples) >= pl.MIN_EVAL_SAMPLES:
        metrics.update(pl.evaluate(samples, spec))
    _write_json(ctx["out"] / "metrics.json", metrics)
    log.info("sampled %d crystals at nfe=%d", s["count"], s["nfe"])


def cmd_eval(cfg, ctx, args):
    spec = make_spec(cfg)
    if args.oracle_count:
        samples = pl.generate_synthetic(spec, args.oracle_count, np.random.default_rng(cfg["seed"]))
    elif args.samples is not None:
        samples = read_samples(args.samples)
    else:
        raise ConfigError("eval needs --samples or --oracle-count")
    metrics = pl.evaluate(samples, spec)
    _write_json(ctx["out"] / "metrics.json", metrics)
    log.info("hist KL %s, type TV %.4f, agreement %.4f",
             metrics["hist_kl"], metrics["type_marginal_tv"], metrics["class_mode_agreement"])


def cmd_ablation(cfg, ctx):
    s = cfg["ablation"]
    spec = make_spec(cfg)
    tc = make_train_config(cfg)
    table = pl.ablation(tc, spec, eval_count=s["eval_count"], nfe=tuple(s["nfe"]), cache_dir=ctx["cache_dir"])
    _write_json(ctx["out"] / "metrics.json", {"ablation": table})
    for label, row in table.items():
        log.info("%s: %s", label, row)


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "schema":
        print(json.dumps(load_schema(), indent=2))
        return 0
    logging.basicConfig(level=getattr(logging, args.log_level), format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command in ("train", "ablation"):
            make_train_config(cfg)
        if args.command in ("train", "ablation", "eval"):
            make_spec(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out_dir or Path("runs") / args.command
    manifest = write_manifest(out, args.command, cfg, argv)
    ctx = {"out": out, "cache_dir": args.schedule_cache_dir or out / "schedule_cache"}
    handlers = {
        "schedule": lambda: cmd_schedule(cfg, ctx),
        "simulate": lambda: cmd_simulate(cfg, ctx),
        "nonadditivity": lambda: cmd_nonadditivity(cfg, ctx),
        "train": lambda: cmd_train(cfg, ctx),
        "sample": lambda: cmd_sample(cfg, ctx, args),
        "eval": lambda: cmd_eval(cfg, ctx, args),
        "ablation": lambda: cmd_ablation(cfg, ctx),
    }
    try:
        handlers[args.command]()
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        _finish_manifest(manifest, "config-error")
        return EXIT_CONFIG
    except (SolverError, DomainError, FloatingPointError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        _finish_manifest(manifest, "failed")
        return EXIT_RUNTIME
    _finish_manifest(manifest, "ok")
    return 0


if __name__ == "__main__":
    sys.exit(main())
