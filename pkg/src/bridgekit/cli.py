"""``bridgekit`` command-line interface.

Exit codes: 0 success, 1 failed invariant check, 2 configuration or input
error, 3 checkpoint incompatible with the configuration.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import platform
import subprocess
import sys
import time

import numpy as np

from . import __version__
from .analysis import (
    bridge_mean_interpolant,
    curvature_numeric,
    curvature_sb_closed_form,
    curvature_summary,
    curvature_vp_closed_form,
    decorrelated_coupling,
    diffusion_interpolant,
    energy_distance,
    N_COUPLING,
    transport_cost_check,
)
from .bridge import ObjectiveKind
from .checkpoint import load_checkpoint, save_checkpoint
from .checks import FAULTS, TIME_BUDGET, format_table, run_checks
from .config import DEFAULT_TOY, RunConfig
from .exceptions import CheckpointError, CompatibilityError, ConfigError
from .io import write_csv, write_json, write_samples, write_trajectory
from .net import Architecture, RegressorParams
from .problems import InverseProblem
from .sampler import sample
from .schedule import NoiseSchedule, schedule_table
from .train import train, write_loss_log

log = logging.getLogger("bridgekit")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_COMPAT = 0, 1, 2, 3

# Stream offsets for the generators derived from the run seed.
STREAM_TEST, STREAM_SAMPLER, STREAM_REFERENCE = 1, 2, 3


def git_version():
    """``git describe`` of the source tree, falling back to the package version."""
    here = os.path.dirname(os.path.abspath(__file__))
    try:
        out = subprocess.run(["git", "describe", "--tags", "--always", "--dirty"], cwd=here,
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _stream(seed, offset):
    return np.random.default_rng([seed, offset])


def _out_dir(args, cfg=None):
    out = args.out or (cfg.out if cfg is not None else None) or "."
    os.makedirs(out, exist_ok=True)
    return out


def build_params(cfg: RunConfig, source, rng):
    kind = ObjectiveKind.parse(cfg.train.get("objective", "endpoint"))
    arch = Architecture(state_dim=source.state_dim, out_dim=kind.output_width(source.state_dim),
                        cond_dim=getattr(source, "cond_dim", 0), **cfg.net)
    return RegressorParams.initialize(arch, rng)


def run_training(cfg: RunConfig, out_dir, steps=None):
    """Train from a config; returns ``(params, losses, manifest)``."""
    overrides = {"checkpoint_path": os.path.join(out_dir, "checkpoint.sbmk")}
    if steps is not None:
        overrides["steps"] = steps
    tcfg = cfg.train_config(**overrides)
    source = cfg.source()
    rng = np.random.default_rng(cfg.seed)
    params = build_params(cfg, source, rng)
    start = time.perf_counter()
    result = train(tcfg, source, params, rng=rng)
    elapsed = time.perf_counter() - start
    save_checkpoint(tcfg.checkpoint_path, result.params, tcfg.objective, result.opt_state,
                    {"step": result.step, "rng_state": result.rng.bit_generator.state,
                     "config_hash": cfg.config_hash()})
    write_loss_log(os.path.join(out_dir, "loss.csv"), result.losses)
    manifest = {
        "command": "train",
        "config": cfg.raw,
        "config_hash": cfg.config_hash(),
        "version": git_version(),
        "seed": cfg.seed,
        "steps": result.step,
        "final_loss": result.losses[-1] if result.losses else None,
        "train_seconds": round(elapsed, 3),
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    write_json(os.path.join(out_dir, "manifest.json"), manifest)
    return result.params, result.losses, manifest


def cmd_train(args):
    cfg = RunConfig.load(args.config)
    out = _out_dir(args, cfg)
    _, losses, manifest = run_training(cfg, out, args.steps)
    print(f"trained {manifest['steps']} steps; final loss {manifest['final_loss']:.6g}; "
          f"checkpoint {os.path.join(out, 'checkpoint.sbmk')}")
    return EXIT_OK


def _check_compat(ckpt, cfg: RunConfig, source):
    objective = ObjectiveKind.parse(cfg.train.get("objective", "endpoint"))
    if ckpt.objective is not objective:
        raise CompatibilityError(f"checkpoint was trained for objective {ckpt.objective.value!r}, "
                                 f"config asks for {objective.value!r}")
    arch = ckpt.params.arch
    if arch.state_dim != source.state_dim or arch.cond_dim != getattr(source, "cond_dim", 0):
        raise CompatibilityError(f"checkpoint widths (state {arch.state_dim}, condition {arch.cond_dim}) do not "
                                 f"match the problem (state {source.state_dim}, condition "
                                 f"{getattr(source, 'cond_dim', 0)})")


def _residual(source, x, y1):
    return float(np.mean(np.linalg.norm(source.A1.apply(x) - y1, axis=-1)))


def cmd_sample(args):
    cfg = RunConfig.load(args.config)
    out = _out_dir(args, cfg)
    source = cfg.source()
    if args.n < 0:
        raise ConfigError("--n must be nonnegative")
    x0, y1, c = source.sample(args.n, _stream(cfg.seed, STREAM_TEST)) if args.n else (None, None, None)
    if args.oracle:
        objective = ObjectiveKind.parse(cfg.train.get("objective", "endpoint"))
        if objective is not ObjectiveKind.ENDPOINT:
            raise ConfigError("--oracle needs the endpoint objective")
        net = lambda y, cond, t: x0
    else:
        if not args.checkpoint:
            raise ConfigError("--checkpoint is required unless --oracle is given")
        ckpt = load_checkpoint(args.checkpoint)
        _check_compat(ckpt, cfg, source)
        net = ckpt.params
    samples_path = os.path.join(out, "samples.csv")
    summary = {"n": args.n, "method": cfg.sampler.get("method", "euler-sde"), "seed": cfg.seed,
               "config_hash": cfg.config_hash(), "version": git_version()}
    if args.n == 0:
        write_samples(samples_path, np.zeros((0, source.state_dim)))
        write_json(os.path.join(out, "summary.json"), summary)
        print(f"wrote empty sample set to {samples_path}")
        return EXIT_OK
    n_traj = int(cfg.sampler.get("trajectories", 0))
    scfg = cfg.sampler_config(record_trajectory=n_traj > 0)
    schedule = cfg.noise_schedule()
    x_hat, traj = sample(scfg, net, schedule, y1, c, rng=_stream(cfg.seed, STREAM_SAMPLER))
    write_samples(samples_path, x_hat)
    for i in range(min(n_traj, args.n)):
        write_trajectory(os.path.join(out, f"trajectory_{i}.csv"), traj, chain=i)
    summary["nfe"] = traj.nfe
    summary["warnings"] = traj.warnings
    cost = transport_cost_check(lambda y, cond: x_hat, x0, y1)
    summary["cost_generated"] = cost.cost_generated
    summary["cost_independent"] = cost.cost_independent
    if cfg.reference:
        ref_n = int(cfg.reference.get("n", 2000))
        ref, _, _ = source.sample(ref_n, _stream(cfg.seed, STREAM_REFERENCE))
        summary["energy_distance"] = energy_distance(x_hat, ref)
    if isinstance(source, InverseProblem):
        summary["residual"] = _residual(source, x_hat, y1)
        if scfg.method == "euler-sde-guided":
            plain = cfg.sampler_config(guidance=0.0, record_trajectory=False)
            x_plain, _ = sample(plain, net, schedule, y1, c, rng=_stream(cfg.seed, STREAM_SAMPLER))
            summary["residual_without_guidance"] = _residual(source, x_plain, y1)
    write_json(os.path.join(out, "summary.json"), summary)
    print(json.dumps({k: v for k, v in summary.items() if k not in ("version", "config_hash")}, sort_keys=True))
    return EXIT_OK


def cmd_curvature(args):
    sb = NoiseSchedule(kind="sb-quadratic-flip")
    if args.config:
        sb = RunConfig.load(args.config).noise_schedule()
    vp = NoiseSchedule(kind="vp")
    seed = int(os.environ.get("BRIDGEKIT_SEED", args.seed))
    x0, z = decorrelated_coupling(args.n, args.dim, np.random.default_rng(seed))
    desc = f"decorrelated standard normal, n={args.n}, d={args.dim}, seed={seed}"
    num_sb = curvature_numeric(bridge_mean_interpolant(sb, x0, z), x0, z, schedule=sb.kind, coupling=desc)
    num_vp = curvature_numeric(diffusion_interpolant(vp, x0, z), x0, z, schedule=vp.kind, coupling=desc)
    out = _out_dir(args)
    write_csv(os.path.join(out, "curvature.csv"), ["t", "curv_sb", "curv_vp"],
              zip(num_sb.times, num_sb.profile, num_vp.profile))
    summary = curvature_summary(num_sb, num_vp)
    summary["closed_form"] = curvature_summary(curvature_sb_closed_form(sb, x0, z),
                                               curvature_vp_closed_form(vp, x0, z))
    summary["paper_literal"] = curvature_summary(curvature_sb_closed_form(sb, x0, z, paper_literal=True),
                                                 curvature_vp_closed_form(vp, x0, z, paper_literal=True))
    summary["coupling"] = desc
    write_json(os.path.join(out, "curvature.json"), summary)
    print(json.dumps({k: summary[k] for k in ("mean_sb", "mean_vp", "ratio")}))
    return EXIT_OK


def cmd_schedule_dump(args):
    if args.config:
        s = RunConfig.load(args.config).noise_schedule()
    else:
        try:
            s = NoiseSchedule(kind=args.kind)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    table = schedule_table(s, args.n)
    header = ["t", "beta", "sigma2", "sigma2_hat", "var_posterior"]
    if args.out:
        write_csv(args.out, header, table)
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(header)
        w.writerows([[format(float(v), ".17g") for v in row] for row in table])
    return EXIT_OK


def cmd_toy_demo(args):
    cfg = RunConfig.load(args.config) if args.config else RunConfig.from_dict(DEFAULT_TOY)
    out = _out_dir(args, cfg)
    params, _, manifest = run_training(cfg, out, args.steps)
    source = cfg.source()
    n = args.n
    x0, y1, _ = source.sample(n, _stream(cfg.seed, STREAM_TEST))
    ref, _, _ = source.sample(n, _stream(cfg.seed, STREAM_REFERENCE))
    x_hat, _ = sample(cfg.sampler_config(record_trajectory=False), params, cfg.noise_schedule(), y1,
                      rng=_stream(cfg.seed, STREAM_SAMPLER))
    write_samples(os.path.join(out, "before.csv"), y1)
    write_samples(os.path.join(out, "after.csv"), x_hat)
    write_samples(os.path.join(out, "reference.csv"), ref)
    cost = transport_cost_check(lambda y, c: x_hat, x0, y1)
    # the clean halves of the test pairs are an independent draw of the target,
    # so their distance to the reference calibrates the metric's finite-sample floor
    generated = energy_distance(x_hat, ref, unbiased=False)
    calibration = energy_distance(x0, ref, unbiased=False)
    summary = {"energy_distance": generated, "calibration": calibration,
               "energy_ratio": generated / calibration if calibration > 0 else float("inf"),
               "energy_distance_unbiased": energy_distance(x_hat, ref),
               "energy_distance_prior": energy_distance(y1, ref, unbiased=False),
               "cost_generated": cost.cost_generated, "cost_independent": cost.cost_independent,
               "cost_ratio": cost.ratio, "final_loss": manifest["final_loss"], "steps": manifest["steps"],
               "train_seconds": manifest["train_seconds"]}
    write_json(os.path.join(out, "summary.json"), summary)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_check(args):
    start = time.perf_counter()
    results = run_checks(fault=args.inject_fault)
    elapsed = time.perf_counter() - start
    print(format_table(results))
    failed = [r.name for r in results if not r.passed]
    if elapsed > TIME_BUDGET:
        print(f"warning: invariant suite took {elapsed:.1f}s, over the {TIME_BUDGET:.0f}s budget")
    if failed:
        print(f"FAILED invariants: {', '.join(failed)}")
        return EXIT_CHECK
    print(f"all {len(results)} invariants passed in {elapsed:.1f}s")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="bridgekit", description=__doc__.splitlines()[0])
    parser.add_argument("--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a regressor from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--steps", type=int, help="override train.steps")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="generate samples from a checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--out")
    p.add_argument("--oracle", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("curvature", help="bridge vs vp path curvature")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--n", type=int, default=N_COUPLING)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_curvature)

    p = sub.add_parser("schedule-dump", help="tabulate a noise schedule as CSV")
    p.add_argument("--config")
    p.add_argument("--kind", default="sb-quadratic-flip")
    p.add_argument("--n", type=int, default=101)
    p.add_argument("--out")
    p.set_defaults(func=cmd_schedule_dump)

    p = sub.add_parser("toy-demo", help="train and sample the 2-d toy transport")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--steps", type=int)
    p.add_argument("--n", type=int, default=2000)
    p.set_defaults(func=cmd_toy_demo)

    p = sub.add_parser("check", help="run the invariant suite")
    p.add_argument("--inject-fault", choices=FAULTS, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CompatibilityError, CheckpointError) as exc:
        print(f"incompatible checkpoint: {exc}", file=sys.stderr)
        return EXIT_COMPAT


if __name__ == "__main__":
    sys.exit(main())
