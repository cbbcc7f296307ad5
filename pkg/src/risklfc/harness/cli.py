"""Command-line entry point: ``risklfc {train,simulate,eval-cost,robustness,stats}``."""
from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from ..lfc_model import GaussianDisturbance, TraceDisturbance
from ..risk_lqr import (
    NoiseStats,
    estimate_noise_stats,
    gaussian_noise_stats,
    mc_evaluate,
    state_weight,
)
from ..sgdmax import StructuredGain, sgdmax_train
from . import io
from .config import ConfigError, ExperimentConfig, load_config
from .simulation import evaluate_on, robustness_sweep, settling_metrics, simulate_closed_loop

log = logging.getLogger("risklfc")

COMMANDS = ("train", "simulate", "eval-cost", "robustness", "stats")
_STATS_STREAM = 2**31 - 2


def disturbance_samples(cfg: ExperimentConfig) -> np.ndarray:
    """The trace itself, or ``stats_samples`` seeded draws from the gaussian model."""
    if isinstance(cfg.disturbance, TraceDisturbance):
        return cfg.disturbance.samples
    rng = np.random.default_rng(np.random.SeedSequence([cfg.train.master_seed, _STATS_STREAM]))
    return cfg.disturbance.block(0, cfg.stats_samples, rng)


def noise_stats_for(cfg: ExperimentConfig, model) -> NoiseStats:
    """Empirical moments of ``B_wd w`` by default; closed forms on request for gaussian noise."""
    if cfg.moments == "analytic":
        return gaussian_noise_stats(model, cfg.disturbance, cfg.spec)
    samples = disturbance_samples(cfg) @ model.B_wd.T
    return estimate_noise_stats(samples, state_weight(model.C, cfg.spec), cfg.spec.delta)


def _load_gain(cfg: ExperimentConfig, path) -> StructuredGain:
    candidates = [Path(path)] if path else [cfg.output_dir / "K_final.json"]
    if not path and cfg.K0_path is not None:
        candidates.append(cfg.K0_path)
    for candidate in candidates:
        if candidate.exists():
            K = io.read_gain_json(candidate)
            if K.pattern != cfg.pattern:
                raise ConfigError([f"gain in {candidate} does not match the graph's sparsity pattern"])
            log.info("using gain from %s", candidate)
            return K
    if path:
        raise ConfigError([f"gain file {path} not found"])
    log.warning("no trained gain found; using the zero gain")
    return StructuredGain.zeros(cfg.pattern)


def _table(rows: list[tuple[str, object]]) -> str:
    width = max(len(k) for k, _ in rows)
    lines = []
    for key, value in rows:
        if isinstance(value, float):
            value = f"{value:.6g}"
        lines.append(f"{key:<{width}}  {value}")
    return "\n".join(lines)


def cmd_train(cfg: ExperimentConfig, args) -> dict:
    model = cfg.emulator()
    stats = noise_stats_for(cfg, model)
    K0 = io.read_gain_json(cfg.K0_path) if cfg.K0_path else StructuredGain.zeros(cfg.pattern)
    if K0.pattern != cfg.pattern:
        raise ConfigError(["K0 does not match the graph's sparsity pattern"])
    K, train_log = sgdmax_train(model, K0, cfg.train, cfg.spec, stats, cfg.disturbance)
    out = io.ensure_dir(cfg.output_dir)
    io.write_train_log_csv(out / "train_log.csv", train_log)
    io.write_gain_json(out / "K_final.json", K)
    io.write_snapshots_json(out / "K_snapshots.json", train_log)
    first, last = train_log.records[0], train_log.records[-1]
    return {
        "iterations": cfg.train.J,
        "initial r0": first.r0,
        "final r0": last.r0,
        "final rc": last.rc,
        "delta_bar": stats.delta_bar,
        "final lambda": last.lam,
        "final spectral radius": last.spectral_radius,
        "rejected steps": sum(not rec.accepted for rec in train_log.records),
        "output": str(out),
    }


def cmd_simulate(cfg: ExperimentConfig, args) -> dict:
    K = _load_gain(cfg, args.gain)
    model = cfg.physical_model()
    traj = simulate_closed_loop(model, K, cfg.scenario, np.random.SeedSequence(cfg.train.master_seed))
    out = io.ensure_dir(cfg.output_dir)
    io.write_trajectory_csv(out / "trajectory.csv", traj)
    summary = {"steps": len(traj), "divergent": traj.divergent}
    if not traj.divergent:
        for area in range(1, cfg.graph.n_areas + 1):
            peak, settle = settling_metrics(traj, cfg.band, area)
            summary[f"area {area} peak |df| / settling s"] = f"{peak:.4g} / {settle:.4g}"
    summary["output"] = str(out / "trajectory.csv")
    return summary


def cmd_eval_cost(cfg: ExperimentConfig, args) -> dict:
    K = _load_gain(cfg, args.gain)
    model = cfg.physical_model()
    stats = noise_stats_for(cfg, model)
    result = {}
    if isinstance(cfg.disturbance, GaussianDisturbance):
        exact = evaluate_on(model, K, cfg.spec, cfg.disturbance)
        result.update({"lyapunov r0": exact.r0, "lyapunov rc": exact.rc, "spectral radius": exact.spectral_radius})
    mc = mc_evaluate(
        model, K.values, cfg.spec, stats, args.horizon, args.burn_in, cfg.disturbance,
        np.random.SeedSequence(cfg.train.master_seed), args.rollouts,
    )
    result.update({"mc r0": mc.r0, "mc rc": mc.rc, "delta_bar": stats.delta_bar, "stable": mc.stable})
    out = io.ensure_dir(cfg.output_dir)
    io.write_json(out / "eval_cost.json", {k: (v if not isinstance(v, float) or math.isfinite(v) else None)
                                           for k, v in result.items()})
    return result


def cmd_robustness(cfg: ExperimentConfig, args) -> dict:
    K = _load_gain(cfg, args.gain)
    report = robustness_sweep(
        cfg.params, cfg.graph, K, cfg.fractions, cfg.robustness_mode, cfg.robustness_draws, cfg.scenario,
        cfg.train.master_seed, cfg.spec, cfg.gaussian_noise, cfg.dt, cfg.method, cfg.include_frequency,
        cfg.area, cfg.band,
    )
    out = io.ensure_dir(cfg.output_dir)
    io.write_json(out / "robustness.json", report.to_json())
    summary = {}
    for e in report.entries:
        summary[f"{e.fraction:.0%} stable"] = f"{e.n_stable}/{e.n_draws}"
        summary[f"{e.fraction:.0%} peak max / settling max"] = f"{e.peak_max:.4g} / {e.settling_max:.4g}"
        summary[f"{e.fraction:.0%} radius max"] = e.radius_max
    summary["output"] = str(out / "robustness.json")
    return summary


def cmd_stats(cfg: ExperimentConfig, args) -> dict:
    model = cfg.emulator()
    trace = TraceDisturbance.from_csv(args.trace) if args.trace else TraceDisturbance(disturbance_samples(cfg))
    if trace.dim != model.n_disturbances:
        raise ConfigError([f"trace has {trace.dim} columns, model expects {model.n_disturbances}"])
    stats = estimate_noise_stats(trace.samples @ model.B_wd.T, state_weight(model.C, cfg.spec), cfg.spec.delta)
    out = io.ensure_dir(cfg.output_dir)
    io.write_json(
        out / "noise_stats.json",
        {
            "n_samples": len(trace),
            "w_bar": stats.w_bar.tolist(),
            "W": stats.W.tolist(),
            "M3": stats.M3.tolist(),
            "m4": stats.m4,
            "delta": stats.delta,
            "delta_bar": stats.delta_bar,
        },
    )
    return {
        "samples": len(trace),
        "|w_bar|": float(np.linalg.norm(stats.w_bar)),
        "tr W": float(np.trace(stats.W)),
        "|M3|": float(np.linalg.norm(stats.M3)),
        "m4": stats.m4,
        "delta_bar": stats.delta_bar,
        "output": str(out / "noise_stats.json"),
    }


_HANDLERS = {
    "train": cmd_train,
    "simulate": cmd_simulate,
    "eval-cost": cmd_eval_cost,
    "robustness": cmd_robustness,
    "stats": cmd_stats,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="experiment JSON file")
    common.add_argument("--seed", type=int, default=None, help="override the master seed")
    common.add_argument("--out", type=Path, default=None, help="override the output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="risklfc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="learn a structured gain with SGDmax")
    gain = argparse.ArgumentParser(add_help=False)
    gain.add_argument("--gain", type=Path, default=None, help="gain JSON (default: <out>/K_final.json)")
    sub.add_parser("simulate", parents=[common, gain], help="roll out a load-step scenario")
    sub.add_parser("robustness", parents=[common, gain], help="transfer a gain to perturbed plants")
    p = sub.add_parser("eval-cost", parents=[common, gain], help="evaluate r0 and rc of a gain")
    p.add_argument("--horizon", type=int, default=200_000, help="Monte-Carlo steps per rollout")
    p.add_argument("--burn-in", type=int, default=1_000)
    p.add_argument("--rollouts", type=int, default=4)
    p = sub.add_parser("stats", parents=[common], help="estimate noise moments from a trace")
    p.add_argument("--trace", type=Path, default=None, help="CSV trace with columns area_1..area_N")
    return parser


def run_experiment(config_path, command: str = "train", seed: int | None = None, out=None, **extra) -> int:
    """Run one subcommand programmatically; returns the process exit status."""
    argv = [command, "--config", str(config_path)]
    if seed is not None:
        argv += ["--seed", str(seed)]
    if out is not None:
        argv += ["--out", str(out)]
    for key, value in extra.items():
        if value is not None:
            argv += [f"--{key}", str(value)]
    return main(argv)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.seed, args.out)
        summary = _HANDLERS[args.command](cfg, args)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(_table([(k, v) for k, v in summary.items()]))
    return 0


if __name__ == "__main__":
    sys.exit(main())
