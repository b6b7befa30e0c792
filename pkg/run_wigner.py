#!/usr/bin/env python3
"""
Command-Line Runner for the Wigner Pushforward Solver

This script is the single entry point for batch work: it reads a TOML
configuration (or a shipped preset), validates it completely, and runs one of
the workflows

    verify    the named numerical checks, JSON pass/fail report
    train     the adversarial loop, metrics CSV and checkpoints
    evaluate  signed samples, marginals and moments from a checkpoint
    oracle    grid reference runs: equivalence-sweep or evolve

Exit codes: 0 success, 2 configuration error, 3 numerical divergence,
4 verification failure.
"""

import argparse
import logging
import math
import os
import sys
from typing import Dict, List, Optional

from dotenv import load_dotenv

from evaluation_report import SignedSampleReporter
from experiment_config import (ANALYTIC_FLOWS, ExperimentConfig, apply_overrides, config_from_dict,
                               load_config, load_preset, save_config, validate_experiment)
from oracle import (analytic_flow, equivalence_sweep, gaussian_packet, split_step_evolve, uniform_grid,
                    wigner_transform)
from phase_core import ConfigValidationError, RandomStreams
from potentials import UnknownNameError, build_potential
from pushforward import build_decomposition
from residual import NonFiniteResidualError
from run_store import CheckpointFormatError, RunStore
from testfuncs import init_test_set
from trainer import DivergenceError, TrainState, WignerTrainer
from verification_suite import VerificationSuite


EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
EXIT_VERIFICATION = 4
EXIT_INTERRUPTED = 130

DEFAULT_PRESET = "verify-default"

logger = logging.getLogger("WignerRunner")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='Path to a TOML experiment file')
    common.add_argument('--preset', help='Name of a shipped preset in presets/')
    common.add_argument('--out', help='Output directory (overrides output.out_dir)')
    common.add_argument('--seed', type=int, help='Run seed (overrides run.seed)')
    common.add_argument('--threads', type=int, default=1, help='Worker threads; 1 keeps outputs byte-identical')

    parser = argparse.ArgumentParser(description='Wigner transport solver: weak adversarial pushforward')
    sub = parser.add_subparsers(dest='command', required=True)
    sub.add_parser('verify', parents=[common], help='Run the numerical verification checks')
    train = sub.add_parser('train', parents=[common], help='Train the signed pushforward')
    train.add_argument('--resume', help='Checkpoint name or path to continue from (up to run.epochs)')

    evaluate = sub.add_parser('evaluate', parents=[common], help='Evaluate a checkpoint')
    evaluate.add_argument('--checkpoint', required=True, help='Checkpoint file (.wgnr)')
    evaluate.add_argument('--times', help='Comma-separated times in [0, T]')
    evaluate.add_argument('--samples', type=int, default=10000, help='Samples per branch and time')

    oracle = sub.add_parser('oracle', parents=[common], help='Grid reference workflows (1D only)')
    oracle.add_argument('task', choices=['equivalence-sweep', 'evolve'])
    oracle.add_argument('potential', nargs='?', help='Potential for evolve (default: oracle.evolve_potential)')
    return parser


def resolve_config(args: argparse.Namespace, fallback: Optional[Dict] = None) -> ExperimentConfig:
    """
    Load --config, else --preset, else the embedded fallback, else the default
    preset (verify only); apply overrides and validate.

    Raises:
        ConfigValidationError: for any rejected key or value
    """
    if args.config and args.preset:
        raise ConfigValidationError("out-of-range", "config", "--config and --preset are exclusive")
    if args.config:
        cfg = load_config(args.config)
    elif args.preset:
        cfg = load_preset(args.preset)
    elif fallback is not None:
        cfg = config_from_dict(fallback)
    elif args.command == 'verify':
        cfg = load_preset(DEFAULT_PRESET)
    else:
        raise ConfigValidationError("missing-key", "config", "pass --config or --preset")
    cfg = apply_overrides(cfg, seed=args.seed, out_dir=args.out)
    validate_experiment(cfg)
    return cfg


def _flow_params(cfg: ExperimentConfig) -> Dict[str, float]:
    return {"mass": cfg.physics.mass, **cfg.potential.params}


def _reference_flow(cfg: ExperimentConfig):
    if cfg.potential.name in ANALYTIC_FLOWS:
        return analytic_flow(cfg.potential.name, _flow_params(cfg))
    return None


def _require_1d(cfg: ExperimentConfig) -> None:
    if cfg.physics.dim != 1:
        raise ConfigValidationError("dimension-mismatch", "physics.dim", "the grid oracle is one-dimensional")


def cmd_verify(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    store = RunStore(cfg.output.out_dir)
    report = VerificationSuite(cfg, store, args.threads).run()
    passed = sum(check["passed"] for check in report["checks"])
    logger.info(f"Verification: {passed}/{len(report['checks'])} checks passed")
    if not report["passed"]:
        logger.error(f"First failing check: {report['first_failure']}")
        return EXIT_VERIFICATION
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    consts = cfg.physics
    store = RunStore(cfg.output.out_dir)
    resumed = None
    if args.resume:
        resumed = TrainState.from_container(*store.load_checkpoint(args.resume))
        if resumed.sp.dim != consts.dim:
            raise ConfigValidationError("dimension-mismatch", "physics.dim", "checkpoint and config disagree")
        logger.info(f"Resuming from epoch {resumed.epoch}")
    else:
        metrics_path = store.path("metrics.csv")
        if os.path.exists(metrics_path):
            os.remove(metrics_path)
    save_config(cfg, store.path("config.toml"))

    trainer = WignerTrainer(
        build_potential(cfg.potential.name, consts.dim, cfg.potential.params),
        build_decomposition(cfg.initial.name, consts.dim, consts, cfg.initial.params),
        consts, cfg.run, cfg.residual, cfg.training, cfg.optimizer, cfg.test_set, store,
        threads=args.threads, reference_flow=_reference_flow(cfg), flow_params=_flow_params(cfg),
        record_wallclock=cfg.output.record_wallclock,
        checkpoint_metadata={"config": cfg.model_dump(mode="json")})
    epochs = max(cfg.run.epochs - resumed.epoch, 0) if resumed is not None else None
    try:
        state = trainer.train(state=resumed, epochs=epochs, hidden=cfg.network.hidden,
                              activation=cfg.network.activation, d_base=cfg.network.d_base,
                              freeze_alpha=cfg.initial.freeze_alpha)
    except KeyboardInterrupt:
        logger.info("Interrupted; writing the current state")
        if trainer.current_state is not None:
            trainer.save(trainer.current_state, "interrupted")
        return EXIT_INTERRUPTED

    trainer.save(state, "final")
    final = state.history[-1] if state.history else {}
    summary = {"epochs": state.epoch, "final": final,
               "moment_errors": {str(t): trainer.moment_error(state, t) for t in cfg.training.eval_times}}
    store.write_json(summary, "train_summary.json")
    logger.info(f"Training finished after {state.epoch} epochs: loss={final.get('loss', float('nan')):.4e} "
                f"noise_floor={final.get('noise_floor', float('nan')):.4e}")
    return EXIT_OK


def _parse_times(text: Optional[str], default) -> List[float]:
    if not text:
        return list(default)
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise ConfigValidationError("out-of-range", "times", f"cannot parse --times {text!r}") from e


def cmd_evaluate(args: argparse.Namespace) -> int:
    arrays, meta = RunStore.read_container(args.checkpoint)
    state = TrainState.from_container(arrays, meta)
    cfg = resolve_config(args, fallback=meta.get("config"))
    consts = cfg.physics
    if state.sp.dim != consts.dim:
        raise ConfigValidationError("dimension-mismatch", "physics.dim", "checkpoint and config disagree")

    times = _parse_times(args.times, cfg.training.eval_times or (0.0, cfg.run.horizon))
    reporter = SignedSampleReporter(
        state.sp, build_decomposition(cfg.initial.name, consts.dim, consts, cfg.initial.params),
        consts, cfg.run.horizon, seed=cfg.run.seed, store=RunStore(cfg.output.out_dir),
        reference_flow=_reference_flow(cfg))
    summary = reporter.evaluate(times, args.samples)
    logger.info(f"Evaluation written for {len(times)} time(s); "
                f"{summary['total_negative_bins']} negative marginal bin(s)")
    return EXIT_OK


def _oracle_sweep(cfg: ExperimentConfig, store: RunStore) -> int:
    o = cfg.oracle
    tfs = init_test_set(o.sweep_tests, 1, o.sweep_scale, o.sweep_scale, 0.0,
                        RandomStreams(cfg.run.seed).substream("oracle").generator("test_init"))
    table = equivalence_sweep(tfs, o.sweep_hbars, n_grid=o.n_grid, half_width=o.half_width)
    store.write_table(table, "equivalence_sweep.csv")
    ok = (table["rel_err"] <= 1e-6) | (table["abs_err"] <= 1e-12)
    logger.info(f"Equivalence sweep: {int(ok.sum())}/{len(table)} rows within tolerance, "
                f"max rel_err {table['rel_err'].max():.3e}")
    return EXIT_OK if ok.all() else EXIT_VERIFICATION


def _oracle_evolve(cfg: ExperimentConfig, store: RunStore, name: Optional[str]) -> int:
    o = cfg.oracle
    name = name or o.evolve_potential
    params = dict(cfg.potential.params) if name == cfg.potential.name else {}
    V = build_potential(name, 1, params)
    hbar, mass = cfg.physics.hbar, cfg.physics.mass
    omega = float(params.get("omega", cfg.initial.params.get("omega", 1.0)))
    x0 = float(cfg.initial.params.get("x0", 1.0))
    p0 = float(cfg.initial.params.get("p0", 0.0))

    nodes = uniform_grid(o.n_grid, -o.half_width, o.half_width)
    psi0 = gaussian_packet(nodes, x0, p0, math.sqrt(hbar / (2.0 * mass * omega)), hbar)
    span = o.evolve_periods * 2.0 * math.pi / omega
    psi = split_step_evolve(psi0, V, hbar, mass, span / o.evolve_steps, o.evolve_steps)

    start = wigner_transform(psi0, hbar, nodes)
    end = wigner_transform(psi, hbar, nodes)
    store.save_grid_field(start, "wigner_initial")
    store.save_grid_field(end, "wigner_final")
    distance = math.sqrt(start.integrate((end.values - start.values) ** 2))
    store.write_json({"potential": name, "time": span, "steps": o.evolve_steps,
                      "l2_distance": distance, "norm": psi.norm}, "evolve.json")
    logger.info(f"Evolved {name} for t={span:.6f}: L2 distance to the initial field {distance:.3e}")
    periodic = name == "harmonic" and float(o.evolve_periods).is_integer()
    if periodic and distance > 1e-6:
        logger.error("Harmonic evolution did not return to its initial state after whole periods")
        return EXIT_VERIFICATION
    return EXIT_OK


def cmd_oracle(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    _require_1d(cfg)
    store = RunStore(cfg.output.out_dir)
    if args.task == 'equivalence-sweep':
        return _oracle_sweep(cfg, store)
    return _oracle_evolve(cfg, store, args.potential)


COMMANDS = {
    'verify': cmd_verify,
    'train': cmd_train,
    'evaluate': cmd_evaluate,
    'oracle': cmd_oracle,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, configure logging and map failures to exit codes."""
    load_dotenv()
    args = build_parser().parse_args(argv)

    log_level_name = os.getenv("LOGGING_LEVEL", "INFO").upper()
    logging.basicConfig(
        level=getattr(logging, log_level_name, logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        stream=sys.stdout,
    )
    for logger_name in ('matplotlib', 'numexpr'):
        logging.getLogger(logger_name).setLevel(logging.WARNING)

    try:
        return COMMANDS[args.command](args)
    except (ConfigValidationError, UnknownNameError, CheckpointFormatError) as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except (DivergenceError, NonFiniteResidualError) as e:
        logger.error(f"Numerical divergence: {e}")
        return EXIT_DIVERGENCE


if __name__ == "__main__":
    sys.exit(main())
