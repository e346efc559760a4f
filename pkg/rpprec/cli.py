#!/usr/bin/env python3
"""
rpprec Command Line Interface
Train, evaluate and simulate prompt-personalization runs.
"""

import argparse
import logging
import os
import sys
import traceback
from typing import Any, Dict, List, Optional

from . import PromptPersonalizer, __version__
from .core.exceptions import ConfigError, RPPError
from .core.log_monitor import LogMonitor
from .core.run_monitor import RunMonitor
from .core.utils import load_config_file

RUN_LOG_FILE = 'run.log'
RUN_INFO_FILE = 'run_info.json'

# argparse dest -> configuration key
FLAG_KEYS = {
    'seed': 'RPP_SEED',
    'output_dir': 'RPP_OUTPUT_DIR',
    'mode': 'RPP_MODE',
    'backend': 'RPP_BACKEND',
    'llm_endpoint': 'RPP_LLM_ENDPOINT',
    'llm_model': 'RPP_LLM_MODEL',
    'refiner_endpoint': 'RPP_REFINER_ENDPOINT',
    'refiner_model': 'RPP_REFINER_MODEL',
    'temperature': 'RPP_TEMPERATURE',
    'interactions': 'RPP_INTERACTIONS',
    'population': 'RPP_POPULATION',
    'delimiter': 'RPP_DELIMITER',
    'catalog': 'RPP_CATALOG',
    'user_embeddings': 'RPP_USER_EMBEDDINGS',
    'item_embeddings': 'RPP_ITEM_EMBEDDINGS',
    'text_encoder': 'RPP_TEXT_ENCODER',
    'embedding_endpoint': 'RPP_EMBEDDING_ENDPOINT',
    'num_candidates': 'RPP_NUM_CANDIDATES',
    'n_train': 'RPP_N_TRAIN',
    'n_test': 'RPP_N_TEST',
    'patterns': 'RPP_PERSONALIZED_PATTERNS',
    'output_encoder': 'RPP_OUTPUT_ENCODER',
    'state_dim': 'RPP_STATE_DIM',
    'hidden': 'RPP_HIDDEN',
    'workers': 'RPP_EVAL_WORKERS',
    'log_level': 'RPP_LOG_LEVEL',
    'epochs': 'RPP_EPOCHS',
    'lr_actor': 'RPP_LR_ACTOR',
    'lr_critic': 'RPP_LR_CRITIC',
    'gamma': 'RPP_GAMMA',
    'patience': 'RPP_PATIENCE',
    'max_iters': 'RPP_MAX_ITERS',
    'cadence': 'RPP_UPDATE_CADENCE',
    'grad_clip': 'RPP_GRAD_CLIP',
    'repeats': 'RPP_REPEATS',
    'inference_iters': 'RPP_INFERENCE_ITERS',
    'manual_history_len': 'RPP_MANUAL_HISTORY_LEN',
    'enumeration_budget': 'RPP_ENUMERATION_BUDGET',
    'sim_items': 'RPP_SIM_ITEMS',
    'planted_action': 'RPP_SIM_PLANTED_ACTION',
    'planted_share': 'RPP_SIM_PLANTED_SHARE',
}


def resolve_config(args: argparse.Namespace) -> Dict[str, Any]:
    """Config file values overlaid by every flag given on the command line."""
    config: Dict[str, Any] = {}
    if getattr(args, 'config', None):
        config.update(load_config_file(args.config))
    for dest, key in FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is not None:
            config[key] = value
    return config


def _require_data(parser: argparse.ArgumentParser, config: Dict[str, Any]) -> None:
    if not config.get('RPP_INTERACTIONS') and not config.get('RPP_POPULATION'):
        parser.error("one of --interactions or --population is required")


def cmd_version(args, rpp=None, monitor=None):
    """Show version information."""
    print(f"rpprec version {__version__}")
    return 0


def cmd_train(args, rpp: PromptPersonalizer, monitor: RunMonitor):
    """Train the agents and write the checkpoint."""
    result = rpp.train()
    monitor.record('epochs', len(result.epochs))
    monitor.record('episode_failures', sum(report.failures for report in result.epochs))
    print('\t'.join(('epoch', 'mean_reward', 'mean_best_ndcg10', 'failures')))
    for report in result.epochs:
        print(f"{report.epoch}\t{report.mean_reward:.4f}\t{report.mean_best_ndcg10:.4f}\t{report.failures}")
    print(f"personalized: {', '.join(result.personalized)}")
    print(f"checkpoint: {result.checkpoint_path}")
    return 0


def cmd_eval(args, rpp: PromptPersonalizer, monitor: RunMonitor):
    """Evaluate a checkpoint or a baseline on the test users."""
    report = rpp.evaluate(args.checkpoint or args.baseline)
    monitor.record('eval_failures', report.failures)
    if args.format == 'table':
        print(report.to_table())
    else:
        print(report.to_summary(), end='')
    return 0


def cmd_simulate(args, rpp: PromptPersonalizer, monitor: RunMonitor):
    """Write a seeded simulated population."""
    target = args.out or rpp.output_path('population.json')
    population = rpp.simulate(args.n_users, target)
    monitor.record('simulated_users', len(population.users))
    print(f"population: {target} ({len(population.users)} users, {len(population.catalog)} items)")
    return 0


def cmd_grad_check(args, rpp: PromptPersonalizer, monitor: RunMonitor):
    """Compare analytic and finite-difference gradients."""
    suite = rpp.grad_check(seeds=args.seeds)
    print(suite.to_table())
    print(f"max relative error: {suite.max_rel_error:.3e} (tolerance {suite.tol:.0e})")
    print(f"corrupted gradient error: {suite.corrupted_error:.3e}")
    print("PASSED" if suite.passed else "FAILED")
    return 0 if suite.passed else 1


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='JSON file of RPP_* keys (flags override it)')
    common.add_argument('--seed', type=int, help='master seed')
    common.add_argument('--output-dir', help='directory for every artifact of this run')
    common.add_argument('--mode', choices=['rpp', 'rpp+'], help='rpp+ refines chosen sentences first')
    common.add_argument('--backend', choices=['simulated', 'http'])
    common.add_argument('--llm-endpoint', help='chat-completions URL (key from LLM_API_KEY)')
    common.add_argument('--llm-model')
    common.add_argument('--refiner-endpoint')
    common.add_argument('--refiner-model')
    common.add_argument('--temperature', type=float)
    common.add_argument('--interactions', help='delimited user, item title, timestamp rows')
    common.add_argument('--population', help='population file written by "rpprec simulate"')
    common.add_argument('--delimiter')
    common.add_argument('--catalog', help='action catalog JSON (packaged default otherwise)')
    common.add_argument('--user-embeddings')
    common.add_argument('--item-embeddings')
    common.add_argument('--text-encoder', choices=['hash', 'http'])
    common.add_argument('--embedding-endpoint')
    common.add_argument('--num-candidates', type=int)
    common.add_argument('--n-train', type=int)
    common.add_argument('--n-test', type=int)
    common.add_argument('--patterns', help='comma-separated patterns to personalize')
    common.add_argument('--output-encoder', choices=['gru', 'mean'])
    common.add_argument('--state-dim', type=int)
    common.add_argument('--hidden', type=int)
    common.add_argument('--workers', type=int, help='parallel evaluation workers')
    common.add_argument('--log-level', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
    common.add_argument('-v', '--verbose', action='store_true', help='echo INFO logs to stderr')
    common.add_argument('--debug', action='store_true', help='print tracebacks on failure')
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='rpprec',
        description='rpprec - instance-wise prompt personalization for LLM recommenders',
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument('--version', action='version', version=f'rpprec {__version__}')
    subparsers = parser.add_subparsers(dest='command', help='Available commands')
    common = _common_parser()

    version_parser = subparsers.add_parser('version', help='Show version information')
    version_parser.set_defaults(func=cmd_version, needs_data=False)

    train_parser = subparsers.add_parser('train', parents=[common], help='Train the prompt agents')
    train_parser.add_argument('--epochs', type=int)
    train_parser.add_argument('--lr-actor', type=float)
    train_parser.add_argument('--lr-critic', type=float)
    train_parser.add_argument('--gamma', type=float)
    train_parser.add_argument('--patience', type=int)
    train_parser.add_argument('--max-iters', type=int)
    train_parser.add_argument('--cadence', choices=['episode', 'step'])
    train_parser.add_argument('--grad-clip', type=float)
    train_parser.set_defaults(func=cmd_train, needs_data=True)

    eval_parser = subparsers.add_parser('eval', parents=[common], help='Evaluate a checkpoint or a baseline')
    source = eval_parser.add_mutually_exclusive_group(required=True)
    source.add_argument('--checkpoint', help='checkpoint written by "rpprec train"')
    source.add_argument('--baseline', choices=['manual', 'enumeration'])
    eval_parser.add_argument('--repeats', type=int)
    eval_parser.add_argument('--inference-iters', type=int)
    eval_parser.add_argument('--manual-history-len', type=int)
    eval_parser.add_argument('--enumeration-budget', type=int)
    eval_parser.add_argument('--format', choices=['table', 'summary'], default='summary')
    eval_parser.set_defaults(func=cmd_eval, needs_data=True)

    sim_parser = subparsers.add_parser('simulate', parents=[common], help='Generate a simulated population')
    sim_parser.add_argument('--n-users', type=int, required=True)
    sim_parser.add_argument('--out', help='population file (default: <output-dir>/population.json)')
    sim_parser.add_argument('--sim-items', type=int)
    sim_parser.add_argument('--planted-action', help='joint action such as 1:0,2:3,3:8,4:4')
    sim_parser.add_argument('--planted-share', type=float)
    sim_parser.set_defaults(func=cmd_simulate, needs_data=False)

    grad_parser = subparsers.add_parser('grad-check', parents=[common], help='Check analytic gradients')
    grad_parser.add_argument('--seeds', type=int, default=20)
    grad_parser.set_defaults(func=cmd_grad_check, needs_data=False)
    return parser


def _console_handler(verbose: bool) -> logging.Handler:
    handler = logging.StreamHandler(sys.stderr)
    handler.setLevel(logging.INFO if verbose else logging.WARNING)
    handler.setFormatter(logging.Formatter('%(levelname)s %(name)s: %(message)s'))
    return handler


def _run(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    config = resolve_config(args)
    if args.needs_data:
        _require_data(parser, config)
    rpp = PromptPersonalizer(config=config)
    os.makedirs(rpp.output_dir, exist_ok=True)

    package_logger = logging.getLogger('rpprec')
    console = _console_handler(args.verbose)
    package_logger.addHandler(console)
    log_monitor = LogMonitor(rpp.config, log_path=rpp.output_path(RUN_LOG_FILE))
    monitor = RunMonitor(rpp.config, command=args.command)
    try:
        with log_monitor:
            try:
                return args.func(args, rpp, monitor)
            finally:
                for name, value in rpp.stats().items():
                    monitor.record(name, value)
                monitor.write(rpp.output_path(RUN_INFO_FILE), log_monitor.summary())
    finally:
        package_logger.removeHandler(console)


def main(argv: Optional[List[str]] = None) -> int:
    """Main CLI entry point; returns the process exit code."""
    parser = build_parser()
    args = None
    try:
        args = parser.parse_args(argv)
        if not args.command:
            parser.print_help()
            return 0
        if args.command == 'version':
            return cmd_version(args)
        return _run(args, parser)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    except ConfigError as exc:
        if getattr(args, 'debug', False):
            traceback.print_exc()
        print(f"rpprec: configuration error: {exc}", file=sys.stderr)
        return 2
    except (RPPError, OSError, RuntimeError, ValueError) as exc:
        if getattr(args, 'debug', False):
            traceback.print_exc()
        print(f"rpprec: error: {exc}", file=sys.stderr)
        return 1


if __name__ == '__main__':
    sys.exit(main())
