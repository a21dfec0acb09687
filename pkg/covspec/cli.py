"""
Command line front end: `covspec run|sweep|serve-edge|run-device|print-config|oracle`.
"""
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import argparse
import itertools
import sys

import numpy as np
from tqdm import tqdm

from covspec.common import LOG_LEVELS, logger, set_log_level
from covspec.config import ExperimentConfig, annotated_yaml, load, resolve_knob
from covspec.errors import ConfigError, InputError, ProtocolError, TransportError
from covspec.harness.episode import EpisodeSetup, make_edge, run_episode
from covspec.harness.metrics import RunReport
from covspec.harness.oracle import MAX_HORIZON, MAX_K, MAX_VOCAB, exactness_oracle
from covspec.harness.records import (DetailRecorder, FingerPrinter, baseline_rows, csv_row, write_csv)
from covspec.models import SyntheticModelPair
from covspec.probcore import SeededRng
from covspec.stop_watch import print_times
from covspec.transport.sockets import EdgeServer, Hello, SocketEndpoint

EXIT_CONFIG = 2
EXIT_PROTOCOL = 3
EXIT_TRANSPORT = 4

# one row of the ablation table each; overrides on top of the loaded config
ABLATIONS: Dict[str, List[str]] = {
    'all-on': [],
    'full-token': ['selection.mode=full'],
    'random-token': ['selection.mode=random'],
    'wo-gating': ['drafting.gating=false'],
    'wo-adaptive-length': ['drafting.adaptive=false'],
    'wo-branching': ['drafting.branching=false'],
    'wo-dvc': ['drafting.decoupled=false'],
    'vanilla': ['selection.mode=full', 'drafting.gating=false', 'drafting.adaptive=false',
                'drafting.branching=false', 'drafting.decoupled=false'],
}

CONFIG_HEADER = (
    "# Default covspec parameters YAML:\n"
    "\n"
    "# The YAML file passed to covspec run/sweep/serve-edge/run-device\n"
    "# can be any subset of these parameters, including an empty file.\n"
    "\n"
    "# 'reference setup: ...' marks a value of the reference deployment and names where it comes from;\n"
    "# everything else is a heuristic default.\n"
    "\n"
)

RUNS_CSV = 'runs.csv'
DETAILS_JSONL = 'details.jsonl'


def load_config(args: argparse.Namespace, extra: Sequence[str] = ()) -> ExperimentConfig:
    overrides = list(args.override) + list(extra)
    if getattr(args, 'seed', None) is not None:
        overrides.append(f'seed={args.seed}')
    if args.params is None:
        return load({}, overrides)
    return ExperimentConfig.from_yaml_file(args.params, overrides)


def build_models(config: ExperimentConfig, debug_dir: Optional[Path]) -> Optional[SyntheticModelPair]:
    if debug_dir is None:
        return None
    return SyntheticModelPair(config.model.vocab_size, config.model.agreement, config.seed, debug_dir=debug_dir)


def episode_seeds(config: ExperimentConfig) -> List[int]:
    return [config.seed + i for i in range(config.episodes)]


def write_outputs(output_dir: Path, results: Iterable[Tuple[str, ExperimentConfig, RunReport]],
                  extra_rows: Sequence[dict] = ()):
    recorder = DetailRecorder(output_dir / DETAILS_JSONL)
    rows = []
    for run_id, config, report in results:
        recorder.record_parameter(run_id, config)
        recorder.record_run(run_id, report)
        rows.append(csv_row(run_id, config, report))
    rows.extend(extra_rows)
    write_csv(output_dir / RUNS_CSV, rows)
    logger.info(f"wrote {len(rows)} rows to {output_dir / RUNS_CSV}")


def cmd_run(args: argparse.Namespace):
    config = load_config(args)
    fingerprinter = FingerPrinter(args.fingerprint)
    results = []
    for seed in episode_seeds(config):
        episode_config = config.for_seed(seed)
        report = run_episode(episode_config, reference_correction=args.reference_correction,
                             models=build_models(episode_config, args.debug_dir))
        fingerprinter.append_report(report)
        results.append((f'run-s{seed}', episode_config, report))
    write_outputs(args.output_dir, results)
    fingerprinter.record()
    print_times()


def parse_grid(grid: Sequence[str]) -> List[List[str]]:
    """
    `key=v1,v2` entries to the cross product of override lists
    """
    axes = []
    for entry in grid:
        key, sep, values = entry.partition('=')
        if not sep or not values:
            raise ConfigError(f"grid entry {entry!r} is not of the form key=v1,v2,...")
        path = resolve_knob(key.strip())
        axes.append([f'{path}={value.strip()}' for value in values.split(',')])
    return [list(combo) for combo in itertools.product(*axes)]


def short_override(override: str) -> str:
    path, _, value = override.partition('=')
    return f"{path.split('.')[-1]}={value}"


def _sweep_job(job: Tuple[str, ExperimentConfig, bool]) -> Tuple[str, ExperimentConfig, RunReport]:
    run_id, config, reference_correction = job
    return run_id, config, run_episode(config, reference_correction=reference_correction)


def sweep_jobs(args: argparse.Namespace) -> List[Tuple[str, ExperimentConfig, bool]]:
    presets = [(name, ABLATIONS[name]) for name in ABLATIONS] if args.ablation else [('', [])]
    combos = parse_grid(args.grid)
    jobs = []
    for (preset, preset_overrides), combo in itertools.product(presets, combos):
        config = load_config(args, preset_overrides + combo)
        label = ','.join(([preset] if preset else []) + [short_override(c) for c in combo]) or 'base'
        for seed in episode_seeds(config):
            jobs.append((f'{label}-s{seed}', config.for_seed(seed), args.reference_correction))
    return jobs


def cmd_sweep(args: argparse.Namespace):
    jobs = sweep_jobs(args)
    logger.info(f"sweeping {len(jobs)} runs with {args.jobs} worker(s)")
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as executor:
            results = list(tqdm(executor.map(_sweep_job, jobs), total=len(jobs), desc='sweep'))
    else:
        results = [_sweep_job(job) for job in tqdm(jobs, desc='sweep')]
    extra_rows = []
    if args.ablation:
        for run_id, config, report in results:
            if run_id.startswith('all-on'):
                extra_rows.extend(baseline_rows(run_id[len('all-on'):], config, report))
    write_outputs(args.output_dir, results, extra_rows)


def cmd_serve_edge(args: argparse.Namespace):
    overrides = [f'transport.port={args.port}'] if args.port is not None else []
    if args.host is not None:
        overrides.append(f'transport.host={args.host}')
    config = load_config(args, overrides)
    seeds = episode_seeds(config)

    def make_session(session_idx: int):
        episode_config = config.for_seed(seeds[session_idx % len(seeds)])
        setup = EpisodeSetup.build(episode_config, build_models(episode_config, args.debug_dir))
        hello = Hello(vocab_size=episode_config.model.vocab_size, config_hash=episode_config.hello_hash())
        logger.verbose(f"session {session_idx} serves seed {episode_config.seed}")
        return hello, make_edge(episode_config, setup, args.reference_correction)

    server = EdgeServer(config.transport, make_session)
    server.serve(max_sessions=args.sessions)


def parse_address(addr: str) -> List[str]:
    host, sep, port = addr.rpartition(':')
    if not sep or not host or not port.isdigit():
        raise ConfigError(f"address {addr!r} is not of the form host:port")
    return [f'transport.host={host}', f'transport.port={port}']


def cmd_run_device(args: argparse.Namespace):
    config = load_config(args, parse_address(args.addr) if args.addr is not None else [])
    fingerprinter = FingerPrinter(args.fingerprint)
    results = []
    for seed in episode_seeds(config):
        episode_config = config.for_seed(seed)
        hello = Hello(vocab_size=episode_config.model.vocab_size, config_hash=episode_config.hello_hash())

        def endpoint(timeline, clock, episode_config=episode_config, hello=hello):
            return SocketEndpoint(episode_config.transport, hello, timeline, episode_config.payload,
                                  episode_config.model.vocab_size, clock=clock)

        report = run_episode(episode_config, endpoint=endpoint, models=build_models(episode_config, args.debug_dir))
        fingerprinter.append_report(report)
        results.append((f'device-s{seed}', episode_config, report))
    write_outputs(args.output_dir, results)
    fingerprinter.record()


def cmd_print_config(args: argparse.Namespace):
    config = load_config(args) if args.params is not None or args.override else None
    print(CONFIG_HEADER + annotated_yaml(config), end='')


def random_table_pair(rng: SeededRng) -> Tuple[np.ndarray, np.ndarray, int, int]:
    """
    a random (p_d, p_t) pair with one row per position, plus k and horizon, all within the caps
    """
    gen = rng.generator()
    vocab = int(gen.integers(2, MAX_VOCAB + 1))
    k = int(gen.integers(1, MAX_K + 1))
    horizon = int(gen.integers(1, MAX_HORIZON + 1))

    def table():
        rows = gen.dirichlet(np.full(vocab, 0.7), size=horizon)
        # some zero entries, so disjoint supports are exercised
        rows[gen.random(rows.shape) < 0.2] = 0.0
        rows[np.arange(horizon), gen.integers(0, vocab, size=horizon)] += 0.05
        return rows / rows.sum(axis=1, keepdims=True)
    return table(), table(), k, horizon


def run_oracle(trials: int, seed: int) -> float:
    rng = SeededRng(seed, 'oracle/tables')
    worst = 0.0
    for trial in tqdm(range(trials), desc='oracle'):
        p_d, p_t, k, horizon = random_table_pair(rng.fork(str(trial)))
        worst = max(worst, exactness_oracle(p_d, p_t, k, horizon))
    return worst


def cmd_oracle(args: argparse.Namespace):
    worst = run_oracle(args.trials, args.seed if args.seed is not None else 0)
    print(f"max total variation over {args.trials} table pairs: {worst:.3e}")
    if worst >= args.tolerance:
        raise ProtocolError(f"committed law deviates from the target law by {worst:.3e}")


def add_config_arguments(parser: argparse.ArgumentParser, seed: bool = True):
    parser.add_argument("params", type=Path, nargs='?',
                        help="YAML parameter file (can be an empty file or omitted for all default values)")
    parser.add_argument("--override", action='append', default=[], metavar="KEY=VALUE",
                        help="sets a knob by dotted path or by its unique field name, e.g. snr_db=20")
    if seed:
        parser.add_argument("--seed", type=int, help="seed of the first episode")
    parser.add_argument("--debug-dir", type=Path,
                        help="directory where every model call is pickled for debugging")


def add_output_arguments(parser: argparse.ArgumentParser, fingerprint: bool = True):
    parser.add_argument("--output-dir", type=Path, default=Path('.'),
                        help=f"directory for {RUNS_CSV} and {DETAILS_JSONL}")
    if fingerprint:
        parser.add_argument("--fingerprint", type=Path, help="file to store fingerprint (used for testing)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='covspec',
                                     description="device-edge collaborative speculative decoding experiments")
    parser.add_argument("--log-level", choices=list(LOG_LEVELS.keys()), default='info',
                        help="logging level of the covspec logger")
    subparsers = parser.add_subparsers(dest='command', required=True)

    run = subparsers.add_parser('run', help="run loopback episodes")
    add_config_arguments(run)
    add_output_arguments(run)
    run.add_argument("--reference-correction", action='store_true',
                     help="the edge corrects rejections with its own copy of the draft model")
    run.set_defaults(func=cmd_run)

    sweep = subparsers.add_parser('sweep', help="run the cross product of a parameter grid")
    add_config_arguments(sweep)
    add_output_arguments(sweep, fingerprint=False)
    sweep.add_argument("--grid", action='append', default=[], metavar="KEY=V1,V2,...",
                       help="one axis of the grid; may be repeated")
    sweep.add_argument("--ablation", action='store_true',
                       help=f"crosses the grid with the ablation presets {', '.join(ABLATIONS)} "
                            f"and adds the edge-only and device-only baseline rows")
    sweep.add_argument("--jobs", type=int, default=1, help="number of worker processes")
    sweep.add_argument("--reference-correction", action='store_true',
                       help="the edge corrects rejections with its own copy of the draft model")
    sweep.set_defaults(func=cmd_sweep)

    serve = subparsers.add_parser('serve-edge', help="serve verification sessions over a socket")
    add_config_arguments(serve)
    serve.add_argument("--host", type=str, help="interface to bind (transport.host)")
    serve.add_argument("--port", type=int, help="port to listen on (transport.port)")
    serve.add_argument("--sessions", type=int, help="stop after this many sessions (default: serve forever)")
    serve.add_argument("--reference-correction", action='store_true',
                       help="correct rejections on the edge with its own copy of the draft model")
    serve.set_defaults(func=cmd_serve_edge)

    device = subparsers.add_parser('run-device', help="run episodes against a serving edge")
    add_config_arguments(device)
    add_output_arguments(device)
    device.add_argument("--addr", type=str, metavar="HOST:PORT", help="address of the edge")
    device.set_defaults(func=cmd_run_device)

    print_config = subparsers.add_parser('print-config', help="prints the parameters YAML with provenance and exits")
    add_config_arguments(print_config, seed=False)
    print_config.set_defaults(func=cmd_print_config)

    oracle = subparsers.add_parser('oracle', help="exactness check over random distribution tables")
    oracle.add_argument("--trials", type=int, default=200, help="number of random table pairs")
    oracle.add_argument("--seed", type=int, help="seed of the table generator")
    oracle.add_argument("--tolerance", type=float, default=1e-12,
                        help="largest total-variation distance still counted as exact")
    oracle.set_defaults(func=cmd_oracle)
    return parser


def run_command(argv: Optional[Sequence[str]] = None) -> int:
    """
    parses argv, runs the subcommand and maps covspec errors to exit codes
    """
    args = build_parser().parse_args(argv)
    set_log_level(args.log_level)
    try:
        args.func(args)
    except (ConfigError, InputError) as exc:
        logger.error(f"configuration error: {exc}")
        return EXIT_CONFIG
    except ProtocolError as exc:
        logger.error(f"protocol fault: {type(exc).__name__}: {exc}")
        return EXIT_PROTOCOL
    except TransportError as exc:
        logger.error(f"transport error: {type(exc).__name__}: {exc}")
        return EXIT_TRANSPORT
    return 0


def main():
    sys.exit(run_command())


if __name__ == "__main__":
    main()
