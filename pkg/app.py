"""
Feeder Impedance Identification

Command-line entry point: simulate smart-meter data for a radial low-voltage
feeder, identify its line impedances (centrally or with one agent per meter)
and run Monte Carlo experiments.
"""

import argparse
import logging
import sys

from config import app_config
from modules.dbci import run_decentralized
from modules.experiment import make_record, run_scenario, summarize
from modules.identify import AlgoConfig, Variant, identify_tree
from modules.simulator import NoiseSpec, add_noise, measure, solve_snapshots
from utils.data_loader import (
    load_measurements,
    load_network,
    load_scenario,
    save_ground_truth,
    save_load_profiles,
    save_measurements,
    save_table,
    save_tables,
    save_trace,
)
from utils.data_processor import records_to_frame
from utils.exceptions import FeederIdError, LineError, NumericalError, ValidationError
from utils.seeding import split_seed

logger = logging.getLogger('feeder_id')


def build_parser():
    parser = argparse.ArgumentParser(prog='feeder-id', description=app_config.APP_TITLE)
    parser.add_argument(
        '--log-level',
        type=str.upper,
        default=app_config.LOG_LEVEL.upper(),
        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'],
    )
    sub = parser.add_subparsers(dest='command', required=True)

    sim = sub.add_parser('simulate', help="simulate a feeder and write meter readings")
    sim.add_argument('--topology', required=True)
    sim.add_argument('--snapshots', type=int, required=True)
    sim.add_argument('--noise-pct', type=float, default=0.0, help="noise class in %% of full scale")
    sim.add_argument('--seed', type=int, default=0)
    sim.add_argument('--load-preset', default='normal', choices=sorted(app_config.LOAD_PRESETS))
    sim.add_argument('--out', required=True)
    sim.add_argument('--truth', help="optional ground-truth CSV")
    sim.add_argument('--loads-out', help="optional CSV of the load profiles used")

    ident = sub.add_parser('identify', help="identify line impedances from meter readings")
    ident.add_argument('--measurements', required=True)
    ident.add_argument('--topology', required=True)
    add_algo_arguments(ident, required=True)
    ident.add_argument('--noise-pct', type=float, default=float('nan'), help="label for the results file")
    ident.add_argument('--out', required=True)

    dec = sub.add_parser('dbci', help="decentralized identification with one agent per meter")
    dec.add_argument('--topology', required=True)
    dec.add_argument('--measurements', required=True)
    dec.add_argument('--trace', required=True)
    add_algo_arguments(dec)
    dec.add_argument('--out', required=True)

    exp = sub.add_parser('experiment', help="run a Monte Carlo scenario")
    exp.add_argument('--scenario', required=True, help="scenario JSON or bundled scenario name")
    exp.add_argument('--out-dir', required=True)
    exp.add_argument('--realizations', type=int)
    exp.add_argument('--n-jobs', type=int)
    return parser


def add_algo_arguments(parser, required=False):
    """Per-line solver settings shared by identify and dbci"""
    parser.add_argument(
        '--algo', required=required, default=None if required else Variant.BCI.value, choices=[v.value for v in Variant]
    )
    parser.add_argument('--xr', type=float, help="X/R ratio for lines whose topology entry gives none")
    parser.add_argument(
        '--ignore-topology-xr', action='store_true', help="do not use the per-line X/R ratios of the topology"
    )
    parser.add_argument('--mu', type=float, default=0.0)
    parser.add_argument('--alpha', type=float, default=app_config.DEFAULT_ALPHA)
    parser.add_argument('--eps', type=float, default=app_config.DEFAULT_EPS)
    parser.add_argument('--max-iters', type=int, default=app_config.DEFAULT_MAX_ITERS)


def algo_config(args, net):
    """
    AlgoConfig from the shared flags

    Topology X/R ratios take precedence over --xr, which covers the other lines.
    """
    return AlgoConfig(
        variant=Variant(args.algo),
        xr_ratio=args.xr,
        line_xr={} if args.ignore_topology_xr else dict(net.line_xr),
        mu=args.mu,
        alpha=args.alpha,
        eps=args.eps,
        max_iters=args.max_iters,
    )


def run_simulate(args):
    net = load_network(args.topology, snapshots=args.snapshots, seed=args.seed, preset=args.load_preset)
    state = solve_snapshots(net, args.snapshots)
    ms = measure(state)
    if args.noise_pct > 0:
        spec = NoiseSpec(pct_fs=args.noise_pct / 100.0, seed=split_seed(args.seed, 'noise', args.noise_pct, 0))
        ms = add_noise(ms, spec)
    save_measurements(ms, args.out)
    if args.truth:
        save_ground_truth(state, args.truth)
    if args.loads_out:
        save_load_profiles(net.loads, args.loads_out)


def _results_frame(net, cfg, ms, result, noise_pct):
    record = make_record('cli', cfg, noise_pct, 0, net, result, ms.snapshots)
    return records_to_frame([record])


def run_identify(args):
    net = load_network(args.topology)
    ms = load_measurements(args.measurements)
    cfg = algo_config(args, net)
    result = identify_tree(ms, net, cfg)
    save_table(_results_frame(net, cfg, ms, result, args.noise_pct), args.out)


def run_dbci(args):
    net = load_network(args.topology)
    ms = load_measurements(args.measurements)
    cfg = algo_config(args, net)
    outcome = run_decentralized(net, ms, cfg)
    save_trace(outcome.trace, args.trace)
    record = make_record('dbci', cfg, float('nan'), 0, net, outcome, ms.snapshots)
    save_table(records_to_frame([record]), args.out)


def run_experiment(args):
    sc = load_scenario(args.scenario)
    records = run_scenario(sc, n_jobs=args.n_jobs, realizations=args.realizations)
    tables = {'results': records_to_frame(records)}
    tables.update(summarize(records))
    save_tables(tables, args.out_dir)


COMMANDS = {
    'simulate': run_simulate,
    'identify': run_identify,
    'dbci': run_dbci,
    'experiment': run_experiment,
}


def main(argv=None):
    """
    Main application function

    Returns:
        Process exit code: 0 on success, 2 for invalid input, 3 for numerical failures
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return app_config.EXIT_OK if e.code == 0 else app_config.EXIT_VALIDATION

    logging.basicConfig(level=args.log_level, format=app_config.LOG_FORMAT)
    try:
        COMMANDS[args.command](args)
    except LineError as e:
        logger.error("%s", e)
        return app_config.EXIT_NUMERICAL if e.is_numerical else app_config.EXIT_VALIDATION
    except NumericalError as e:
        logger.error("Numerical failure: %s", e)
        return app_config.EXIT_NUMERICAL
    except ValidationError as e:
        logger.error("Invalid input: %s", e)
        return app_config.EXIT_VALIDATION
    except FeederIdError as e:
        logger.error("%s", e)
        return app_config.EXIT_VALIDATION
    except OSError as e:
        logger.error("File error: %s", e)
        return app_config.EXIT_VALIDATION
    return app_config.EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
