#!/usr/bin/env python
# -*- coding: utf-8 -*-
import argparse
import logging
import os.path
import sys

from tabulate import tabulate
from termcolor import colored

from libs import __version__
from libs.checkpoint_io import CheckpointFileError
from libs.constants import (SETTING_MASTER_SEED, SETTING_OUT_DIR, SETTING_PARALLELISM, SETTING_TARGETS,
                            TARGETS)
from libs.ensemble import ManifestError, StoreError
from libs.experiment import (ConfigError, ExperimentConfig, calibrate, generate_ground_truth,
                             read_ground_truth, resummarize, verify, write_truth)
from libs.likelihood import LikelihoodError
from libs.posterior_io import (GROUND_TRUTH_NAME, OBSERVATIONS_NAME, RIBBON_COLUMNS, RIBBONS_NAME, EmitError,
                               ResultWriter, read_observations)
from libs.seir_sim import InvalidParamsError, OverrideError, SimulationError
from libs.settings import Settings
from libs.sis_engine import CheckpointNotFoundError, DegenerateWeightsError, MissingTrajectoryError, WindowError
from libs.utils import setup_logging

__appname__ = 'EpiCalib'

logger = logging.getLogger(__appname__)

HERE = os.path.dirname(os.path.abspath(__file__))
CONFIG_DIR = os.path.join(HERE, 'configs')

HANDLED_ERRORS = (ConfigError, CheckpointFileError, ManifestError, StoreError, LikelihoodError, EmitError,
                  InvalidParamsError, OverrideError, SimulationError, CheckpointNotFoundError,
                  DegenerateWeightsError, MissingTrajectoryError, WindowError, FileNotFoundError)


def build_parser():
    argparser = argparse.ArgumentParser(
        prog='epicalib',
        description='Sequential calibration of a checkpointed stochastic SEIR simulator.')
    argparser.add_argument('--version', action='version', version='%(prog)s ' + __version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='experiment config file (defaults to configs/<scale>.cfg)')
    common.add_argument('--scale', choices=('full', 'desk'), help='particle budget preset')
    common.add_argument('--seed', type=int, help='master seed')
    common.add_argument('--out', help='output directory')
    common.add_argument('--targets', choices=TARGETS, help='calibration targets')
    common.add_argument('--parallelism', type=int, help='worker processes')
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument('-q', '--quiet', action='store_true', help='warnings only, no progress bars')
    verbosity.add_argument('-v', '--verbose', action='store_true', help='debug logging')

    commands = argparser.add_subparsers(dest='command')
    commands.required = True
    commands.add_parser('truth', parents=[common], help='synthesize ground truth and observations')
    calibrate_cmd = commands.add_parser('calibrate', parents=[common], help='run the sequential calibration')
    calibrate_cmd.add_argument('--observations', help='observations CSV (defaults to <out>/observations.csv)')
    commands.add_parser('summarize', parents=[common], help='rebuild ribbons from an emitted bundle')
    verify_cmd = commands.add_parser('verify', parents=[common], help='coverage of the hidden truth')
    verify_cmd.add_argument('--truth', help='ground truth CSV (defaults to <out>/ground_truth.csv)')
    return argparser


def load_config(args):
    path = args.config or os.path.join(CONFIG_DIR, '{0}.cfg'.format(args.scale or 'desk'))
    settings = Settings.from_file(path)
    if args.seed is not None:
        settings[SETTING_MASTER_SEED] = args.seed
    if args.out is not None:
        settings[SETTING_OUT_DIR] = args.out
    if args.targets is not None:
        settings[SETTING_TARGETS] = args.targets
    if args.parallelism is not None:
        settings[SETTING_PARALLELISM] = args.parallelism
    logger.debug('Loaded config %s', path)
    return ExperimentConfig.from_settings(settings, scale=args.scale)


def run_truth(config, args):
    truth = generate_ground_truth(config)
    for path in write_truth(truth, config.out_dir):
        logger.info('Wrote %s', path)
    return 0


def run_calibrate(config, args):
    path = args.observations or os.path.join(config.out_dir, OBSERVATIONS_NAME)
    if not os.path.exists(path) and args.observations is None:
        logger.info('No observations in %s; synthesizing ground truth first', config.out_dir)
        write_truth(generate_ground_truth(config), config.out_dir)
    observations = read_observations(path, with_deaths=True)
    output = calibrate(config, observations, progress=not args.quiet and sys.stderr.isatty())
    for info in output.summary.diagnostics:
        logger.info('Window %(window)d (days %(first_day)d-%(last_day)d): ESS %(ess).1f, log evidence %(log_evidence).3f',
                    info)
    logger.info('Wrote %d files to %s', len(output.files), config.out_dir)
    return 0


def run_summarize(config, args):
    summary = resummarize(config.out_dir, len(config.plan))
    with ResultWriter(config.out_dir) as writer:
        writer.frame(RIBBONS_NAME, summary.ribbons, RIBBON_COLUMNS)
    rows = []
    for window, cloud in sorted(summary.clouds.items()):
        weights = cloud['weight_class'] / cloud['weight_class'].sum()
        rows.append([window, len(cloud), float((cloud['theta'] * weights).sum()), float((cloud['rho'] * weights).sum())])
    print(tabulate(rows, headers=['window', 'distinct', 'mean theta', 'mean rho'], floatfmt='.4f'))
    return 0


def run_verify(config, args):
    truth = read_ground_truth(args.truth or os.path.join(config.out_dir, GROUND_TRUTH_NAME))
    table, widths = verify(config.out_dir, truth, config.plan)
    rows = []
    for row in table.to_dict('records'):
        rows.append([row['window'], row['days'],
                     row['theta'], '[{0:.3f}, {1:.3f}]'.format(row['theta_lo'], row['theta_hi']),
                     _mark(row['theta_covered']),
                     row['rho'], '[{0:.3f}, {1:.3f}]'.format(row['rho_lo'], row['rho_hi']),
                     _mark(row['rho_covered'])])
    print(tabulate(rows, headers=['window', 'days', 'theta', '90% interval', '', 'rho', '90% interval', ''],
                   floatfmt='.3f'))
    print(tabulate(sorted(widths.items()), headers=['series', 'mean 90% ribbon width'], floatfmt='.2f'))
    return 0 if table['theta_covered'].all() else 1


def _mark(covered):
    return colored('ok', 'green') if covered else colored('miss', 'red')


COMMANDS = {
    'truth': run_truth,
    'calibrate': run_calibrate,
    'summarize': run_summarize,
    'verify': run_verify,
}


def get_main_app(argv=None):
    """Parse ``argv`` (without the program name), run the command, return its exit code."""
    args = build_parser().parse_args(argv)
    setup_logging(verbose=args.verbose)
    if args.quiet:
        logging.getLogger().setLevel(logging.WARNING)
    try:
        config = load_config(args)
        return COMMANDS[args.command](config, args)
    except HANDLED_ERRORS as e:
        logger.error('%s: %s', type(e).__name__, e)
        return 2


def main():
    """run the command line and exit with its status"""
    return get_main_app(sys.argv[1:])


if __name__ == '__main__':
    sys.exit(main())
