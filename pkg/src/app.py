"""
Transmission-line channel toolkit

Command-line front end: builds the link model of a topology file and writes
transfer functions, kernels, lifted matrices, simulations, harmonic estimates
and cross-model validation reports as CSV/JSON.

Exit codes: 0 success, 1 validation failure, 2 usage or model error.
"""

import argparse
import logging
import traceback

from src.components.commands import COMMANDS, RunConfig, run
from src.utils.topology import TopologyError
from src.utils.validation import ComputationError, ValidationError

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    datefmt='%Y-%m-%d %H:%M:%S'
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION_FAILED = 1
EXIT_USAGE = 2

HELP = {
    "tf": "write the end-to-end transfer function",
    "kernels": "write the ABCD, alternative and channel kernels",
    "lift": "write the lifted matrices of the cascade",
    "simulate": "simulate random payloads through the lifted link",
    "estimate": "estimate harmonic responses from captured blocks",
    "validate": "run the cross-model consistency checks",
}


def _probability(text):
    value = float(text)
    if not 0 < value <= 1:
        raise argparse.ArgumentTypeError(f"{text} is not in (0, 1]")
    return value


def _positive_int(text):
    value = int(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"{text} is not a positive integer")
    return value


def _nonnegative_int(text):
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"{text} is negative")
    return value


def build_parser():
    """Argument parser with one subcommand per command."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--topology", required=True, metavar="PATH", help="topology file")
    common.add_argument("--out", default="out", metavar="DIR", help="output directory")
    common.add_argument("--seed", type=int, default=0, help="seed of every random stream")
    common.add_argument("--threshold", type=_probability, metavar="X",
                        help="kernel energy threshold in (0, 1]")
    common.add_argument("--blocks", type=_positive_int, metavar="N", help="blocks to simulate")
    common.add_argument("--p", type=_positive_int, metavar="N", help="block size")
    common.add_argument("--m", type=_nonnegative_int, metavar="N", help="harmonic order")
    common.add_argument("--noise-snr-db", type=float, metavar="X",
                        help="add white noise at this output SNR")
    common.add_argument("--cables", metavar="PATH", help="cable parameter file")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("--quiet", action="store_true", help="warnings and errors only")

    parser = argparse.ArgumentParser(
        prog="tlchannel", description="Transmission-line channel toolkit"
    )
    commands = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub = commands.add_parser(name, parents=[common], help=HELP[name])
        if name == "simulate":
            sub.add_argument("--mode", choices=("tz", "ibi"), default="tz",
                             help="trailing-zeros or full-block simulation")
        if name == "estimate":
            sub.add_argument("--inputs", nargs=2, metavar=("PAYLOADS", "OUTPUTS"),
                             help="captured payload and output block files")
            sub.add_argument("--taps", type=_positive_int, metavar="N",
                             help="taps per harmonic")
        if name == "validate":
            sub.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    return parser


def _config(args):
    return RunConfig(
        command=args.command,
        topology=args.topology,
        out=args.out,
        seed=args.seed,
        threshold=args.threshold,
        blocks=args.blocks,
        p=args.p,
        m=args.m,
        noise_snr_db=args.noise_snr_db,
        cables=args.cables,
        inputs=tuple(getattr(args, "inputs", None) or ()),
        taps=getattr(args, "taps", None),
        mode=getattr(args, "mode", "tz"),
        corrupt=getattr(args, "corrupt", False),
    )


def main(argv=None):
    """Main application entry point.

    Parses the arguments, runs one command and maps its outcome to an exit code.

    Args:
        argv: Argument list (sys.argv[1:] when None)

    Returns:
        int: Exit code
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)
    elif args.quiet:
        logging.getLogger().setLevel(logging.WARNING)

    try:
        config = _config(args)
        logger.info(f"Running '{config.command}' on {config.topology}")
        result = run(config)
    except TopologyError as e:
        logger.error(f"Topology error: {e}")
        return EXIT_USAGE
    except ComputationError as e:
        logger.error(f"Computation error: {e}")
        return EXIT_USAGE
    except ValidationError as e:
        logger.error(f"Validation error: {e}")
        return EXIT_USAGE
    except OSError as e:
        logger.error(f"File error: {e}")
        return EXIT_USAGE
    except Exception as e:
        logger.error(f"Unexpected error: {e}")
        logger.error(traceback.format_exc())
        return EXIT_USAGE

    if config.command == "validate" and not result["passed"]:
        logger.error(f"Validation {result['verdict']}")
        return EXIT_VALIDATION_FAILED
    for path in result.get("files", []):
        logger.debug(f"Wrote {path}")
    return EXIT_OK
