# main.py

import argparse
import json
import logging
import os
import sys
from typing import List, Optional

from termcolor import colored

# Add the project root to PYTHONPATH
project_root = os.path.dirname(os.path.abspath(__file__))
if project_root not in sys.path:
    sys.path.append(project_root)

from utils.command_utils import COMMAND_REGISTRY, build_parser, execute_command, load_commands  # noqa: E402
from utils.config_utils import env_log_level, env_step_logging, load_environment  # noqa: E402
from utils.log_utils import setup_logging, toggle_detailed_step_logging  # noqa: E402

EXIT_OK, EXIT_INVALID, EXIT_FAILURE = 0, 1, 2


class CliParser(argparse.ArgumentParser):
    """Argument errors exit with status 1 instead of argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, colored(f"{self.prog}: error: {message}\n", "red"))


def cli_dispatch(argv: Optional[List[str]] = None) -> int:
    """Parse argv, run one subcommand and map the outcome to an exit code."""
    load_environment()
    setup_logging(project_root, env_log_level())
    if env_step_logging():
        toggle_detailed_step_logging(True)
    if not COMMAND_REGISTRY:
        load_commands(os.path.join(project_root, "commands"))

    parser = build_parser(parser_class=CliParser)
    try:
        args = vars(parser.parse_args(argv))
    except SystemExit as e:
        return int(e.code or 0)

    command = args.pop("command")
    try:
        result = execute_command(command, args)
    except ValueError as e:
        logging.error(f"{command}: invalid input: {e}")
        print(colored(f"Error: {e}", "red"), file=sys.stderr)
        return EXIT_INVALID
    except Exception as e:
        logging.exception(f"{command} failed")
        print(colored(f"Failed: {type(e).__name__}: {e}", "red"), file=sys.stderr)
        return EXIT_FAILURE
    print(json.dumps(result, indent=2, sort_keys=True, default=str))
    return EXIT_OK


def main():
    sys.exit(cli_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
