# utils/command_utils.py

import argparse
import importlib
import logging
import os
from typing import Any, Callable, Dict

# COMMAND_REGISTRY maps subcommand names to their execute functions
# COMMAND_METADATA_REGISTRY holds the flag schema each command declares
COMMAND_REGISTRY: Dict[str, Callable[..., dict]] = {}
COMMAND_METADATA_REGISTRY: Dict[str, Dict[str, Any]] = {}

COMMON_FLAGS = {
    "config": {"type": "string", "description": "JSON config file with a flat key schema"},
    "seed": {"type": "integer", "description": "Master seed (u64)"},
    "out": {"type": "string", "description": "Output root directory (default: $CORRECTOR_OUT_DIR or runs)"},
}

_JSON_TYPES = {"integer": int, "number": float, "string": str}


def load_commands(commands_dir: str, package: str = "commands") -> Dict[str, Callable[..., dict]]:
    """
    Import every module in commands_dir and register it under the name in its
    COMMAND_METADATA. Modules without an execute function are skipped.
    """
    if not os.path.isdir(commands_dir):
        raise FileNotFoundError(f"Commands directory '{commands_dir}' not found.")

    for filename in sorted(os.listdir(commands_dir)):
        if not filename.endswith(".py") or filename.startswith("__"):
            continue
        module_name = os.path.splitext(filename)[0]
        try:
            module = importlib.import_module(f"{package}.{module_name}")
        except Exception as e:
            logging.error(f"Error loading command module '{module_name}': {e}")
            continue
        if not callable(getattr(module, "execute", None)):
            logging.warning(f"Module '{module_name}' does not have an 'execute' function. Skipping.")
            continue
        metadata = getattr(module, "COMMAND_METADATA", None)
        if metadata is None:
            logging.warning(f"Module '{module_name}' does not have 'COMMAND_METADATA'. Skipping.")
            continue
        name = metadata.get("name", module_name.replace("_", "-"))
        COMMAND_REGISTRY[name] = module.execute
        COMMAND_METADATA_REGISTRY[name] = metadata
    return COMMAND_REGISTRY


def _add_flag(parser: argparse.ArgumentParser, name: str, schema: Dict[str, Any], required: bool) -> None:
    flag = "--" + name.replace("_", "-")
    kwargs: Dict[str, Any] = {"dest": name, "help": schema.get("description"), "default": None}
    kind = schema.get("type", "string")
    if kind == "boolean":
        parser.add_argument(flag, action="store_true", dest=name, help=kwargs["help"], default=None)
        return
    if kind == "array":
        kwargs["nargs"] = "+"
        kwargs["type"] = _JSON_TYPES.get(schema.get("items", {}).get("type", "string"), str)
    else:
        kwargs["type"] = _JSON_TYPES.get(kind, str)
    if "enum" in schema:
        kwargs["choices"] = schema["enum"]
    parser.add_argument(flag, required=required, **kwargs)


def build_parser(prog: str = "corrector", parser_class=argparse.ArgumentParser) -> argparse.ArgumentParser:
    """One subparser per registered command; flags come from each command's JSON-schema properties."""
    parser = parser_class(prog=prog, description="Corrector networks for stale target-embedding buffers.")
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND")
    subparsers.required = True
    for name in sorted(COMMAND_REGISTRY):
        metadata = COMMAND_METADATA_REGISTRY[name]
        params = metadata.get("parameters", {})
        required = set(params.get("required", []))
        sub = subparsers.add_parser(name, help=metadata.get("description"),
                                    description=metadata.get("description"))
        properties = {**COMMON_FLAGS, **params.get("properties", {})}
        for flag, schema in properties.items():
            _add_flag(sub, flag, schema, flag in required)
    return parser


def execute_command(name: str, args: Dict[str, Any]) -> dict:
    """Run a registered command with parsed flags; flags left unset are passed as None."""
    if name not in COMMAND_REGISTRY:
        raise KeyError(f"Unknown command '{name}'")
    logging.info(f"Executing command '{name}'")
    result = COMMAND_REGISTRY[name](**args)
    return result if isinstance(result, dict) else {"result": result}
