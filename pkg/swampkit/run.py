"""``swampkit`` command line.

Usage::

    swampkit generate --seed 0 --out data/synth.swmp
    swampkit train --data data/synth.swmp --config cfg.json --out-dir runs/swamp
    swampkit eval --model runs/swamp/model.ckpt --data data/synth.swmp --error class
    swampkit ablate --data data/synth.swmp --param K --values 200,1000 --seeds 3 --out-dir sweeps/K
    swampkit report --runs sweeps --out report.md
    swampkit pipeline
    swampkit --config-file workbench/configs/train/swamp.yaml

Arguments may be written ``--key value``, ``--key=value`` or ``key=value``.
"""

import logging
import os
import sys
from typing import List, Optional, Sequence, Tuple

import hydra
import hydra_zen
from hydra.core.global_hydra import GlobalHydra
from hydra.errors import ConfigCompositionException, InstantiationException, OverrideParseException
from omegaconf import OmegaConf
from omegaconf.errors import MissingMandatoryValue, OmegaConfBaseException

from .commands import LOG_FORMAT, cmd_ablate, cmd_eval, cmd_generate, cmd_pipeline, cmd_report, cmd_train
from .errors import ConfigError, DatasetFormatError, SwampError

_log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_OTHER = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4
EXIT_FORMAT = 5

COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "report": cmd_report,
    "pipeline": cmd_pipeline,
}


def command_store() -> hydra_zen.ZenStore:
    store = hydra_zen.ZenStore(overwrite_ok=True)
    for name, fn in COMMANDS.items():
        store(hydra_zen.builds(fn, populate_full_signature=True), group="cmd", name=name)
    return store


def setup_logging() -> None:
    level = os.environ.get("SWAMP_LOG_LEVEL", "INFO").upper()
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stdout, force=True)


def _quote(value: str) -> str:
    if "'" not in value:
        return f"'{value}'"
    if '"' not in value:
        return f'"{value}"'
    raise ConfigError(f"cannot pass a value containing both quote characters: {value}")


def parse_args(args: Sequence[str]) -> List[Tuple[str, str]]:
    """``--out-dir x``, ``--out-dir=x`` and ``out_dir=x`` all become ``("out_dir", "x")``."""
    pairs = []
    i = 0
    while i < len(args):
        arg = args[i]
        if arg.startswith("--"):
            key, sep, value = arg[2:].partition("=")
            if not sep:
                if i + 1 >= len(args) or args[i + 1].startswith("--"):
                    raise ConfigError(f"missing value for --{key}")
                value = args[i + 1]
                i += 1
        elif "=" in arg:
            key, _, value = arg.partition("=")
        else:
            raise ConfigError(f"unexpected argument '{arg}'")
        pairs.append((key.replace("-", "_"), value))
        i += 1
    return pairs


def parse_overrides(args: Sequence[str]) -> List[str]:
    """Hydra overrides for the ``cmd`` node, every value quoted as a string."""
    return [f"cmd.{key}={_quote(value)}" for key, value in parse_args(args)]


def _compose(command: str, args: Sequence[str]):
    if command not in COMMANDS:
        raise ConfigError(f"unknown command '{command}', expected one of {', '.join(COMMANDS)}")
    if GlobalHydra.instance().is_initialized():
        GlobalHydra.instance().clear()
    hydra.initialize(version_base="1.3")
    try:
        command_store().add_to_hydra_store(overwrite_ok=True)
        cfg = hydra.compose(overrides=[f"+cmd={command}", *parse_overrides(args)])
    finally:
        GlobalHydra.instance().clear()
    return cfg.cmd


def _load_stage(path: str, args: Sequence[str]):
    cfg = OmegaConf.load(path)
    if args:
        cfg = OmegaConf.merge(cfg, OmegaConf.from_dotlist([f"{k}={v}" for k, v in parse_args(args)]))
    return cfg


def _root_cause(e: BaseException) -> BaseException:
    while isinstance(e, InstantiationException) and e.__cause__ is not None:
        e = e.__cause__
    return e


def exit_code(e: BaseException) -> int:
    e = _root_cause(e)
    if isinstance(e, (ConfigError, ConfigCompositionException, OverrideParseException, MissingMandatoryValue)):
        return EXIT_CONFIG
    if isinstance(e, DatasetFormatError):
        return EXIT_FORMAT
    if isinstance(e, SwampError) and isinstance(e, ArithmeticError):
        return EXIT_NUMERIC
    if isinstance(e, OSError):
        return EXIT_IO
    if isinstance(e, OmegaConfBaseException):
        return EXIT_CONFIG
    return EXIT_OTHER


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = list(sys.argv[1:] if argv is None else argv)
    setup_logging()
    if not args or args[0] in ("-h", "--help"):
        print(__doc__)
        return EXIT_OK if args else EXIT_CONFIG
    try:
        if args[0] == "--config-file" or args[0].startswith("--config-file="):
            if "=" in args[0]:
                path, rest = args[0].split("=", 1)[1], args[1:]
            elif len(args) > 1:
                path, rest = args[1], args[2:]
            else:
                raise ConfigError("--config-file needs a path")
            cfg = _load_stage(path, rest)
        else:
            cfg = _compose(args[0], args[1:])
        missing = ", ".join("--" + k.replace("_", "-") for k in sorted(OmegaConf.missing_keys(cfg)))
        if missing:
            raise ConfigError(f"missing required argument(s): {missing}")
        hydra.utils.call(cfg, _convert_="all")
    except Exception as e:
        code = exit_code(e)
        cause = _root_cause(e)
        _log.error(f"{type(cause).__name__}: {cause}", exc_info=code == EXIT_OTHER)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
