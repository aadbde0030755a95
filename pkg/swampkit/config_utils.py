import logging
import os
from typing import Callable, Optional

_log = logging.getLogger(__name__)

ARTIFACTS_ROOT = os.getenv("ARTIFACTS_DIR", "workbench")


def default_stage_dir_fn(stage: Optional[str], name: str) -> str:
    """Output directory of one benchmark stage instance."""
    if stage is None:
        return f"{ARTIFACTS_ROOT}/{name}"
    return f"{ARTIFACTS_ROOT}/{stage}/{name}"


def default_configs_dir_fn(stage: Optional[str]) -> str:
    """Directory holding the composed stage configs of a group."""
    if stage is None:
        return f"{ARTIFACTS_ROOT}/configs"
    return f"{ARTIFACTS_ROOT}/configs/{stage}"


# The resolvers behind these interpolations are registered by configure_pipeline,
# which records every resolved path as a DVC out or dep of the stage.
def outs_path(s: str) -> str:
    """Interpolation for a file the stage writes, relative to its stage directory."""
    return "${outs:" + str(s) + "}"


def deps_path(
    s: str,
    input_stage: Optional[str] = None,
    input_name: Optional[str] = None,
    stage_dir_fn: Callable[[Optional[str], str], str] = default_stage_dir_fn,
) -> str:
    """Interpolation for a file the stage reads.

    With ``input_stage``/``input_name`` the path is taken inside that stage's
    output directory, e.g. ``deps_path("run/model.ckpt", "train", "swamp")``.
    """
    if input_stage is not None:
        if input_name is None:
            raise ValueError("input_name must be specified if input_stage is provided.")
        base_dir = stage_dir_fn(input_stage, input_name) + "/"
    else:
        base_dir = ""
    return "${deps:" + base_dir + str(s) + "}"
