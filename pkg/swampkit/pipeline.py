"""DVC pipeline for the full synthetic benchmark.

:func:`benchmark_store` holds one hydra-zen config per stage instance;
:func:`configure_pipeline` composes each of them, discovers its inputs and
outputs from the ``${deps:...}`` / ``${outs:...}`` interpolations, writes the
composed config next to the artifacts and emits ``dvc.yaml``. Every stage
runs as ``swampkit --config-file <composed config>``.
"""

import logging
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import hydra
import hydra_zen
from hydra.core.global_hydra import GlobalHydra
from omegaconf import OmegaConf

from .commands import cmd_ablate, cmd_eval, cmd_generate, cmd_report, cmd_train
from .config_utils import default_configs_dir_fn, default_stage_dir_fn, deps_path, outs_path

_log = logging.getLogger(__name__)

STAGE_GROUPS = ["data", "train", "eval", "ablate", "report"]

DATASET = "dataset.swmp"

# ablation name -> sweep values
BENCHMARK_ABLATIONS: Dict[str, str] = {
    "K": "200,1000,3000",
    "lambda": "0,0.5,1",
    "queue": "0,1280",
    "eta": "5,20,100",
    "assignment": "soft,hard",
    "init": "random,warmstart",
}


def benchmark_store(seeds: int = 3, dataset_seed: int = 0) -> hydra_zen.ZenStore:
    """Stage configs: generate, train SwAMP and contrastive, evaluate, sweep, report."""
    store = hydra_zen.ZenStore(overwrite_ok=True)
    data = deps_path(DATASET, "data", "default")

    store(builds_stage(cmd_generate, out=outs_path(DATASET), seed=dataset_seed), group="data", name="default")

    arms = {"swamp": {"loss_mode": "swamp_combined"}, "contrastive": {"loss_mode": "contrastive_only"}}
    for name, params in arms.items():
        store(builds_stage(cmd_train, data=data, out_dir=outs_path("run"), params=params), group="train", name=name)
        for error in ("pair", "class"):
            store(
                builds_stage(
                    cmd_eval,
                    model=deps_path("run/model.ckpt", "train", name),
                    data=data,
                    split="test",
                    direction="a2b",
                    error=error,
                    out=outs_path("report.csv"),
                ),
                group="eval",
                name=f"{name}-{error}",
            )

    for param, values in BENCHMARK_ABLATIONS.items():
        store(
            builds_stage(
                cmd_ablate,
                data=data,
                out_dir=outs_path("sweep"),
                param=param,
                values=values,
                seeds=seeds,
                with_baseline=param == "lambda",
            ),
            group="ablate",
            name=param,
        )

    store(
        builds_stage(
            cmd_report,
            runs=[deps_path("sweep", "ablate", param) for param in BENCHMARK_ABLATIONS],
            out=outs_path("report.md"),
        ),
        group="report",
        name="all",
    )
    return store


def builds_stage(fn: Callable, **kwargs: Any):
    return hydra_zen.builds(fn, populate_full_signature=True, **kwargs)


def configure_pipeline(
    store: Optional[hydra_zen.ZenStore] = None,
    stage_groups: Optional[List[str]] = None,
    stage_dir_fn: Callable[[Optional[str], str], str] = default_stage_dir_fn,
    configs_dir_fn: Callable[[Optional[str]], str] = default_configs_dir_fn,
    dvc_filename: str = "dvc.yaml",
    run_command: str = "swampkit",
) -> Dict[str, Path]:
    """
    Write the composed config of every stage instance and a ``dvc.yaml`` that runs them.

    Args:
        store: Store holding the stage configs; defaults to :func:`benchmark_store`.
        stage_groups: Groups to process, in order. Defaults to :data:`STAGE_GROUPS`.
        stage_dir_fn: ``fn(stage, name) -> str`` giving a stage instance's output directory.
        configs_dir_fn: ``fn(stage) -> str`` giving where composed configs of a group go.
        dvc_filename: Pipeline file to write.
        run_command: Executable that accepts ``--config-file``.

    Returns:
        DVC stage name -> composed config path.
    """
    dvc_stages: Dict[str, Dict[str, Any]] = {}
    all_deps: Dict[Tuple[str, str], List[str]] = {}
    all_outs: Dict[Tuple[str, str], List[str]] = {}
    stage_config_paths: Dict[str, Path] = {}

    if store is None:
        store = benchmark_store()
    if stage_groups is None:
        stage_groups = STAGE_GROUPS

    _log.info("Initializing Hydra (version_base=1.3) for configuration composition.")
    if GlobalHydra.instance().is_initialized():
        GlobalHydra.instance().clear()
    hydra.initialize(version_base="1.3")

    try:
        store.add_to_hydra_store(overwrite_ok=True)
        _log.debug("  Successfully added store configurations to hydra")
    except Exception as e:
        _log.error(f"  Failed add store configurations to hydra. Error: {e}", exc_info=True)
        GlobalHydra.instance().clear()
        raise

    try:
        for stage in stage_groups:
            cfg_dir = Path(configs_dir_fn(stage))
            cfg_dir.mkdir(exist_ok=True, parents=True)

            stage_items = list(store[stage])
            if not stage_items:
                _log.warning(f"No configurations found in store for stage group: '{stage}'")
                continue
            _log.info(f"Processing stage group '{stage}' with {len(stage_items)} configuration(s)...")

            for _, name in stage_items:
                stage_key = (stage, name)
                cfg = OmegaConf.select(hydra.compose(overrides=[f"+{stage}={name}"]), stage)

                # the resolvers record paths as a side effect
                current_deps: List[str] = []
                current_outs: List[str] = []
                stage_dir = stage_dir_fn(stage, name)

                def _outs(k, _dir=stage_dir, _acc=current_outs):
                    path = f"{_dir}/{k}"
                    _acc.append(path)
                    return path

                def _deps(k, _acc=current_deps):
                    _acc.append(k)
                    return k

                OmegaConf.register_new_resolver("outs", _outs, replace=True)
                OmegaConf.register_new_resolver("deps", _deps, replace=True)
                try:
                    OmegaConf.resolve(cfg)
                except Exception as e:
                    _log.error(
                        f"  Failed during config resolution for '{stage}/{name}'. Check deps/outs interpolations. "
                        f"Error: {e}",
                        exc_info=True,
                    )
                    raise
                all_deps[stage_key] = sorted(set(current_deps))
                all_outs[stage_key] = sorted(set(current_outs))
                _log.info(f"    Discovered Deps: {all_deps[stage_key]}")
                _log.info(f"    Discovered Outs: {all_outs[stage_key]}")

                composed_config_path = cfg_dir / f"{name}.yaml"
                composed_config_path.write_text(hydra_zen.to_yaml(cfg))
                _log.debug(f"  Wrote composed configuration to: {composed_config_path}")

                dvc_stage_name = f"{stage}/{name}"
                stage_config_paths[dvc_stage_name] = composed_config_path
                dvc_stages[dvc_stage_name] = dict(
                    cmd=f"{run_command} --config-file {composed_config_path.as_posix()}",
                    deps=all_deps[stage_key],
                    outs=all_outs[stage_key],
                    params=[{composed_config_path.as_posix(): None}],
                )
    finally:
        GlobalHydra.instance().clear()

    dvc_file = Path(dvc_filename)
    dvc_file.write_text(hydra_zen.to_yaml({"stages": dvc_stages}))
    _log.info(f"Successfully wrote DVC pipeline configuration to: {dvc_file}")
    return stage_config_paths
