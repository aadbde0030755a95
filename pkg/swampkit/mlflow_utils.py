import inspect
import logging
import os
from functools import wraps
from pathlib import Path
from typing import Any, Dict, Optional

import mlflow
import pandas as pd
from omegaconf import OmegaConf

from .config_utils import default_configs_dir_fn

_log = logging.getLogger(__name__)

RUN_ARTIFACTS = ("manifest.json", "metrics.csv", "run.log", "summary.csv")


def tracking_enabled() -> bool:
    return bool(os.environ.get("MLFLOW_TRACKING_URI"))


def flatten_params(values: Dict[str, Any]) -> Dict[str, Any]:
    """Dotted-key flattening of a nested config, as MLflow params."""
    if not values:
        return {}
    return pd.json_normalize(values, sep=".").to_dict(orient="records")[0]


def log_config_params(values: Dict[str, Any]) -> None:
    for k, v in flatten_params(values).items():
        mlflow.log_param(k, v)


class MlflowMetricsSink:
    """Forwards every epoch record to the active MLflow run; steps count across phases."""

    def __init__(self):
        self.step = 0

    def log_epoch(self, record) -> None:
        mlflow.log_metrics(
            {
                "loss_contrastive": record.loss_contrastive,
                "loss_swamp": record.loss_swamp,
                "val_r1_pair": record.val_r1_pair,
                "epoch_seconds": record.seconds,
            },
            step=self.step,
        )
        self.step += 1


def _log_run_dir(run_dir: Optional[Path]) -> None:
    if run_dir is None:
        return
    for name in RUN_ARTIFACTS:
        path = run_dir / name
        if path.exists():
            _log.info(f"Logging run artifact: {path}")
            mlflow.log_artifact(path.as_posix())


def mlflow_run(
    project_name: Optional[str] = None,
    configs_dir_fn=default_configs_dir_fn,
    run_dir_arg: str = "out_dir",
):
    """
    Decorator running a command inside nested MLflow runs when ``MLFLOW_TRACKING_URI`` is set.

    - Reuses the parent (pipeline) run recorded in ``.pipeline_id`` or creates it.
    - Opens a child run named after ``DVC_STAGE`` or the function name.
    - Logs the stage's composed config (under DVC) or the call arguments as params.
    - Logs the run directory files (manifest, metrics, run.log) on success and on failure.

    Without tracking the function is called unchanged.
    """

    def decorator(wrapped_function):
        signature = inspect.signature(wrapped_function)

        @wraps(wrapped_function)
        def wrapper(*args, **kwargs):
            if not tracking_enabled():
                return wrapped_function(*args, **kwargs)

            bound = signature.bind(*args, **kwargs)
            bound.apply_defaults()
            run_dir = bound.arguments.get(run_dir_arg)
            run_dir = Path(run_dir) if run_dir is not None else None

            parent_run_id = None
            pipeline_id_file = Path(".pipeline_id")
            if pipeline_id_file.exists():
                parent_run_id = pipeline_id_file.read_text().strip()
                _log.info(f"Found parent run ID in .pipeline_id: {parent_run_id}")
            experiment = project_name or os.environ.get("MLFLOW_PROJECT_NAME", "swampkit")
            mlflow.set_experiment(experiment)
            _log.info(f"Using MLflow experiment: '{experiment}'")

            dvc_stage_name = os.environ.get("DVC_STAGE")
            run_name = dvc_stage_name or wrapped_function.__name__

            with mlflow.start_run(run_id=parent_run_id) as parent_run:
                if not parent_run_id:
                    pipeline_id_file.write_text(parent_run.info.run_id + "\n")
                    _log.info(f"Wrote new parent run ID to .pipeline_id: {parent_run.info.run_id}")

                with mlflow.start_run(run_name=run_name, nested=True) as child_run:
                    _log.info(f"Started nested MLflow run '{run_name}' (ID: {child_run.info.run_id})")
                    config_path = None
                    if dvc_stage_name and "/" in dvc_stage_name:
                        stage, config_name = dvc_stage_name.split("/", 1)
                        config_path = Path(configs_dir_fn(stage)) / f"{config_name}.yaml"
                    try:
                        if config_path is not None and config_path.exists():
                            _log.info(f"Logging config from: {config_path}")
                            log_config_params(OmegaConf.to_container(OmegaConf.load(config_path), resolve=True))
                            mlflow.log_artifact(config_path.as_posix())
                        else:
                            log_config_params({k: v for k, v in bound.arguments.items() if v is not None})
                    except Exception as e:
                        _log.error(f"Failed to log params for '{run_name}'. Error: {e}", exc_info=True)

                    try:
                        result = wrapped_function(*args, **kwargs)
                    except Exception:
                        _log.exception(f"Execution failed for '{run_name}'.")
                        _log_run_dir(run_dir)
                        raise
                    _log_run_dir(run_dir)
                    return result

        return wrapper

    return decorator
