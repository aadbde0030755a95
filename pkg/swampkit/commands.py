"""The command implementations behind ``swampkit <command>``.

Every command takes plain arguments (paths, numbers, strings) so it can be
configured with hydra-zen ``builds`` and composed from the CLI or from a
DVC stage file.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from multiprocessing import Pool
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import pandas as pd

from . import synthgen
from .config import FIELD_NAMES, InitMode, LossMode, TrainConfig, load_train_config
from .errors import ConfigError, NumericAbortError
from .mlflow_utils import MlflowMetricsSink, mlflow_run, tracking_enabled
from .model import load_checkpoint, save_checkpoint
from .retrieval_eval import RetrievalReport, evaluate_model, full_report, reports_frame
from .trainer import CsvMetricsSink, FanoutSink, train

_log = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

MANIFEST = "manifest.json"
METRICS = "metrics.csv"
CHECKPOINT = "model.ckpt"
RUN_LOG = "run.log"

# sweep parameter name -> TrainConfig field
ABLATION_PARAMS: Dict[str, str] = {
    "K": "num_classes",
    "lambda": "lam",
    "queue": "queue_capacity",
    "eta": "eta",
    "assignment": "assignment",
    "init": "init",
}

REPORT_COLUMNS = [
    "param",
    "value",
    "seed",
    "status",
    "best_epoch",
    "val_r1_pair",
    "r1_pair",
    "r5_pair",
    "r10_pair",
    "medr_pair",
    "r1_class",
    "r5_class",
    "r10_class",
    "medr_class",
    "run",
]


def git_blob_sha1(path: Union[str, Path]) -> str:
    """Content hash as ``git hash-object`` computes it."""
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


@dataclass
class RunManifest:
    config: Dict[str, Any]
    dataset_path: str
    dataset_seed: int
    dataset_sha1: str
    outputs: Dict[str, str] = field(default_factory=dict)
    status: str = "running"
    best_epoch: int = -1
    best_phase: str = "main"
    best_val_r1: Optional[float] = None
    results: List[Dict[str, Any]] = field(default_factory=list)
    diagnostic: Optional[Dict[str, Any]] = None
    sweep: Optional[Dict[str, Any]] = None
    wall_seconds: float = 0.0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def write(self, run_dir: Union[str, Path]) -> Path:
        path = Path(run_dir) / MANIFEST
        path.write_text(self.to_json() + "\n")
        return path

    @classmethod
    def read(cls, path: Union[str, Path]) -> "RunManifest":
        """Parse a manifest; raises ``ValueError``/``KeyError``/``TypeError`` when it is corrupt."""
        raw = json.loads(Path(path).read_text())
        if not isinstance(raw, dict):
            raise ValueError(f"{path}: manifest is not a JSON object")
        return cls(**raw)

    def result(self, error_type: str, direction: str = "a2b") -> Optional[Dict[str, Any]]:
        for r in self.results:
            if r["error_type"] == error_type and r["direction"] == direction:
                return r
        return None


@contextmanager
def run_log(run_dir: Path) -> Iterator[Path]:
    """Mirror every INFO+ record to ``run_dir/run.log`` while the block runs."""
    path = run_dir / RUN_LOG
    handler = logging.FileHandler(path, mode="w")
    handler.setLevel(logging.INFO)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root = logging.getLogger()
    previous_level = root.level
    if root.level > logging.INFO or root.level == logging.NOTSET:
        root.setLevel(logging.INFO)
    root.addHandler(handler)
    try:
        yield path
    finally:
        root.removeHandler(handler)
        root.setLevel(previous_level)
        handler.close()


def cmd_generate(
    out: str, seed: int = 0, n_classes: int = synthgen.N_CLASSES, per_class: int = synthgen.PAIRS_PER_CLASS
) -> str:
    """Generate, split and save the synthetic paired dataset."""
    ds = synthgen.split(synthgen.generate(seed, n_classes=n_classes, per_class=per_class), seed)
    return str(synthgen.save(ds, out))


def _resolve_config(config: Optional[str], params: Optional[Dict[str, Any]]) -> TrainConfig:
    cfg = load_train_config(config)
    if params:
        unknown = sorted(set(params) - set(FIELD_NAMES))
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        cfg = cfg.with_updates(**params)
    return cfg


def train_run(data: str, out_dir: str, cfg: TrainConfig, sweep: Optional[Dict[str, Any]] = None) -> RunManifest:
    """Train one configuration into ``out_dir``.

    The manifest is written whatever happens: ``completed`` with results, or
    ``failed`` with a diagnostic (epoch, batch and losses for a numeric abort,
    the error type and message otherwise) before the error propagates.
    """
    run_dir = Path(out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(
        config=cfg.to_dict(),
        dataset_path=str(data),
        dataset_seed=-1,
        dataset_sha1="",
        outputs={"metrics": METRICS, "checkpoint": CHECKPOINT, "log": RUN_LOG},
        sweep=sweep,
    )
    with run_log(run_dir):
        try:
            ds = synthgen.load(data)
            manifest.dataset_seed = ds.seed
            manifest.dataset_sha1 = git_blob_sha1(data)
            sinks = [CsvMetricsSink(run_dir / METRICS)]
            if tracking_enabled():
                sinks.append(MlflowMetricsSink())
            model, history = train(ds, cfg, FanoutSink(sinks))
            save_checkpoint(model, run_dir / CHECKPOINT)
            manifest.best_epoch = history.best_epoch
            manifest.best_phase = history.best_phase
            manifest.best_val_r1 = history.best_val_r1
            manifest.wall_seconds = history.wall_seconds
            manifest.results = [r.to_dict() for r in full_report(model, ds, "test")]
        except Exception as e:
            manifest.status = "failed"
            if isinstance(e, NumericAbortError):
                manifest.diagnostic = e.diagnostic()
            else:
                manifest.diagnostic = {"error_type": type(e).__name__, "message": str(e)}
            manifest.write(run_dir)
            _log.error(f"Run in {run_dir} failed: {e}", exc_info=True)
            raise
        manifest.status = "completed"
        manifest.write(run_dir)
        _log.info(f"Run completed in {run_dir} (best epoch {history.best_epoch}, val R@1 {history.best_val_r1:.2f})")
    return manifest


@mlflow_run()
def cmd_train(
    data: str, out_dir: str, config: Optional[str] = None, params: Optional[Dict[str, Any]] = None
) -> RunManifest:
    """Train from a dataset file and a JSON config (``params`` override single fields)."""
    return train_run(data, out_dir, _resolve_config(config, params))


def cmd_eval(
    model: str,
    data: str,
    split: str = "test",
    direction: str = "a2b",
    error: str = "pair",
    out: Optional[str] = None,
) -> RetrievalReport:
    report = evaluate_model(load_checkpoint(model), synthgen.load(data), split, direction, error)
    frame = reports_frame([report])
    print(frame.to_string(index=False))
    if out is not None:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(out, index=False)
        _log.info(f"Wrote retrieval report to {out}")
    return report


def _parse_values(values: Union[str, Sequence[Any]]) -> List[str]:
    if isinstance(values, str):
        items = [v.strip() for v in values.split(",")]
    else:
        items = [str(v).strip() for v in values]
    items = [v for v in items if v]
    if not items:
        raise ConfigError("values must name at least one setting")
    return items


def _sweep_arm(arm: Tuple[str, str, Dict[str, Any], Dict[str, Any]]) -> Dict[str, Any]:
    data, out_dir, cfg_values, sweep = arm
    cfg = TrainConfig(**cfg_values)
    try:
        manifest = train_run(data, out_dir, cfg, sweep)
    except NumericAbortError:
        manifest = RunManifest.read(Path(out_dir) / MANIFEST)
    return asdict(manifest)


def sweep_threads() -> int:
    raw = os.environ.get("SWAMP_THREADS", "1")
    try:
        threads = int(raw)
    except ValueError:
        raise ConfigError(f"SWAMP_THREADS must be an integer, got '{raw}'") from None
    if threads < 1:
        raise ConfigError(f"SWAMP_THREADS must be >= 1, got {threads}")
    return threads


@mlflow_run()
def cmd_ablate(
    data: str,
    out_dir: str,
    param: str,
    values: Any,
    base_config: Optional[str] = None,
    seeds: int = 1,
    with_baseline: bool = False,
) -> pd.DataFrame:
    """One run per (value, seed) below ``out_dir`` plus ``summary.csv`` with test R@1 mean and std per value."""
    if param not in ABLATION_PARAMS:
        raise ConfigError(f"unknown ablation parameter '{param}', expected one of {', '.join(ABLATION_PARAMS)}")
    if seeds < 1:
        raise ConfigError(f"seeds must be >= 1, got {seeds}")
    base = load_train_config(base_config)
    field_name = ABLATION_PARAMS[param]
    quiet = {"warn_small_queue": False} if param in ("K", "queue") else {}

    arms = []
    labels = _parse_values(values)
    for value in labels:
        for s in range(seeds):
            cfg = base.with_updates(**{field_name: value, "seed": base.seed + s, **quiet})
            run_dir = Path(out_dir) / f"{param}={value}" / f"seed={cfg.seed}"
            arms.append((data, str(run_dir), cfg.to_dict(), {"param": param, "value": value}))
    if with_baseline:
        labels.append("baseline")
        for s in range(seeds):
            cfg = base.with_updates(
                loss_mode=LossMode.contrastive_only.value, init=InitMode.random.value, seed=base.seed + s
            )
            run_dir = Path(out_dir) / "baseline" / f"seed={cfg.seed}"
            arms.append((data, str(run_dir), cfg.to_dict(), {"param": param, "value": "baseline"}))

    threads = min(sweep_threads(), len(arms))
    _log.info(f"Sweeping {param} over {labels} x {seeds} seed(s): {len(arms)} runs on {threads} worker(s)")
    if threads > 1:
        with Pool(threads) as pool:
            manifests = pool.map(_sweep_arm, arms)
    else:
        manifests = [_sweep_arm(arm) for arm in arms]

    rows = []
    for m in manifests:
        manifest = RunManifest(**m)
        pair, klass = manifest.result("pair"), manifest.result("class")
        rows.append(
            {
                "value": manifest.sweep["value"],
                "seed": manifest.config["seed"],
                "status": manifest.status,
                "r1_pair": pair["r1"] if pair else float("nan"),
                "r1_class": klass["r1"] if klass else float("nan"),
            }
        )
    runs = pd.DataFrame(rows, columns=["value", "seed", "status", "r1_pair", "r1_class"])
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    runs.to_csv(Path(out_dir) / "runs.csv", index=False)

    completed = runs[runs["status"] == "completed"]
    summary = (
        completed.groupby("value", sort=False)[["r1_pair", "r1_class"]]
        .agg(["mean", "std"])
        .reindex(labels)
    )
    summary.columns = [f"{metric}_{stat}" for metric, stat in summary.columns]
    summary["n_runs"] = completed.groupby("value", sort=False).size().reindex(labels).fillna(0).astype(int)
    summary = summary.reset_index().rename(columns={"index": "value"})
    summary.insert(0, "param", param)
    summary.to_csv(Path(out_dir) / "summary.csv", index=False)
    failed = int((runs["status"] != "completed").sum())
    if failed:
        _log.warning(f"{failed} sweep run(s) failed and are left out of the summary")
    _log.info(f"Wrote sweep summary to {Path(out_dir) / 'summary.csv'}")
    return summary


def _report_row(manifest: RunManifest, run: str) -> Dict[str, Any]:
    row: Dict[str, Any] = {
        "param": (manifest.sweep or {}).get("param", ""),
        "value": str((manifest.sweep or {}).get("value", "")),
        "seed": manifest.config.get("seed"),
        "status": manifest.status,
        "best_epoch": manifest.best_epoch,
        "val_r1_pair": manifest.best_val_r1,
        "run": run,
    }
    for error_type in ("pair", "class"):
        r = manifest.result(error_type) or {}
        row[f"r1_{error_type}"] = r.get("r1")
        row[f"r5_{error_type}"] = r.get("r5")
        row[f"r10_{error_type}"] = r.get("r10")
        row[f"medr_{error_type}"] = r.get("median_rank")
    return row


def cmd_report(runs: Any, out: str) -> str:
    """Markdown table of every run manifest found below ``runs`` (one directory or a list)."""
    roots = [runs] if isinstance(runs, (str, Path)) else list(runs)
    rows, corrupt = [], []
    for root in roots:
        root = Path(root)
        for path in sorted(root.rglob(MANIFEST)):
            run = path.parent.relative_to(root).as_posix()
            try:
                rows.append(_report_row(RunManifest.read(path), f"{root.name}/{run}"))
            except (ValueError, KeyError, TypeError, AttributeError) as e:
                _log.warning(f"Skipping corrupt manifest {path}: {e}")
                corrupt.append(f"{root.name}/{run}")

    table = pd.DataFrame(rows, columns=REPORT_COLUMNS)
    if not table.empty:
        # numeric values in numeric order, then the rest (e.g. "baseline") by name
        order = table.assign(_number=pd.to_numeric(table["value"], errors="coerce"))
        order = order.sort_values(["param", "_number", "value", "seed", "run"], kind="stable", na_position="last")
        table = table.loc[order.index].reset_index(drop=True)
    text = "# swampkit runs\n\n" + table.to_markdown(index=False, floatfmt=".2f") + "\n"
    if corrupt:
        text += "\nSkipped (corrupt manifest):\n\n" + "".join(f"- {c}\n" for c in corrupt)
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    Path(out).write_text(text)
    _log.info(f"Wrote report with {len(table)} run(s) to {out}")
    return text


def cmd_pipeline(dvc_file: str = "dvc.yaml") -> Dict[str, str]:
    """Write the benchmark ``dvc.yaml`` and its composed stage configs."""
    from .pipeline import benchmark_store, configure_pipeline

    paths = configure_pipeline(benchmark_store(), dvc_filename=dvc_file)
    return {k: str(v) for k, v in paths.items()}
