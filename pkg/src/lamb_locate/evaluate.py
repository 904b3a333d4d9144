"""Position-error metric, test-set evaluation and window/sensor sweeps."""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError, DimensionError, LambLocateError
from .gru import ModelParams, PredictionTrace, predict_batch
from .pipeline import SENSOR_PRESETS, Dataset, PipelineConfig, stack_windows, windows_for
from .train import TrainConfig, train

logger = logging.getLogger(__name__)

SUMMARY_FIELDS = ["sensors", "T_ms", "L", "H", "B", "mean_e_m", "std_e_m", "n", "status"]


def position_error(trace, target, N: int = 10) -> float:
    """Distance between the mean of the last ``N`` predictions and ``target``."""
    P = trace.predictions if isinstance(trace, PredictionTrace) else np.asarray(trace)
    if N < 1 or N > P.shape[0]:
        raise ConfigError(f"N={N} must lie in [1, L={P.shape[0]}]")
    return float(np.linalg.norm(P[-N:].mean(axis=0) - np.asarray(target, dtype=float)))


@dataclass
class ErrorSummary:
    errors: np.ndarray  # per impact, metres
    mean_e: float
    std_e: float  # population standard deviation
    config: dict = field(default_factory=dict)
    ids: list = field(default_factory=list)
    targets: Optional[np.ndarray] = None
    estimates: Optional[np.ndarray] = None

    @classmethod
    def from_errors(cls, errors, config=None, **kw) -> "ErrorSummary":
        e = np.asarray(errors, dtype=float)
        if e.size == 0:
            raise ConfigError("no errors to summarise")
        return cls(e, float(e.mean()), float(e.std()), dict(config or {}), **kw)


def predictor_from_params(params: ModelParams) -> Callable:
    def predict(X):
        if X.shape[-1] != params.S_in:
            raise DimensionError(f"data has {X.shape[-1]} sensors, checkpoint expects {params.S_in}")
        return predict_batch(X, params)
    return predict


def evaluate(model, dataset: Dataset, ids: Sequence[str], pipeline: PipelineConfig, N: int = 10,
             eval_seed: int = 0, return_predictions: bool = False):
    """Run every impact in ``ids`` through the pipeline and the estimator.

    ``model`` is either ``ModelParams`` or a callable mapping a (B, L, S)
    stack to (B, L, 2) predictions. Each impact gets a crop shift frozen by
    ``eval_seed``.
    """
    if isinstance(model, ModelParams):
        if model.S_in != len(pipeline.sensors):
            raise DimensionError(
                f"checkpoint expects {model.S_in} sensors, pipeline selects {len(pipeline.sensors)}")
        model = predictor_from_params(model)
    ids = dataset.usable(ids, pipeline.threshold)
    if not ids:
        raise ConfigError("nothing to evaluate")
    windows = windows_for(dataset, ids, pipeline, eval_seed)
    X, T = stack_windows(windows)
    Y = model(X)
    if N > Y.shape[1]:
        raise ConfigError(f"N={N} exceeds window length {Y.shape[1]}")
    est = Y[:, -N:, :].mean(axis=1)
    errors = np.linalg.norm(est - T, axis=1)
    config = {"sensors": list(pipeline.sensors), "T_window": pipeline.window, "L": X.shape[1], "N": N}
    summary = ErrorSummary.from_errors(errors, config, ids=list(ids), targets=T, estimates=est)
    return (summary, Y) if return_predictions else summary


def centroid_errors(dataset: Dataset, train_ids, test_ids) -> ErrorSummary:
    """Errors of a constant predictor at the mean training target."""
    c = np.mean([dataset.target(i) for i in train_ids], axis=0)
    T = np.array([dataset.target(i) for i in test_ids])
    est = np.tile(c, (len(T), 1))
    return ErrorSummary.from_errors(np.linalg.norm(T - c, axis=1), {"predictor": "centroid"},
                                    ids=list(test_ids), targets=T, estimates=est)


# Table-style grid: cell overrides keyed by (preset, window in ms)
DEFAULT_OVERRIDES = {
    ("1-8", 5): {"H": 64, "B": 1000},
    ("1-8", 10): {"H": 64, "B": 500},
    ("1-8", 20): {"H": 64, "B": 250},
}


@dataclass
class SweepGrid:
    presets: list = field(default_factory=lambda: ["1-2", "1-4", "1-8"])
    windows_ms: list = field(default_factory=lambda: [5, 10, 20])
    overrides: dict = field(default_factory=lambda: dict(DEFAULT_OVERRIDES))
    hidden: int = 32
    batch: int = 500

    def cells(self):
        for preset in self.presets:
            for w in self.windows_ms:
                o = self.overrides.get((preset, w), {})
                yield preset, w, o.get("H", self.hidden), o.get("B", self.batch)

    @classmethod
    def from_json(cls, path) -> "SweepGrid":
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read sweep grid {path}: {exc}") from None
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "SweepGrid":
        overrides = {(o["sensors"], o["window_ms"]): {k: o[k] for k in ("H", "B") if k in o}
                     for o in raw.get("overrides", [])}
        grid = cls(overrides=overrides) if "overrides" in raw else cls()
        for k in ("presets", "windows_ms", "hidden", "batch"):
            if k in raw:
                setattr(grid, k, raw[k])
        return grid

    def to_json(self) -> dict:
        return {"presets": self.presets, "windows_ms": self.windows_ms, "hidden": self.hidden,
                "batch": self.batch,
                "overrides": [{"sensors": p, "window_ms": w, **o} for (p, w), o in self.overrides.items()]}


def _sensors(preset):
    if isinstance(preset, str):
        if preset in SENSOR_PRESETS:
            return SENSOR_PRESETS[preset]
        from .pipeline import parse_sensors
        return parse_sensors(preset)
    return tuple(preset)


def _run_cell(args):
    dataset_root, manifest, preset, window_ms, H, B, base_pipeline, base_train, out_dir = args
    ds = Dataset(dataset_root, manifest)
    pipe = replace(base_pipeline, sensors=_sensors(preset), window=window_ms / 1000.0)
    tc = replace(base_train, batch_size=B)
    cell_dir = Path(out_dir) / f"cell_{preset}_{window_ms:g}ms" if out_dir else None
    res = train(ds, pipe, H, tc, out_dir=cell_dir)
    summary = evaluate(res.params, ds, ds.split_ids("test"), pipe, base_train.eval_last_n,
                       eval_seed=base_train.eval_seed)
    summary.config.update({"preset": preset, "H": H, "B": B})
    return summary


def sweep(grid: SweepGrid, dataset: Dataset, base_train: TrainConfig = TrainConfig(),
          base_pipeline: PipelineConfig = PipelineConfig(), out_dir=None, workers: int = 1) -> list:
    """Train and evaluate one model per grid cell.

    Returns one row dict per cell (failed cells carry ``status`` = the
    error text). With ``out_dir`` writes ``summary.csv``.
    """
    need = max(max(_sensors(p)) for p in grid.presets)
    if dataset.n_sensors < need:
        raise ConfigError(f"dataset has {dataset.n_sensors} sensors, grid needs {need}")
    cells = list(grid.cells())
    jobs = [(dataset.root, dataset.manifest, p, w, H, B, base_pipeline, base_train, out_dir)
            for p, w, H, B in cells]
    results = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_cell, j) for j in jobs]
            for f in futures:
                try:
                    results.append(f.result())
                except LambLocateError as exc:
                    results.append(exc)
    else:
        for j in jobs:
            try:
                results.append(_run_cell(j))
            except LambLocateError as exc:
                logger.error("sweep cell %s/%s ms failed: %s", j[2], j[3], exc)
                results.append(exc)

    rows = []
    for (preset, w, H, B), res in zip(cells, results):
        L = replace(base_pipeline, window=w / 1000.0).n_samples(_native_rate(dataset))
        row = {"sensors": preset, "T_ms": w, "L": L, "H": H, "B": B}
        if isinstance(res, ErrorSummary):
            row.update(mean_e_m=res.mean_e, std_e_m=res.std_e, n=len(res.errors), status="ok")
        else:
            row.update(mean_e_m=float("nan"), std_e_m=float("nan"), n=0, status=str(res))
        rows.append(row)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        write_summary_csv(Path(out_dir) / "summary.csv", rows)
    return rows


def _native_rate(dataset: Dataset) -> float:
    plate = dataset.manifest.get("plate")
    return plate["sample_rate"] if plate else 1e6


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.9g}"
    return str(v)


def write_summary_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k, "")) for k in SUMMARY_FIELDS})


def read_summary_csv(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in ("T_ms", "mean_e_m", "std_e_m"):
            r[k] = float(r[k])
        for k in ("L", "H", "B", "n"):
            r[k] = int(r[k])
    return rows


def summary_row(summary: ErrorSummary, H=None, B=None) -> dict:
    c = summary.config
    sensors = c.get("preset") or "-".join(str(s) for s in c.get("sensors", []))
    return {"sensors": sensors, "T_ms": c.get("T_window", float("nan")) * 1000.0, "L": c.get("L", 0),
            "H": H if H is not None else c.get("H", 0), "B": B if B is not None else c.get("B", 0),
            "mean_e_m": summary.mean_e, "std_e_m": summary.std_e, "n": len(summary.errors), "status": "ok"}
