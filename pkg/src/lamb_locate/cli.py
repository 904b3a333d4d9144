"""``lamb-locate`` command line: simulate, train, eval, sweep, predict.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric error.
Every subcommand writes ``run_config.json`` next to its outputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, LambLocateError
from .evaluate import SweepGrid, evaluate, summary_row, sweep, write_summary_csv
from .gru import forward_trace, load_checkpoint
from .pipeline import (
    Dataset,
    PipelineConfig,
    SplitSpec,
    decimation_factor,
    detect_onset,
    draw_shift,
    parse_sensors,
    prepare_window,
    split_dataset,
)
from .plate import NoiseConfig, PlateConfig, SensorArray, WaveletConfig, default_workers, generate_dataset
from .recording import read_signal
from .report import emit_report
from .train import TrainConfig, train

logger = logging.getLogger("lamb_locate")


class UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _load_config(path) -> dict:
    if not path:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None


def _snapshot(out_dir: Path, command: str, resolved: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {"command": command, "version": __version__, **resolved}
    (out_dir / "run_config.json").write_text(json.dumps(doc, indent=1, sort_keys=True, default=list) + "\n")


def _opt(args, cfg: dict, name: str, default):
    """Flag value if given, else the config/snapshot value, else ``default``."""
    v = getattr(args, name, None)
    if v is not None:
        return v
    return cfg.get(name, default)


def _workers(args) -> int:
    return args.workers if args.workers else default_workers()


def _ensure_split(ds: Dataset, split: str | None, seed: int) -> Dataset:
    if split:
        n_tr, n_va, n_te = (int(v) for v in split.split("/"))
        return ds.with_manifest(split_dataset(ds.manifest, SplitSpec(n_tr, n_va, n_te, seed)))
    if any("split" in e for e in ds.manifest["entries"]):
        return ds
    n = len(ds.manifest["entries"])
    n_va = n_te = max(1, n // 10)
    return ds.with_manifest(split_dataset(ds.manifest, SplitSpec(n - n_va - n_te, n_va, n_te, seed)))


def _shift_range(text, default):
    if text is None:
        return default
    lo, hi = (float(v) / 1000.0 for v in text.split(","))
    return (lo, hi)


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    plate = PlateConfig(**cfg.get("plate", {}))
    if args.trigger_delay is not None:
        plate = replace(plate, trigger_delay=args.trigger_delay)
    s = cfg.get("sensors", {})
    array = SensorArray(tuple(tuple(p) for p in s.get("positions", SensorArray().positions)),
                        s.get("patch_half_width", 0.005), s.get("margin", 0.005))
    if args.sensors:
        array = array.subset(parse_sensors(args.sensors))
    noise = NoiseConfig.noiseless() if args.noiseless else NoiseConfig(**cfg.get("noise", {}))
    wavelet = WaveletConfig(**cfg.get("wavelet", {}))
    duration = args.duration_ms / 1000.0 if args.duration_ms else cfg.get("duration_s")
    n, seed = _opt(args, cfg, "n", 5000), _opt(args, cfg, "seed", 0)
    out = Path(args.out)
    manifest = generate_dataset(out, n, plate, array, noise, wavelet, duration, seed,
                                workers=_workers(args))
    _snapshot(out, "simulate", {"n": n, "seed": seed, "plate": asdict(plate),
                                "sensors": manifest["sensors"], "noise": asdict(noise),
                                "wavelet": asdict(wavelet), "duration_s": manifest["duration_s"]})
    print(f"wrote {n} impacts to {out}")
    return 0


def _pipeline_from_args(args, cfg) -> PipelineConfig:
    base = PipelineConfig(**cfg.get("pipeline", {}))
    kw = {}
    if args.sensors:
        kw["sensors"] = parse_sensors(args.sensors)
    if args.window_ms:
        kw["window"] = args.window_ms / 1000.0
    kw["shift_range"] = _shift_range(args.shift_ms, base.shift_range)
    return replace(base, **kw)


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    pipe = _pipeline_from_args(args, cfg)
    tkw = dict(cfg.get("train", {}))
    for flag, key in (("batch", "batch_size"), ("episodes", "episodes"), ("lr", "lr0"), ("seed", "seed"),
                      ("eval_every", "eval_every"), ("patience", "patience"), ("loss_mode", "loss_mode")):
        v = getattr(args, flag)
        if v is not None:
            tkw[key] = v
    tc = TrainConfig(**tkw)
    hidden, split = _opt(args, cfg, "hidden", 32), _opt(args, cfg, "split", None)
    ds = Dataset.open(args.data)
    if max(pipe.sensors) > ds.n_sensors:
        raise UsageError(f"sensor selection {pipe.sensors} exceeds the dataset's {ds.n_sensors} sensors")
    ds = _ensure_split(ds, split, tc.seed)
    out = Path(args.out)
    _snapshot(out, "train", {"data": str(args.data), "pipeline": asdict(pipe), "train": asdict(tc),
                             "hidden": hidden, "split": split})
    res = train(ds, pipe, hidden, tc, out_dir=out)
    print(f"best validation error {res.history.best_error:.6f} m at episode {res.history.best_episode}")
    return 0


def _pipeline_from_checkpoint(params, args, cfg=None) -> PipelineConfig:
    meta = (cfg or {}).get("pipeline") or params.metadata.get("pipeline")
    pipe = PipelineConfig(**meta) if meta else PipelineConfig(sensors=tuple(range(1, params.S_in + 1)))
    if getattr(args, "sensors", None):
        pipe = replace(pipe, sensors=parse_sensors(args.sensors))
    if getattr(args, "window_ms", None):
        pipe = replace(pipe, window=args.window_ms / 1000.0)
    return pipe


def cmd_eval(args) -> int:
    cfg = _load_config(args.config)
    params = load_checkpoint(args.model)
    pipe = _pipeline_from_checkpoint(params, args, cfg)
    seed, last_n = _opt(args, cfg, "seed", 0), _opt(args, cfg, "last_n", 10)
    subset, split = _opt(args, cfg, "subset", "test"), _opt(args, cfg, "split", None)
    n_traces = _opt(args, cfg, "traces", 2)
    ds = _ensure_split(Dataset.open(args.data), split, seed)
    ids = ds.split_ids(subset) or ds.ids
    summary, Y = evaluate(params, ds, ids, pipe, last_n, eval_seed=seed, return_predictions=True)
    summary.config.update({"H": params.H})
    out = Path(args.out)
    _snapshot(out, "eval", {"model": str(args.model), "data": str(args.data), "pipeline": asdict(pipe),
                            "last_n": last_n, "seed": seed, "subset": subset, "split": split,
                            "traces": n_traces})
    traces = {summary.ids[k]: (Y[k], summary.targets[k]) for k in range(min(n_traces, len(summary.ids)))}
    plate = ds.manifest.get("plate", {})
    emit_report(summary, traces, out, (plate.get("width_x", 0.904), plate.get("width_y", 0.902)),
                pipe.target_rate)
    print(f"mean e = {summary.mean_e * 1000:.3f} mm, std e = {summary.std_e * 1000:.3f} mm "
          f"over {len(summary.errors)} impacts")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_config(args.config)
    if args.grid:
        grid = SweepGrid.from_json(args.grid)
    elif "grid" in cfg:
        grid = SweepGrid.from_dict(cfg["grid"])
    else:
        grid = SweepGrid()
    pipe = _pipeline_from_args(args, cfg)
    tkw = dict(cfg.get("train", {}))
    for flag, key in (("episodes", "episodes"), ("lr", "lr0"), ("seed", "seed")):
        v = getattr(args, flag)
        if v is not None:
            tkw[key] = v
    tc = TrainConfig(**tkw)
    split = _opt(args, cfg, "split", None)
    ds = _ensure_split(Dataset.open(args.data), split, tc.seed)
    out = Path(args.out)
    _snapshot(out, "sweep", {"grid": grid.to_json(), "pipeline": asdict(pipe), "train": asdict(tc),
                             "data": str(args.data), "split": split})
    rows = sweep(grid, ds, tc, pipe, out_dir=out, workers=_workers(args))
    for r in rows:
        print(f"{r['sensors']:>5} {r['T_ms']:>5g} ms  L={r['L']:<5} mean e={r['mean_e_m'] * 1000:.3f} mm  {r['status']}")
    return 0


def cmd_predict(args) -> int:
    cfg = _load_config(args.config)
    params = load_checkpoint(args.model)
    pipe = _pipeline_from_checkpoint(params, args, cfg)
    seed = _opt(args, cfg, "seed", 0)
    rec = read_signal(args.input)
    if args.no_crop:
        factor = decimation_factor(rec.sample_rate, pipe.target_rate) if rec.sample_rate != pipe.target_rate else 1
        X = rec.samples[::factor][: rec.n_samples // factor]
        X = X[:, [i - 1 for i in pipe.sensors]] if X.shape[1] != params.S_in else X
    else:
        t_th = detect_onset(rec, pipe.threshold)
        shift = draw_shift(seed, Path(args.input).stem, pipe.shift_range, pipe.target_rate)
        X = prepare_window(rec, t_th, shift, pipe, (np.nan, np.nan), Path(args.input).stem).samples
    trace = forward_trace(np.asarray(X, dtype=np.float64), params)
    out = Path(args.trace)
    out.parent.mkdir(parents=True, exist_ok=True)
    t = np.arange(len(trace)) / pipe.target_rate
    with open(out, "w") as fh:
        fh.write("t_s,pred_x_m,pred_y_m\n")
        for k in range(len(trace)):
            fh.write(f"{t[k]:.9g},{trace.predictions[k, 0]:.9g},{trace.predictions[k, 1]:.9g}\n")
    _snapshot(out.parent, "predict", {"model": str(args.model), "input": str(args.input),
                                      "pipeline": asdict(pipe), "seed": seed, "no_crop": args.no_crop})
    est = trace.predictions[-10:].mean(axis=0)
    print(f"estimate x={est[0]:.4f} m y={est[1]:.4f} m ({len(trace)} steps)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lamb-locate", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--seed", type=int, help="master seed (default 0)")
        sp.add_argument("--workers", type=int, default=None,
                        help="parallel worker cap (default: $LAMB_LOCATE_WORKERS or all cores)")
        sp.add_argument("--config", help="JSON config file")

    s = sub.add_parser("simulate", help="generate a synthetic impact dataset")
    common(s)
    s.add_argument("--n", type=int, help="number of impacts (default 5000)")
    s.add_argument("--out", required=True)
    s.add_argument("--sensors", help="subset of the default 8 sensors, e.g. 1-4")
    s.add_argument("--trigger-delay", type=float, help="seconds from trigger to impact")
    s.add_argument("--duration-ms", type=float)
    s.add_argument("--noiseless", action="store_true")
    s.set_defaults(func=cmd_simulate)

    def pipeline_flags(sp, required=False):
        sp.add_argument("--sensors", help="1-2, 1-4, 1-8 or a comma list")
        sp.add_argument("--window-ms", type=float)
        sp.add_argument("--shift-ms", help="crop shift range 'lo,hi' in ms (default 0.5,2)")
        sp.add_argument("--split", help="n_train/n_val/n_test")

    t = sub.add_parser("train", help="train an estimator")
    common(t)
    pipeline_flags(t)
    t.add_argument("--data", required=True)
    t.add_argument("--hidden", type=int, help="GRU hidden size (default 32)")
    t.add_argument("--batch", type=int)
    t.add_argument("--episodes", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--eval-every", type=int)
    t.add_argument("--patience", type=int)
    t.add_argument("--loss-mode", choices=["per_step", "final"])
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    common(e)
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--last-n", type=int, help="predictions averaged per estimate (default 10)")
    e.add_argument("--subset", help="split to evaluate (default test)")
    e.add_argument("--split")
    e.add_argument("--sensors")
    e.add_argument("--window-ms", type=float)
    e.add_argument("--traces", type=int, help="number of per-impact traces to draw (default 2)")
    e.add_argument("--out", default="eval_out")
    e.set_defaults(func=cmd_eval)

    w = sub.add_parser("sweep", help="train/evaluate a sensors x window grid")
    common(w)
    pipeline_flags(w)
    w.add_argument("--grid")
    w.add_argument("--data", required=True)
    w.add_argument("--episodes", type=int)
    w.add_argument("--lr", type=float)
    w.add_argument("--out", default="sweep_out")
    w.set_defaults(func=cmd_sweep)

    r = sub.add_parser("predict", help="per-step prediction trace for one signal file")
    common(r)
    r.add_argument("--model", required=True)
    r.add_argument("--input", required=True)
    r.add_argument("--trace", required=True)
    r.add_argument("--sensors")
    r.add_argument("--window-ms", type=float)
    r.add_argument("--no-crop", action="store_true", help="feed the whole file without onset cropping")
    r.set_defaults(func=cmd_predict)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except LambLocateError as exc:
        print(f"lamb-locate: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, TypeError) as exc:
        print(f"lamb-locate: usage error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
