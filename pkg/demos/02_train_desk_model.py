"""Train the desk-scale estimator and compare it with the centroid guess.

Takes roughly ten minutes on one core. Pass a smaller episode count as the
first argument for a quick look, e.g. ``python3 demos/02_train_desk_model.py 200``.
"""
import logging
import sys
import tempfile
from dataclasses import replace

from lamb_locate.evaluate import centroid_errors, evaluate
from lamb_locate.pipeline import Dataset, split_dataset
from lamb_locate.plate import NoiseConfig, generate_dataset
from lamb_locate.presets import (DESK_DURATION, DESK_HIDDEN, DESK_N_IMPACTS, DESK_PIPELINE, DESK_PLATE,
                                 DESK_SENSORS, DESK_SPLIT, DESK_TRAIN)
from lamb_locate.report import emit_report
from lamb_locate.train import train

logging.basicConfig(level=logging.INFO, format="%(message)s")

episodes = int(sys.argv[1]) if len(sys.argv) > 1 else DESK_TRAIN.episodes
root = tempfile.mkdtemp(prefix="desk_")
generate_dataset(root, DESK_N_IMPACTS, DESK_PLATE, DESK_SENSORS, NoiseConfig(), duration=DESK_DURATION, seed=1)
ds = Dataset.open(root)
ds = ds.with_manifest(split_dataset(ds.manifest, DESK_SPLIT))

res = train(ds, DESK_PIPELINE, DESK_HIDDEN, replace(DESK_TRAIN, episodes=episodes))
test_ids = ds.split_ids("test")
summary, preds = evaluate(res.params, ds, test_ids, DESK_PIPELINE, eval_seed=DESK_TRAIN.eval_seed,
                          return_predictions=True)
base = centroid_errors(ds, ds.split_ids("train"), test_ids)
print(f"GRU:      mean e {summary.mean_e * 1000:.1f} mm, std {summary.std_e * 1000:.1f} mm")
print(f"centroid: mean e {base.mean_e * 1000:.1f} mm")

# scatter plot plus per-step traces for two test impacts
traces = {i: (preds[k], ds.target(i)) for k, i in enumerate(test_ids[:2])}
for path in emit_report(summary, traces, out_dir=f"{root}/report"):
    print("wrote", path)
