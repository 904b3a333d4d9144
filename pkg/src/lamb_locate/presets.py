"""Desk-scale configuration: small enough to train on a laptop CPU.

The plate and sensors are the defaults; only the pre-trigger delay, the
recording length, the crop window and the training budget shrink.
"""

from .pipeline import PipelineConfig, SplitSpec
from .plate import PlateConfig, SensorArray
from .train import TrainConfig

DESK_PLATE = PlateConfig(trigger_delay=0.001)
DESK_SENSORS = SensorArray().subset([1, 2, 3, 4])
DESK_DURATION = 0.008  # seconds; covers a 4 ms window behind any onset
DESK_N_IMPACTS = 1000
DESK_SPLIT = SplitSpec(800, 100, 100, seed=0)
# shift range scaled down with the 2 ms window so every crop keeps >= 1.6 ms after onset
DESK_PIPELINE = PipelineConfig(sensors=(1, 2, 3, 4), window=0.002, shift_range=(0.1e-3, 0.4e-3))
DESK_HIDDEN = 16
DESK_TRAIN = TrainConfig(episodes=2000, batch_size=64, decay_every=300, clip_norm=10.0,
                         eval_every=100, patience=20, seed=0)
