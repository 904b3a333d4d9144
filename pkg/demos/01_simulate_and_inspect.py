"""Simulate a handful of impacts and look at what the pipeline does to them.

Run: python3 demos/01_simulate_and_inspect.py
"""
import numpy as np

from lamb_locate.pipeline import PipelineConfig, detect_onset, draw_shift, prepare_window
from lamb_locate.plate import NoiseConfig, PlateConfig, SensorArray, arrival_time, sample_impact_positions, synth_recording

plate = PlateConfig(trigger_delay=0.001)
array = SensorArray().subset([1, 2, 3, 4])
events = sample_impact_positions(5, array, plate, seed=0)

# one recording per impact, 8 ms at 1 MHz
for ev in events:
    rec = synth_recording(ev, plate, array, NoiseConfig(), 0.008)
    t_th = detect_onset(rec)
    first = min(arrival_time(ev.position, s, plate) for s in array.positions)
    print(f"{ev.id}: impact at ({ev.position[0]:.3f}, {ev.position[1]:.3f}) m, "
          f"first arrival {first * 1e3:.3f} ms, onset picked at {t_th / rec.sample_rate * 1e3:.3f} ms, "
          f"peak {np.abs(rec.samples).max():.2f} V")

# crop 2 ms behind the onset, then decimate to 250 kHz
cfg = PipelineConfig(sensors=(1, 2, 3, 4), window=0.002, shift_range=(0.1e-3, 0.4e-3))
rec = synth_recording(events[0], plate, array, NoiseConfig(), 0.008)
shift = draw_shift(0, events[0].id, cfg.shift_range, cfg.target_rate)
w = prepare_window(rec, detect_onset(rec), shift, cfg, events[0].position, events[0].id)
print(f"window: {w.samples.shape[0]} samples x {w.samples.shape[1]} sensors at {w.sample_rate / 1e3:.0f} kHz, "
      f"shift {shift * 1e3:.3f} ms, target {w.target}")
