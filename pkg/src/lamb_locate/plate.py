"""Synthetic impact recordings on a rectangular plate.

Each impact launches a band-limited burst that travels at a single group
velocity. Boundary reflections are represented by first-order image
sources. Amplitudes follow cylindrical spreading with exponential
attenuation, and the measurement chain adds Gaussian noise, a constant
per-channel offset, ADC quantization and clipping.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, CoverageError, DataError, UnsupportedOrderError
from .recording import Recording, write_signal

logger = logging.getLogger(__name__)

# sensor centres in metres, frame origin at the upper left plate corner
DEFAULT_SENSOR_POSITIONS = (
    (0.100, 0.100),
    (0.803, 0.100),
    (0.100, 0.802),
    (0.803, 0.802),
    (0.452, 0.100),
    (0.100, 0.451),
    (0.803, 0.451),
    (0.452, 0.802),
)

MANIFEST_NAME = "manifest.json"
MAX_REJECTION_ATTEMPTS = 10**6


@dataclass(frozen=True)
class PlateConfig:
    width_x: float = 0.904
    width_y: float = 0.902
    thickness: float = 0.002
    group_velocity: float = 1000.0
    attenuation: float = 0.5
    sample_rate: float = 1e6
    trigger_delay: float = 0.316

    def __post_init__(self):
        for name in ("width_x", "width_y", "thickness", "group_velocity", "sample_rate"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"PlateConfig.{name} must be positive")
        if self.attenuation < 0 or self.trigger_delay < 0:
            raise ConfigError("attenuation and trigger_delay must be non-negative")

    def contains(self, point) -> bool:
        x, y = point
        return 0.0 < x < self.width_x and 0.0 < y < self.width_y


@dataclass(frozen=True)
class SensorArray:
    positions: tuple = DEFAULT_SENSOR_POSITIONS
    patch_half_width: float = 0.005
    margin: float = 0.005

    def __post_init__(self):
        pos = tuple((float(x), float(y)) for x, y in self.positions)
        if not pos:
            raise ConfigError("sensor array is empty")
        object.__setattr__(self, "positions", pos)
        if self.patch_half_width < 0 or self.margin < 0:
            raise ConfigError("patch_half_width and margin must be non-negative")

    @property
    def n_sensors(self) -> int:
        return len(self.positions)

    @property
    def exclusion_half_width(self) -> float:
        return self.patch_half_width + self.margin

    def as_array(self) -> np.ndarray:
        return np.array(self.positions, dtype=float)

    def validate(self, plate: PlateConfig) -> None:
        for j, p in enumerate(self.positions, start=1):
            if not plate.contains(p):
                raise ConfigError(f"sensor S{j} at {p} lies outside the plate")

    def subset(self, indices: Sequence[int]) -> "SensorArray":
        """Sensors picked by 1-based index, in the given order."""
        _check_indices(indices, self.n_sensors)
        return SensorArray(tuple(self.positions[i - 1] for i in indices), self.patch_half_width, self.margin)

    def hull(self) -> tuple[float, float, float, float]:
        p = self.as_array()
        return p[:, 0].min(), p[:, 0].max(), p[:, 1].min(), p[:, 1].max()


def _check_indices(indices, n):
    if len(indices) == 0:
        raise ConfigError("no sensors selected")
    if len(set(indices)) != len(indices):
        raise ConfigError(f"duplicate sensor indices {list(indices)}")
    for i in indices:
        if not 1 <= int(i) <= n:
            raise ConfigError(f"sensor index {i} outside [1, {n}]")


@dataclass(frozen=True)
class ImpactEvent:
    position: tuple
    id: str = "imp00000"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "position", (float(self.position[0]), float(self.position[1])))


@dataclass(frozen=True)
class NoiseConfig:
    noise_sigma: float = 1e-3
    dc_offset_max: float = 3e-3
    quantization_step: float = 0.31e-3
    clip: float = 10.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v < 0:
                raise ConfigError(f"NoiseConfig.{k} must be >= 0")

    @classmethod
    def noiseless(cls) -> "NoiseConfig":
        return cls(0.0, 0.0, 0.0, 10.0)


@dataclass(frozen=True)
class WaveletConfig:
    """Gaussian-windowed tone burst; the envelope peaks 3 sigma after onset."""

    center_freq: float = 10e3
    sigma: float = 0.5e-3
    amplitude: float = 1.0  # V * m^(1/2)

    @property
    def duration(self) -> float:
        return 6.0 * self.sigma


def sample_impact_positions(n: int, array: SensorArray, plate: PlateConfig, seed: int) -> list[ImpactEvent]:
    """Uniform impact positions over the sensor hull, away from the patches.

    The admissible region is the axis-aligned bounding box of the sensor
    centres minus a Chebyshev square of half-width ``patch_half_width +
    margin`` around each sensor.
    """
    if n < 1:
        raise ConfigError("n must be >= 1")
    array.validate(plate)
    x0, x1, y0, y1 = array.hull()
    if x1 <= x0 or y1 <= y0:
        raise ConfigError("admissible region is degenerate (sensor hull has zero area)")
    sensors = array.as_array()
    excl = array.exclusion_half_width

    pos_ss, seed_ss = np.random.SeedSequence(seed).spawn(2)
    rng = np.random.default_rng(pos_ss)
    accepted = []
    attempts = 0
    chunk = max(64, 2 * n)
    while len(accepted) < n:
        if attempts >= MAX_REJECTION_ATTEMPTS:
            raise ConfigError(f"rejection sampling gave up after {attempts} attempts (region degenerate)")
        m = min(chunk, MAX_REJECTION_ATTEMPTS - attempts)
        pts = np.column_stack([rng.uniform(x0, x1, m), rng.uniform(y0, y1, m)])
        attempts += m
        cheb = np.abs(pts[:, None, :] - sensors[None, :, :]).max(axis=2)
        ok = pts[(cheb > excl).all(axis=1)]
        accepted.extend(ok[: n - len(accepted)])
    seeds = np.random.default_rng(seed_ss).integers(0, 2**63 - 1, size=n)
    return [ImpactEvent((p[0], p[1]), f"imp{k:05d}", int(s)) for k, (p, s) in enumerate(zip(accepted, seeds))]


def image_sources(position, plate: PlateConfig, order: int = 1) -> list[tuple[tuple[float, float], int]]:
    """Source plus its mirror images across the four plate edges."""
    if order not in (0, 1):
        raise UnsupportedOrderError(f"reflection order {order} not supported (use 0 or 1)")
    x, y = float(position[0]), float(position[1])
    out = [((x, y), 0)]
    if order == 1:
        W, H = plate.width_x, plate.width_y
        out += [((-x, y), 1), ((2 * W - x, y), 1), ((x, -y), 1), ((x, 2 * H - y), 1)]
    return out


def arrival_time(source, sensor, plate: PlateConfig) -> float:
    d = np.hypot(source[0] - sensor[0], source[1] - sensor[1])
    return plate.trigger_delay + d / plate.group_velocity


def required_duration(event: ImpactEvent, plate: PlateConfig, array: SensorArray,
                      wavelet: WaveletConfig = WaveletConfig(), reflection_order: int = 1) -> float:
    """Shortest recording that holds every arrival's full burst."""
    last = max(
        arrival_time(src, s, plate)
        for src, _ in image_sources(event.position, plate, reflection_order)
        for s in array.positions
    )
    return last + wavelet.duration


def clean_signals(event: ImpactEvent, plate: PlateConfig, array: SensorArray, n_samples: int,
                  wavelet: WaveletConfig = WaveletConfig(), reflection_order: int = 1) -> np.ndarray:
    """Noiseless sensor voltages, shape (n_samples, S), float64."""
    fs = plate.sample_rate
    out = np.zeros((n_samples, array.n_sensors))
    sig = wavelet.sigma
    tail = int(np.ceil(16 * sig * fs))  # envelope < 1e-37 beyond this
    for j, sensor in enumerate(array.positions):
        for src, _ in image_sources(event.position, plate, reflection_order):
            d = max(float(np.hypot(src[0] - sensor[0], src[1] - sensor[1])), array.patch_half_width)
            tau = plate.trigger_delay + d / plate.group_velocity
            amp = wavelet.amplitude * d**-0.5 * np.exp(-plate.attenuation * d)
            i0 = int(np.ceil(tau * fs - 1e-9))
            i1 = min(n_samples, i0 + tail)
            if i0 >= n_samples or amp == 0:
                continue
            dt = np.arange(i0, i1) / fs - tau
            dt = np.maximum(dt, 0.0)
            out[i0:i1, j] += amp * np.sin(2 * np.pi * wavelet.center_freq * dt) * np.exp(
                -((dt - 3 * sig) ** 2) / (2 * sig**2)
            )
    return out


def synth_recording(event: ImpactEvent, plate: PlateConfig, array: SensorArray, noise: NoiseConfig,
                    duration: float, wavelet: WaveletConfig = WaveletConfig(),
                    reflection_order: int = 1) -> Recording:
    """Simulate one impact. Deterministic given ``event.seed``."""
    n = int(round(duration * plate.sample_rate))
    if n < 1:
        raise CoverageError("duration shorter than one sample")
    need = required_duration(event, plate, array, wavelet, reflection_order)
    if n / plate.sample_rate + 1e-12 < need:
        raise CoverageError(f"duration {duration:.6g} s does not cover the last arrival (needs {need:.6g} s)")
    v = clean_signals(event, plate, array, n, wavelet, reflection_order)
    rng = np.random.default_rng(event.seed)
    offsets = rng.uniform(-noise.dc_offset_max, noise.dc_offset_max, size=array.n_sensors)
    v += rng.normal(0.0, noise.noise_sigma, size=v.shape) + offsets
    if noise.quantization_step > 0:
        v = np.round(v / noise.quantization_step) * noise.quantization_step
    if noise.clip > 0:
        v = np.clip(v, -noise.clip, noise.clip)
    return Recording(v, plate.sample_rate, impact=event)


def default_duration(plate: PlateConfig) -> float:
    # room for a 20 ms window behind any onset plus the largest crop shift
    return plate.trigger_delay + 0.025


def _generate_one(args):
    event, plate, array, noise, wavelet, duration, order, path = args
    rec = synth_recording(event, plate, array, noise, duration, wavelet, order)
    write_signal(path, rec)


def generate_dataset(out_dir, n_impacts: int = 5000, plate: PlateConfig = PlateConfig(),
                     array: SensorArray = SensorArray(), noise: NoiseConfig = NoiseConfig(),
                     wavelet: WaveletConfig = WaveletConfig(), duration: Optional[float] = None,
                     seed: int = 0, reflection_order: int = 1, workers: int = 1) -> dict:
    """Write ``n_impacts`` signal files plus ``manifest.json`` into ``out_dir``.

    Output is byte-identical for identical arguments, independent of
    ``workers``.
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create {out_dir}: {exc}") from exc
    if duration is None:
        duration = default_duration(plate)
    events = sample_impact_positions(n_impacts, array, plate, seed)
    jobs = [(ev, plate, array, noise, wavelet, duration, reflection_order, out_dir / f"{ev.id}.bin")
            for ev in events]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            list(pool.map(_generate_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        for job in jobs:
            _generate_one(job)

    manifest = {
        "format": "impw-dataset",
        "version": 1,
        "master_seed": int(seed),
        "duration_s": float(duration),
        "reflection_order": int(reflection_order),
        "plate": asdict(plate),
        "sensors": {
            "positions": [list(p) for p in array.positions],
            "patch_half_width": array.patch_half_width,
            "margin": array.margin,
        },
        "noise": asdict(noise),
        "wavelet": asdict(wavelet),
        "entries": [
            {"id": ev.id, "position_m": list(ev.position), "file": f"{ev.id}.bin", "seed": ev.seed}
            for ev in events
        ],
    }
    write_manifest(out_dir / MANIFEST_NAME, manifest)
    logger.info("wrote %d impacts to %s", n_impacts, out_dir)
    return manifest


def write_manifest(path, manifest: dict) -> None:
    path = Path(path)
    try:
        path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot write manifest {path}: {exc}") from exc


def read_manifest(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed manifest {path}: {exc}") from exc


def configs_from_manifest(manifest: dict):
    """Rebuild (plate, array, noise, wavelet) from a manifest."""
    s = manifest["sensors"]
    return (
        PlateConfig(**manifest["plate"]),
        SensorArray(tuple(tuple(p) for p in s["positions"]), s["patch_half_width"], s["margin"]),
        NoiseConfig(**manifest["noise"]),
        WaveletConfig(**manifest.get("wavelet", {})),
    )


def default_workers() -> int:
    env = os.environ.get("LAMB_LOCATE_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"LAMB_LOCATE_WORKERS={env!r} is not an integer")
    return os.cpu_count() or 1
