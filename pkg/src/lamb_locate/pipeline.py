"""From raw recordings to fixed-length training windows.

Steps, in order: threshold onset detection at the native rate, a crop
that starts a random shift before the onset, plain decimation (no
filtering), and sensor selection. Sample values are never altered.
"""

from __future__ import annotations

import copy
import logging
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ConfigError, CoverageError, DataError, NoOnsetError
from .plate import (
    ImpactEvent,
    configs_from_manifest,
    read_manifest,
    write_manifest,
    _check_indices,
)
from .recording import Recording, encode_signal, read_signal

logger = logging.getLogger(__name__)

ONSET_THRESHOLD = 0.05  # volts
TARGET_RATE = 250e3
SENSOR_PRESETS = {"1-2": (1, 2), "1-4": (1, 2, 3, 4), "1-8": tuple(range(1, 9))}


@dataclass
class SampleWindow:
    samples: np.ndarray  # (L_w, S_sel) volts
    sample_rate: float
    target: tuple
    source_id: str
    t_th: Optional[int] = None  # onset index at the native rate
    t_shift: Optional[float] = None


@dataclass(frozen=True)
class SplitSpec:
    n_train: int = 4000
    n_val: int = 500
    n_test: int = 500
    seed: int = 0


@dataclass(frozen=True)
class PipelineConfig:
    """Everything needed to turn a recording into a model input."""

    sensors: tuple = (1, 2, 3, 4)
    window: float = 0.020  # seconds
    shift_range: tuple = (0.5e-3, 2e-3)
    threshold: float = ONSET_THRESHOLD
    target_rate: float = TARGET_RATE

    def __post_init__(self):
        object.__setattr__(self, "sensors", tuple(int(i) for i in self.sensors))
        object.__setattr__(self, "shift_range", tuple(float(s) for s in self.shift_range))
        lo, hi = self.shift_range
        if not 0 <= lo <= hi:
            raise ConfigError(f"invalid shift range {self.shift_range}")
        if self.window <= 0 or self.threshold <= 0 or self.target_rate <= 0:
            raise ConfigError("window, threshold and target_rate must be positive")

    def n_samples(self, native_rate: float) -> int:
        factor = decimation_factor(native_rate, self.target_rate)
        return int(round(self.window * native_rate)) // factor


def parse_sensors(text: str) -> tuple:
    """``"1-4"`` -> (1, 2, 3, 4); ``"1,3,5"`` -> (1, 3, 5)."""
    text = text.strip()
    try:
        if "-" in text and "," not in text:
            a, b = (int(t) for t in text.split("-"))
            if b < a:
                raise ConfigError(f"empty sensor range {text!r}")
            return tuple(range(a, b + 1))
        return tuple(int(t) for t in text.split(","))
    except ValueError:
        raise ConfigError(f"cannot parse sensor selection {text!r}") from None


def decimation_factor(native_rate: float, target_rate: float) -> int:
    f = native_rate / target_rate
    if f < 1 or abs(f - round(f)) > 1e-9:
        raise ConfigError(f"native rate {native_rate} is not an integer multiple of {target_rate}")
    return int(round(f))


def detect_onset(recording: Recording, threshold: float = ONSET_THRESHOLD) -> int:
    """First sample index where any channel's absolute value exceeds ``threshold``."""
    if threshold <= 0:
        raise ConfigError("threshold must be positive")
    above = (np.abs(recording.samples) > threshold).any(axis=1)
    if not above.any():
        raise NoOnsetError(f"no sample exceeds {threshold} V")
    return int(np.argmax(above))


def crop_window(recording: Recording, t_th: int, t_shift: float, T_window: float) -> Recording:
    fs = recording.sample_rate
    start = t_th - int(round(t_shift * fs))
    n = int(round(T_window * fs))
    if n < 1:
        raise ConfigError("window shorter than one sample")
    if start < 0 or start + n > recording.n_samples:
        raise CoverageError(
            f"window [{start}, {start + n}) outside recording of {recording.n_samples} samples"
        )
    return Recording(recording.samples[start:start + n], fs, recording.impact)


def downsample(recording: Recording, factor: int) -> Recording:
    """Keep every ``factor``-th sample from index 0; no anti-alias filter."""
    if int(factor) != factor or factor < 1:
        raise ConfigError(f"decimation factor must be a positive integer, got {factor}")
    factor = int(factor)
    if factor == 1:
        return recording
    keep = recording.n_samples // factor
    if keep < 1:
        raise CoverageError("recording shorter than the decimation factor")
    return Recording(recording.samples[: keep * factor : factor], recording.sample_rate / factor, recording.impact)


def select_sensors(window, indices: Sequence[int]):
    """Columns by 1-based sensor index, in the given order."""
    S = window.samples.shape[1]
    _check_indices(indices, S)
    cols = [int(i) - 1 for i in indices]
    if cols == list(range(S)):
        return window
    return replace(window, samples=window.samples[:, cols])


def split_dataset(manifest: dict, spec: SplitSpec) -> dict:
    """Copy of ``manifest`` with a ``split`` label on every assigned entry."""
    entries = manifest["entries"]
    n = len(entries)
    total = spec.n_train + spec.n_val + spec.n_test
    if min(spec.n_train, spec.n_val, spec.n_test) < 0 or total > n:
        raise ConfigError(f"split {spec.n_train}/{spec.n_val}/{spec.n_test} does not fit {n} impacts")
    out = copy.deepcopy(manifest)
    order = np.random.default_rng(spec.seed).permutation(n)
    labels = ["train"] * spec.n_train + ["val"] * spec.n_val + ["test"] * spec.n_test
    for e in out["entries"]:
        e.pop("split", None)
    for idx, label in zip(order, labels):
        out["entries"][idx]["split"] = label
    out["split_spec"] = {"n_train": spec.n_train, "n_val": spec.n_val, "n_test": spec.n_test, "seed": spec.seed}
    return out


def draw_shift(shift_seed: int, item_id: str, shift_range, rate: float) -> float:
    """Random crop shift for one item, snapped to the output sample grid.

    The stream is keyed by ``(shift_seed, item_id)`` so the draw does not
    depend on batch order. Snapping puts the onset sample on a retained
    decimation phase.
    """
    lo, hi = shift_range
    k_lo, k_hi = int(np.ceil(lo * rate - 1e-9)), int(np.floor(hi * rate + 1e-9))
    if k_hi < k_lo:
        raise ConfigError(f"shift range {shift_range} holds no sample at {rate} Hz")
    rng = np.random.default_rng([int(shift_seed) & 0xFFFFFFFF, zlib.crc32(item_id.encode())])
    return int(rng.integers(k_lo, k_hi + 1)) / rate


def prepare_window(recording: Recording, t_th: int, t_shift: float, cfg: PipelineConfig,
                   target, source_id: str) -> SampleWindow:
    factor = decimation_factor(recording.sample_rate, cfg.target_rate)
    rec = downsample(crop_window(recording, t_th, t_shift, cfg.window), factor)
    win = SampleWindow(rec.samples, rec.sample_rate, tuple(target), source_id, t_th, t_shift)
    return select_sensors(win, cfg.sensors)


class Dataset:
    """A manifest plus lazily loaded, cached recordings."""

    def __init__(self, root, manifest: Optional[dict] = None, recordings: Optional[dict] = None):
        self.root = Path(root) if root is not None else None
        self.manifest = manifest if manifest is not None else read_manifest(self.root)
        self._entries = {e["id"]: e for e in self.manifest["entries"]}
        self._recordings = dict(recordings or {})
        self._onsets = {}

    @classmethod
    def open(cls, root) -> "Dataset":
        return cls(root)

    @classmethod
    def from_recordings(cls, recordings: Sequence[Recording], plate=None, array=None) -> "Dataset":
        """In-memory dataset; each recording must carry its ImpactEvent."""
        entries, recs = [], {}
        for r in recordings:
            ev = r.impact
            entries.append({"id": ev.id, "position_m": list(ev.position), "file": None, "seed": ev.seed})
            recs[ev.id] = r
        manifest = {"entries": entries}
        if plate is not None and array is not None:
            from dataclasses import asdict
            manifest["plate"] = asdict(plate)
            manifest["sensors"] = {"positions": [list(p) for p in array.positions],
                                   "patch_half_width": array.patch_half_width, "margin": array.margin}
        return cls(None, manifest, recs)

    def with_manifest(self, manifest: dict) -> "Dataset":
        ds = Dataset(self.root, manifest, self._recordings)
        ds._onsets = self._onsets
        return ds

    @property
    def ids(self) -> list:
        return list(self._entries)

    def configs(self):
        return configs_from_manifest(self.manifest)

    @property
    def n_sensors(self) -> int:
        return len(self.manifest["sensors"]["positions"])

    def split_ids(self, label: str) -> list:
        return [e["id"] for e in self.manifest["entries"] if e.get("split") == label]

    def target(self, item_id: str) -> tuple:
        return tuple(self._entry(item_id)["position_m"])

    def _entry(self, item_id):
        try:
            return self._entries[item_id]
        except KeyError:
            raise DataError(f"unknown impact id {item_id!r}") from None

    def recording(self, item_id: str) -> Recording:
        rec = self._recordings.get(item_id)
        if rec is None:
            e = self._entry(item_id)
            path = self.root / e["file"]
            rec = read_signal(path)
            rec.impact = ImpactEvent(tuple(e["position_m"]), item_id, e.get("seed", 0))
            self._recordings[item_id] = rec
        return rec

    def onset(self, item_id: str, threshold: float = ONSET_THRESHOLD) -> int:
        key = (item_id, threshold)
        if key not in self._onsets:
            try:
                self._onsets[key] = detect_onset(self.recording(item_id), threshold)
            except NoOnsetError as exc:
                raise NoOnsetError(f"{item_id}: {exc}") from None
        return self._onsets[key]

    def usable(self, ids: Iterable[str], threshold: float = ONSET_THRESHOLD) -> list:
        """Drop recordings without an onset, logging each one."""
        keep = []
        for i in ids:
            try:
                self.onset(i, threshold)
                keep.append(i)
            except NoOnsetError:
                logger.warning("dropping %s: no sample above %g V", i, threshold)
        return keep

    def window(self, item_id: str, cfg: PipelineConfig, t_shift: float) -> SampleWindow:
        try:
            return prepare_window(self.recording(item_id), self.onset(item_id, cfg.threshold),
                                  t_shift, cfg, self.target(item_id), item_id)
        except DataError as exc:
            raise type(exc)(f"{item_id}: {exc}") from None


def load_window_batch(dataset: Dataset, ids: Sequence[str], sensors: Sequence[int], T_window: float,
                      shift_seed: int, shift_range=(0.5e-3, 2e-3), threshold: float = ONSET_THRESHOLD,
                      target_rate: float = TARGET_RATE) -> list[SampleWindow]:
    cfg = PipelineConfig(tuple(sensors), T_window, tuple(shift_range), threshold, target_rate)
    return windows_for(dataset, ids, cfg, shift_seed)


def windows_for(dataset: Dataset, ids: Sequence[str], cfg: PipelineConfig, shift_seed: int) -> list[SampleWindow]:
    return [dataset.window(i, cfg, draw_shift(shift_seed, i, cfg.shift_range, cfg.target_rate)) for i in ids]


def stack_windows(windows: Sequence[SampleWindow], dtype=np.float64) -> tuple[np.ndarray, np.ndarray]:
    """(B, L, S) inputs and (B, 2) targets."""
    X = np.stack([w.samples for w in windows]).astype(dtype)
    Y = np.array([w.target for w in windows], dtype=dtype)
    return X, Y


def write_window_cache(windows: Sequence[SampleWindow], out_dir) -> dict:
    """Persist prepared windows in the signal-file layout plus a manifest."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create {out_dir}: {exc}") from exc
    entries = []
    for w in windows:
        name = f"{w.source_id}.win.bin"
        try:
            (out_dir / name).write_bytes(encode_signal(w.samples, w.sample_rate))
        except OSError as exc:
            raise DataError(f"cannot write {out_dir / name}: {exc}") from exc
        entries.append({"id": w.source_id, "position_m": list(w.target), "file": name,
                        "t_th": w.t_th, "t_shift": w.t_shift})
    manifest = {"format": "impw-windows", "version": 1, "entries": entries}
    write_manifest(out_dir / "manifest.json", manifest)
    return manifest
