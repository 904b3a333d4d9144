"""Recording container and the ``IMPW`` binary signal-file format.

Layout (little-endian)::

    4s   magic  b"IMPW"
    u32  version (1)
    u32  L      number of samples
    u32  S      number of sensors
    f64  sample rate in Hz
    f32  L*S values, time-major (sample i contiguous across sensors)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, DataError, FormatError

MAGIC = b"IMPW"
VERSION = 1
_HEADER = struct.Struct("<4sIIId")
MAX_VOLTS = 10.0


@dataclass
class Recording:
    """``L x S`` matrix of sensor voltages sampled at ``sample_rate``.

    Row ``i`` is the sensor vector at time ``i / sample_rate``.
    """

    samples: np.ndarray
    sample_rate: float
    impact: Optional["ImpactEvent"] = None  # noqa: F821

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.samples.ndim != 2 or min(self.samples.shape) < 1:
            raise ConfigError(f"recording must be a non-empty L x S matrix, got shape {self.samples.shape}")
        if not self.sample_rate > 0:
            raise ConfigError("sample_rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise DataError("recording contains non-finite samples")
        if np.max(np.abs(self.samples)) > MAX_VOLTS:
            raise DataError(f"recording exceeds the +-{MAX_VOLTS} V input range")

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def n_sensors(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate


def encode_signal(samples: np.ndarray, sample_rate: float) -> bytes:
    samples = np.asarray(samples)
    L, S = samples.shape
    body = np.ascontiguousarray(samples, dtype="<f4").tobytes()
    return _HEADER.pack(MAGIC, VERSION, L, S, float(sample_rate)) + body


def decode_signal(buf: bytes, source: str = "<bytes>") -> tuple[np.ndarray, float]:
    if len(buf) < _HEADER.size:
        raise FormatError(f"{source}: truncated header ({len(buf)} bytes)")
    magic, version, L, S, fs = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"{source}: unsupported version {version}")
    expected = _HEADER.size + 4 * L * S
    if len(buf) != expected:
        raise FormatError(f"{source}: expected {expected} bytes, found {len(buf)}")
    data = np.frombuffer(buf, dtype="<f4", offset=_HEADER.size).reshape(L, S)
    return data.astype(np.float32), fs


def write_signal(path, recording: Recording) -> None:
    path = Path(path)
    try:
        path.write_bytes(encode_signal(recording.samples, recording.sample_rate))
    except OSError as exc:
        raise DataError(f"cannot write signal file {path}: {exc}") from exc


def read_signal(path) -> Recording:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read signal file {path}: {exc}") from exc
    samples, fs = decode_signal(buf, str(path))
    return Recording(samples, fs)
