"""Recurrent location estimator: linear input projection, one GRU cell,
and a linear position readout applied at every time step.

Gate convention (reset gate acts on the recurrent candidate term)::

    z_t = W_in x_t + b_in
    r   = sigmoid(W_r z_t + U_r h + b_r)
    u   = sigmoid(W_u z_t + U_u h + b_u)
    n   = tanh(W_n z_t + b_n + r * (U_n h + b_hn))
    h'  = (1 - u) * n + u * h
    y_t = W_out h' + b_out
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.special import expit

from .errors import ConfigError, DataError, DimensionError, FormatError, NumericError

PARAM_ORDER = ("W_in", "b_in", "W_r", "U_r", "b_r", "W_u", "U_u", "b_u",
               "W_n", "U_n", "b_n", "b_hn", "W_out", "b_out")
CKPT_MAGIC = b"GRUC"
CKPT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sIII")


def param_shapes(S_in: int, H: int) -> dict:
    sq = (H, H)
    return {"W_in": (H, S_in), "b_in": (H,), "W_r": sq, "U_r": sq, "b_r": (H,),
            "W_u": sq, "U_u": sq, "b_u": (H,), "W_n": sq, "U_n": sq, "b_n": (H,),
            "b_hn": (H,), "W_out": (2, H), "b_out": (2,)}


@dataclass
class ModelParams:
    W_in: np.ndarray
    b_in: np.ndarray
    W_r: np.ndarray
    U_r: np.ndarray
    b_r: np.ndarray
    W_u: np.ndarray
    U_u: np.ndarray
    b_u: np.ndarray
    W_n: np.ndarray
    U_n: np.ndarray
    b_n: np.ndarray
    b_hn: np.ndarray
    W_out: np.ndarray
    b_out: np.ndarray
    metadata: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        H, S = np.shape(self.W_in)
        for name, shape in param_shapes(S, H).items():
            arr = np.asarray(getattr(self, name))
            if arr.shape != shape:
                raise DimensionError(f"{name} has shape {arr.shape}, expected {shape}")
            setattr(self, name, arr)

    @property
    def S_in(self) -> int:
        return self.W_in.shape[1]

    @property
    def H(self) -> int:
        return self.W_in.shape[0]

    def tensors(self) -> dict:
        return {k: getattr(self, k) for k in PARAM_ORDER}

    def map(self, fn, *others) -> "ModelParams":
        return ModelParams(**{k: fn(getattr(self, k), *(getattr(o, k) for o in others)) for k in PARAM_ORDER})

    def copy(self) -> "ModelParams":
        out = self.map(np.copy)
        out.metadata = dict(self.metadata)
        return out

    def zeros_like(self) -> "ModelParams":
        return self.map(np.zeros_like)

    def astype(self, dtype) -> "ModelParams":
        return self.map(lambda a: a.astype(dtype))

    def flat(self) -> np.ndarray:
        return np.concatenate([getattr(self, k).ravel() for k in PARAM_ORDER])

    @classmethod
    def from_flat(cls, vec, S_in: int, H: int) -> "ModelParams":
        out, i = {}, 0
        for k, shape in param_shapes(S_in, H).items():
            n = int(np.prod(shape))
            out[k] = np.asarray(vec[i:i + n], dtype=float).reshape(shape)
            i += n
        return cls(**out)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.tensors().values())


@dataclass
class PredictionTrace:
    predictions: np.ndarray  # (L, 2) metres
    final_hidden: np.ndarray  # (H,)

    def __len__(self):
        return self.predictions.shape[0]


def init_params(S_in: int, H: int, seed: int = 0) -> ModelParams:
    """Every tensor uniform in [-1/sqrt(H), 1/sqrt(H)], drawn in PARAM_ORDER."""
    if S_in < 1 or H < 1:
        raise ConfigError("S_in and H must be >= 1")
    rng = np.random.default_rng(seed)
    k = 1.0 / np.sqrt(H)
    return ModelParams(**{name: rng.uniform(-k, k, size=shape) for name, shape in param_shapes(S_in, H).items()})


def input_projection(x, params: ModelParams) -> np.ndarray:
    x = np.asarray(x, dtype=params.W_in.dtype)
    if x.shape[-1] != params.S_in:
        raise DimensionError(f"input has {x.shape[-1]} channels, model expects {params.S_in}")
    return x @ params.W_in.T + params.b_in


def gru_step(h_prev, z, params: ModelParams) -> np.ndarray:
    h_prev = np.asarray(h_prev)
    z = np.asarray(z)
    if h_prev.shape[-1] != params.H or z.shape[-1] != params.H:
        raise DimensionError(f"hidden/projection size must be {params.H}")
    if not (np.all(np.isfinite(h_prev)) and np.all(np.isfinite(z))):
        raise NumericError("non-finite input to gru_step")
    p = params
    r = expit(z @ p.W_r.T + h_prev @ p.U_r.T + p.b_r)
    u = expit(z @ p.W_u.T + h_prev @ p.U_u.T + p.b_u)
    n = np.tanh(z @ p.W_n.T + p.b_n + r * (h_prev @ p.U_n.T + p.b_hn))
    return (1.0 - u) * n + u * h_prev


def readout(h, params: ModelParams) -> np.ndarray:
    return np.asarray(h) @ params.W_out.T + params.b_out


@dataclass
class ForwardCache:
    """Activations kept for backpropagation. Arrays are time-major (L, B, .)."""

    X: np.ndarray
    Z: np.ndarray
    h: np.ndarray  # (L + 1, B, H); h[0] is the initial state
    r: np.ndarray
    u: np.ndarray
    n: np.ndarray
    hn: np.ndarray  # U_n h + b_hn


def _stacked(params: ModelParams):
    Wg = np.concatenate([params.W_r, params.W_u, params.W_n])
    bg = np.concatenate([params.b_r, params.b_u, params.b_n])
    U = np.concatenate([params.U_r, params.U_u, params.U_n])
    return Wg, bg, U


def forward_batch(X, params: ModelParams, keep_cache: bool = False):
    """Run a batch ``X`` of shape (B, L, S_in).

    Returns per-step predictions (B, L, 2) and, if requested, the
    activation cache for :func:`lamb_locate.train.backward`.
    """
    X = np.asarray(X)
    dtype = params.W_in.dtype
    if X.ndim != 3:
        raise DimensionError(f"expected (B, L, S) input, got shape {X.shape}")
    B, L, S = X.shape
    if S != params.S_in:
        raise DimensionError(f"input has {S} sensors, model expects {params.S_in}")
    if L < 1:
        raise ConfigError("sequence length must be >= 1")
    if not np.all(np.isfinite(X)):
        raise NumericError("non-finite input samples")
    H = params.H
    Xt = np.ascontiguousarray(X.transpose(1, 0, 2), dtype=dtype)
    Wg, bg, U = _stacked(params)
    UT = np.ascontiguousarray(U.T)
    with np.errstate(over="ignore", invalid="ignore"):
        Z = Xt @ params.W_in.T + params.b_in
        GI = Z @ Wg.T + bg  # (L, B, 3H)
    hs = np.zeros((L + 1, B, H), dtype=dtype)
    if keep_cache:
        R = np.empty((L, B, H), dtype)
        Uu = np.empty_like(R)
        N = np.empty_like(R)
        HN = np.empty_like(R)
    b_hn = params.b_hn
    h = hs[0]
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(L):
            gh = h @ UT
            gi = GI[t]
            ru = expit(gi[:, : 2 * H] + gh[:, : 2 * H])
            r = ru[:, :H]
            u = ru[:, H:]
            hn = gh[:, 2 * H:] + b_hn
            n = np.tanh(gi[:, 2 * H:] + r * hn)
            h = n + u * (h - n)
            hs[t + 1] = h
            if keep_cache:
                R[t], Uu[t], N[t], HN[t] = r, u, n, hn
    if not np.all(np.isfinite(h)):
        bad = int(np.argmax(~np.isfinite(hs[1:]).all(axis=(1, 2))))
        raise NumericError(f"non-finite hidden state at step {bad}")
    Y = (hs[1:] @ params.W_out.T + params.b_out).transpose(1, 0, 2)
    cache = ForwardCache(Xt, Z, hs, R, Uu, N, HN) if keep_cache else None
    return Y, cache


def forward_trace(X, params: ModelParams, dtype=np.float64) -> PredictionTrace:
    """Per-step predictions for one (L, S_in) window, starting from h = 0.

    ``dtype=np.float32`` gives a reduced-precision inference mode.
    """
    X = np.asarray(X)
    if X.ndim != 2:
        raise DimensionError(f"expected (L, S) window, got shape {X.shape}")
    p = params if params.W_in.dtype == dtype else params.astype(dtype)
    Y, cache = forward_batch(X[None], p, keep_cache=True)
    return PredictionTrace(Y[0], cache.h[-1, 0].copy())


def predict_batch(X, params: ModelParams, chunk: int = 256) -> np.ndarray:
    """Predictions (B, L, 2) for a stack of windows, processed in chunks."""
    X = np.asarray(X)
    out = [forward_batch(X[i:i + chunk], params)[0] for i in range(0, X.shape[0], chunk)]
    return np.concatenate(out)


def save_checkpoint(params: ModelParams, path, metadata: Optional[dict] = None) -> None:
    meta = dict(params.metadata)
    meta.update(metadata or {})
    meta.update({"S_in": params.S_in, "H": params.H})
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts = [_CKPT_HEADER.pack(CKPT_MAGIC, CKPT_VERSION, params.S_in, params.H)]
    parts += [np.ascontiguousarray(getattr(params, k), dtype="<f8").tobytes() for k in PARAM_ORDER]
    parts += [struct.pack("<I", len(blob)), blob]
    path = Path(path)
    try:
        path.write_bytes(b"".join(parts))
    except OSError as exc:
        raise DataError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path) -> ModelParams:
    """Read a checkpoint; ``.metadata`` holds the stored JSON blob."""
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    return decode_checkpoint(buf, str(path))


def decode_checkpoint(buf: bytes, source: str = "<bytes>") -> ModelParams:
    if len(buf) < _CKPT_HEADER.size:
        raise FormatError(f"{source}: truncated header")
    magic, version, S_in, H = _CKPT_HEADER.unpack_from(buf)
    if magic != CKPT_MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}")
    if version != CKPT_VERSION:
        raise FormatError(f"{source}: unsupported checkpoint version {version}")
    if S_in < 1 or H < 1:
        raise FormatError(f"{source}: invalid dimensions S_in={S_in}, H={H}")
    shapes = param_shapes(S_in, H)
    n_vals = sum(int(np.prod(s)) for s in shapes.values())
    off = _CKPT_HEADER.size + 8 * n_vals
    if len(buf) < off + 4:
        raise FormatError(f"{source}: truncated parameter block")
    (n_meta,) = struct.unpack_from("<I", buf, off)
    if len(buf) != off + 4 + n_meta:
        raise FormatError(f"{source}: metadata length mismatch")
    try:
        meta = json.loads(buf[off + 4:].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{source}: corrupt metadata ({exc})") from None
    flat = np.frombuffer(buf, dtype="<f8", count=n_vals, offset=_CKPT_HEADER.size).astype(np.float64)
    params = ModelParams.from_flat(flat, S_in, H)
    params.metadata = meta
    return params


def check_input(X, params: ModelParams) -> None:
    S = np.shape(X)[-1]
    if S != params.S_in:
        raise DimensionError(f"data has {S} sensors but the model was trained on {params.S_in}")
