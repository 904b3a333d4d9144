"""Classical time-of-arrival localization used as a reference.

Arrival times come from the same threshold picker as the learning
pipeline, applied per channel. The source position and the unknown
emission time are fitted by least squares: a coarse grid over the plate
(emission time eliminated in closed form) seeds a Gauss-Newton refinement.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, InsufficientDataError
from .pipeline import ONSET_THRESHOLD
from .plate import PlateConfig, SensorArray
from .recording import Recording

GRID_PITCH = 0.010
MAX_ITER = 50
STEP_TOL = 1e-9


def pick_arrivals(recording: Recording, threshold: float = ONSET_THRESHOLD) -> np.ndarray:
    """Per-channel first threshold crossing in seconds; NaN where none."""
    above = np.abs(recording.samples) > threshold
    hit = above.any(axis=0)
    idx = np.argmax(above, axis=0).astype(float)
    idx[~hit] = np.nan
    return idx / recording.sample_rate


def _best_t0(P, toas, c, p):
    d = np.linalg.norm(p - P, axis=-1)
    return np.mean(toas - d / c, axis=-1)


def locate_from_arrivals(toas, positions, group_velocity: float, bounds=None):
    """Least-squares source position from arrival times.

    Minimises sum_j (|p - s_j| / c - (tau_j - t0))^2 over (p, t0).
    ``bounds`` = (xmin, xmax, ymin, ymax) for the seeding grid.
    """
    toas = np.asarray(toas, dtype=float)
    P = np.asarray(positions, dtype=float)
    ok = np.isfinite(toas)
    if ok.sum() < 3:
        raise InsufficientDataError(f"triangulation needs at least 3 arrivals, got {int(ok.sum())}")
    toas, P = toas[ok], P[ok]
    c = float(group_velocity)
    if c <= 0:
        raise ConfigError("group velocity must be positive")
    if bounds is None:
        plate = PlateConfig()
        bounds = (0.0, plate.width_x, 0.0, plate.width_y)
    x0, x1, y0, y1 = bounds
    gx = np.arange(x0, x1 + GRID_PITCH / 2, GRID_PITCH)
    gy = np.arange(y0, y1 + GRID_PITCH / 2, GRID_PITCH)
    G = np.stack(np.meshgrid(gx, gy, indexing="ij"), axis=-1).reshape(-1, 1, 2)
    D = np.linalg.norm(G - P[None], axis=-1) / c  # (n_grid, S)
    resid = D - toas
    resid -= resid.mean(axis=1, keepdims=True)  # optimal t0 removes the mean
    k = int(np.argmin(np.sum(resid**2, axis=1)))
    p = G[k, 0].copy()
    t0 = _best_t0(P, toas, c, p)

    # Gauss-Newton on (x, y, t0), residual_j = |p - s_j| / c + t0 - tau_j,
    # projected onto the plate, with step halving so the cost never increases
    lo, hi = np.array([x0, y0]), np.array([x1, y1])
    def resid(p, t0):
        return np.linalg.norm(p - P, axis=1) / c + t0 - toas

    r = resid(p, t0)
    cost = r @ r
    for _ in range(MAX_ITER):
        diff = p - P
        d = np.maximum(np.linalg.norm(diff, axis=1), 1e-12)
        J = np.column_stack([diff / (d[:, None] * c), np.ones_like(d)])
        step, *_ = np.linalg.lstsq(J, -r, rcond=None)
        alpha = 1.0
        for _ in range(30):
            p_new, t0_new = np.clip(p + alpha * step[:2], lo, hi), t0 + alpha * step[2]
            r_new = resid(p_new, t0_new)
            if r_new @ r_new <= cost:
                break
            alpha *= 0.5
        else:
            break
        moved = np.linalg.norm(p_new - p)
        p, t0, r, cost = p_new, t0_new, r_new, r_new @ r_new
        if moved < STEP_TOL:
            break
    return p


def toa_triangulate(recording: Recording, array: SensorArray, group_velocity: float,
                    threshold: float = ONSET_THRESHOLD, plate: PlateConfig = None) -> np.ndarray:
    """Impact position (metres) from threshold-picked arrival times."""
    if recording.n_sensors != array.n_sensors:
        raise ConfigError(f"recording has {recording.n_sensors} channels, array {array.n_sensors}")
    toas = pick_arrivals(recording, threshold)
    plate = plate or PlateConfig()
    return locate_from_arrivals(toas, array.positions, group_velocity,
                                (0.0, plate.width_x, 0.0, plate.width_y))
