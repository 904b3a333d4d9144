"""End-to-end acceptance checks, one test per criterion.

Each test appends a PASS/FAIL line to the terminal summary. The trained
desk-scale models are shared module fixtures; the whole file takes on
the order of ten minutes on one core.
"""

import math
import time
from dataclasses import replace

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from lamb_locate.baseline import locate_from_arrivals, toa_triangulate
from lamb_locate.errors import FormatError, InsufficientDataError
from lamb_locate.evaluate import SweepGrid, centroid_errors, evaluate, position_error, sweep
from lamb_locate.gru import PARAM_ORDER, forward_batch, init_params, load_checkpoint, save_checkpoint
from lamb_locate.pipeline import (
    PipelineConfig,
    crop_window,
    detect_onset,
    draw_shift,
    prepare_window,
)
from lamb_locate.plate import (
    NoiseConfig,
    PlateConfig,
    SensorArray,
    arrival_time,
    generate_dataset,
    sample_impact_positions,
    synth_recording,
)
from lamb_locate.presets import DESK_HIDDEN, DESK_PIPELINE, DESK_TRAIN
from lamb_locate.recording import Recording, encode_signal, read_signal
from lamb_locate.train import backward, loss_and_grad, sequence_loss, train

pytestmark = pytest.mark.slow


def record(n, name, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {n}. {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


@pytest.fixture(scope="module")
def desk_model(desk_dataset):
    t = time.perf_counter()
    res = train(desk_dataset, DESK_PIPELINE, DESK_HIDDEN, DESK_TRAIN)
    return res, time.perf_counter() - t


@pytest.fixture(scope="module")
def final_loss_model(desk_dataset):
    cfg = replace(DESK_TRAIN, loss_mode="final")
    return train(desk_dataset, DESK_PIPELINE, DESK_HIDDEN, cfg)


def _test_error(model, dataset, window=None):
    pipe = DESK_PIPELINE if window is None else replace(DESK_PIPELINE, window=window)
    return evaluate(model, dataset, dataset.split_ids("test"), pipe, eval_seed=DESK_TRAIN.eval_seed)


# 1 -----------------------------------------------------------------------

def _fd(X, T, p, eps=1e-6):
    flat = p.flat()
    out = np.empty_like(flat)
    for i in range(flat.size):
        up, dn = flat.copy(), flat.copy()
        up[i] += eps
        dn[i] -= eps
        out[i] = (loss_and_grad(X, T, type(p).from_flat(up, p.S_in, p.H))[0]
                  - loss_and_grad(X, T, type(p).from_flat(dn, p.S_in, p.H))[0]) / (2 * eps)
    return out


def test_gradient_oracle():
    t = time.perf_counter()
    worst = 0.0
    for seed in range(3):
        rng = np.random.default_rng(100 + seed)
        p = init_params(2, 4, seed=seed)
        X = rng.normal(scale=0.5, size=(3, 16, 2))
        T = rng.uniform(0.1, 0.8, (3, 2))
        a = backward(X, T, p).flat()
        n = _fd(X, T, p)
        start = 0
        for k in PARAM_ORDER:
            size = getattr(p, k).size
            ak, nk = a[start:start + size], n[start:start + size]
            rel = np.linalg.norm(ak - nk) / max(np.linalg.norm(ak), np.linalg.norm(nk), 1e-12)
            worst = max(worst, rel)
            start += size
    elapsed = time.perf_counter() - t
    ok = worst < 1e-5 and elapsed < 10
    record(1, "gradient oracle", ok, f"max relative error {worst:.2e} (< 1e-5), {elapsed:.1f} s (< 10 s)")
    assert ok


# 2 -----------------------------------------------------------------------

def test_desk_end_to_end(desk_model, desk_dataset):
    res, elapsed = desk_model
    s = _test_error(res.params, desk_dataset)
    c = centroid_errors(desk_dataset, desk_dataset.split_ids("train"), desk_dataset.split_ids("test"))
    ratio = s.mean_e / c.mean_e
    ok = s.mean_e < 0.05 and ratio < 0.25 and elapsed < 900 and s.config["L"] == 500
    record(2, "desk end-to-end", ok,
           f"test mean e {s.mean_e * 1000:.1f} mm (< 50 mm), {ratio:.1%} of centroid "
           f"{c.mean_e * 1000:.1f} mm (< 25%), L={s.config['L']}, "
           f"{len(res.history.losses)} episodes in {elapsed:.0f} s")
    assert ok


# 3 -----------------------------------------------------------------------

def test_length_generalization(desk_model, final_loss_model, desk_dataset):
    res, _ = desk_model
    base = _test_error(res.params, desk_dataset).mean_e
    e = {L: _test_error(res.params, desk_dataset, L / 250e3).mean_e for L in (250, 1000)}
    f = {L: _test_error(final_loss_model.params, desk_dataset, L / 250e3).mean_e for L in (250, 1000)}
    ok = all(e[L] <= 2 * base for L in e) and all(f[L] > e[L] for L in e)
    record(3, "length generalization", ok,
           f"per-step loss e(250)={e[250] * 1000:.1f} mm, e(500)={base * 1000:.1f} mm, "
           f"e(1000)={e[1000] * 1000:.1f} mm (<= 2x); final-step ablation "
           f"e(250)={f[250] * 1000:.1f} mm, e(1000)={f[1000] * 1000:.1f} mm (must be worse)")
    assert ok


# 4 -----------------------------------------------------------------------

def test_pre_onset_mean_default(desk_model, desk_dataset):
    res, _ = desk_model
    noise = NoiseConfig()
    rng = np.random.default_rng(2024)
    L, S = DESK_PIPELINE.n_samples(1e6), len(DESK_PIPELINE.sensors)
    X = rng.normal(0, noise.noise_sigma, (100, L, S)) + rng.uniform(-noise.dc_offset_max, noise.dc_offset_max,
                                                                     (100, 1, S))
    X = np.round(X / noise.quantization_step) * noise.quantization_step
    Y, _ = forward_batch(X, res.params)
    last = Y[:, -1, :].mean(axis=0)
    centroid = np.mean([desk_dataset.target(i) for i in desk_dataset.split_ids("train")], axis=0)
    d = float(np.linalg.norm(last - centroid))
    ok = d < 0.1
    record(4, "pre-onset mean default", ok, f"mean last-step prediction {d * 1000:.1f} mm from the "
                                            f"training centroid (< 100 mm)")
    assert ok


# 5 -----------------------------------------------------------------------

def test_pipeline_length_law(short_plate):
    arr = SensorArray()
    events = sample_impact_positions(6, arr, short_plate, seed=5)
    lengths, exact, offsets = {}, True, []
    for k, ev in enumerate(events):
        rec = synth_recording(ev, short_plate, arr, NoiseConfig(), 0.025)
        t_th = detect_onset(rec)
        for T in (0.005, 0.010, 0.020):
            cfg = PipelineConfig(sensors=tuple(range(1, 9)), window=T)
            shift = draw_shift(k, ev.id, cfg.shift_range, cfg.target_rate)
            w = prepare_window(rec, t_th, shift, cfg, ev.position, ev.id)
            lengths.setdefault(T, set()).add(w.samples.shape[0])
            start = t_th - int(round(shift * 1e6))
            exact &= np.array_equal(w.samples, rec.samples[start:start + int(round(T * 1e6)):4])
            re = detect_onset(Recording(w.samples, w.sample_rate))
            offsets.append(re - round(shift * 250e3))
            assert detect_onset(crop_window(rec, t_th, shift, T)) == int(round(shift * 1e6))
    want = {0.005: {1250}, 0.010: {2500}, 0.020: {5000}}
    ok = lengths == want and exact and max(map(abs, offsets)) <= 1
    record(5, "pipeline length law", ok,
           f"L by window {({int(T * 1000): sorted(v) for T, v in lengths.items()})}, values bit-exact={exact}, "
           f"onset offsets within {max(map(abs, offsets))} sample(s)")
    assert ok


# 6 -----------------------------------------------------------------------

SWEEP_WINDOWS_MS = [1, 2, 4]
SWEEP_TRAIN = replace(DESK_TRAIN, episodes=1000, decay_every=150, eval_every=100)


def test_window_length_trend(desk_dataset):
    grid = SweepGrid(presets=["1-4"], windows_ms=SWEEP_WINDOWS_MS, overrides={}, hidden=DESK_HIDDEN,
                     batch=DESK_TRAIN.batch_size)
    rows = sweep(grid, desk_dataset, SWEEP_TRAIN, DESK_PIPELINE)
    e = {r["T_ms"]: r["mean_e_m"] for r in rows}
    ok = all(r["status"] == "ok" for r in rows) and e[max(e)] <= e[min(e)]
    detail = ", ".join(f"T={r['T_ms']:g} ms (L={r['L']}): {r['mean_e_m'] * 1000:.1f} mm" for r in rows)
    record(6, "window-length trend", ok, detail + " (longest <= shortest)")
    assert ok


# 7 -----------------------------------------------------------------------

def test_triangulation_baseline(desk_dataset):
    plate, arr = PlateConfig(), SensorArray()
    events = sample_impact_positions(50, arr, plate, seed=17)
    exact = []
    for ev in events:
        toas = [arrival_time(ev.position, s, plate) for s in arr.positions]
        exact.append(np.hypot(*(locate_from_arrivals(toas, arr.positions, plate.group_velocity) - ev.position)))
    exact_ok = max(exact) < 1e-6

    short = PlateConfig(trigger_delay=0.002)
    picked = []
    for ev in events[:20]:
        rec = synth_recording(ev, short, arr, NoiseConfig(), 0.008)
        picked.append(np.hypot(*(toa_triangulate(rec, arr, short.group_velocity, plate=short) - ev.position)))
    picked = np.array(picked)
    picked_ok = bool(np.all(picked < 0.02))

    two = SensorArray().subset([1, 2])
    rec = synth_recording(events[0], short, two, NoiseConfig(), 0.008)
    try:
        toa_triangulate(rec, two, short.group_velocity, plate=short)
        guard_ok = False
    except InsufficientDataError:
        guard_ok = True
    pipe2 = replace(DESK_PIPELINE, sensors=(1, 2))
    s2 = evaluate(init_params(2, DESK_HIDDEN, seed=0), desk_dataset, desk_dataset.split_ids("test"), pipe2)
    rnn_ok = bool(np.isfinite(s2.mean_e))

    ok = exact_ok and picked_ok and guard_ok and rnn_ok
    record(7, "triangulation baseline", ok,
           f"exact arrivals max error {max(exact):.1e} m (< 1e-6); 50 mV picker with noise: "
           f"{int(np.sum(picked < 0.02))}/{len(picked)} within 20 mm, mean {picked.mean() * 1000:.0f} mm, "
           f"max {picked.max() * 1000:.0f} mm; 2-sensor guard raised={guard_ok}; 2-sensor RNN evaluates={rnn_ok}")
    assert ok


# 8 -----------------------------------------------------------------------

def test_serialization(tmp_path, short_plate):
    arr = SensorArray().subset([1, 2, 3, 4])
    generate_dataset(tmp_path / "d", 5, short_plate, arr, NoiseConfig(), duration=0.008, seed=3)
    ok_data = True
    for f in sorted((tmp_path / "d").glob("imp*.bin")):
        buf = f.read_bytes()
        rec = read_signal(f)
        ok_data &= encode_signal(rec.samples, rec.sample_rate) == buf
    p = init_params(4, 16, seed=1)
    save_checkpoint(p, tmp_path / "m.ckpt", {"episode": 3})
    q = load_checkpoint(tmp_path / "m.ckpt")
    ok_ckpt = all(getattr(p, k).tobytes() == getattr(q, k).tobytes() for k in PARAM_ORDER)

    rejected = 0
    sig = (tmp_path / "d" / "imp00000.bin").read_bytes()
    ck = (tmp_path / "m.ckpt").read_bytes()
    bad = [(sig, b"XMPW" + sig[4:]), (sig, sig[:4] + b"\x02" + sig[5:]),
           (ck, b"XRUC" + ck[4:]), (ck, ck[:4] + b"\x07" + ck[5:])]
    for original, corrupt in bad:
        path = tmp_path / "corrupt.bin"
        path.write_bytes(corrupt)
        try:
            read_signal(path) if original is sig else load_checkpoint(path)
        except FormatError:
            rejected += 1
    ok = ok_data and ok_ckpt and rejected == len(bad)
    record(8, "serialization", ok, f"signal files byte-identical={ok_data}, checkpoint bit-exact={ok_ckpt}, "
                                   f"corrupt magic/version rejected {rejected}/{len(bad)}")
    assert ok


# 9 -----------------------------------------------------------------------

def test_metric_oracle():
    rng = np.random.default_rng(99)
    worst_e = worst_l = 0.0
    for _ in range(1000):
        L = int(rng.integers(10, 60))
        P = rng.uniform(-0.5, 1.5, (L, 2))
        y = rng.uniform(0.1, 0.8, 2)
        sx = sy = 0.0
        for i in range(L - 10, L):
            sx += P[i, 0]
            sy += P[i, 1]
        e_ref = math.sqrt((sx / 10 - y[0]) ** 2 + (sy / 10 - y[1]) ** 2)
        acc = 0.0
        for i in range(L):
            acc += (P[i, 0] - y[0]) ** 2 + (P[i, 1] - y[1]) ** 2
        l_ref = acc / L
        worst_e = max(worst_e, abs(position_error(P, y, 10) - e_ref) / e_ref)
        worst_l = max(worst_l, abs(sequence_loss(P, y) - l_ref) / l_ref)
    ok = worst_e < 1e-12 and worst_l < 1e-12
    record(9, "metric oracle", ok, f"1000 traces, max relative deviation position_error {worst_e:.1e}, "
                                   f"sequence_loss {worst_l:.1e} (< 1e-12)")
    assert ok
