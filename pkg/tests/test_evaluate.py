import csv
import json
import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lamb_locate.baseline import locate_from_arrivals, pick_arrivals, toa_triangulate
from lamb_locate.errors import ConfigError, DimensionError, InsufficientDataError
from lamb_locate.evaluate import (
    ErrorSummary,
    SweepGrid,
    centroid_errors,
    evaluate,
    position_error,
    read_summary_csv,
    summary_row,
    sweep,
    write_summary_csv,
)
from lamb_locate.gru import init_params
from lamb_locate.pipeline import PipelineConfig
from lamb_locate.plate import ImpactEvent, NoiseConfig, PlateConfig, SensorArray, arrival_time, synth_recording
from lamb_locate.recording import Recording
from lamb_locate.report import COLOR_CAP, emit_report, error_color
from lamb_locate.train import TrainConfig

SVG = "{http://www.w3.org/2000/svg}"


def test_position_error_cases():
    assert position_error(np.tile((0.3, 0.5), (20, 1)), (0.3, 0.5)) == pytest.approx(0.0, abs=1e-15)
    assert position_error(np.tile((0.4, 0.4), (20, 1)), (0.1, 0.4)) == pytest.approx(0.3, rel=1e-12)
    with pytest.raises(ConfigError):
        position_error(np.zeros((5, 2)), (0, 0), N=6)
    with pytest.raises(ConfigError):
        position_error(np.zeros((5, 2)), (0, 0), N=0)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 50), st.integers(1, 50), st.integers(0, 10_000))
def test_position_error_matches_scalar_oracle(L, N, seed):
    N = min(N, L)
    rng = np.random.default_rng(seed)
    P = rng.uniform(-1, 1, (L, 2))
    y = rng.uniform(0, 1, 2)
    sx = sum(P[i, 0] for i in range(L - N, L)) / N
    sy = sum(P[i, 1] for i in range(L - N, L)) / N
    oracle = math.sqrt((sx - y[0]) ** 2 + (sy - y[1]) ** 2)
    assert position_error(P, y, N) == pytest.approx(oracle, rel=1e-12, abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 2, allow_nan=False), min_size=1, max_size=60))
def test_summary_consistency(errs):
    s = ErrorSummary.from_errors(errs)
    n = len(errs)
    mean = math.fsum(errs) / n
    var = math.fsum((e - mean) ** 2 for e in errs) / n
    assert s.mean_e == pytest.approx(mean, rel=1e-12, abs=1e-15)
    assert s.std_e == pytest.approx(math.sqrt(var), rel=1e-9, abs=1e-12)
    assert np.all(s.errors >= 0)


def test_empty_summary():
    with pytest.raises(ConfigError):
        ErrorSummary.from_errors([])


PIPE = PipelineConfig(sensors=(1, 2, 3, 4), window=0.002, shift_range=(0.1e-3, 0.4e-3))


def test_stub_oracle_has_zero_error(tiny_dataset):
    ids = tiny_dataset.split_ids("test")

    def oracle(X):
        T = np.array([tiny_dataset.target(i) for i in ids])
        return np.repeat(T[:, None, :], X.shape[1], axis=1)

    s = evaluate(oracle, tiny_dataset, ids, PIPE)
    # zero up to rounding in the mean of identical rows
    assert s.mean_e < 1e-15 and s.std_e < 1e-15 and len(s.errors) == len(ids)
    assert s.config["L"] == 500


def test_evaluate_with_params(tiny_dataset):
    ids = tiny_dataset.split_ids("test")
    p = init_params(4, 4, seed=0)
    a, Y = evaluate(p, tiny_dataset, ids, PIPE, return_predictions=True)
    b = evaluate(p, tiny_dataset, ids, PIPE)
    assert np.array_equal(a.errors, b.errors)  # frozen evaluation crops
    for k, i in enumerate(ids):
        assert a.errors[k] == pytest.approx(position_error(Y[k], tiny_dataset.target(i)), rel=1e-12)
    with pytest.raises(DimensionError):
        evaluate(init_params(2, 4), tiny_dataset, ids, PIPE)


def test_centroid_errors(tiny_dataset):
    tr, te = tiny_dataset.split_ids("train"), tiny_dataset.split_ids("test")
    s = centroid_errors(tiny_dataset, tr, te)
    c = np.mean([tiny_dataset.target(i) for i in tr], axis=0)
    assert s.errors[0] == pytest.approx(np.hypot(*(np.array(tiny_dataset.target(te[0])) - c)))


CORNERS = SensorArray().subset([1, 2, 3, 4])


def test_triangulation_center_symmetry():
    c = np.mean(CORNERS.as_array(), axis=0)
    toas = np.full(4, 0.7e-3)
    p = locate_from_arrivals(toas, CORNERS.positions, 1000.0)
    assert np.hypot(*(p - c)) < 1e-6


@settings(max_examples=30, deadline=None)
@given(st.floats(0.11, 0.79), st.floats(0.11, 0.79), st.floats(0.0, 0.01))
def test_triangulation_exact_arrivals(x, y, t0):
    plate = PlateConfig(trigger_delay=t0)
    for arr in (CORNERS, SensorArray()):
        toas = [arrival_time((x, y), s, plate) for s in arr.positions]
        p = locate_from_arrivals(toas, arr.positions, plate.group_velocity)
        assert np.hypot(p[0] - x, p[1] - y) < 1e-6


def test_triangulation_needs_three():
    with pytest.raises(InsufficientDataError):
        locate_from_arrivals([1e-3, 2e-3], CORNERS.positions[:2], 1000.0)
    with pytest.raises(InsufficientDataError):
        locate_from_arrivals([1e-3, 2e-3, np.nan, np.nan], CORNERS.positions, 1000.0)


def test_picker_and_triangulate(short_plate):
    x = np.zeros((100, 3))
    x[40, 1] = 0.06
    x[70, 0] = -0.2
    t = pick_arrivals(Recording(x, 1e6))
    assert t[0] == 70e-6 and t[1] == 40e-6 and np.isnan(t[2])
    ev = ImpactEvent((0.452, 0.451))
    rec = synth_recording(ev, short_plate, CORNERS, NoiseConfig.noiseless(), 0.008)
    p = toa_triangulate(rec, CORNERS, 1000.0)
    assert np.hypot(*(p - ev.position)) < 0.02
    with pytest.raises(ConfigError):
        toa_triangulate(rec, SensorArray(), 1000.0)


def _summary(n=5, seed=0):
    rng = np.random.default_rng(seed)
    T = rng.uniform(0.1, 0.8, (n, 2))
    E = T + rng.normal(scale=0.01, size=(n, 2))
    e = np.linalg.norm(E - T, axis=1)
    return ErrorSummary.from_errors(e, {"sensors": [1, 2, 3, 4], "T_window": 0.02, "L": 5000},
                                    ids=[f"imp{k:05d}" for k in range(n)], targets=T, estimates=E)


def test_report_files(tmp_path):
    s = _summary()
    P = np.linspace(0.2, 0.5, 40)[:, None] * np.ones((1, 2))
    files = emit_report(s, {"imp00000": (P, (0.5, 0.5))}, tmp_path, sample_rate=250e3)
    names = {f.name for f in files}
    assert names == {"errors.csv", "summary.csv", "scatter.svg", "trace_imp00000.csv", "trace_imp00000.svg"}
    root = ET.parse(tmp_path / "scatter.svg").getroot()
    assert len(root.findall(f"{SVG}circle[@class='true']")) == 5
    assert len(root.findall(f"{SVG}path[@class='pred']")) == 5
    ET.parse(tmp_path / "trace_imp00000.svg")
    rows = list(csv.DictReader(open(tmp_path / "trace_imp00000.csv")))
    assert len(rows) == 40 and float(rows[1]["t_s"]) == pytest.approx(4e-6)


def test_single_impact_report(tmp_path):
    emit_report(_summary(1), None, tmp_path)
    root = ET.parse(tmp_path / "scatter.svg").getroot()
    assert len(root.findall(f"{SVG}circle")) == 1
    assert len(list(csv.reader(open(tmp_path / "errors.csv")))) == 2


def test_report_roundtrip(tmp_path):
    s = _summary(20, seed=3)
    emit_report(s, None, tmp_path)
    rows = list(csv.DictReader(open(tmp_path / "errors.csv")))
    for k, r in enumerate(rows):
        assert r["id"] == s.ids[k]
        got = [float(r[c]) for c in ("true_x_m", "true_y_m", "pred_x_m", "pred_y_m", "e_m")]
        want = [*s.targets[k], *s.estimates[k], s.errors[k]]
        for g, w in zip(got, want):
            assert g == float(f"{w:.9g}")
    summ = read_summary_csv(tmp_path / "summary.csv")[0]
    assert summ["mean_e_m"] == float(f"{s.mean_e:.9g}") and summ["std_e_m"] == float(f"{s.std_e:.9g}")
    assert summ["n"] == 20 and summ["L"] == 5000


def test_report_errors(tmp_path):
    with pytest.raises(ConfigError):
        emit_report([], None, tmp_path)


def test_color_cap():
    assert error_color(0.030) == error_color(COLOR_CAP) == error_color(1.0)
    assert error_color(0.0) == "#440154"
    assert error_color(0.0) != error_color(0.01) != error_color(COLOR_CAP)


def test_summary_csv_roundtrip(tmp_path):
    rows = [summary_row(_summary(), H=32, B=500)]
    write_summary_csv(tmp_path / "s.csv", rows)
    back = read_summary_csv(tmp_path / "s.csv")
    assert back[0]["H"] == 32 and back[0]["T_ms"] == 20.0


def test_default_grid():
    cells = list(SweepGrid().cells())
    assert len(cells) == 9
    assert ("1-4", 20, 32, 500) in cells
    assert ("1-8", 5, 64, 1000) in cells and ("1-8", 20, 64, 250) in cells
    L = {w: PipelineConfig(window=w / 1000).n_samples(1e6) for _, w, _, _ in cells}
    assert L == {5: 1250, 10: 2500, 20: 5000}


def test_grid_json(tmp_path):
    g = SweepGrid(presets=["1-2"], windows_ms=[1], hidden=4, batch=8)
    (tmp_path / "g.json").write_text(json.dumps(g.to_json()))
    h = SweepGrid.from_json(tmp_path / "g.json")
    assert list(h.cells()) == list(g.cells())
    with pytest.raises(ConfigError):
        SweepGrid.from_json(tmp_path / "missing.json")


def test_sweep_single_cell_equals_train_eval(tiny_dataset, tmp_path):
    from lamb_locate.train import train

    tc = TrainConfig(episodes=4, batch_size=8, eval_every=2, seed=1)
    pipe = PipelineConfig(window=0.0004, shift_range=(0.1e-3, 0.2e-3))
    rows = sweep(SweepGrid(presets=["1-2"], windows_ms=[0.4], overrides={}, hidden=4, batch=8),
                 tiny_dataset, tc, pipe, out_dir=tmp_path)
    assert len(rows) == 1 and rows[0]["status"] == "ok" and rows[0]["L"] == 100
    p2 = PipelineConfig(sensors=(1, 2), window=0.0004, shift_range=(0.1e-3, 0.2e-3))
    res = train(tiny_dataset, p2, 4, tc)
    s = evaluate(res.params, tiny_dataset, tiny_dataset.split_ids("test"), p2)
    assert rows[0]["mean_e_m"] == s.mean_e and rows[0]["std_e_m"] == s.std_e
    assert read_summary_csv(tmp_path / "summary.csv")[0]["mean_e_m"] == float(f"{s.mean_e:.9g}")


def test_sweep_records_failed_cell(tiny_dataset):
    tc = TrainConfig(episodes=2, batch_size=4, eval_every=2)
    pipe = PipelineConfig(window=0.0004, shift_range=(0.1e-3, 0.2e-3))
    # a 50 ms window does not fit the 8 ms recordings
    rows = sweep(SweepGrid(presets=["1-2"], windows_ms=[50, 0.4], overrides={}, hidden=2, batch=4),
                 tiny_dataset, tc, pipe)
    assert rows[0]["status"] != "ok" and math.isnan(rows[0]["mean_e_m"])
    assert rows[1]["status"] == "ok"


def test_sweep_rejects_too_many_sensors(tiny_dataset):
    with pytest.raises(ConfigError):
        sweep(SweepGrid(presets=["1-8"]), tiny_dataset)
