import dataclasses

import numpy as np
import pytest

from bitvolt.control import ControllerParams, Variant
from bitvolt.grid import build_matrices
from bitvolt.plant import DistFlowPlant, LinearPlant, constant_term
from bitvolt.sim import (DynamicSchedule, Scenario, StaticSchedule, load_csv,
                         load_jsonl, run_dynamic, run_static, summarize,
                         write_csv, write_jsonl)

from conftest import box_condition, make_chain3


@pytest.fixture
def instance():
    net = make_chain3()
    model = build_matrices(net)
    cond = box_condition(2, p=[-0.45, -0.35])
    return net, model, cond


def _params(variant=Variant.VCLB, alpha=0.1, beta=1e-4, rho=0.0):
    gamma = 0.04 if variant is Variant.BASELINE else None
    return ControllerParams(alpha=alpha, beta=beta, rho=rho,
                            variant=variant, gamma=gamma)


def test_initial_row_is_forced(instance):
    net, model, cond = instance
    scn = Scenario(kind=StaticSchedule(rounds=5), params=_params())
    tr = run_static(net, cond, scn, model)
    assert tr.t[0] == 0 and tr.bits[0] == 0
    assert np.array_equal(tr.q[0], np.zeros(2))
    assert np.array_equal(tr.v[0], constant_term(model, cond))
    for name in ("lmin", "lmax", "mmin", "mmax"):
        assert np.array_equal(getattr(tr, name)[0], np.zeros(2))
    assert np.all(np.diff(tr.t) > 0)
    assert np.array_equal(tr.bits, 4 * tr.t)


def test_static_requires_static_schedule(instance):
    net, model, cond = instance
    scn = Scenario(kind=DynamicSchedule(), params=_params())
    with pytest.raises(ValueError):
        run_static(net, cond, scn, model)
    with pytest.raises(ValueError):
        run_dynamic(net, cond, Scenario(kind=StaticSchedule(rounds=3),
                                        params=_params()), model)


def test_early_stop_on_threshold(instance):
    net, model, cond = instance
    scn = Scenario(kind=StaticSchedule(rounds=100000), params=_params(),
                   stop_threshold=0.1, epsilon=0.1)
    tr = run_static(net, cond, scn, model)
    assert tr.stopped_early
    assert tr.fes[-1] <= 0.1
    assert tr.first_feas_t == tr.t[-1]
    assert tr.rounds_executed < 100000


def test_projected_variant_never_violates_capacity(instance):
    net, model, cond = instance
    tight = dataclasses.replace(cond, q_min=np.full(2, -0.03),
                                q_max=np.full(2, 0.03))
    scn = Scenario(kind=StaticSchedule(rounds=500),
                   params=_params(variant=Variant.VCLBP))
    tr = run_static(net, tight, scn, model)
    assert tr.monitors.max_inj_violation == 0.0
    assert np.all(tr.q_phy <= 0.03) and np.all(tr.q_phy >= -0.03)
    assert np.any(tr.q != tr.q_phy)  # the raw setpoint leaves the tiny box


def test_csv_roundtrip_and_determinism(tmp_path, instance):
    net, model, cond = instance
    scn = Scenario(kind=StaticSchedule(rounds=50), params=_params())
    t1 = run_static(net, cond, scn, model)
    t2 = run_static(net, cond, scn, model)
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    write_csv(t1, p1)
    write_csv(t2, p2)
    assert p1.read_bytes() == p2.read_bytes()

    data = load_csv(p1)
    assert data.rows == t1.rows
    assert np.array_equal(data.t, t1.t)
    assert np.array_equal(data.bits, t1.bits)
    assert np.allclose(data.v, t1.v, rtol=1e-11)
    assert np.allclose(data.mmin, t1.mmin, rtol=1e-11, atol=1e-17)
    assert np.allclose(data.fes, t1.fes, rtol=1e-11, atol=1e-17)


def test_jsonl_roundtrip(tmp_path, instance):
    net, model, cond = instance
    scn = Scenario(kind=StaticSchedule(rounds=20), params=_params())
    tr = run_static(net, cond, scn, model)
    path = tmp_path / "t.jsonl"
    write_jsonl(tr, path)
    data = load_jsonl(path)
    assert data.rows == tr.rows
    assert np.allclose(data.q, tr.q, rtol=1e-11, atol=1e-17)
    assert np.allclose(data.D, tr.D, rtol=1e-11, atol=1e-17)


def test_dynamic_bit_total_and_intervals(instance):
    net, model, cond = instance
    scn = Scenario(kind=DynamicSchedule(intervals=4, rounds_per_interval=50,
                                        seed=3), params=_params())
    tr = run_dynamic(net, cond, scn, model)
    assert tr.bits_total == 2 * 2 * 200
    assert tr.rows == 201
    assert np.array_equal(np.unique(tr.interval), np.arange(4))
    # rounds tick continuously across interval boundaries
    assert np.array_equal(tr.t, np.arange(201))


def test_dynamic_identical_seed_reproduces(tmp_path, instance):
    net, model, cond = instance
    scn = Scenario(kind=DynamicSchedule(intervals=3, rounds_per_interval=40,
                                        seed=17), params=_params())
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_csv(run_dynamic(net, cond, scn, model), a)
    write_csv(run_dynamic(net, cond, scn, model), b)
    assert a.read_bytes() == b.read_bytes()


def test_dynamic_zero_width_range_equals_static(instance):
    net, model, cond = instance
    dyn = Scenario(kind=DynamicSchedule(intervals=4, rounds_per_interval=25,
                                        scale_range=(1.0, 1.0), seed=5),
                   params=_params())
    sta = Scenario(kind=StaticSchedule(rounds=100), params=_params())
    td = run_dynamic(net, cond, dyn, model)
    ts = run_static(net, cond, sta, model)
    assert np.array_equal(td.t, ts.t)
    for name in ("v", "q", "q_phy", "lmin", "lmax", "mmin", "mmax",
                 "fes", "V", "D"):
        assert np.array_equal(getattr(td, name), getattr(ts, name)), name


def test_dynamic_cold_start_resets_duals(instance):
    net, model, cond = instance
    warm = Scenario(kind=DynamicSchedule(intervals=2, rounds_per_interval=30,
                                         scale_range=(1.0, 1.0), seed=1),
                    params=_params())
    cold = dataclasses.replace(warm, cold_start=True)
    tw = run_dynamic(net, cond, warm, model)
    tc = run_dynamic(net, cond, cold, model)
    k = 31  # first row of the second interval
    assert np.array_equal(tc.q[k], np.zeros(2))  # fresh duals give zero setpoint
    assert not np.array_equal(tw.q[k], tc.q[k])


def test_dynamic_global_scale_draws_one_value(instance):
    net, model, cond = instance
    scn = Scenario(kind=DynamicSchedule(intervals=2, rounds_per_interval=10,
                                        seed=2), params=_params(),
                   global_scale=True)
    tr = run_dynamic(net, cond, scn, model)
    assert tr.rows == 21  # smoke: runs and keeps the row contract


def test_summarize_reports_absence(instance):
    net, model, cond = instance
    scn = Scenario(kind=StaticSchedule(rounds=5), params=_params(),
                   epsilon=1e-9)
    tr = run_static(net, cond, scn, model)
    s = summarize(tr, epsilon=1e-9)
    assert not s.reached
    assert "not reached" in s.format()
    assert s.final_fes == tr.fes[-1]


def test_summarize_band_tolerance(instance):
    net, model, cond = instance
    scn = Scenario(kind=StaticSchedule(rounds=4000), params=_params(),
                   epsilon=0.1)
    tr = run_static(net, cond, scn, model)
    s = summarize(tr, epsilon=0.1, band_tol=1e-6)
    assert s.first_vband_t >= 0
    assert s.vband_holds_from >= s.first_vband_t
    assert s.max_inj_violation >= 0.0


def test_scalar_series_cover_every_round(instance):
    net, model, cond = instance
    scn = Scenario(kind=StaticSchedule(rounds=37), params=_params(),
                   record_stride=10)
    tr = run_static(net, cond, scn, model)
    assert tr.scalars["t"].shape[0] == 38
    assert tr.rows < 38  # strided per-bus rows
    assert tr.t[-1] == 37
