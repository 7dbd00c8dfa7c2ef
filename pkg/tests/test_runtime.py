import math

import numpy as np
import pytest

from forecaster.config_space import CACHE_WAYS, HardwareConfig, decode, max_config
from forecaster.models import MLPArchitecture
from forecaster.runtime import (
    C_MAC,
    LAYER_OVERHEAD,
    ExecutionReport,
    ModelPolicy,
    OraclePolicy,
    RunParams,
    RuntimeState,
    SchemaError,
    StaticPolicy,
    TelemetryAccumulator,
    aggregate_telemetry,
    apply_config,
    calibrate_latency,
    inference_latency,
    run_online,
)
from forecaster.workload import COUNT_MASK, N_COUNTERS, SELECTED_COUNTERS, MachineParams

REF = MLPArchitecture(14, (384, 384, 256, 256), 128)
RUN = RunParams(interval_size=250_000)


class ConstantModel:
    """Stand-in classifier that always answers the same configuration."""

    def __init__(self, index, names=SELECTED_COUNTERS[:3]):
        self.index = index
        self.feature_names = tuple(names)
        self.architecture = MLPArchitecture(4 + len(names), (4,), 128)
        self.normalization = np.tile([0.0, 1.0], (len(names), 1))
        self.seen = []

    def predict(self, x):
        self.seen.append(np.array(x))
        return np.array([self.index])


# ---------------------------------------------------------------------------
# telemetry


def test_boundary_after_exactly_fifty_pushes():
    acc = TelemetryAccumulator(500_000)
    d = np.ones(N_COUNTERS)
    outs = [aggregate_telemetry(acc, d, 10_000) for _ in range(50)]
    assert all(o is None for o in outs[:49])
    assert outs[49] is not None
    assert acc.instructions == 0 and acc.pushes == 0


def test_counts_divided_by_interval_and_rates_averaged():
    acc = TelemetryAccumulator(30)
    rng = np.random.default_rng(0)
    deltas = rng.uniform(0, 5, size=(3, N_COUNTERS))
    out = None
    for d in deltas:
        out = aggregate_telemetry(acc, d, 10)
    assert np.allclose(out[COUNT_MASK], deltas[:, COUNT_MASK].sum(axis=0) / 30)
    assert np.allclose(out[~COUNT_MASK], deltas[:, ~COUNT_MASK].mean(axis=0))


# ---------------------------------------------------------------------------
# apply_config


def _warm_state(config, fill=0.0, dirty=0.0):
    st = RuntimeState.initial(config, 500_000)
    for c in ("l2", "l3"):
        st.valid[c][:] = fill
        st.dirty[c][:] = dirty
    return st


def test_dirty_fraction_to_writebacks():
    m = MachineParams(core_count=1)
    assert m.blocks_per_way("l2") == 1024
    full = max_config()
    st = _warm_state(full)
    st.dirty["l2"][15] = 0.3
    smaller = HardwareConfig(full.btb_entries, full.prefetcher_on, 768, full.l3_mb)
    delta, wb, energy = apply_config(st, smaller, m)
    assert wb == 307  # round(0.3 * 1024), only way 15 carries dirty data
    assert energy == pytest.approx(307 * m.writeback_energy)
    assert delta.l2_ways_to_gate == (15, 14, 13, 12)


def test_private_l2_writebacks_scale_with_cores():
    m = MachineParams(core_count=8)
    full = max_config()
    st = _warm_state(full)
    st.dirty["l2"][15] = 0.3
    _, wb, _ = apply_config(st, HardwareConfig(full.btb_entries, full.prefetcher_on, 768, full.l3_mb), m)
    assert wb == 307 * 8


def test_same_config_is_a_no_op():
    cfg = decode(37)
    st = _warm_state(cfg, 0.2, 0.1)
    delta, wb, energy = apply_config(st, cfg)
    assert delta.is_empty and wb == 0 and energy == 0.0


def test_btb_shrink_gates_upper_sections():
    full = max_config()
    st = _warm_state(full)
    delta, _, _ = apply_config(st, HardwareConfig(512, full.prefetcher_on, full.l2_kb, full.l3_mb))
    assert set(delta.btb_sections_to_gate) == {"B2", "B3", "B4"}
    assert st.achieved.btb_entries == 512


def test_busy_ways_are_deferred():
    full = max_config()
    st = _warm_state(full, fill=0.0)
    st.valid["l3"][10] = 0.9  # busy way blocks everything below it
    small = HardwareConfig(full.btb_entries, full.prefetcher_on, 256, 4)
    delta, _, _ = apply_config(st, small)
    assert st.achieved.l3_ways == 11
    assert delta.l3_ways_to_gate == (15, 14, 13, 12, 11)
    assert st.achieved.l2_ways == small.l2_ways
    assert st.current_config == small
    st.valid["l3"][10] = 0.4
    apply_config(st, small)
    assert st.achieved.l3_ways == small.l3_ways


def test_grow_resets_new_ways():
    small = decode(0)
    st = _warm_state(small, fill=0.7, dirty=0.3)
    delta, wb, _ = apply_config(st, max_config())
    assert wb == 0
    assert len(delta.l2_ways_to_ungate) == CACHE_WAYS - small.l2_ways
    assert np.all(st.valid["l2"][small.l2_ways :] == 0.0)


# ---------------------------------------------------------------------------
# latency


def test_reference_latency_close_to_measured():
    cyc = inference_latency(16, 16, REF)
    assert 1896 * 0.9 <= cyc <= 1896 * 1.1
    assert inference_latency(8, 8, REF) > inference_latency(12, 12, REF) > cyc


def test_single_pe_counts_every_mac():
    macs = sum(a * b for a, b in zip(REF.dims[:-1], REF.dims[1:]))
    assert inference_latency(1, 1, REF) == pytest.approx(macs * C_MAC + 5 * LAYER_OVERHEAD)


def test_calibration_recovers_constants():
    rows = [(8, 8, 6352), (12, 12, 3200), (16, 16, 1896)]
    c, o = calibrate_latency(rows, REF.dims)
    assert c == pytest.approx(C_MAC, rel=1e-8)
    assert o == pytest.approx(LAYER_OVERHEAD, rel=1e-6)


def test_latency_rejects_bad_dims():
    with pytest.raises(ValueError):
        inference_latency(0, 16, REF)


def test_run_params_validation():
    with pytest.raises(ValueError):
        RunParams(interval_size=500_000, push_period=30_000)
    with pytest.raises(ValueError):
        RunParams(occupancy_threshold=0.0)
    assert RunParams.from_dict(RUN.to_dict()) == RUN
    assert RunParams().latency_seconds == pytest.approx(1896 / 247e6)


# ---------------------------------------------------------------------------
# the loop


def test_model_policy_starts_at_max_config(small_app):
    model = ConstantModel(0)
    rep = run_online(small_app, model, params=RUN)
    assert rep.rows[0]["config_requested"] == max_config().index
    assert rep.rows[-1]["config_requested"] == 0


def test_always_max_model_matches_baseline(small_app):
    base = run_online(small_app, StaticPolicy(max_config(), "baseline-all"), params=RUN)
    rep = run_online(small_app, ConstantModel(max_config().index), params=RUN)
    assert np.allclose(rep.column("efficiency"), base.column("efficiency"), rtol=1e-12)
    assert rep.column("inference_cycles")[:-1].min() == 1896
    assert rep.column("writebacks").sum() == 0


def test_model_sees_config_and_scaled_telemetry(small_app):
    model = ConstantModel(5)
    run_online(small_app, model, params=RUN)
    x = model.seen[0][0]
    assert x.shape == (7,)
    assert np.array_equal(x[:4], [1.0, 0.0, 1.0, 1.0])


def test_schema_rejection():
    bad = ConstantModel(0, names=("no_such_counter",))
    with pytest.raises(SchemaError):
        ModelPolicy(bad)
    m = ConstantModel(0)
    m.architecture = MLPArchitecture(9, (4,), 128)
    with pytest.raises(SchemaError):
        ModelPolicy(m)
    m = ConstantModel(0)
    m.normalization = None
    with pytest.raises(SchemaError):
        ModelPolicy(m)


def test_runs_are_deterministic(small_app):
    a = run_online(small_app, ConstantModel(3), params=RUN)
    b = run_online(small_app, ConstantModel(3), params=RUN)
    assert a.to_csv() == b.to_csv()


def test_achieved_gating_never_exceeds_request(small_app):
    sched = [(7 * t) % 128 for t in range(20)]
    rep = run_online(small_app, OraclePolicy(sched, "wander"), params=RUN)
    for r in rep.rows:
        assert r["l2_gated_achieved"] <= r["l2_gated_requested"]
        assert r["l3_gated_achieved"] <= r["l3_gated_requested"]
        assert r["max_valid_gated"] <= 0.5
    assert 0.0 <= rep.achievement() <= 1.0


def test_oracle_switches_at_interval_starts(small_app):
    sched = [0, 127, 5, 5] * 5
    rep = run_online(small_app, OraclePolicy(sched), params=RUN)
    assert [r["config_requested"] for r in rep.rows] == sched
    assert all(r["switch_fraction"] == 0.0 for r in rep.rows)
    assert rep.column("inference_cycles").sum() == 0


def test_latency_delays_switch(small_app):
    slow = RunParams(interval_size=250_000, inference_latency_cycles=247e6 * 1e-5)
    rep = run_online(small_app, ConstantModel(0), params=slow)
    r = rep.rows[1]
    assert 0 < r["switch_fraction"] < 1
    assert (r["switch_fraction"] * 250_000) % slow.push_period == 0


def test_latency_longer_than_interval_carries_over(small_app):
    t0 = run_online(small_app, StaticPolicy(max_config()), params=RUN).rows[0]["time_s"]
    cycles = 2.5 * t0 * 247e6
    rep = run_online(small_app, ConstantModel(0), params=RunParams(interval_size=250_000, inference_latency_cycles=cycles))
    sw = rep.column("switch_fraction")
    assert sw[1] == 1.0 and sw[2] == 1.0
    assert 0 < sw[3] < 1
    # no new inference is issued while the accelerator is busy
    assert rep.column("inference_cycles")[1:3].sum() == 0


def test_inference_energy_optional(small_app):
    a = run_online(small_app, ConstantModel(0), params=RUN)
    b = run_online(small_app, ConstantModel(0), params=RunParams(interval_size=250_000, include_inference_energy=True))
    assert b.mean_power > a.mean_power
    assert a.column("inference_energy_j").sum() == pytest.approx(b.column("inference_energy_j").sum())


def test_static_saving_matches_gated_fraction(small_app, machine):
    rep = run_online(small_app, ConstantModel(0), params=RUN)
    budget = rep.params["static_budget_w"]
    for r in rep.rows:
        for c in ("l2", "l3"):
            frac = r[f"{c}_gated_achieved"] / CACHE_WAYS
            assert r[f"{c}_static_saving_w"] == pytest.approx(frac * (1 - machine.gated_static_residual) * budget[c], abs=1e-9)


def test_report_roundtrip(tmp_path, small_app):
    base = run_online(small_app, StaticPolicy(max_config(), "baseline-all"), params=RUN)
    rep = run_online(small_app, ConstantModel(9), params=RUN)
    rep.baseline = base.summary()
    a, b = rep.save(tmp_path)
    back = ExecutionReport.load(a, b)
    assert back.rows == rep.rows
    assert back.summary()["normalized_efficiency"] == pytest.approx(rep.summary()["normalized_efficiency"])
    assert rep.summary()["normalized_efficiency"] == pytest.approx(rep.mean_efficiency / base.mean_efficiency)


def test_short_app_rejected(small_app):
    with pytest.raises(ValueError):
        run_online(small_app, ConstantModel(0), params=RunParams(interval_size=10_000_000))
