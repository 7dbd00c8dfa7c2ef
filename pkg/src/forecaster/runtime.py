"""Online reconfiguration loop.

Execution is simulated interval by interval. Cores push counter deltas every
``push_period`` instructions; once ``interval_size`` instructions have been
seen the aggregated, per-instruction vector goes to the policy, whose answer
takes effect after the inference latency. Gating follows a simple cache
occupancy model: a way is only switched off once its valid occupancy has
dropped to the threshold, otherwise the request is deferred and retried at the
next interval.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config_space import (
    BTB_SECTIONS,
    CACHE_WAYS,
    HardwareConfig,
    ReconfigDelta,
    btb_enabled_sections,
    max_config,
)
from .dataset import config_features, feature_columns, scale_features
from .workload import (
    COUNT_MASK,
    COUNTER_NAMES,
    N_COUNTERS,
    HardwareState,
    MachineParams,
    SyntheticApp,
    efficiency,
    evaluate_state,
    static_budget,
    static_power,
)

# least-squares fit of (c_mac, per-layer overhead) to the three PE-array rows
# (8x8 6352, 12x12 3200, 16x16 1896 cycles) on the 14/384/384/256/256/128 net
C_MAC = 1.0820558811
LAYER_OVERHEAD = 88.1414077
ACCEL_FREQUENCY = 247e6  # Hz, 16x16 array
ACCEL_POWER_W = 0.215 + 4.716  # static + dynamic
ONLINE_NOISE_OFFSET = 1_000_003


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class RunParams:
    interval_size: int = 500_000
    push_period: int = 10_000
    inference_latency_cycles: float = 1896.0
    accelerator_frequency: float = ACCEL_FREQUENCY
    accelerator_power_w: float = ACCEL_POWER_W
    occupancy_threshold: float = 0.5
    occupancy_rate: float = 0.4  # fraction of the gap to target closed per interval
    include_inference_energy: bool = False
    noise_seed: int | None = None  # None: app seed + ONLINE_NOISE_OFFSET

    def __post_init__(self):
        if self.interval_size <= 0 or self.push_period <= 0:
            raise ValueError("interval_size and push_period must be positive")
        if self.interval_size % self.push_period:
            raise ValueError(f"push period {self.push_period} does not divide interval {self.interval_size}")
        if self.inference_latency_cycles < 0 or self.accelerator_frequency <= 0:
            raise ValueError("latency must be non-negative and frequency positive")
        if not 0 < self.occupancy_threshold <= 1 or not 0 < self.occupancy_rate <= 1:
            raise ValueError("occupancy threshold and rate must lie in (0, 1]")

    @property
    def latency_seconds(self) -> float:
        return self.inference_latency_cycles / self.accelerator_frequency

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunParams":
        return cls(**d)


# ---------------------------------------------------------------------------
# inference latency


def inference_latency(pe_rows: int, pe_cols: int, arch, c_mac: float = C_MAC, overhead: float = LAYER_OVERHEAD) -> float:
    """Cycles for one forward pass on a pe_rows x pe_cols systolic array."""
    if pe_rows <= 0 or pe_cols <= 0:
        raise ValueError("array dimensions must be positive")
    dims = arch.dims if hasattr(arch, "dims") else tuple(arch)
    blocks = sum(math.ceil(a / pe_rows) * math.ceil(b / pe_cols) for a, b in zip(dims[:-1], dims[1:]))
    return blocks * c_mac + overhead * (len(dims) - 1)


def calibrate_latency(rows, dims):
    """Fit (c_mac, overhead) to ((pe_rows, pe_cols, cycles), ...) measurements."""
    x = np.array([[inference_latency(r, c, dims, 1.0, 0.0), len(dims) - 1] for r, c, _ in rows], dtype=float)
    y = np.array([cyc for _, _, cyc in rows], dtype=float)
    sol, *_ = np.linalg.lstsq(x, y, rcond=None)
    return float(sol[0]), float(sol[1])


# ---------------------------------------------------------------------------
# telemetry aggregation


@dataclass
class TelemetryAccumulator:
    interval_size: int
    counts: np.ndarray = field(default_factory=lambda: np.zeros(N_COUNTERS))
    instructions: int = 0
    pushes: int = 0


def aggregate_telemetry(state, delta_counters, delta_instructions: int):
    """Add one push; return the per-instruction vector at an interval boundary, else None.

    Count-type counters arrive as event counts over the push, rate-type ones
    as the rate observed over the push. ``state`` is a RuntimeState or a bare
    TelemetryAccumulator.
    """
    acc = state.accumulator if hasattr(state, "accumulator") else state
    d = np.asarray(delta_counters, dtype=float)
    n = int(delta_instructions)
    # rates are weighted by their instruction count so they average correctly
    acc.counts += np.where(COUNT_MASK, d, d * n)
    acc.instructions += n
    acc.pushes += 1
    if acc.instructions < acc.interval_size:
        return None
    out = acc.counts / acc.instructions
    acc.counts = np.zeros(N_COUNTERS)
    acc.instructions = 0
    acc.pushes = 0
    return out


def _pushes(result, push_period):
    """Split one evaluated window into equal pushes of ``push_period`` instructions."""
    k = result.instructions // push_period
    share = np.where(COUNT_MASK, result.telemetry / k, result.telemetry)
    for _ in range(k):
        yield share, push_period


# ---------------------------------------------------------------------------
# hardware state


@dataclass
class RuntimeState:
    current_config: HardwareConfig  # last requested configuration
    achieved: HardwareState
    valid: dict  # cache -> per-way valid fraction
    dirty: dict
    accumulator: TelemetryAccumulator
    pending: HardwareConfig | None = None
    pending_seconds: float = 0.0

    @classmethod
    def initial(cls, config: HardwareConfig, interval_size: int) -> "RuntimeState":
        # caches start cold
        return cls(
            config,
            HardwareState.from_config(config),
            {"l2": np.zeros(CACHE_WAYS), "l3": np.zeros(CACHE_WAYS)},
            {"l2": np.zeros(CACHE_WAYS), "l3": np.zeros(CACHE_WAYS)},
            TelemetryAccumulator(interval_size),
        )

    def ways(self, cache: str) -> int:
        return self.achieved.l2_ways if cache == "l2" else self.achieved.l3_ways

    def achieved_config_dict(self) -> dict:
        return {
            "l2_ways": self.achieved.l2_ways,
            "l3_ways": self.achieved.l3_ways,
            "btb_entries": self.achieved.btb_entries,
            "prefetcher_on": self.achieved.prefetcher_on,
        }


def _instances(cache: str, machine: MachineParams) -> int:
    # every core has a private L2 set identically; one shared L3
    return machine.core_count if cache == "l2" else 1


def apply_config(state: RuntimeState, new_config: HardwareConfig, machine=None, params=None):
    """Move the hardware toward ``new_config``.

    Returns (achieved ReconfigDelta, writebacks, energy in joules). Resources
    are enabled before anything is gated. Ways are gated from the top down and
    gating stops at the first way still holding more valid data than the
    threshold; the rest stays requested-but-not-achieved until a later retry.
    """
    machine = machine or MachineParams()
    params = params or RunParams()
    state.current_config = new_config
    cur = state.achieved
    target = {"l2": new_config.l2_ways, "l3": new_config.l3_ways}
    gated = {"l2": [], "l3": []}
    ungated = {"l2": [], "l3": []}
    writebacks = 0

    # grow first
    for cache in ("l2", "l3"):
        have = state.ways(cache)
        if target[cache] > have:
            ungated[cache] = list(range(have, target[cache]))
            state.valid[cache][have : target[cache]] = 0.0
            state.dirty[cache][have : target[cache]] = 0.0
    old_sec = btb_enabled_sections(cur.btb_entries)
    new_sec = btb_enabled_sections(new_config.btb_entries)
    btb_up = tuple(s for s in new_sec if s not in old_sec)
    btb_down = tuple(s for s in reversed(old_sec) if s not in new_sec)
    toggle = "none"
    if cur.prefetcher_on != new_config.prefetcher_on:
        toggle = "off->on" if new_config.prefetcher_on else "on->off"

    # then shrink, deferring busy ways
    final = {}
    for cache in ("l2", "l3"):
        have = max(state.ways(cache), target[cache])
        w = have - 1
        bpw = machine.blocks_per_way(cache)
        while w >= target[cache]:
            if state.valid[cache][w] > params.occupancy_threshold:
                break
            writebacks += int(round(state.dirty[cache][w] * bpw)) * _instances(cache, machine)
            state.valid[cache][w] = 0.0
            state.dirty[cache][w] = 0.0
            gated[cache].append(w)
            w -= 1
        final[cache] = w + 1

    state.achieved = HardwareState(final["l2"], final["l3"], new_config.btb_entries, new_config.prefetcher_on)
    delta = ReconfigDelta(
        tuple(gated["l2"]),
        tuple(ungated["l2"]),
        tuple(gated["l3"]),
        tuple(ungated["l3"]),
        btb_down,
        btb_up,
        toggle,
    )
    return delta, writebacks, writebacks * machine.writeback_energy


def occupancy_target(app: SyntheticApp, start: int, size: int, machine: MachineParams, cache: str, ways: int):
    """Instruction-weighted valid and dirty fill each way tends to over a window."""
    valid = np.zeros(CACHE_WAYS)
    dirty = np.zeros(CACHE_WAYS)
    way_kb = machine.l2_way_kb if cache == "l2" else machine.l3_way_kb
    w = np.arange(CACHE_WAYS)
    for phase, n in app.segments(start, size):
        ws_kb = phase.ws_l2 if cache == "l2" else phase.ws_l3 * 1024
        # ways fill lowest first; the partially used way holds the remainder
        fill = np.clip(ws_kb / way_kb - w, 0.0, 1.0)
        fill[ways:] = 0.0
        valid += fill * n
        dirty += fill * phase.dirty_fraction * n
    return valid / size, dirty / size


def _update_occupancy(state, app, start, size, machine, params):
    for cache in ("l2", "l3"):
        tv, td = occupancy_target(app, start, size, machine, cache, state.ways(cache))
        a = params.occupancy_rate
        state.valid[cache] = np.clip(state.valid[cache] + a * (tv - state.valid[cache]), 0.0, 1.0)
        state.dirty[cache] = np.clip(state.dirty[cache] + a * (td - state.dirty[cache]), 0.0, 1.0)
        state.dirty[cache] = np.minimum(state.dirty[cache], state.valid[cache])


# ---------------------------------------------------------------------------
# policies


class Policy:
    """Chooses the next configuration at each interval boundary."""

    name = "policy"
    latency_cycles: float | None = None  # None: use RunParams

    def initial_config(self) -> HardwareConfig:
        return max_config()

    def decide(self, interval: int, config: HardwareConfig, telemetry) -> HardwareConfig:
        raise NotImplementedError


class StaticPolicy(Policy):
    latency_cycles = 0.0

    def __init__(self, config: HardwareConfig, name: str = "static"):
        self.config = config
        self.name = name

    def initial_config(self):
        return self.config

    def decide(self, interval, config, telemetry):
        return self.config


class OraclePolicy(Policy):
    """Per-interval schedule known ahead of time; switches at interval starts."""

    latency_cycles = 0.0

    def __init__(self, schedule, name: str = "best-dynamic"):
        from .config_space import decode

        self.schedule = [decode(int(c)) for c in schedule]
        self.name = name

    def initial_config(self):
        return self.schedule[0]

    def decide(self, interval, config, telemetry):
        nxt = min(interval + 1, len(self.schedule) - 1)
        return self.schedule[nxt]


class ModelPolicy(Policy):
    """Feeds <config, previous-interval telemetry> to a trained classifier."""

    def __init__(self, model, name: str | None = None, latency_cycles: float | None = None):
        from .config_space import decode

        names = tuple(model.feature_names)
        try:
            self.columns = feature_columns(names)
        except ValueError as e:
            raise SchemaError(str(e)) from e
        dim = model.architecture.input_dim if hasattr(model, "architecture") else model.input_dim
        if dim != 4 + len(names):
            raise SchemaError(f"model expects {dim} inputs but names {len(names)} features")
        norm = model.normalization
        if norm is None or np.shape(norm) != (len(names), 2):
            raise SchemaError("model carries no usable normalization statistics")
        self.model = model
        self.norm = np.asarray(norm, dtype=float)
        self.name = name or ("mle" if hasattr(model, "log_posterior") else "forecaster")
        self.latency_cycles = latency_cycles
        self._decode = decode

    def features(self, config, telemetry):
        t = np.asarray(telemetry, dtype=float)[self.columns]
        return np.concatenate([config_features(config), scale_features(t, self.norm)])

    def decide(self, interval, config, telemetry):
        x = self.features(config, telemetry)
        return self._decode(int(self.model.predict(x[None, :])[0]))


# ---------------------------------------------------------------------------
# report


ROW_FIELDS = (
    "interval",
    "config_requested",
    "l2_ways_achieved",
    "l3_ways_achieved",
    "btb_entries",
    "prefetcher_on",
    "ips",
    "power",
    "efficiency",
    "time_s",
    "l2_gated_requested",
    "l2_gated_achieved",
    "l3_gated_requested",
    "l3_gated_achieved",
    "btb_gated_fraction",
    "writebacks",
    "dirty_blocks_gated",
    "max_valid_gated",
    "inference_cycles",
    "inference_energy_j",
    "l2_static_saving_w",
    "l3_static_saving_w",
    "switch_fraction",
)


@dataclass
class ExecutionReport:
    app_id: str
    policy: str
    rows: list[dict]
    params: dict
    baseline: dict | None = None  # aggregates of the all-resources run, if known

    def column(self, name) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    @property
    def mean_efficiency(self) -> float:
        return float(np.mean(self.column("efficiency")))

    @property
    def mean_ips(self) -> float:
        return float(np.mean(self.column("ips")))

    @property
    def mean_power(self) -> float:
        return float(np.mean(self.column("power")))

    def gating_fraction(self, resource: str, achieved: bool = True) -> np.ndarray:
        """Per-interval fraction of a resource switched off."""
        if resource == "btb":
            return self.column("btb_gated_fraction")
        kind = "achieved" if achieved else "requested"
        return self.column(f"{resource}_gated_{kind}") / CACHE_WAYS

    def achievement(self) -> float:
        """Achieved over requested gated ways, both caches, whole run."""
        req = self.column("l2_gated_requested").sum() + self.column("l3_gated_requested").sum()
        got = self.column("l2_gated_achieved").sum() + self.column("l3_gated_achieved").sum()
        return 1.0 if req == 0 else float(got / req)

    def summary(self) -> dict:
        out = {
            "app_id": self.app_id,
            "policy": self.policy,
            "intervals": len(self.rows),
            "mean_efficiency": self.mean_efficiency,
            "mean_ips": self.mean_ips,
            "mean_power": self.mean_power,
            "writebacks": int(self.column("writebacks").sum()),
            "inference_cycles": float(self.column("inference_cycles").sum()),
            "inference_energy_j": float(self.column("inference_energy_j").sum()),
            "gating_achievement": self.achievement(),
            "l2_gated_mean": float(self.gating_fraction("l2").mean()),
            "l3_gated_mean": float(self.gating_fraction("l3").mean()),
            "btb_gated_mean": float(self.gating_fraction("btb").mean()),
            "params": self.params,
        }
        if self.baseline:
            out["normalized_efficiency"] = self.mean_efficiency / self.baseline["mean_efficiency"]
            out["normalized_ips"] = self.mean_ips / self.baseline["mean_ips"]
            out["normalized_power"] = self.mean_power / self.baseline["mean_power"]
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=ROW_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: repr(float(v)) if isinstance(v, float) else v for k, v in r.items()})
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True)

    def save(self, directory, stem: str | None = None):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        stem = stem or f"{self.app_id}__{self.policy}"
        a = directory / f"{stem}.csv"
        b = directory / f"{stem}.json"
        a.write_text(self.to_csv())
        b.write_text(self.to_json())
        return a, b

    @classmethod
    def load(cls, csv_path, json_path=None) -> "ExecutionReport":
        csv_path = Path(csv_path)
        json_path = Path(json_path) if json_path else csv_path.with_suffix(".json")
        meta = json.loads(json_path.read_text())
        rows = []
        for r in csv.DictReader(io.StringIO(csv_path.read_text())):
            row = {}
            for k, v in r.items():
                if k in ("interval", "config_requested", "l2_ways_achieved", "l3_ways_achieved", "btb_entries",
                         "l2_gated_requested", "l2_gated_achieved", "l3_gated_requested", "l3_gated_achieved",
                         "writebacks", "dirty_blocks_gated"):
                    row[k] = int(v)
                elif k == "prefetcher_on":
                    row[k] = v == "True"
                else:
                    row[k] = float(v)
            rows.append(row)
        base = None
        if "normalized_efficiency" in meta:
            base = {
                "mean_efficiency": meta["mean_efficiency"] / meta["normalized_efficiency"],
                "mean_ips": meta["mean_ips"] / meta["normalized_ips"],
                "mean_power": meta["mean_power"] / meta["normalized_power"],
            }
        return cls(meta["app_id"], meta["policy"], rows, meta["params"], base)


# ---------------------------------------------------------------------------
# the loop


def _btb_gated_fraction(entries: int) -> float:
    gateable = sum(size for name, size in BTB_SECTIONS if name != "B1")
    live = sum(size for name, size in BTB_SECTIONS if name in btb_enabled_sections(entries) and name != "B1")
    return (gateable - live) / gateable


def run_online(app: SyntheticApp, model, machine: MachineParams | None = None, params: RunParams | None = None) -> ExecutionReport:
    """Execute ``app`` under a policy (or a trained model wrapped as one)."""
    machine = machine or MachineParams()
    params = params or RunParams()
    policy = model if isinstance(model, Policy) else ModelPolicy(model)
    latency_cycles = params.inference_latency_cycles if policy.latency_cycles is None else policy.latency_cycles
    latency_s = latency_cycles / params.accelerator_frequency
    noise_seed = app.seed + ONLINE_NOISE_OFFSET if params.noise_seed is None else params.noise_seed
    size = params.interval_size
    k = app.total_instructions // size
    if k < 1:
        raise ValueError(f"app {app.app_id} shorter than one interval")
    budget = static_budget(machine)
    full_static = static_power(HardwareState.from_config(max_config()), machine)

    state = RuntimeState.initial(policy.initial_config(), size)
    # the policy's first config applies from a cold start with nothing to gate
    apply_config(state, policy.initial_config(), machine, params)
    rows = []
    for t in range(k):
        start = t * size
        writebacks = 0
        wb_energy = 0.0
        dirty_gated = 0
        max_valid_gated = 0.0
        req_before = state.current_config

        def _reconfigure(target):
            nonlocal writebacks, wb_energy, dirty_gated, max_valid_gated
            snap_v = {c: state.valid[c].copy() for c in ("l2", "l3")}
            snap_d = {c: state.dirty[c].copy() for c in ("l2", "l3")}
            delta, wb, e = apply_config(state, target, machine, params)
            for cache, ways in (("l2", delta.l2_ways_to_gate), ("l3", delta.l3_ways_to_gate)):
                bpw = machine.blocks_per_way(cache)
                for w in ways:
                    dirty_gated += int(round(snap_d[cache][w] * bpw)) * _instances(cache, machine)
                    max_valid_gated = max(max_valid_gated, float(snap_v[cache][w]))
            writebacks += wb
            wb_energy += e

        # retry deferred gating of the standing request
        if state.pending is None and (
            state.achieved.l2_ways != req_before.l2_ways or state.achieved.l3_ways != req_before.l3_ways
        ):
            _reconfigure(req_before)

        segments = []  # (hardware state, n_instructions)
        switch_at = 0
        if state.pending is None:
            segments.append((state.achieved, size))
        else:
            old = state.achieved
            if state.pending_seconds > 0:
                whole = evaluate_state(app, start, size, old, machine, noise_seed, noise_key=start)
                if state.pending_seconds >= whole.time:
                    # inference still running at the next boundary
                    state.pending_seconds -= whole.time
                    switch_at = size
                else:
                    n = params.push_period
                    switch_at = min(size, int(math.ceil(state.pending_seconds / whole.time * size / n)) * n)
                    state.pending_seconds = 0.0
            if switch_at > 0:
                segments.append((old, switch_at))
            if switch_at < size:
                _reconfigure(state.pending)
                state.pending = None
                segments.append((state.achieved, size - switch_at))

        results = []
        pos = start
        for hw, n in segments:
            results.append(evaluate_state(app, pos, n, hw, machine, noise_seed, noise_key=start))
            pos += n
        time_s = sum(r.time for r in results)
        energy = sum(r.power * r.time for r in results) + wb_energy

        telemetry = None
        for r in results:
            for delta_c, n in _pushes(r, params.push_period):
                out = aggregate_telemetry(state, delta_c, n)
                if out is not None:
                    telemetry = out
        _update_occupancy(state, app, start, size, machine, params)

        # boundary: decide for the next interval unless the accelerator is busy
        inf_cycles = 0.0
        inf_energy = 0.0
        if t + 1 < k and state.pending is None:
            nxt = policy.decide(t, state.current_config, telemetry)
            if nxt != state.current_config or state.achieved != HardwareState.from_config(nxt):
                state.pending = nxt
                state.pending_seconds = latency_s
            if latency_cycles > 0:
                inf_cycles = latency_cycles
                inf_energy = params.accelerator_power_w * latency_s
        if params.include_inference_energy:
            energy += inf_energy

        ips = size / time_s
        power = energy / time_s
        req = state.current_config
        now = static_power(state.achieved, machine)
        rows.append(
            {
                "interval": t,
                "config_requested": req.index,
                "l2_ways_achieved": state.achieved.l2_ways,
                "l3_ways_achieved": state.achieved.l3_ways,
                "btb_entries": state.achieved.btb_entries,
                "prefetcher_on": state.achieved.prefetcher_on,
                "ips": ips,
                "power": power,
                "efficiency": efficiency(ips, power),
                "time_s": time_s,
                "l2_gated_requested": CACHE_WAYS - req.l2_ways,
                "l2_gated_achieved": CACHE_WAYS - state.achieved.l2_ways,
                "l3_gated_requested": CACHE_WAYS - req.l3_ways,
                "l3_gated_achieved": CACHE_WAYS - state.achieved.l3_ways,
                "btb_gated_fraction": _btb_gated_fraction(state.achieved.btb_entries),
                "writebacks": writebacks,
                "dirty_blocks_gated": dirty_gated,
                "max_valid_gated": max_valid_gated,
                "inference_cycles": inf_cycles,
                "inference_energy_j": inf_energy,
                "l2_static_saving_w": full_static["l2"] - now["l2"],
                "l3_static_saving_w": full_static["l3"] - now["l3"],
                "switch_fraction": switch_at / size,
            }
        )
    p = params.to_dict()
    p["static_budget_w"] = budget
    p["noise_seed_used"] = noise_seed
    p["latency_cycles_used"] = latency_cycles
    return ExecutionReport(app.app_id, policy.name, rows, p)
