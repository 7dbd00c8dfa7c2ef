"""Synthetic phase-based applications and a closed-form CPI/power model.

An application is a sequence of phases. For any window of instructions and any
hardware state the model returns the 24-counter telemetry vector, the
instructions per second and the power draw. Everything is a pure function of
its arguments, including the seeded measurement noise.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .config_space import CACHE_WAYS, L2_KB, L3_MB, HardwareConfig

# The ten counters that correlate with efficiency on real hardware come first.
SELECTED_COUNTERS = (
    "l2_most_usage",
    "norm_commit_float",
    "norm_commit_mem",
    "norm_commit_int",
    "l1_data_access",
    "norm_commit_ctrl",
    "l2_avg_eviction_rate",
    "l2_most_hit_rate",
    "l3_usage",
    "branch_mispred_rate",
)
AUXILIARY_COUNTERS = (
    "l2_access",
    "l3_access",
    "mem_access",
    "l2_eviction_count",
    "l3_eviction_count",
    "btb_miss_count",
    "prefetch_issued",
    "l1_data_miss_rate",
    "l3_hit_rate",
    "l3_eviction_rate",
    "prefetch_issue_rate",
    "ipc",
    "noise_0",
    "noise_1",
)
COUNTER_NAMES = SELECTED_COUNTERS + AUXILIARY_COUNTERS
N_COUNTERS = len(COUNTER_NAMES)
assert N_COUNTERS == 24

# "count": events over the window (normalized per instruction downstream)
# "rate": a fraction in [0, 1]; "ratio": non-negative, unbounded
COUNTER_KINDS = {
    "l2_most_usage": "rate",
    "norm_commit_float": "count",
    "norm_commit_mem": "count",
    "norm_commit_int": "count",
    "l1_data_access": "count",
    "norm_commit_ctrl": "count",
    "l2_avg_eviction_rate": "rate",
    "l2_most_hit_rate": "rate",
    "l3_usage": "rate",
    "branch_mispred_rate": "rate",
    "l2_access": "count",
    "l3_access": "count",
    "mem_access": "count",
    "l2_eviction_count": "count",
    "l3_eviction_count": "count",
    "btb_miss_count": "count",
    "prefetch_issued": "count",
    "l1_data_miss_rate": "rate",
    "l3_hit_rate": "rate",
    "l3_eviction_rate": "rate",
    "prefetch_issue_rate": "rate",
    "ipc": "ratio",
    "noise_0": "rate",
    "noise_1": "rate",
}
COUNT_MASK = np.array([COUNTER_KINDS[n] == "count" for n in COUNTER_NAMES])
RATE_MASK = np.array([COUNTER_KINDS[n] == "rate" for n in COUNTER_NAMES])
NOISE_CHANNELS = ("noise_0", "noise_1")
_IDX = {name: i for i, name in enumerate(COUNTER_NAMES)}

PREFETCH_MISS_CUT = 0.5


class WorkloadError(ValueError):
    pass


@dataclass(frozen=True)
class PhaseSpec:
    length_instructions: int
    ws_l2: float  # KB per core
    ws_l3: float  # MB, shared
    branch_footprint: float  # BTB entries
    mix: tuple[float, float, float, float]  # int, float, mem, ctrl
    prefetch_affinity: float
    base_cpi: float
    l1_miss_rate: float
    base_mispred: float = 0.02
    mispred_extra: float = 0.10
    dirty_fraction: float = 0.3

    def __post_init__(self):
        if self.length_instructions <= 0:
            raise WorkloadError("phase length must be positive")
        if len(self.mix) != 4 or any(m < 0 for m in self.mix) or abs(sum(self.mix) - 1) > 1e-9:
            raise WorkloadError(f"instruction mix {self.mix} must be 4 non-negative fractions summing to 1")
        for name in ("prefetch_affinity", "l1_miss_rate", "base_mispred", "dirty_fraction"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise WorkloadError(f"{name}={v} outside [0, 1]")
        if self.base_mispred + self.mispred_extra > 1 or self.mispred_extra < 0:
            raise WorkloadError("misprediction rate could exceed 1")
        if self.base_cpi <= 0 or self.ws_l2 <= 0 or self.ws_l3 <= 0 or self.branch_footprint <= 0:
            raise WorkloadError("base_cpi, working sets and branch footprint must be positive")


@dataclass(frozen=True)
class SyntheticApp:
    app_id: str
    seed: int
    phases: tuple[PhaseSpec, ...]

    @property
    def total_instructions(self) -> int:
        return sum(p.length_instructions for p in self.phases)

    @property
    def boundaries(self) -> np.ndarray:
        """Cumulative phase end offsets."""
        return np.cumsum([p.length_instructions for p in self.phases])

    def segments(self, start: int, size: int):
        """Yield (phase, n_instructions) pieces covering [start, start + size)."""
        end = start + size
        pos = 0
        for ph in self.phases:
            lo, hi = pos, pos + ph.length_instructions
            pos = hi
            if hi <= start:
                continue
            if lo >= end:
                break
            n = min(hi, end) - max(lo, start)
            if n > 0:
                yield ph, n

    def phase_at(self, instruction: int) -> int:
        return int(np.searchsorted(self.boundaries, instruction, side="right"))

    def to_dict(self) -> dict:
        return {
            "app_id": self.app_id,
            "seed": self.seed,
            "total_instructions": self.total_instructions,
            "phases": [asdict(p) for p in self.phases],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticApp":
        phases = tuple(PhaseSpec(**{**p, "mix": tuple(p["mix"])}) for p in d["phases"])
        app = cls(d["app_id"], int(d["seed"]), phases)
        if "total_instructions" in d and int(d["total_instructions"]) != app.total_instructions:
            raise WorkloadError("manifest total_instructions does not match phase lengths")
        return app


@dataclass(frozen=True)
class GenerationRecipe:
    """Ranges from which phases are drawn.

    Phases are drawn from a shared library of archetypes (seeded by
    ``library_seed``) and jittered per app, so different apps share
    similar phases. ``library_size=0`` draws every phase independently.
    """

    total_instructions: int = 50_000_000
    n_phases: tuple[int, int] = (4, 12)
    distinct_phases: tuple[int, int] = (2, 5)
    granularity: int = 10_000
    min_phase_instructions: int = 1_500_000
    ws_l2_kb: tuple[float, float] = (64.0, 3000.0)
    ws_l3_mb: tuple[float, float] = (1.5, 24.0)
    branch_footprint: tuple[float, float] = (300.0, 5000.0)
    prefetch_affinity: tuple[float, float] = (0.0, 1.0)
    base_cpi: tuple[float, float] = (0.5, 1.1)
    l1_miss_rate: tuple[float, float] = (0.03, 0.12)
    base_mispred: tuple[float, float] = (0.01, 0.04)
    mispred_extra: tuple[float, float] = (0.04, 0.15)
    dirty_fraction: tuple[float, float] = (0.1, 0.5)
    mix_concentration: tuple[float, float, float, float] = (4.0, 2.0, 3.0, 1.5)
    library_size: int = 10
    library_seed: int = 2021
    jitter: float = 0.08

    def __post_init__(self):
        lo, hi = self.n_phases
        if lo < 1 or hi < lo:
            raise WorkloadError("empty recipe: n_phases range must satisfy 1 <= lo <= hi")
        if self.total_instructions < hi * self.granularity:
            raise WorkloadError("total_instructions too small for the phase count")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GenerationRecipe":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise WorkloadError(f"unknown recipe keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


@dataclass(frozen=True)
class MachineParams:
    frequency: float = 2.4e9
    core_count: int = 8
    l2_latency: float = 12.0
    l3_latency: float = 40.0
    memory_latency: float = 200.0
    branch_penalty: float = 15.0
    l2_static_w_per_kb: float = 0.8e-3  # per core-private KB
    l3_static_w_per_kb: float = 0.5e-3
    btb_static_w_per_entry: float = 5.0e-5
    l1_access_energy: float = 0.05e-9  # J
    l2_access_energy: float = 0.3e-9
    l3_access_energy: float = 1.0e-9
    core_dyn_coeff: float = 2.0  # W per unit IPC, per core
    core_static_w: float = 2.5  # per core
    prefetcher_power_w: float = 0.15  # per core
    writeback_energy: float = 2.0e-9  # J per block
    gated_static_residual: float = 0.1
    gated_latency_penalty: float = 0.05
    noise_sigma: float = 0.02
    block_bytes: int = 64

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in ("gated_static_residual", "gated_latency_penalty", "noise_sigma"):
                if v < 0:
                    raise WorkloadError(f"{f.name} must be non-negative")
            elif v <= 0:
                raise WorkloadError(f"{f.name} must be positive")
        if self.gated_static_residual > 1:
            raise WorkloadError("gated_static_residual must lie in [0, 1]")

    @property
    def l2_way_kb(self) -> float:
        return L2_KB[-1] / CACHE_WAYS

    @property
    def l3_way_kb(self) -> float:
        return L3_MB[-1] * 1024 / CACHE_WAYS

    def blocks_per_way(self, cache: str) -> int:
        kb = self.l2_way_kb if cache == "l2" else self.l3_way_kb
        return int(kb * 1024 // self.block_bytes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MachineParams":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise WorkloadError(f"unknown machine parameter keys: {sorted(unknown)}")
        return cls(**d)


def load_params_file(path) -> dict:
    """Read a JSON or TOML parameter file into a dict."""
    path = Path(path)
    text = path.read_bytes()
    if path.suffix == ".toml":
        return tomllib.loads(text.decode())
    return json.loads(text)


@dataclass(frozen=True)
class HardwareState:
    """Enabled resources, possibly off the configuration lattice (partially gated caches)."""

    l2_ways: int
    l3_ways: int
    btb_entries: int
    prefetcher_on: bool

    @classmethod
    def from_config(cls, config: HardwareConfig) -> "HardwareState":
        return cls(config.l2_ways, config.l3_ways, config.btb_entries, config.prefetcher_on)

    def key(self) -> tuple[int, int, int, int]:
        return (self.l2_ways, self.l3_ways, self.btb_entries, int(self.prefetcher_on))


# ---------------------------------------------------------------------------
# generation


def _app_rng(app_id: str, seed: int) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(app_id.encode())])


def _uniform(rng, lo_hi):
    lo, hi = lo_hi
    return float(rng.uniform(lo, hi))


def _log_uniform(rng, lo_hi):
    lo, hi = lo_hi
    return float(math.exp(rng.uniform(math.log(lo), math.log(hi))))


def _draw_archetype(rng, recipe: GenerationRecipe) -> dict:
    mix = rng.dirichlet(recipe.mix_concentration)
    ws_l2 = _log_uniform(rng, recipe.ws_l2_kb)
    # the shared level has to hold at least a couple of cores' private sets
    ws_l3 = max(_log_uniform(rng, recipe.ws_l3_mb), min(2.0 * ws_l2 / 1024, recipe.ws_l3_mb[1]))
    return {
        "ws_l2": ws_l2,
        "ws_l3": ws_l3,
        "branch_footprint": _log_uniform(rng, recipe.branch_footprint),
        "mix": mix,
        "prefetch_affinity": _uniform(rng, recipe.prefetch_affinity),
        # float-heavy code retires slower
        "base_cpi": _uniform(rng, recipe.base_cpi) * (1.0 + 0.6 * float(mix[1])),
        "l1_miss_rate": _uniform(rng, recipe.l1_miss_rate),
        "base_mispred": _uniform(rng, recipe.base_mispred),
        "mispred_extra": _uniform(rng, recipe.mispred_extra),
        "dirty_fraction": _uniform(rng, recipe.dirty_fraction),
    }


def _phase_library(recipe: GenerationRecipe) -> list[dict]:
    rng = np.random.default_rng([recipe.library_seed, 0x11B])
    return [_draw_archetype(rng, recipe) for _ in range(recipe.library_size)]


def _jitter(rng, arch: dict, recipe: GenerationRecipe) -> dict:
    j = recipe.jitter
    out = dict(arch)
    for key, bounds in (
        ("ws_l2", recipe.ws_l2_kb),
        ("ws_l3", recipe.ws_l3_mb),
        ("branch_footprint", recipe.branch_footprint),
    ):
        out[key] = float(np.clip(arch[key] * (1 + rng.uniform(-j, j)), bounds[0], bounds[1]))
    out["prefetch_affinity"] = float(np.clip(arch["prefetch_affinity"] + rng.uniform(-j, j), 0, 1))
    out["base_cpi"] = arch["base_cpi"] * (1 + rng.uniform(-j, j))
    out["l1_miss_rate"] = float(np.clip(arch["l1_miss_rate"] * (1 + rng.uniform(-j, j)), 0, 1))
    mix = np.asarray(arch["mix"]) * (1 + rng.uniform(-j, j, size=4))
    out["mix"] = mix / mix.sum()
    return out


def _finish_mix(mix) -> tuple[float, float, float, float]:
    mix = [float(m) for m in mix]
    mix[-1] = 1.0 - sum(mix[:-1])
    return tuple(mix)


def generate_app(app_id: str, seed: int, recipe: GenerationRecipe | None = None) -> SyntheticApp:
    """Deterministically build an application from ``(app_id, seed)``."""
    if recipe is None:
        recipe = GenerationRecipe()
    rng = _app_rng(app_id, seed)
    n_phases = int(rng.integers(recipe.n_phases[0], recipe.n_phases[1] + 1))
    lo_d, hi_d = recipe.distinct_phases
    n_distinct = max(1, min(n_phases, int(rng.integers(lo_d, hi_d + 1))))

    if recipe.library_size > 0:
        library = _phase_library(recipe)
        picks = rng.choice(len(library), size=n_distinct, replace=n_distinct > len(library))
        kinds = [_jitter(rng, library[k], recipe) for k in picks]
    else:
        kinds = [_draw_archetype(rng, recipe) for _ in range(n_distinct)]

    # every distinct kind appears at least once, no kind repeats back to back
    order = list(range(n_distinct))
    while len(order) < n_phases:
        k = int(rng.integers(n_distinct))
        if n_distinct == 1 or k != order[-1]:
            order.append(k)
    head = list(rng.permutation(order[:n_distinct]))
    order = head + order[n_distinct:]
    for i in range(1, len(order)):
        if order[i] == order[i - 1] and n_distinct > 1:
            order[i] = (order[i] + 1) % n_distinct

    lengths = _split_lengths(rng, recipe, n_phases)
    phases = []
    for k, length in zip(order, lengths):
        p = kinds[k]
        phases.append(
            PhaseSpec(
                length_instructions=int(length),
                ws_l2=p["ws_l2"],
                ws_l3=p["ws_l3"],
                branch_footprint=p["branch_footprint"],
                mix=_finish_mix(p["mix"]),
                prefetch_affinity=p["prefetch_affinity"],
                base_cpi=p["base_cpi"],
                l1_miss_rate=p["l1_miss_rate"],
                base_mispred=p["base_mispred"],
                mispred_extra=p["mispred_extra"],
                dirty_fraction=p["dirty_fraction"],
            )
        )
    return SyntheticApp(app_id, int(seed), tuple(phases))


def _split_lengths(rng, recipe: GenerationRecipe, n: int) -> list[int]:
    g = recipe.granularity
    units = recipe.total_instructions // g
    min_units = min(recipe.min_phase_instructions // g, units // n)
    spare = units - min_units * n
    w = rng.dirichlet(np.full(n, 2.0))
    extra = np.floor(w * spare).astype(int)
    extra[-1] += spare - extra.sum()
    lengths = [(min_units + int(e)) * g for e in extra]
    lengths[-1] += recipe.total_instructions - sum(lengths)
    return lengths


def combine_apps(apps, app_id: str | None = None) -> SyntheticApp:
    """Co-schedule several apps (one per core group) as one phase stream.

    Each constituent is stretched to the longest app's length. Between merged
    boundaries the private-L2 demand is the most demanding core's, the shared
    L3 demand and the remaining parameters are the mean over co-runners.
    """
    apps = list(apps)
    if not apps:
        raise WorkloadError("need at least one app to combine")
    total = max(a.total_instructions for a in apps)
    cuts = {0, total}
    for a in apps:
        scale = total / a.total_instructions
        cuts.update(int(round(b * scale)) for b in a.boundaries)
    cuts = sorted(cuts)
    phases = []
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        if hi <= lo:
            continue
        mid = (lo + hi) / 2
        parts = [a.phases[min(a.phase_at(int(mid * a.total_instructions / total)), len(a.phases) - 1)] for a in apps]
        mix = np.mean([p.mix for p in parts], axis=0)
        phases.append(
            PhaseSpec(
                length_instructions=hi - lo,
                ws_l2=max(p.ws_l2 for p in parts),
                ws_l3=float(np.mean([p.ws_l3 for p in parts])),
                branch_footprint=max(p.branch_footprint for p in parts),
                mix=_finish_mix(mix / mix.sum()),
                prefetch_affinity=float(np.mean([p.prefetch_affinity for p in parts])),
                base_cpi=float(np.mean([p.base_cpi for p in parts])),
                l1_miss_rate=float(np.mean([p.l1_miss_rate for p in parts])),
                base_mispred=float(np.mean([p.base_mispred for p in parts])),
                mispred_extra=float(np.mean([p.mispred_extra for p in parts])),
                dirty_fraction=float(np.mean([p.dirty_fraction for p in parts])),
            )
        )
    name = app_id or "+".join(a.app_id for a in apps)
    return SyntheticApp(name, int(apps[0].seed), tuple(phases))


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class PhasePoint:
    """Noise-free model quantities for one phase under one hardware state."""

    cpi: float
    ipc: float
    l2_hit: float
    l3_hit: float
    l2_usage: float
    l3_usage: float
    mispred: float
    btb_deficit: float
    power: float
    counters_per_instr: np.ndarray


def cache_hit(capacity, working_set):
    return min(1.0, capacity / working_set)


def static_power(state: HardwareState, machine: MachineParams) -> dict:
    """Static power per structure in watts, including gated residuals."""
    r = machine.gated_static_residual
    l2_on = state.l2_ways * machine.l2_way_kb
    l2_off = L2_KB[-1] - l2_on
    l3_on = state.l3_ways * machine.l3_way_kb
    l3_off = L3_MB[-1] * 1024 - l3_on
    cores = machine.core_count
    return {
        "l2": cores * machine.l2_static_w_per_kb * (l2_on + r * l2_off),
        "l3": machine.l3_static_w_per_kb * (l3_on + r * l3_off),
        "btb": cores * machine.btb_static_w_per_entry * state.btb_entries,
    }


def static_budget(machine: MachineParams) -> dict:
    """Static power of each cache with every way enabled."""
    return {
        "l2": machine.core_count * machine.l2_static_w_per_kb * L2_KB[-1],
        "l3": machine.l3_static_w_per_kb * L3_MB[-1] * 1024,
    }


def phase_point(phase: PhaseSpec, state: HardwareState, machine: MachineParams) -> PhasePoint:
    c2 = state.l2_ways * machine.l2_way_kb
    c3 = state.l3_ways * machine.l3_way_kb / 1024
    h2 = cache_hit(c2, phase.ws_l2)
    h3 = cache_hit(c3, phase.ws_l3)
    m2, m3 = 1.0 - h2, 1.0 - h3
    aff = phase.prefetch_affinity if state.prefetcher_on else 0.0
    cut = 1.0 - aff * PREFETCH_MISS_CUT
    m2_eff, m3_eff = m2 * cut, m3 * cut

    deficit = max(0.0, 1.0 - state.btb_entries / phase.branch_footprint)
    mispred = phase.base_mispred + phase.mispred_extra * deficit

    f_int, f_float, f_mem, f_ctrl = phase.mix
    s = 1.0 + machine.gated_latency_penalty
    l1m = phase.l1_miss_rate
    mem_stall = f_mem * l1m * (machine.l2_latency * s + m2_eff * (machine.l3_latency * s + m3_eff * machine.memory_latency))
    cpi = phase.base_cpi + mem_stall + f_ctrl * mispred * machine.branch_penalty
    ipc = 1.0 / cpi
    ips = machine.frequency * machine.core_count * ipc

    # per-instruction event rates
    l1_acc = f_mem * (1.0 + 2.0 * f_ctrl * mispred)  # wrong-path loads
    l1_miss = f_mem * l1m
    pf_issued = l1_miss * (m2 - m2_eff)
    l2_acc = l1_miss + pf_issued
    l3_acc = l1_miss * m2_eff
    mem_acc = l3_acc * m3_eff
    usage2 = min(1.0, phase.ws_l2 / c2)
    usage3 = min(1.0, phase.ws_l3 / c3)
    l2_evict = l3_acc * usage2
    l3_evict = mem_acc * usage3
    btb_miss = f_ctrl * deficit

    v = np.zeros(N_COUNTERS)
    v[_IDX["l2_most_usage"]] = usage2
    v[_IDX["norm_commit_float"]] = f_float
    v[_IDX["norm_commit_mem"]] = f_mem
    v[_IDX["norm_commit_int"]] = f_int
    v[_IDX["l1_data_access"]] = l1_acc
    v[_IDX["norm_commit_ctrl"]] = f_ctrl
    v[_IDX["l2_avg_eviction_rate"]] = l2_evict / l2_acc if l2_acc > 0 else 0.0
    v[_IDX["l2_most_hit_rate"]] = 1.0 - m2_eff
    v[_IDX["l3_usage"]] = usage3
    v[_IDX["branch_mispred_rate"]] = mispred
    v[_IDX["l2_access"]] = l2_acc
    v[_IDX["l3_access"]] = l3_acc
    v[_IDX["mem_access"]] = mem_acc
    v[_IDX["l2_eviction_count"]] = l2_evict
    v[_IDX["l3_eviction_count"]] = l3_evict
    v[_IDX["btb_miss_count"]] = btb_miss
    v[_IDX["prefetch_issued"]] = pf_issued
    v[_IDX["l1_data_miss_rate"]] = l1m
    v[_IDX["l3_hit_rate"]] = 1.0 - m3_eff
    v[_IDX["l3_eviction_rate"]] = l3_evict / l3_acc if l3_acc > 0 else 0.0
    v[_IDX["prefetch_issue_rate"]] = pf_issued / l2_acc if l2_acc > 0 else 0.0
    v[_IDX["ipc"]] = ipc

    st = static_power(state, machine)
    dyn_access = ips * (
        l1_acc * machine.l1_access_energy + l2_acc * machine.l2_access_energy + l3_acc * machine.l3_access_energy
    )
    core = machine.core_count * (machine.core_static_w + machine.core_dyn_coeff * ipc)
    pf_power = machine.core_count * machine.prefetcher_power_w if state.prefetcher_on else 0.0
    power = core + st["l2"] + st["l3"] + st["btb"] + dyn_access + pf_power

    return PhasePoint(cpi, ipc, h2, h3, usage2, usage3, mispred, deficit, power, v)


@dataclass
class IntervalResult:
    telemetry: np.ndarray  # raw: counts over the window, rates as fractions
    ips: float
    power: float
    time: float
    instructions: int

    @property
    def efficiency(self) -> float:
        return efficiency(self.ips, self.power)


def _noise_rng(noise_seed: int, start: int, state: HardwareState) -> np.random.Generator:
    return np.random.default_rng([int(noise_seed), int(start), *state.key()])


def evaluate_state(
    app: SyntheticApp,
    start: int,
    size: int,
    state: HardwareState,
    machine: MachineParams,
    noise_seed: int = 0,
    noise_key: int | None = None,
) -> IntervalResult:
    """Evaluate the window [start, start+size) under an arbitrary hardware state.

    ``noise_key`` selects the noise stream (defaults to ``start``); the runtime
    passes the interval start so that both halves of a split interval share it.
    """
    if size <= 0 or start < 0 or start + size > app.total_instructions:
        raise WorkloadError(
            f"interval [{start}, {start + size}) outside app of {app.total_instructions} instructions"
        )
    counts = np.zeros(N_COUNTERS)
    time = 0.0
    energy = 0.0
    total_rate = machine.frequency * machine.core_count
    for phase, n in app.segments(start, size):
        pt = phase_point(phase, state, machine)
        t = n * pt.cpi / total_rate
        time += t
        energy += pt.power * t
        # counts accumulate, rates are instruction-weighted
        counts += pt.counters_per_instr * n
    telemetry = counts.copy()
    not_count = ~COUNT_MASK
    telemetry[not_count] = counts[not_count] / size
    ips = size / time
    power = energy / time

    rng = _noise_rng(noise_seed, start if noise_key is None else noise_key, state)
    z = rng.standard_normal(N_COUNTERS + 1)
    noise_vals = rng.uniform(0.0, 1.0, size=len(NOISE_CHANNELS))
    sigma = machine.noise_sigma
    if sigma > 0:
        telemetry = telemetry * (1.0 + sigma * z[:N_COUNTERS])
        telemetry[telemetry < 0] = 0.0
        telemetry[RATE_MASK] = np.clip(telemetry[RATE_MASK], 0.0, 1.0)
        ips = ips * max(1.0 + sigma * z[N_COUNTERS], 0.05)
    for i, name in enumerate(NOISE_CHANNELS):
        telemetry[_IDX[name]] = noise_vals[i]
    return IntervalResult(telemetry, float(ips), float(power), size / ips, size)


def evaluate_interval(
    app: SyntheticApp,
    start_instruction: int,
    interval_size: int,
    config: HardwareConfig,
    noise_seed: int = 0,
    machine: MachineParams | None = None,
):
    """Telemetry, IPS and power of one interval under a lattice configuration."""
    machine = machine or MachineParams()
    r = evaluate_state(app, start_instruction, interval_size, HardwareState.from_config(config), machine, noise_seed)
    return r.telemetry, r.ips, r.power


def efficiency(ips, power):
    """Energy-efficiency metric: IPS**3 / power."""
    if not power > 0:
        raise ValueError(f"power must be positive, got {power}")
    return ips**3 / power


def normalize_counters(telemetry, instructions) -> np.ndarray:
    """Per-instruction normalization of count-type counters; rates pass through."""
    t = np.array(telemetry, dtype=float)
    t[..., COUNT_MASK] = t[..., COUNT_MASK] / instructions
    return t


def with_noise(machine: MachineParams, sigma: float) -> MachineParams:
    return replace(machine, noise_sigma=sigma)
