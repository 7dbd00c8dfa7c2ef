"""The reconfigurable-resource lattice: BTB size, prefetcher, L2 and L3 capacity.

Every configuration maps to a stable integer label in [0, 128)::

    index = ((btb_idx * 2 + pf_idx) * 4 + l2_idx) * 4 + l3_idx

with each value set ordered ascending and ``pf_idx`` 0 meaning *on*.
"""

from __future__ import annotations

import json
import operator
from dataclasses import dataclass
from functools import lru_cache

BTB_ENTRIES = (512, 1024, 2048, 4096)
PREFETCHER = (True, False)
L2_KB = (256, 512, 768, 1024)
L3_MB = (4, 8, 12, 16)

N_CONFIGS = len(BTB_ENTRIES) * len(PREFETCHER) * len(L2_KB) * len(L3_MB)
assert N_CONFIGS == 128

CACHE_WAYS = 16

# B1 is always live; sizes chosen so the prefixes add up to the four BTB sizes.
BTB_SECTIONS = (("B1", 512), ("B2", 512), ("B3", 1024), ("B4", 2048))
GATEABLE_SECTIONS = ("B2", "B3", "B4")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class HardwareConfig:
    btb_entries: int
    prefetcher_on: bool
    l2_kb: int
    l3_mb: int

    def __post_init__(self):
        if self.btb_entries not in BTB_ENTRIES:
            raise ConfigError(f"btb_entries={self.btb_entries!r} not in {BTB_ENTRIES}")
        if not isinstance(self.prefetcher_on, bool):
            raise ConfigError(f"prefetcher_on={self.prefetcher_on!r} must be a bool")
        if self.l2_kb not in L2_KB:
            raise ConfigError(f"l2_kb={self.l2_kb!r} not in {L2_KB}")
        if self.l3_mb not in L3_MB:
            raise ConfigError(f"l3_mb={self.l3_mb!r} not in {L3_MB}")

    @property
    def index(self) -> int:
        return encode(self)

    @property
    def l2_ways(self) -> int:
        return cache_ways(self.l2_kb, L2_KB[-1])

    @property
    def l3_ways(self) -> int:
        return cache_ways(self.l3_mb, L3_MB[-1])

    def levels(self) -> tuple[int, int, int, int]:
        """Level indices (btb, pf, l2, l3) as used by the encoding."""
        return (
            BTB_ENTRIES.index(self.btb_entries),
            PREFETCHER.index(self.prefetcher_on),
            L2_KB.index(self.l2_kb),
            L3_MB.index(self.l3_mb),
        )

    def footprint(self) -> float:
        """Sum of normalized resource levels; prefetcher on counts as 1."""
        b, _, l2, l3 = self.levels()
        return b / 3 + (1.0 if self.prefetcher_on else 0.0) + l2 / 3 + l3 / 3

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "btb_entries": self.btb_entries,
            "prefetcher_on": self.prefetcher_on,
            "l2_kb": self.l2_kb,
            "l3_mb": self.l3_mb,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "HardwareConfig":
        cfg = cls(int(d["btb_entries"]), bool(d["prefetcher_on"]), int(d["l2_kb"]), int(d["l3_mb"]))
        if "index" in d and int(d["index"]) != cfg.index:
            raise ConfigError(f"index {d['index']} does not match fields (expected {cfg.index})")
        return cfg

    def __str__(self):
        pf = "on" if self.prefetcher_on else "off"
        return f"(btb={self.btb_entries}, pf={pf}, l2={self.l2_kb}K, l3={self.l3_mb}M)"


def cache_ways(capacity, capacity_max) -> int:
    ways = CACHE_WAYS * capacity / capacity_max
    if ways != round(ways):
        raise ConfigError(f"capacity {capacity} is not a whole number of ways")
    return int(round(ways))


def encode(config: HardwareConfig) -> int:
    b, p, l2, l3 = config.levels()
    return ((b * 2 + p) * 4 + l2) * 4 + l3


def decode(index: int) -> HardwareConfig:
    try:
        index = operator.index(index)
    except TypeError:
        raise ConfigError(f"config index must be an integer, got {index!r}") from None
    if not 0 <= index < N_CONFIGS:
        raise ConfigError(f"config index {index} out of range [0, {N_CONFIGS})")
    return _decode(index)


@lru_cache(maxsize=None)
def _decode(index: int) -> HardwareConfig:
    l3 = index % 4
    l2 = index // 4 % 4
    p = index // 16 % 2
    b = index // 32
    return HardwareConfig(BTB_ENTRIES[b], PREFETCHER[p], L2_KB[l2], L3_MB[l3])


def enumerate_configs() -> list[HardwareConfig]:
    return [decode(i) for i in range(N_CONFIGS)]


def max_config() -> HardwareConfig:
    return HardwareConfig(BTB_ENTRIES[-1], True, L2_KB[-1], L3_MB[-1])


def btb_enabled_sections(btb_entries: int) -> tuple[str, ...]:
    total = 0
    out = []
    for name, size in BTB_SECTIONS:
        if total >= btb_entries:
            break
        out.append(name)
        total += size
    if total != btb_entries:
        raise ConfigError(f"btb_entries={btb_entries} does not align with section boundaries")
    return tuple(out)


@dataclass(frozen=True)
class ReconfigDelta:
    l2_ways_to_gate: tuple[int, ...] = ()
    l2_ways_to_ungate: tuple[int, ...] = ()
    l3_ways_to_gate: tuple[int, ...] = ()
    l3_ways_to_ungate: tuple[int, ...] = ()
    btb_sections_to_gate: tuple[str, ...] = ()
    btb_sections_to_ungate: tuple[str, ...] = ()
    prefetcher_toggle: str = "none"  # "none" | "on->off" | "off->on"

    def __post_init__(self):
        for gate, ungate in (
            (self.l2_ways_to_gate, self.l2_ways_to_ungate),
            (self.l3_ways_to_gate, self.l3_ways_to_ungate),
            (self.btb_sections_to_gate, self.btb_sections_to_ungate),
        ):
            if set(gate) & set(ungate):
                raise ConfigError("gate and ungate lists overlap")
        for w in self.l2_ways_to_gate + self.l2_ways_to_ungate + self.l3_ways_to_gate + self.l3_ways_to_ungate:
            if not 0 <= w < CACHE_WAYS:
                raise ConfigError(f"way index {w} out of range")
        if "B1" in self.btb_sections_to_gate:
            raise ConfigError("section B1 is never gated")
        if self.prefetcher_toggle not in ("none", "on->off", "off->on"):
            raise ConfigError(f"bad prefetcher_toggle {self.prefetcher_toggle!r}")

    @property
    def is_empty(self) -> bool:
        return (
            not self.l2_ways_to_gate
            and not self.l2_ways_to_ungate
            and not self.l3_ways_to_gate
            and not self.l3_ways_to_ungate
            and not self.btb_sections_to_gate
            and not self.btb_sections_to_ungate
            and self.prefetcher_toggle == "none"
        )


def _way_delta(old_ways: int, new_ways: int):
    if new_ways < old_ways:
        return tuple(range(old_ways - 1, new_ways - 1, -1)), ()
    return (), tuple(range(old_ways, new_ways))


def config_delta(old: HardwareConfig, new: HardwareConfig) -> ReconfigDelta:
    """Actions taking ``old`` to ``new``; ways are gated from the highest index down."""
    l2_gate, l2_ungate = _way_delta(old.l2_ways, new.l2_ways)
    l3_gate, l3_ungate = _way_delta(old.l3_ways, new.l3_ways)
    old_sec = btb_enabled_sections(old.btb_entries)
    new_sec = btb_enabled_sections(new.btb_entries)
    btb_gate = tuple(s for s in reversed(old_sec) if s not in new_sec)
    btb_ungate = tuple(s for s in new_sec if s not in old_sec)
    if old.prefetcher_on == new.prefetcher_on:
        toggle = "none"
    else:
        toggle = "on->off" if old.prefetcher_on else "off->on"
    return ReconfigDelta(l2_gate, l2_ungate, l3_gate, l3_ungate, btb_gate, btb_ungate, toggle)


def apply_delta(config: HardwareConfig, delta: ReconfigDelta) -> HardwareConfig:
    """Replay a delta on a config (used to check delta soundness)."""
    l2 = _replay_ways(config.l2_ways, delta.l2_ways_to_gate, delta.l2_ways_to_ungate)
    l3 = _replay_ways(config.l3_ways, delta.l3_ways_to_gate, delta.l3_ways_to_ungate)
    sections = set(btb_enabled_sections(config.btb_entries))
    sections -= set(delta.btb_sections_to_gate)
    sections |= set(delta.btb_sections_to_ungate)
    btb = sum(size for name, size in BTB_SECTIONS if name in sections)
    pf = config.prefetcher_on
    if delta.prefetcher_toggle == "on->off":
        pf = False
    elif delta.prefetcher_toggle == "off->on":
        pf = True
    return HardwareConfig(btb, pf, L2_KB[-1] * l2 // CACHE_WAYS, L3_MB[-1] * l3 // CACHE_WAYS)


def _replay_ways(enabled: int, gate, ungate) -> int:
    ways = set(range(enabled)) - set(gate) | set(ungate)
    if ways != set(range(len(ways))):
        raise ConfigError(f"enabled ways {sorted(ways)} are not a prefix")
    return len(ways)
