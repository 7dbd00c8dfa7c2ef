"""Pearson-correlation ranking of counters against efficiency."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .workload import COUNTER_NAMES, normalize_counters

DEFAULT_CUTOFF = 0.20


class FeatureError(ValueError):
    pass


def pearson(x, y) -> float:
    """Sample Pearson correlation; 0.0 when either series is constant."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise FeatureError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise FeatureError("need at least two points")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        return 0.0
    r = float(dx @ dy) / np.sqrt(sxx * syy)
    return float(np.clip(r, -1.0, 1.0))


@dataclass(frozen=True)
class FeatureScore:
    name: str
    coefficient: float
    selected: bool

    @property
    def magnitude(self) -> float:
        return abs(self.coefficient)


@dataclass(frozen=True)
class FeatureReport:
    scores: tuple[FeatureScore, ...]  # descending |r|
    cutoff: float = DEFAULT_CUTOFF

    @property
    def selected(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.scores if s.selected)

    def to_dict(self) -> dict:
        return {
            "cutoff": self.cutoff,
            "features": [
                {"name": s.name, "coefficient": s.coefficient, "abs_coefficient": s.magnitude, "selected": s.selected}
                for s in self.scores
            ],
            "selected": list(self.selected),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureReport":
        scores = tuple(FeatureScore(f["name"], float(f["coefficient"]), bool(f["selected"])) for f in d["features"])
        return cls(scores, float(d["cutoff"]))

    def table(self, selected_only: bool = True) -> str:
        rows = [s for s in self.scores if s.selected or not selected_only]
        width = max([len("Features")] + [len(s.name) for s in rows])
        line = "+" + "-" * (width + 2) + "+" + "-" * 25 + "+"
        out = [line, f"| {'Features':<{width}} | {'Correlation Coefficient':>23} |", line]
        for s in rows:
            out.append(f"| {s.name:<{width}} | {s.coefficient:>23.6f} |")
        out.append(line)
        return "\n".join(out)


def rank_and_select(counter_matrix, efficiency_series, cutoff: float = DEFAULT_CUTOFF, names=None) -> FeatureReport:
    """Rank columns by |r| with the efficiency series; keep those strictly above ``cutoff``."""
    m = np.asarray(counter_matrix, dtype=float)
    eff = np.asarray(efficiency_series, dtype=float).ravel()
    if m.ndim != 2 or m.size == 0:
        raise FeatureError("counter matrix is empty")
    if m.shape[0] != eff.size:
        raise FeatureError(f"{m.shape[0]} rows but {eff.size} efficiency values")
    if names is None:
        names = COUNTER_NAMES if m.shape[1] == len(COUNTER_NAMES) else [f"c{i}" for i in range(m.shape[1])]
    if len(names) != m.shape[1]:
        raise FeatureError("names do not match column count")
    coefs = [pearson(m[:, j], eff) for j in range(m.shape[1])]
    order = sorted(range(len(coefs)), key=lambda j: (-abs(coefs[j]), j))
    scores = tuple(FeatureScore(names[j], coefs[j], abs(coefs[j]) > cutoff) for j in order)
    return FeatureReport(scores, cutoff)


def select_from_profiles(profile_sets, cutoff: float = DEFAULT_CUTOFF) -> FeatureReport:
    """Correlate per-instruction counters of every profiled record with its efficiency."""
    rows, effs = [], []
    for profiles in profile_sets:
        for p in profiles:
            rows.append(normalize_counters(p.telemetry, p.interval_size))
            effs.append(p.efficiency)
    if not rows:
        raise FeatureError("no profiles to select features from")
    return rank_and_select(np.vstack(rows), np.concatenate(effs), cutoff)
