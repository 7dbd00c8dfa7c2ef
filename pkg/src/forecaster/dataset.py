"""Labels and training samples built from aligned profiles.

The label of interval ``i`` is the configuration with the highest efficiency
at ``i`` across all 128 profiles. A sample for ``(i, f)`` pairs configuration
``f`` with the telemetry that ``f`` produced during interval ``i - 1``.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .config_space import N_CONFIGS, HardwareConfig, decode
from .profiler import ProfileError, check_aligned, efficiency_matrix
from .workload import COUNTER_NAMES, normalize_counters

CONFIG_FEATURES = ("cfg_btb", "cfg_prefetch", "cfg_l2", "cfg_l3")
DATASET_VERSION = 1

_FOOTPRINT = np.array([decode(i).footprint() for i in range(N_CONFIGS)])


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class IntervalLabel:
    interval_index: int
    best_config: int
    best_efficiency: float


def config_features(config: HardwareConfig) -> np.ndarray:
    """Each knob as level / (levels - 1)."""
    b, p, l2, l3 = config.levels()
    return np.array([b / 3, float(p), l2 / 3, l3 / 3])


CONFIG_FEATURE_TABLE = np.array([config_features(decode(i)) for i in range(N_CONFIGS)])


def argmax_config(efficiencies) -> int:
    """Index of the best config; ties go to the smallest footprint, then the lowest index."""
    e = np.asarray(efficiencies, dtype=float)
    best = e.max()
    tied = np.flatnonzero(e == best)
    if len(tied) == 1:
        return int(tied[0])
    return int(min(tied, key=lambda i: (_FOOTPRINT[i], i)))


def label_intervals(profiles) -> list[IntervalLabel]:
    try:
        eff = efficiency_matrix(profiles)
    except ProfileError as e:
        raise DatasetError(str(e)) from e
    labels = []
    for i, row in enumerate(eff):
        best = argmax_config(row)
        labels.append(IntervalLabel(i, best, float(row[best])))
    return labels


@dataclass
class Dataset:
    """Samples stored unscaled; ``inputs()`` applies the min-max scaling.

    ``counters`` holds per-instruction normalized values of ``feature_names``.
    """

    config_inputs: np.ndarray
    counters: np.ndarray
    labels: np.ndarray
    app_ids: np.ndarray
    intervals: np.ndarray
    configs: np.ndarray
    feature_names: tuple[str, ...]
    normalization: np.ndarray | None = None  # (n_features, 2) of (min, max)
    source_index: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.source_index is None:
            self.source_index = np.arange(len(self.labels))

    def __len__(self):
        return len(self.labels)

    @property
    def input_names(self) -> tuple[str, ...]:
        return CONFIG_FEATURES + tuple(self.feature_names)

    @property
    def input_dim(self) -> int:
        return len(CONFIG_FEATURES) + len(self.feature_names)

    def fit_normalization(self) -> np.ndarray:
        if len(self) == 0:
            raise DatasetError("cannot fit normalization on an empty dataset")
        return np.stack([self.counters.min(axis=0), self.counters.max(axis=0)], axis=1)

    def inputs(self) -> np.ndarray:
        norm = self.normalization if self.normalization is not None else self.fit_normalization()
        return np.hstack([self.config_inputs, scale_features(self.counters, norm)])

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return replace(
            self,
            config_inputs=self.config_inputs[idx],
            counters=self.counters[idx],
            labels=self.labels[idx],
            app_ids=self.app_ids[idx],
            intervals=self.intervals[idx],
            configs=self.configs[idx],
            source_index=self.source_index[idx],
        )

    def with_normalization(self, norm) -> "Dataset":
        return replace(self, normalization=None if norm is None else np.asarray(norm, dtype=float))

    @classmethod
    def concat(cls, parts) -> "Dataset":
        parts = list(parts)
        if not parts:
            raise DatasetError("nothing to concatenate")
        names = parts[0].feature_names
        if any(p.feature_names != names for p in parts):
            raise DatasetError("datasets have different feature sets")
        ds = cls(
            np.vstack([p.config_inputs for p in parts]),
            np.vstack([p.counters for p in parts]),
            np.concatenate([p.labels for p in parts]),
            np.concatenate([p.app_ids for p in parts]),
            np.concatenate([p.intervals for p in parts]),
            np.concatenate([p.configs for p in parts]),
            names,
        )
        ds.normalization = ds.fit_normalization()
        return ds

    # -- file format -------------------------------------------------------

    def to_csv(self) -> str:
        header = {
            "format": "forecaster-dataset",
            "version": DATASET_VERSION,
            "feature_names": list(self.feature_names),
            "normalization": None if self.normalization is None else self.normalization.tolist(),
        }
        buf = io.StringIO()
        buf.write("# " + json.dumps(header, sort_keys=True) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["app_id", "interval", "config", "label", *CONFIG_FEATURES, *self.feature_names])
        for k in range(len(self)):
            w.writerow(
                [self.app_ids[k], int(self.intervals[k]), int(self.configs[k]), int(self.labels[k])]
                + [repr(float(x)) for x in self.config_inputs[k]]
                + [repr(float(x)) for x in self.counters[k]]
            )
        return buf.getvalue()

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_csv())
        return path

    @classmethod
    def load(cls, path) -> "Dataset":
        text = Path(path).read_text()
        first, _, rest = text.partition("\n")
        if not first.startswith("# "):
            raise DatasetError("dataset file lacks a JSON header line")
        header = json.loads(first[2:])
        if header.get("version") != DATASET_VERSION:
            raise DatasetError(f"unsupported dataset version {header.get('version')}")
        names = tuple(header["feature_names"])
        rows = list(csv.reader(io.StringIO(rest)))
        cols = rows[0]
        if cols[4:8] != list(CONFIG_FEATURES) or tuple(cols[8:]) != names:
            raise DatasetError("dataset columns do not match header")
        body = rows[1:]
        num = np.array([[float(x) for x in r[4:]] for r in body]).reshape(len(body), 4 + len(names))
        norm = header["normalization"]
        return cls(
            config_inputs=num[:, :4],
            counters=num[:, 4:],
            labels=np.array([int(r[3]) for r in body], dtype=int),
            app_ids=np.array([r[0] for r in body], dtype=object),
            intervals=np.array([int(r[1]) for r in body], dtype=int),
            configs=np.array([int(r[2]) for r in body], dtype=int),
            feature_names=names,
            normalization=None if norm is None else np.array(norm, dtype=float),
        )


def scale_features(values, norm) -> np.ndarray:
    """Min-max scale to [0, 1] with (min, max) pairs; constant features map to 0."""
    values = np.asarray(values, dtype=float)
    lo, hi = norm[:, 0], norm[:, 1]
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    out = np.where(span > 0, (values - lo) / safe, 0.0)
    return np.clip(out, 0.0, 1.0)


def feature_columns(feature_names) -> np.ndarray:
    unknown = [n for n in feature_names if n not in COUNTER_NAMES]
    if unknown:
        raise DatasetError(f"unknown feature name(s): {unknown}")
    return np.array([COUNTER_NAMES.index(n) for n in feature_names], dtype=int)


def build_samples(profiles, labels, selected_features) -> Dataset:
    """One sample per (interval i >= 1, config f): Config-f and T[i-1] under f -> label of i."""
    cols = feature_columns(selected_features)
    try:
        check_aligned(profiles)
    except ProfileError as e:
        raise DatasetError(str(e)) from e
    profiles = sorted(profiles, key=lambda p: p.config.index)
    k = profiles[0].n_intervals
    by_interval = {lab.interval_index: lab.best_config for lab in labels}
    missing = [i for i in range(1, k) if i not in by_interval]
    if missing:
        raise DatasetError(f"labels missing for intervals {missing[:5]}...")
    if k < 2:
        raise DatasetError("need at least two intervals to form samples")

    n = N_CONFIGS * (k - 1)
    cfg_in = np.empty((n, 4))
    counters = np.empty((n, len(cols)))
    y = np.empty(n, dtype=int)
    intervals = np.empty(n, dtype=int)
    configs = np.empty(n, dtype=int)
    row = 0
    for i in range(1, k):
        for p in profiles:
            f = p.config.index
            cfg_in[row] = CONFIG_FEATURE_TABLE[f]
            counters[row] = normalize_counters(p.telemetry[i - 1], p.interval_size)[cols]
            y[row] = by_interval[i]
            intervals[row] = i
            configs[row] = f
            row += 1
    app_ids = np.array([profiles[0].app_id] * n, dtype=object)
    ds = Dataset(cfg_in, counters, y, app_ids, intervals, configs, tuple(selected_features))
    ds.normalization = ds.fit_normalization()
    return ds


def split(dataset: Dataset, fraction: float = 0.8, seed: int = 0):
    """Seeded shuffle into (train, validation); both use train-only normalization."""
    if len(dataset) == 0:
        raise DatasetError("cannot split an empty dataset")
    if not 0 < fraction <= 1:
        raise DatasetError("fraction must lie in (0, 1]")
    perm = np.random.default_rng(seed).permutation(len(dataset))
    n_train = int(round(fraction * len(dataset)))
    train = dataset.subset(np.sort(perm[:n_train]))
    val = dataset.subset(np.sort(perm[n_train:]))
    norm = train.fit_normalization()
    return train.with_normalization(norm), val.with_normalization(norm)


def save_split(train: Dataset, val: Dataset, path) -> Path:
    path = Path(path)
    path.write_text(
        json.dumps(
            {"train": train.source_index.tolist(), "validation": val.source_index.tolist()},
            sort_keys=True,
        )
    )
    return path
