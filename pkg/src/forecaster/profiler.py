"""Offline profiling: run an app under every configuration, one record per interval."""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config_space import HardwareConfig, enumerate_configs
from .workload import (
    COUNTER_NAMES,
    HardwareState,
    MachineParams,
    SyntheticApp,
    WorkloadError,
    efficiency,
    evaluate_state,
)

DEFAULT_INTERVAL = 500_000
FORMAT_VERSION = 1


class ProfileError(ValueError):
    pass


@dataclass
class ProfileFile:
    """Per-interval records of one app under one configuration.

    ``telemetry`` has shape (n_intervals, 24); counters are raw (counts over
    the interval, rates as fractions).
    """

    app_id: str
    config: HardwareConfig
    interval_size: int
    telemetry: np.ndarray
    ips: np.ndarray
    power: np.ndarray
    efficiency: np.ndarray

    @property
    def n_intervals(self) -> int:
        return len(self.ips)

    def record(self, i: int) -> dict:
        return {
            "interval_index": i,
            "telemetry": dict(zip(COUNTER_NAMES, self.telemetry[i].tolist())),
            "ips": float(self.ips[i]),
            "power": float(self.power[i]),
            "efficiency": float(self.efficiency[i]),
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# format: forecaster-profile v{FORMAT_VERSION}\n")
        buf.write(f"# app_id: {self.app_id}\n")
        buf.write(f"# config: {self.config.to_json()}\n")
        buf.write(f"# interval_size: {self.interval_size}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["interval_index", *COUNTER_NAMES, "ips", "power", "efficiency"])
        for i in range(self.n_intervals):
            w.writerow([i, *map(repr, self.telemetry[i].tolist()), repr(float(self.ips[i])),
                        repr(float(self.power[i])), repr(float(self.efficiency[i]))])
        return buf.getvalue()

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_csv())
        return path

    @classmethod
    def load(cls, path) -> "ProfileFile":
        return cls.from_csv(Path(path).read_text())

    @classmethod
    def from_csv(cls, text: str) -> "ProfileFile":
        header = {}
        lines = text.splitlines()
        body_start = 0
        for body_start, line in enumerate(lines):
            if not line.startswith("#"):
                break
            key, _, value = line[1:].partition(":")
            header[key.strip()] = value.strip()
        for key in ("app_id", "config", "interval_size"):
            if key not in header:
                raise ProfileError(f"profile header missing {key!r}")
        rows = list(csv.reader(lines[body_start:]))
        if not rows:
            raise ProfileError("profile has no column header")
        cols = rows[0]
        expected = ["interval_index", *COUNTER_NAMES, "ips", "power", "efficiency"]
        if cols != expected:
            raise ProfileError(f"unexpected profile columns: {cols}")
        data = np.array([[float(x) for x in r] for r in rows[1:]], dtype=float).reshape(-1, len(expected))
        if not np.array_equal(data[:, 0], np.arange(len(data))):
            raise ProfileError("interval indices are not 0..n-1")
        return cls(
            app_id=header["app_id"],
            config=HardwareConfig.from_dict(json.loads(header["config"])),
            interval_size=int(header["interval_size"]),
            telemetry=data[:, 1 : 1 + len(COUNTER_NAMES)],
            ips=data[:, -3],
            power=data[:, -2],
            efficiency=data[:, -1],
        )


def n_intervals(app: SyntheticApp, interval_size: int) -> int:
    if interval_size <= 0:
        raise ProfileError("interval_size must be positive")
    if interval_size > app.total_instructions:
        raise ProfileError(
            f"interval_size {interval_size} larger than app {app.app_id} ({app.total_instructions} instructions)"
        )
    # trailing partial interval is dropped
    return app.total_instructions // interval_size


def profile_app(
    app: SyntheticApp,
    config: HardwareConfig,
    interval_size: int = DEFAULT_INTERVAL,
    machine: MachineParams | None = None,
    noise_seed: int | None = None,
) -> ProfileFile:
    machine = machine or MachineParams()
    k = n_intervals(app, interval_size)
    seed = app.seed if noise_seed is None else noise_seed
    state = HardwareState.from_config(config)
    tel = np.empty((k, len(COUNTER_NAMES)))
    ips = np.empty(k)
    power = np.empty(k)
    for i in range(k):
        try:
            r = evaluate_state(app, i * interval_size, interval_size, state, machine, seed)
        except WorkloadError as e:
            raise ProfileError(str(e)) from e
        tel[i] = r.telemetry
        ips[i] = r.ips
        power[i] = r.power
    eff = np.array([efficiency(a, b) for a, b in zip(ips, power)])
    return ProfileFile(app.app_id, config, interval_size, tel, ips, power, eff)


def _profile_job(args):
    return profile_app(*args)


def profile_all(
    app: SyntheticApp,
    interval_size: int = DEFAULT_INTERVAL,
    machine: MachineParams | None = None,
    noise_seed: int | None = None,
    jobs: int = 1,
) -> list[ProfileFile]:
    """Profiles for all 128 configurations, ordered by config index."""
    machine = machine or MachineParams()
    n_intervals(app, interval_size)
    work = [(app, c, interval_size, machine, noise_seed) for c in enumerate_configs()]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(_profile_job, work))
    return [_profile_job(w) for w in work]


def profile_path(directory, app_id: str, config: HardwareConfig) -> Path:
    return Path(directory) / app_id / f"config_{config.index:03d}.csv"


def save_profiles(profiles, directory) -> list[Path]:
    out = []
    for p in profiles:
        path = profile_path(directory, p.app_id, p.config)
        path.parent.mkdir(parents=True, exist_ok=True)
        out.append(p.save(path))
    return out


def load_profiles(directory, app_id: str) -> list[ProfileFile]:
    files = sorted((Path(directory) / app_id).glob("config_*.csv"))
    if not files:
        raise ProfileError(f"no profiles for {app_id} under {directory}")
    profiles = [ProfileFile.load(f) for f in files]
    return sorted(profiles, key=lambda p: p.config.index)


def efficiency_matrix(profiles) -> np.ndarray:
    """(n_intervals, 128) efficiencies indexed by config index; checks alignment."""
    check_aligned(profiles)
    out = np.empty((profiles[0].n_intervals, len(profiles)))
    for p in profiles:
        out[:, p.config.index] = p.efficiency
    return out


def check_aligned(profiles) -> None:
    if len(profiles) == 0:
        raise ProfileError("no profiles given")
    idx = sorted(p.config.index for p in profiles)
    if idx != list(range(len(profiles))) or len(profiles) != 128:
        raise ProfileError("expected exactly one profile per configuration index 0..127")
    first = profiles[0]
    for p in profiles:
        if p.app_id != first.app_id:
            raise ProfileError(f"profiles mix apps {first.app_id!r} and {p.app_id!r}")
        if p.interval_size != first.interval_size or p.n_intervals != first.n_intervals:
            raise ProfileError(
                f"misaligned profiles: config {p.config.index} has {p.n_intervals} intervals of "
                f"{p.interval_size}, config {first.config.index} has {first.n_intervals} of {first.interval_size}"
            )
