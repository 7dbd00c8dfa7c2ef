"""End-to-end experiments: pipeline, policy comparison, interval sweep, reports.

Everything a pipeline produces lands under one output directory together with
``manifest.json`` (sha256 of every file). Files whose content depends on wall
clock time are listed as volatile in the manifest.
"""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .config_space import decode, max_config
from .dataset import Dataset, argmax_config, build_samples, label_intervals, save_split, split
from .features import select_from_profiles
from .models import (
    MLPArchitecture,
    TrainConfig,
    architecture_search,
    load_model,
    mle_accuracy,
    save_model,
    search_space,
    train,
    train_mle,
)
from .profiler import efficiency_matrix, load_profiles, profile_all, save_profiles
from .runtime import ExecutionReport, ModelPolicy, OraclePolicy, RunParams, StaticPolicy, run_online
from .workload import GenerationRecipe, MachineParams, SyntheticApp, combine_apps, generate_app, static_budget

log = logging.getLogger(__name__)

POLICIES = ("baseline-all", "best-static", "best-dynamic", "mle", "forecaster")
PROTOCOLS = ("leave-one-out", "split")
SWEEP_SIZES = (100_000, 500_000, 1_000_000, 5_000_000, 10_000_000)
VOLATILE = ("timing.json", "search_timing.csv")


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class UsageError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentSpec:
    apps: tuple[tuple[str, int], ...]
    protocol: str = "leave-one-out"
    interval_sizes: tuple[int, ...] = (500_000,)
    policies: tuple[str, ...] = POLICIES
    out_dir: str = "out"
    recipe: GenerationRecipe = field(default_factory=GenerationRecipe)
    machine: MachineParams = field(default_factory=MachineParams)
    run: RunParams = field(default_factory=RunParams)
    train: TrainConfig = field(default_factory=TrainConfig)
    search_mode: str = "uniform"  # uniform | exhaustive | fixed
    search_candidates: tuple[tuple[int, ...], ...] = ()  # overrides search_mode when given
    cutoff: float = 0.20
    split_fraction: float = 0.8
    combine_size: int = 4
    seed: int = 0
    jobs: int = 1
    save_profiles: bool = True

    def __post_init__(self):
        object.__setattr__(self, "apps", tuple((str(a), int(s)) for a, s in self.apps))
        object.__setattr__(self, "policies", tuple(self.policies))
        object.__setattr__(self, "interval_sizes", tuple(int(i) for i in self.interval_sizes))
        object.__setattr__(self, "search_candidates", tuple(tuple(int(h) for h in c) for c in self.search_candidates))
        if not self.apps:
            raise UsageError("experiment needs at least one app")
        if not self.policies:
            raise UsageError("experiment needs at least one policy")
        unknown = set(self.policies) - set(POLICIES)
        if unknown:
            raise UsageError(f"unknown policies {sorted(unknown)}; choose from {POLICIES}")
        if self.protocol not in PROTOCOLS:
            raise UsageError(f"unknown protocol {self.protocol!r}")
        if self.protocol == "leave-one-out" and len(self.apps) < 2:
            raise UsageError("leave-one-out needs at least two apps")
        if self.protocol == "split" and len(self.apps) < 2 * self.combine_size:
            raise UsageError(f"split protocol needs at least {2 * self.combine_size} apps")
        if len({a for a, _ in self.apps}) != len(self.apps):
            raise UsageError("app ids must be unique")
        for size in self.interval_sizes:
            if size < self.run.push_period or size % self.run.push_period:
                raise UsageError(f"interval size {size} must be a positive multiple of n={self.run.push_period}")

    @classmethod
    def default(cls, n_apps: int = 8, **kw) -> "ExperimentSpec":
        return cls(apps=tuple((f"app{i}", i) for i in range(n_apps)), **kw)

    def candidates(self):
        if self.search_candidates:
            return list(self.search_candidates)
        return search_space(self.search_mode)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["run"] = self.run.to_dict()
        return d


@dataclass
class ComparisonTable:
    rows: list[dict]  # app, policy, efficiency, power, ips, norm_*

    COLUMNS = ("app", "policy", "efficiency", "power", "ips", "norm_efficiency", "norm_power", "norm_ips")

    @classmethod
    def from_reports(cls, reports) -> "ComparisonTable":
        rows = []
        for app_id, by_policy in reports.items():
            base = by_policy["baseline-all"]
            for name, r in by_policy.items():
                rows.append(
                    {
                        "app": app_id,
                        "policy": name,
                        "efficiency": r.mean_efficiency,
                        "power": r.mean_power,
                        "ips": r.mean_ips,
                        "norm_efficiency": r.mean_efficiency / base.mean_efficiency,
                        "norm_power": r.mean_power / base.mean_power,
                        "norm_ips": r.mean_ips / base.mean_ips,
                    }
                )
        return cls(rows)

    def policies(self):
        seen = []
        for r in self.rows:
            if r["policy"] not in seen:
                seen.append(r["policy"])
        return seen

    def mean(self, policy: str, column: str = "norm_efficiency") -> float:
        vals = [r[column] for r in self.rows if r["policy"] == policy]
        return float(np.mean(vals)) if vals else float("nan")

    def value(self, app: str, policy: str, column: str) -> float:
        for r in self.rows:
            if r["app"] == app and r["policy"] == policy:
                return r[column]
        raise KeyError((app, policy))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=self.COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: repr(float(v)) if isinstance(v, float) else v for k, v in r.items()})
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ComparisonTable":
        rows = []
        for r in csv.DictReader(io.StringIO(text)):
            rows.append({k: v if k in ("app", "policy") else float(v) for k, v in r.items()})
        return cls(rows)

    def summary(self) -> dict:
        out = {}
        for p in self.policies():
            out[p] = {c: self.mean(p, c) for c in ("norm_efficiency", "norm_power", "norm_ips")}
        if "forecaster" in out and "best-dynamic" in out:
            dyn = out["best-dynamic"]["norm_efficiency"] - 1.0
            fc = out["forecaster"]["norm_efficiency"] - 1.0
            out["forecaster_gain_share"] = fc / dyn if dyn > 0 else float("nan")
        return out


# ---------------------------------------------------------------------------
# small helpers


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=lambda o: o.tolist() if hasattr(o, "tolist") else str(o))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir) -> Path:
    """List every file under ``out_dir`` with its sha256."""
    out_dir = Path(out_dir)
    files = {}
    for p in sorted(out_dir.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            rel = p.relative_to(out_dir).as_posix()
            files[rel] = sha256_file(p)
    volatile = sorted(k for k in files if Path(k).name in VOLATILE)
    return _write(out_dir / "manifest.json", _json({"files": files, "volatile": volatile}))


def verify_manifest(out_dir) -> list[str]:
    """Paths whose hash no longer matches (volatile files included)."""
    out_dir = Path(out_dir)
    m = json.loads((out_dir / "manifest.json").read_text())
    bad = []
    for rel, digest in m["files"].items():
        p = out_dir / rel
        if not p.exists() or sha256_file(p) != digest:
            bad.append(rel)
    return bad


def labels_csv(labels) -> str:
    lines = ["interval_index,best_config,best_efficiency"]
    lines += [f"{lab.interval_index},{lab.best_config},{lab.best_efficiency!r}" for lab in labels]
    return "\n".join(lines) + "\n"


def best_static_config(profiles) -> int:
    return argmax_config(efficiency_matrix(profiles).mean(axis=0))


class _Stage:
    """Context manager that wraps failures with the stage name."""

    def __init__(self, name, timings):
        self.name = name
        self.timings = timings

    def __enter__(self):
        self.t0 = time.perf_counter()
        log.info("stage %s", self.name)
        return self

    def __exit__(self, exc_type, exc, tb):
        self.timings[self.name] = self.timings.get(self.name, 0.0) + time.perf_counter() - self.t0
        if exc is not None and not isinstance(exc, (PipelineError, KeyboardInterrupt)):
            raise PipelineError(self.name, f"{type(exc).__name__}: {exc}") from exc
        return False


# ---------------------------------------------------------------------------
# stages


def generate_apps(spec: ExperimentSpec) -> list[SyntheticApp]:
    return [generate_app(a, s, spec.recipe) for a, s in spec.apps]


def profile_apps(apps, spec: ExperimentSpec, interval_size: int, out: Path | None = None):
    profiles = {}
    for app in apps:
        profiles[app.app_id] = profile_all(app, interval_size, spec.machine, jobs=spec.jobs)
        if out is not None and spec.save_profiles:
            save_profiles(profiles[app.app_id], out / "profiles")
    return profiles


def train_fold(train_profiles, train_labels, spec: ExperimentSpec, hidden, fold_dir: Path | None = None):
    """Feature selection, dataset, MLP and MLE for one set of training apps."""
    report = select_from_profiles(train_profiles, spec.cutoff)
    feats = report.selected
    if not feats:
        raise PipelineError("select-features", "no counter passes the correlation cutoff")
    ds = Dataset.concat([build_samples(p, lab, feats) for p, lab in zip(train_profiles, train_labels)])
    tr, va = split(ds, spec.split_fraction, spec.seed)
    arch = MLPArchitecture(tr.input_dim, tuple(hidden), 128)
    model, acc = train(tr, va, arch, spec.train)
    mle = train_mle(tr)
    mle.metadata = {"validation_accuracy": mle_accuracy(mle, va)}
    if fold_dir is not None:
        _write(fold_dir / "features.json", report.to_json())
        _write(fold_dir / "features.txt", report.table() + "\n")
        ds.save(fold_dir / "dataset.csv")
        save_split(tr, va, fold_dir / "split.json")
        save_model(model, fold_dir / "model.fcm")
        save_model(mle, fold_dir / "mle.fcm")
    return {"features": feats, "model": model, "mle": mle, "accuracy": acc, "mle_accuracy": mle.metadata["validation_accuracy"]}


def search_architecture(train_profiles, train_labels, spec: ExperimentSpec, out: Path | None = None):
    cands = spec.candidates()
    if spec.search_mode == "fixed" and not spec.search_candidates:
        raise UsageError("fixed search mode needs search_candidates")
    if len(cands) == 1:
        return tuple(cands[0]), None
    report = select_from_profiles(train_profiles, spec.cutoff)
    ds = Dataset.concat([build_samples(p, lab, report.selected) for p, lab in zip(train_profiles, train_labels)])
    tr, va = split(ds, spec.split_fraction, spec.seed)
    result = architecture_search(tr, va, cands, spec.train)
    if out is not None:
        _write(out / "search" / "search_log.csv", result.log_csv(with_time=False))
        _write(out / "search" / "search_timing.csv", result.log_csv(with_time=True))
        _write(
            out / "search" / "choice.json",
            _json({"hidden": list(result.best_entry.architecture.hidden), "accuracy": result.best_entry.accuracy}),
        )
    return tuple(result.best_entry.architecture.hidden), result


def run_policies(app, profiles, labels, fold, spec: ExperimentSpec, run: RunParams, out: Path | None = None):
    """Online runs of every requested policy; baseline-all always runs for normalization."""
    names = ["baseline-all"] + [p for p in spec.policies if p != "baseline-all"]
    reports = {}
    for name in names:
        if name == "baseline-all":
            pol = StaticPolicy(max_config(), name)
        elif name == "best-static":
            pol = StaticPolicy(decode(best_static_config(profiles)), name)
        elif name == "best-dynamic":
            pol = OraclePolicy([lab.best_config for lab in labels], name)
        elif name == "mle":
            pol = ModelPolicy(fold["mle"], name)
        else:
            pol = ModelPolicy(fold["model"], name)
        reports[name] = run_online(app, pol, spec.machine, run)
    base = reports["baseline-all"]
    b = {"mean_efficiency": base.mean_efficiency, "mean_ips": base.mean_ips, "mean_power": base.mean_power}
    for r in reports.values():
        r.baseline = b
        if out is not None:
            r.save(out / "runs" / app.app_id, r.policy)
    return {k: reports[k] for k in names if k in spec.policies or k == "baseline-all"}


def cmd_pipeline(spec: ExperimentSpec, interval_size: int | None = None, out_dir=None) -> ComparisonTable:
    """generate -> profile -> label -> features -> dataset -> search/train -> online runs -> report."""
    size = interval_size or spec.interval_sizes[0]
    out = Path(out_dir or spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    run = replace(spec.run, interval_size=size)
    timings = {}
    # the output location is left out so reruns elsewhere hash identically
    recorded = {k: v for k, v in spec.to_dict().items() if k != "out_dir"}
    _write(out / "experiment.json", _json({**recorded, "interval_size": size}))

    with _Stage("gen-apps", timings):
        apps = generate_apps(spec)
        for a in apps:
            _write(out / "apps" / f"{a.app_id}.json", _json(a.to_dict()))

    with _Stage("profile", timings):
        if spec.protocol == "split":
            order = np.random.default_rng(spec.seed).permutation(len(apps))
            half = len(apps) // 2
            train_apps = [apps[i] for i in sorted(order[:half])]
            test_pool = [apps[i] for i in sorted(order[half:])]
            combos = [
                combine_apps(c, f"mix{k}")
                for k, c in enumerate(itertools.combinations(test_pool, spec.combine_size))
            ]
            train_mix = [
                combine_apps(c, f"trainmix{k}")
                for k, c in enumerate(itertools.combinations(train_apps, spec.combine_size))
            ]
            for a in combos + train_mix:
                _write(out / "apps" / f"{a.app_id}.json", _json(a.to_dict()))
            profiles = profile_apps(train_apps + train_mix + combos, spec, size, out)
        else:
            profiles = profile_apps(apps, spec, size, out)

    with _Stage("label", timings):
        labels = {}
        for app_id, profs in profiles.items():
            labels[app_id] = label_intervals(profs)
            _write(out / "labels" / f"{app_id}.csv", labels_csv(labels[app_id]))

    if spec.protocol == "split":
        folds = [("split", [a.app_id for a in train_apps + train_mix], combos)]
    else:
        folds = [(a.app_id, [b.app_id for b in apps if b.app_id != a.app_id], [a]) for a in apps]

    with _Stage("search", timings):
        first_train = folds[0][1]
        hidden, _ = search_architecture(
            [profiles[i] for i in first_train], [labels[i] for i in first_train], spec, out
        )

    reports = {}
    fold_info = {}
    for fold_name, train_ids, test_apps in folds:
        fold_dir = out / "folds" / fold_name
        with _Stage("train", timings):
            fold = train_fold([profiles[i] for i in train_ids], [labels[i] for i in train_ids], spec, hidden, fold_dir)
        fold_info[fold_name] = {
            "train_apps": train_ids,
            "test_apps": [a.app_id for a in test_apps],
            "features": list(fold["features"]),
            "hidden": list(hidden),
            "validation_accuracy": fold["accuracy"],
            "mle_validation_accuracy": fold["mle_accuracy"],
        }
        with _Stage("simulate", timings):
            for app in test_apps:
                reports[app.app_id] = run_policies(app, profiles[app.app_id], labels[app.app_id], fold, spec, run, out)

    with _Stage("report", timings):
        table = ComparisonTable.from_reports(reports)
        _write(out / "comparison.csv", table.to_csv())
        _write(out / "summary.json", _json({"interval_size": size, "folds": fold_info, "policies": table.summary()}))
        cmd_report(out)
    _write(out / "timing.json", _json(timings))
    write_manifest(out)
    return table


# ---------------------------------------------------------------------------
# sweep and report


def cmd_sweep_interval(spec: ExperimentSpec, sizes=SWEEP_SIZES, out_dir=None) -> list[dict]:
    """One pipeline per interval size; table of mean normalized efficiency per size."""
    sizes = [int(s) for s in sizes]
    if not sizes:
        raise UsageError("no interval sizes given")
    n = spec.run.push_period
    for s in sizes:
        if s < n or s % n:
            raise UsageError(f"interval size {s} must be a positive multiple of n={n}")
    out = Path(out_dir or spec.out_dir)
    rows = []
    for s in sizes:
        table = cmd_pipeline(spec, s, out / f"interval_{s}")
        row = {"interval_size": s}
        for p in table.policies():
            row[p] = table.mean(p)
        rows.append(row)
    target = "forecaster" if "forecaster" in rows[0] else next(k for k in rows[0] if k != "interval_size")
    best = max(rows, key=lambda r: (r[target], -r["interval_size"]))
    cols = list(rows[0].keys())
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: repr(float(v)) if isinstance(v, float) else v for k, v in r.items()})
    _write(out / "sweep.csv", buf.getvalue())
    _write(out / "sweep_summary.json", _json({"sizes": sizes, "policy": target, "best_interval_size": best["interval_size"]}))
    write_manifest(out)
    return rows


def load_run_reports(out_dir) -> dict:
    runs = Path(out_dir) / "runs"
    if not runs.is_dir():
        raise PipelineError("report", f"missing artifact: {runs}")
    reports = {}
    for app_dir in sorted(p for p in runs.iterdir() if p.is_dir()):
        for csv_path in sorted(app_dir.glob("*.csv")):
            if not csv_path.with_suffix(".json").exists():
                raise PipelineError("report", f"missing artifact: {csv_path.with_suffix('.json')}")
            r = ExecutionReport.load(csv_path)
            reports.setdefault(app_dir.name, {})[r.policy] = r
    if not reports:
        raise PipelineError("report", f"no run reports under {runs}")
    return reports


def gating_rows(reports, machine: MachineParams | None = None) -> list[dict]:
    """Mean gated fraction per resource and the static power it saves, per run."""
    machine = machine or MachineParams()
    budget = static_budget(machine)
    keep = 1.0 - machine.gated_static_residual
    rows = []
    for app_id, by_policy in reports.items():
        for name, r in by_policy.items():
            row = {"app": app_id, "policy": name}
            for res in ("l2", "l3", "btb"):
                row[f"{res}_gated"] = float(r.gating_fraction(res).mean())
            for res in ("l2", "l3"):
                row[f"{res}_gated_requested"] = float(r.gating_fraction(res, achieved=False).mean())
                row[f"{res}_static_saved_w"] = row[f"{res}_gated"] * keep * budget[res]
                row[f"{res}_static_saved_frac"] = row[f"{res}_gated"] * keep
            row["achievement"] = r.achievement()
            rows.append(row)
    return rows


def _rows_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0].keys()), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: repr(float(v)) if isinstance(v, float) else v for k, v in r.items()})
    return buf.getvalue()


def cmd_report(out_dir, plots: bool = False, machine: MachineParams | None = None) -> dict:
    """CSV tables (and optionally SVG plots) from the run reports under ``out_dir``."""
    out = Path(out_dir)
    reports = load_run_reports(out)
    if machine is None and (out / "experiment.json").exists():
        machine = MachineParams.from_dict(json.loads((out / "experiment.json").read_text())["machine"])
    table = ComparisonTable.from_reports(reports)
    rep = out / "report"
    files = {"normalized": _write(rep / "normalized.csv", table.to_csv())}
    grows = gating_rows(reports, machine)
    files["gating"] = _write(rep / "gating.csv", _rows_csv(grows))
    for app_id, by_policy in reports.items():
        for name, r in by_policy.items():
            series = [
                {"interval": i, "l2": float(a), "l3": float(b), "btb": float(c)}
                for i, (a, b, c) in enumerate(zip(r.gating_fraction("l2"), r.gating_fraction("l3"), r.gating_fraction("btb")))
            ]
            _write(rep / "gating_series" / f"{app_id}__{name}.csv", _rows_csv(series))
    if plots:
        files.update(_plots(table, grows, rep))
    return {k: str(v) for k, v in files.items()}


def _plots(table: ComparisonTable, grows, rep: Path) -> dict:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "forecaster"
    out = {}
    apps = sorted({r["app"] for r in table.rows})
    pols = table.policies()
    x = np.arange(len(apps))
    width = 0.8 / max(len(pols), 1)
    for col in ("norm_efficiency", "norm_power", "norm_ips"):
        fig, ax = plt.subplots(figsize=(8, 3.5))
        for k, p in enumerate(pols):
            ax.bar(x + k * width, [table.value(a, p, col) for a in apps], width, label=p)
        ax.set_xticks(x + width * (len(pols) - 1) / 2)
        ax.set_xticklabels(apps)
        ax.set_ylabel(col)
        ax.axhline(1.0, color="k", lw=0.5)
        ax.legend(fontsize=7)
        fig.tight_layout()
        path = rep / f"{col}.svg"
        fig.savefig(path, metadata={"Date": None})
        plt.close(fig)
        out[col] = path
    fig, ax = plt.subplots(figsize=(8, 3.5))
    fc = [r for r in grows if r["policy"] == "forecaster"] or grows
    labels = [f"{r['app']}/{r['policy']}" for r in fc]
    xx = np.arange(len(fc))
    for k, res in enumerate(("l2", "l3", "btb")):
        ax.bar(xx + k * 0.27, [r[f"{res}_gated"] for r in fc], 0.27, label=res)
    ax.set_xticks(xx + 0.27)
    ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=7)
    ax.set_ylabel("fraction turned off")
    ax.legend(fontsize=7)
    fig.tight_layout()
    path = rep / "gating.svg"
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)
    out["gating_plot"] = path
    return out


def load_fold_models(fold_dir):
    fold_dir = Path(fold_dir)
    return {"model": load_model(fold_dir / "model.fcm"), "mle": load_model(fold_dir / "mle.fcm")}


def reload_profiles(out_dir, app_id):
    return load_profiles(Path(out_dir) / "profiles", app_id)
