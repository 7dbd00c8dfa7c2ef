"""Command line front end.

    forecaster [--seed S] [--params FILE] [--out DIR] [--jobs K] <command> ...

Each command reads and writes artifacts under ``--out`` so the stages can be
run one at a time or all at once with ``pipeline``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

from . import experiments as ex
from .config_space import decode, max_config
from .dataset import Dataset, build_samples, label_intervals, save_split, split
from .features import select_from_profiles
from .models import MLPArchitecture, TrainConfig, architecture_search, load_model, save_model, search_space, train, train_mle
from .profiler import DEFAULT_INTERVAL, load_profiles, profile_all, save_profiles
from .runtime import ModelPolicy, OraclePolicy, RunParams, StaticPolicy, run_online
from .workload import GenerationRecipe, MachineParams, SyntheticApp, generate_app, load_params_file

log = logging.getLogger("forecaster")


def _hidden(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.replace("/", ",").split(",") if x)


def _ids(text: str | None):
    return [x for x in text.split(",") if x] if text else None


def load_params(path) -> dict:
    """Sections: recipe, machine, run, train, experiment."""
    if not path:
        return {}
    d = load_params_file(path)
    known = {"recipe", "machine", "run", "train", "experiment"}
    unknown = set(d) - known
    if unknown:
        raise ex.UsageError(f"unknown sections in {path}: {sorted(unknown)}")
    return d


def _build(cls, d):
    names = {f.name for f in fields(cls)}
    bad = set(d) - names
    if bad:
        raise ex.UsageError(f"unknown {cls.__name__} keys: {sorted(bad)}")
    return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def spec_from_args(args, params: dict) -> ex.ExperimentSpec:
    e = dict(params.get("experiment", {}))
    n_apps = getattr(args, "n_apps", None) or e.pop("n_apps", 8)
    e.pop("n_apps", None)
    apps = e.pop("apps", None) or [(f"app{i}", args.seed + i) for i in range(n_apps)]
    run = _build(RunParams, params.get("run", {}))
    if getattr(args, "interval", None):
        run = replace(run, interval_size=args.interval)
    kw = dict(
        apps=tuple(tuple(a) for a in apps),
        out_dir=args.out,
        recipe=_build(GenerationRecipe, params.get("recipe", {})),
        machine=_build(MachineParams, params.get("machine", {})),
        run=run,
        train=_build(TrainConfig, params.get("train", {})),
        seed=args.seed,
        jobs=args.jobs,
        interval_sizes=(run.interval_size,),
    )
    for key in ("protocol", "policies", "search_mode"):
        if getattr(args, key, None) is not None:
            e[key] = getattr(args, key)
    if getattr(args, "candidates", None):
        e["search_candidates"] = tuple(_hidden(c) for c in args.candidates.split(";"))
    if isinstance(e.get("policies"), str):
        e["policies"] = tuple(p for p in e["policies"].split(",") if p)
    if "search_candidates" in e:
        e["search_candidates"] = tuple(tuple(c) for c in e["search_candidates"])
    kw.update(e)
    return ex.ExperimentSpec(**kw)


def _apps_dir(out):
    return Path(out) / "apps"


def _load_apps(out, ids=None) -> list[SyntheticApp]:
    d = _apps_dir(out)
    files = sorted(d.glob("*.json"))
    if not files:
        raise ex.PipelineError("load", f"no apps under {d}; run gen-apps first")
    apps = [SyntheticApp.from_dict(json.loads(f.read_text())) for f in files]
    if ids:
        missing = set(ids) - {a.app_id for a in apps}
        if missing:
            raise ex.PipelineError("load", f"unknown app ids {sorted(missing)}")
        apps = [a for a in apps if a.app_id in ids]
    return apps


def _profile_ids(out):
    d = Path(out) / "profiles"
    ids = sorted(p.name for p in d.iterdir() if p.is_dir()) if d.is_dir() else []
    if not ids:
        raise ex.PipelineError("load", f"no profiles under {d}; run profile first")
    return ids


# ---------------------------------------------------------------------------
# commands


def cmd_gen_apps(args, params):
    spec = spec_from_args(args, params)
    for app in ex.generate_apps(spec):
        path = ex._write(_apps_dir(args.out) / f"{app.app_id}.json", ex._json(app.to_dict()))
        print(f"{app.app_id}: {len(app.phases)} phases, {app.total_instructions} instructions -> {path}")


def cmd_profile(args, params):
    machine = _build(MachineParams, params.get("machine", {}))
    size = args.interval or params.get("run", {}).get("interval_size", DEFAULT_INTERVAL)
    for app in _load_apps(args.out, _ids(args.apps)):
        profs = profile_all(app, size, machine, jobs=args.jobs)
        save_profiles(profs, Path(args.out) / "profiles")
        print(f"{app.app_id}: 128 profiles of {profs[0].n_intervals} intervals")


def cmd_label(args, params):
    for app_id in _ids(args.apps) or _profile_ids(args.out):
        labels = label_intervals(load_profiles(Path(args.out) / "profiles", app_id))
        ex._write(Path(args.out) / "labels" / f"{app_id}.csv", ex.labels_csv(labels))
        print(f"{app_id}: {len(labels)} labels")


def cmd_select_features(args, params):
    ids = _ids(args.apps) or _profile_ids(args.out)
    report = select_from_profiles([load_profiles(Path(args.out) / "profiles", i) for i in ids], args.cutoff)
    ex._write(Path(args.out) / "features.json", report.to_json())
    print(report.table())


def cmd_build_dataset(args, params):
    ids = _ids(args.apps) or _profile_ids(args.out)
    feat_path = Path(args.features or Path(args.out) / "features.json")
    if not feat_path.exists():
        raise ex.PipelineError("build-dataset", f"missing artifact: {feat_path}")
    feats = json.loads(feat_path.read_text())["selected"]
    parts = []
    for i in ids:
        profs = load_profiles(Path(args.out) / "profiles", i)
        parts.append(build_samples(profs, label_intervals(profs), feats))
    ds = Dataset.concat(parts)
    ds.save(Path(args.out) / "dataset.csv")
    tr, va = split(ds, args.fraction, args.seed)
    save_split(tr, va, Path(args.out) / "split.json")
    print(f"{len(ds)} samples ({len(tr)} train / {len(va)} validation), {ds.input_dim} inputs")


def _train_cfg(args, params):
    cfg = _build(TrainConfig, params.get("train", {}))
    if getattr(args, "epochs", None):
        cfg = replace(cfg, epochs=args.epochs)
    return replace(cfg, seed=args.seed) if "seed" not in params.get("train", {}) else cfg


def _load_split(args):
    path = Path(args.dataset or Path(args.out) / "dataset.csv")
    if not path.exists():
        raise ex.PipelineError(args.command, f"missing artifact: {path}")
    return split(Dataset.load(path), args.fraction, args.seed)


def cmd_search(args, params):
    tr, va = _load_split(args)
    space = [_hidden(c) for c in args.candidates.split(";")] if args.candidates else search_space(args.search_mode)
    result = architecture_search(tr, va, space, _train_cfg(args, params))
    ex._write(Path(args.out) / "search_log.csv", result.log_csv(with_time=False))
    ex._write(Path(args.out) / "search_timing.csv", result.log_csv(with_time=True))
    save_model(result.best, Path(args.out) / "model.fcm")
    e = result.best_entry
    print(f"best {e.architecture.label()} accuracy={e.accuracy:.4f} params={e.n_params}")


def cmd_train(args, params):
    tr, va = _load_split(args)
    if args.mle:
        model = train_mle(tr)
        path = save_model(model, Path(args.out) / "mle.fcm")
        from .models import mle_accuracy

        print(f"mle accuracy={mle_accuracy(model, va):.4f} -> {path}")
        return
    arch = MLPArchitecture(tr.input_dim, _hidden(args.hidden), 128)
    model, acc = train(tr, va, arch, _train_cfg(args, params))
    path = save_model(model, Path(args.out) / "model.fcm")
    print(f"{arch.label()} accuracy={acc:.4f} -> {path}")


def cmd_simulate(args, params):
    machine = _build(MachineParams, params.get("machine", {}))
    run = _build(RunParams, params.get("run", {}))
    if args.interval:
        run = replace(run, interval_size=args.interval)
    (app,) = _load_apps(args.out, [args.app])
    if args.model:
        model = load_model(args.model)
        policy = ModelPolicy(model, args.name)
    elif args.policy in ("baseline-all", None):
        policy = StaticPolicy(max_config(), "baseline-all")
    elif args.policy == "static":
        policy = StaticPolicy(decode(args.config), f"static-{args.config}")
    else:
        profs = load_profiles(Path(args.out) / "profiles", app.app_id)
        if args.policy == "best-static":
            policy = StaticPolicy(decode(ex.best_static_config(profs)), "best-static")
        else:
            policy = OraclePolicy([lab.best_config for lab in label_intervals(profs)], "best-dynamic")
    report = run_online(app, policy, machine, run)
    base = run_online(app, StaticPolicy(max_config(), "baseline-all"), machine, run)
    report.baseline = {"mean_efficiency": base.mean_efficiency, "mean_ips": base.mean_ips, "mean_power": base.mean_power}
    base.baseline = report.baseline
    # the report step normalizes against this run
    base.save(Path(args.out) / "runs" / app.app_id, base.policy)
    a, _ = report.save(Path(args.out) / "runs" / app.app_id, report.policy)
    s = report.summary()
    print(
        f"{app.app_id}/{report.policy}: efficiency x{s['normalized_efficiency']:.4f} "
        f"power x{s['normalized_power']:.4f} ips x{s['normalized_ips']:.4f} -> {a}"
    )


def _print_table(table: ex.ComparisonTable):
    print(f"{'policy':<14}{'efficiency':>12}{'power':>10}{'ips':>10}")
    for p in table.policies():
        print(f"{p:<14}{table.mean(p):>12.4f}{table.mean(p, 'norm_power'):>10.4f}{table.mean(p, 'norm_ips'):>10.4f}")


def cmd_pipeline(args, params):
    spec = spec_from_args(args, params)
    table = ex.cmd_pipeline(spec)
    if args.plots:
        ex.cmd_report(spec.out_dir, plots=True)
        ex.write_manifest(spec.out_dir)
    _print_table(table)


def cmd_sweep(args, params):
    spec = spec_from_args(args, params)
    sizes = [int(float(s)) for s in args.sizes.split(",")] if args.sizes else ex.SWEEP_SIZES
    rows = ex.cmd_sweep_interval(spec, sizes)
    for r in rows:
        print(r["interval_size"], " ".join(f"{k}={v:.4f}" for k, v in r.items() if k != "interval_size"))


def cmd_report(args, params):
    files = ex.cmd_report(args.out, plots=args.plots)
    for k, v in files.items():
        print(f"{k}: {v}")


COMMANDS = {
    "gen-apps": cmd_gen_apps,
    "profile": cmd_profile,
    "label": cmd_label,
    "select-features": cmd_select_features,
    "build-dataset": cmd_build_dataset,
    "search": cmd_search,
    "train": cmd_train,
    "simulate": cmd_simulate,
    "sweep-interval": cmd_sweep,
    "report": cmd_report,
    "pipeline": cmd_pipeline,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="forecaster", description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--params", help="JSON or TOML file with recipe/machine/run/train/experiment sections")
    p.add_argument("--out", default="out", help="artifact directory")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-apps")
    s.add_argument("--n-apps", type=int)
    s = sub.add_parser("profile")
    s.add_argument("--apps")
    s.add_argument("--interval", type=int)
    s = sub.add_parser("label")
    s.add_argument("--apps")
    s = sub.add_parser("select-features")
    s.add_argument("--apps")
    s.add_argument("--cutoff", type=float, default=0.20)
    s = sub.add_parser("build-dataset")
    s.add_argument("--apps")
    s.add_argument("--features")
    s.add_argument("--fraction", type=float, default=0.8)
    for name in ("search", "train"):
        s = sub.add_parser(name)
        s.add_argument("--dataset")
        s.add_argument("--fraction", type=float, default=0.8)
        s.add_argument("--epochs", type=int)
        if name == "search":
            s.add_argument("--search-mode", default="uniform", choices=("uniform", "exhaustive"))
            s.add_argument("--candidates", help='e.g. "128,128;256,256"')
        else:
            s.add_argument("--hidden", default="384,384,256,256")
            s.add_argument("--mle", action="store_true")
    s = sub.add_parser("simulate")
    s.add_argument("--app", required=True)
    s.add_argument("--model")
    s.add_argument("--name")
    s.add_argument("--policy", choices=("baseline-all", "best-static", "best-dynamic", "static"))
    s.add_argument("--config", type=int, default=max_config().index)
    s.add_argument("--interval", type=int)
    for name in ("pipeline", "sweep-interval"):
        s = sub.add_parser(name)
        s.add_argument("--n-apps", type=int)
        s.add_argument("--protocol", choices=ex.PROTOCOLS)
        s.add_argument("--policies", help="comma separated")
        s.add_argument("--search-mode", choices=("uniform", "exhaustive"))
        s.add_argument("--candidates", help='hidden layouts, e.g. "128,128;256,256"')
        s.add_argument("--plots", action="store_true")
        if name == "pipeline":
            s.add_argument("--interval", type=int)
        else:
            s.add_argument("--sizes", help="comma separated, default 0.1M,0.5M,1M,5M,10M")
    s = sub.add_parser("report")
    s.add_argument("--plots", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        params = load_params(args.params)
        COMMANDS[args.command](args, params)
    except ex.UsageError as e:
        print(f"forecaster: usage error: {e}", file=sys.stderr)
        return 2
    except ex.PipelineError as e:
        print(f"forecaster: stage {e.stage} failed: {e}", file=sys.stderr)
        return 1
    except (ValueError, OSError, KeyError) as e:
        print(f"forecaster: stage {args.command} failed: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
