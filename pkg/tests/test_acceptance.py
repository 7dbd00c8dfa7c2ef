"""Acceptance criteria, one test each; a PASS/FAIL line per criterion is printed at the end."""

import csv
import itertools
import json
import time
from decimal import Decimal, getcontext
from fractions import Fraction

import numpy as np
import pytest

from forecaster import experiments as ex
from forecaster.config_space import BTB_ENTRIES, L2_KB, L3_MB, PREFETCHER, HardwareConfig, enumerate_configs, max_config
from forecaster.dataset import label_intervals
from forecaster.features import pearson, rank_and_select
from forecaster.models import MLPArchitecture, TrainConfig, init_model, loss_and_grads, select_best
from forecaster.models.mlp import SearchEntry
from forecaster.profiler import efficiency_matrix, load_profiles, profile_all, save_profiles
from forecaster.runtime import RuntimeState, apply_config, inference_latency
from forecaster.workload import (
    COUNTER_NAMES,
    SELECTED_COUNTERS,
    GenerationRecipe,
    HardwareState,
    MachineParams,
    generate_app,
    static_budget,
    static_power,
)

REF = MLPArchitecture(14, (384, 384, 256, 256), 128)

# reference coefficients of the ten selected counters, in COUNTER_NAMES order
REFERENCE_R = (0.633786, 0.615692, 0.505695, 0.450328, 0.443464, 0.436718, 0.337137, 0.295210, 0.264086, 0.242080)

# end-to-end settings: reduced candidate list and epochs keep the LOO run well under 15 minutes
E2E_CANDIDATES = ((64, 64), (128, 128), (256, 256))
E2E_TRAIN = TrainConfig(epochs=20)


# ---------------------------------------------------------------------------
# 1. labels against an independent argmax over the raw CSV files


def _raw_argmax(app_dir):
    """Brute-force labels straight from the CSV text, no package parsing."""
    per_cfg = {}
    for path in sorted(app_dir.glob("config_*.csv")):
        lines = path.read_text().splitlines()
        head = {}
        for ln in lines:
            if ln.startswith("#"):
                k, _, v = ln[1:].partition(":")
                head[k.strip()] = v.strip()
        cfg = json.loads(head["config"])
        body = list(csv.DictReader(ln for ln in lines if not ln.startswith("#")))
        eff = [float(r["ips"]) ** 3 / float(r["power"]) for r in body]
        stored = [float(r["efficiency"]) for r in body]
        assert np.allclose(eff, stored, rtol=1e-12)
        # position in the configuration lattice
        b = BTB_ENTRIES.index(cfg["btb_entries"])
        pf = PREFETCHER.index(cfg["prefetcher_on"])
        l2 = L2_KB.index(cfg["l2_kb"])
        l3 = L3_MB.index(cfg["l3_mb"])
        idx = ((b * 2 + pf) * 4 + l2) * 4 + l3
        foot = Fraction(b, 3) + (1 if cfg["prefetcher_on"] else 0) + Fraction(l2, 3) + Fraction(l3, 3)
        per_cfg[idx] = (stored, foot)
    n = len(next(iter(per_cfg.values()))[0])
    labels = []
    for i in range(n):
        # highest efficiency, then smaller footprint, then lower index
        labels.append(min(per_cfg, key=lambda c: (-per_cfg[c][0][i], per_cfg[c][1], c)))
    return labels


def test_c1_labels_match_bruteforce(tmp_path, acceptance_log):
    t0 = time.perf_counter()
    rec = GenerationRecipe(total_instructions=20_000_000)
    total = agree = 0
    for k in range(3):
        app = generate_app(f"oracle{k}", 100 + k, rec)
        save_profiles(profile_all(app), tmp_path)
        ours = [lab.best_config for lab in label_intervals(load_profiles(tmp_path, app.app_id))]
        ref = _raw_argmax(tmp_path / app.app_id)
        assert len(list((tmp_path / app.app_id).glob("*.csv"))) == 128
        total += len(ref)
        agree += sum(a == b for a, b in zip(ours, ref))
    dt = time.perf_counter() - t0
    ok = acceptance_log(1, agree == total and dt < 60, f"labels {agree}/{total} intervals match, {dt:.1f}s")
    assert ok


# ---------------------------------------------------------------------------
# 2. Pearson against a high-precision two-pass reference


def _pearson_ref(x, y):
    getcontext().prec = 60
    n = len(x)
    xs = [Fraction(v) for v in x]
    ys = [Fraction(v) for v in y]
    mx = sum(xs) / n
    my = sum(ys) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(xs, ys))
    sxx = sum((a - mx) ** 2 for a in xs)
    syy = sum((b - my) ** 2 for b in ys)
    if sxx == 0 or syy == 0:
        return 0.0
    r2 = sxy * sxy / (sxx * syy)
    r = (Decimal(r2.numerator) / Decimal(r2.denominator)).sqrt()
    return float(r if sxy >= 0 else -r)


def _series_with_r(z, r, rng):
    """Series whose sample correlation with z is exactly r (up to rounding)."""
    z = (z - z.mean()) / np.linalg.norm(z - z.mean())
    w = rng.standard_normal(len(z))
    w -= w.mean()
    w -= (w @ z) * z
    w /= np.linalg.norm(w)
    return r * z + np.sqrt(1 - r * r) * w


def test_c2_pearson_oracle(acceptance_log):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = 0.0
    for k in range(1000):
        n = int(rng.integers(5, 60))
        x = rng.standard_normal(n) * 10 ** rng.uniform(-3, 3)
        y = rng.uniform(-1, 1) * x + rng.standard_normal(n) * 10 ** rng.uniform(-3, 3)
        worst = max(worst, abs(pearson(x, y) - _pearson_ref(x.tolist(), y.tolist())))

    eff = rng.standard_normal(400)
    aux = [0.19, -0.15, 0.12, -0.10, 0.08, 0.05, -0.03, 0.02, 0.01, -0.005, 0.0, 0.199, -0.18, 0.07]
    coefs = list(REFERENCE_R) + aux
    signs = [1, 1, 1, 1, 1, 1, -1, 1, 1, -1]  # signs do not matter for |r|
    coefs[:10] = [s * c for s, c in zip(signs, coefs[:10])]
    counters = np.column_stack([_series_with_r(eff, c, rng) for c in coefs])
    report = rank_and_select(counters, eff, 0.20, COUNTER_NAMES)
    chosen = set(report.selected)
    got = {s.name: s.coefficient for s in report.scores}
    injected_ok = all(abs(abs(got[nm]) - c) < 1e-9 for nm, c in zip(SELECTED_COUNTERS, REFERENCE_R))
    # strictness: a counter sitting exactly at the cutoff is dropped
    edge = abs(got["l3_usage"])
    strict = "l3_usage" not in rank_and_select(counters, eff, edge, COUNTER_NAMES).selected
    dt = time.perf_counter() - t0
    ok = worst < 1e-9 and chosen == set(SELECTED_COUNTERS) and injected_ok and strict and dt < 10
    acceptance_log(2, ok, f"max |err| {worst:.2e} over 1000 pairs, reference set selected={chosen == set(SELECTED_COUNTERS)}, "
                          f"strict cutoff={strict}, {dt:.1f}s")
    assert ok


# ---------------------------------------------------------------------------
# 3. gradient check


def test_c3_gradient_check(acceptance_log):
    t0 = time.perf_counter()
    worst = 0.0
    for depth in range(1, 6):
        rng = np.random.default_rng(depth)
        arch = MLPArchitecture(5, tuple(int(v) for v in rng.integers(3, 7, size=depth)), 6)
        model = init_model(arch, seed=depth)
        for b in model.biases:
            b += rng.normal(0, 0.1, b.shape)
        x = rng.normal(size=(8, 5))
        y = rng.integers(0, 6, size=8)
        _, grads = loss_and_grads(model, x, y)
        for p, g in zip(model.params(), grads):
            it = np.nditer(p, flags=["multi_index"])
            for _ in it:
                i = it.multi_index
                old = p[i]
                p[i] = old + 1e-6
                lp, _ = loss_and_grads(model, x, y)
                p[i] = old - 1e-6
                lm, _ = loss_and_grads(model, x, y)
                p[i] = old
                num = (lp - lm) / 2e-6
                worst = max(worst, abs(num - g[i]) / max(abs(num) + abs(g[i]), 1e-8))
    dt = time.perf_counter() - t0
    ok = worst < 1e-4 and dt < 60
    acceptance_log(3, ok, f"max relative error {worst:.2e} for 1-5 hidden layers, {dt:.1f}s")
    assert ok


# ---------------------------------------------------------------------------
# 4. search tie-break


def test_c4_search_tiebreak(acceptance_log):
    picks = []
    for seed in range(10):
        rng = np.random.default_rng(seed)
        acc = float(rng.uniform(0.3, 0.9))
        big = SearchEntry(0, MLPArchitecture(14, (384, 384, 256, 256), 128), acc, 0.0, False)
        small = SearchEntry(1, MLPArchitecture(14, (128, 128), 128), acc, 0.0, False)
        pair = [big, small] if rng.random() < 0.5 else [small, big]
        picks.append(select_best(pair).architecture.hidden)
    ok = all(p == (128, 128) for p in picks)
    acceptance_log(4, ok, f"smaller network chosen in {sum(p == (128, 128) for p in picks)}/10 seeds")
    assert ok


# ---------------------------------------------------------------------------
# 5. policy dominance by brute force


def test_c5_policy_dominance(acceptance_log):
    t0 = time.perf_counter()
    rows = []
    for k in range(8):
        app = generate_app(f"app{k}", k, GenerationRecipe())
        assert app.total_instructions == 50_000_000
        e = efficiency_matrix(profile_all(app, 500_000))
        statics = e.mean(axis=0)  # every one of the 128 fixed configurations
        dynamic = e.max(axis=1).mean()
        base = statics[max_config().index]
        best_static = statics.max()
        rows.append((dynamic, best_static, base))
        assert np.all(dynamic >= statics)
    dt = time.perf_counter() - t0
    ok = all(d >= s >= b for d, s, b in rows) and dt < 300
    acceptance_log(5, ok, f"dynamic >= static >= baseline on 8/8 apps over all 128 statics, {dt:.1f}s")
    assert ok


# ---------------------------------------------------------------------------
# 6-9. leave-one-out over 8 apps, shared by the next criteria


@pytest.fixture(scope="module")
def loo(tmp_path_factory):
    out = tmp_path_factory.mktemp("loo")
    spec = ex.ExperimentSpec.default(8, out_dir=str(out), search_candidates=E2E_CANDIDATES, train=E2E_TRAIN)
    t0 = time.perf_counter()
    table = ex.cmd_pipeline(spec)
    return out, table, time.perf_counter() - t0, spec


def test_c6_end_to_end(loo, acceptance_log):
    _, table, dt, _ = loo
    s = table.summary()
    eff = s["forecaster"]["norm_efficiency"]
    dyn = s["best-dynamic"]["norm_efficiency"]
    share = s["forecaster_gain_share"]
    ips_loss = 1.0 - s["forecaster"]["norm_ips"]
    power_save = 1.0 - s["forecaster"]["norm_power"]
    a, b, c, d = eff >= 1.0, share >= 0.5, ips_loss <= 0.01, power_save >= 0.05
    ok = a and b and c and d and dt < 900
    acceptance_log(
        6, ok,
        f"(a) efficiency x{eff:.4f} {'ok' if a else 'FAIL'}; (b) gain share {share:.3f} of best-dynamic x{dyn:.4f} "
        f"{'ok' if b else 'FAIL'}; (c) IPS loss {ips_loss:.2%} {'ok' if c else 'FAIL'}; "
        f"(d) power saving {power_save:.2%} {'ok' if d else 'FAIL'}; {dt:.0f}s",
    )
    assert ok


def test_c7_forecaster_vs_mle(loo, acceptance_log):
    _, table, _, _ = loo
    fc, mle = table.mean("forecaster"), table.mean("mle")
    ok = fc >= mle
    acceptance_log(7, ok, f"forecaster x{fc:.4f} vs mle x{mle:.4f}")
    assert ok


def test_c8_reconfiguration_invariants(loo, acceptance_log):
    out, _, _, spec = loo
    reports = ex.load_run_reports(out)
    b1 = over = lost = 0
    n_rows = 0
    for by_policy in reports.values():
        for r in by_policy.values():
            for row in r.rows:
                n_rows += 1
                b1 += row["btb_entries"] < 512
                over += row["max_valid_gated"] > spec.run.occupancy_threshold
                lost += row["writebacks"] != row["dirty_blocks_gated"]
    # every lattice transition from a dirty, partly busy state keeps B1 live
    rng = np.random.default_rng(8)
    for a, b in itertools.product(enumerate_configs(), repeat=2):
        if rng.random() > 0.1:
            continue
        st = RuntimeState.initial(a, 500_000)
        for c in ("l2", "l3"):
            st.valid[c] = rng.uniform(0, 1, 16)
            st.dirty[c] = st.valid[c] * rng.uniform(0, 1, 16)
        delta, _, _ = apply_config(st, b, MachineParams())
        b1 += "B1" in delta.btb_sections_to_gate
    ok = b1 == 0 and over == 0 and lost == 0
    acceptance_log(8, ok, f"{n_rows} intervals: B1 gated {b1}, busy ways gated {over}, writeback mismatches {lost}")
    assert ok


def test_c9_static_power_accounting(loo, acceptance_log):
    out, _, _, spec = loo
    reports = ex.load_run_reports(out)
    worst = 0.0
    for by_policy in reports.values():
        for r in by_policy.values():
            budget = r.params["static_budget_w"]
            for row in r.rows:
                for c in ("l2", "l3"):
                    want = row[f"{c}_gated_achieved"] / 16 * 0.9 * budget[c]
                    worst = max(worst, abs(row[f"{c}_static_saving_w"] - want))
    # 12 of 16 L2 ways gated leaves 67.5% of the L2 static budget saved
    m = MachineParams()
    full = static_power(HardwareState.from_config(max_config()), m)["l2"]
    quarter = static_power(HardwareState.from_config(HardwareConfig(4096, True, 256, 16)), m)["l2"]
    frac = (full - quarter) / static_budget(m)["l2"]
    ok = worst < 1e-9 and abs(frac - 0.675) < 1e-9
    acceptance_log(9, ok, f"max |saving - gated x 0.9 x budget| {worst:.1e} W; 75% gated L2 saves {frac:.2%}")
    assert ok


# ---------------------------------------------------------------------------
# 10. latency model


def test_c10_latency(acceptance_log):
    l8, l12, l16 = (inference_latency(n, n, REF) for n in (8, 12, 16))
    ok = 1706 <= l16 <= 2086 and l8 > l12 > l16
    acceptance_log(10, ok, f"16x16 {l16:.0f} cycles, 12x12 {l12:.0f}, 8x8 {l8:.0f}")
    assert ok


# ---------------------------------------------------------------------------
# 11. interval sweep


def test_c11_interval_sweep(tmp_path, acceptance_log):
    spec = ex.ExperimentSpec(
        apps=(("w0", 0), ("w1", 1), ("w2", 2)),
        recipe=GenerationRecipe(total_instructions=20_000_000, min_phase_instructions=1_000_000),
        search_candidates=((16,),),
        train=TrainConfig(epochs=3, batch_size=64),
        out_dir=str(tmp_path),
    )
    rows = ex.cmd_sweep_interval(spec, ex.SWEEP_SIZES)
    text = (tmp_path / "sweep.csv").read_text().splitlines()
    parsed = list(csv.DictReader(text))
    well_formed = (
        [int(r["interval_size"]) for r in parsed] == list(ex.SWEEP_SIZES)
        and all(np.isfinite(float(r[p])) for r in parsed for p in ex.POLICIES)
    )
    ok = len(rows) == 5 and well_formed
    best = json.loads((tmp_path / "sweep_summary.json").read_text())["best_interval_size"]
    acceptance_log(11, ok, f"{len(parsed)} sizes swept, columns {text[0]}, best {best}")
    assert ok
