import numpy as np
import pytest

from forecaster.config_space import decode, max_config
from forecaster.profiler import (
    ProfileError,
    ProfileFile,
    check_aligned,
    efficiency_matrix,
    load_profiles,
    n_intervals,
    profile_all,
    profile_app,
    profile_path,
    save_profiles,
)
from forecaster.workload import efficiency, evaluate_interval


def test_interval_count_drops_tail(small_app):
    assert n_intervals(small_app, 500_000) == 10
    assert n_intervals(small_app, 3_000_000) == 1
    with pytest.raises(ProfileError):
        n_intervals(small_app, small_app.total_instructions + 1)
    with pytest.raises(ProfileError):
        n_intervals(small_app, 0)


def test_records_match_evaluate_interval(small_app):
    cfg = decode(90)
    p = profile_app(small_app, cfg, 500_000)
    for i in (0, 4, 9):
        tel, ips, power = evaluate_interval(small_app, i * 500_000, 500_000, cfg, noise_seed=small_app.seed)
        assert np.array_equal(p.telemetry[i], tel)
        assert p.ips[i] == ips and p.power[i] == power
        assert p.efficiency[i] == efficiency(ips, power)


def test_all_profiles_aligned(small_profiles):
    assert len(small_profiles) == 128
    assert [p.config.index for p in small_profiles] == list(range(128))
    assert len({p.n_intervals for p in small_profiles}) == 1
    check_aligned(small_profiles)


def test_csv_roundtrip_is_exact(small_profiles, tmp_path):
    p = small_profiles[17]
    q = ProfileFile.from_csv(p.to_csv())
    assert q.app_id == p.app_id and q.config == p.config and q.interval_size == p.interval_size
    for a in ("telemetry", "ips", "power", "efficiency"):
        assert np.array_equal(getattr(p, a), getattr(q, a))
    save_profiles(small_profiles, tmp_path)
    assert profile_path(tmp_path, p.app_id, p.config).exists()
    back = load_profiles(tmp_path, p.app_id)
    assert np.array_equal(efficiency_matrix(back), efficiency_matrix(small_profiles))


def test_header_lists_config_and_counters(small_profiles):
    text = small_profiles[0].to_csv()
    assert '"l2_kb": 256' in text
    assert "l2_most_usage" in text.splitlines()[4]


def test_misaligned_rejected(small_app, small_profiles):
    other = profile_app(small_app, decode(5), 500_000)
    bad = list(small_profiles)
    bad[5] = other
    with pytest.raises(ProfileError):
        check_aligned(bad)
    with pytest.raises(ProfileError):
        check_aligned(small_profiles[:-1])


def test_corrupt_file(small_profiles):
    text = small_profiles[0].to_csv()
    with pytest.raises(ProfileError):
        ProfileFile.from_csv("\n".join(l for l in text.splitlines() if not l.startswith("# app_id")))
    with pytest.raises(ProfileError):
        ProfileFile.from_csv(text.replace("l2_most_usage", "bogus"))


def test_parallel_matches_serial(small_app):
    a = profile_all(small_app, 1_000_000, jobs=1)
    b = profile_all(small_app, 1_000_000, jobs=2)
    assert all(np.array_equal(x.efficiency, y.efficiency) for x, y in zip(a, b))


def test_missing_directory(tmp_path):
    with pytest.raises(ProfileError):
        load_profiles(tmp_path, "nothing")
