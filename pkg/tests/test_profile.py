from __future__ import annotations

from datetime import date, datetime, timedelta, timezone

import numpy as np
import pytest

from frba.data import LoginRecord
from frba.profile import (
    CategoricalStats,
    CircularHistogram,
    EmaState,
    LoginCountHistory,
    ProfileError,
    UserProfile,
    apply_daily_decay,
    categorical_values,
    fractional_weekday,
    is_working_day,
    profile_from_json,
    profile_to_json,
    update,
    update_on_failure,
    update_on_success,
)

T0 = datetime(2024, 3, 4, 9, 30, tzinfo=timezone.utc)  # a Monday


def rec(ts=T0, success=True, **kw):
    base = dict(
        user_id="alice",
        timestamp=ts,
        ip="10.1.2.3",
        asn=100,
        country="DE",
        region="Berlin",
        city="Berlin",
        os_name_version="Linux",
        browser_name_version="Firefox 120",
        device_type="desktop",
        rtt_ms=50,
        success=success,
    )
    base.update(kw)
    return LoginRecord(**base)


def test_decay_one_day_scales_weight():
    p = UserProfile("alice")
    apply_daily_decay(p, date(2024, 3, 4))
    p.categorical["asn"].items = {"100": 10.0}
    apply_daily_decay(p, date(2024, 3, 5))
    assert p.categorical["asn"].items["100"] == pytest.approx(9.5, abs=1e-12)


def test_decay_prunes_below_min_weight():
    p = UserProfile("alice")
    apply_daily_decay(p, date(2024, 3, 4))
    p.categorical["asn"].items = {"100": 0.52, "200": 3.0}
    apply_daily_decay(p, date(2024, 3, 5))
    assert "100" not in p.categorical["asn"].items
    assert p.categorical["asn"].items["200"] == pytest.approx(2.85)


def test_decay_same_day_is_identity():
    p = UserProfile("alice")
    update_on_success(p, rec())
    before = profile_to_json(p)
    apply_daily_decay(p, T0.date())
    assert profile_to_json(p) == before


def test_decay_multi_day_gap_uses_power():
    p = UserProfile("alice")
    apply_daily_decay(p, date(2024, 3, 4))
    p.categorical["city"].items = {"Berlin": 8.0}
    p.hour_of_day.bins[9] = 4.0
    apply_daily_decay(p, date(2024, 3, 7))
    assert p.categorical["city"].items["Berlin"] == pytest.approx(8.0 * 0.95**3)
    assert p.hour_of_day.bins[9] == pytest.approx(4.0 * 0.95**3)


def test_decay_rejects_clock_regression():
    p = UserProfile("alice")
    apply_daily_decay(p, date(2024, 3, 4))
    with pytest.raises(ProfileError):
        apply_daily_decay(p, date(2024, 3, 3))


def test_decay_folds_today_count():
    p = UserProfile("alice")
    update_on_success(p, rec())
    update_on_success(p, rec(T0 + timedelta(hours=1)))
    update_on_success(p, rec(T0 + timedelta(days=1)))
    assert p.login_counts.daily_counts == [2]
    assert p.login_counts.today_count == 1


def test_first_success_creates_single_item():
    p = update_on_success(UserProfile("alice"), rec())
    assert p.categorical["asn"].items == {"100": 1.0}
    assert p.categorical["ip_range"].items == {"10.1.2.*": 1.0}
    assert p.categorical["is_working_day"].items == {"1": 1.0}
    assert p.hour_of_day.bins[9] == 1.0
    assert p.day_of_week.bins[0] == 1.0
    assert p.new_records_since_training == 1


def test_success_resets_failure_streak():
    p = UserProfile("alice")
    for k in range(3):
        update(p, rec(T0 + timedelta(seconds=k), success=False))
    assert p.failures.consecutive_failures == 3
    update(p, rec(T0 + timedelta(seconds=10)))
    assert p.failures.consecutive_failures == 0


def test_ema_step():
    s = EmaState(mean=100.0, variance_estimate=0.0, count=5)
    s.update(200.0, 0.1)
    assert s.mean == pytest.approx(110.0, abs=1e-12)
    # EMA of squared deviations: (1 - b) * (v + b * d^2)
    assert s.variance_estimate == pytest.approx(0.9 * (0.1 * 100.0**2))


def test_ema_first_observation_sets_mean_and_sigma_floor():
    s = EmaState()
    s.update(42.0, 0.1)
    assert (s.mean, s.variance_estimate, s.count) == (42.0, 0.0, 1)
    assert s.sigma == 1e-6


def test_failure_increments_only_streak():
    p = UserProfile("alice")
    update_on_success(p, rec())
    before = p.categorical["asn"].items.copy()
    hist = p.hour_of_day.bins.copy()
    update_on_failure(p, rec(T0 + timedelta(minutes=1), success=False, asn=999))
    assert p.failures.consecutive_failures == 1
    for _ in range(3):
        update_on_failure(p, rec(T0 + timedelta(minutes=2), success=False))
    assert p.failures.consecutive_failures == 4
    update_on_failure(p, rec(T0 + timedelta(minutes=3), success=False))
    assert p.failures.consecutive_failures == 5
    assert p.categorical["asn"].items == before
    np.testing.assert_array_equal(p.hour_of_day.bins, hist)


def test_failure_round_trip_leaves_other_fields_identical():
    p = UserProfile("alice")
    update_on_success(p, rec())
    a = profile_from_json(profile_to_json(p))
    update_on_failure(a, rec(T0 + timedelta(minutes=1), success=False))
    assert a.failures.consecutive_failures == 1
    a.failures.consecutive_failures = 0
    assert profile_to_json(a) == profile_to_json(p)


def test_out_of_order_success_rejected():
    p = update_on_success(UserProfile("alice"), rec())
    with pytest.raises(ProfileError):
        update_on_success(p, rec(T0 - timedelta(seconds=1)))


def test_wrong_dispatch_rejected():
    with pytest.raises(ProfileError):
        update_on_success(UserProfile("alice"), rec(success=False))
    with pytest.raises(ProfileError):
        update_on_failure(UserProfile("alice"), rec())


def test_time_between_tracks_log_seconds():
    p = UserProfile("alice")
    update_on_success(p, rec())
    update_on_success(p, rec(T0 + timedelta(hours=1)))
    assert p.time_between.mean == pytest.approx(np.log(3600.0))


def test_working_day_and_weekday_helpers():
    assert is_working_day(date(2024, 3, 8))
    assert not is_working_day(date(2024, 3, 9))
    assert fractional_weekday(T0) == pytest.approx(9.5 / 24)
    assert categorical_values(rec(T0 + timedelta(days=5)))["is_working_day"] == "0"


def test_structural_invariants():
    with pytest.raises(ValueError):
        CircularHistogram(12)
    with pytest.raises(ValueError):
        CircularHistogram(7, np.full(7, -1.0))
    with pytest.raises(ValueError):
        UserProfile("x", decay_alpha=0.0)
    h = LoginCountHistory(capacity=3)
    for c in [1, 2, 3, 4, 5]:
        h.today_count = c
        h.fold_today()
    assert h.daily_counts == [3, 4, 5]
    s = CategoricalStats({"a": 1.0})
    s.decay(0.4, 0.5)
    assert s.items == {}


def test_serialization_round_trip_is_stable():
    p = UserProfile("alice")
    for k in range(20):
        update(p, rec(T0 + timedelta(hours=7 * k), success=k % 5 != 4, rtt_ms=40 + k))
    text = profile_to_json(p)
    q = profile_from_json(text)
    assert profile_to_json(q) == text
    assert '"format":"frba-profile"' in text
