"""Per-user streaming behavioral statistics.

A :class:`UserProfile` holds everything needed to score a login without
keeping raw history: decayed categorical weight sets, circular histograms
for hour-of-day and day-of-week, EMA moments for RTT and log inter-login
time, a bounded history of daily login counts, and the current failure
streak. Only successful logins touch the history; failures only move the
streak counter.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import date, datetime

import numpy as np

from frba.data import LoginRecord

PROFILE_FORMAT = "frba-profile"
PROFILE_VERSION = 1

# Categorical feature ids, in the order they are stored on the profile.
CATEGORICAL_FEATURES = (
    "asn",
    "browser",
    "city",
    "country",
    "device_type",
    "ip_range",
    "is_working_day",
    "os",
    "region",
)

SIGMA_FLOOR = 1e-6
VARIANCE_EPS = 1e-12


class ProfileError(ValueError):
    """Raised when an update would violate the profile's time ordering."""


def is_working_day(day: date) -> bool:
    return day.isoweekday() <= 5


def categorical_values(record: LoginRecord) -> dict[str, str]:
    """Map each categorical feature id to the record's raw value ('' if missing)."""
    return {
        "asn": "" if record.asn is None else str(record.asn),
        "browser": record.browser_name_version or "",
        "city": record.city or "",
        "country": record.country or "",
        "device_type": record.device_type or "",
        "ip_range": record.ip_range or "",
        "is_working_day": "1" if is_working_day(record.timestamp.date()) else "0",
        "os": record.os_name_version or "",
        "region": record.region or "",
    }


def fractional_hour(ts: datetime) -> float:
    return ts.hour + ts.minute / 60.0 + ts.second / 3600.0


def fractional_weekday(ts: datetime) -> float:
    # Monday = 0
    return ts.weekday() + fractional_hour(ts) / 24.0


@dataclass
class CategoricalStats:
    items: dict[str, float] = field(default_factory=dict)
    last_update_day: date | None = None

    def total(self) -> float:
        return float(sum(self.items.values()))

    def add(self, value: str, amount: float = 1.0) -> None:
        self.items[value] = self.items.get(value, 0.0) + amount

    def decay(self, factor: float, min_weight: float) -> None:
        self.items = {
            k: w * factor for k, w in self.items.items() if w * factor >= min_weight
        }


@dataclass
class CircularHistogram:
    period: int
    bins: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.period not in (7, 24):
            raise ValueError(f"period must be 7 or 24, got {self.period}")
        if self.bins is None:
            self.bins = np.zeros(self.period, dtype=np.float64)
        else:
            self.bins = np.asarray(self.bins, dtype=np.float64)
        if self.bins.shape != (self.period,):
            raise ValueError("bin count must equal period")
        if np.any(self.bins < 0):
            raise ValueError("histogram weights must be non-negative")

    def add(self, x: float, amount: float = 1.0) -> None:
        self.bins[int(math.floor(x)) % self.period] += amount


@dataclass
class EmaState:
    """Exponentially weighted mean and variance of one numeric feature."""

    mean: float = 0.0
    variance_estimate: float = 0.0
    count: int = 0

    def update(self, x: float, beta: float) -> None:
        if self.count == 0:
            self.mean = float(x)
            self.variance_estimate = 0.0
        else:
            diff = x - self.mean
            incr = beta * diff
            self.mean += incr
            self.variance_estimate = (1.0 - beta) * (self.variance_estimate + diff * incr)
        self.count += 1

    @property
    def sigma(self) -> float:
        if self.variance_estimate < VARIANCE_EPS:
            return SIGMA_FLOOR
        return max(math.sqrt(self.variance_estimate), SIGMA_FLOOR)


@dataclass
class LoginCountHistory:
    daily_counts: list[int] = field(default_factory=list)
    today_count: int = 0
    capacity: int = 100

    def fold_today(self) -> None:
        # Only days with at least one login enter the history.
        if self.today_count > 0:
            self.daily_counts.append(self.today_count)
            del self.daily_counts[: max(0, len(self.daily_counts) - self.capacity)]
        self.today_count = 0


@dataclass
class FailureStreak:
    consecutive_failures: int = 0
    threshold_n: int = 5

    def __post_init__(self):
        if self.threshold_n < 1:
            raise ValueError("threshold_n must be positive")


@dataclass
class UserProfile:
    user_id: str
    categorical: dict[str, CategoricalStats] = field(
        default_factory=lambda: {name: CategoricalStats() for name in CATEGORICAL_FEATURES}
    )
    hour_of_day: CircularHistogram = field(default_factory=lambda: CircularHistogram(24))
    day_of_week: CircularHistogram = field(default_factory=lambda: CircularHistogram(7))
    rtt: EmaState = field(default_factory=EmaState)
    time_between: EmaState = field(default_factory=EmaState)  # log-seconds
    login_counts: LoginCountHistory = field(default_factory=LoginCountHistory)
    failures: FailureStreak = field(default_factory=FailureStreak)
    last_login_timestamp: datetime | None = None
    current_day: date | None = None
    decay_alpha: float = 0.95
    min_weight: float = 0.5
    ema_beta: float = 0.1
    new_records_since_training: int = 0
    successful_logins: int = 0
    # When set, empty categorical sets score 1.0 on the very first login.
    bootstrap_first_login: bool = False

    def __post_init__(self):
        if not 0.0 < self.decay_alpha <= 1.0:
            raise ValueError("decay_alpha must lie in (0, 1]")
        if not 0.0 < self.ema_beta <= 1.0:
            raise ValueError("ema_beta must lie in (0, 1]")
        if self.min_weight < 0:
            raise ValueError("min_weight must be non-negative")


def apply_daily_decay(profile: UserProfile, new_day: date) -> UserProfile:
    """Roll the profile forward to ``new_day``.

    Weights and bins are multiplied by ``alpha**k`` for ``k`` elapsed days,
    today's login count is folded into the history, and categorical items
    falling under the minimum weight are pruned. Calling again with the same
    day is a no-op.
    """
    if profile.current_day is None:
        profile.current_day = new_day
        for stats in profile.categorical.values():
            stats.last_update_day = new_day
        return profile
    if new_day < profile.current_day:
        raise ProfileError(
            f"clock regression: {new_day} is before last update day {profile.current_day}"
        )
    elapsed = (new_day - profile.current_day).days
    if elapsed == 0:
        return profile
    factor = profile.decay_alpha**elapsed
    for stats in profile.categorical.values():
        stats.decay(factor, profile.min_weight)
        stats.last_update_day = new_day
    profile.hour_of_day.bins *= factor
    profile.day_of_week.bins *= factor
    profile.login_counts.fold_today()
    profile.current_day = new_day
    return profile


def update_on_success(profile: UserProfile, record: LoginRecord) -> UserProfile:
    if not record.success:
        raise ProfileError("update_on_success called with a failed login")
    ts = record.timestamp
    if profile.last_login_timestamp is not None and ts < profile.last_login_timestamp:
        raise ProfileError(
            f"out-of-order record: {ts.isoformat()} precedes "
            f"{profile.last_login_timestamp.isoformat()}"
        )
    apply_daily_decay(profile, ts.date())

    for name, value in categorical_values(record).items():
        if value:
            profile.categorical[name].add(value)
    profile.hour_of_day.add(fractional_hour(ts))
    profile.day_of_week.add(ts.weekday())
    if record.rtt_ms is not None:
        profile.rtt.update(float(record.rtt_ms), profile.ema_beta)
    if profile.last_login_timestamp is not None:
        delta = (ts - profile.last_login_timestamp).total_seconds()
        profile.time_between.update(math.log(max(delta, 1.0)), profile.ema_beta)

    profile.login_counts.today_count += 1
    profile.failures.consecutive_failures = 0
    profile.new_records_since_training += 1
    profile.successful_logins += 1
    profile.last_login_timestamp = ts
    return profile


def update_on_failure(profile: UserProfile, record: LoginRecord) -> UserProfile:
    if record.success:
        raise ProfileError("update_on_failure called with a successful login")
    profile.failures.consecutive_failures += 1
    return profile


def update(profile: UserProfile, record: LoginRecord) -> UserProfile:
    if record.success:
        return update_on_success(profile, record)
    return update_on_failure(profile, record)


# -- serialization ---------------------------------------------------------


def _iso(value):
    return None if value is None else value.isoformat()


def profile_to_dict(profile: UserProfile) -> dict:
    return {
        "format": PROFILE_FORMAT,
        "version": PROFILE_VERSION,
        "user_id": profile.user_id,
        "categorical": {
            name: {
                "items": dict(sorted(stats.items.items())),
                "last_update_day": _iso(stats.last_update_day),
            }
            for name, stats in profile.categorical.items()
        },
        "hour_of_day": [float(w) for w in profile.hour_of_day.bins],
        "day_of_week": [float(w) for w in profile.day_of_week.bins],
        "rtt": _ema_dict(profile.rtt),
        "time_between": _ema_dict(profile.time_between),
        "login_counts": {
            "daily_counts": list(profile.login_counts.daily_counts),
            "today_count": profile.login_counts.today_count,
            "capacity": profile.login_counts.capacity,
        },
        "failures": {
            "consecutive_failures": profile.failures.consecutive_failures,
            "threshold_n": profile.failures.threshold_n,
        },
        "last_login_timestamp": _iso(profile.last_login_timestamp),
        "current_day": _iso(profile.current_day),
        "decay_alpha": profile.decay_alpha,
        "min_weight": profile.min_weight,
        "ema_beta": profile.ema_beta,
        "new_records_since_training": profile.new_records_since_training,
        "successful_logins": profile.successful_logins,
        "bootstrap_first_login": profile.bootstrap_first_login,
    }


def _ema_dict(state: EmaState) -> dict:
    return {
        "mean": state.mean,
        "variance_estimate": state.variance_estimate,
        "count": state.count,
    }


def profile_to_json(profile: UserProfile) -> str:
    """Deterministic, key-ordered JSON document for one user."""
    return json.dumps(profile_to_dict(profile), sort_keys=True, separators=(",", ":"))


def profile_from_dict(doc: dict) -> UserProfile:
    if doc.get("format") != PROFILE_FORMAT:
        raise ValueError("not a profile document")
    if doc.get("version") != PROFILE_VERSION:
        raise ValueError(f"unsupported profile version {doc.get('version')!r}")

    def day(s):
        return None if s is None else date.fromisoformat(s)

    counts = doc["login_counts"]
    return UserProfile(
        user_id=doc["user_id"],
        categorical={
            name: CategoricalStats(
                items={k: float(v) for k, v in body["items"].items()},
                last_update_day=day(body["last_update_day"]),
            )
            for name, body in doc["categorical"].items()
        },
        hour_of_day=CircularHistogram(24, np.array(doc["hour_of_day"], dtype=np.float64)),
        day_of_week=CircularHistogram(7, np.array(doc["day_of_week"], dtype=np.float64)),
        rtt=EmaState(**doc["rtt"]),
        time_between=EmaState(**doc["time_between"]),
        login_counts=LoginCountHistory(
            daily_counts=list(counts["daily_counts"]),
            today_count=counts["today_count"],
            capacity=counts["capacity"],
        ),
        failures=FailureStreak(**doc["failures"]),
        last_login_timestamp=(
            None
            if doc["last_login_timestamp"] is None
            else datetime.fromisoformat(doc["last_login_timestamp"])
        ),
        current_day=day(doc["current_day"]),
        decay_alpha=doc["decay_alpha"],
        min_weight=doc["min_weight"],
        ema_beta=doc["ema_beta"],
        new_records_since_training=doc["new_records_since_training"],
        successful_logins=doc["successful_logins"],
        bootstrap_first_login=doc["bootstrap_first_login"],
    )


def profile_from_json(text: str) -> UserProfile:
    return profile_from_dict(json.loads(text))
