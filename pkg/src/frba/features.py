"""Similarity and anomaly scorers, and assembly of the 16-slot feature vector.

Every scorer maps into [0, 1], with 1 meaning "looks like this user's past".
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

import numpy as np

from frba.data import LoginRecord, ip_range
from frba.profile import (
    CategoricalStats,
    CircularHistogram,
    EmaState,
    FailureStreak,
    LoginCountHistory,
    UserProfile,
    categorical_values,
    fractional_hour,
    fractional_weekday,
    update,
)

# Frozen, alphabetical. Changing this invalidates stored vectors and models.
FEATURE_IDS = (
    "asn",
    "browser",
    "city",
    "country",
    "day_of_week",
    "device_type",
    "hour_of_day",
    "ip_range",
    "is_benign_ip",
    "is_working_day",
    "logins_per_day",
    "os",
    "region",
    "rtt",
    "time_between_logins",
    "unsuccessful_logins",
)
N_FEATURES = len(FEATURE_IDS)


class FeatureError(ValueError):
    """A raw record field could not be interpreted."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field_name = field_name


def feature_manifest() -> str:
    lines = ["# frba feature order v1", *FEATURE_IDS]
    return "\n".join(lines) + "\n"


def manifest_hash() -> str:
    return hashlib.sha256(feature_manifest().encode()).hexdigest()


def write_feature_manifest(path: str | Path) -> Path:
    path = Path(path)
    path.write_text(feature_manifest(), encoding="utf-8")
    return path


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    feature_ids: tuple[str, ...] = FEATURE_IDS

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.shape != (len(self.feature_ids),):
            raise ValueError("values and feature_ids must have equal length")
        object.__setattr__(self, "values", vals)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.feature_ids, map(float, self.values)))

    def __len__(self) -> int:
        return len(self.feature_ids)


# -- scorers -----------------------------------------------------------------


def score_binary(is_benign: bool) -> float:
    return 1.0 if is_benign else 0.0


def score_categorical(stats: CategoricalStats, value: str) -> float:
    total = stats.total()
    if total <= 0.0:
        return 0.0
    return stats.items.get(value, 0.0) / total


def quartile(sorted_values, position: float) -> float:
    """Value at a 1-based, possibly fractional, position (linear interpolation)."""
    n = len(sorted_values)
    pos = min(max(position, 1.0), float(n))
    lo = int(math.floor(pos))
    frac = pos - lo
    if frac == 0.0 or lo >= n:
        return float(sorted_values[lo - 1])
    return float(sorted_values[lo - 1] + frac * (sorted_values[lo] - sorted_values[lo - 1]))


def iqr_upper_bound(counts) -> float:
    s = sorted(counts)
    n = len(s)
    q1 = quartile(s, (n + 1) / 4)
    q3 = quartile(s, 3 * (n + 1) / 4)
    return q3 + 1.5 * (q3 - q1)


def score_login_count(history: LoginCountHistory, todays_count: int) -> float:
    if todays_count < 0:
        raise ValueError("todays_count must be non-negative")
    if len(history.daily_counts) < 4:
        return 1.0
    return 1.0 if todays_count <= iqr_upper_bound(history.daily_counts) else 0.0


def _gaussian(z: float) -> float:
    return math.exp(-0.5 * z * z)


def score_linear_gaussian(state: EmaState, x: float) -> float:
    if not math.isfinite(x):
        raise ValueError("x must be finite")
    if state.count == 0:
        return 0.0
    return _gaussian((x - state.mean) / state.sigma)


def score_time_between(log_state: EmaState, delta_t_seconds: float) -> float:
    if delta_t_seconds < 0:
        raise ValueError("delta_t_seconds must be non-negative")
    if log_state.count == 0:
        return 0.0
    z = (math.log(max(delta_t_seconds, 1.0)) - log_state.mean) / log_state.sigma
    return _gaussian(z)


def score_unsuccessful(streak: FailureStreak) -> float:
    return max(0.0, 1.0 - streak.consecutive_failures / streak.threshold_n)


def bin_angles(n: int) -> np.ndarray:
    """Angles of bin centers: bin i spans [i, i+1) and peaks at i + 0.5."""
    return 2.0 * np.pi * (np.arange(n) + 0.5) / n


def score_cyclic(hist: CircularHistogram, x: float) -> float:
    w = hist.bins
    total = float(w.sum())
    if total <= 0.0:
        return 0.5
    theta_x = 2.0 * math.pi * x / hist.period
    c = float(np.dot(w, np.cos(theta_x - bin_angles(len(w))))) / total
    # rounding can push |c| a hair past 1
    return min(1.0, max(0.0, 0.5 * (c + 1.0)))


class ReputationTable:
    """Static IP reputation lookup standing in for a third-party service.

    Addresses or IP ranges listed as malicious are not benign; everything
    else is.
    """

    def __init__(self, malicious=()):
        self.malicious = set(malicious)

    def is_benign(self, ip: str) -> bool:
        return ip not in self.malicious and ip_range(ip) not in self.malicious


# -- assembly ------------------------------------------------------------------


def running_login_count(profile: UserProfile, ts: datetime) -> int:
    """Today's login count including the attempt at ``ts``."""
    if profile.current_day is not None and ts.date() == profile.current_day:
        return profile.login_counts.today_count + 1
    return 1


def effective_history(profile: UserProfile, ts: datetime) -> LoginCountHistory:
    """Daily-count history as it will look once ``ts``'s day has begun."""
    hist = profile.login_counts
    if profile.current_day is None or ts.date() == profile.current_day or hist.today_count == 0:
        return hist
    folded = (hist.daily_counts + [hist.today_count])[-hist.capacity :]
    return LoginCountHistory(daily_counts=folded, today_count=0, capacity=hist.capacity)


def _validate(record: LoginRecord) -> None:
    ts = record.timestamp
    if not isinstance(ts, datetime):
        raise FeatureError("timestamp", f"expected datetime, got {type(ts).__name__}")
    if ts.tzinfo is None or ts.utcoffset() is None:
        raise FeatureError("timestamp", "timestamp must be timezone-aware")
    if record.rtt_ms is not None:
        if not isinstance(record.rtt_ms, (int, np.integer)) or record.rtt_ms < 0:
            raise FeatureError("rtt_ms", f"invalid round-trip time {record.rtt_ms!r}")
    if record.asn is not None and not isinstance(record.asn, (int, np.integer)):
        raise FeatureError("asn", f"invalid ASN {record.asn!r}")


def build_feature_vector(
    profile: UserProfile,
    record: LoginRecord,
    is_benign_ip: bool | None = None,
) -> FeatureVector:
    """Score ``record`` against ``profile`` (which is not modified).

    ``is_benign_ip`` overrides the reputation verdict; by default it is the
    negation of the record's attack-IP flag.
    """
    _validate(record)
    if record.user_id != profile.user_id:
        raise FeatureError("user_id", f"record for {record.user_id!r} scored against {profile.user_id!r}")
    ts = record.timestamp
    out: dict[str, float] = {}

    bootstrap = profile.bootstrap_first_login and profile.successful_logins == 0
    for name, value in categorical_values(record).items():
        stats = profile.categorical[name]
        if not value:
            out[name] = 0.0
        elif bootstrap and not stats.items:
            out[name] = 1.0
        else:
            out[name] = score_categorical(stats, value)

    out["hour_of_day"] = score_cyclic(profile.hour_of_day, fractional_hour(ts))
    out["day_of_week"] = score_cyclic(profile.day_of_week, fractional_weekday(ts))
    out["logins_per_day"] = score_login_count(
        effective_history(profile, ts), running_login_count(profile, ts)
    )
    out["rtt"] = 0.0 if record.rtt_ms is None else score_linear_gaussian(profile.rtt, float(record.rtt_ms))
    if profile.last_login_timestamp is None:
        out["time_between_logins"] = 0.0
    else:
        delta = max(0.0, (ts - profile.last_login_timestamp).total_seconds())
        out["time_between_logins"] = score_time_between(profile.time_between, delta)
    out["unsuccessful_logins"] = score_unsuccessful(profile.failures)
    benign = (not record.is_attack_ip) if is_benign_ip is None else is_benign_ip
    out["is_benign_ip"] = score_binary(benign)

    assert set(out) == set(FEATURE_IDS), set(FEATURE_IDS) ^ set(out)
    return FeatureVector(np.array([out[k] for k in FEATURE_IDS]))


def featurize_stream(
    records,
    profile: UserProfile | None = None,
    **profile_kwargs,
) -> tuple[list[tuple[LoginRecord, FeatureVector]], UserProfile]:
    """Replay one user's time-ordered records: score each, then update.

    Returns (record, vector) pairs for every record and the final profile.
    """
    records = list(records)
    if profile is None:
        if not records:
            raise ValueError("empty stream and no profile")
        profile = UserProfile(records[0].user_id, **profile_kwargs)
    pairs = []
    for rec in records:
        pairs.append((rec, build_feature_vector(profile, rec)))
        update(profile, rec)
    return pairs, profile

