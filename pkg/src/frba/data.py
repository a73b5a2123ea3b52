"""Login records: dataset loading and synthetic stream generation."""

from __future__ import annotations

import csv
import ipaddress
import logging
from collections import defaultdict
from dataclasses import dataclass, field, fields, replace
from datetime import datetime, timedelta, timezone
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np
import yaml

log = logging.getLogger(__name__)


def ip_range(ip: str) -> str:
    """Network prefix used as the IP-range category.

    IPv4 keeps the first three octets (``8.8.8.*``); IPv6 keeps the /48.
    Unparseable input yields ``''``.
    """
    try:
        addr = ipaddress.ip_address(ip.strip())
    except (ValueError, AttributeError):
        return ""
    if addr.version == 4:
        a, b, c, _ = str(addr).split(".")
        return f"{a}.{b}.{c}.*"
    net = ipaddress.ip_network(f"{addr}/48", strict=False)
    return str(net)


@dataclass(frozen=True)
class LoginRecord:
    user_id: str
    timestamp: datetime
    ip: str = ""
    asn: int | None = None
    country: str = ""
    region: str = ""
    city: str = ""
    os_name_version: str = ""
    browser_name_version: str = ""
    device_type: str = ""
    rtt_ms: int | None = None
    success: bool = True
    is_attack_ip: bool = False
    is_account_takeover: bool = False
    ip_range: str = ""

    def __post_init__(self):
        if not self.ip_range and self.ip:
            object.__setattr__(self, "ip_range", ip_range(self.ip))
        if self.rtt_ms is not None and self.rtt_ms < 0:
            raise ValueError(f"rtt_ms must be non-negative, got {self.rtt_ms}")

    @property
    def is_anomaly(self) -> bool:
        return self.is_attack_ip or self.is_account_takeover


# -- loading -----------------------------------------------------------------

REQUIRED_FIELDS = ("user_id", "timestamp", "ip", "success")
OPTIONAL_FIELDS = (
    "asn",
    "country",
    "region",
    "city",
    "os_name_version",
    "browser_name_version",
    "device_type",
    "rtt_ms",
    "is_attack_ip",
    "is_account_takeover",
)


class DataError(Exception):
    """Unreadable input or a mapping that does not match the file's header."""


@dataclass
class ColumnMapping:
    """LoginRecord field name -> source column name."""

    columns: dict[str, str]

    def __post_init__(self):
        missing = [f for f in REQUIRED_FIELDS if f not in self.columns]
        if missing:
            raise DataError(f"column mapping lacks required fields: {missing}")
        unknown = set(self.columns) - set(REQUIRED_FIELDS) - set(OPTIONAL_FIELDS)
        if unknown:
            raise DataError(f"column mapping has unknown fields: {sorted(unknown)}")

    @classmethod
    def from_file(cls, path: str | Path) -> "ColumnMapping":
        with open(path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
        return cls(dict(doc["columns"]))

    @classmethod
    def default(cls) -> "ColumnMapping":
        """Mapping for the public RBA login dataset's header."""
        text = resources.files("frba.resources").joinpath("rba_dataset_mapping.yaml").read_text()
        return cls(dict(yaml.safe_load(text)["columns"]))


@dataclass
class LoadFilters:
    min_records: int = 200
    max_records: int | None = None
    critical_fields: tuple[str, ...] = ("city", "region")
    max_empty_fraction: float = 0.2
    max_failure_fraction: float = 0.5
    max_users: int | None = None


@dataclass
class Dataset:
    records: list[LoginRecord]
    skipped_rows: int = 0
    excluded_users: dict[str, str] = field(default_factory=dict)

    def __iter__(self) -> Iterator[LoginRecord]:
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)

    def by_user(self) -> dict[str, list[LoginRecord]]:
        return group_by_user(self.records)


def group_by_user(records: Iterable[LoginRecord]) -> dict[str, list[LoginRecord]]:
    out: dict[str, list[LoginRecord]] = defaultdict(list)
    for r in records:
        out[r.user_id].append(r)
    return dict(out)


_TRUE = {"true", "1", "yes", "t", "y"}
_FALSE = {"false", "0", "no", "f", "n", ""}


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in _TRUE:
        return True
    if v in _FALSE:
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_timestamp(s: str, tz: timezone) -> datetime:
    ts = datetime.fromisoformat(s.strip())
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=tz)
    return ts


def _parse_optional_int(s: str) -> int | None:
    s = s.strip()
    if not s:
        return None
    return int(float(s))


def parse_row(row: dict[str, str], mapping: ColumnMapping, tz: timezone = timezone.utc) -> LoginRecord:
    cols = mapping.columns

    def get(name: str) -> str:
        col = cols.get(name)
        return "" if col is None else (row.get(col) or "")

    return LoginRecord(
        user_id=get("user_id").strip(),
        timestamp=_parse_timestamp(get("timestamp"), tz),
        ip=get("ip").strip(),
        asn=_parse_optional_int(get("asn")),
        country=get("country").strip(),
        region=get("region").strip(),
        city=get("city").strip(),
        os_name_version=get("os_name_version").strip(),
        browser_name_version=get("browser_name_version").strip(),
        device_type=get("device_type").strip(),
        rtt_ms=_parse_optional_int(get("rtt_ms")),
        success=_parse_bool(get("success")),
        is_attack_ip=_parse_bool(get("is_attack_ip")),
        is_account_takeover=_parse_bool(get("is_account_takeover")),
    )


def load_dataset(
    path: str | Path,
    mapping: ColumnMapping | None = None,
    filters: LoadFilters | None = None,
    delimiter: str = ",",
    tz: timezone = timezone.utc,
) -> Dataset:
    """Read a delimited login log, skip bad rows, and apply per-user filters.

    Records are returned sorted by timestamp (stable, so per-user order of
    equal timestamps follows the file).
    """
    mapping = mapping or ColumnMapping.default()
    filters = filters or LoadFilters()
    path = Path(path)
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc

    per_user: dict[str, list[LoginRecord]] = defaultdict(list)
    skipped = 0
    with fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        header = reader.fieldnames or []
        absent = [c for c in mapping.columns.values() if c not in header]
        if absent:
            raise DataError(f"mapped columns missing from {path.name}: {absent}")
        for row in reader:
            try:
                rec = parse_row(row, mapping, tz)
            except (ValueError, TypeError):
                skipped += 1
                continue
            if not rec.user_id:
                skipped += 1
                continue
            per_user[rec.user_id].append(rec)
    if skipped:
        log.warning("skipped %d unparseable rows in %s", skipped, path)

    kept: list[LoginRecord] = []
    excluded: dict[str, str] = {}
    n_kept_users = 0
    for uid in sorted(per_user, key=lambda u: (-len(per_user[u]), u)):
        recs = per_user[uid]
        reason = _exclusion_reason(recs, filters)
        if reason is None and filters.max_users is not None and n_kept_users >= filters.max_users:
            reason = "max_users"
        if reason:
            excluded[uid] = reason
            continue
        n_kept_users += 1
        kept.extend(recs)
    kept.sort(key=lambda r: r.timestamp)
    return Dataset(kept, skipped_rows=skipped, excluded_users=excluded)


def _exclusion_reason(recs: list[LoginRecord], f: LoadFilters) -> str | None:
    n = len(recs)
    if n < f.min_records:
        return "too_few_records"
    if f.max_records is not None and n > f.max_records:
        return "too_many_records"
    for name in f.critical_fields:
        empty = sum(1 for r in recs if not getattr(r, name))
        if empty / n > f.max_empty_fraction:
            return f"empty_{name}"
    failed = sum(1 for r in recs if not r.success)
    if failed / n > f.max_failure_fraction:
        return "mostly_failed"
    return None


def write_csv(
    records: Iterable[LoginRecord],
    path: str | Path,
    mapping: ColumnMapping | None = None,
    delimiter: str = ",",
) -> int:
    """Write records in the mapped column layout; returns the row count."""
    mapping = mapping or ColumnMapping.default()
    cols = mapping.columns
    names = [f.name for f in fields(LoginRecord) if f.name in cols]
    n = 0
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow([cols[name] for name in names])
        for r in records:
            row = []
            for name in names:
                v = getattr(r, name)
                if name == "timestamp":
                    v = v.isoformat()
                elif v is None:
                    v = ""
                row.append(v)
            w.writerow(row)
            n += 1
    return n


# -- synthetic generation ------------------------------------------------------

_COUNTRIES = [
    ("CA", "Quebec", "Montreal"),
    ("CA", "Ontario", "Ottawa"),
    ("US", "New York", "New York"),
    ("US", "California", "San Jose"),
    ("DE", "Bavaria", "Munich"),
    ("FR", "Ile-de-France", "Paris"),
    ("JP", "Tokyo", "Tokyo"),
    ("BR", "Sao Paulo", "Sao Paulo"),
    ("IN", "Karnataka", "Bengaluru"),
    ("GB", "England", "London"),
]
_FOREIGN = [
    ("RU", "Moscow", "Moscow"),
    ("CN", "Guangdong", "Shenzhen"),
    ("NG", "Lagos", "Lagos"),
    ("VN", "Hanoi", "Hanoi"),
    ("RO", "Bucharest", "Bucharest"),
    ("KP", "Pyongyang", "Pyongyang"),
]
_DEVICES = [
    ("Windows 10", "Chrome 120.0.6099", "desktop"),
    ("Windows 11", "Edge 121.0.2277", "desktop"),
    ("Mac OS X 14.2", "Safari 17.2", "desktop"),
    ("iOS 17.2", "Mobile Safari 17.2", "mobile"),
    ("Android 14", "Chrome Mobile 120.0", "mobile"),
    ("iPadOS 17.1", "Mobile Safari 17.1", "tablet"),
    ("Ubuntu 22.04", "Firefox 121.0", "desktop"),
]
_ATTACK_DEVICES = [
    ("Linux", "Python Requests 2.31", "bot"),
    ("Windows 7", "Opera 58.2.2878", "desktop"),
    ("Android 5.1", "Android Browser 4.0", "mobile"),
    ("Chrome OS 15236", "Chrome 98.0", "desktop"),
]

SYNTHETIC_EPOCH = datetime(2024, 1, 1, tzinfo=timezone.utc)  # a Monday


@dataclass
class Persona:
    """Stable behavior a synthetic user draws normal logins from."""

    user_id: str
    home: tuple[str, str, str]
    asn: int
    ip_prefix: str  # three octets, e.g. "10.1.2"
    devices: list[tuple[str, str, str]]
    device_probs: list[float]
    hour_peaks: list[tuple[float, float]]  # (mean hour, sd)
    peak_probs: list[float]
    weekday_rate: float  # expected logins per working day
    weekend_rate: float
    rtt_mean: float
    rtt_sd: float
    failure_rate: float = 0.03


def make_persona(user_id: str, rng: np.random.Generator) -> Persona:
    home = _COUNTRIES[rng.integers(len(_COUNTRIES))]
    n_dev = int(rng.integers(1, 3))
    dev_idx = rng.choice(len(_DEVICES), size=n_dev, replace=False)
    devices = [_DEVICES[i] for i in dev_idx]
    device_probs = [1.0] if n_dev == 1 else [0.8, 0.2]
    n_peaks = int(rng.integers(1, 3))
    if n_peaks == 1:
        peaks = [(float(rng.uniform(8, 20)), float(rng.uniform(0.7, 1.5)))]
        peak_probs = [1.0]
    else:
        morning = float(rng.uniform(7, 11))
        evening = float(rng.uniform(17, 22))
        peaks = [(morning, float(rng.uniform(0.6, 1.2))), (evening, float(rng.uniform(0.6, 1.2)))]
        peak_probs = [0.6, 0.4]
    return Persona(
        user_id=user_id,
        home=home,
        asn=int(rng.integers(1000, 60000)),
        ip_prefix=f"{rng.integers(11, 223)}.{rng.integers(0, 256)}.{rng.integers(0, 256)}",
        devices=devices,
        device_probs=device_probs,
        hour_peaks=peaks,
        peak_probs=peak_probs,
        weekday_rate=float(rng.uniform(2.5, 5.0)),
        weekend_rate=float(rng.uniform(0.5, 2.0)),
        rtt_mean=float(rng.uniform(30, 400)),
        rtt_sd=float(rng.uniform(3, 20)),
    )


def _normal_login(p: Persona, ts: datetime, rng: np.random.Generator) -> LoginRecord:
    dev = p.devices[rng.choice(len(p.devices), p=p.device_probs)]
    return LoginRecord(
        user_id=p.user_id,
        timestamp=ts,
        ip=f"{p.ip_prefix}.{rng.integers(1, 255)}",
        asn=p.asn,
        country=p.home[0],
        region=p.home[1],
        city=p.home[2],
        os_name_version=dev[0],
        browser_name_version=dev[1],
        device_type=dev[2],
        rtt_ms=int(max(1.0, rng.normal(p.rtt_mean, p.rtt_sd))),
        success=True,
    )


def _anomalous_login(p: Persona, day_start: datetime, rng: np.random.Generator) -> LoginRecord:
    geo = _FOREIGN[rng.integers(len(_FOREIGN))]
    dev = _ATTACK_DEVICES[rng.integers(len(_ATTACK_DEVICES))]
    peak = p.hour_peaks[0][0]
    hour = (peak + 12.0 + rng.uniform(-2, 2)) % 24.0
    ts = day_start + timedelta(hours=hour)
    return LoginRecord(
        user_id=p.user_id,
        timestamp=ts,
        ip=f"{rng.integers(11, 223)}.{rng.integers(0, 256)}.{rng.integers(0, 256)}.{rng.integers(1, 255)}",
        asn=int(rng.integers(60000, 65000)),
        country=geo[0],
        region=geo[1],
        city=geo[2],
        os_name_version=dev[0],
        browser_name_version=dev[1],
        device_type=dev[2],
        rtt_ms=int(p.rtt_mean * rng.uniform(3, 6)),
        success=True,
        is_account_takeover=True,
    )


def generate_user_stream(
    persona: Persona,
    days: int,
    anomaly_rate: float,
    rng: np.random.Generator,
    start: datetime = SYNTHETIC_EPOCH,
) -> list[LoginRecord]:
    """Simulate ``days`` days of logins for one persona, time-ordered."""
    out: list[LoginRecord] = []
    for d in range(days):
        day_start = start + timedelta(days=d)
        rate = persona.weekday_rate if day_start.isoweekday() <= 5 else persona.weekend_rate
        events: list[LoginRecord] = []
        for _ in range(int(rng.poisson(rate))):
            if rng.random() < anomaly_rate:
                events.append(_anomalous_login(persona, day_start, rng))
                continue
            k = rng.choice(len(persona.hour_peaks), p=persona.peak_probs)
            mu, sd = persona.hour_peaks[k]
            hour = float(np.clip(rng.normal(mu, sd), 0.0, 23.999))
            ts = day_start + timedelta(hours=hour)
            rec = _normal_login(persona, ts, rng)
            if rng.random() < persona.failure_rate:
                n_fail = int(rng.integers(1, 3))
                for j in range(n_fail, 0, -1):
                    events.append(
                        replace(rec, timestamp=ts - timedelta(seconds=20 * j), success=False)
                    )
            events.append(rec)
        events.sort(key=lambda r: r.timestamp)
        out.extend(events)
    return out


def generate_synthetic(
    n_users: int,
    days: int,
    anomaly_rate: float,
    seed: int,
) -> list[LoginRecord]:
    """Deterministic multi-user login log with ground-truth anomaly flags.

    Anomalous logins change geo, ASN, IP range, device and hour together and
    carry ``is_account_takeover=True``. Output is sorted by timestamp.
    """
    if n_users < 1:
        raise ValueError("n_users must be >= 1")
    if not 0.0 <= anomaly_rate < 1.0:
        raise ValueError("anomaly_rate must lie in [0, 1)")
    root = np.random.SeedSequence(seed)
    records: list[LoginRecord] = []
    for i, child in enumerate(root.spawn(n_users)):
        rng = np.random.default_rng(child)
        persona = make_persona(f"user{i:04d}", rng)
        records.extend(generate_user_stream(persona, days, anomaly_rate, rng))
    records.sort(key=lambda r: (r.timestamp, r.user_id))
    return records
