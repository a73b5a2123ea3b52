"""Run configuration: one YAML file, nested sections, dotted overrides.

``emit_config`` and ``parse_config`` are exact inverses for any valid
config. ``RunConfig.validate`` builds every module's own config object so
that the modules' preconditions are checked before anything runs.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path

import yaml

from frba.autoencoder import TrainConfig
from frba.data import ColumnMapping, LoadFilters
from frba.evaluation import ExperimentConfig
from frba.federation import SimulationConfig
from frba.profile import UserProfile
from frba.risk import AssetCriticality, SessionState

CONFIG_FORMAT = "frba-run-config"
CONFIG_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class TrainSection:
    batch_size: int = 8
    epochs: int = 5
    learning_rate: float = 0.15
    l2_lambda: float = 1e-4
    proximal_mu: float = 0.01
    dropout_rate: float = 0.1
    sample_cap: int = 500


@dataclass
class FederationSection:
    participation_fraction: float = 0.10
    max_iter: int = 80
    update_threshold: int = 50
    holdout_every: int = 10


@dataclass
class ThresholdSection:
    mad_factor: float = 1.5


@dataclass
class RiskSection:
    asset_criticality: int = 2
    f_max: int = 5
    h_max: int = 3


@dataclass
class ProfileSection:
    decay_alpha: float = 0.95
    min_weight: float = 0.5
    ema_beta: float = 0.1
    bootstrap_first_login: bool = False


@dataclass
class SyntheticSection:
    n_users: int = 25
    days: int = 200
    anomaly_rate: float = 0.05


@dataclass
class DataSection:
    # None means generate a synthetic log from the synthetic section
    path: str | None = None
    mapping: str | None = None
    delimiter: str = ","
    min_records: int = 200
    max_records: int | None = None
    max_users: int | None = None
    synthetic: SyntheticSection = field(default_factory=SyntheticSection)


@dataclass
class EvaluationSection:
    split_seed: int = 0
    test_fraction: float = 0.2
    calibration_fraction: float = 0.5
    local_finetune: bool = True
    alarm_level: int = 2
    if_trees: int = 100
    if_subsample: int = 256
    if_threshold: float = 0.6
    dbscan_eps: float = 1.0
    dbscan_min_pts: int = 5


@dataclass
class RunConfig:
    seed: int = 0
    workers: int = 1
    train: TrainSection = field(default_factory=TrainSection)
    federation: FederationSection = field(default_factory=FederationSection)
    thresholds: ThresholdSection = field(default_factory=ThresholdSection)
    risk: RiskSection = field(default_factory=RiskSection)
    profile: ProfileSection = field(default_factory=ProfileSection)
    data: DataSection = field(default_factory=DataSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)

    # -- conversion into module configs --

    def train_config(self) -> TrainConfig:
        t = self.train
        return TrainConfig(
            batch_size=t.batch_size,
            epochs=t.epochs,
            learning_rate=t.learning_rate,
            l2_lambda=t.l2_lambda,
            proximal_mu=t.proximal_mu,
            dropout_rate=t.dropout_rate,
            update_threshold=self.federation.update_threshold,
            sample_cap=t.sample_cap,
            rng_seed=self.seed,
        )

    def profile_kwargs(self) -> dict:
        return asdict(self.profile)

    def simulation_config(self) -> SimulationConfig:
        f = self.federation
        return SimulationConfig(
            train=self.train_config(),
            participation_fraction=f.participation_fraction,
            max_iter=f.max_iter,
            seed=self.seed,
            holdout_every=f.holdout_every,
            workers=self.workers,
            mad_factor=self.thresholds.mad_factor,
            profile=self.profile_kwargs(),
        )

    def experiment_config(self) -> ExperimentConfig:
        e = asdict(self.evaluation)
        e.pop("split_seed")
        return ExperimentConfig(simulation=self.simulation_config(), **e)

    def load_filters(self) -> LoadFilters:
        d = self.data
        return LoadFilters(min_records=d.min_records, max_records=d.max_records, max_users=d.max_users)

    def column_mapping(self) -> ColumnMapping:
        return ColumnMapping.from_file(self.data.mapping) if self.data.mapping else ColumnMapping.default()

    def validate(self) -> "RunConfig":
        try:
            if self.workers < 1:
                raise ValueError("workers must be >= 1")
            self.experiment_config()
            UserProfile("validation", **self.profile_kwargs())
            AssetCriticality(self.risk.asset_criticality)
            SessionState(f_max=self.risk.f_max, h_max=self.risk.h_max)
            s = self.data.synthetic
            if s.n_users < 1 or s.days < 1:
                raise ValueError("synthetic n_users and days must be >= 1")
            if not 0.0 <= s.anomaly_rate < 1.0:
                raise ValueError("synthetic anomaly_rate must lie in [0, 1)")
            if self.data.min_records < 1:
                raise ValueError("min_records must be >= 1")
            if len(self.data.delimiter) != 1:
                raise ValueError("delimiter must be a single character")
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc
        return self


def _to_plain(cfg: RunConfig) -> dict:
    return {"format": CONFIG_FORMAT, "version": CONFIG_VERSION, **asdict(cfg)}


def emit_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(_to_plain(cfg), sort_keys=False, default_flow_style=False)


def _build(cls, doc: dict, where: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where or 'config'} must be a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = set(doc) - set(known)
    if unknown:
        raise ConfigError(f"unknown keys in {where or 'config'}: {sorted(unknown)}")
    kwargs = {}
    defaults = cls()
    for name, value in doc.items():
        current = getattr(defaults, name)
        key = f"{where}.{name}" if where else name
        if is_dataclass(current):
            kwargs[name] = _build(type(current), value or {}, key)
        else:
            kwargs[name] = _coerce(value, current, key)
    return cls(**kwargs)


def _coerce(value, default, key: str):
    # defaults fix the expected type; None stays allowed where the default is None
    if value is None or default is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number")
        return float(value)
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{key} must be a string")
    return value


def parse_config(text: str) -> RunConfig:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    doc = dict(doc or {})
    fmt = doc.pop("format", CONFIG_FORMAT)
    version = doc.pop("version", CONFIG_VERSION)
    if fmt != CONFIG_FORMAT or version != CONFIG_VERSION:
        raise ConfigError(f"unsupported config format {fmt!r} version {version!r}")
    return _build(RunConfig, doc, "")


def load_config(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def apply_override(cfg: RunConfig, dotted: str, value) -> RunConfig:
    """Return a copy of ``cfg`` with ``a.b.c`` set to ``value`` (type-checked)."""
    head, _, rest = dotted.partition(".")
    names = {f.name for f in fields(cfg)}
    if head not in names:
        raise ConfigError(f"unknown config key {dotted!r}")
    current = getattr(cfg, head)
    if rest:
        if not is_dataclass(current):
            raise ConfigError(f"{head} is not a section")
        return replace(cfg, **{head: apply_override(current, rest, value)})
    if is_dataclass(current):
        raise ConfigError(f"{dotted} is a section, not a value")
    default = getattr(type(cfg)(), head)
    return replace(cfg, **{head: _coerce(value, default if default is not None else current, dotted)})


def parse_assignment(text: str) -> tuple[str, object]:
    """``key=value`` with the value read as a YAML scalar."""
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ConfigError(f"override must look like key=value, got {text!r}")
    try:
        return key.strip(), yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse value in {text!r}: {exc}") from exc
