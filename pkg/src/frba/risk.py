"""Final 1-5 risk score from asset criticality, risk level and session streaks."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime

import numpy as np

from frba.autoencoder import ModelWeights, reconstruction_error
from frba.features import FeatureVector
from frba.thresholds import RiskThresholds, classify_risk_level

N_AC_LEVELS = 3
CRITICAL_SCORE = 5

# rows: asset criticality 1..3, columns: risk level 0..2
BASE_SCORE_GRID = (
    (1, 1, 2),
    (1, 2, 3),
    (2, 3, 4),
)


@dataclass(frozen=True)
class AssetCriticality:
    level: int = 2

    def __post_init__(self):
        if self.level not in (1, 2, 3):
            raise ValueError(f"asset criticality must be 1, 2 or 3, got {self.level!r}")


def _ac(ac: AssetCriticality | int) -> AssetCriticality:
    return ac if isinstance(ac, AssetCriticality) else AssetCriticality(int(ac))


@dataclass
class SessionState:
    login_feature_vector: FeatureVector | None = None
    consecutive_failed_logins: int = 0
    consecutive_high_risk_events: int = 0
    f_max: int = 5
    h_max: int = 3
    # |event - login| per feature for the most recent assessed event
    last_event_difference: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.f_max < 1 or self.h_max < 1:
            raise ValueError("f_max and h_max must be positive")
        if self.consecutive_failed_logins < 0 or self.consecutive_high_risk_events < 0:
            raise ValueError("counters must be non-negative")

    def record_auth_failure(self) -> None:
        """An authentication challenge failed inside the session."""
        self.consecutive_failed_logins += 1

    def record_auth_success(self) -> None:
        self.consecutive_failed_logins = 0


def base_score(ac: AssetCriticality | int, rl: int) -> int:
    ac = _ac(ac)
    if rl not in (0, 1, 2):
        raise ValueError(f"risk level must be 0, 1 or 2, got {rl!r}")
    return BASE_SCORE_GRID[ac.level - 1][rl]


def security_measure(state: SessionState) -> float:
    return state.consecutive_failed_logins / state.f_max + state.consecutive_high_risk_events / state.h_max


def dynamic_threshold(ac: AssetCriticality | int) -> float:
    ac = _ac(ac)
    return 1.0 + (N_AC_LEVELS - ac.level) / N_AC_LEVELS


def risk_score(ac: AssetCriticality | int, rl: int, state: SessionState) -> int:
    bs = base_score(ac, rl)
    if security_measure(state) > dynamic_threshold(ac):
        return CRITICAL_SCORE
    return bs


def start_session(
    login_vector: FeatureVector,
    prior_failures: int = 0,
    f_max: int = 5,
    h_max: int = 3,
) -> SessionState:
    """Session opened by a successful login preceded by ``prior_failures`` failures."""
    return SessionState(
        login_feature_vector=login_vector,
        consecutive_failed_logins=prior_failures,
        f_max=f_max,
        h_max=h_max,
    )


def assess_event(
    session: SessionState,
    event_features: FeatureVector,
    weights: ModelWeights,
    t: RiskThresholds,
) -> tuple[int, SessionState]:
    """Risk level of an in-session event, updating the high-risk streak."""
    if session.login_feature_vector is None:
        raise ValueError("session has no login context; start it with start_session")
    err = reconstruction_error(weights, event_features)
    rl = classify_risk_level(err, t)
    if rl == 2:
        session.consecutive_high_risk_events += 1
    else:
        session.consecutive_high_risk_events = 0
    session.last_event_difference = np.abs(
        np.asarray(event_features.values) - np.asarray(session.login_feature_vector.values)
    )
    return rl, session


@dataclass
class RiskDecision:
    timestamp: datetime
    user_id: str
    risk_level: int
    security_measure: float
    score: int
    reconstruction_error: float | None = None
    asset_criticality: int = 2

    def to_json(self) -> str:
        return json.dumps(
            {
                "timestamp": self.timestamp.isoformat(),
                "user_id": self.user_id,
                "risk_level": self.risk_level,
                "security_measure": self.security_measure,
                "score": self.score,
                "reconstruction_error": self.reconstruction_error,
                "asset_criticality": self.asset_criticality,
            },
            sort_keys=True,
        )


def decide(
    timestamp: datetime,
    user_id: str,
    ac: AssetCriticality | int,
    rl: int,
    state: SessionState,
    error: float | None = None,
) -> RiskDecision:
    ac = _ac(ac)
    return RiskDecision(
        timestamp=timestamp,
        user_id=user_id,
        risk_level=rl,
        security_measure=security_measure(state),
        score=risk_score(ac, rl, state),
        reconstruction_error=error,
        asset_criticality=ac.level,
    )
