"""Semi-synchronous federated rounds with sample-weighted aggregation.

Clients train locally once enough new successful logins have accumulated,
then submit weights, thresholds and their sample count. The server holds at
most one pending update per user and aggregates as soon as
``ceil(C * |U|)`` users are pending. With ``proximal_mu = 0`` the client
objective is plain FedAvg; otherwise it carries the FedProx proximal term.
"""

from __future__ import annotations

import json
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from frba.autoencoder import ModelWeights, TrainConfig, reconstruction_error, stack_vectors, train_local
from frba.data import LoginRecord, group_by_user
from frba.features import N_FEATURES, featurize_stream, manifest_hash
from frba.thresholds import MAD_FACTOR, MIN_SAMPLES, RiskThresholds, aggregate_thresholds, compute_thresholds


@dataclass
class ClientUpdate:
    user_id: str
    weights: ModelWeights
    thresholds: RiskThresholds | None
    sample_count: int
    round_submitted: int = 0
    base_round: int = 0  # server round of the global model training started from

    def __post_init__(self):
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")


@dataclass
class Broadcast:
    round: int
    weights: ModelWeights
    thresholds: RiskThresholds | None
    participants: list[str]
    sample_counts: list[int]
    staleness: list[int]


@dataclass
class ServerState:
    global_weights: ModelWeights
    total_users: int
    participation_fraction: float = 0.10
    max_iter: int = 80
    global_thresholds: RiskThresholds | None = None
    pending: dict[str, ClientUpdate] = field(default_factory=dict)
    round_counter: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def __post_init__(self):
        if self.total_users < 1:
            raise ValueError("total_users must be >= 1")
        if not 0.0 < self.participation_fraction <= 1.0:
            raise ValueError("participation_fraction must lie in (0, 1]")
        if self.max_iter < 0:
            raise ValueError("max_iter must be >= 0")

    @property
    def quorum(self) -> int:
        # round before ceil so that e.g. 0.1 * 20 does not become 3
        return max(1, math.ceil(round(self.participation_fraction * self.total_users, 9)))

    @property
    def finished(self) -> bool:
        return self.round_counter >= self.max_iter


def should_trigger_local_training(profile, T: int) -> bool:
    """``profile`` is anything carrying ``new_records_since_training``."""
    return profile.new_records_since_training >= T


def submit_update(server: ServerState, update: ClientUpdate) -> ServerState:
    if not update.weights.same_shape(server.global_weights):
        raise ValueError(f"update from {update.user_id!r} does not match the global model shape")
    with server._lock:
        server.pending[update.user_id] = replace(update, round_submitted=server.round_counter)
    return server


def weighted_average(models: list[ModelWeights], counts: list[int]) -> ModelWeights:
    """sum_u (n_u / N) * w_u, accumulated in the given order."""
    total = sum(counts)
    params = None
    for m, n in zip(models, counts):
        coef = n / total
        scaled = [coef * p for p in m.params()]
        params = scaled if params is None else [a + b for a, b in zip(params, scaled)]
    return models[0].with_params(params)


def try_aggregate(server: ServerState) -> Broadcast | None:
    """Aggregate pending updates if the quorum is met; otherwise do nothing."""
    with server._lock:
        if server.finished or len(server.pending) < server.quorum:
            return None
        ups = [server.pending[uid] for uid in sorted(server.pending)]
        counts = [u.sample_count for u in ups]
        new_w = weighted_average([u.weights for u in ups], counts)
        new_w.manifest_hash = server.global_weights.manifest_hash
        with_t = [(u.thresholds, u.sample_count) for u in ups if u.thresholds is not None]
        if with_t:
            server.global_thresholds = aggregate_thresholds(with_t)
        server.global_weights = new_w
        server.pending = {}
        server.round_counter += 1
        return Broadcast(
            round=server.round_counter,
            weights=new_w,
            thresholds=server.global_thresholds,
            participants=[u.user_id for u in ups],
            sample_counts=counts,
            staleness=[server.round_counter - 1 - u.base_round for u in ups],
        )


# -- simulation ----------------------------------------------------------------


@dataclass
class SimulationConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    participation_fraction: float = 0.10
    max_iter: int = 80
    seed: int = 0
    holdout_every: int = 10
    workers: int = 1
    mad_factor: float = MAD_FACTOR
    profile: dict = field(default_factory=dict)  # UserProfile keyword overrides

    def __post_init__(self):
        if self.holdout_every < 0 or self.workers < 1:
            raise ValueError("holdout_every must be >= 0 and workers >= 1")
        if self.mad_factor < 0:
            raise ValueError("mad_factor must be >= 0")
        if not 0.0 < self.participation_fraction <= 1.0:
            raise ValueError("participation_fraction must lie in (0, 1]")
        if self.max_iter < 0:
            raise ValueError("max_iter must be >= 0")


@dataclass
class ClientState:
    user_id: str
    index: int
    train_vectors: list[np.ndarray] = field(default_factory=list)
    new_records_since_training: int = 0
    global_weights: ModelWeights | None = None
    global_round: int = 0
    local_weights: ModelWeights | None = None
    thresholds: RiskThresholds | None = None
    n_trainings: int = 0


@dataclass
class RoundRecord:
    round: int
    global_mse: float
    participants: list[str]
    sample_counts: list[int]
    staleness: list[int]
    t_lower: float | None
    t_upper: float | None

    def to_dict(self) -> dict:
        return {
            "round": self.round,
            "global_mse": self.global_mse,
            "participants": self.participants,
            "sample_counts": self.sample_counts,
            "staleness": self.staleness,
            "t_lower": self.t_lower,
            "t_upper": self.t_upper,
        }


@dataclass
class SimulationReport:
    initial_mse: float
    rounds: list[RoundRecord]
    global_weights: ModelWeights
    global_thresholds: RiskThresholds | None
    clients: dict[str, ClientState] = field(default_factory=dict, repr=False)
    n_eval: int = 0
    exhausted: bool = False

    @property
    def mse_series(self) -> list[float]:
        return [r.global_mse for r in self.rounds]

    def to_jsonl(self) -> str:
        lines = [
            json.dumps(
                {"round": 0, "global_mse": self.initial_mse, "participants": [], "n_eval": self.n_eval},
                sort_keys=True,
            )
        ]
        lines += [json.dumps(r.to_dict(), sort_keys=True) for r in self.rounds]
        return "\n".join(lines) + "\n"

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(self.to_jsonl(), encoding="utf-8")
        return path


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def as_user_streams(users) -> dict[str, list[LoginRecord]]:
    if isinstance(users, Mapping):
        streams = {uid: list(recs) for uid, recs in users.items()}
    else:
        users = list(users)
        if users and isinstance(users[0], LoginRecord):
            streams = group_by_user(users)
        else:
            streams = {}
            for recs in users:
                recs = list(recs)
                if recs:
                    streams.setdefault(recs[0].user_id, []).extend(recs)
    streams = {uid: sorted(r, key=lambda x: x.timestamp) for uid, r in streams.items() if r}
    return dict(sorted(streams.items()))


def featurize_users(streams: Mapping[str, list[LoginRecord]], workers: int = 1, **profile_kwargs):
    """Per-user (record, vector) replays; threads do not change the result."""

    def one(item):
        return featurize_stream(item[1], **profile_kwargs)[0]

    items = list(streams.items())
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(one, items))
    else:
        results = [one(it) for it in items]
    return {uid: res for (uid, _), res in zip(items, results)}


def client_train(
    client: ClientState,
    cfg: SimulationConfig,
    server_round: int,
) -> ClientUpdate:
    """Retrain from the client's copy of the global model and package the update."""
    seed = derive_seed(cfg.seed, client.index, client.n_trainings)
    tcfg = replace(cfg.train, rng_seed=seed)
    start = client.global_weights
    weights, n_used = train_local(start, client.train_vectors, tcfg, global_weights=start)
    recent = stack_vectors(client.train_vectors[-n_used:])
    errs = reconstruction_error(weights, recent)
    thresholds = compute_thresholds(errs, cfg.mad_factor) if n_used >= MIN_SAMPLES else None
    client.local_weights = weights
    client.thresholds = thresholds
    client.n_trainings += 1
    client.new_records_since_training = 0
    return ClientUpdate(
        user_id=client.user_id,
        weights=weights,
        thresholds=thresholds,
        sample_count=n_used,
        round_submitted=server_round,
        base_round=client.global_round,
    )


def run_simulation(
    users,
    cfg: SimulationConfig | None = None,
    eval_vectors=None,
    initial_weights: ModelWeights | None = None,
) -> SimulationReport:
    """Replay all users' logins in global time order through the federation.

    ``users`` is a flat list of records, a list of per-user streams, or a
    mapping user_id -> records. The held-out slice is every
    ``holdout_every``-th successful login of each user unless
    ``eval_vectors`` is given.
    """
    cfg = cfg or SimulationConfig()
    streams = as_user_streams(users)
    if not streams:
        raise ValueError("run_simulation needs at least one non-empty user stream")
    featurized = featurize_users(streams, cfg.workers, **cfg.profile)

    clients = {uid: ClientState(uid, i) for i, uid in enumerate(streams)}
    timeline = []
    held_out = []
    for uid, pairs in featurized.items():
        k = 0
        for rec, vec in pairs:
            heldout = False
            if rec.success:
                k += 1
                if eval_vectors is None and cfg.holdout_every and k % cfg.holdout_every == 0:
                    heldout = True
                    held_out.append(vec.values)
            timeline.append((rec.timestamp, clients[uid].index, rec.success, heldout, vec.values))
    timeline.sort(key=lambda e: (e[0], e[1]))

    if eval_vectors is None:
        if not held_out:
            raise ValueError("no held-out records; pass eval_vectors or lower holdout_every")
        X_eval = np.vstack(held_out)
    else:
        X_eval = stack_vectors(eval_vectors)

    w0 = initial_weights or ModelWeights.init(
        N_FEATURES, seed=derive_seed(cfg.seed, 0x5EED), manifest_hash=manifest_hash()
    )
    server = ServerState(
        global_weights=w0,
        total_users=len(clients),
        participation_fraction=cfg.participation_fraction,
        max_iter=cfg.max_iter,
    )
    for c in clients.values():
        c.global_weights = w0

    by_index = list(clients.values())
    initial_mse = float(np.mean(reconstruction_error(w0, X_eval)))
    rounds: list[RoundRecord] = []
    T = cfg.train.update_threshold
    for _, idx, success, heldout, vec in timeline:
        if server.finished:
            break
        if not success:
            continue
        client = by_index[idx]
        if not heldout:
            client.train_vectors.append(vec)
        client.new_records_since_training += 1
        if not should_trigger_local_training(client, T) or not client.train_vectors:
            continue
        submit_update(server, client_train(client, cfg, server.round_counter))
        bc = try_aggregate(server)
        if bc is None:
            continue
        for c in by_index:
            c.global_weights = bc.weights
            c.global_round = bc.round
        rounds.append(
            RoundRecord(
                round=bc.round,
                global_mse=float(np.mean(reconstruction_error(bc.weights, X_eval))),
                participants=bc.participants,
                sample_counts=bc.sample_counts,
                staleness=bc.staleness,
                t_lower=None if bc.thresholds is None else bc.thresholds.t_lower,
                t_upper=None if bc.thresholds is None else bc.thresholds.t_upper,
            )
        )
    return SimulationReport(
        initial_mse=initial_mse,
        rounds=rounds,
        global_weights=server.global_weights,
        global_thresholds=server.global_thresholds,
        clients=clients,
        n_eval=int(X_eval.shape[0]),
        exhausted=not server.finished,
    )
