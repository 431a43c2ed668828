"""Synchronous federated averaging.

Each round the server hands the same snapshot of the global parameters to
every participating client; clients run local minibatch epochs on their own
shard and return parameters plus sample count; the server replaces the
global model with the ``n_k / n`` weighted mean. Only parameters cross the
client boundary. Client optimizer state (Adam moments) stays on the client.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .. import neuralnet as nn
from ..datastore import ClientShard
from ..errors import InvalidArgument, RoundFailed

log = logging.getLogger(__name__)

# stream id for centralized shuffling and client selection; real clients use ids >= 0
_CENTRAL_STREAM = 2**31 - 1
_SELECT_STREAM = 2**31 - 2


@dataclass(frozen=True)
class FedConfig:
    K: int = 10
    E: int = 1
    B: int = 32
    learning_rate: float = 3e-3
    rounds: int = 500
    optimizer: str = "adam"
    seed: int = 0
    deterministic: bool = True
    participation: float = 1.0

    def __post_init__(self):
        if self.K < 1:
            raise InvalidArgument("K must be >= 1")
        if self.E < 0:
            raise InvalidArgument("E must be >= 0")
        if self.B < 1:
            raise InvalidArgument("B must be >= 1")
        if self.rounds < 1:
            raise InvalidArgument("rounds must be >= 1")
        if not 0 < self.participation <= 1:
            raise InvalidArgument("participation must lie in (0, 1]")
        if self.optimizer not in ("sgd", "adam"):
            raise InvalidArgument(f"unknown optimizer {self.optimizer!r}")

    def replace(self, **changes) -> "FedConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class RoundUpdate:
    client_id: int
    params_local: nn.ModelParams
    n_k: int
    local_train_loss: float = float("nan")


@dataclass(frozen=True)
class RoundMetrics:
    round: int
    train_loss: float
    val_loss: float
    wall_ms: float


@dataclass
class TrainingHistory:
    records: list[RoundMetrics] = field(default_factory=list)

    def append(self, rec: RoundMetrics) -> None:
        expected = len(self.records) + 1
        if rec.round != expected:
            raise InvalidArgument(f"history must be contiguous: expected round {expected}, got {rec.round}")
        self.records.append(rec)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def val_loss(self) -> np.ndarray:
        return np.array([r.val_loss for r in self.records])

    @property
    def train_loss(self) -> np.ndarray:
        return np.array([r.train_loss for r in self.records])

    def to_csv(self, path, include_timing: bool = True) -> None:
        lines = ["round,train_loss,val_loss,wall_ms"]
        for r in self.records:
            wall = r.wall_ms if include_timing else 0.0
            lines.append(f"{r.round},{r.train_loss!r},{r.val_loss!r},{wall:.3f}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path) -> "TrainingHistory":
        hist = cls()
        with open(path) as fh:
            next(fh)
            for line in fh:
                r, tl, vl, ms = line.strip().split(",")
                hist.append(RoundMetrics(int(r), float(tl), float(vl), float(ms)))
        return hist


def client_rng(seed: int, round_index: int, client_id: int) -> np.random.Generator:
    """Independent stream per (seed, round, client)."""
    return np.random.default_rng([seed, round_index, client_id])


def make_state(cfg: FedConfig, n_params: int) -> nn.OptimizerState:
    return nn.make_optimizer(cfg.optimizer, cfg.learning_rate, n_params)


def client_update(
    w_global: nn.ModelParams,
    shard: ClientShard,
    cfg: FedConfig,
    rng: np.random.Generator,
    spec,
    state: nn.OptimizerState | None = None,
) -> tuple[RoundUpdate, nn.OptimizerState]:
    """Local training of one client starting from the global parameters.

    Returns the update for the server and the client's optimizer state, which
    the caller keeps for the next round.
    """
    if shard.data.shape[0] == 0:
        raise InvalidArgument(f"client {shard.client_id} has an empty shard")
    if not np.isfinite(w_global.values).all():
        raise InvalidArgument("global parameters are not finite")
    if state is None:
        state = make_state(cfg, len(w_global))
    params = w_global.copy()
    params, state, loss, _ = nn.train_epochs(params, spec, state, shard.data, cfg.E, cfg.B, rng)
    return RoundUpdate(shard.client_id, params, shard.n_k, loss), state


def aggregate(updates: Sequence[RoundUpdate], deterministic: bool = True) -> nn.ModelParams:
    """Weighted mean ``sum_k (n_k / n) w_k``.

    Accumulated as a running mean, so identical inputs come back bit-exact.
    With ``deterministic`` the reduction runs in ascending client id.
    """
    if not updates:
        raise InvalidArgument("no client updates to aggregate")
    shapes = updates[0].params_local.shapes
    for u in updates:
        if u.params_local.shapes != shapes:
            raise InvalidArgument(f"client {u.client_id} sent a different parameter layout")
        if u.n_k < 0:
            raise InvalidArgument("negative sample count")
    if deterministic:
        updates = sorted(updates, key=lambda u: u.client_id)
    if sum(u.n_k for u in updates) <= 0:
        raise InvalidArgument("total sample count must be positive")

    mean = None
    seen = 0
    for u in updates:
        if u.n_k == 0:
            continue
        seen += u.n_k
        if mean is None:
            mean = u.params_local.values.copy()
        else:
            mean += (u.n_k / seen) * (u.params_local.values - mean)
    return nn.ModelParams(mean, shapes)


class FedClient:
    """A client holding its shard and persistent optimizer state."""

    def __init__(self, shard: ClientShard, cfg: FedConfig, spec):
        self.shard = shard
        self.cfg = cfg
        self.spec = spec
        self.state: nn.OptimizerState | None = None

    @property
    def client_id(self) -> int:
        return self.shard.client_id

    def update(self, w_global: nn.ModelParams, round_index: int) -> RoundUpdate:
        rng = client_rng(self.cfg.seed, round_index, self.client_id)
        upd, self.state = client_update(w_global, self.shard, self.cfg, rng, self.spec, self.state)
        return upd


class InProcessClients:
    """Runs every client in this process; optionally on a thread pool."""

    def __init__(self, shards: Sequence[ClientShard], cfg: FedConfig, spec, workers: int = 1):
        self.clients = {s.client_id: FedClient(s, cfg, spec) for s in shards}
        self.workers = workers

    @property
    def ids(self) -> list[int]:
        return sorted(self.clients)

    def run(self, w_t: nn.ModelParams, round_index: int, client_ids: Sequence[int]) -> list[RoundUpdate]:
        if self.workers <= 1:
            return [self.clients[k].update(w_t, round_index) for k in client_ids]
        with ThreadPoolExecutor(self.workers) as pool:
            futures = [pool.submit(self.clients[k].update, w_t, round_index) for k in client_ids]
            # completion order; aggregate() re-sorts in deterministic mode
            return [f.result() for f in as_completed(futures)]

    def round_done(self, round_index: int) -> None:
        pass

    def close(self) -> None:
        pass


def select_clients(ids: Sequence[int], cfg: FedConfig, round_index: int) -> list[int]:
    ids = sorted(ids)
    m = math.ceil(cfg.participation * len(ids))
    if m >= len(ids):
        return ids
    rng = client_rng(cfg.seed, round_index, _SELECT_STREAM)
    return sorted(rng.choice(ids, size=m, replace=False).tolist())


def run_round(
    w_t: nn.ModelParams,
    clients,
    cfg: FedConfig,
    round_index: int,
    spec,
    validation: np.ndarray,
    train: np.ndarray | None = None,
) -> tuple[nn.ModelParams, RoundMetrics]:
    """One synchronous round: broadcast, local updates, barrier, aggregate, evaluate.

    ``train_loss`` is the global objective at the new parameters evaluated on
    ``train`` when given, else the n_k-weighted mean of the clients' local
    minibatch losses.
    """
    t0 = time.perf_counter()
    selected = select_clients(clients.ids, cfg, round_index)
    snapshot = w_t.copy()
    snapshot.values.setflags(write=False)
    updates = clients.run(snapshot, round_index, selected)
    if len(updates) != len(selected):
        raise InvalidArgument(f"expected {len(selected)} client updates, got {len(updates)}")
    w_next = aggregate(updates, cfg.deterministic)
    if train is not None:
        train_loss = nn.evaluate_loss(w_next, spec, train)
    else:
        n = sum(u.n_k for u in updates)
        train_loss = float(sum(u.n_k / n * u.local_train_loss for u in sorted(updates, key=lambda u: u.client_id)))
    val_loss = nn.evaluate_loss(w_next, spec, validation) if len(validation) else float("nan")
    wall_ms = 1e3 * (time.perf_counter() - t0)
    return w_next, RoundMetrics(round_index, train_loss, val_loss, wall_ms)


def train_federated(
    cfg: FedConfig,
    shards: Sequence[ClientShard] | None,
    validation: np.ndarray,
    spec,
    *,
    train: np.ndarray | None = None,
    clients=None,
    init: nn.ModelParams | None = None,
    on_round: Callable[[nn.ModelParams, RoundMetrics], None] | None = None,
) -> tuple[nn.ModelParams, TrainingHistory]:
    """Run ``cfg.rounds`` rounds of FedAvg from ``init_params(spec, cfg.seed)``.

    ``clients`` may be any executor exposing ``ids``, ``run``, ``round_done``
    and ``close`` (the socket server provides one); by default the shards are
    trained in-process.
    """
    if clients is None:
        if shards is None:
            raise InvalidArgument("need shards or a client executor")
        if len(shards) != cfg.K:
            raise InvalidArgument(f"got {len(shards)} shards for K={cfg.K}")
        clients = InProcessClients(shards, cfg, spec)
    w = init.copy() if init is not None else nn.init_params(spec, cfg.seed)
    history = TrainingHistory()
    try:
        for t in range(1, cfg.rounds + 1):
            try:
                w, metrics = run_round(w, clients, cfg, t, spec, validation, train)
                clients.round_done(t)
            except RoundFailed:
                raise
            except Exception as exc:
                raise RoundFailed(t, exc) from exc
            history.append(metrics)
            log.debug("round %d train %.6g val %.6g", t, metrics.train_loss, metrics.val_loss)
            if on_round is not None:
                on_round(w, metrics)
    finally:
        clients.close()
    return w, history


def train_centralized(
    cfg: FedConfig,
    train: np.ndarray,
    validation: np.ndarray,
    spec,
    *,
    init: nn.ModelParams | None = None,
) -> tuple[nn.ModelParams, TrainingHistory]:
    """Plain minibatch training on pooled data; ``cfg.rounds`` epochs of batch ``cfg.B``."""
    train = np.asarray(train, dtype=np.float64)
    if train.shape[0] == 0:
        raise InvalidArgument("empty training set")
    w = init.copy() if init is not None else nn.init_params(spec, cfg.seed)
    state = make_state(cfg, len(w))
    history = TrainingHistory()
    for epoch in range(1, cfg.rounds + 1):
        t0 = time.perf_counter()
        rng = client_rng(cfg.seed, epoch, _CENTRAL_STREAM)
        w, state, _, _ = nn.train_epochs(w, spec, state, train, 1, cfg.B, rng)
        train_loss = nn.evaluate_loss(w, spec, train)
        val_loss = nn.evaluate_loss(w, spec, validation) if len(validation) else float("nan")
        history.append(RoundMetrics(epoch, train_loss, val_loss, 1e3 * (time.perf_counter() - t0)))
    return w, history
