"""Federated averaging: in-process rounds, wire protocol and socket transport."""

from .fedavg import (
    FedClient,
    FedConfig,
    InProcessClients,
    RoundMetrics,
    RoundUpdate,
    TrainingHistory,
    aggregate,
    client_rng,
    client_update,
    run_round,
    select_clients,
    train_centralized,
    train_federated,
)
from .protocol import Frame, MsgType, decode_frame, encode_frame, read_frame
from .transport import SocketClients, open_listener, run_client, run_config

__all__ = [
    "FedClient",
    "FedConfig",
    "InProcessClients",
    "RoundMetrics",
    "RoundUpdate",
    "TrainingHistory",
    "aggregate",
    "client_rng",
    "client_update",
    "run_round",
    "select_clients",
    "train_centralized",
    "train_federated",
    "Frame",
    "MsgType",
    "decode_frame",
    "encode_frame",
    "read_frame",
    "SocketClients",
    "open_listener",
    "run_client",
    "run_config",
]
