"""TCP transport for FedAvg: server-side client executor and the client loop.

Session: each client connects and sends HELLO carrying its shard index as
``client_id``; the server answers HELLO with a JSON run configuration. Per
round the server sends GLOBAL_PARAMS to every selected client, collects one
CLIENT_UPDATE from each (ascending id), aggregates, then broadcasts
ROUND_DONE. SHUTDOWN ends the session. Frames carrying a round other than
the current one are logged and dropped.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import socket
import time
from typing import Sequence

from .. import neuralnet as nn
from ..datastore import DatasetSplits, client_shards, load_dataset
from ..errors import InvalidArgument, ProtocolError, StaleRoundError
from .fedavg import FedClient, FedConfig, RoundUpdate
from .protocol import (
    Frame,
    MsgType,
    decode_params_payload,
    encode_params_payload,
    expect_round,
    read_frame,
    send_frame,
)

log = logging.getLogger(__name__)


def parse_address(addr: str) -> tuple[str, int]:
    host, sep, port = addr.rpartition(":")
    if not sep:
        raise InvalidArgument(f"address {addr!r} must look like host:port")
    return host or "127.0.0.1", int(port)


def open_listener(addr: str) -> socket.socket:
    host, port = parse_address(addr)
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    sock.bind((host, port))
    sock.listen()
    return sock


def run_config(cfg: FedConfig, spec: nn.ArchitectureSpec, scheme: str) -> dict:
    return {"fed": cfg.to_dict(), "arch": dataclasses.asdict(spec), "scheme": scheme}


class SocketClients:
    """Server view of K remote clients; drop-in for ``InProcessClients``."""

    def __init__(self, listener: socket.socket, n_clients: int, config: dict, timeout: float | None = 600.0):
        self.conns: dict[int, socket.socket] = {}
        self.discarded = 0
        hello = json.dumps(config, sort_keys=True).encode()
        listener.settimeout(timeout)
        while len(self.conns) < n_clients:
            conn, peer = listener.accept()
            conn.settimeout(timeout)
            try:
                frame = read_frame(conn)
                if frame.msg_type != MsgType.HELLO:
                    raise ProtocolError(f"expected HELLO, got {frame.msg_type.name}")
                cid = frame.client_id
                if cid >= n_clients or cid in self.conns:
                    send_frame(conn, Frame(MsgType.ERROR, 0, cid, f"client id {cid} unavailable".encode()))
                    raise ProtocolError(f"rejected client id {cid}")
            except (ProtocolError, OSError) as exc:
                log.warning("dropping connection from %s: %s", peer, exc)
                conn.close()
                continue
            send_frame(conn, Frame(MsgType.HELLO, 0, cid, hello))
            self.conns[cid] = conn
            log.info("client %d connected from %s", cid, peer)

    @property
    def ids(self) -> list[int]:
        return sorted(self.conns)

    def run(self, w_t: nn.ModelParams, round_index: int, client_ids: Sequence[int]) -> list[RoundUpdate]:
        payload = encode_params_payload(w_t, 0)
        for k in client_ids:
            send_frame(self.conns[k], Frame(MsgType.GLOBAL_PARAMS, round_index, k, payload))
        return [self._receive_update(k, round_index) for k in client_ids]

    def _receive_update(self, k: int, round_index: int) -> RoundUpdate:
        conn = self.conns[k]
        try:
            while True:
                frame = read_frame(conn)
                if frame.msg_type == MsgType.ERROR:
                    raise ProtocolError(f"client {k} failed: {frame.payload.decode(errors='replace')}")
                try:
                    expect_round(frame, round_index)
                except StaleRoundError as exc:
                    self.discarded += 1
                    log.warning("client %d: %s; frame discarded", k, exc)
                    continue
                if frame.msg_type != MsgType.CLIENT_UPDATE:
                    self.discarded += 1
                    log.warning("client %d: unexpected %s in round %d; discarded", k, frame.msg_type.name, round_index)
                    continue
                if frame.client_id != k:
                    raise ProtocolError(f"connection of client {k} sent an update for client {frame.client_id}")
                n_k, params = decode_params_payload(frame.payload)
                return RoundUpdate(k, params, n_k)
        except ProtocolError:
            conn.close()
            del self.conns[k]
            raise

    def round_done(self, round_index: int) -> None:
        for k, conn in self.conns.items():
            send_frame(conn, Frame(MsgType.ROUND_DONE, round_index, k))

    def close(self) -> None:
        for k, conn in list(self.conns.items()):
            try:
                send_frame(conn, Frame(MsgType.SHUTDOWN, 0, k))
            except OSError:
                pass
            conn.close()
        self.conns.clear()


def connect(addr: str, retries: int = 100, delay: float = 0.1, timeout: float | None = 600.0) -> socket.socket:
    host, port = parse_address(addr)
    for attempt in range(retries):
        try:
            sock = socket.create_connection((host, port), timeout=timeout)
            return sock
        except OSError:
            if attempt == retries - 1:
                raise
            time.sleep(delay)
    raise AssertionError("unreachable")


def run_client(addr: str, shard_id: int, dataset, timeout: float | None = 600.0) -> int:
    """Serve one shard until SHUTDOWN; returns the number of rounds trained.

    ``dataset`` is a KSDS path or loaded ``DatasetSplits``. The run
    configuration (K, E, B, optimizer, partition scheme) comes from the server.
    """
    splits = dataset if isinstance(dataset, DatasetSplits) else load_dataset(dataset)
    sock = connect(addr, timeout=timeout)
    rounds = 0
    try:
        send_frame(sock, Frame(MsgType.HELLO, 0, shard_id))
        reply = read_frame(sock)
        if reply.msg_type != MsgType.HELLO:
            raise ProtocolError(f"server refused: {reply.payload.decode(errors='replace')}")
        config = json.loads(reply.payload)
        cfg = FedConfig(**config["fed"])
        spec = nn.ArchitectureSpec(**config["arch"])
        shard = client_shards(splits, cfg.K, config["scheme"], cfg.seed)[shard_id]
        client = FedClient(shard, cfg, spec)
        while True:
            frame = read_frame(sock)
            if frame.msg_type == MsgType.GLOBAL_PARAMS:
                try:
                    _, w = decode_params_payload(frame.payload)
                    upd = client.update(w, frame.round)
                except Exception as exc:
                    send_frame(sock, Frame(MsgType.ERROR, frame.round, shard_id, str(exc).encode()))
                    raise
                send_frame(
                    sock,
                    Frame(MsgType.CLIENT_UPDATE, frame.round, shard_id, encode_params_payload(upd.params_local, upd.n_k)),
                )
                rounds += 1
            elif frame.msg_type == MsgType.ROUND_DONE:
                continue
            elif frame.msg_type == MsgType.SHUTDOWN:
                return rounds
            elif frame.msg_type == MsgType.ERROR:
                raise ProtocolError(f"server error: {frame.payload.decode(errors='replace')}")
            else:
                log.warning("ignoring unexpected %s", frame.msg_type.name)
    finally:
        sock.close()
