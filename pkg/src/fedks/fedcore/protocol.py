"""Framing for parameter exchange between the FedAvg server and its clients.

Frame (little-endian)::

    magic "FEDF" | version u16 | msg_type u8 | round u32 | client_id u32 |
    payload_len u64 | payload | CRC32 u32 over all preceding frame bytes

GLOBAL_PARAMS / CLIENT_UPDATE payloads are ``n_k u64`` followed by a
checkpoint-format parameter block (n_k is 0 for GLOBAL_PARAMS).
"""

from __future__ import annotations

import enum
import socket
import struct
import zlib
from dataclasses import dataclass

from .. import neuralnet as nn
from ..errors import FormatError, ProtocolError, StaleRoundError

MAGIC = b"FEDF"
VERSION = 1
HEADER = struct.Struct("<4sHBIIQ")
TRAILER = struct.Struct("<I")
_NK = struct.Struct("<Q")
MAX_PAYLOAD = 1 << 30


class MsgType(enum.IntEnum):
    HELLO = 0
    GLOBAL_PARAMS = 1
    CLIENT_UPDATE = 2
    ROUND_DONE = 3
    SHUTDOWN = 4
    ERROR = 5


@dataclass(frozen=True)
class Frame:
    msg_type: MsgType
    round: int
    client_id: int
    payload: bytes = b""


def encode_frame(frame: Frame) -> bytes:
    head = HEADER.pack(MAGIC, VERSION, int(frame.msg_type), frame.round, frame.client_id, len(frame.payload))
    body = head + frame.payload
    return body + TRAILER.pack(zlib.crc32(body))


def _parse_header(head: bytes) -> tuple[MsgType, int, int, int]:
    magic, version, msg_type, rnd, client_id, payload_len = HEADER.unpack(head)
    if magic != MAGIC:
        raise ProtocolError(f"bad frame magic {magic!r} at offset 0")
    if version != VERSION:
        raise ProtocolError(f"unsupported protocol version {version}")
    try:
        kind = MsgType(msg_type)
    except ValueError as exc:
        raise ProtocolError(f"unknown message type {msg_type}") from exc
    if payload_len > MAX_PAYLOAD:
        raise ProtocolError(f"payload length {payload_len} exceeds limit")
    return kind, rnd, client_id, payload_len


def _check_crc(body: bytes, trailer: bytes) -> None:
    (crc,) = TRAILER.unpack(trailer)
    if crc != zlib.crc32(body):
        raise ProtocolError("frame CRC mismatch")


def decode_frame(data: bytes) -> Frame:
    """Decode exactly one complete frame."""
    if len(data) < HEADER.size + TRAILER.size:
        raise ProtocolError("frame shorter than header and trailer")
    kind, rnd, client_id, payload_len = _parse_header(data[: HEADER.size])
    end = HEADER.size + payload_len
    if len(data) != end + TRAILER.size:
        raise ProtocolError(f"frame length {len(data)} does not match declared payload {payload_len}")
    _check_crc(data[:end], data[end:])
    return Frame(kind, rnd, client_id, bytes(data[HEADER.size : end]))


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ProtocolError(f"connection closed after {len(buf)} of {n} bytes")
        buf += chunk
    return bytes(buf)


def read_frame(sock: socket.socket) -> Frame:
    head = _recv_exact(sock, HEADER.size)
    kind, rnd, client_id, payload_len = _parse_header(head)
    rest = _recv_exact(sock, payload_len + TRAILER.size)
    _check_crc(head + rest[:payload_len], rest[payload_len:])
    return Frame(kind, rnd, client_id, rest[:payload_len])


def send_frame(sock: socket.socket, frame: Frame) -> None:
    sock.sendall(encode_frame(frame))


def expect_round(frame: Frame, round_index: int) -> Frame:
    if frame.round != round_index:
        raise StaleRoundError(round_index, frame.round)
    return frame


def encode_params_payload(params: nn.ModelParams, n_k: int = 0) -> bytes:
    return _NK.pack(n_k) + nn.encode_params(params)


def decode_params_payload(payload: bytes) -> tuple[int, nn.ModelParams]:
    if len(payload) < _NK.size:
        raise ProtocolError("parameter payload shorter than its n_k field")
    (n_k,) = _NK.unpack_from(payload, 0)
    try:
        params = nn.decode_params(payload[_NK.size :])
    except FormatError as exc:
        raise ProtocolError(f"bad parameter block: {exc}") from exc
    return n_k, params
