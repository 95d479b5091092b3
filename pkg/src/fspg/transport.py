"""Round-based message protocol between the coordinator and the clients.

Wire format (see ``docs/protocol.md`` for the byte-level description)::

    frame = uint32 big-endian body length || body
    body  = UTF-8 JSON object, keys in fixed order, no whitespace

Every message except ``Shutdown`` ends with a ``"crc32"`` member holding the
CRC-32 of the body bytes that precede ``,"crc32":``.  Floats are written with
Python's shortest round-trip representation, so encode/decode is exact.
"""
from __future__ import annotations

import json
import logging
import math
import re
import socket
import struct
import threading
import time
import zlib
from dataclasses import dataclass, fields

import numpy as np

from .errors import EncodeError, IncompleteFrame, ProtocolError, RoundTimeout

logger = logging.getLogger(__name__)

HEADER = struct.Struct(">I")
MAX_FRAME = 64 * 1024 * 1024
SHUTDOWN_BODY = b'{"type":"Shutdown"}'
_CRC_TAIL = re.compile(rb',"crc32":(0|[1-9][0-9]{0,9})\}\Z')


def _floats(v):
    return tuple(float(x) for x in v)


@dataclass(frozen=True)
class Hello:
    client_id: int
    M: int
    P: int


@dataclass(frozen=True)
class GradRequest:
    k: int
    w: tuple
    mu: float
    tau: float

    def __post_init__(self):
        object.__setattr__(self, "w", _floats(self.w))
        object.__setattr__(self, "mu", float(self.mu))
        object.__setattr__(self, "tau", float(self.tau))


@dataclass(frozen=True)
class GradResponse:
    client_id: int
    k: int
    gradient: tuple
    local_loss: float

    def __post_init__(self):
        object.__setattr__(self, "gradient", _floats(self.gradient))
        object.__setattr__(self, "local_loss", float(self.local_loss))


@dataclass(frozen=True)
class GramVecRequest:
    round: int
    v: tuple

    def __post_init__(self):
        object.__setattr__(self, "v", _floats(self.v))


@dataclass(frozen=True)
class GramVecResponse:
    client_id: int
    round: int
    product: tuple

    def __post_init__(self):
        object.__setattr__(self, "product", _floats(self.product))


@dataclass(frozen=True)
class FinalModel:
    w: tuple

    def __post_init__(self):
        object.__setattr__(self, "w", _floats(self.w))


@dataclass(frozen=True)
class Shutdown:
    pass


MESSAGE_TYPES = {cls.__name__: cls for cls in
                 (Hello, GradRequest, GradResponse, GramVecRequest, GramVecResponse,
                  FinalModel, Shutdown)}

# per-field wire kind: "int", "float" or "vec"
_SCHEMA = {
    "Hello": (("client_id", "int"), ("M", "int"), ("P", "int")),
    "GradRequest": (("k", "int"), ("w", "vec"), ("mu", "float"), ("tau", "float")),
    "GradResponse": (("client_id", "int"), ("k", "int"), ("gradient", "vec"),
                     ("local_loss", "float")),
    "GramVecRequest": (("round", "int"), ("v", "vec")),
    "GramVecResponse": (("client_id", "int"), ("round", "int"), ("product", "vec")),
    "FinalModel": (("w", "vec"),),
    "Shutdown": (),
}


def encode(msg) -> bytes:
    """Serialize a message into one length-prefixed frame."""
    name = type(msg).__name__
    if name not in _SCHEMA:
        raise EncodeError(f"not a protocol message: {msg!r}")
    if name == "Shutdown":
        body = SHUTDOWN_BODY
    else:
        obj = {"type": name}
        for f in fields(msg):
            obj[f.name] = getattr(msg, f.name)
            if isinstance(obj[f.name], tuple):
                obj[f.name] = list(obj[f.name])
        try:
            prefix = json.dumps(obj, separators=(",", ":"), allow_nan=False)[:-1].encode("utf-8")
        except ValueError as exc:
            raise EncodeError(f"cannot encode {name}: {exc}") from None
        body = prefix + b',"crc32":' + str(zlib.crc32(prefix)).encode("ascii") + b"}"
    if len(body) > MAX_FRAME:
        raise EncodeError(f"{name} body of {len(body)} bytes exceeds frame cap")
    return HEADER.pack(len(body)) + body


def _field(name, kind, value, offset):
    if kind == "int":
        if type(value) is not int:
            raise ProtocolError(f"field {name!r} must be an integer", offset)
        return value
    if kind == "float":
        if type(value) not in (int, float) or not math.isfinite(value):
            raise ProtocolError(f"field {name!r} must be a finite number", offset)
        return float(value)
    if not isinstance(value, list):
        raise ProtocolError(f"field {name!r} must be a list of numbers", offset)
    for x in value:
        if type(x) not in (int, float) or not math.isfinite(x):
            raise ProtocolError(f"field {name!r} contains a non-numeric entry", offset)
    return tuple(float(x) for x in value)


def _decode_body(body: bytes, offset: int):
    if body == SHUTDOWN_BODY:
        return Shutdown()
    m = _CRC_TAIL.search(body)
    if m is None:
        raise ProtocolError("missing or malformed crc32 trailer", offset + len(body))
    prefix = body[:m.start()]
    if zlib.crc32(prefix) != int(m.group(1)):
        raise ProtocolError("crc32 mismatch", offset)
    try:
        obj = json.loads(body.decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise ProtocolError(f"invalid UTF-8: {exc.reason}", offset + exc.start) from None
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"malformed JSON: {exc.msg}", offset + exc.pos) from None
    if not isinstance(obj, dict):
        raise ProtocolError("body is not a JSON object", offset)
    name = obj.get("type")
    if name not in _SCHEMA or name == "Shutdown":
        raise ProtocolError(f"unknown message type {name!r}", offset)
    schema = _SCHEMA[name]
    expected = ["type"] + [f for f, _ in schema] + ["crc32"]
    if list(obj) != expected:
        raise ProtocolError(f"{name}: expected keys {expected}, got {list(obj)}", offset)
    kwargs = {f: _field(f, kind, obj[f], offset) for f, kind in schema}
    return MESSAGE_TYPES[name](**kwargs)


def decode_stream(buf, max_frame: int = MAX_FRAME):
    """Decode the first frame in ``buf``; returns ``(message, bytes_consumed)``.

    Raises :class:`IncompleteFrame` if ``buf`` does not yet hold a full frame.
    """
    buf = bytes(buf)
    if len(buf) < HEADER.size:
        raise IncompleteFrame(HEADER.size - len(buf))
    (length,) = HEADER.unpack_from(buf)
    if length > max_frame:
        raise ProtocolError(f"declared frame length {length} exceeds cap {max_frame}", 0)
    end = HEADER.size + length
    if len(buf) < end:
        raise IncompleteFrame(end - len(buf))
    return _decode_body(buf[HEADER.size:end], HEADER.size), end


def decode(frame, max_frame: int = MAX_FRAME):
    """Decode exactly one complete frame."""
    msg, used = decode_stream(frame, max_frame)
    if used != len(frame):
        raise ProtocolError(f"{len(frame) - used} trailing bytes after frame", used)
    return msg


# ---------------------------------------------------------------- transports

class Transport:
    """Common bookkeeping: registered clients and response validation."""

    def __init__(self):
        self.hellos = {}

    @property
    def client_ids(self):
        return sorted(self.hellos)

    @property
    def n_total(self) -> int:
        return sum(h.M for h in self.hellos.values())

    @property
    def n_features(self) -> int:
        return next(iter(self.hellos.values())).P

    def _register(self, hello):
        if not isinstance(hello, Hello):
            raise ProtocolError(f"expected Hello, got {type(hello).__name__}")
        if hello.client_id in self.hellos:
            raise ProtocolError(f"duplicate client_id {hello.client_id}", client_id=hello.client_id)
        if self.hellos and hello.P != self.n_features:
            raise ProtocolError(f"client {hello.client_id} reports P={hello.P}, "
                                f"expected {self.n_features}", client_id=hello.client_id)
        self.hellos[hello.client_id] = hello

    def _validate(self, request, replies):
        """``replies`` maps client_id -> reply; returns replies sorted by client_id."""
        dim = self.n_features + 1
        out = []
        for cid in self.client_ids:
            r = replies.get(cid)
            if isinstance(request, GradRequest):
                if not isinstance(r, GradResponse) or r.client_id != cid:
                    raise ProtocolError(f"client {cid}: expected GradResponse, got {r!r:.80}",
                                        client_id=cid)
                if r.k != request.k:
                    raise ProtocolError(f"client {cid}: stale response for k={r.k}, "
                                        f"outstanding k={request.k}", client_id=cid)
                if len(r.gradient) != dim:
                    raise ProtocolError(f"client {cid}: gradient length {len(r.gradient)} != {dim}",
                                        client_id=cid)
            elif isinstance(request, GramVecRequest):
                if not isinstance(r, GramVecResponse) or r.client_id != cid:
                    raise ProtocolError(f"client {cid}: expected GramVecResponse", client_id=cid)
                if r.round != request.round:
                    raise ProtocolError(f"client {cid}: stale response for round {r.round}",
                                        client_id=cid)
                if len(r.product) != dim:
                    raise ProtocolError(f"client {cid}: product length {len(r.product)} != {dim}",
                                        client_id=cid)
            out.append(r)
        return out

    def _check_request(self, request):
        vec = getattr(request, "w", None) if not isinstance(request, GramVecRequest) else request.v
        if vec is not None and len(vec) != self.n_features + 1:
            raise ProtocolError(f"request vector length {len(vec)} != {self.n_features + 1}")

    def run_round(self, request):
        raise NotImplementedError

    def close(self):
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class InProcessTransport(Transport):
    """Clients live in the same process.

    With ``serialize=True`` every message goes through :func:`encode` and
    :func:`decode`, which exercises the codec without sockets.
    """

    def __init__(self, nodes, serialize: bool = False):
        super().__init__()
        self.serialize = serialize
        self.nodes = {}
        self.messages_sent = 0
        for node in nodes:
            self._register(self._wire(node.hello()))
            self.nodes[node.client_id] = node

    def _wire(self, msg):
        return decode(encode(msg)) if self.serialize else msg

    def run_round(self, request):
        self._check_request(request)
        replies = {}
        for cid in self.client_ids:
            self.messages_sent += 1
            reply = self.nodes[cid].handle(self._wire(request))
            replies[cid] = None if reply is None else self._wire(reply)
        if isinstance(request, (Shutdown, FinalModel)):
            return []
        return self._validate(request, replies)


def _recv_exact(sock, n, deadline):
    buf = bytearray()
    while len(buf) < n:
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            raise socket.timeout()
        sock.settimeout(remaining)
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("peer closed the connection")
        buf.extend(chunk)
    return bytes(buf)


def recv_frame(sock, timeout: float, max_frame: int = MAX_FRAME):
    """Read and decode one frame from a blocking socket."""
    deadline = time.monotonic() + timeout
    header = _recv_exact(sock, HEADER.size, deadline)
    (length,) = HEADER.unpack(header)
    if length > max_frame:
        raise ProtocolError(f"declared frame length {length} exceeds cap {max_frame}", 0)
    return decode(header + _recv_exact(sock, length, deadline), max_frame)


def send_frame(sock, msg):
    sock.sendall(encode(msg))


def parse_address(addr):
    """``"host:port"`` or ``(host, port)`` -> ``(host, port)``."""
    if isinstance(addr, str):
        host, _, port = addr.rpartition(":")
        return host or "127.0.0.1", int(port)
    return addr[0], int(addr[1])


class SocketTransport(Transport):
    """TCP transport; the coordinator connects to listening clients.

    Each client must send ``Hello`` within ``hello_timeout`` seconds of the
    connection being accepted.  A round fails with :class:`RoundTimeout`
    naming the first client that stays silent past ``timeout``.
    """

    def __init__(self, addresses, timeout: float = 30.0, hello_timeout: float = 10.0):
        super().__init__()
        self.timeout = timeout
        self.socks = {}
        try:
            for addr in addresses:
                sock = socket.create_connection(parse_address(addr), timeout=hello_timeout)
                sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                try:
                    hello = recv_frame(sock, hello_timeout)
                except socket.timeout:
                    sock.close()
                    raise ProtocolError(f"no Hello from {addr} within {hello_timeout:g} s") from None
                self._register(hello)
                self.socks[hello.client_id] = sock
        except BaseException:
            self._close_all()
            raise

    def run_round(self, request):
        self._check_request(request)
        frame = encode(request)
        for cid in self.client_ids:
            self.socks[cid].sendall(frame)
        if isinstance(request, (Shutdown, FinalModel)):
            return []
        deadline = time.monotonic() + self.timeout
        replies = {}
        for cid in self.client_ids:
            try:
                replies[cid] = recv_frame(self.socks[cid], max(deadline - time.monotonic(), 1e-3))
            except socket.timeout:
                raise RoundTimeout(cid, self.timeout) from None
            except (ConnectionError, OSError) as exc:
                raise ProtocolError(f"client {cid}: {exc}", client_id=cid) from None
        return self._validate(request, replies)

    def _close_all(self):
        for sock in self.socks.values():
            try:
                sock.close()
            except OSError:
                pass
        self.socks = {}

    def close(self):
        if not self.socks:
            return
        try:
            self.run_round(Shutdown())
        except OSError:
            pass
        self._close_all()


class ClientServer:
    """Serves one :class:`~fspg.client.ClientNode` over TCP.

    Accepts coordinator connections one at a time, sends ``Hello`` and then
    answers requests until ``Shutdown`` arrives or the peer disconnects.
    """

    def __init__(self, node, host: str = "127.0.0.1", port: int = 0, once: bool = True):
        self.node = node
        self.once = once
        self.sock = socket.create_server((host, port))
        self.address = self.sock.getsockname()[:2]
        self._thread = None

    def serve_forever(self):
        try:
            while True:
                try:
                    conn, _ = self.sock.accept()
                except OSError:
                    return
                with conn:
                    conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                    self._serve_connection(conn)
                if self.once:
                    return
        finally:
            self.sock.close()

    def _serve_connection(self, conn):
        send_frame(conn, self.node.hello())
        while True:
            try:
                msg = recv_frame(conn, timeout=24 * 3600.0)
            except (ConnectionError, OSError):
                return
            if isinstance(msg, Shutdown):
                return
            reply = self.node.handle(msg)
            if reply is not None:
                send_frame(conn, reply)

    def start(self):
        """Serve in a daemon thread; returns ``self``."""
        self._thread = threading.Thread(target=self.serve_forever, daemon=True,
                                        name=f"fspg-client-{self.node.client_id}")
        self._thread.start()
        return self

    def stop(self):
        try:
            self.sock.close()
        except OSError:
            pass
        if self._thread is not None:
            self._thread.join(timeout=5)


def vector(msg_vec) -> np.ndarray:
    return np.asarray(msg_vec, dtype=float)
