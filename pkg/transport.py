"""
transport.py

Bit-exact wire format for the round messages and the channels that carry it.

Frame layout (all integers big-endian):

    length : 4 bytes, payload length
    tag    : 1 byte, 0x00 hello, 0x01-0x05 rounds 1-5
    payload: `length` bytes

Field elements use the fixed-width encoding of `FieldParams.encode`, q- and
q'-bit strings take ceil(bits/8) bytes, and vectors are concatenated in index
order. Round 3 is s_list_a || s_list_b || a || b || z_a || z_b.

Two channels implement the same blocking `send_frame`/`recv_frame` contract:
an in-process pair (queues) and a TCP stream. Both push the same encoded
bytes, so a run produces the same transcript over either one.
"""
from __future__ import annotations
import hashlib
import logging
import queue
import socket
import struct
import threading
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple, Type

from errors import ChannelTimeout, ConnectionClosed, DigestMismatch, MalformedMessage, OTError, TagMismatch, UsageError
from hashing import BitString, OpCounters
from params import ProtocolParams, params_digest
from protocol import (
    AliceSession, BobSession, HelloMessage, Round1Message, Round2Message, Round3Message,
    Round4Message, Round5Message, RoundMessage, Side, alice_round1, alice_round3, alice_round5,
    bob_recover, bob_round2, bob_round4, mask_count,
)

logger = logging.getLogger("Transport")

PROTOCOL_VERSION = 1
DEFAULT_PORT = 7512
DEFAULT_TIMEOUT = 30.0
HEADER = struct.Struct(">IB")
MAX_PAYLOAD = 1 << 26

MESSAGE_TYPES: Dict[int, Type] = {
    cls.TAG: cls for cls in (HelloMessage, Round1Message, Round2Message, Round3Message, Round4Message, Round5Message)
}


@dataclass(frozen=True)
class Frame:
    tag: int
    payload: bytes

    @property
    def length(self) -> int:
        return len(self.payload)

    def to_bytes(self) -> bytes:
        return HEADER.pack(len(self.payload), self.tag) + self.payload

    @classmethod
    def from_bytes(cls, data: bytes) -> Frame:
        if len(data) < HEADER.size:
            raise MalformedMessage("truncated frame header", offset=len(data))
        length, tag = HEADER.unpack_from(data)
        if tag not in MESSAGE_TYPES:
            raise TagMismatch(f"unknown frame tag 0x{tag:02x}", offset=4)
        if len(data) - HEADER.size != length:
            raise MalformedMessage(f"frame declares {length} payload bytes, carries {len(data) - HEADER.size}",
                                   offset=HEADER.size)
        return cls(tag=tag, payload=bytes(data[HEADER.size:]))


# --- Message codec ---

def _bit_bytes(bits: int) -> int:
    return (bits + 7) // 8


def payload_size(tag: int, params: ProtocolParams) -> int:
    """Exact payload length for each tag, from n, the element width, q, q' and K."""
    n, w = params.n, params.fp.elem_width_bytes
    if tag == HelloMessage.TAG:
        return 1 + 8
    if tag == Round1Message.TAG:
        return 2 * n * w
    if tag == Round2Message.TAG:
        return 2 * w
    if tag == Round3Message.TAG:
        return 2 * mask_count(n) * _bit_bytes(params.q) + 2 * w + 2 * _bit_bytes(params.qprime)
    if tag == Round4Message.TAG:
        return n * w
    if tag == Round5Message.TAG:
        return w
    raise TagMismatch(f"unknown frame tag 0x{tag:02x}")


def encode_message(msg: RoundMessage, params: ProtocolParams) -> Frame:
    fp = params.fp
    if isinstance(msg, HelloMessage):
        payload = bytes([msg.version]) + msg.digest
    elif isinstance(msg, Round1Message):
        payload = b"".join(fp.encode(x) for x in msg.mu_a + msg.mu_b)
    elif isinstance(msg, Round2Message):
        payload = fp.encode(msg.tau_a) + fp.encode(msg.tau_b)
    elif isinstance(msg, Round3Message):
        payload = b"".join([
            *(s.to_bytes() for s in msg.s_list_a),
            *(s.to_bytes() for s in msg.s_list_b),
            fp.encode(msg.a), fp.encode(msg.b),
            msg.z_a.to_bytes(), msg.z_b.to_bytes(),
        ])
    elif isinstance(msg, Round4Message):
        payload = b"".join(fp.encode(x) for x in msg.nu)
    elif isinstance(msg, Round5Message):
        payload = fp.encode(msg.tau_B)
    else:
        raise TypeError(f"not a round message: {type(msg).__name__}")
    expected = payload_size(msg.TAG, params)
    if len(payload) != expected:
        raise MalformedMessage(f"encoded {type(msg).__name__} is {len(payload)} bytes, expected {expected}")
    return Frame(tag=msg.TAG, payload=payload)


class _PayloadReader:
    """Sequential reader that reports the byte offset of anything it rejects."""

    def __init__(self, payload: bytes, params: ProtocolParams):
        self.payload = payload
        self.params = params
        self.offset = 0

    def take(self, count: int) -> bytes:
        chunk = self.payload[self.offset:self.offset + count]
        if len(chunk) != count:
            raise MalformedMessage("payload ends early", offset=self.offset)
        self.offset += count
        return chunk

    def element(self) -> int:
        start = self.offset
        x = int.from_bytes(self.take(self.params.fp.elem_width_bytes), "big")
        if x >= self.params.p:
            raise MalformedMessage(f"field element {x} >= p", offset=start)
        return x

    def elements(self, count: int) -> Tuple[int, ...]:
        return tuple(self.element() for _ in range(count))

    def bits(self, length: int) -> BitString:
        start = self.offset
        value = int.from_bytes(self.take(_bit_bytes(length)), "big")
        if value >> length:
            raise MalformedMessage(f"padding bits set in a {length}-bit string", offset=start)
        return BitString(value, length)


def decode_message(frame: Frame, params: ProtocolParams) -> RoundMessage:
    if frame.tag not in MESSAGE_TYPES:
        raise TagMismatch(f"unknown frame tag 0x{frame.tag:02x}")
    expected = payload_size(frame.tag, params)
    if frame.length != expected:
        raise MalformedMessage(f"tag 0x{frame.tag:02x} needs {expected} payload bytes, got {frame.length}",
                               offset=min(frame.length, expected))

    reader = _PayloadReader(frame.payload, params)
    n, K = params.n, mask_count(params.n)
    if frame.tag == HelloMessage.TAG:
        return HelloMessage(version=reader.take(1)[0], digest=reader.take(8))
    if frame.tag == Round1Message.TAG:
        return Round1Message(mu_a=reader.elements(n), mu_b=reader.elements(n))
    if frame.tag == Round2Message.TAG:
        return Round2Message(tau_a=reader.element(), tau_b=reader.element())
    if frame.tag == Round3Message.TAG:
        s_list_a = tuple(reader.bits(params.q) for _ in range(K))
        s_list_b = tuple(reader.bits(params.q) for _ in range(K))
        a, b = reader.element(), reader.element()
        return Round3Message(s_list_a=s_list_a, s_list_b=s_list_b, a=a, b=b,
                             z_a=reader.bits(params.qprime), z_b=reader.bits(params.qprime))
    if frame.tag == Round4Message.TAG:
        return Round4Message(nu=reader.elements(n))
    return Round5Message(tau_B=reader.element())


# --- Channels ---

class Channel(ABC):
    """Blocking duplex frame stream: frames arrive in order, intact, or an error is raised."""

    @abstractmethod
    def send_frame(self, frame: Frame) -> None: ...

    @abstractmethod
    def recv_frame(self) -> Frame: ...

    @abstractmethod
    def close(self) -> None: ...


_CLOSED = object()


class InProcessChannel(Channel):
    """One end of a queue pair; used by tests and the demo."""

    def __init__(self, inbox: queue.Queue, outbox: queue.Queue, timeout: float = DEFAULT_TIMEOUT):
        self.inbox = inbox
        self.outbox = outbox
        self.timeout = timeout
        self.closed = False

    @classmethod
    def pair(cls, timeout: float = DEFAULT_TIMEOUT) -> Tuple[InProcessChannel, InProcessChannel]:
        left, right = queue.Queue(), queue.Queue()
        return cls(left, right, timeout), cls(right, left, timeout)

    def send_frame(self, frame: Frame) -> None:
        if self.closed:
            raise ConnectionClosed("channel is closed")
        self.outbox.put(frame.to_bytes())

    def recv_frame(self) -> Frame:
        if self.closed:
            raise ConnectionClosed("channel is closed")
        try:
            item = self.inbox.get(timeout=self.timeout)
        except queue.Empty:
            raise ChannelTimeout(f"no frame within {self.timeout} s") from None
        if item is _CLOSED:
            self.inbox.put(_CLOSED)
            raise ConnectionClosed("peer closed the channel")
        return Frame.from_bytes(item)

    def close(self) -> None:
        if not self.closed:
            self.closed = True
            self.outbox.put(_CLOSED)


class TcpChannel(Channel):
    def __init__(self, sock: socket.socket, timeout: float = DEFAULT_TIMEOUT):
        self.sock = sock
        self.sock.settimeout(timeout)
        self.timeout = timeout

    def send_frame(self, frame: Frame) -> None:
        try:
            self.sock.sendall(frame.to_bytes())
        except socket.timeout:
            raise ChannelTimeout(f"send stalled for {self.timeout} s") from None
        except (BrokenPipeError, ConnectionResetError) as e:
            raise ConnectionClosed(f"peer closed the connection: {e}") from e

    def _recv_exact(self, count: int) -> bytes:
        chunks, remaining = [], count
        while remaining:
            try:
                chunk = self.sock.recv(min(remaining, 65536))
            except socket.timeout:
                raise ChannelTimeout(f"no data within {self.timeout} s") from None
            except ConnectionResetError as e:
                raise ConnectionClosed(f"connection reset: {e}") from e
            if not chunk:
                raise ConnectionClosed(f"peer closed the connection with {remaining} bytes outstanding")
            chunks.append(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)

    def recv_frame(self) -> Frame:
        header = self._recv_exact(HEADER.size)
        length, tag = HEADER.unpack(header)
        if tag not in MESSAGE_TYPES:
            raise TagMismatch(f"unknown frame tag 0x{tag:02x}", offset=4)
        if length > MAX_PAYLOAD:
            raise MalformedMessage(f"declared payload of {length} bytes exceeds the limit", offset=0)
        return Frame(tag=tag, payload=self._recv_exact(length))

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


class RecordingChannel(Channel):
    """Wraps a channel and keeps every frame sent or received, in order."""

    def __init__(self, inner: Channel):
        self.inner = inner
        self.frames: List[Frame] = []

    def send_frame(self, frame: Frame) -> None:
        self.inner.send_frame(frame)
        self.frames.append(frame)

    def recv_frame(self) -> Frame:
        frame = self.inner.recv_frame()
        self.frames.append(frame)
        return frame

    def close(self) -> None:
        self.inner.close()


def parse_address(text: str, default_port: int = DEFAULT_PORT) -> Tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep:
        return text, default_port
    if not (port.isascii() and port.isdigit()) or int(port) > 65535:
        raise UsageError(f"invalid port in address '{text}'")
    return host or "127.0.0.1", int(port)


def open_listener(address: Tuple[str, int], backlog: int = 8) -> socket.socket:
    listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    listener.bind(address)
    listener.listen(backlog)
    return listener


def connect(address: Tuple[str, int], timeout: float = DEFAULT_TIMEOUT) -> TcpChannel:
    try:
        sock = socket.create_connection(address, timeout=timeout)
    except socket.timeout:
        raise ChannelTimeout(f"connecting to {address[0]}:{address[1]} timed out") from None
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return TcpChannel(sock, timeout)


def tcp_loopback_pair(timeout: float = DEFAULT_TIMEOUT) -> Tuple[TcpChannel, TcpChannel]:
    """Two TcpChannels joined by a real 127.0.0.1 connection."""
    listener = open_listener(("127.0.0.1", 0), backlog=1)
    try:
        client = connect(listener.getsockname(), timeout)
        server_sock, _ = listener.accept()
    finally:
        listener.close()
    return TcpChannel(server_sock, timeout), client


# --- Endpoints ---

def _expect(channel: Channel, params: ProtocolParams, cls: Type) -> RoundMessage:
    frame = channel.recv_frame()
    if frame.tag != cls.TAG:
        raise TagMismatch(f"expected tag 0x{cls.TAG:02x}, received 0x{frame.tag:02x}")
    return decode_message(frame, params)


def _exchange_hello(channel: Channel, params: ProtocolParams, digest: bytes) -> None:
    channel.send_frame(encode_message(HelloMessage(version=PROTOCOL_VERSION, digest=digest), params))
    hello = _expect(channel, params, HelloMessage)
    if hello.version != PROTOCOL_VERSION:
        raise DigestMismatch(f"peer speaks protocol version {hello.version}, expected {PROTOCOL_VERSION}")
    if hello.digest != digest:
        raise DigestMismatch(f"parameter digest mismatch: ours {digest.hex()}, peer {hello.digest.hex()}")


@dataclass
class AliceEndpoint:
    session: AliceSession
    digest: Optional[bytes] = None

    def run(self, channel: Channel) -> None:
        """Hello, then rounds 1, 3 and 5. Leaves the session at the last stage it reached."""
        params = self.session.params
        digest = self.digest or params_digest(params)
        started = time.perf_counter()
        _exchange_hello(channel, params, digest)

        channel.send_frame(encode_message(alice_round1(self.session), params))
        logger.info(f"Alice: sent R1 ({time.perf_counter() - started:.3f} s)")
        r2 = _expect(channel, params, Round2Message)

        mark = time.perf_counter()
        channel.send_frame(encode_message(alice_round3(self.session, r2), params))
        logger.info(f"Alice: sent R3 ({time.perf_counter() - mark:.3f} s, h1 calls {self.session.counters.h1_calls})")
        r4 = _expect(channel, params, Round4Message)

        channel.send_frame(encode_message(alice_round5(self.session, r4), params))
        logger.info(f"Alice: sent R5, run complete in {time.perf_counter() - started:.3f} s")


@dataclass
class BobEndpoint:
    session: BobSession
    choice: Side
    digest: Optional[bytes] = None

    def run(self, channel: Channel) -> BitString:
        """Hello, then rounds 2 and 4, then recovery of m_d."""
        params = self.session.params
        digest = self.digest or params_digest(params)
        started = time.perf_counter()
        _exchange_hello(channel, params, digest)

        r1 = _expect(channel, params, Round1Message)
        channel.send_frame(encode_message(bob_round2(self.session, r1), params))
        logger.info(f"Bob: sent R2 ({time.perf_counter() - started:.3f} s)")

        r3 = _expect(channel, params, Round3Message)
        channel.send_frame(encode_message(bob_round4(self.session, r3, self.choice), params))
        logger.info(f"Bob: sent R4 for side {self.choice.value}")

        r5 = _expect(channel, params, Round5Message)
        mark = time.perf_counter()
        recovered = bob_recover(self.session, r5)
        counters = self.session.counters
        logger.info(f"Bob: recovered m_{self.choice.value} in {time.perf_counter() - mark:.3f} s "
                    f"(h1 {counters.h1_calls}, h2 {counters.h2_calls})")
        return recovered


@dataclass
class Transcript:
    """Every frame of one run in Bob's order of sending/receiving, plus the outcome."""
    params: ProtocolParams = field(repr=False)
    frames: List[Frame]
    choice: Side
    recovered: Optional[BitString] = None
    alice_counters: OpCounters = field(default_factory=OpCounters)
    bob_counters: OpCounters = field(default_factory=OpCounters)

    def to_bytes(self) -> bytes:
        return b"".join(frame.to_bytes() for frame in self.frames)

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()

    def message(self, cls: Type) -> RoundMessage:
        for frame in self.frames:
            if frame.tag == cls.TAG:
                return decode_message(frame, self.params)
        raise KeyError(f"transcript has no {cls.__name__}")


def run_protocol(alice: AliceEndpoint, bob: BobEndpoint,
                 channel_pair: Tuple[Channel, Channel]) -> Transcript:
    """
    Drives hello, R1..R5 and recovery with Alice on a worker thread and Bob
    on the calling thread. Errors from either side are re-raised here, Bob's first.
    """
    alice_channel, bob_channel = channel_pair
    recorder = RecordingChannel(bob_channel)
    alice_error: List[BaseException] = []

    def alice_main():
        try:
            alice.run(alice_channel)
        except BaseException as e:
            alice_error.append(e)
            alice_channel.close()

    worker = threading.Thread(target=alice_main, name="alice-endpoint", daemon=True)
    worker.start()
    try:
        recovered = bob.run(recorder)
    except Exception as bob_error:
        recorder.close()
        worker.join()
        # Alice hanging up is only a symptom when she failed first.
        if isinstance(bob_error, ConnectionClosed) and alice_error:
            raise alice_error[0] from bob_error
        raise
    worker.join()
    if alice_error:
        raise alice_error[0]
    return Transcript(params=bob.session.params, frames=recorder.frames, choice=bob.choice,
                      recovered=recovered, alice_counters=alice.session.counters,
                      bob_counters=bob.session.counters)


@dataclass
class ConnectionOutcome:
    peer: str
    error: Optional[BaseException] = None


def serve_alice(listener: socket.socket, session_factory: Callable[[], AliceSession],
                timeout: float = DEFAULT_TIMEOUT, max_connections: int = 1) -> List[ConnectionOutcome]:
    """
    Accepts `max_connections` peers and runs an independent Alice session on
    its own thread for each. Returns once every run has finished.
    """
    listener.settimeout(timeout)
    outcomes: List[ConnectionOutcome] = []
    workers: List[threading.Thread] = []
    lock = threading.Lock()

    def handle(conn: socket.socket, peer: str) -> None:
        channel = TcpChannel(conn, timeout)
        outcome = ConnectionOutcome(peer=peer)
        try:
            AliceEndpoint(session_factory()).run(channel)
        except (OTError, OSError) as e:
            logger.error(f"Run with {peer} failed: {e}")
            outcome.error = e
        except Exception as e:
            logger.exception(f"Unexpected error in the run with {peer}: {e}")
            outcome.error = e
        finally:
            channel.close()
            with lock:
                outcomes.append(outcome)

    for _ in range(max_connections):
        try:
            conn, addr = listener.accept()
        except socket.timeout:
            raise ChannelTimeout(f"no peer connected within {timeout} s") from None
        peer = f"{addr[0]}:{addr[1]}"
        logger.info(f"Accepted connection from {peer}")
        worker = threading.Thread(target=handle, args=(conn, peer), name=f"alice-{peer}", daemon=True)
        worker.start()
        workers.append(worker)

    for worker in workers:
        worker.join()
    return outcomes
