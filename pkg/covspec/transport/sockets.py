"""
Stream-socket transport: the edge listens, the device connects. A session opens with a 16-byte
hello in both directions, then carries codec frames until FIN or end of stream.
"""
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import socket
import struct
import time

from dataclasses_json import dataclass_json

from covspec.common import logger
from covspec.comm.codec import Fin, HEADER_SIZE, decode_header, decode_message, encode_message
from covspec.comm.payload import PayloadConfig
from covspec.errors import ConfigMismatch, SessionClosed, TransportTimeout
from covspec.transport.clock import LinkTimeline, VirtualClock
from covspec.transport.endpoint import DeviceEndpoint
from covspec.transport.loopback import EdgeHandler

PROTOCOL_VERSION = 1
HELLO = struct.Struct('<IIQ')


@dataclass_json
@dataclass
class TransportConfig:
    host: str = '127.0.0.1'
    port: int = 33333
    connect_retries: int = 20
    retry_interval_s: float = 0.25
    recv_timeout_s: float = 30.0


@dataclass(frozen=True)
class Hello:
    vocab_size: int
    config_hash: int
    version: int = PROTOCOL_VERSION

    def pack(self) -> bytes:
        return HELLO.pack(self.version, self.vocab_size, self.config_hash)

    @staticmethod
    def unpack(data: bytes) -> "Hello":
        version, vocab_size, config_hash = HELLO.unpack(data)
        return Hello(vocab_size=vocab_size, config_hash=config_hash, version=version)

    def check(self, peer: "Hello"):
        if peer != self:
            raise ConfigMismatch(f"peer hello (version {peer.version}, vocab {peer.vocab_size}, "
                                 f"config {peer.config_hash:016x}) does not match ours (version {self.version}, "
                                 f"vocab {self.vocab_size}, config {self.config_hash:016x})")


def recv_exactly(sock: socket.socket, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining > 0:
        try:
            chunk = sock.recv(remaining)
        except socket.timeout as exc:
            raise TransportTimeout(f"no data from the peer within {sock.gettimeout()} s") from exc
        if not chunk:
            raise SessionClosed(f"peer closed the stream with {remaining} of {n} bytes outstanding")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b''.join(chunks)


def read_frame(sock: socket.socket) -> bytes:
    header = recv_exactly(sock, HEADER_SIZE)
    _, length = decode_header(header)
    return header + recv_exactly(sock, length)


def connect(config: TransportConfig) -> socket.socket:
    """
    connects to the edge, retrying while it is not up yet
    """
    for attempt in range(config.connect_retries + 1):
        try:
            sock = socket.create_connection((config.host, config.port), timeout=config.recv_timeout_s)
            sock.settimeout(config.recv_timeout_s)
            return sock
        except (ConnectionRefusedError, socket.timeout, OSError) as exc:
            logger.verbose(f"connection attempt {attempt + 1} to {config.host}:{config.port} failed: {exc}")
            if attempt < config.connect_retries:
                time.sleep(config.retry_interval_s)
    raise TransportTimeout(f"could not reach the edge at {config.host}:{config.port} "
                           f"after {config.connect_retries + 1} attempts")


class SocketEndpoint(DeviceEndpoint):
    """
    Device side of a socket session. The reply frame is read as soon as it is on the wire; its
    modeled delivery time comes from the device's own copy of the link timeline, so polling
    gives the same answers as in loopback.
    """

    def __init__(self, config: TransportConfig, hello: Hello, timeline: LinkTimeline,
                 payload: PayloadConfig, vocab_size: int, clock: Optional[VirtualClock] = None):
        super().__init__(timeline=timeline, payload=payload, vocab_size=vocab_size, clock=clock)
        self.address = f'{config.host}:{config.port}'
        self.sock = connect(config)
        self.sock.sendall(hello.pack())
        hello.check(Hello.unpack(recv_exactly(self.sock, HELLO.size)))
        logger.info(f"connected to the edge at {self.address}")

    def _transmit(self, frame: bytes):
        try:
            self.sock.sendall(frame)
        except (BrokenPipeError, ConnectionResetError) as exc:
            raise SessionClosed(f"edge at {self.address} closed the session") from exc

    def _receive_frame(self) -> bytes:
        return read_frame(self.sock)

    def _shutdown(self):
        self.sock.close()


class EdgeServer:
    """
    Serves sessions one at a time. make_session(session_idx) gives the hello expected from the
    device and fresh edge state for that session.
    """

    def __init__(self, config: TransportConfig, make_session: Callable[[int], Tuple[Hello, EdgeHandler]]):
        self.config = config
        self.make_session = make_session
        self.server_sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self.server_sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self.server_sock.bind((config.host, config.port))
        self.server_sock.listen(1)

    @property
    def port(self) -> int:
        return self.server_sock.getsockname()[1]

    def main_loop(self, sock: socket.socket, session_idx: int) -> int:
        """
        answers frames until FIN or end of stream, returns the number of requests served
        """
        hello, edge = self.make_session(session_idx)
        peer = Hello.unpack(recv_exactly(sock, HELLO.size))
        sock.sendall(hello.pack())
        hello.check(peer)
        served = 0
        while True:
            try:
                msg = decode_message(read_frame(sock))
            except SessionClosed:
                logger.warning(f"session {session_idx} ended without FIN")
                break
            if isinstance(msg, Fin):
                break
            logger.debug(f"session {session_idx} request {served}: {type(msg).__name__}")
            reply = edge(msg)
            sock.sendall(encode_message(reply))
            served += 1
        return served

    def serve(self, max_sessions: Optional[int] = None):
        logger.info(f"edge server is listening on {self.config.host}:{self.port}")
        session_idx = 0
        try:
            while max_sessions is None or session_idx < max_sessions:
                sock, remote_addr = self.server_sock.accept()
                sock.settimeout(self.config.recv_timeout_s)
                logger.info(f"device connected {remote_addr}")
                try:
                    served = self.main_loop(sock, session_idx)
                    logger.info(f"device disconnected {remote_addr} after {served} verification requests")
                except ConfigMismatch as exc:
                    logger.error(f"rejected session from {remote_addr}: {exc}")
                    if max_sessions is not None:
                        raise
                finally:
                    sock.close()
                session_idx += 1
        finally:
            logger.info(f'closing the server on port {self.port}')
            self.server_sock.close()
