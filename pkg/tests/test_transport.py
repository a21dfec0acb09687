import socket
import threading

import numpy as np
import pytest

from covspec.comm.codec import Uplink, DownlinkAccept, Fin
from covspec.comm.payload import ChannelConfig, PayloadConfig, latency
from covspec.errors import ConfigMismatch, ProtocolFault, SessionClosed, TransportTimeout
from covspec.transport.clock import VirtualClock, LinkTimeline
from covspec.transport.loopback import LoopbackEndpoint
from covspec.transport.sockets import TransportConfig, Hello, EdgeServer, SocketEndpoint

UPLINK = Uplink(gated=(), draft=(5, 7, 9, 11), draft_scores=np.zeros(4, dtype=np.uint16))
CHANNEL = ChannelConfig()


class RecordingEdge:
    def __init__(self):
        self.received = []

    def __call__(self, msg):
        self.received.append(msg)
        if isinstance(msg, Fin):
            return None
        return DownlinkAccept(accepted_len=len(msg.draft), bonus=42)


class TestVirtualClock:
    def test_advance(self):
        clock = VirtualClock(start=1.0)
        assert clock.advance(0.5) == 1.5
        with pytest.raises(ValueError):
            clock.advance(-0.1)

    def test_wait_until(self):
        clock = VirtualClock()
        assert clock.wait_until(2.0) == 2.0
        assert clock.wait_until(1.0) == 0.0
        assert clock.now == 2.0

    def test_fifo_among_equal_times(self):
        clock = VirtualClock()
        clock.schedule(1.0, 'b')
        clock.schedule(0.5, 'a')
        clock.schedule(1.0, 'c')
        assert [clock.pop()[1] for _ in range(3)] == ['a', 'b', 'c']

    def test_pop_due(self):
        clock = VirtualClock()
        clock.schedule(1.0, 'x')
        assert clock.pop_due(0.5) is None
        assert clock.peek() == (1.0, 'x')
        assert clock.pop_due(1.0) == (1.0, 'x')
        assert len(clock) == 0


class TestLinkTimeline:
    def test_round_trip(self):
        timeline = LinkTimeline(channel=CHANNEL, edge_round_s=0.1)
        arrival = timeline.uplink_arrival(1.0, 192)
        assert arrival == pytest.approx(1.0 + latency(192, CHANNEL))
        assert timeline.reply_delivery(arrival, 48) == pytest.approx(arrival + 0.1 + latency(48, CHANNEL))

    def test_busy_edge(self):
        timeline = LinkTimeline(channel=CHANNEL, edge_round_s=0.1, edge_free=5.0)
        assert timeline.reply_delivery(1.0, 0) == pytest.approx(5.1)
        assert timeline.reply_delivery(1.0, 0) == pytest.approx(5.2)


def loopback(edge=None, edge_round_s=0.1):
    edge = edge if edge is not None else RecordingEdge()
    timeline = LinkTimeline(channel=CHANNEL, edge_round_s=edge_round_s)
    return LoopbackEndpoint(edge, timeline, PayloadConfig(), 128), edge


class TestLoopback:
    def test_messages_pass_the_codec(self):
        endpoint, edge = loopback()
        assert endpoint.send(UPLINK) == 5 + 28
        assert edge.received == [UPLINK]
        delivery = endpoint.recv()
        assert delivery.message == DownlinkAccept(accepted_len=4, bonus=42)
        assert delivery.frame_bytes == 11
        assert delivery.time == pytest.approx(latency(192, CHANNEL) + 0.1 + latency(48, CHANNEL))

    def test_poll_respects_delivery_time(self):
        endpoint, _ = loopback()
        endpoint.send(UPLINK)
        assert endpoint.poll(0.05) is None
        delivery = endpoint.poll(1.0)
        assert delivery is not None
        assert endpoint.poll(2.0) is None  # nothing in flight any more

    def test_one_request_in_flight(self):
        endpoint, _ = loopback()
        endpoint.send(UPLINK)
        with pytest.raises(ProtocolFault):
            endpoint.send(UPLINK)

    def test_recv_without_request(self):
        endpoint, _ = loopback()
        with pytest.raises(ProtocolFault):
            endpoint.recv()

    def test_close_sends_fin(self):
        endpoint, edge = loopback()
        endpoint.close()
        assert edge.received == [Fin()]
        with pytest.raises(SessionClosed):
            endpoint.send(UPLINK)
        with pytest.raises(SessionClosed):
            endpoint.recv()

    def test_silent_edge(self):
        endpoint, _ = loopback(edge=lambda msg: None)
        endpoint.send(UPLINK)
        with pytest.raises(SessionClosed):
            endpoint.recv()


class TestHello:
    def test_bytes(self):
        assert Hello(vocab_size=128, config_hash=0x0123456789abcdef).pack() == \
            bytes.fromhex("01000000 80000000 efcdab8967452301")

    def test_unpack(self):
        hello = Hello(vocab_size=32, config_hash=7)
        assert Hello.unpack(hello.pack()) == hello

    def test_mismatch(self):
        with pytest.raises(ConfigMismatch):
            Hello(vocab_size=32, config_hash=7).check(Hello(vocab_size=32, config_hash=8))


class ServerThread:
    """
    an edge server on a free port serving a fixed number of sessions in the background
    """
    def __init__(self, hello, make_edge, sessions=1):
        self.server = EdgeServer(TransportConfig(port=0, recv_timeout_s=5.0),
                                 lambda idx: (hello, make_edge()))
        self.error = None
        self.thread = threading.Thread(target=self._serve, args=(sessions,), daemon=True)
        self.thread.start()

    def _serve(self, sessions):
        try:
            self.server.serve(max_sessions=sessions)
        except Exception as exc:
            self.error = exc

    @property
    def config(self):
        return TransportConfig(port=self.server.port, connect_retries=3, retry_interval_s=0.05, recv_timeout_s=5.0)

    def join(self):
        self.thread.join(timeout=10)
        assert not self.thread.is_alive()


def free_port() -> int:
    with socket.socket() as sock:
        sock.bind(('127.0.0.1', 0))
        return sock.getsockname()[1]


class TestSockets:
    hello = Hello(vocab_size=128, config_hash=99)

    def test_matches_loopback(self):
        edge = RecordingEdge()
        server = ServerThread(self.hello, lambda: edge)
        timeline = LinkTimeline(channel=CHANNEL, edge_round_s=0.1)
        endpoint = SocketEndpoint(server.config, self.hello, timeline, PayloadConfig(), 128)
        endpoint.send(UPLINK)
        assert endpoint.poll(0.05) is None
        delivery = endpoint.poll(1.0)
        endpoint.close()
        server.join()
        assert server.error is None

        reference, _ = loopback()
        reference.send(UPLINK)
        expected = reference.recv()
        assert delivery == expected
        assert edge.received == [UPLINK]

    def test_config_mismatch(self):
        server = ServerThread(self.hello, RecordingEdge)
        timeline = LinkTimeline(channel=CHANNEL, edge_round_s=0.1)
        with pytest.raises(ConfigMismatch):
            SocketEndpoint(server.config, Hello(vocab_size=128, config_hash=100), timeline, PayloadConfig(), 128)
        server.join()
        assert isinstance(server.error, ConfigMismatch)

    def test_no_edge(self):
        config = TransportConfig(port=free_port(), connect_retries=1, retry_interval_s=0.01)
        timeline = LinkTimeline(channel=CHANNEL, edge_round_s=0.1)
        with pytest.raises(TransportTimeout):
            SocketEndpoint(config, self.hello, timeline, PayloadConfig(), 128)
