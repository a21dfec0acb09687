"""
The device side of a session. Subclasses move frames; this class stamps modeled delivery
times and keeps at most one verification request in flight.
"""
from dataclasses import dataclass
from typing import Optional

from covspec.common import logger
from covspec.comm.codec import AnyMessage, Fin, encode_message, decode_message
from covspec.comm.payload import PayloadConfig, message_bits
from covspec.errors import ProtocolFault, SessionClosed
from covspec.transport.clock import VirtualClock, LinkTimeline


@dataclass(frozen=True)
class Delivery:
    message: AnyMessage
    time: float  # modeled delivery time
    frame_bytes: int


class DeviceEndpoint:
    role = 'device'
    address: Optional[str] = None

    def __init__(self, timeline: LinkTimeline, payload: PayloadConfig, vocab_size: int,
                 clock: Optional[VirtualClock] = None):
        self.clock = clock if clock is not None else VirtualClock()
        self.timeline = timeline
        self.payload = payload
        self.vocab_size = vocab_size
        self.in_flight = False
        self.closed = False
        self._arrival = 0.0

    def _transmit(self, frame: bytes):
        raise NotImplementedError

    def _receive_frame(self) -> bytes:
        raise NotImplementedError

    def _shutdown(self):
        pass

    def send(self, msg: AnyMessage) -> int:
        """
        sends a message at the current clock time, returns the frame size in bytes
        """
        if self.closed:
            raise SessionClosed("send on a closed session")
        if self.in_flight:
            raise ProtocolFault("a verification request is already in flight")
        frame = encode_message(msg)
        self._arrival = self.timeline.uplink_arrival(self.clock.now, message_bits(msg, self.payload, self.vocab_size))
        logger.debug(f"{self.role} sends {type(msg).__name__} ({len(frame)} bytes) at t={self.clock.now:.6f}")
        self._transmit(frame)
        self.in_flight = not isinstance(msg, Fin)
        return len(frame)

    def _await_reply(self):
        if len(self.clock) == 0:
            frame = self._receive_frame()
            msg = decode_message(frame)
            time = self.timeline.reply_delivery(self._arrival, message_bits(msg, self.payload, self.vocab_size))
            self.clock.schedule(time, Delivery(message=msg, time=time, frame_bytes=len(frame)))

    def poll(self, now: Optional[float] = None) -> Optional[Delivery]:
        """
        the reply if its modeled delivery time is not later than `now` (default: the clock time)
        """
        if self.closed:
            raise SessionClosed("poll on a closed session")
        if not self.in_flight:
            return None
        self._await_reply()
        due = self.clock.pop_due(self.clock.now if now is None else now)
        if due is None:
            return None
        self.in_flight = False
        return due[1]

    def recv(self) -> Delivery:
        """
        the reply, whenever it is delivered (the clock is not moved)
        """
        if self.closed:
            raise SessionClosed("recv on a closed session")
        if not self.in_flight:
            raise ProtocolFault("recv without a request in flight")
        self._await_reply()
        self.in_flight = False
        return self.clock.pop()[1]

    def close(self):
        if self.closed:
            return
        if not self.in_flight:
            self.send(Fin())
        self.closed = True
        self._shutdown()
