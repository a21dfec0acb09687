from collections import deque
from typing import Callable, Optional

from covspec.comm.codec import AnyMessage, Fin, decode_message, encode_message
from covspec.comm.payload import PayloadConfig
from covspec.errors import SessionClosed
from covspec.transport.clock import LinkTimeline, VirtualClock
from covspec.transport.endpoint import DeviceEndpoint

EdgeHandler = Callable[[AnyMessage], Optional[AnyMessage]]


class LoopbackEndpoint(DeviceEndpoint):
    """
    In-process session: the edge handler runs inside send(). Every message still goes
    through the wire codec in both directions.
    """

    def __init__(self, edge: EdgeHandler, timeline: LinkTimeline, payload: PayloadConfig, vocab_size: int,
                 clock: Optional[VirtualClock] = None):
        super().__init__(timeline=timeline, payload=payload, vocab_size=vocab_size, clock=clock)
        self.edge = edge
        self._replies = deque()

    def _transmit(self, frame: bytes):
        msg = decode_message(frame)
        reply = self.edge(msg)
        if reply is not None:
            self._replies.append(encode_message(reply))
        elif not isinstance(msg, Fin):
            self._replies.append(None)

    def _receive_frame(self) -> bytes:
        if not self._replies:
            raise SessionClosed("the edge has nothing to deliver")
        frame = self._replies.popleft()
        if frame is None:
            raise SessionClosed("the edge closed the session")
        return frame
