"""
Modeled time: the device's virtual clock and the link/edge timeline that stamps deliveries.
"""
from dataclasses import dataclass
from typing import Any, List, Optional, Tuple

import heapq
import itertools

from covspec.comm.payload import ChannelConfig, latency


class VirtualClock:
    """
    Time advances only when told to and never moves backward. Scheduled events come out in
    time order, first in first out among equal times.
    """

    def __init__(self, start: float = 0.0):
        self._now = start
        self._queue: List[Tuple[float, int, Any]] = []
        self._seq = itertools.count()

    @property
    def now(self) -> float:
        return self._now

    def advance(self, dt: float) -> float:
        if dt < 0:
            raise ValueError(f"cannot advance the clock by {dt}")
        self._now += dt
        return self._now

    def wait_until(self, t: float) -> float:
        """
        moves to t unless already past it, returns the time waited
        """
        waited = max(0.0, t - self._now)
        self._now += waited
        return waited

    def schedule(self, time: float, event: Any):
        heapq.heappush(self._queue, (time, next(self._seq), event))

    def peek(self) -> Optional[Tuple[float, Any]]:
        if not self._queue:
            return None
        time, _, event = self._queue[0]
        return time, event

    def pop(self) -> Tuple[float, Any]:
        time, _, event = heapq.heappop(self._queue)
        return time, event

    def pop_due(self, t: float) -> Optional[Tuple[float, Any]]:
        if self._queue and self._queue[0][0] <= t:
            return self.pop()
        return None

    def __len__(self):
        return len(self._queue)


@dataclass
class LinkTimeline:
    """
    Delivery times of a verification round trip: uplink latency, the edge's round time (the
    edge serves one request at a time and is busy until edge_free) and downlink latency,
    each direction charged for its own payload bits.
    """
    channel: ChannelConfig
    edge_round_s: float
    edge_free: float = 0.0  # the edge prefill finishes here

    def uplink_arrival(self, send_time: float, bits: int) -> float:
        return send_time + latency(bits, self.channel)

    def reply_delivery(self, arrival: float, bits: int) -> float:
        start = max(arrival, self.edge_free)
        self.edge_free = start + self.edge_round_s
        return self.edge_free + latency(bits, self.channel)
