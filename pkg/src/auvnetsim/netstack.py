"""Link and network layer: TDMA medium access, addressing, static routes.

Addresses are single bytes; 0 is the broadcast address and is valid only as
a destination. Datagrams carry a fixed header overhead on the wire and a
body of at most 255 bytes. Each transmitting node owns one TDMA slot per
frame and sends at most one datagram per owned slot, so transmissions from
distinct nodes can never overlap by construction.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

BROADCAST = 0
HEADER_OVERHEAD_BYTES = 4  # addressing/port/len on the wire
DEFAULT_BITRATE_BPS = 13900.0
DEFAULT_QUEUE_CAP = 64
MAX_BODY_BYTES = 255


class NetError(Exception):
    pass


class QueueFull(NetError):
    """Send rejected: the node's FIFO is at capacity."""


class NoSlot(NetError):
    """Node has no TDMA slot assignment."""


class AirtimeTooLong(NetError):
    """Packet cannot fit in a slot even when starting at its beginning."""


class RouteLoop(NetError):
    """Static route table contains a next-hop cycle."""


def check_address(addr: int, allow_broadcast: bool = False) -> int:
    lo = 0 if allow_broadcast else 1
    if not isinstance(addr, int) or not lo <= addr <= 255:
        raise ValueError(f"address out of range: {addr!r}")
    return addr


@dataclass(frozen=True)
class Datagram:
    src: int
    dst: int
    port: int  # application stream class
    body: bytes

    def __post_init__(self):
        check_address(self.src)
        check_address(self.dst, allow_broadcast=True)
        if len(self.body) > MAX_BODY_BYTES:
            raise ValueError(f"body is {len(self.body)} bytes, max {MAX_BODY_BYTES}")

    def wire_bytes(self) -> int:
        return HEADER_OVERHEAD_BYTES + len(self.body)


def airtime_s(wire_bytes: int, bitrate_bps: float = DEFAULT_BITRATE_BPS) -> float:
    """Seconds the modem occupies the channel for a given wire size."""
    return wire_bytes * 8.0 / bitrate_bps


@dataclass(frozen=True)
class TdmaConfig:
    slot_of: dict[int, int]  # node address -> slot index
    slots_per_frame: int = 3
    slot_duration_s: float = 2.0
    guard_s: float = 0.5

    def __post_init__(self):
        if self.slots_per_frame < 1:
            raise ValueError("slots_per_frame must be >= 1")
        if self.guard_s < 0 or self.slot_duration_s <= self.guard_s:
            raise ValueError("slot_duration_s must exceed guard_s")
        for addr, slot in self.slot_of.items():
            if not 0 <= slot < self.slots_per_frame:
                raise ValueError(f"slot {slot} for node {addr} outside frame")

    @property
    def frame_s(self) -> float:
        return self.slots_per_frame * self.slot_duration_s


def tdma_next_tx_start(now: float, node: int, cfg: TdmaConfig, airtime: float) -> float:
    """Earliest time >= now a node may start a transmission of given airtime.

    Frames repeat from t = 0. The transmission must end at least guard_s
    before the owned slot closes.
    """
    slot = cfg.slot_of.get(node)
    if slot is None:
        raise NoSlot(f"node {node} owns no slot")
    if airtime + cfg.guard_s > cfg.slot_duration_s:
        raise AirtimeTooLong(f"airtime {airtime:.3f}s cannot fit a {cfg.slot_duration_s:.3f}s slot")
    period = cfg.frame_s
    offset = slot * cfg.slot_duration_s
    k = math.floor((now - offset) / period)
    while True:
        start = k * period + offset
        t = max(now, start)
        if t + airtime <= start + cfg.slot_duration_s - cfg.guard_s:
            return t
        k += 1


def tdma_slot_end(t: float, node: int, cfg: TdmaConfig) -> float:
    """End of the slot occurrence containing time t for a node's slot."""
    offset = cfg.slot_of[node] * cfg.slot_duration_s
    k = math.floor((t - offset) / cfg.frame_s)
    return k * cfg.frame_s + offset + cfg.slot_duration_s


class RouteTable:
    """Static destination -> next-hop map, loop-checked at construction."""

    def __init__(self, hops: dict[int, int], nodes: set[int] | None = None):
        self._hops = {check_address(d): check_address(h) for d, h in hops.items()}
        limit = len(nodes) if nodes else len(self._hops) + 1
        for dst in self._hops:
            cur, steps = dst, 0
            seen = {dst}
            while True:
                nxt = self._hops.get(cur)
                if nxt is None or nxt == cur:
                    break  # dead end or delivery point
                if nxt in seen or steps >= limit:
                    raise RouteLoop(f"route to {dst} cycles at {nxt}")
                seen.add(nxt)
                cur = nxt
                steps += 1

    def next_hop(self, dst: int) -> int | None:
        return self._hops.get(dst)


def classify_rx(addr: int, dgram: Datagram, routes: RouteTable) -> str:
    """What a node should do with a decoded transmission.

    'deliver' hands the body to the application, 'forward' re-enqueues the
    datagram toward its destination, 'overhear' only records the reception.
    """
    if dgram.dst == BROADCAST or dgram.dst == addr:
        return "deliver"
    if routes.next_hop(dgram.dst) == addr:
        return "forward"
    return "overhear"


@dataclass
class TxQueue:
    """Per-node FIFO of datagrams awaiting a slot."""

    cap: int = DEFAULT_QUEUE_CAP
    _items: deque = field(default_factory=deque)

    def push(self, dgram: Datagram) -> None:
        if len(self._items) >= self.cap:
            raise QueueFull(f"queue at capacity ({self.cap})")
        self._items.append(dgram)

    def pop(self) -> Datagram:
        return self._items.popleft()

    def __len__(self) -> int:
        return len(self._items)

    def __bool__(self) -> bool:
        return bool(self._items)
