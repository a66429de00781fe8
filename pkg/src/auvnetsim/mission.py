"""Coordination state machines for the depth-change mission.

Three roles cooperate over the acoustic network:

  leader    holds at its survey depth until triggered, descends to the
            safety depth while logging CTD samples, picks the depth of
            minimum measured sound speed, ascends to a staging depth,
            then descends to the chosen depth while periodically
            broadcasting reposition commands.
  follower  transmits a fixed burst of data packets, waits, repositions
            on the first command received (later copies are redundant),
            then repeats the burst at the new depth.
  buoy      counts overheard data packets and issues the mission trigger
            once the burst completes or a timeout passes; in manual mode
            only an operator action fires it.

Handlers mutate the per-role state in place and return the actions the
engine must carry out. They hold no timers; time arrives only through
events. Off-script events are logged and leave the state unchanged.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

from .msgcodec import (
    Leaf,
    StreamType,
    Struct,
    encode_value,
    encode_values,
    decode_values,
    flatten,
    frame_overhead,
    unflatten,
)
from .netstack import MAX_BODY_BYTES
from .vehicle import CtdCast, optimal_depth

log = logging.getLogger(__name__)

TRIGGER_STREAM = "buoy/trigger"
REPOS_STREAM = "leader/repos_cmd"
DATA_STREAM = "follower/data"

# leader phases
BASELINE_HOLD = "BaselineHold"
CTD_DESCENT = "CtdDescent"
COMPUTE_OPTIMAL = "ComputeOptimal"
STAGING_ASCENT = "StagingAscent"
BROADCAST_DESCENT = "BroadcastDescent"
HOLD_OPTIMAL = "HoldOptimal"

# follower phases (BaselineHold shared)
TX_BASELINE = "TxBaseline"
WAIT = "Wait"
REPOSITION = "Reposition"
TX_OPTIMIZED = "TxOptimized"
DONE = "Done"

# buoy phases
OVERHEAR = "Overhear"
TRIGGER_SENT = "TriggerSent"

AUTO = "Auto"
MANUAL = "Manual"


@dataclass(frozen=True)
class MissionParams:
    burst_count: int = 100
    packet_payload_bytes: int = 64
    burst_period_s: float = 5.1
    safety_depth_m: float = 40.0
    staging_depth_m: float = 3.0
    broadcast_interval_s: float = 5.0
    stabilization_band_m: float = 0.5

    def __post_init__(self) -> None:
        for name in (
            "burst_count",
            "packet_payload_bytes",
            "burst_period_s",
            "safety_depth_m",
            "staging_depth_m",
            "broadcast_interval_s",
            "stabilization_band_m",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"mission.{name} must be positive")
        if self.packet_payload_bytes > MAX_BODY_BYTES:
            raise ValueError("mission.packet_payload_bytes exceeds the datagram body cap")
        if self.packet_payload_bytes < 12:
            raise ValueError("mission.packet_payload_bytes too small for a framed data packet")


# ---------------------------------------------------------------------------
# events (engine -> machine)


@dataclass(frozen=True)
class Tick:
    t: float


@dataclass(frozen=True)
class TriggerReceived:
    t: float


@dataclass(frozen=True)
class DepthReached:
    depth_m: float
    t: float


@dataclass(frozen=True)
class CtdSampleTaken:
    depth_m: float
    speed_mps: float


@dataclass(frozen=True)
class StartBaseline:
    t: float


@dataclass(frozen=True)
class ReposCmd:
    depth_m: float
    t: float


@dataclass(frozen=True)
class Overheard:
    stream: str
    t: float


@dataclass(frozen=True)
class OperatorTrigger:
    t: float


# actions (machine -> engine)


@dataclass(frozen=True)
class SetTargetDepth:
    depth_m: float


@dataclass(frozen=True)
class Broadcast:
    stream: str
    values: tuple


@dataclass(frozen=True)
class SendData:
    seq: int


@dataclass(frozen=True)
class EmitOptimalDepth:
    depth_m: float


def _unexpected(role: str, phase: str, event: object) -> None:
    log.warning("%s in %s ignored unexpected %s", role, phase, type(event).__name__)


# ---------------------------------------------------------------------------
# role states


@dataclass
class LeaderState:
    phase: str = BASELINE_HOLD
    optimal_depth_m: float | None = None
    last_broadcast_t: float | None = None
    cast: CtdCast = field(default_factory=CtdCast)


@dataclass
class FollowerState:
    phase: str = BASELINE_HOLD
    packets_sent_this_phase: int = 0
    repositioned: bool = False
    seq: int = 0
    next_send_t: float | None = None
    target_depth_m: float | None = None


@dataclass
class BuoyState:
    phase: str = OVERHEAR
    overheard_count: int = 0
    mode: str = AUTO
    timeout_s: float = 612.0
    run_id: int = 0


# ---------------------------------------------------------------------------
# transition handlers


def leader_handle(state: LeaderState, event: object, params: MissionParams) -> list:
    acts: list = []
    band = params.stabilization_band_m
    if isinstance(event, TriggerReceived):
        if state.phase == BASELINE_HOLD:
            state.phase = CTD_DESCENT
            state.cast = CtdCast()
            acts.append(SetTargetDepth(params.safety_depth_m))
        else:
            _unexpected("leader", state.phase, event)
    elif isinstance(event, CtdSampleTaken):
        if state.phase == CTD_DESCENT:
            state.cast.add(event.depth_m, event.speed_mps)
        else:
            _unexpected("leader", state.phase, event)
    elif isinstance(event, DepthReached):
        if state.phase == CTD_DESCENT and abs(event.depth_m - params.safety_depth_m) <= band:
            state.optimal_depth_m = optimal_depth(state.cast)
            state.phase = COMPUTE_OPTIMAL
            acts.append(EmitOptimalDepth(state.optimal_depth_m))
        elif state.phase == STAGING_ASCENT and abs(event.depth_m - params.staging_depth_m) <= band:
            state.phase = BROADCAST_DESCENT
            state.last_broadcast_t = None
            acts.append(SetTargetDepth(state.optimal_depth_m))
        elif (
            state.phase == BROADCAST_DESCENT
            and state.optimal_depth_m is not None
            and abs(event.depth_m - state.optimal_depth_m) <= band
        ):
            state.phase = HOLD_OPTIMAL
        else:
            _unexpected("leader", state.phase, event)
    elif isinstance(event, Tick):
        if state.phase == COMPUTE_OPTIMAL:
            state.phase = STAGING_ASCENT
            acts.append(SetTargetDepth(params.staging_depth_m))
        elif state.phase == BROADCAST_DESCENT:
            due = (
                state.last_broadcast_t is None
                or event.t - state.last_broadcast_t >= params.broadcast_interval_s - 1e-9
            )
            if due:
                state.last_broadcast_t = event.t
                acts.append(Broadcast(REPOS_STREAM, (depth_to_dm(state.optimal_depth_m),)))
        # ticks in other phases are routine
    else:
        _unexpected("leader", state.phase, event)
    return acts


def follower_handle(state: FollowerState, event: object, params: MissionParams) -> list:
    acts: list = []
    if isinstance(event, StartBaseline):
        if state.phase == BASELINE_HOLD:
            state.phase = TX_BASELINE
            state.packets_sent_this_phase = 0
            state.next_send_t = event.t
        else:
            _unexpected("follower", state.phase, event)
    elif isinstance(event, Tick):
        if state.phase in (TX_BASELINE, TX_OPTIMIZED):
            while state.next_send_t is not None and event.t >= state.next_send_t - 1e-9:
                acts.append(SendData(state.seq))
                state.seq += 1
                state.packets_sent_this_phase += 1
                if state.packets_sent_this_phase >= params.burst_count:
                    state.next_send_t = None
                    state.phase = WAIT if state.phase == TX_BASELINE else DONE
                else:
                    state.next_send_t += params.burst_period_s
    elif isinstance(event, ReposCmd):
        if state.repositioned:
            return acts  # redundant copies are expected; drop silently
        if state.phase in (TX_BASELINE, WAIT):
            if state.phase == TX_BASELINE:
                unsent = params.burst_count - state.packets_sent_this_phase
                log.warning("follower abandons baseline burst, %d packets unsent", unsent)
            state.phase = REPOSITION
            state.repositioned = True
            state.next_send_t = None
            state.target_depth_m = event.depth_m
            acts.append(SetTargetDepth(event.depth_m))
        else:
            _unexpected("follower", state.phase, event)
    elif isinstance(event, DepthReached):
        if (
            state.phase == REPOSITION
            and state.target_depth_m is not None
            and abs(event.depth_m - state.target_depth_m) <= params.stabilization_band_m
        ):
            state.phase = TX_OPTIMIZED
            state.packets_sent_this_phase = 0
            state.next_send_t = event.t
        else:
            _unexpected("follower", state.phase, event)
    else:
        _unexpected("follower", state.phase, event)
    return acts


def buoy_handle(state: BuoyState, event: object, params: MissionParams) -> list:
    acts: list = []
    if isinstance(event, Overheard):
        state.overheard_count += 1
        if (
            state.phase == OVERHEAR
            and state.mode == AUTO
            and state.overheard_count >= params.burst_count
        ):
            acts.append(_fire_trigger(state))
    elif isinstance(event, Tick):
        if state.phase == OVERHEAR and state.mode == AUTO and event.t >= state.timeout_s:
            acts.append(_fire_trigger(state))
    elif isinstance(event, OperatorTrigger):
        if state.phase == OVERHEAR:
            acts.append(_fire_trigger(state))
        else:
            log.warning("duplicate trigger ignored")
    else:
        _unexpected("buoy", state.phase, event)
    return acts


def _fire_trigger(state: BuoyState) -> Broadcast:
    state.phase = TRIGGER_SENT
    return Broadcast(TRIGGER_STREAM, (state.run_id,))


# ---------------------------------------------------------------------------
# message definitions


@dataclass(frozen=True)
class MessageDef:
    stream: str
    schema: Struct

    @property
    def field_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.schema.fields)


def message_defs() -> dict[str, MessageDef]:
    """Schemas for the three mission streams, keyed by stream name."""
    return {
        TRIGGER_STREAM: MessageDef(TRIGGER_STREAM, Struct((("run_id", Leaf("uint")),))),
        REPOS_STREAM: MessageDef(REPOS_STREAM, Struct((("depth_dm", Leaf("uint")),))),
        DATA_STREAM: MessageDef(
            DATA_STREAM, Struct((("seq", Leaf("uint")), ("pad", Leaf("bytes"))))
        ),
    }


def encode_message(defn: MessageDef, values) -> bytes:
    """Encode positional field values (declaration order) to a payload."""
    msg = dict(zip(defn.field_names, values, strict=True))
    return encode_values(flatten(msg, defn.schema))


def decode_message(defn: MessageDef, payload: bytes) -> dict:
    return unflatten(decode_values(payload), defn.schema)


def depth_to_dm(depth_m: float) -> int:
    """Decimeter quantization, halves rounding up."""
    return int(math.floor(depth_m * 10.0 + 0.5))


def dm_to_depth_m(depth_dm: int) -> float:
    return depth_dm / 10.0


def _bytes_head_len(n: int) -> int:
    if n < 24:
        return 1
    if n < 1 << 8:
        return 2
    if n < 1 << 16:
        return 3
    return 5


def make_data_values(seq: int, total_framed_bytes: int) -> list:
    """Data packet field values padded so the framed packet is exactly the target size."""
    fixed = frame_overhead(StreamType.PUBLISHER) + len(encode_value(seq))
    for head in (1, 2, 3, 5):
        pad_len = total_framed_bytes - fixed - head
        if pad_len >= 0 and _bytes_head_len(pad_len) == head:
            return [seq, b"\x00" * pad_len]
    raise ValueError(f"cannot pad seq {seq} to a {total_framed_bytes}-byte framed packet")
