"""Deterministic discrete-event simulation core.

Scenario files (JSON) describe the nodes, TDMA schedule, acoustic channel,
link budget, and mission parameters. A run replays the full choreography:
followers transmit a data burst, the buoy triggers the leader, the leader
casts for the sound-speed minimum and redistributes the swarm, followers
repeat the burst at the new depth.

Timing model for one data packet:

    app send --0.43 s--> modem queue --TDMA wait--> transmit --airtime-->
    propagation --> modem rx --0.43 s--> app deliver

``pkt_tx`` is stamped when the packet enters the transmit pipeline (slot
start minus the sender-side processing delay) and ``pkt_rx`` at app
delivery, so the logged end-to-end delay is processing + airtime +
propagation, independent of how long the packet waited for its slot.
Mission markers (``trigger_tx``, ``repos_cmd_tx``) are stamped when the
state machine acts.

Reproducibility: the master seed fans out through ``SeedSequence.spawn``
into three independent streams (channel draws, drift, CTD noise), receiver
draws happen in ascending address order, and the event log serializer uses
a fixed field order with 6-decimal floats, so identical configurations
produce byte-identical logs.
"""

from __future__ import annotations

import heapq
import json
import logging
import math
import statistics
import time
from dataclasses import dataclass, field, replace
from itertools import count
from pathlib import Path

import numpy as np

from .channel import (
    AnalyticDuctModel,
    GridTlModel,
    LinkBudget,
    SoundSpeedProfile,
    decide_reception,
)
from .mission import (
    AUTO,
    CTD_DESCENT,
    DATA_STREAM,
    DONE,
    MANUAL,
    REPOS_STREAM,
    TRIGGER_STREAM,
    BuoyState,
    Broadcast,
    CtdSampleTaken,
    DepthReached,
    EmitOptimalDepth,
    FollowerState,
    LeaderState,
    MissionParams,
    OperatorTrigger,
    Overheard,
    ReposCmd,
    SendData,
    SetTargetDepth,
    StartBaseline,
    Tick,
    TriggerReceived,
    buoy_handle,
    decode_message,
    dm_to_depth_m,
    encode_message,
    follower_handle,
    leader_handle,
    make_data_values,
    message_defs,
)
from .msgcodec import CodecError, Packet, StreamRegistry, StreamType, deframe, frame
from .netstack import (
    BROADCAST,
    NetError,
    Datagram,
    QueueFull,
    RouteTable,
    TdmaConfig,
    TxQueue,
    airtime_s,
    classify_rx,
    tdma_next_tx_start,
)
from .vehicle import VehicleState, ctd_sample, step_kinematics

log = logging.getLogger(__name__)

DEFAULT_TICK_DT_S = 0.5
DEFAULT_PROCESSING_DELAY_S = 0.86
DEFAULT_SETTLING_DELAY_S = 30.0
DEFAULT_BUOY_TIMEOUT_S = 612.0

STREAM_IDS = {TRIGGER_STREAM: 1, REPOS_STREAM: 2, DATA_STREAM: 3}

EVENT_KINDS = frozenset(
    {
        "pkt_tx",
        "pkt_rx",
        "pkt_lost",
        "pkt_overheard",
        "trigger_tx",
        "trigger_rx",
        "optimal_depth",
        "repos_cmd_tx",
        "repos_cmd_rx",
        "depth_reached",
        "state",
        "run_meta",
    }
)

ROLES = ("leader", "follower", "buoy")


class ConfigError(ValueError):
    """Scenario rejected before the run starts; message names the key."""


# ---------------------------------------------------------------------------
# scenario configuration


@dataclass
class NodeSpec:
    addr: int
    role: str
    name: str
    x: float
    y: float
    depth_m: float
    slot: int
    heading_deg: float = 0.0
    drift_sigma_mps: float = 0.0


@dataclass
class ScenarioConfig:
    seed: int
    duration_s: float
    seabed_depth_m: float
    mode: str
    pace_factor: float
    tick_dt_s: float
    nodes: list[NodeSpec]
    tdma: TdmaConfig
    bitrate_bps: float
    processing_delay_s: float
    tl_model: object
    ssp: SoundSpeedProfile
    budget: LinkBudget
    directivity_db: float
    mission: MissionParams
    buoy_mode: str
    settling_delay_s: float
    buoy_timeout_s: float
    routes: dict[int, int]


class _Section:
    """Tracks consumed keys so leftovers are reported with their path."""

    def __init__(self, data, path: str):
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected an object")
        self._d = dict(data)
        self.path = path

    _REQUIRED = object()

    def take(self, key, default=_REQUIRED):
        if key in self._d:
            return self._d.pop(key)
        if default is self._REQUIRED:
            raise ConfigError(f"{self.path}.{key}: required key missing")
        return default

    def has(self, key) -> bool:
        return key in self._d

    def sub(self, key, default=_REQUIRED) -> "_Section | None":
        raw = self.take(key, default)
        if raw is None:
            return None
        return _Section(raw, f"{self.path}.{key}")

    def finish(self) -> None:
        if self._d:
            key = sorted(self._d)[0]
            raise ConfigError(f"{self.path}.{key}: unknown key")


def _num(path: str, v, lo=None, hi=None) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {v!r}")
    v = float(v)
    if lo is not None and v < lo:
        raise ConfigError(f"{path}: must be >= {lo}, got {v}")
    if hi is not None and v > hi:
        raise ConfigError(f"{path}: must be <= {hi}, got {v}")
    return v


def _intval(path: str, v, lo=None, hi=None) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{path}: expected an integer, got {v!r}")
    if lo is not None and v < lo:
        raise ConfigError(f"{path}: must be >= {lo}, got {v}")
    if hi is not None and v > hi:
        raise ConfigError(f"{path}: must be <= {hi}, got {v}")
    return v


def _strval(path: str, v, allowed=None) -> str:
    if not isinstance(v, str):
        raise ConfigError(f"{path}: expected a string, got {v!r}")
    if allowed is not None and v not in allowed:
        raise ConfigError(f"{path}: must be one of {sorted(allowed)}, got {v!r}")
    return v


def parse_scenario(raw: dict, base_dir: Path | str = ".") -> ScenarioConfig:
    base_dir = Path(base_dir)
    top = _Section(raw, "scenario")

    seed = _intval("scenario.seed", top.take("seed"), lo=0, hi=2**64 - 1)
    duration_s = _num("scenario.duration_s", top.take("duration_s"), lo=1e-9)
    seabed = _num("scenario.seabed_depth_m", top.take("seabed_depth_m", 108.0), lo=1.0)
    mode = _strval("scenario.mode", top.take("mode", "fast"), {"fast", "paced"})
    pace = _num("scenario.pace_factor", top.take("pace_factor", 10.0), lo=1e-9)
    tick_dt = _num("scenario.tick_dt_s", top.take("tick_dt_s", DEFAULT_TICK_DT_S), lo=1e-3)

    tdma_sec = top.sub("tdma", {})
    slots_per_frame = _intval("scenario.tdma.slots_per_frame", tdma_sec.take("slots_per_frame", 3), lo=1)
    slot_dur = _num("scenario.tdma.slot_duration_s", tdma_sec.take("slot_duration_s", 2.0), lo=1e-3)
    guard = _num("scenario.tdma.guard_s", tdma_sec.take("guard_s", 0.5), lo=0.0)
    tdma_sec.finish()

    nodes_raw = top.take("nodes")
    if not isinstance(nodes_raw, list) or not nodes_raw:
        raise ConfigError("scenario.nodes: expected a non-empty array")
    nodes: list[NodeSpec] = []
    slot_of: dict[int, int] = {}
    for i, nd in enumerate(nodes_raw):
        ns = _Section(nd, f"scenario.nodes[{i}]")
        addr = _intval(f"{ns.path}.addr", ns.take("addr"), lo=1, hi=255)
        role = _strval(f"{ns.path}.role", ns.take("role"), set(ROLES))
        x = _num(f"{ns.path}.x", ns.take("x"))
        y = _num(f"{ns.path}.y", ns.take("y"))
        depth = _num(f"{ns.path}.depth", ns.take("depth"), lo=0.0, hi=seabed)
        slot = _intval(f"{ns.path}.slot", ns.take("slot"), lo=0, hi=slots_per_frame - 1)
        heading = _num(f"{ns.path}.heading", ns.take("heading", 0.0))
        drift = _num(f"{ns.path}.drift", ns.take("drift", 0.0), lo=0.0)
        ns.finish()
        if addr in slot_of:
            raise ConfigError(f"scenario.nodes[{i}].addr: duplicate address {addr}")
        if slot in slot_of.values():
            raise ConfigError(f"scenario.nodes[{i}].slot: slot {slot} already assigned")
        slot_of[addr] = slot
        nodes.append(NodeSpec(addr, role, role, x, y, depth, slot, heading, drift))
    by_role = {r: [n for n in nodes if n.role == r] for r in ROLES}
    if len(by_role["leader"]) != 1:
        raise ConfigError("scenario.nodes: exactly one leader required")
    if len(by_role["buoy"]) != 1:
        raise ConfigError("scenario.nodes: exactly one buoy required")
    if not by_role["follower"]:
        raise ConfigError("scenario.nodes: at least one follower required")
    for r, group in by_role.items():
        if len(group) > 1:
            for n in group:
                n.name = f"{r}{n.addr}"

    try:
        tdma = TdmaConfig(
            slot_of=slot_of,
            slots_per_frame=slots_per_frame,
            slot_duration_s=slot_dur,
            guard_s=guard,
        )
    except (ValueError, NetError) as e:
        raise ConfigError(f"scenario.tdma: {e}") from e

    modem = top.sub("modem", {})
    bitrate = _num("scenario.modem.bitrate_bps", modem.take("bitrate_bps", 13900.0), lo=1.0)
    source_level = _num("scenario.modem.source_level_db", modem.take("source_level_db", 187.0))
    f_khz = _num("scenario.modem.f_khz", modem.take("f_khz", 26.0), lo=0.1)
    proc_delay = _num(
        "scenario.modem.processing_delay_s",
        modem.take("processing_delay_s", DEFAULT_PROCESSING_DELAY_S),
        lo=0.0,
    )
    modem.finish()

    ssp_path = base_dir / _strval("scenario.ssp_path", top.take("ssp_path"))
    if not ssp_path.is_file():
        raise ConfigError(f"scenario.ssp_path: no such file: {ssp_path}")
    try:
        ssp = SoundSpeedProfile.from_csv(ssp_path)
    except (ValueError, OSError) as e:
        raise ConfigError(f"scenario.ssp_path: {e}") from e

    chan = top.sub("channel", {"analytic": {}})
    if chan.has("analytic") and chan.has("grid"):
        raise ConfigError("scenario.channel: analytic and grid are mutually exclusive")
    if chan.has("grid"):
        grid = chan.sub("grid")
        gpath = base_dir / _strval(f"{grid.path}.path", grid.take("path"))
        strict = grid.take("strict", False)
        if not isinstance(strict, bool):
            raise ConfigError(f"{grid.path}.strict: expected a boolean")
        grid.finish()
        if not gpath.is_file():
            raise ConfigError(f"{grid.path}.path: no such file: {gpath}")
        try:
            tl_model: object = GridTlModel.from_csv(gpath, strict=strict)
        except (ValueError, OSError) as e:
            raise ConfigError(f"{grid.path}: {e}") from e
    else:
        an = chan.sub("analytic", {})
        duct_depth = an.take("duct_depth_m", None)
        if duct_depth is None:
            duct_depth = ssp.min_speed_depth()
        else:
            duct_depth = _num(f"{an.path}.duct_depth_m", duct_depth, lo=0.0, hi=seabed)
        tl_model = AnalyticDuctModel(
            duct_depth_m=duct_depth,
            k_spread=_num(f"{an.path}.k_spread", an.take("k_spread", 1.5), lo=0.1),
            f_khz=f_khz,
            duct_sigma_m=_num(f"{an.path}.duct_sigma_m", an.take("duct_sigma_m", 6.0), lo=0.1),
            duct_gain_db=_num(f"{an.path}.duct_gain_db", an.take("duct_gain_db", 25.0), lo=0.0),
        )
        an.finish()
    chan.finish()

    link = top.sub("link", {})
    budget = LinkBudget(
        source_level_db=source_level,
        noise_level_db=_num("scenario.link.noise_level_db", link.take("noise_level_db", 60.0)),
        snr50_db=_num("scenario.link.snr50_db", link.take("snr50_db", 10.0)),
        snr_slope_db=_num("scenario.link.snr_slope_db", link.take("snr_slope_db", 1.5), lo=1e-3),
    )
    directivity = _num("scenario.link.directivity_db", link.take("directivity_db", 0.0), lo=0.0)
    link.finish()

    mis = top.sub("mission", {})
    buoy_mode = _strval("scenario.mission.buoy_mode", mis.take("buoy_mode", AUTO), {AUTO, MANUAL})
    settling = _num(
        "scenario.mission.settling_delay_s",
        mis.take("settling_delay_s", DEFAULT_SETTLING_DELAY_S),
        lo=0.0,
    )
    timeout = _num(
        "scenario.mission.buoy_timeout_s",
        mis.take("buoy_timeout_s", DEFAULT_BUOY_TIMEOUT_S),
        lo=1e-9,
    )
    mp_kwargs = {}
    for key, conv in (
        ("burst_count", lambda v: _intval("scenario.mission.burst_count", v, lo=1)),
        ("packet_payload_bytes", lambda v: _intval("scenario.mission.packet_payload_bytes", v, lo=1)),
        ("burst_period_s", lambda v: _num("scenario.mission.burst_period_s", v, lo=1e-3)),
        ("safety_depth_m", lambda v: _num("scenario.mission.safety_depth_m", v, lo=0.1, hi=seabed)),
        ("staging_depth_m", lambda v: _num("scenario.mission.staging_depth_m", v, lo=0.1, hi=seabed)),
        ("broadcast_interval_s", lambda v: _num("scenario.mission.broadcast_interval_s", v, lo=1e-3)),
        ("stabilization_band_m", lambda v: _num("scenario.mission.stabilization_band_m", v, lo=1e-3)),
    ):
        if mis.has(key):
            mp_kwargs[key] = conv(mis.take(key))
    mis.finish()
    try:
        mission = MissionParams(**mp_kwargs)
    except ValueError as e:
        raise ConfigError(f"scenario.mission: {e}") from e

    wire = 4 + mission.packet_payload_bytes
    if airtime_s(wire, bitrate) > slot_dur - guard:
        raise ConfigError(
            "scenario.tdma.slot_duration_s: slot too short for a "
            f"{mission.packet_payload_bytes}-byte packet plus guard"
        )

    routes_raw = top.take("routes", {})
    if not isinstance(routes_raw, dict):
        raise ConfigError("scenario.routes: expected an object")
    addrs = {n.addr for n in nodes}
    routes: dict[int, int] = {}
    for k, v in routes_raw.items():
        try:
            dst = int(k)
        except ValueError:
            raise ConfigError(f"scenario.routes.{k}: key must be an address") from None
        hop = _intval(f"scenario.routes.{k}", v, lo=1, hi=255)
        if dst not in addrs or hop not in addrs:
            raise ConfigError(f"scenario.routes.{k}: unknown address")
        routes[dst] = hop
    try:
        RouteTable(routes, nodes=addrs)
    except (ValueError, NetError) as e:
        raise ConfigError(f"scenario.routes: {e}") from e

    top.finish()
    return ScenarioConfig(
        seed=seed,
        duration_s=duration_s,
        seabed_depth_m=seabed,
        mode=mode,
        pace_factor=pace,
        tick_dt_s=tick_dt,
        nodes=nodes,
        tdma=tdma,
        bitrate_bps=bitrate,
        processing_delay_s=proc_delay,
        tl_model=tl_model,
        ssp=ssp,
        budget=budget,
        directivity_db=directivity,
        mission=mission,
        buoy_mode=buoy_mode,
        settling_delay_s=settling,
        buoy_timeout_s=timeout,
        routes=routes,
    )


def load_scenario(path) -> ScenarioConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"scenario file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}") from e
    return parse_scenario(raw, path.parent)


def apply_overrides(raw: dict, assignments: list[str]) -> dict:
    """Apply dotted-path key=value overrides to a raw scenario dict."""
    for item in assignments:
        key, sep, text = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r}: expected key=value")
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
        target = raw
        parts = key.split(".")
        for part in parts[:-1]:
            if isinstance(target, list):
                target = target[int(part)]
            else:
                target = target.setdefault(part, {})
            if not isinstance(target, (dict, list)):
                raise ConfigError(f"override {item!r}: {part} is not an object")
        leaf = parts[-1]
        if isinstance(target, list):
            target[int(leaf)] = value
        else:
            target[leaf] = value
    return raw


def set_follower_range(raw: dict, range_m: float) -> dict:
    """Place all followers range_m from the leader along x (raw dict edit)."""
    if range_m < 1.0:
        raise ConfigError(f"sweep range must be >= 1 m, got {range_m}")
    nodes = raw.get("nodes", [])
    leaders = [n for n in nodes if n.get("role") == "leader"]
    if not leaders:
        raise ConfigError("scenario.nodes: no leader to measure range from")
    lx, ly = leaders[0].get("x", 0.0), leaders[0].get("y", 0.0)
    for n in nodes:
        if n.get("role") == "follower":
            n["x"] = lx + range_m
            n["y"] = ly
    return raw


# ---------------------------------------------------------------------------
# metrics and event log


@dataclass
class PhaseStats:
    sent: int = 0
    received: int = 0

    @property
    def per(self) -> float | None:
        if self.sent == 0:
            return None
        return (self.sent - self.received) / self.sent


@dataclass
class RunMetrics:
    phases: dict[str, PhaseStats] = field(
        default_factory=lambda: {"baseline": PhaseStats(), "optimized": PhaseStats()}
    )
    delays: list[tuple[int, float]] = field(default_factory=list)
    optimal_depth_m: float | None = None
    completion: bool = False

    def to_dict(self) -> dict:
        delay_values = [d for _, d in self.delays]
        return {
            "phases": {
                ph: {"sent": st.sent, "received": st.received, "per": st.per}
                for ph, st in self.phases.items()
            },
            "delays": [[seq, d] for seq, d in self.delays],
            "delay_mean_s": statistics.fmean(delay_values) if delay_values else None,
            "delay_median_s": statistics.median(delay_values) if delay_values else None,
            "optimal_depth_m": self.optimal_depth_m,
            "completion": self.completion,
        }


def format_event(t, node, ev, seq=None, depth_m=None, detail=None) -> str:
    parts = [f'"t": {t:.6f}', f'"node": {json.dumps(node)}', f'"ev": {json.dumps(ev)}']
    if seq is not None:
        parts.append(f'"seq": {seq}')
    if depth_m is not None:
        parts.append(f'"depth_m": {depth_m:.6f}')
    if detail is not None:
        parts.append(f'"detail": {json.dumps(detail, sort_keys=True)}')
    return "{" + ", ".join(parts) + "}"


# ---------------------------------------------------------------------------
# simulation


class _TxItem:
    __slots__ = ("dgram", "ready_t", "stream", "seq", "tp")

    def __init__(self, dgram, ready_t, stream, seq):
        self.dgram = dgram
        self.ready_t = ready_t
        self.stream = stream
        self.seq = seq
        self.tp = None  # pipeline-start stamp, set at slot grant


class _NodeRt:
    __slots__ = ("spec", "v", "mstate", "txq", "mac_busy", "tick_at", "sched_send_t", "logged_phase")

    def __init__(self, spec: NodeSpec, mstate):
        self.spec = spec
        self.v = VehicleState(
            x=spec.x,
            y=spec.y,
            depth_m=spec.depth_m,
            heading_deg=spec.heading_deg,
            drift_sigma_mps=spec.drift_sigma_mps,
            pinned=spec.role == "buoy",
        )
        self.mstate = mstate
        self.txq = TxQueue()
        self.mac_busy = False
        self.tick_at = None
        self.sched_send_t = None
        self.logged_phase = mstate.phase

    @property
    def name(self) -> str:
        return self.spec.name


class ControlChannel:
    """Interface for paced runs: inbound commands, outbound frames.

    poll() returns (command, reply) pairs; reply sends a frame only to the
    command's origin, publish() fans out to every subscriber.
    """

    def poll(self) -> list[tuple[dict, object]]:
        return []

    def publish(self, msg: dict) -> None:  # pragma: no cover - interface default
        pass


class Simulation:
    def __init__(self, cfg: ScenarioConfig, collect_events: bool = True, run_id: int = 0,
                 event_hook=None):
        self.cfg = cfg
        self.t = 0.0
        self._heap: list = []
        self._counter = count()
        self.events: list[str] = []
        self._collect = collect_events
        self.event_hook = event_hook
        self.metrics = RunMetrics()
        self.tx_log: list[tuple[int, float, float]] = []
        self._proc_half = cfg.processing_delay_s / 2.0
        self._phase_of: dict[tuple[int, int], str] = {}
        self._rx_seen: set[tuple[int, int, int]] = set()
        self._trigger_injected = False

        ch_ss, drift_ss, ctd_ss = np.random.SeedSequence(cfg.seed).spawn(3)
        self.rng_channel = np.random.default_rng(ch_ss)
        self.rng_drift = np.random.default_rng(drift_ss)
        self.rng_ctd = np.random.default_rng(ctd_ss)

        self.registry = StreamRegistry(dict(STREAM_IDS))
        self.defs = message_defs()
        self.routes = RouteTable(cfg.routes, nodes={n.addr for n in cfg.nodes})

        self._nodes: dict[int, _NodeRt] = {}
        for spec in cfg.nodes:
            if spec.role == "leader":
                mstate: object = LeaderState()
            elif spec.role == "follower":
                mstate = FollowerState()
            else:
                mstate = BuoyState(mode=cfg.buoy_mode, timeout_s=cfg.buoy_timeout_s, run_id=run_id)
            self._nodes[spec.addr] = _NodeRt(spec, mstate)
        self._ordered = [self._nodes[a] for a in sorted(self._nodes)]
        self._leader_addr = next(n.addr for n in cfg.nodes if n.role == "leader")

        self._log(0.0, "sim", "run_meta", detail={
            "seed": cfg.seed, "run_id": run_id, "nodes": len(cfg.nodes),
            "duration_s": cfg.duration_s,
        })
        for n in self._ordered:
            self._log(0.0, n.name, "state", detail={"phase": n.mstate.phase})
            if n.spec.role == "follower" and cfg.settling_delay_s <= cfg.duration_s:
                self.schedule(cfg.settling_delay_s,
                              lambda n=n: self._dispatch(n, StartBaseline(self.t)))
            if n.spec.role == "buoy" and cfg.buoy_mode == AUTO and cfg.buoy_timeout_s <= cfg.duration_s:
                self.schedule(cfg.buoy_timeout_s, lambda n=n: self._dispatch(n, Tick(self.t)))
            self._ensure_tick(n)

    # -- scheduling ----------------------------------------------------

    def schedule(self, t: float, fn) -> None:
        heapq.heappush(self._heap, (t, next(self._counter), fn))

    def run_loop(self) -> RunMetrics:
        while self._heap:
            t, _, fn = heapq.heappop(self._heap)
            self.t = t
            fn()
        self.metrics.completion = self._all_done()
        if not self.metrics.completion:
            log.warning("run ended at t=%.1f without all followers done", self.t)
        return self.metrics

    def run_paced(self, pacing_factor: float, control: ControlChannel | None) -> RunMetrics:
        """Advance sim time proportionally to wall time, serving the control channel."""
        start_wall = time.monotonic()
        t0 = self.t
        self._telemetry_tick()
        while self._heap:
            while True:
                if control is not None:
                    self._poll_control(control, start_wall, t0, pacing_factor)
                t_next = self._heap[0][0]
                target = start_wall + (t_next - t0) / pacing_factor
                now = time.monotonic()
                if now >= target:
                    break
                time.sleep(min(0.05, target - now))
            t, _, fn = heapq.heappop(self._heap)
            self.t = t
            fn()
        self.metrics.completion = self._all_done()
        if control is not None:
            control.publish({"k": "done"})
        return self.metrics

    def _poll_control(self, control, start_wall, t0, factor) -> None:
        for cmd, reply in control.poll():
            kind = cmd.get("k")
            if kind == "trigger":
                if self._trigger_injected:
                    self._reply(reply, {"k": "warn", "msg": "trigger already issued"})
                    continue
                self._trigger_injected = True
                now_sim = max(self.t, t0 + (time.monotonic() - start_wall) * factor)
                now_sim = min(now_sim, self.cfg.duration_s)
                buoy = next(n for n in self._ordered if n.spec.role == "buoy")
                self.schedule(now_sim, lambda n=buoy: self._dispatch(n, OperatorTrigger(self.t)))
            else:
                self._reply(reply, {"k": "warn", "msg": f"unknown command kind: {kind!r}"})

    @staticmethod
    def _reply(reply, msg: dict) -> None:
        try:
            reply(msg)
        except Exception:  # a dead client must never stall the run
            pass

    def _telemetry_tick(self) -> None:
        if self.event_hook is not None:
            for n in self._ordered:
                self.event_hook({
                    "k": "vehicle", "node": n.name,
                    "depth_m": round(n.v.depth_m, 3), "t": round(self.t, 3),
                })
        nt = self.t + 1.0
        if nt <= self.cfg.duration_s and not self._all_done():
            self.schedule(nt, self._telemetry_tick)

    def _all_done(self) -> bool:
        return all(
            n.mstate.phase == DONE for n in self._ordered if n.spec.role == "follower"
        )

    # -- event log -----------------------------------------------------

    def _log(self, t, node, ev, seq=None, depth_m=None, detail=None) -> None:
        if self._collect:
            self.events.append(format_event(t, node, ev, seq, depth_m, detail))
        if self.event_hook is not None:
            d = {"t": round(t, 6), "node": node, "ev": ev}
            if seq is not None:
                d["seq"] = seq
            if depth_m is not None:
                d["depth_m"] = round(depth_m, 6)
            if detail is not None:
                d["detail"] = detail
            self.event_hook({"k": "telemetry", "event": d})

    # -- kinematics ticks ----------------------------------------------

    def _need_tick(self, n: _NodeRt) -> bool:
        v = n.v
        moving = (
            not v.pinned
            and v.target_depth_m is not None
            and v.depth_m != v.target_depth_m
        )
        return moving or v.drift_sigma_mps > 0.0

    def _ensure_tick(self, n: _NodeRt) -> None:
        if n.tick_at is None and self._need_tick(n):
            nt = self.t + self.cfg.tick_dt_s
            if nt <= self.cfg.duration_s:
                n.tick_at = nt
                self.schedule(nt, lambda: self._tick(n))

    def _tick(self, n: _NodeRt) -> None:
        n.tick_at = None
        v = n.v
        was_moving = (
            not v.pinned and v.target_depth_m is not None and v.depth_m != v.target_depth_m
        )
        step_kinematics(v, self.cfg.tick_dt_s, self.rng_drift)
        if n.spec.role == "leader" and n.mstate.phase == CTD_DESCENT:
            speed = ctd_sample(self.cfg.ssp, v.depth_m, self.rng_ctd)
            self._dispatch(n, CtdSampleTaken(v.depth_m, speed))
        if was_moving and v.depth_m == v.target_depth_m:
            self._log(self.t, n.name, "depth_reached", depth_m=v.depth_m)
            self._dispatch(n, DepthReached(v.depth_m, self.t))
        self._dispatch(n, Tick(self.t))
        self._ensure_tick(n)

    def _arrive_now(self, n: _NodeRt) -> None:
        # target commanded at the current depth: arrival without motion
        self._log(self.t, n.name, "depth_reached", depth_m=n.v.depth_m)
        self._dispatch(n, DepthReached(n.v.depth_m, self.t))
        self._dispatch(n, Tick(self.t))
        self._ensure_tick(n)

    # -- state machines ------------------------------------------------

    def _dispatch(self, n: _NodeRt, event) -> None:
        if n.spec.role == "leader":
            acts = leader_handle(n.mstate, event, self.cfg.mission)
        elif n.spec.role == "follower":
            acts = follower_handle(n.mstate, event, self.cfg.mission)
        else:
            acts = buoy_handle(n.mstate, event, self.cfg.mission)
        for act in acts:
            self._apply(n, act)
        self._after_dispatch(n)

    def _after_dispatch(self, n: _NodeRt) -> None:
        ms = n.mstate
        if ms.phase != n.logged_phase:
            n.logged_phase = ms.phase
            self._log(self.t, n.name, "state", detail={"phase": ms.phase})
            if n.spec.role == "leader" and ms.phase == CTD_DESCENT:
                # opening cast sample at the hold depth
                speed = ctd_sample(self.cfg.ssp, n.v.depth_m, self.rng_ctd)
                self._dispatch(n, CtdSampleTaken(n.v.depth_m, speed))
        if n.spec.role == "follower":
            nst = ms.next_send_t
            if nst is not None and nst != n.sched_send_t and nst <= self.cfg.duration_s:
                n.sched_send_t = nst
                self.schedule(nst, lambda: self._dispatch(n, Tick(self.t)))

    def _apply(self, n: _NodeRt, act) -> None:
        if isinstance(act, SetTargetDepth):
            n.v.target_depth_m = act.depth_m
            if n.v.depth_m == act.depth_m and not n.v.pinned:
                self.schedule(self.t, lambda: self._arrive_now(n))
            else:
                self._ensure_tick(n)
        elif isinstance(act, SendData):
            phase = "optimized" if n.mstate.repositioned else "baseline"
            self.metrics.phases[phase].sent += 1
            self._phase_of[(n.spec.addr, act.seq)] = phase
            values = make_data_values(act.seq, self.cfg.mission.packet_payload_bytes)
            self.send_message(n.spec.addr, DATA_STREAM, values, dst=self._leader_addr, seq=act.seq)
        elif isinstance(act, Broadcast):
            if act.stream == TRIGGER_STREAM:
                self._log(self.t, n.name, "trigger_tx", detail={"run_id": act.values[0]})
            else:
                self._log(self.t, n.name, "repos_cmd_tx", depth_m=dm_to_depth_m(act.values[0]))
            self.send_message(n.spec.addr, act.stream, list(act.values), dst=BROADCAST)
        elif isinstance(act, EmitOptimalDepth):
            self.metrics.optimal_depth_m = act.depth_m
            self._log(self.t, n.name, "optimal_depth", depth_m=act.depth_m)

    # -- network pipeline ----------------------------------------------

    def send_message(self, addr: int, stream: str, values, dst: int, seq: int | None = None) -> None:
        """Queue one application message for transmission (also a test hook)."""
        n = self._nodes[addr]
        payload = encode_message(self.defs[stream], values)
        framed = frame(Packet(StreamType.PUBLISHER, self.registry.id_of(stream), payload))
        dgram = Datagram(addr, dst, self.registry.id_of(stream), framed)
        item = _TxItem(dgram, self.t + self._proc_half, stream, seq)
        try:
            n.txq.push(item)
        except QueueFull:
            log.warning("t=%.3f %s: tx queue full, message dropped", self.t, n.name)
            return
        if not n.mac_busy:
            n.mac_busy = True
            self.schedule(self.t, lambda: self._mac_next(n))

    def _mac_next(self, n: _NodeRt) -> None:
        if not n.txq:
            n.mac_busy = False
            return
        item = n.txq.pop()
        air = airtime_s(item.dgram.wire_bytes(), self.cfg.bitrate_bps)
        ready = max(item.ready_t, self.t)
        t1 = tdma_next_tx_start(ready, n.spec.addr, self.cfg.tdma, air)
        if item.tp is None:  # forwarded datagrams keep their origin stamp
            item.tp = max(t1 - self._proc_half, self.t)
            if item.stream == DATA_STREAM:
                dst = item.dgram.dst
                dst_name = "broadcast" if dst == BROADCAST else self._nodes[dst].name
                tp = item.tp
                self.schedule(
                    tp,
                    lambda: self._log(tp, n.name, "pkt_tx", seq=item.seq, detail={"dst": dst_name}),
                )
        self.schedule(t1, lambda: self._phy_tx(n, item, t1, air))
        self.schedule(t1 + air, lambda: self._mac_next(n))

    def _phy_tx(self, n: _NodeRt, item: _TxItem, t1: float, air: float) -> None:
        self.tx_log.append((n.spec.addr, t1, t1 + air))
        tx_pos = n.v.position
        for rx in self._ordered:
            if rx is n:
                continue
            rec = decide_reception(
                self.rng_channel,
                tx_pos,
                rx.v.position,
                t1,
                air,
                self.cfg.tl_model,
                self.cfg.budget,
                profile=self.cfg.ssp,
                directivity_db=self.cfg.directivity_db,
                tx_heading_deg=n.v.heading_deg,
                rx_heading_deg=rx.v.heading_deg,
            )
            cls = classify_rx(rx.spec.addr, item.dgram, self.routes)
            overhearing = cls == "overhear"
            if overhearing and not (rx.spec.role == "buoy" and item.stream == DATA_STREAM):
                continue  # the draw stays in the stream; nobody acts on it
            if rec.delivered:
                ta = rec.rx_time + self._proc_half
                if cls == "forward":
                    self.schedule(ta, lambda rx=rx, item=item: self._forward(rx, item))
                else:
                    self.schedule(
                        ta,
                        lambda rx=rx, item=item, ta=ta, ov=overhearing: self._app_deliver(
                            rx, item, ta, ov
                        ),
                    )
            elif overhearing or self._consumes(rx, item.stream):
                tl = rec.rx_time
                detail = {"src": self._origin_name(item), "stream": item.stream}
                self.schedule(
                    tl,
                    lambda rx=rx, item=item, tl=tl, d=detail: self._log(
                        tl, rx.name, "pkt_lost", seq=item.seq, detail=d
                    ),
                )

    def _consumes(self, rx: _NodeRt, stream: str) -> bool:
        if stream == DATA_STREAM:
            return True
        if stream == TRIGGER_STREAM:
            return rx.spec.role == "leader"
        return rx.spec.role == "follower"

    def _forward(self, rx: _NodeRt, item: _TxItem) -> None:
        fwd = _TxItem(item.dgram, self.t, item.stream, item.seq)
        fwd.tp = item.tp
        try:
            rx.txq.push(fwd)
        except QueueFull:
            log.warning("t=%.3f %s: forward queue full, message dropped", self.t, rx.name)
            return
        if not rx.mac_busy:
            rx.mac_busy = True
            self.schedule(self.t, lambda: self._mac_next(rx))

    def _origin_name(self, item: _TxItem) -> str:
        # attribution follows the datagram source so relayed packets still
        # match their origin pkt_tx stamp
        rt = self._nodes.get(item.dgram.src)
        return rt.name if rt is not None else f"addr{item.dgram.src}"

    def _app_deliver(self, rx: _NodeRt, item: _TxItem, ta: float, overheard: bool) -> None:
        origin = self._origin_name(item)
        packets, skipped = deframe(item.dgram.body)
        if skipped or len(packets) != 1:
            log.warning("t=%.3f %s: malformed frame from %s skipped", ta, rx.name, origin)
            return
        try:
            msg = decode_message(self.defs[item.stream], packets[0].payload)
        except (CodecError, KeyError) as e:
            log.warning("t=%.3f %s: undecodable payload from %s skipped: %s", ta, rx.name, origin, e)
            return
        if overheard:
            self._log(ta, rx.name, "pkt_overheard", seq=item.seq, detail={"src": origin})
            self._dispatch(rx, Overheard(item.stream, ta))
            return
        if not self._consumes(rx, item.stream):
            return
        if item.stream == DATA_STREAM:
            self._log(ta, rx.name, "pkt_rx", seq=item.seq, detail={"src": origin})
            key = (rx.spec.addr, item.dgram.src, item.seq if item.seq is not None else -1)
            if key in self._rx_seen:
                return  # second copy via a relay path: log it, count it once
            self._rx_seen.add(key)
            phase = self._phase_of.get((item.dgram.src, item.seq))
            if phase is not None:
                self.metrics.phases[phase].received += 1
            if item.seq is not None and item.tp is not None:
                self.metrics.delays.append((item.seq, ta - item.tp))
        elif item.stream == TRIGGER_STREAM:
            self._log(ta, rx.name, "trigger_rx", detail={"src": origin})
            self._dispatch(rx, TriggerReceived(ta))
        else:
            depth = dm_to_depth_m(msg["depth_dm"])
            self._log(ta, rx.name, "repos_cmd_rx", depth_m=depth, detail={"src": origin})
            self._dispatch(rx, ReposCmd(depth, ta))


# ---------------------------------------------------------------------------
# top-level operations


def run(cfg: ScenarioConfig, collect_events: bool = True, run_id: int = 0):
    """Execute one scenario; returns (event log lines, metrics)."""
    sim = Simulation(cfg, collect_events=collect_events, run_id=run_id)
    metrics = sim.run_loop()
    return sim.events, metrics


def paced_run(cfg: ScenarioConfig, pacing_factor: float, control: ControlChannel | None = None,
              run_id: int = 0):
    """Like run(), advancing sim time at pacing_factor x wall time."""
    hook = None
    if control is not None:
        hook = control.publish
    sim = Simulation(cfg, collect_events=True, run_id=run_id, event_hook=hook)
    metrics = sim.run_paced(pacing_factor, control)
    return sim.events, metrics


def _mc_one(args) -> tuple[int, dict | None, dict | None, bool]:
    cfg, seed = args
    _, m = run(replace(cfg, seed=seed), collect_events=False)
    out = {}
    for ph, st in m.phases.items():
        out[ph] = st.per
    return seed, out.get("baseline"), out.get("optimized"), m.completion


def monte_carlo(cfg: ScenarioConfig, n_runs: int, seed_base: int | None = None,
                workers: int = 1) -> dict:
    """Independent seeded runs; per-phase PER samples plus five-number summaries."""
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    base = cfg.seed if seed_base is None else seed_base
    jobs = [(cfg, base + i) for i in range(n_runs)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_mc_one, jobs, chunksize=max(1, n_runs // (4 * workers))))
    else:
        rows = [_mc_one(j) for j in jobs]
    rows.sort(key=lambda r: r[0])  # summary independent of completion order

    samples: dict[str, list[float]] = {"baseline": [], "optimized": []}
    completed = 0
    for _, base_per, opt_per, done in rows:
        if done:
            completed += 1
        if base_per is not None:
            samples["baseline"].append(base_per)
        if opt_per is not None:
            samples["optimized"].append(opt_per)

    def five_number(xs: list[float]) -> dict | None:
        if not xs:
            return None
        q = np.percentile(xs, [0, 25, 50, 75, 100])
        return {"min": float(q[0]), "q1": float(q[1]), "median": float(q[2]),
                "q3": float(q[3]), "max": float(q[4])}

    return {
        "runs": n_runs,
        "completed": completed,
        "phases": {
            ph: {"samples": xs, "summary": five_number(xs)} for ph, xs in samples.items()
        },
    }


# ---------------------------------------------------------------------------
# log analysis


def _parse_log_lines(lines) -> tuple[list[dict], list[int]]:
    events, malformed = [], []
    for i, line in enumerate(lines, 1):
        text = line.strip()
        if not text:
            continue
        try:
            d = json.loads(text)
            float(d["t"])
            if not isinstance(d["node"], str) or not isinstance(d["ev"], str):
                raise TypeError("node/ev must be strings")
        except (ValueError, KeyError, TypeError):
            malformed.append(i)
            continue
        events.append(d)
    return events, malformed


def analyze_timeline(lines) -> dict:
    """Reconstruct per-node timelines, phase PER, and end-to-end delays.

    Accepts any iterable of JSONL lines, including logs produced elsewhere;
    malformed lines are reported by number and skipped.
    """
    events, malformed = _parse_log_lines(lines)

    nodes: dict[str, dict] = {}
    for d in events:
        rec = nodes.setdefault(d["node"], {"first_t": d["t"], "last_t": d["t"], "counts": {}})
        rec["first_t"] = min(rec["first_t"], d["t"])
        rec["last_t"] = max(rec["last_t"], d["t"])
        rec["counts"][d["ev"]] = rec["counts"].get(d["ev"], 0) + 1

    boundary: dict[str, float] = {}
    for d in events:
        if d["ev"] == "repos_cmd_rx" and d["node"] not in boundary:
            boundary[d["node"]] = d["t"]

    def phase_of_tx(d: dict) -> str:
        b = boundary.get(d["node"], math.inf)
        return "optimized" if d["t"] >= b else "baseline"

    tx_by_key: dict[tuple[str, int], dict] = {}
    phase_counts = {"baseline": {"sent": 0, "received": 0, "tx_times": []},
                    "optimized": {"sent": 0, "received": 0, "tx_times": []}}
    for d in events:
        if d["ev"] == "pkt_tx" and "seq" in d:
            key = (d["node"], d["seq"])
            if key not in tx_by_key:
                tx_by_key[key] = d
                ph = phase_of_tx(d)
                phase_counts[ph]["sent"] += 1
                phase_counts[ph]["tx_times"].append(d["t"])

    delays: list[float] = []
    matched: set[tuple[str, int]] = set()
    for d in events:
        if d["ev"] != "pkt_rx" or "seq" not in d:
            continue
        src = (d.get("detail") or {}).get("src")
        key = (src, d["seq"])
        tx = tx_by_key.get(key)
        if tx is None or key in matched:
            continue
        matched.add(key)
        phase_counts[phase_of_tx(tx)]["received"] += 1
        delays.append(d["t"] - tx["t"])

    phases = {}
    for ph, c in phase_counts.items():
        sent, received = c["sent"], c["received"]
        span = max(c["tx_times"]) - min(c["tx_times"]) if len(c["tx_times"]) >= 2 else None
        phases[ph] = {
            "sent": sent,
            "received": received,
            "per": (sent - received) / sent if sent else None,
            "span_s": span,
        }

    first: dict[str, float] = {}
    for d in events:
        ev = d["ev"]
        if ev in ("trigger_tx", "trigger_rx", "optimal_depth", "repos_cmd_tx", "repos_cmd_rx"):
            first.setdefault(ev, d["t"])
    follower_arrival = None
    for d in events:
        if d["ev"] == "depth_reached" and d["node"] in boundary and d["t"] >= boundary[d["node"]]:
            follower_arrival = d["t"]
            break
    first_opt_tx = min(phase_counts["optimized"]["tx_times"], default=None)

    return {
        "events": len(events),
        "malformed_lines": malformed,
        "nodes": nodes,
        "phases": phases,
        "delays": {
            "count": len(delays),
            "mean_s": statistics.fmean(delays) if delays else None,
            "median_s": statistics.median(delays) if delays else None,
        },
        "coordination": {
            "trigger_tx": first.get("trigger_tx"),
            "trigger_rx": first.get("trigger_rx"),
            "optimal_depth": first.get("optimal_depth"),
            "first_repos_cmd_tx": first.get("repos_cmd_tx"),
            "first_repos_cmd_rx": first.get("repos_cmd_rx"),
            "follower_depth_reached": follower_arrival,
            "first_optimized_pkt_tx": first_opt_tx,
        },
    }


def validate_log(lines) -> list[str]:
    """Check ordering and tx/rx matching invariants; returns problem strings."""
    problems: list[str] = []
    events, malformed = _parse_log_lines(lines)
    problems.extend(f"line {i}: malformed" for i in malformed)
    last_t = -math.inf
    seen_tx: set[tuple[str, int]] = set()
    for k, d in enumerate(events, 1):
        if d["t"] < last_t - 1e-9:
            problems.append(f"event {k}: time goes backwards ({d['t']:.6f} < {last_t:.6f})")
        last_t = max(last_t, d["t"])
        if d["ev"] not in EVENT_KINDS:
            problems.append(f"event {k}: unknown ev {d['ev']!r}")
        if d["ev"] == "pkt_tx" and "seq" in d:
            seen_tx.add((d["node"], d["seq"]))
        if d["ev"] in ("pkt_rx", "pkt_overheard", "pkt_lost") and "seq" in d:
            src = (d.get("detail") or {}).get("src")
            if src is not None and (src, d["seq"]) not in seen_tx:
                problems.append(
                    f"event {k}: {d['ev']} for ({src}, {d['seq']}) without earlier pkt_tx"
                )
    return problems
