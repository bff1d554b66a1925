"""Tick a scenario through collision detection and deliver events to devices.

For every tick: interpolate skeletons, detect contacts, debounce, and for
each emitted event resolve the target device through the registry (cached)
and deliver a ``CollisionEvent`` on a fresh TCP connection, waiting for the
``EventAck``. Device logs are joined back onto the traces by sequence number.
"""

from __future__ import annotations

import json
import logging
import math
import random
import socket
import time
from contextlib import ExitStack
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .collision import DebounceState, debounce_step, detect_contacts
from .device import Device, DeviceConfig, OverlapPolicy
from .registry import RegistryServer, now_ms
from .scenario import Scenario, red_cube_scenario
from .wire import (
    OBJECT_SOURCE,
    MAGIC,
    CollisionEvent,
    EventAck,
    Lookup,
    LookupResp,
    Status,
    WireError,
    read_message,
    send_message,
)

log = logging.getLogger(__name__)

ACK_TIMEOUT = 0.25
CONNECT_TIMEOUT = 0.25

OK = "OK"
NOT_FOUND = "NOT_FOUND"
REJECTED = "REJECTED_WRONG_USER"
MALFORMED = "MALFORMED"
TIMEOUT = "TIMEOUT"

_STATUS_NAME = {Status.OK: OK, Status.NOT_FOUND: NOT_FOUND,
                Status.REJECTED_WRONG_USER: REJECTED, Status.MALFORMED: MALFORMED}


@dataclass
class FaultConfig:
    """Faults injected in the runner's connection layer.

    ``garbage_rate``: per event, chance of an extra connection carrying random
    bytes (alternating between the target device and the registry).
    ``drop_ack_rate``: chance an ack is read and then discarded.
    ``delay_rate``/``delay_ms``: chance of holding an event back before sending.
    """

    garbage_rate: float = 0.0
    drop_ack_rate: float = 0.0
    delay_rate: float = 0.0
    delay_ms: float = 20.0

    @property
    def enabled(self) -> bool:
        return self.garbage_rate > 0 or self.drop_ack_rate > 0 or self.delay_rate > 0


@dataclass
class RunOptions:
    mode: str = "direct"                       # "direct" or "relay"
    registry: tuple[str, int] | None = None    # None: spawn one in-process
    spawn_devices: bool | None = None          # default: only when the registry is spawned
    device_users: Sequence[int] | None = None  # users that get a spawned device (default all)
    faults: FaultConfig | None = None
    seed: int = 0
    ack_timeout: float = ACK_TIMEOUT
    realtime: bool = False
    pulse_ms: float = 200.0
    overlap_policy: OverlapPolicy = OverlapPolicy.EXTEND
    device_logs: Sequence[str] = ()            # JSONL logs of external devices to join

    def __post_init__(self):
        if self.mode not in ("direct", "relay"):
            raise ValueError(f"mode must be 'direct' or 'relay', got {self.mode!r}")


@dataclass
class EventTrace:
    seq: int
    tick: int
    tick_ms: float
    source: int | str
    target_user: int
    body_part: str
    detected_ms: float
    sent_ms: float | None = None
    acked_ms: float | None = None
    actuated_ms: float | None = None
    status: str = TIMEOUT


@dataclass
class LatencySummary:
    count: int = 0
    min: float | None = None
    mean: float | None = None
    p50: float | None = None
    p95: float | None = None
    p99: float | None = None
    max: float | None = None

    @property
    def empty(self) -> bool:
        return self.count == 0


def nearest_rank(sorted_values: Sequence[float], pct: float) -> float:
    """Nearest-rank percentile of an ascending, non-empty sequence."""
    n = len(sorted_values)
    rank = max(1, math.ceil(pct / 100.0 * n - 1e-9))
    return sorted_values[min(rank, n) - 1]


def latency_stats(deltas: Iterable[float]) -> LatencySummary:
    values = sorted(float(d) for d in deltas)
    if not values:
        return LatencySummary()
    return LatencySummary(
        count=len(values),
        min=values[0],
        mean=sum(values) / len(values),
        p50=nearest_rank(values, 50),
        p95=nearest_rank(values, 95),
        p99=nearest_rank(values, 99),
        max=values[-1],
    )


def trace_latencies(traces: Iterable[EventTrace]) -> list[float]:
    """actuated - detected for every OK trace whose actuation was observed."""
    return [t.actuated_ms - t.detected_ms for t in traces
            if t.status == OK and t.actuated_ms is not None]


@dataclass
class RunReport:
    scenario: str
    mode: str
    seed: int
    traces: list[EventTrace] = field(default_factory=list)
    timelines: dict[int, list[dict]] = field(default_factory=dict)
    latency: LatencySummary = field(default_factory=LatencySummary)
    counters: dict[str, int] = field(default_factory=dict)
    faults: dict[str, int] = field(default_factory=dict)

    def event_keys(self) -> list[tuple]:
        """Timing-free view of the traces, stable across identical runs."""
        return [(t.seq, t.target_user, t.body_part, t.source, t.tick) for t in self.traces]

    def to_json(self) -> dict:
        return {
            "scenario": self.scenario,
            "mode": self.mode,
            "seed": self.seed,
            "counters": self.counters,
            "faults": self.faults,
            "latency_ms": asdict(self.latency),
            "timelines": {str(k): v for k, v in self.timelines.items()},
            "traces": [asdict(t) for t in self.traces],
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))


def count_statuses(traces: Sequence[EventTrace]) -> dict[str, int]:
    by = {s: 0 for s in (OK, REJECTED, MALFORMED, TIMEOUT, NOT_FOUND)}
    for t in traces:
        by[t.status] += 1
    return {"events": len(traces), "oks": by[OK], "rejects": by[REJECTED],
            "malformed": by[MALFORMED], "timeouts": by[TIMEOUT], "not_found": by[NOT_FOUND]}


def _wire_source(source) -> int:
    return OBJECT_SOURCE if isinstance(source, str) else int(source)


class EventSender:
    """Connection layer: lookup cache, per-event delivery and fault injection."""

    def __init__(self, registry: tuple[str, int], mode: str = "direct",
                 ack_timeout: float = ACK_TIMEOUT, faults: FaultConfig | None = None,
                 seed: int = 0, keep_alive: bool = False):
        self.registry = registry
        self.mode = mode
        self.ack_timeout = ack_timeout
        self.faults = faults or FaultConfig()
        self.rng = random.Random(seed)
        self.keep_alive = keep_alive
        self.cache: dict[int, tuple[str, int]] = {}
        self.fault_counts = dict(garbage_connections=0, garbage_malformed_replies=0,
                                 dropped_acks=0, delayed=0)
        self._sockets: dict[tuple[str, int], socket.socket] = {}

    def close(self) -> None:
        for s in self._sockets.values():
            s.close()
        self._sockets.clear()

    def lookup(self, user_id: int) -> tuple[str, int] | None:
        try:
            with socket.create_connection(self.registry, timeout=CONNECT_TIMEOUT) as sock:
                sock.settimeout(self.ack_timeout)
                send_message(sock, Lookup(user_id))
                resp = read_message(sock)
        except (OSError, WireError) as exc:
            log.warning("lookup of user %d failed: %s", user_id, exc)
            return None
        if isinstance(resp, LookupResp) and resp.status is Status.OK:
            self.cache[user_id] = (resp.ipv4, resp.port)
            return self.cache[user_id]
        return None

    def resolve(self, user_id: int) -> tuple[str, int] | None:
        if self.mode == "relay":
            return self.registry
        return self.cache.get(user_id) or self.lookup(user_id)

    def _connect(self, addr) -> socket.socket:
        if self.keep_alive and addr in self._sockets:
            return self._sockets[addr]
        sock = socket.create_connection(addr, timeout=CONNECT_TIMEOUT)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        if self.keep_alive:
            self._sockets[addr] = sock
        return sock

    def _drop(self, addr, sock) -> None:
        if self._sockets.get(addr) is sock:
            del self._sockets[addr]
        sock.close()

    def send_garbage(self, addr) -> None:
        n = self.rng.randint(1, 32)
        junk = bytes([self.rng.choice([b for b in range(256) if b != MAGIC])]) + \
            self.rng.randbytes(n - 1)
        self.fault_counts["garbage_connections"] += 1
        try:
            with socket.create_connection(addr, timeout=CONNECT_TIMEOUT) as sock:
                sock.settimeout(self.ack_timeout)
                sock.sendall(junk)
                sock.shutdown(socket.SHUT_WR)
                reply = read_message(sock)
            if getattr(reply, "status", None) is Status.MALFORMED:
                self.fault_counts["garbage_malformed_replies"] += 1
        except (OSError, WireError):
            pass

    def deliver(self, event: CollisionEvent, trace: EventTrace) -> None:
        """Send one event and fill in ``trace`` (sent/acked times and status)."""
        f = self.faults
        addr = self.resolve(event.target_user)
        if addr is None:
            trace.status = NOT_FOUND
            return
        if f.garbage_rate and self.rng.random() < f.garbage_rate:
            self.send_garbage(addr if self.fault_counts["garbage_connections"] % 2 == 0
                              else self.registry)
        if f.delay_rate and self.rng.random() < f.delay_rate:
            self.fault_counts["delayed"] += 1
            time.sleep(f.delay_ms / 1000.0)
        drop_ack = bool(f.drop_ack_rate) and self.rng.random() < f.drop_ack_rate

        for attempt in range(2):
            try:
                sock = self._connect(addr)
            except OSError as exc:
                if attempt == 0 and self.mode == "direct":
                    # stale address: re-resolve once
                    self.cache.pop(event.target_user, None)
                    addr = self.lookup(event.target_user)
                    if addr is None:
                        trace.status = NOT_FOUND
                        return
                    continue
                log.warning("connect to %s failed: %s", addr, exc)
                trace.status = TIMEOUT
                return
            break
        try:
            sock.settimeout(self.ack_timeout)
            trace.sent_ms = now_ms()
            send_message(sock, event)
            ack = read_message(sock)
            acked = now_ms()
        except (OSError, WireError) as exc:
            log.info("seq %d: no ack (%s)", event.seq, exc)
            self._drop(addr, sock)
            trace.status = TIMEOUT
            return
        if not self.keep_alive:
            sock.close()
        if drop_ack:
            self.fault_counts["dropped_acks"] += 1
            trace.status = TIMEOUT
            return
        if not isinstance(ack, EventAck) or ack.seq not in (event.seq, 0):
            trace.status = TIMEOUT if ack is None else MALFORMED
            return
        trace.acked_ms = acked
        trace.status = _STATUS_NAME[ack.status]


def _read_device_logs(paths: Sequence[str]) -> list[dict]:
    out = []
    for p in paths:
        for line in Path(p).read_text().splitlines():
            if line.strip():
                out.append(json.loads(line))
    return out


def run(scenario: Scenario, options: RunOptions | None = None) -> RunReport:
    """Run ``scenario`` end to end and return the report.

    With no registry address the runner hosts a registry and one device per
    scenario user in-process, on ephemeral loopback ports.
    """
    opts = options or RunOptions()
    spawn_devices = opts.spawn_devices if opts.spawn_devices is not None else opts.registry is None
    device_users = list(opts.device_users) if opts.device_users is not None else scenario.user_ids
    report = RunReport(scenario.name, opts.mode, opts.seed)
    with ExitStack() as stack:
        if opts.registry is None:
            server = RegistryServer(("127.0.0.1", 0), relay=opts.mode == "relay")
            stack.enter_context(server)
            registry = server.address
        else:
            registry = opts.registry
        devices: list[Device] = []
        if spawn_devices:
            for uid in device_users:
                cfg = DeviceConfig(uid, port=0, server=registry, pulse_ms=opts.pulse_ms,
                                   overlap_policy=opts.overlap_policy)
                devices.append(stack.enter_context(Device(cfg)))
                devices[-1].start()
        sender = EventSender(registry, opts.mode, opts.ack_timeout, opts.faults, opts.seed)
        stack.callback(sender.close)

        state = DebounceState()
        seq = 0
        t_start = time.perf_counter()
        for k in range(scenario.n_ticks):
            t_ms = scenario.tick_time(k)
            if opts.realtime:
                delay = t_start + t_ms / 1000.0 - time.perf_counter()
                if delay > 0:
                    time.sleep(delay)
            contacts = detect_contacts(scenario.world_at(t_ms), scenario.radii)
            events, state = debounce_step(state, contacts, k, scenario.repeat_every)
            detected = now_ms()
            for c in events:
                seq = seq % 0xFFFF + 1
                trace = EventTrace(seq, k, t_ms, c.source, c.target_user, c.target_part.label,
                                   detected)
                sender.deliver(CollisionEvent(c.target_user, c.target_part,
                                              _wire_source(c.source), seq), trace)
                report.traces.append(trace)

        for dev in devices:
            dev.wait_idle(1.0)
        entries = [e for d in devices for e in d.log] + _read_device_logs(opts.device_logs)
        report.timelines = {d.config.user_id: [r.to_json() for r in d.timeline] for d in devices}
        report.faults = dict(sender.fault_counts)
        report.counters = count_statuses(report.traces)
        if devices:
            report.counters["device_dispatch_errors"] = sum(
                d.counters["dispatch_errors"] for d in devices)

    actuated = {(e["user_id"], e["seq"]): e["actuated_ms"]
                for e in entries if e.get("kind") == "actuation"}
    for t in report.traces:
        t.actuated_ms = actuated.get((t.target_user, t.seq))
    report.latency = latency_stats(trace_latencies(report.traces))
    return report


def red_cube_demo(options: RunOptions | None = None) -> RunReport:
    return run(red_cube_scenario(), options)

