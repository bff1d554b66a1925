"""Synthetic event load against in-process devices, bypassing collision detection.

Used to compare one-connection-per-event delivery (what the haptic kit's
mini-server expects) with persistent keep-alive connections.
"""

from __future__ import annotations

import math
import random
import time
from contextlib import ExitStack
from dataclasses import asdict, dataclass, field

from .body import BodyPart
from .device import Device, DeviceConfig
from .registry import RegistryServer, now_ms
from .runner import (
    OK,
    EventSender,
    EventTrace,
    LatencySummary,
    count_statuses,
    latency_stats,
    trace_latencies,
)
from .wire import CollisionEvent


@dataclass
class BenchOptions:
    avatars: int = 2
    rate: float = 10.0          # events per second
    duration: float = 10.0      # seconds
    mode: str = "direct"
    keep_alive: bool = False
    retries: int = 0            # resend on ack timeout; devices then suppress duplicate seqs
    seed: int = 0
    ack_timeout: float = 0.25


@dataclass
class BenchResult:
    mode: str
    keep_alive: bool
    attempted: int = 0
    elapsed_s: float = 0.0
    events_per_s: float = 0.0
    latency: LatencySummary = field(default_factory=LatencySummary)
    counters: dict = field(default_factory=dict)

    def row(self) -> dict:
        lat = asdict(self.latency)
        return {"mode": self.mode, "keep_alive": self.keep_alive, "attempted": self.attempted,
                "events_per_s": round(self.events_per_s, 2),
                **{k: lat[k] for k in ("p50", "p95", "p99", "max")},
                "oks": self.counters.get("oks", 0)}


def schedule(rate: float, duration: float) -> list[float]:
    """Send offsets in seconds: ``i / rate`` for every ``i`` with offset < duration."""
    if rate <= 0 or duration <= 0:
        return []
    n = math.ceil(rate * duration - 1e-9)
    return [i / rate for i in range(n)]


def bench(opts: BenchOptions) -> BenchResult:
    result = BenchResult(opts.mode, opts.keep_alive)
    offsets = schedule(opts.rate, opts.duration)
    if not offsets:
        result.counters = count_statuses([])
        return result
    rng = random.Random(opts.seed)
    traces: list[EventTrace] = []
    with ExitStack() as stack:
        server = stack.enter_context(RegistryServer(("127.0.0.1", 0), relay=opts.mode == "relay"))
        devices = []
        for uid in range(1, opts.avatars + 1):
            cfg = DeviceConfig(uid, port=0, server=server.address, dedup_seq=opts.retries > 0)
            devices.append(stack.enter_context(Device(cfg)))
            devices[-1].start()
        sender = EventSender(server.address, opts.mode, opts.ack_timeout,
                             seed=opts.seed, keep_alive=opts.keep_alive)
        stack.callback(sender.close)
        # warm the lookup cache so the first events do not pay for it
        if opts.mode == "direct":
            for uid in range(1, opts.avatars + 1):
                sender.lookup(uid)

        t0 = time.perf_counter()
        for i, off in enumerate(offsets):
            delay = t0 + off - time.perf_counter()
            if delay > 0:
                time.sleep(delay)
            target = i % opts.avatars + 1
            part = BodyPart(rng.randrange(len(BodyPart)))
            seq = i % 0xFFFF + 1
            source = (target % opts.avatars) + 1 if opts.avatars > 1 else 0xFF
            trace = EventTrace(seq, i, off * 1000.0, source, target, part.label, now_ms())
            event = CollisionEvent(target, part, source, seq)
            for _ in range(opts.retries + 1):
                sender.deliver(event, trace)
                if trace.status == OK:
                    break
            traces.append(trace)
        result.elapsed_s = time.perf_counter() - t0
        for d in devices:
            d.wait_idle(1.0)
        actuated = {(e["user_id"], e["seq"]): e["actuated_ms"]
                    for d in devices for e in d.log if e["kind"] == "actuation"}
    for t in traces:
        t.actuated_ms = actuated.get((t.target_user, t.seq))
    result.attempted = len(traces)
    result.counters = count_statuses(traces)
    result.events_per_s = result.counters["oks"] / result.elapsed_s if result.elapsed_s else 0.0
    result.latency = latency_stats(trace_latencies(traces))
    return result


def compare(opts: BenchOptions) -> list[BenchResult]:
    """Run the same load with per-event connections and with keep-alive."""
    out = []
    for keep_alive in (False, True):
        o = BenchOptions(**{**asdict(opts), "keep_alive": keep_alive})
        out.append(bench(o))
    return out


def format_table(results: list[BenchResult]) -> str:
    rows = [r.row() for r in results]
    if not rows:
        return "(no results)"
    cols = list(rows[0])

    def fmt(v):
        if isinstance(v, float):
            return f"{v:.3f}"
        return "-" if v is None else str(v)

    widths = [max(len(c), *(len(fmt(r[c])) for r in rows)) for c in cols]
    lines = ["  ".join(c.ljust(w) for c, w in zip(cols, widths))]
    lines += ["  ".join(fmt(r[c]).ljust(w) for c, w in zip(cols, widths)) for r in rows]
    return "\n".join(lines)
