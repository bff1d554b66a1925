"""Exit criteria for the pipeline, one test per criterion.

Each test records a PASS/FAIL line that is printed in the terminal summary.
"""

import random
import socket
import threading
import time
from collections import Counter

import numpy as np
import pytest

from hapticvr.body import DEFAULT_RADII, BodyPart
from hapticvr.collision import DebounceState, Contact, debounce_step, detect_contacts
from hapticvr.device import Device, DeviceConfig
from hapticvr.registry import RegistryServer, lookup
from hapticvr.runner import FaultConfig, RunOptions, red_cube_demo, run
from hapticvr.scenario import touch_cycle_scenario, two_avatar_touch_scenario
from hapticvr.wire import (
    CollisionEvent,
    EventAck,
    Lookup,
    LookupResp,
    Register,
    RegisterAck,
    Status,
    WireError,
    decode_message,
    decode_uart,
    encode_message,
    encode_uart,
    read_message,
    send_message,
)

from oracles import brute_force_contacts, random_scene, rising_edges
from test_collision import as_triples, to_world


def random_message(rng):
    ip = ".".join(str(rng.randrange(256)) for _ in range(4))
    status = Status(rng.randrange(4))
    kind = rng.randrange(6)
    if kind == 0:
        return Register(rng.randint(1, 255), ip, rng.randrange(65536))
    if kind == 1:
        return RegisterAck(status)
    if kind == 2:
        return Lookup(rng.randint(1, 255))
    if kind == 3:
        return LookupResp(status, ip, rng.randrange(65536))
    if kind == 4:
        source = rng.choice([rng.randint(1, 200), 0xFF])
        return CollisionEvent(rng.randint(1, 200), BodyPart(rng.randrange(10)), source,
                              rng.randrange(65536))
    return EventAck(rng.randrange(65536), status)


def test_codec_soundness(criterion):
    rng = random.Random(2024)
    t0 = time.perf_counter()
    bad_roundtrips = 0
    for _ in range(10_000):
        m = random_message(rng)
        bad_roundtrips += decode_message(encode_message(m)) != m
        uid, part, seq = rng.randint(1, 200), BodyPart(rng.randrange(10)), rng.randrange(65536)
        bad_roundtrips += decode_uart(encode_uart(uid, part, seq)) != (uid, part, seq)
    outcomes = Counter()
    for _ in range(10_000):
        data = rng.randbytes(rng.randint(0, 16))
        if rng.random() < 0.3:
            data = b"\xa5" + data
        for decode in (decode_message, decode_uart):
            try:
                decode(data)
                outcomes["value"] += 1
            except WireError as exc:
                outcomes[type(exc).__name__] += 1
            # any other exception propagates and fails the test
    elapsed = time.perf_counter() - t0
    ok = bad_roundtrips == 0 and sum(outcomes.values()) == 20_000 and elapsed < 10.0
    criterion("codec soundness", ok,
              f"roundtrip mismatches={bad_roundtrips}, fuzz outcomes={dict(outcomes)}, {elapsed:.2f}s < 10s")


def test_collision_oracle_equivalence(criterion):
    t0 = time.perf_counter()
    radii = {int(p): r for p, r in DEFAULT_RADII.items()}
    mismatches, contacts = 0, 0
    for seed in range(100):
        users, objects = random_scene(np.random.default_rng(seed), 4, 4)
        got = as_triples(detect_contacts(to_world(users, objects), DEFAULT_RADII))
        expected = brute_force_contacts(users, objects, radii)
        mismatches += got != expected
        contacts += len(expected)
    elapsed = time.perf_counter() - t0
    criterion("collision oracle equivalence", mismatches == 0 and elapsed < 30.0,
              f"{mismatches}/100 scenes differ, {contacts} contacts checked, {elapsed:.2f}s < 30s")


def test_red_cube_reproduction(criterion):
    report = red_cube_demo()
    oks = [t for t in report.traces if t.status == "OK"]
    records = report.timelines.get(1, [])
    hand_channel = DeviceConfig(1).motor_map[BodyPart.RIGHT_HAND]
    ok = (report.counters["events"] == 1 and len(oks) == 1 and oks[0].body_part == "RightHand"
          and len(records) == 1 and records[0]["motor_channel"] == hand_channel)
    criterion("red-cube grab: one notification, one hand actuation", ok,
              f"counters={report.counters}, timeline={records}")


def test_routing_semantics(criterion):
    report = run(two_avatar_touch_scenario())
    b = [r["motor_channel"] for r in report.timelines[2]]
    a = [r["motor_channel"] for r in report.timelines[1]]
    single = b == [int(BodyPart.LEFT_HAND)] and a == [int(BodyPart.RIGHT_HAND)]

    # three separate sustained contacts -> three pulses on each side
    # paced in real time so consecutive 200 ms pulses do not merge
    cycles = run(touch_cycle_scenario(2, duration_ms=3000, period_ms=1000), RunOptions(realtime=True))
    b3 = [r["motor_channel"] for r in cycles.timelines[2]]
    a3 = [r["motor_channel"] for r in cycles.timelines[1]]
    repeated = b3 == [int(BodyPart.LEFT_HAND)] * 3 and a3 == [int(BodyPart.RIGHT_HAND)] * 3

    with RegistryServer(("127.0.0.1", 0)) as srv, \
            Device(DeviceConfig(2, port=0, server=srv.address)) as dev:
        dev.start()
        with socket.create_connection(dev.address, timeout=2) as sock:
            send_message(sock, CollisionEvent(3, BodyPart.RIGHT_HAND, 1, 11))
            ack = read_message(sock)
        dev.wait_idle(1)
        misrouted = ack == EventAck(11, Status.REJECTED_WRONG_USER) and dev.timeline == []

    criterion("routing: B feels LeftHand, A feels RightHand, wrong user rejected",
              single and repeated and misrouted,
              f"B={b} A={a}; 3 contacts B={b3} A={a3}; misrouted ack={ack}")


def test_debounce_rising_edges(criterion):
    rng = random.Random(99)
    c = Contact(1, 2, BodyPart.TORSO)
    wrong = 0
    for _ in range(1000):
        p = rng.random()
        timeline = [rng.random() < p for _ in range(rng.randint(0, 80))]
        state, fired = DebounceState(), 0
        for k, held in enumerate(timeline):
            events, state = debounce_step(state, [c] if held else [], k, None)
            fired += len(events)
        wrong += fired != rising_edges(timeline)
    criterion("debounce: events == rising edges", wrong == 0, f"{wrong}/1000 timelines wrong")


def check_register_history(history):
    """Violations of atomic-register semantics in a timed register/lookup history.

    ``history``: (kind, user, port | None, start, end). Every register writes a
    unique port, so a lookup's value identifies the write it observed.
    """
    writes = {}
    by_user = {}
    for op in history:
        if op[0] == "register":
            writes[op[2]] = op
            by_user.setdefault(op[1], []).append(op)
    reads = [op for op in history if op[0] == "lookup"]
    violations = []
    for r in reads:
        _, user, value, rs, re_ = r
        ws = by_user.get(user, [])
        if value is None:
            if any(w[4] < rs for w in ws):
                violations.append(("missed completed write", r))
            continue
        w = writes.get(value)
        if w is None or w[1] != user or w[3] > re_:
            violations.append(("value never written before read", r))
            continue
        if any(w[4] < w2[3] and w2[4] < rs for w2 in ws):
            violations.append(("stale read", r))
    # read-read ordering: a later read may not observe an older write
    for user in by_user:
        rs_ = sorted((r for r in reads if r[1] == user and r[2] is not None), key=lambda r: r[3])
        for r1 in rs_:
            for r2 in rs_:
                if r1[4] < r2[3]:
                    w1, w2 = writes[r1[2]], writes[r2[2]]
                    if w2[4] < w1[3]:
                        violations.append(("new-old inversion", r1, r2))
    return violations


def test_registry_linearizability(criterion):
    users = [1, 2, 3, 4, 5]
    history, lock = [], threading.Lock()
    port_counter = iter(range(1, 60000))

    def worker(seed):
        rng = random.Random(seed)
        with socket.create_connection(srv.address, timeout=5) as sock:
            for _ in range(250):
                user = rng.choice(users)
                if rng.random() < 0.5:
                    with lock:
                        port = next(port_counter)
                    t0 = time.perf_counter_ns()
                    send_message(sock, Register(user, "127.0.0.1", port))
                    assert read_message(sock) == RegisterAck(Status.OK)
                    op = ("register", user, port, t0, time.perf_counter_ns())
                else:
                    t0 = time.perf_counter_ns()
                    send_message(sock, Lookup(user))
                    resp = read_message(sock)
                    op = ("lookup", user, resp.port if resp.status is Status.OK else None,
                          t0, time.perf_counter_ns())
                with lock:
                    history.append(op)

    with RegistryServer(("127.0.0.1", 0)) as srv:
        threads = [threading.Thread(target=worker, args=(s,)) for s in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        t_end = time.perf_counter_ns()
        for u in users:
            resp = lookup(srv.address, u)
            history.append(("lookup", u, resp.port if resp.status is Status.OK else None,
                            t_end, time.perf_counter_ns()))
    violations = check_register_history(history)
    n_reads = sum(op[0] == "lookup" for op in history)
    criterion("registry linearizability (8 connections)",
              not violations and len(history) == 8 * 250 + len(users),
              f"{len(history)} ops, {n_reads} lookups, violations={violations[:3]}")


@pytest.mark.slow
def test_latency_budget(criterion):
    # 4 avatars in two hand-shaking pairs; only users 1 and 2 have devices
    sc = touch_cycle_scenario(4, duration_ms=60_000, period_ms=1000, hold_ms=400, repeat_every=3)
    report = run(sc, RunOptions(device_users=[1, 2], realtime=True))
    lat = report.latency
    ok = lat.count >= 300 and lat.p99 is not None and lat.p99 < 20.0
    criterion("latency budget p99(actuated-detected) < 20 ms over 60 s", ok,
              f"n={lat.count} p50={lat.p50:.3f} p95={lat.p95:.3f} p99={lat.p99:.3f} "
              f"max={lat.max:.3f} ms; counters={report.counters}")


def test_fault_tolerance(criterion, tmp_path):
    sc = touch_cycle_scenario(4, duration_ms=10_000, period_ms=500, hold_ms=200, repeat_every=2)
    faults = FaultConfig(garbage_rate=0.10, drop_ack_rate=0.10)
    with RegistryServer(("127.0.0.1", 0)) as srv:
        devices = []
        for uid in (1, 2, 3, 4):
            d = Device(DeviceConfig(uid, port=0, server=srv.address,
                                    log_path=str(tmp_path / f"d{uid}.jsonl")))
            devices.append(d.start())
        try:
            report = run(sc, RunOptions(registry=srv.address, faults=faults, seed=7,
                                        device_logs=[str(tmp_path / f"d{u}.jsonl") for u in (1, 2, 3, 4)]))
            for d in devices:
                d.wait_idle(1)
            # everything still serving after the run
            registry_up = all(lookup(srv.address, d.config.user_id).port == d.config.port
                              for d in devices)
            devices_up = True
            for d in devices:
                with socket.create_connection(d.address, timeout=2) as sock:
                    send_message(sock, CollisionEvent(d.config.user_id, BodyPart.HEAD, 1, 65000))
                    devices_up &= read_message(sock) == EventAck(65000, Status.OK)
            for d in devices:
                d.wait_idle(1)
            device_counters = [dict(d.counters) for d in devices]
            acts = Counter((e["user_id"], e["seq"]) for d in devices for e in d.log
                           if e["kind"] == "actuation")
        finally:
            for d in devices:
                d.stop()
    c = report.counters
    conservation = c["events"] == c["oks"] + c["rejects"] + c["malformed"] + c["timeouts"] + c["not_found"]
    device_conservation = all(dc["acks_ok"] == dc["uart_frames"] == dc["dispatch_ok"] + dc["dispatch_errors"]
                              for dc in device_counters)
    no_dupes = max(acts.values()) == 1
    # every event the devices accepted actuated once: OK acks plus acks the runner dropped
    accounted = sum(acts.values()) - len(devices) == c["oks"] + report.faults["dropped_acks"]
    f = report.faults
    injected = (f["garbage_connections"] > 0 and f["dropped_acks"] > 0
                and f["garbage_malformed_replies"] == f["garbage_connections"])
    ok = registry_up and devices_up and conservation and device_conservation and no_dupes \
        and accounted and injected
    criterion("fault tolerance (10% garbage, 10% dropped acks)", ok,
              f"counters={c} faults={report.faults} registry_up={registry_up} "
              f"devices_up={devices_up} no_dupes={no_dupes} accounted={accounted}")
