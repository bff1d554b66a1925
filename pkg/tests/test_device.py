import json
import socket
import time

import pytest

from hapticvr.body import IDENTITY_MOTOR_MAP, BodyPart
from hapticvr.device import (
    ActuationRecord,
    ConfigurationError,
    Device,
    DeviceConfig,
    MotorCommand,
    OverlapPolicy,
    RegistrationError,
    UserMismatch,
    actuate,
    handle_event_connection,
    load_device_config,
    mcu_dispatch,
    register_with_server,
)
from hapticvr.registry import RegistryServer, lookup
from hapticvr.wire import (
    ChecksumMismatch,
    CollisionEvent,
    EventAck,
    Status,
    encode_message,
    read_message,
    send_message,
)

FRAME = bytes.fromhex("7E 02 05 00 07 00")


def cfg(**kw):
    kw.setdefault("user_id", 2)
    return DeviceConfig(**kw)


def test_config_defaults_and_validation():
    c = cfg()
    assert c.port == 4212 and c.pulse_ms == 200
    with pytest.raises(ConfigurationError):
        cfg(pulse_ms=0)
    dup = dict(IDENTITY_MOTOR_MAP)
    dup[BodyPart.TORSO] = 0
    with pytest.raises(ConfigurationError):
        cfg(motor_map=dup)
    with pytest.raises(ConfigurationError):
        cfg(overlap_policy="sometimes")


def test_load_device_config(tmp_path):
    mm = {p.label: 9 - int(p) for p in BodyPart}
    path = tmp_path / "dev.json"
    path.write_text(json.dumps({"user_id": 3, "port": 5003, "pulse_ms": 150,
                                "overlap_policy": "restart", "motor_map": mm,
                                "server": "127.0.0.1:4999"}))
    c = load_device_config(path)
    assert c.user_id == 3 and c.port == 5003 and c.pulse_ms == 150
    assert c.overlap_policy is OverlapPolicy.RESTART
    assert c.motor_map[BodyPart.RIGHT_HAND] == 4
    assert c.server == ("127.0.0.1", 4999)


def test_event_for_this_device():
    ack, frame = handle_event_connection(CollisionEvent(2, BodyPart.RIGHT_HAND, 1, 7), cfg())
    assert ack == EventAck(7, Status.OK)
    assert frame == FRAME


def test_event_for_another_user():
    ack, frame = handle_event_connection(CollisionEvent(3, BodyPart.RIGHT_HAND, 1, 7), cfg())
    assert ack == EventAck(7, Status.REJECTED_WRONG_USER)
    assert frame is None


def test_corrupted_event_bytes():
    raw = bytearray(encode_message(CollisionEvent(2, BodyPart.RIGHT_HAND, 1, 7)))
    raw[5] ^= 0x40
    assert handle_event_connection(bytes(raw), cfg()) == (EventAck(0, Status.MALFORMED), None)


def test_mcu_dispatch():
    assert mcu_dispatch(FRAME, cfg()) == MotorCommand(5, 200, 7)
    with pytest.raises(ChecksumMismatch):
        mcu_dispatch(FRAME[:-1] + b"\xff", cfg())
    with pytest.raises(UserMismatch):
        mcu_dispatch(FRAME, cfg(user_id=3))


def test_actuate_idle_channel():
    assert actuate(MotorCommand(5, 200, 7), [], 1000) == [ActuationRecord(5, 1000, 1200, 7)]


def test_actuate_extend():
    tl = [ActuationRecord(5, 1000, 1200, 7)]
    assert actuate(MotorCommand(5, 200, 8), tl, 1100, OverlapPolicy.EXTEND) == [
        ActuationRecord(5, 1000, 1300, 7)]


def test_actuate_restart():
    tl = [ActuationRecord(5, 1000, 1200, 7)]
    assert actuate(MotorCommand(5, 200, 8), tl, 1100, OverlapPolicy.RESTART) == [
        ActuationRecord(5, 1000, 1100, 7), ActuationRecord(5, 1100, 1300, 8)]


def test_actuate_other_channel_and_expired():
    tl = [ActuationRecord(5, 1000, 1200, 7)]
    out = actuate(MotorCommand(3, 200, 8), tl, 1100)
    assert out[-1] == ActuationRecord(3, 1100, 1300, 8)
    out = actuate(MotorCommand(5, 200, 9), tl, 1200)
    assert out == [ActuationRecord(5, 1000, 1200, 7), ActuationRecord(5, 1200, 1400, 9)]


def test_actuate_restart_at_same_instant_replaces():
    tl = [ActuationRecord(5, 1000, 1200, 7)]
    assert actuate(MotorCommand(5, 200, 8), tl, 1000, OverlapPolicy.RESTART) == [
        ActuationRecord(5, 1000, 1200, 8)]


def test_timeline_disjoint_under_random_commands():
    import random
    rng = random.Random(1)
    for policy in OverlapPolicy:
        tl, t = [], 0.0
        for seq in range(300):
            t += rng.choice([0, 10, 50, 150, 400])
            tl = actuate(MotorCommand(rng.randrange(3), rng.choice([50, 200]), seq), tl, t, policy)
        for ch in range(3):
            recs = [r for r in tl if r.motor_channel == ch]
            assert all(r.start_ms < r.end_ms for r in recs)
            assert all(a.end_ms <= b.start_ms for a, b in zip(recs, recs[1:]))


# -- networked -----------------------------------------------------------------

@pytest.fixture
def registry():
    with RegistryServer(("127.0.0.1", 0)) as srv:
        yield srv


@pytest.fixture
def device(registry):
    dev = Device(DeviceConfig(2, port=0, server=registry.address)).start()
    yield dev
    dev.stop()


def deliver(address, msg_or_bytes):
    with socket.create_connection(address, timeout=2) as sock:
        sock.sendall(msg_or_bytes if isinstance(msg_or_bytes, bytes) else encode_message(msg_or_bytes))
        return read_message(sock)


def test_registration_visible_in_registry(device, registry):
    resp = lookup(registry.address, 2)
    assert (resp.status, resp.port) == (Status.OK, device.config.port)


def test_reregistration_overwrites(registry):
    with Device(DeviceConfig(5, port=0, server=registry.address)) as d1:
        d1.start()
        first = d1.config.port
    with Device(DeviceConfig(5, port=0, server=registry.address)) as d2:
        d2.start()
        assert lookup(registry.address, 5).port == d2.config.port != first


def test_registration_fails_after_retries():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        dead = s.getsockname()
    t0 = time.monotonic()
    with pytest.raises(RegistrationError):
        register_with_server(DeviceConfig(2, port=1, server=dead), timeout=0.2)
    assert 3.3 < time.monotonic() - t0 < 4.5


def test_end_to_end_single_event(device):
    ack = deliver(device.address, CollisionEvent(2, BodyPart.RIGHT_HAND, 1, 7))
    assert ack == EventAck(7, Status.OK)
    assert device.wait_idle(1)
    (rec,) = device.timeline
    assert (rec.motor_channel, rec.seq) == (5, 7)
    assert rec.end_ms - rec.start_ms == pytest.approx(200)


def test_uart_hop_takes_serial_time(device):
    t0 = time.perf_counter()
    device.forward_uart(bytes.fromhex("7E 02 05 00 08 0F"))
    assert time.perf_counter() - t0 >= 6 * 10 / 115200
    assert device.wait_idle(1)
    assert device.counters["dispatch_ok"] == 1


def test_wrong_user_no_actuation(device):
    ack = deliver(device.address, CollisionEvent(3, BodyPart.RIGHT_HAND, 1, 7))
    assert ack == EventAck(7, Status.REJECTED_WRONG_USER)
    assert device.timeline == []


def test_garbage_connection_does_not_kill_device(device):
    assert deliver(device.address, b"\x13\x37garbage") == EventAck(0, Status.MALFORMED)
    assert deliver(device.address, CollisionEvent(2, BodyPart.HEAD, 1, 1)) == EventAck(1, Status.OK)


def test_duplicate_events_merge_under_extend(device):
    for _ in range(10):
        deliver(device.address, CollisionEvent(2, BodyPart.LEFT_HAND, 1, 42))
    device.wait_idle(1)
    acts = [e for e in device.log if e["kind"] == "actuation"]
    assert len(acts) == 10
    # one continuous record: first start to last actuation + pulse
    (rec,) = device.timeline
    assert rec.start_ms == pytest.approx(acts[0]["actuated_ms"])
    assert rec.end_ms == pytest.approx(acts[-1]["actuated_ms"] + 200)


def test_keep_alive_connection(device):
    with socket.create_connection(device.address, timeout=2) as sock:
        for seq in range(1, 6):
            send_message(sock, CollisionEvent(2, BodyPart.TORSO, 1, seq))
            assert read_message(sock) == EventAck(seq, Status.OK)


def test_conservation_and_log_file(registry, tmp_path):
    log_path = tmp_path / "dev.jsonl"
    cfg_ = DeviceConfig(2, port=0, server=registry.address, log_path=str(log_path))
    with Device(cfg_) as dev:
        dev.start()
        for seq in range(1, 21):
            target = 2 if seq % 3 else 3
            deliver(dev.address, CollisionEvent(target, BodyPart(seq % 10), 1, seq))
        dev.forward_uart(bytes.fromhex("7E 03 05 00 07 01"))  # injected frame for another user
        dev.wait_idle(1)
        c = dict(dev.counters)
    assert c["acks_ok"] == 14 and c["acks_rejected"] == 6
    assert c["uart_frames"] == c["acks_ok"] + 1
    assert c["dispatch_ok"] + c["dispatch_errors"] == c["uart_frames"]
    assert c["dispatch_errors"] == 1
    lines = [json.loads(l) for l in log_path.read_text().splitlines()]
    assert sum(1 for l in lines if l["kind"] == "actuation") == 14
    assert all(l["user_id"] == 2 for l in lines)


def test_dedup_seq(registry):
    with Device(DeviceConfig(2, port=0, server=registry.address, dedup_seq=True)) as dev:
        dev.start()
        for _ in range(3):
            deliver(dev.address, CollisionEvent(2, BodyPart.HEAD, 1, 9))
        dev.wait_idle(1)
        assert dev.counters["dispatch_ok"] == 1 and dev.counters["duplicates"] == 2
