"""Central server: user_id -> device address registry over TCP.

Devices announce their listening address with ``Register``; world clients
resolve a user's device with ``Lookup`` and then connect to it directly. In
relay mode the server also accepts ``CollisionEvent`` and forwards it to the
registered device itself.
"""

from __future__ import annotations

import logging
import socket
import socketserver
import threading
import time
from dataclasses import dataclass
from typing import Mapping

from .body import is_user_id
from .wire import (
    CollisionEvent,
    EventAck,
    Lookup,
    LookupResp,
    Register,
    RegisterAck,
    Status,
    WireError,
    read_message,
    reject_and_close,
    send_message,
)

log = logging.getLogger(__name__)

DEFAULT_PORT = 4210
DEFAULT_IDLE_TIMEOUT = 5.0
FORWARD_TIMEOUT = 0.25


@dataclass(frozen=True)
class RegistryEntry:
    user_id: int
    ipv4: str
    port: int
    registered_at: float


Registry = Mapping[int, RegistryEntry]


def now_ms() -> float:
    """Host-wide monotonic clock in milliseconds (comparable across processes)."""
    return time.monotonic_ns() / 1e6


def handle_register(msg: Register, registry: Registry,
                    at_ms: float | None = None) -> tuple[RegisterAck, Registry]:
    if not is_user_id(msg.user_id):
        return RegisterAck(Status.MALFORMED), registry
    updated = dict(registry)
    updated[msg.user_id] = RegistryEntry(
        msg.user_id, msg.ipv4, msg.port, now_ms() if at_ms is None else at_ms)
    return RegisterAck(Status.OK), updated


def handle_lookup(msg: Lookup, registry: Registry) -> LookupResp:
    entry = registry.get(msg.user_id)
    if entry is None:
        return LookupResp(Status.NOT_FOUND, "0.0.0.0", 0)
    return LookupResp(Status.OK, entry.ipv4, entry.port)


def forward_event(event: CollisionEvent, address: tuple[str, int],
                  timeout: float = FORWARD_TIMEOUT) -> EventAck | None:
    """Deliver one event on a fresh connection and wait for its ack."""
    try:
        with socket.create_connection(address, timeout=timeout) as sock:
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            send_message(sock, event)
            reply = read_message(sock)
    except (OSError, WireError) as exc:
        log.debug("forward of seq %d to %s failed: %s", event.seq, address, exc)
        return None
    return reply if isinstance(reply, EventAck) else None


class _ConnectionHandler(socketserver.BaseRequestHandler):
    server: "RegistryServer"

    def handle(self):
        sock = self.request
        sock.settimeout(self.server.idle_timeout)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        while True:
            try:
                msg = read_message(sock)
            except WireError as exc:
                log.info("malformed frame from %s: %s", self.client_address, exc)
                reject_and_close(sock, RegisterAck(Status.MALFORMED))
                return
            except OSError:  # idle timeout or peer reset
                return
            if msg is None:
                return
            reply = self.server.dispatch(msg)
            if reply == RegisterAck(Status.MALFORMED) and not isinstance(msg, Register):
                reject_and_close(sock, reply)
                return
            if reply is None or not self._reply(reply):
                return

    def _reply(self, msg) -> bool:
        try:
            send_message(self.request, msg)
            return True
        except OSError:
            return False


class RegistryServer(socketserver.ThreadingTCPServer):
    """Threaded registry server; registry state is swapped under one lock.

    Use ``start()``/``stop()`` (or a ``with`` block) to run it on a background
    thread, or ``serve_forever()`` to block.
    """

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address=("127.0.0.1", DEFAULT_PORT), registry: Registry | None = None,
                 idle_timeout: float = DEFAULT_IDLE_TIMEOUT, relay: bool = False):
        super().__init__(address, _ConnectionHandler)
        self.idle_timeout = idle_timeout
        self.relay = relay
        self._registry: Registry = dict(registry or {})
        self._lock = threading.Lock()
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self.server_address[:2]

    def snapshot(self) -> Registry:
        with self._lock:
            return dict(self._registry)

    def dispatch(self, msg):
        if isinstance(msg, Register):
            with self._lock:
                ack, self._registry = handle_register(msg, self._registry)
            if ack.status is Status.OK:
                log.info("registered user %d at %s:%d", msg.user_id, msg.ipv4, msg.port)
            return ack
        if isinstance(msg, Lookup):
            with self._lock:
                registry = self._registry
            return handle_lookup(msg, registry)
        if isinstance(msg, CollisionEvent) and self.relay:
            resp = handle_lookup(Lookup(msg.target_user), self.snapshot())
            if resp.status is not Status.OK:
                return EventAck(msg.seq, Status.NOT_FOUND)
            # None (device silent) closes the connection; the client times out
            return forward_event(msg, (resp.ipv4, resp.port))
        return RegisterAck(Status.MALFORMED)

    def handle_error(self, request, client_address):
        log.exception("connection from %s failed", client_address)

    def start(self) -> "RegistryServer":
        self._thread = threading.Thread(
            target=self.serve_forever, kwargs={"poll_interval": 0.05},
            name=f"registry:{self.address[1]}", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.shutdown()
        self.server_close()
        if self._thread is not None:
            self._thread.join()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def serve(address=("0.0.0.0", DEFAULT_PORT), registry: Registry | None = None,
          idle_timeout: float = DEFAULT_IDLE_TIMEOUT, relay: bool = False) -> None:
    """Run the registry in the foreground until interrupted."""
    server = RegistryServer(address, registry, idle_timeout, relay)
    log.info("registry listening on %s:%d", *server.address)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()


def lookup(address: tuple[str, int], user_id: int, timeout: float = 1.0) -> LookupResp:
    with socket.create_connection(address, timeout=timeout) as sock:
        send_message(sock, Lookup(user_id))
        reply = read_message(sock)
    if not isinstance(reply, LookupResp):
        raise WireError(f"expected LookupResp, got {reply!r}")
    return reply
