"""Message transports: an in-memory network and a TCP JSON-lines network.

Both deliver whole JSON objects with per-session FIFO ordering and raise
ConnectionRefusedError from connect() when nothing is accepting. Handlers
(conn.on_message / conn.on_close) always run on the owning scheduler, so
component logic stays single-threaded under either transport.
"""

from __future__ import annotations

import logging
import socket
import threading
from typing import Any, Callable

from . import protocol
from .clock import PRIORITY_DELIVERY, RealScheduler, VirtualScheduler

log = logging.getLogger(__name__)

Scheduler = VirtualScheduler | RealScheduler


def parse_address(address: str) -> tuple[str, int]:
    host, _, port = address.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"address must be host:port, got {address!r}")
    return host, int(port)


class VirtualConn:
    """One endpoint of an in-memory session."""

    def __init__(self, sched: VirtualScheduler, label: str) -> None:
        self._sched = sched
        self.label = label
        self.peer: VirtualConn | None = None
        self.closed = False
        self.on_message: Callable[[dict[str, Any]], None] | None = None
        self.on_close: Callable[[], None] | None = None

    def send(self, message: dict[str, Any]) -> int:
        """Deliver to the peer at the current instant; returns wire bytes."""
        if self.closed:
            raise ConnectionError(f"{self.label}: send on closed connection")
        size = protocol.message_size(message)
        peer = self.peer
        if peer is not None and not peer.closed:
            self._sched.call_at(
                self._sched.now_ms(), peer._deliver, message, priority=PRIORITY_DELIVERY
            )
        return size

    def send_raw(self, payload: bytes) -> int:
        """Send pre-encoded line(s); used for canonical envelope bytes."""
        if self.closed:
            raise ConnectionError(f"{self.label}: send on closed connection")
        peer = self.peer
        if peer is not None and not peer.closed:
            message = protocol.decode_line(payload)
            self._sched.call_at(
                self._sched.now_ms(), peer._deliver, message, priority=PRIORITY_DELIVERY
            )
        return len(payload)

    def close(self) -> None:
        if self.closed:
            return
        self.closed = True
        peer = self.peer
        if peer is not None and not peer.closed:
            self._sched.call_at(
                self._sched.now_ms(), peer._deliver_close, priority=PRIORITY_DELIVERY
            )

    def _deliver(self, message: dict[str, Any]) -> None:
        if self.closed:
            return
        if self.on_message is not None:
            self.on_message(message)

    def _deliver_close(self) -> None:
        if self.closed:
            return
        self.closed = True
        if self.on_close is not None:
            self.on_close()


class VirtualNetwork:
    """Address book of in-process listeners over one virtual scheduler."""

    def __init__(self, sched: VirtualScheduler) -> None:
        self._sched = sched
        self._listeners: dict[str, Callable[[VirtualConn], None]] = {}

    def listen(self, address: str, on_accept: Callable[[VirtualConn], None]) -> None:
        if address in self._listeners:
            raise OSError(f"address already in use: {address}")
        self._listeners[address] = on_accept

    def unlisten(self, address: str) -> None:
        self._listeners.pop(address, None)

    def connect(self, address: str) -> VirtualConn:
        on_accept = self._listeners.get(address)
        if on_accept is None:
            raise ConnectionRefusedError(f"nothing listening on {address}")
        client = VirtualConn(self._sched, f"client->{address}")
        server = VirtualConn(self._sched, f"server@{address}")
        client.peer = server
        server.peer = client
        # The acceptor may refuse (fault injection) by raising.
        on_accept(server)
        return client


class SocketConn:
    """TCP session endpoint; a reader thread feeds the scheduler."""

    def __init__(self, sched: RealScheduler, sock: socket.socket, label: str) -> None:
        self._sched = sched
        self._sock = sock
        self.label = label
        self.closed = False
        self._close_posted = False
        self._lock = threading.Lock()
        self.on_message: Callable[[dict[str, Any]], None] | None = None
        self.on_close: Callable[[], None] | None = None
        self._reader = threading.Thread(target=self._read_loop, name=f"rx-{label}", daemon=True)

    def start_reader(self) -> None:
        self._reader.start()

    def send(self, message: dict[str, Any]) -> int:
        return self.send_raw(protocol.encode_line(message))

    def send_raw(self, payload: bytes) -> int:
        with self._lock:
            if self.closed:
                raise ConnectionError(f"{self.label}: send on closed connection")
            try:
                self._sock.sendall(payload)
            except OSError as exc:
                raise ConnectionError(f"{self.label}: {exc}") from exc
        return len(payload)

    def close(self) -> None:
        with self._lock:
            if self.closed:
                return
            self.closed = True
            try:
                self._sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            self._sock.close()

    def _read_loop(self) -> None:
        try:
            with self._sock.makefile("rb") as stream:
                for raw in stream:
                    try:
                        message = protocol.decode_line(raw)
                    except protocol.ProtocolError as exc:
                        log.warning("%s: dropping malformed line: %s", self.label, exc)
                        continue
                    self._sched.post(self._dispatch, message)
        except (OSError, ValueError):
            pass
        self._sched.post(self._dispatch_close)

    def _dispatch(self, message: dict[str, Any]) -> None:
        if not self.closed and self.on_message is not None:
            self.on_message(message)

    def _dispatch_close(self) -> None:
        if self._close_posted:
            return
        self._close_posted = True
        was_open = not self.closed
        self.closed = True
        if was_open and self.on_close is not None:
            self.on_close()


class SocketListener:
    def __init__(self, sock: socket.socket, thread: threading.Thread) -> None:
        self._sock = sock
        self._thread = thread
        self.closed = False

    @property
    def port(self) -> int:
        return self._sock.getsockname()[1]

    def close(self) -> None:
        if self.closed:
            return
        self.closed = True
        try:
            self._sock.close()
        except OSError:
            pass


class SocketNetwork:
    """TCP implementation bound to one RealScheduler."""

    def __init__(self, sched: RealScheduler) -> None:
        self._sched = sched

    def listen(self, address: str, on_accept: Callable[[SocketConn], None]) -> SocketListener:
        host, port = parse_address(address)
        server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        server.bind((host, port))
        server.listen(16)

        def accept_loop() -> None:
            while True:
                try:
                    sock, peer = server.accept()
                except OSError:
                    return
                conn = SocketConn(self._sched, sock, f"session-{peer[0]}:{peer[1]}")
                self._sched.post(self._admit, on_accept, conn)

        thread = threading.Thread(target=accept_loop, name=f"accept-{address}", daemon=True)
        thread.start()
        return SocketListener(server, thread)

    @staticmethod
    def _admit(on_accept: Callable[[SocketConn], None], conn: SocketConn) -> None:
        try:
            on_accept(conn)
        except ConnectionRefusedError:
            conn.close()
            return
        conn.start_reader()

    def connect(self, address: str) -> SocketConn:
        host, port = parse_address(address)
        try:
            sock = socket.create_connection((host, port), timeout=10)
        except OSError as exc:
            raise ConnectionRefusedError(f"connect to {address} failed: {exc}") from exc
        sock.settimeout(None)
        conn = SocketConn(self._sched, sock, f"client->{address}")
        conn.start_reader()
        return conn
