"""Frame transports: in-process queues and a single TCP connection.

Both deliver whole frames reliably and in order.  The TCP transport runs
a reader thread that drains the socket into a queue, so two parties that
both send before receiving cannot deadlock on full socket buffers.
"""

from __future__ import annotations

import queue
import socket
import threading
import time

from .messages import HEADER, MAX_FRAME, FrameError, ProtocolAbort, ProtocolError, ProtocolMessage, decode_body, serialize

_CLOSED = object()


class Transport:
    """Base class; subclasses move raw frames."""

    def __init__(self, recorder: list | None = None):
        self.recorder = recorder
        self.bytes_sent = 0
        self.bytes_received = 0

    def send_frame(self, frame: bytes) -> None:
        raise NotImplementedError

    def recv_frame(self, timeout: float | None) -> bytes:
        raise NotImplementedError

    def close(self) -> None:
        pass

    def send(self, msg: ProtocolMessage) -> None:
        frame = serialize(msg)
        if self.recorder is not None:
            self.recorder.append(("out", frame))
        self.bytes_sent += len(frame)
        self.send_frame(frame)

    def recv(self, timeout: float | None = None) -> ProtocolMessage:
        frame = self.recv_frame(timeout)
        if self.recorder is not None:
            self.recorder.append(("in", frame))
        self.bytes_received += len(frame)
        return decode_body(frame[HEADER.size:])

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _get(q: queue.Queue, timeout: float | None):
    try:
        item = q.get(timeout=timeout)
    except queue.Empty:
        raise ProtocolError(f"timed out after {timeout}s waiting for peer") from None
    if item is _CLOSED:
        q.put(_CLOSED)  # keep later recv calls failing the same way
        raise ProtocolAbort("peer disconnected")
    return item


class LoopbackTransport(Transport):
    def __init__(self, inbox: queue.Queue, outbox: queue.Queue, recorder: list | None = None):
        super().__init__(recorder)
        self._in = inbox
        self._out = outbox
        self._closed = False

    @classmethod
    def pair(cls, recorder: list | None = None) -> tuple["LoopbackTransport", "LoopbackTransport"]:
        a, b = queue.Queue(), queue.Queue()
        return cls(a, b, recorder), cls(b, a)

    def send_frame(self, frame: bytes) -> None:
        if self._closed:
            raise ProtocolAbort("transport closed")
        self._out.put(bytes(frame))

    def recv_frame(self, timeout: float | None) -> bytes:
        return _get(self._in, timeout)

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            self._out.put(_CLOSED)


def _read_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(min(n - len(buf), 1 << 20))
        if not chunk:
            return None
        buf += chunk
    return bytes(buf)


class TcpTransport(Transport):
    def __init__(self, sock: socket.socket, recorder: list | None = None):
        super().__init__(recorder)
        self.sock = sock
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._inbox: queue.Queue = queue.Queue()
        self._send_lock = threading.Lock()
        self._closed = False
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_loop(self) -> None:
        try:
            while True:
                head = _read_exact(self.sock, HEADER.size)
                if head is None:
                    break
                (length,) = HEADER.unpack(head)
                if length == 0 or length > MAX_FRAME:
                    self._inbox.put(FrameError(f"bad frame length {length}"))
                    break
                body = _read_exact(self.sock, length)
                if body is None:
                    self._inbox.put(FrameError("connection closed mid-frame"))
                    break
                self._inbox.put(head + body)
        except OSError:
            pass
        self._inbox.put(_CLOSED)

    def send_frame(self, frame: bytes) -> None:
        if self._closed:
            raise ProtocolAbort("transport closed")
        try:
            with self._send_lock:
                self.sock.sendall(frame)
        except OSError:
            raise ProtocolAbort("peer disconnected") from None

    def recv_frame(self, timeout: float | None) -> bytes:
        item = _get(self._inbox, timeout)
        if isinstance(item, Exception):
            raise item
        return item

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()

    @classmethod
    def listen(cls, host: str, port: int, timeout: float | None = 60.0,
               recorder: list | None = None, ready: threading.Event | None = None,
               bound: list | None = None) -> "TcpTransport":
        """Accept exactly one connection.  ``bound`` receives the actual port."""
        with socket.create_server((host, port)) as srv:
            srv.settimeout(timeout)
            if bound is not None:
                bound.append(srv.getsockname()[1])
            if ready is not None:
                ready.set()
            conn, _ = srv.accept()
        conn.settimeout(None)
        return cls(conn, recorder)

    @classmethod
    def connect(cls, host: str, port: int, retries: int = 50, delay: float = 0.1,
                recorder: list | None = None) -> "TcpTransport":
        last: OSError | None = None
        for _ in range(retries):
            try:
                return cls(socket.create_connection((host, port)), recorder)
            except OSError as exc:
                last = exc
                time.sleep(delay)
        raise ProtocolError(f"could not connect to {host}:{port}: {last}")


def tcp_pair(host: str = "127.0.0.1", recorder: list | None = None) -> tuple[TcpTransport, TcpTransport]:
    """Two connected endpoints on an ephemeral local port (the first records)."""
    ready = threading.Event()
    bound: list = []
    result: dict = {}

    def serve():
        try:
            result["server"] = TcpTransport.listen(host, 0, recorder=recorder, ready=ready, bound=bound)
        except Exception as exc:  # surfaced below
            result["error"] = exc
            ready.set()

    t = threading.Thread(target=serve, daemon=True)
    t.start()
    ready.wait(10)
    if "error" in result:
        raise result["error"]
    client = TcpTransport.connect(host, bound[0])
    t.join(10)
    if "server" not in result:
        raise ProtocolError(f"tcp pair setup failed: {result.get('error')}")
    return result["server"], client
