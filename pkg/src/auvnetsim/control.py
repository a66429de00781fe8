"""NDJSON control channel over TCP, with ad-hoc WebSocket support.

Clients connect to one port. A first byte of ``G`` is read as the start of
an HTTP GET and upgraded to a WebSocket (one JSON document per text
frame), anything else is treated as raw newline-delimited JSON. Outbound
frames fan out to every connected client; inbound commands are queued for
the simulation to poll between events. A slow or dead client is dropped,
never waited on.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import socket
import struct
import threading

log = logging.getLogger(__name__)

_WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"

# Per-socket timeout. Bounds how long one publish can stall on a client
# that stopped reading; such a client is marked dead and dropped. The
# receive loops treat the same timeout as "no data yet" and keep waiting.
_CLIENT_IO_TIMEOUT_S = 1.0


class _Client:
    def __init__(self, sock: socket.socket):
        self.sock = sock
        self.ws = False
        self.alive = True
        self._lock = threading.Lock()

    def send_line(self, text: str) -> None:
        if not self.alive:
            return
        data = text.encode()
        if self.ws:
            n = len(data)
            if n <= 125:
                head = bytes((0x81, n))
            elif n <= 0xFFFF:
                head = b"\x81\x7e" + struct.pack(">H", n)
            else:
                head = b"\x81\x7f" + struct.pack(">Q", n)
            payload = head + data
        else:
            payload = data + b"\n"
        try:
            with self._lock:
                self.sock.sendall(payload)
        except OSError:
            self.alive = False

    def close(self) -> None:
        self.alive = False
        try:
            self.sock.close()
        except OSError:
            pass


class SocketControl:
    """Threaded listener implementing the engine's ControlChannel interface."""

    def __init__(self, host: str = "127.0.0.1", port: int = 8765):
        self._srv = socket.create_server((host, port), reuse_port=False)
        self.host, self.port = self._srv.getsockname()[:2]
        self._clients: list[_Client] = []
        self._inbox: list[tuple[dict, object]] = []
        self._lock = threading.Lock()
        self._closing = False
        threading.Thread(target=self._accept_loop, daemon=True).start()

    # -- ControlChannel interface --

    def poll(self):
        with self._lock:
            batch = self._inbox
            self._inbox = []
        return batch

    def publish(self, msg: dict) -> None:
        line = json.dumps(msg)
        with self._lock:
            clients = list(self._clients)
        for c in clients:
            c.send_line(line)
        with self._lock:
            self._clients = [c for c in self._clients if c.alive]

    def close(self) -> None:
        self._closing = True
        try:
            self._srv.close()
        except OSError:
            pass
        with self._lock:
            clients, self._clients = self._clients, []
        for c in clients:
            c.close()

    # -- wire handling --

    def _accept_loop(self) -> None:
        while not self._closing:
            try:
                sock, addr = self._srv.accept()
            except OSError:
                return
            log.info("control client connected from %s:%s", *addr[:2])
            threading.Thread(target=self._client_loop, args=(sock,), daemon=True).start()

    def _client_loop(self, sock: socket.socket) -> None:
        client = _Client(sock)
        try:
            # Protocol probe: WebSocket clients send their GET right away,
            # so a quarter second of silence means a raw NDJSON listener
            # that may never send anything and still wants the stream.
            sock.settimeout(0.25)
            try:
                first = sock.recv(1)
                if not first:
                    return
            except TimeoutError:
                first = b""
            finally:
                sock.settimeout(_CLIENT_IO_TIMEOUT_S)
            if first == b"G":
                if not self._ws_handshake(client, first):
                    return
                client.ws = True
                with self._lock:
                    self._clients.append(client)
                self._ws_recv_loop(client)
            else:
                with self._lock:
                    self._clients.append(client)
                self._raw_recv_loop(client, first)
        except OSError:
            pass
        finally:
            client.close()
            with self._lock:
                if client in self._clients:
                    self._clients.remove(client)

    def _enqueue(self, client: _Client, text: str) -> None:
        try:
            cmd = json.loads(text)
            if not isinstance(cmd, dict):
                raise ValueError("not an object")
        except ValueError:
            client.send_line(json.dumps({"k": "warn", "msg": "invalid JSON command"}))
            return
        reply = lambda m, c=client: c.send_line(json.dumps(m))  # noqa: E731
        with self._lock:
            self._inbox.append((cmd, reply))

    def _raw_recv_loop(self, client: _Client, first: bytes) -> None:
        buf = first
        while client.alive:
            try:
                chunk = client.sock.recv(4096)
            except TimeoutError:
                continue
            if not chunk:
                return
            buf += chunk
            while b"\n" in buf:
                line, buf = buf.split(b"\n", 1)
                if line.strip():
                    self._enqueue(client, line.decode(errors="replace"))

    def _ws_handshake(self, client: _Client, first: bytes) -> bool:
        data = first
        while b"\r\n\r\n" not in data:
            chunk = client.sock.recv(4096)
            if not chunk or len(data) > 16384:
                return False
            data += chunk
        head, _, _rest = data.partition(b"\r\n\r\n")
        key = None
        for line in head.split(b"\r\n")[1:]:
            name, _, value = line.partition(b":")
            if name.strip().lower() == b"sec-websocket-key":
                key = value.strip().decode()
        if key is None:
            client.sock.sendall(b"HTTP/1.1 400 Bad Request\r\n\r\n")
            return False
        accept = base64.b64encode(hashlib.sha1((key + _WS_GUID).encode()).digest()).decode()
        client.sock.sendall(
            (
                "HTTP/1.1 101 Switching Protocols\r\n"
                "Upgrade: websocket\r\n"
                "Connection: Upgrade\r\n"
                f"Sec-WebSocket-Accept: {accept}\r\n\r\n"
            ).encode()
        )
        return True

    def _recv_exact(self, client: _Client, n: int) -> bytes | None:
        buf = b""
        while len(buf) < n:
            if not client.alive:
                return None
            try:
                chunk = client.sock.recv(n - len(buf))
            except TimeoutError:
                continue
            if not chunk:
                return None
            buf += chunk
        return buf

    def _ws_recv_loop(self, client: _Client) -> None:
        while client.alive:
            head = self._recv_exact(client, 2)
            if head is None:
                return
            opcode = head[0] & 0x0F
            masked = head[1] & 0x80
            length = head[1] & 0x7F
            if length == 126:
                ext = self._recv_exact(client, 2)
                if ext is None:
                    return
                length = struct.unpack(">H", ext)[0]
            elif length == 127:
                ext = self._recv_exact(client, 8)
                if ext is None:
                    return
                length = struct.unpack(">Q", ext)[0]
            if length > 1 << 20:
                return
            mask = b"\x00\x00\x00\x00"
            if masked:
                mask = self._recv_exact(client, 4)
                if mask is None:
                    return
            payload = self._recv_exact(client, length) if length else b""
            if payload is None:
                return
            if masked:
                payload = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
            if opcode == 8:  # close
                return
            if opcode == 9:  # ping
                with client._lock:
                    client.sock.sendall(bytes((0x8A, len(payload))) + payload)
                continue
            if opcode == 1 and payload.strip():
                self._enqueue(client, payload.decode(errors="replace"))
