"""Length-prefixed framed stream server and client for the session pipeline.

Each frame is a u32 little-endian payload length followed by one encoded
packet. Every inbound keyframe (including session init) is answered with
exactly one EnvMapResponse frame; malformed input is answered with an
error frame (kind 0xFF) and the connection stays open. When ICP is
enabled, an additional unsolicited EnvMapResponse may follow a near
keyframe's primary response once registration completes.
"""

from __future__ import annotations

import logging
import socket
import socketserver
import struct
import threading
from dataclasses import dataclass, field

import numpy as np

from . import protocol, session as session_mod
from .errors import LitFieldError, ProtocolError
from .nearfield import IcpConfig, register_icp
from .session import EnvironmentMap, Preset, ReconstructionSession, preset_config

log = logging.getLogger(__name__)

FRAME_CAP = 64 * 1024 * 1024  # bytes

_PRESET_BYTES = {0: Preset.LOW, 1: Preset.MEDIUM, 2: Preset.HIGH, 3: Preset.CUSTOM}
PRESET_TO_BYTE = {v: k for k, v in _PRESET_BYTES.items()}


def write_frame(sock: socket.socket, payload: bytes) -> None:
    if len(payload) > FRAME_CAP:
        raise ProtocolError(f"frame of {len(payload)} bytes exceeds cap")
    sock.sendall(struct.pack("<I", len(payload)) + payload)


def read_frame(sock: socket.socket) -> bytes | None:
    """Read one frame; None on clean EOF at a frame boundary."""
    header = _read_exact(sock, 4)
    if header is None:
        return None
    (length,) = struct.unpack("<I", header)
    if length > FRAME_CAP:
        raise ProtocolError(f"declared frame length {length} exceeds cap")
    return _read_exact(sock, length, eof_ok=False)


def _read_exact(sock: socket.socket, n: int, eof_ok: bool = True) -> bytes | None:
    chunks = []
    got = 0
    while got < n:
        chunk = sock.recv(min(65536, n - got))
        if not chunk:
            if eof_ok and got == 0:
                return None
            raise ProtocolError("connection closed mid-frame")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


@dataclass
class ServerConfig:
    host: str = "127.0.0.1"
    port: int = 0  # 0 = ephemeral
    max_connections: int = 32
    icp_enabled: bool = False
    icp_config: IcpConfig = field(default_factory=IcpConfig)
    default_preset: Preset = Preset.HIGH


class _ConnectionState:
    """Per-connection session map plus a lock serializing socket writes
    (the ICP worker thread shares the socket with the request loop)."""

    def __init__(self):
        self.sessions: dict[int, ReconstructionSession] = {}
        self.send_lock = threading.Lock()
        self.icp_threads: list[threading.Thread] = []


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        state = _ConnectionState()
        cfg: ServerConfig = self.server.cfg
        while True:
            try:
                payload = read_frame(self.request)
            except (ProtocolError, ConnectionError, OSError):
                break
            if payload is None:
                break
            try:
                reply = self._dispatch(state, cfg, payload)
            except LitFieldError as e:
                reply = protocol.ErrorPacket(str(e))
            except Exception as e:  # noqa: BLE001 - the server must survive fuzzing
                log.exception("unexpected error handling frame")
                reply = protocol.ErrorPacket(f"internal error: {e}")
            try:
                with state.send_lock:
                    write_frame(self.request, protocol.encode_packet(reply))
            except (ConnectionError, OSError):
                break
        for t in state.icp_threads:
            t.join(timeout=1.0)

    def _dispatch(self, state: _ConnectionState, cfg: ServerConfig,
                  payload: bytes) -> protocol.Packet:
        packet = protocol.decode_packet(payload)
        if isinstance(packet, protocol.SessionInit):
            preset = _PRESET_BYTES.get(packet.preset)
            if preset is None:
                return protocol.ErrorPacket(f"unknown preset byte {packet.preset}")
            if preset is Preset.CUSTOM:
                config = preset_config(cfg.default_preset,
                                       icp_enabled=cfg.icp_enabled)
            else:
                config = preset_config(preset, icp_enabled=cfg.icp_enabled)
            sess = session_mod.create_session(
                packet.rec_pos, config, packet.intrinsics, packet.native_res,
                packet.ambient, session_id=packet.session_id)
            state.sessions[packet.session_id] = sess
            return _map_response(sess)
        if isinstance(packet, (protocol.NearKeyframe, protocol.FarKeyframe)):
            sess = state.sessions.get(packet.session_id)
            if sess is None:
                return protocol.ErrorPacket(f"unknown session {packet.session_id}")
            if isinstance(packet, protocol.NearKeyframe):
                prior = sess.buffer.all_points() if sess.config.icp_enabled else None
                sess.ingest_near(packet.to_camera_frame())
                if sess.config.icp_enabled and prior is not None and len(prior) >= 3:
                    self._schedule_icp(state, sess, packet.view_id, prior)
            else:
                sess.ingest_far(packet.to_camera_frame())
            return _map_response(sess)
        return protocol.ErrorPacket(
            f"unexpected packet type {type(packet).__name__}")

    def _schedule_icp(self, state: _ConnectionState, sess: ReconstructionSession,
                      view_id: int, reference) -> None:
        cfg: ServerConfig = self.server.cfg

        def worker():
            source = sess.buffer.get_view(view_id)
            if source is None:
                return
            try:
                result = register_icp(source, reference, cfg.icp_config)
            except LitFieldError as e:
                log.debug("registration skipped for view %d: %s", view_id, e)
                return
            sess.apply_registration(view_id, result.pose)
            sess.reproject_near()
            try:
                with state.send_lock:
                    write_frame(self.request,
                                protocol.encode_packet(_map_response(sess)))
            except (ConnectionError, OSError):
                pass

        t = threading.Thread(target=worker, daemon=True)
        state.icp_threads.append(t)
        t.start()


def _map_response(sess: ReconstructionSession) -> protocol.EnvMapResponse:
    env = sess.compose()
    return protocol.EnvMapResponse(sess.session_id, env.width, env.height,
                                   env.to_uint8())


class _Server(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class Server:
    """Running server handle; use as a context manager or call shutdown()."""

    def __init__(self, cfg: ServerConfig = ServerConfig()):
        self._tcp = _Server((cfg.host, cfg.port), _Handler)
        self._tcp.cfg = cfg
        self._tcp.request_queue_size = cfg.max_connections
        self._thread = threading.Thread(target=self._tcp.serve_forever, daemon=True)

    @property
    def address(self) -> tuple[str, int]:
        return self._tcp.server_address[:2]

    def start(self) -> "Server":
        self._thread.start()
        return self

    def shutdown(self) -> None:
        self._tcp.shutdown()
        self._tcp.server_close()

    def __enter__(self) -> "Server":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.shutdown()


def serve(cfg: ServerConfig = ServerConfig()) -> Server:
    """Start a server in a background thread and return its handle."""
    return Server(cfg).start()


class Client:
    """Synchronous client: one request, one matched response per send."""

    def __init__(self, addr: tuple[str, int], timeout: float = 5.0):
        self._sock = socket.create_connection(addr, timeout=timeout)
        self._sock.settimeout(timeout)

    def close(self) -> None:
        self._sock.close()

    def __enter__(self) -> "Client":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def send(self, packet: protocol.Packet) -> EnvironmentMap:
        """Send one keyframe packet and return the resulting environment
        map; raises ProtocolError on an error reply and TimeoutError on a
        response timeout."""
        write_frame(self._sock, protocol.encode_packet(packet))
        return self._read_map()

    def poll_update(self, timeout: float = 0.1) -> EnvironmentMap | None:
        """Wait briefly for an unsolicited map update (ICP refinement);
        returns None if none arrives within the timeout."""
        old = self._sock.gettimeout()
        self._sock.settimeout(timeout)
        try:
            return self._read_map()
        except (TimeoutError, socket.timeout):
            return None
        finally:
            self._sock.settimeout(old)

    def _read_map(self) -> EnvironmentMap:
        try:
            payload = read_frame(self._sock)
        except socket.timeout as e:
            raise TimeoutError("timed out waiting for server response") from e
        if payload is None:
            raise ProtocolError("server closed the connection")
        reply = protocol.decode_packet(payload)
        if isinstance(reply, protocol.ErrorPacket):
            raise ProtocolError(reply.message)
        if not isinstance(reply, protocol.EnvMapResponse):
            raise ProtocolError(f"unexpected reply {type(reply).__name__}")
        rgb = np.asarray(reply.rgb, dtype=np.uint8)
        return EnvironmentMap.from_uint8(rgb)


def client_connect(addr: tuple[str, int], timeout: float = 5.0) -> Client:
    return Client(addr, timeout)
