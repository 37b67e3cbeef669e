"""Two interchangeable transports.

Simulated mode: a deterministic in-process network driven by a virtual
frame clock. Every packet samples (loss, jitter) from one seeded
generator in send order, so identical (seed, conditions, workload) gives
an identical delivery trace. Deliveries carry continuous timestamps; the
lockstep loop only observes them at frame boundaries.

Real mode: non-blocking UDP sockets with the same endpoint interface
(``send(payload, now_ms)`` / ``poll(now_ms) -> [(payload, arrival_ms)]``),
timestamps taken from the wall clock.

The simulated server services each camera request at its arrival
timestamp (plus an optional fixed server cost) rather than at the next
tick boundary, and applies latest-wins to any backlog drained in one
tick: a response's delivery time is request send time + uplink delay +
server cost + downlink delay, while a burst of stale requests still
renders only the newest.
"""

from __future__ import annotations

import heapq
import logging
import socket
import time
from dataclasses import dataclass

import numpy as np

from . import wire
from .camera import Intrinsics
from .errors import TransportError, WireDecodeError
from .scene import Scene
from .visibility import trace_visibility

logger = logging.getLogger(__name__)

MAX_DATAGRAM = 65507
DEFAULT_FRAME_TIME_MS = 11.1  # 90 FPS


@dataclass(frozen=True)
class NetworkConditions:
    """Per-direction base delay, symmetric uniform jitter, independent
    per-packet loss. Fully determined by ``seed``."""

    delay_up_ms: float = 0.0
    delay_down_ms: float = 0.0
    jitter_ms: float = 0.0
    loss_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.delay_up_ms < 0 or self.delay_down_ms < 0 or self.jitter_ms < 0:
            raise ValueError("delays and jitter must be >= 0")
        if not (0.0 <= self.loss_prob <= 1.0):
            raise ValueError("loss_prob must be in [0, 1]")


class VirtualClock:
    """Frame-quantized virtual time. All simulated observation happens at
    frame boundaries; time never reads the wall clock."""

    def __init__(self, frame_time_ms: float = DEFAULT_FRAME_TIME_MS):
        if frame_time_ms <= 0:
            raise ValueError("frame_time_ms must be > 0")
        self.frame_time_ms = frame_time_ms
        self.current_frame = 0

    @property
    def now_ms(self) -> float:
        return self.current_frame * self.frame_time_ms

    def time_of(self, frame: int) -> float:
        return frame * self.frame_time_ms

    def advance(self) -> int:
        self.current_frame += 1
        return self.current_frame


class _SimRail:
    """One direction of the simulated link."""

    def __init__(self, network: "SimNetwork", base_delay_ms: float):
        self._net = network
        self._base = base_delay_ms
        self._heap: list[tuple[float, int, bytes]] = []

    def send(self, payload: bytes, send_time_ms: float) -> None:
        if len(payload) > MAX_DATAGRAM:
            raise TransportError(f"datagram of {len(payload)} bytes exceeds {MAX_DATAGRAM}")
        cond = self._net.conditions
        rng = self._net.rng
        # always two draws per send, so traces stay aligned across configs
        lost = rng.random() < cond.loss_prob
        jitter = rng.uniform(-cond.jitter_ms, cond.jitter_ms) if cond.jitter_ms > 0 else 0.0
        if lost:
            self._net.dropped += 1
            return
        delay = max(0.0, self._base + jitter)
        heapq.heappush(self._heap, (send_time_ms + delay, self._net.next_seq(), payload))

    def poll(self, now_ms: float) -> list[tuple[bytes, float]]:
        out = []
        while self._heap and self._heap[0][0] <= now_ms:
            t, _seq, payload = heapq.heappop(self._heap)
            out.append((payload, t))
        return out

    @property
    def in_flight(self) -> int:
        return len(self._heap)


class SimNetwork:
    """Bidirectional simulated link with independent per-direction delays
    and a shared deterministic sampler."""

    def __init__(self, conditions: NetworkConditions):
        self.conditions = conditions
        self.rng = np.random.Generator(np.random.PCG64(conditions.seed))
        self.dropped = 0
        self._seq = 0
        self._up = _SimRail(self, conditions.delay_up_ms)
        self._down = _SimRail(self, conditions.delay_down_ms)
        self.client = SimEndpoint(self._up, self._down)
        self.server = SimEndpoint(self._down, self._up)

    def next_seq(self) -> int:
        self._seq += 1
        return self._seq

    @property
    def in_flight(self) -> int:
        return self._up.in_flight + self._down.in_flight


class SimEndpoint:
    """Endpoint view of the simulated link: sends on one rail, receives
    from the other. Ties in delivery time resolve in send order."""

    def __init__(self, tx: _SimRail, rx: _SimRail):
        self._tx = tx
        self._rx = rx

    def send(self, payload: bytes, now_ms: float) -> None:
        self._tx.send(payload, now_ms)

    def poll(self, now_ms: float) -> list[tuple[bytes, float]]:
        """All packets with delivery time <= now, ordered by
        (delivery time, send order). Non-blocking."""
        return self._rx.poll(now_ms)


class UdpEndpoint:
    """Non-blocking UDP socket with the simulated endpoint's interface.
    Arrival timestamps come from the wall clock at drain time."""

    def __init__(self, bind: tuple[str, int] | None = None,
                 peer: tuple[str, int] | None = None):
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        try:
            if bind is not None:
                self._sock.bind(bind)
        except OSError as e:
            self._sock.close()
            raise TransportError(f"cannot bind UDP socket on {bind}: {e}") from e
        self._sock.setblocking(False)
        self.peer = peer

    @property
    def address(self) -> tuple[str, int]:
        return self._sock.getsockname()

    def send(self, payload: bytes, now_ms: float = 0.0) -> None:
        if self.peer is None:
            raise TransportError("no peer address set")
        if len(payload) > MAX_DATAGRAM:
            raise TransportError(f"datagram of {len(payload)} bytes exceeds {MAX_DATAGRAM}")
        try:
            self._sock.sendto(payload, self.peer)
        except OSError as e:
            raise TransportError(f"UDP send failed: {e}") from e

    def poll(self, now_ms: float | None = None) -> list[tuple[bytes, float]]:
        out = []
        t = time.perf_counter() * 1000.0 if now_ms is None else now_ms
        while True:
            try:
                payload, addr = self._sock.recvfrom(65536)
            except BlockingIOError:
                break
            except OSError as e:
                raise TransportError(f"UDP receive failed: {e}") from e
            self._last_source = addr
            out.append((payload, t))
        return out

    @property
    def last_source(self) -> tuple[str, int] | None:
        return getattr(self, "_last_source", None)

    def close(self) -> None:
        self._sock.close()


def _newest_camera(arrivals: list[tuple[bytes, float]]):
    """Latest-wins over a drained backlog: the highest-frame camera update
    and its arrival time, or None. Undecodable packets are logged and
    skipped."""
    best = None
    for payload, t_arr in arrivals:
        try:
            if wire.packet_type(payload) != wire.TYPE_CAMERA:
                continue
            pkt = wire.decode_camera(payload)
        except WireDecodeError as e:
            logger.warning("dropping undecodable packet: %s", e)
            continue
        if best is None or pkt.frame > best[0].frame:
            best = (pkt, t_arr)
    return best


class SimServer:
    """Simulated render server: drains camera updates each tick, renders
    the newest, and emits response chunks stamped from the request's
    arrival time plus a fixed server cost."""

    def __init__(self, scene: Scene, intr: Intrinsics, endpoint: SimEndpoint,
                 server_delay_ms: float = 0.0):
        self.scene = scene
        self.intr = intr
        self.endpoint = endpoint
        self.server_delay_ms = server_delay_ms
        self.last_frame = -1
        self.frames_served = 0

    def tick(self, now_ms: float) -> None:
        best = _newest_camera(self.endpoint.poll(now_ms))
        if best is None:
            return
        pkt, t_arr = best
        if pkt.frame <= self.last_frame:
            return
        bitmap = trace_visibility(self.scene, pkt.to_pose(), self.intr, enlarged=True)
        compressed = wire.compress_bitmap(bitmap)
        t_send = t_arr + self.server_delay_ms
        for chunk in wire.chunk_frame(compressed, pkt.frame):
            self.endpoint.send(chunk.encode(), t_send)
        self.last_frame = pkt.frame
        self.frames_served += 1


def server_loop(scene: Scene, intr: Intrinsics, endpoint: UdpEndpoint,
                frame_time_ms: float = DEFAULT_FRAME_TIME_MS,
                server_delay_ms: float = 0.0,
                stop=None, max_ticks: int | None = None) -> int:
    """Real-mode server: paced at its own frame rate, each tick drains the
    socket, renders the newest camera update and sends the chunked
    response to the requester. Returns the number of frames served."""
    last_frame = -1
    served = 0
    ticks = 0
    while (stop is None or not stop.is_set()) and (max_ticks is None or ticks < max_ticks):
        t0 = time.perf_counter()
        arrivals = endpoint.poll()
        best = _newest_camera(arrivals)
        if best is not None and best[0].frame > last_frame:
            pkt, _t_arr = best
            if endpoint.peer is None:
                endpoint.peer = endpoint.last_source
            if server_delay_ms > 0:
                time.sleep(server_delay_ms / 1000.0)
            bitmap = trace_visibility(scene, pkt.to_pose(), intr, enlarged=True)
            compressed = wire.compress_bitmap(bitmap)
            for chunk in wire.chunk_frame(compressed, pkt.frame):
                endpoint.send(chunk.encode())
            last_frame = pkt.frame
            served += 1
        ticks += 1
        elapsed = (time.perf_counter() - t0) * 1000.0
        if elapsed < frame_time_ms:
            time.sleep((frame_time_ms - elapsed) / 1000.0)
    return served
