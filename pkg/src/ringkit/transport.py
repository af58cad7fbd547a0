"""Simulated radio link between host and virtual rings.

The environment owns the virtual clock, a registry of rings, and at most one
link per ring.  Three channels mirror BLE semantics: a reliable ordered
command channel (lost frames are retried, then time out), an ordered lossy
notify channel (stream packets are silently dropped), and a reliable bulk
channel paced at a fixed byte rate for log downloads.
"""

from __future__ import annotations

import configparser
import random
import struct
from dataclasses import dataclass, field
from pathlib import Path

from ringkit import proto
from ringkit.proto import Command, Frame, Mode, Response
from ringkit.ringsim.ring import (
    DEFAULT_EPOCH_S,
    BatteryEmptyEmission,
    ChunkEmission,
    FileListEmission,
    FlashFullEmission,
    LoggingCompleteEmission,
    PacketEmission,
    SegmentClosedEmission,
    VirtualRing,
)
from ringkit.simtime import EventLoop

US = 1_000_000

DEFAULT_BULK_RATE_BPS = 16_000          # bytes/second == 128 kbit/s
RSSI_FLOOR_DBM, RSSI_CEIL_DBM = -100, -30
RSSI_SCAN_SIGMA_DBM = 2.0

COMMAND_ATTEMPTS = 3
ATTEMPT_TIMEOUT_US = 500_000


class TransportError(Exception):
    pass


class UnknownDevice(TransportError):
    pass


class AlreadyConnected(TransportError):
    pass


class Timeout(TransportError):
    pass


class Disconnected(TransportError):
    pass


class NoSuchFile(TransportError):
    pass


@dataclass(frozen=True)
class Advertisement:
    name: str
    mac: str
    rssi_dbm: float
    battery_pct: int
    fw_version: str


@dataclass
class LatencySpec:
    mean_ms: float = 15.0
    jitter_ms: float = 5.0

    def draw_us(self, rng: random.Random) -> int:
        lo = max(0.0, self.mean_ms - self.jitter_ms)
        hi = self.mean_ms + self.jitter_ms
        return round(rng.uniform(lo, hi) * 1000)


@dataclass
class LinkParams:
    up: LatencySpec = field(default_factory=LatencySpec)
    down: LatencySpec = field(default_factory=LatencySpec)
    loss_rate: float = 0.0
    bulk_rate_bps: int = DEFAULT_BULK_RATE_BPS

    @classmethod
    def from_profile(cls, path: str | Path) -> "LinkParams":
        """Load a fault-injection profile ([link] section, see docs/ENVFILE.md)."""
        cp = configparser.ConfigParser()
        cp.read(str(path))
        return cls.from_section(cp["link"] if cp.has_section("link") else {})

    @classmethod
    def from_section(cls, sec) -> "LinkParams":
        def get(key, default):
            return float(sec.get(key, default))
        return cls(
            up=LatencySpec(get("latency_up_ms", 15.0), get("latency_up_jitter_ms", 5.0)),
            down=LatencySpec(get("latency_down_ms", 15.0), get("latency_down_jitter_ms", 5.0)),
            loss_rate=get("loss_rate", 0.0),
            bulk_rate_bps=int(get("bulk_rate_bps", DEFAULT_BULK_RATE_BPS)),
        )


@dataclass
class _Slot:
    ring: VirtualRing
    base_rssi_dbm: float
    wake_handle: list | None = None
    link: "Link | None" = None


class Environment:
    """A virtual world: clock, powered rings, and the links into them."""

    def __init__(self, *, seed: int = 0, params: LinkParams | None = None):
        self.loop = EventLoop()
        self.rng = random.Random(seed)
        self.seed = seed
        self.params = params or LinkParams()
        self._slots: dict[str, _Slot] = {}

    # ------------------------------------------------------------ registry

    def add_ring(self, ring: VirtualRing, *, rssi_dbm: float | None = None) -> str:
        if ring.mac in self._slots:
            raise ValueError(f"duplicate mac {ring.mac}")
        if rssi_dbm is None:
            rssi_dbm = self.rng.uniform(-75.0, -45.0)
        slot = _Slot(ring=ring, base_rssi_dbm=rssi_dbm)
        self._slots[ring.mac] = slot
        self._schedule_wake(slot)
        return ring.mac

    def rings(self) -> list[VirtualRing]:
        return [s.ring for s in self._slots.values()]

    def ring(self, mac: str) -> VirtualRing:
        if mac not in self._slots:
            raise UnknownDevice(mac)
        return self._slots[mac].ring

    # ------------------------------------------------------------ time

    @property
    def now_us(self) -> int:
        return self.loop.now_us

    def host_epoch_us(self) -> int:
        """The host clock, assumed disciplined: virtual time on the world epoch."""
        return DEFAULT_EPOCH_S * US + self.loop.now_us

    def run_until(self, t_us: int) -> None:
        self.loop.run_until(t_us)

    def run_for(self, dt_us: int) -> None:
        self.loop.run_for(dt_us)

    # ------------------------------------------------------------ ring service

    def _schedule_wake(self, slot: _Slot) -> None:
        if slot.wake_handle is not None:
            EventLoop.cancel(slot.wake_handle)
            slot.wake_handle = None
        t = slot.ring.next_wakeup_us()
        if t is not None:
            slot.wake_handle = self.loop.call_at(t, lambda: self._on_wake(slot))

    def _on_wake(self, slot: _Slot) -> None:
        slot.wake_handle = None
        self._service(slot)

    def _service(self, slot: _Slot) -> None:
        """Advance a ring to now and route whatever it emitted."""
        emissions = slot.ring.advance_to(self.loop.now_us)
        for em in emissions:
            self._route(slot, em)
        if slot.link and not slot.ring.radio_on:
            slot.link._force_drop()
        self._schedule_wake(slot)

    def _route(self, slot: _Slot, em) -> None:
        link = slot.link
        if link is None or link.state != "connected":
            return
        if isinstance(em, PacketEmission):
            link._notify_send(proto.encode_stream_packet(em.packet), em.t_us)
        elif isinstance(em, ChunkEmission):
            link._bulk_send(em.chunk, em.t_us)
        elif isinstance(em, FileListEmission):
            link._notify_send(proto.encode_file_list_page(em.page), em.t_us, lossless=True)
        elif isinstance(em, SegmentClosedEmission):
            link._notify_send(
                proto.encode_event(proto.DeviceEvent(proto.EventCode.SEGMENT_CLOSED, em.entry)),
                em.t_us, lossless=True)
        else:
            code = {
                FlashFullEmission: proto.EventCode.FLASH_FULL,
                BatteryEmptyEmission: proto.EventCode.BATTERY_EMPTY,
                LoggingCompleteEmission: proto.EventCode.LOGGING_COMPLETE,
            }[type(em)]
            link._notify_send(proto.encode_event(proto.DeviceEvent(code)), em.t_us,
                              lossless=True)

    # ------------------------------------------------------------ scan / connect

    def scan(self, duration_s: float = 1.0) -> list[Advertisement]:
        """Advance the world by the scan window and report every advertising ring."""
        self.run_for(round(duration_s * US))
        out = []
        for slot in self._slots.values():
            self._service(slot)
            ring = slot.ring
            if not ring.radio_on:
                continue
            rssi = min(RSSI_CEIL_DBM,
                       max(RSSI_FLOOR_DBM,
                           slot.base_rssi_dbm + self.rng.gauss(0.0, RSSI_SCAN_SIGMA_DBM)))
            out.append(Advertisement(
                name=ring.name,
                mac=ring.mac,
                rssi_dbm=round(rssi, 1),
                battery_pct=ring.battery.pct_at(ring.cursor_us),
                fw_version=ring.fw_version,
            ))
        return out

    def connect(self, mac: str, params: LinkParams | None = None) -> "Link":
        slot = self._slots.get(mac)
        if slot is None:
            raise UnknownDevice(mac)
        self._service(slot)
        if not slot.ring.radio_on:
            raise UnknownDevice(f"{mac} is not advertising")
        if slot.link is not None and slot.link.state == "connected":
            raise AlreadyConnected(mac)
        link = Link(self, slot, params or self.params)
        slot.link = link
        return link


class Link:
    """One host connection to one ring: command, notify and bulk channels."""

    def __init__(self, env: Environment, slot: _Slot, params: LinkParams):
        self.env = env
        self._slot = slot
        self.mac = slot.ring.mac
        self.params = params
        self.state = "connected"
        self.rng = random.Random(env.rng.getrandbits(64))
        self._host_closed = False
        self._notify_subs: list = []
        self._bulk_subs: list = []
        self._last_notify_us = 0
        self._last_bulk_us = 0
        self._bulk_busy_us = 0
        self._bulk_seq = 0
        self._corrupt_chunks: dict[int, int] = {}
        self.retries = 0
        self.last_rtt_us: int | None = None
        # annotated by the host after calibration
        self.last_offset_us: int | None = None

    @property
    def connected(self) -> bool:
        return self.state == "connected"

    # ------------------------------------------------------------ command channel

    def request(self, cmd: Command, *, attempts: int = COMMAND_ATTEMPTS,
                attempt_timeout_us: int = ATTEMPT_TIMEOUT_US) -> Response:
        """Send a command and wait (in virtual time) for its response."""
        if not self.connected:
            raise Disconnected(self.mac)
        frame_bytes = proto.encode_frame(proto.encode_command(cmd))
        for _ in range(attempts):
            sent_us = self.env.loop.now_us
            box: list[Response] = []
            up_us = self.params.up.draw_us(self.rng)
            down_us = self.params.down.draw_us(self.rng)
            lost_up = self.rng.random() < self.params.loss_rate
            lost_down = self.rng.random() < self.params.loss_rate
            if not lost_up:
                self.env.loop.call_at(
                    sent_us + up_us,
                    lambda: self._deliver_command(frame_bytes, box, down_us, lost_down))
            deadline = sent_us + attempt_timeout_us
            while not box:
                nxt = self.env.loop.peek_us()
                if nxt is None or nxt > deadline:
                    break
                self.env.loop.step()
            if box:
                self.last_rtt_us = self.env.loop.now_us - sent_us
                return box[0]
            self.env.loop.run_until(deadline)
            if not self.connected:
                raise Disconnected(self.mac)
            self.retries += 1
        raise Timeout(f"{cmd.opcode.name} to {self.mac}: {attempts} attempts lost")

    def _deliver_command(self, frame_bytes: bytes, box: list, down_us: int,
                         lost_down: bool) -> None:
        if self._host_closed or not self._slot.ring.radio_on:
            return
        self.env._service(self._slot)
        if not self._slot.ring.radio_on:
            return
        cmd = proto.decode_message(proto.decode_frame(frame_bytes))
        resp, emissions = self._slot.ring.apply_command(cmd)
        for em in emissions:
            self.env._route(self._slot, em)
        self.env._schedule_wake(self._slot)
        # the response left the antenna before any radio-sleep the command arms,
        # so it is delivered even if the link drops meanwhile
        self.env.loop.call_at(self.env.loop.now_us + down_us,
                              lambda: self._finish_response(resp, box, lost_down))

    def _finish_response(self, resp: Response, box: list, lost_down: bool) -> None:
        if self._host_closed or lost_down:
            return
        box.append(resp)

    # ------------------------------------------------------------ notify channel

    def subscribe_notify(self, cb) -> None:
        self._notify_subs.append(cb)

    def unsubscribe_notify(self, cb) -> None:
        if cb in self._notify_subs:
            self._notify_subs.remove(cb)

    def _notify_send(self, frame: Frame, t_emit_us: int, *, lossless: bool = False) -> None:
        if not self.connected:
            return
        if not lossless and self.rng.random() < self.params.loss_rate:
            return
        latency = self.params.down.draw_us(self.rng)
        t = max(self.env.loop.now_us, t_emit_us + latency, self._last_notify_us + 1)
        self._last_notify_us = t
        data = proto.encode_frame(frame)
        self.env.loop.call_at(t, lambda: self._notify_deliver(data))

    def _notify_deliver(self, data: bytes) -> None:
        if not self.connected:
            return
        frame = proto.decode_frame(data)
        for cb in list(self._notify_subs):
            cb(frame)

    # ------------------------------------------------------------ bulk channel

    def subscribe_bulk(self, cb) -> None:
        self._bulk_subs.append(cb)

    def inject_bulk_corruption(self, chunk_ordinal: int, bit: int = 0) -> None:
        """Flip one bit in the Nth chunk of this link's bulk stream (flash-rot fault)."""
        self._corrupt_chunks[chunk_ordinal] = bit

    def _bulk_send(self, chunk: proto.Chunk, t_emit_us: int) -> None:
        if not self.connected:
            return
        ordinal = self._bulk_seq
        self._bulk_seq += 1
        if ordinal in self._corrupt_chunks:
            bit = self._corrupt_chunks.pop(ordinal)
            data = bytearray(chunk.data)
            data[0] ^= 1 << bit
            chunk = proto.Chunk(chunk.file_id, chunk.offset, bytes(data))
        # serialize on the paced bulk pipe, then ride down-link latency
        start = max(self.env.loop.now_us, t_emit_us, self._bulk_busy_us)
        txtime = (len(chunk.data) * US) // self.params.bulk_rate_bps
        end = start + txtime
        self._bulk_busy_us = end
        t = max(end + self.params.down.draw_us(self.rng), self._last_bulk_us + 1)
        self._last_bulk_us = t
        data = proto.encode_frame(proto.encode_chunk(chunk))
        self.env.loop.call_at(t, lambda: self._bulk_deliver(data))

    def _bulk_deliver(self, data: bytes) -> None:
        if not self.connected:
            return
        chunk = proto.decode_message(proto.decode_frame(data))
        for cb in list(self._bulk_subs):
            cb(chunk)

    def bulk_read(self, file_id: int, *, resume_from: int = 0,
                  progress=None, sink: bytearray | None = None) -> tuple[int, int, bytes]:
        """Stream one stored log from the device.

        Returns (size, crc, payload-from-offset).  CRC verification is the
        caller's job.  A drop mid-transfer raises Disconnected; bytes that
        made it across are retained in `sink` when one is supplied.
        """
        resp = self.request(proto.command(proto.Opcode.OPEN_FILE,
                                          file_id=file_id, offset=resume_from))
        if resp.status == proto.Status.NO_SUCH_FILE:
            raise NoSuchFile(str(file_id))
        if not resp.ok:
            raise TransportError(f"open failed: {resp.status.name}")
        size, crc = struct.unpack("<II", resp.body)
        received = sink if sink is not None else bytearray()
        expect = size - resume_from

        def on_chunk(chunk: proto.Chunk):
            if chunk.file_id == file_id:
                received.extend(chunk.data)
                if progress:
                    progress(resume_from + len(received), size)

        self.subscribe_bulk(on_chunk)
        try:
            while len(received) < expect:
                resp = self.request(proto.command(proto.Opcode.READ_CHUNK, count=32))
                if not resp.ok:
                    raise TransportError(f"read failed: {resp.status.name}")
                (queued,) = struct.unpack("<H", resp.body)
                self.env.loop.run_until(max(self._last_bulk_us, self.env.loop.now_us))
                if not self.connected:
                    raise Disconnected(self.mac)
                if queued == 0 and len(received) < expect:
                    raise TransportError("device reported end of file early")
            self.request(proto.command(proto.Opcode.CLOSE_FILE))
        finally:
            self._bulk_subs.remove(on_chunk)
        return size, crc, bytes(received)

    # ------------------------------------------------------------ teardown

    def disconnect(self) -> None:
        """Host-initiated drop; the device aborts any download in progress."""
        if not self.connected:
            return
        self.state = "disconnected"
        self._host_closed = True
        ring = self._slot.ring
        if ring.mode == Mode.DOWNLOADING:
            ring.apply_command(proto.command(proto.Opcode.CLOSE_FILE))
        self._slot.link = None

    def _force_drop(self) -> None:
        if not self.connected:
            return
        self.state = "disconnected"
        self._slot.link = None
