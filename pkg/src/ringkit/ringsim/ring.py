"""Virtual ring firmware: mode machine, polling scheduler, flash log, battery, RTC.

The ring is advanced along a virtual-time axis (integer microseconds).  All
internal quantities evolve analytically in absolute time (battery level,
clock offset, signal phase, noise), so advancing by one 10-second step or by
ten thousand 1-millisecond steps yields bit-identical emissions.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from ringkit import proto
from ringkit.proto import (
    Command,
    FileListPage,
    LogFileEntry,
    Mode,
    Opcode,
    Response,
    SampleRecord,
    Status,
    StatusReport,
    StreamPacket,
    crc32,
)
from ringkit.ringsim import sensors
from ringkit.ringsim.scenario import Scenario

US = 1_000_000

FLASH_CAPACITY = 128 * 1024 * 1024
FLASH_RECORD_SIZE = proto.FLASH_RECORD.size        # 38 B per logged record

BATTERY_CAPACITY_MAH = 15.0
BASE_DRAW_MA = 0.3              # SoC + housekeeping, any powered mode
IMU_DRAW_MA_AT_1KHZ = 0.88      # datasheet draw, scaled linearly with rate
TEMP_DRAW_MA = 0.05
PPG_DRAW_MA_REF = 1.437         # at 100 Hz with LED drive at the reference code
LED_REF_CODE = 32

PPG_RATES = (25, 50, 100)
IMU_RATES = (25, 50, 100)
TEMP_RATES = (1, 5, 25, 100)

JITTER_CAP_US = 8

DEFAULT_EPOCH_S = 1_735_689_600     # virtual world epoch: 2025-01-01 UTC


class RingError(Exception):
    pass


@dataclass
class SensorConfig:
    """Remotely configurable acquisition settings."""

    ppg_enabled: bool = True
    ppg_rate_hz: int = 100
    led: tuple[int, int, int] = (32, 32, 32)
    pulse_width_us: int = 400
    imu_enabled: bool = True
    imu_rate_hz: int = 100
    temp_enabled: bool = True
    temp_rate_hz: int = 25

    @classmethod
    def reference(cls) -> "SensorConfig":
        """All three modalities at 100 Hz with reference LED drive."""
        return cls(temp_rate_hz=100)

    def enabled_mask(self) -> int:
        return (
            (proto.PRESENT_PPG if self.ppg_enabled else 0)
            | (proto.PRESENT_IMU if self.imu_enabled else 0)
            | (proto.PRESENT_TEMP if self.temp_enabled else 0)
        )

    def master_rate_hz(self) -> int:
        """Fastest enabled rate; every slower enabled rate divides it."""
        rates = []
        if self.ppg_enabled:
            rates.append(self.ppg_rate_hz)
        if self.imu_enabled:
            rates.append(self.imu_rate_hz)
        if self.temp_enabled:
            rates.append(self.temp_rate_hz)
        return max(rates) if rates else 0

    def draw_ma(self) -> float:
        """Sensing current while actively sampling."""
        ma = 0.0
        if self.imu_enabled:
            ma += IMU_DRAW_MA_AT_1KHZ * self.imu_rate_hz / 1000.0
        if self.temp_enabled:
            ma += TEMP_DRAW_MA
        if self.ppg_enabled:
            mean_led = sum(self.led) / 3.0
            ma += PPG_DRAW_MA_REF * (self.ppg_rate_hz / 100.0) * (mean_led / LED_REF_CODE)
        return ma


@dataclass
class RtcState:
    """On-board clock: offset plus linear drift versus true virtual time."""

    offset_us: int = 0
    drift_ppm: float = 0.0
    anchor_us: int = 0

    def device_time_us(self, t_us: int, epoch_base_us: int) -> int:
        skew = self.drift_ppm * 1e-6 * (t_us - self.anchor_us)
        return epoch_base_us + t_us + self.offset_us + round(skew)

    def device_time_vec(self, t_us: np.ndarray, epoch_base_us: int) -> np.ndarray:
        t = np.asarray(t_us, dtype=np.int64)
        skew = np.rint(self.drift_ppm * 1e-6 * (t - self.anchor_us)).astype(np.int64)
        return epoch_base_us + t + self.offset_us + skew

    def trim_to(self, t_us: int, target_epoch_us: int, epoch_base_us: int) -> None:
        """Set the clock so device time equals target at the instant t_us."""
        self.offset_us = int(target_epoch_us) - (epoch_base_us + t_us)
        self.anchor_us = t_us


class BatteryState:
    """Linear-draw cell; level is an analytic function of time, never integrated."""

    def __init__(self, capacity_mah: float = BATTERY_CAPACITY_MAH,
                 level_mah: float | None = None):
        self.capacity_mah = capacity_mah
        self._anchor_level = capacity_mah if level_mah is None else min(level_mah, capacity_mah)
        self._anchor_us = 0
        self._draw_ma = 0.0

    def level_at(self, t_us: int) -> float:
        used = self._draw_ma * (t_us - self._anchor_us) / 3.6e9
        return max(0.0, self._anchor_level - used)

    def pct_at(self, t_us: int) -> int:
        return max(0, min(100, round(100.0 * self.level_at(t_us) / self.capacity_mah)))

    def set_draw(self, t_us: int, ma: float) -> None:
        self._anchor_level = self.level_at(t_us)
        self._anchor_us = t_us
        self._draw_ma = ma

    def empty_time_us(self) -> int | None:
        if self._draw_ma <= 0.0 or self._anchor_level <= 0.0:
            return None
        return self._anchor_us + math.ceil(self._anchor_level * 3.6e9 / self._draw_ma)

    def kill(self, t_us: int) -> None:
        self._anchor_level = 0.0
        self._anchor_us = t_us
        self._draw_ma = 0.0


@dataclass
class LogSegment:
    entry: LogFileEntry
    payload: bytes


class FlashStore:
    """Raw-record log area; entry metadata is kept out-of-band."""

    def __init__(self, capacity: int = FLASH_CAPACITY):
        self.capacity = capacity
        self.segments: list[LogSegment] = []

    def occupancy(self) -> int:
        return sum(s.entry.size for s in self.segments)

    def append(self, entry: LogFileEntry, payload: bytes) -> None:
        if self.occupancy() + len(payload) > self.capacity:
            raise RingError("flash capacity exceeded")
        self.segments.append(LogSegment(entry, payload))

    def find(self, file_id: int) -> LogSegment | None:
        for seg in self.segments:
            if seg.entry.file_id == file_id:
                return seg
        return None

    def entries(self) -> list[LogFileEntry]:
        return [s.entry for s in self.segments]


@dataclass(frozen=True)
class OfflinePlan:
    start_delay_s: int
    total_s: int
    segment_s: int

    @property
    def planned_segments(self) -> int:
        return -(-self.total_s // self.segment_s)


# ---------------------------------------------------------------- emissions

@dataclass(frozen=True)
class PacketEmission:
    t_us: int
    packet: StreamPacket


@dataclass(frozen=True)
class SegmentClosedEmission:
    t_us: int
    entry: LogFileEntry


@dataclass(frozen=True)
class FlashFullEmission:
    t_us: int


@dataclass(frozen=True)
class BatteryEmptyEmission:
    t_us: int


@dataclass(frozen=True)
class LoggingCompleteEmission:
    t_us: int


@dataclass(frozen=True)
class ChunkEmission:
    t_us: int
    chunk: proto.Chunk


@dataclass(frozen=True)
class FileListEmission:
    t_us: int
    page: FileListPage


_MODES_RADIO_ON = (Mode.IDLE, Mode.STREAMING, Mode.OFFLINE_ARMED, Mode.DOWNLOADING)


class VirtualRing:
    """One simulated ring device, advanced in virtual time by its owner."""

    def __init__(self, name: str, scenario: Scenario, *,
                 mac: str | None = None,
                 fw_version: str = "rk-fw/1.0.0",
                 epoch_base_s: int = DEFAULT_EPOCH_S,
                 rtc_offset_us: int = 0,
                 rtc_drift_ppm: float = 0.0,
                 battery_mah: float | None = None,
                 flash_capacity: int = FLASH_CAPACITY,
                 jitter_on: bool = False):
        self.name = name
        self.scenario = scenario
        self.mac = mac or _derive_mac(name)
        self.fw_version = fw_version
        self.epoch_base_us = epoch_base_s * US
        self.cursor_us = 0
        self.mode = Mode.IDLE
        self.config = SensorConfig()
        self.rtc = RtcState(offset_us=rtc_offset_us, drift_ppm=rtc_drift_ppm)
        self.battery = BatteryState(level_mah=battery_mah)
        self.flash = FlashStore(flash_capacity)
        self.plan: OfflinePlan | None = None
        self.fault_mask = 0
        self.jitter_on = jitter_on
        self.wake_quantum_windows = 1   # stream boundaries serviced per wakeup

        # streaming session state
        self.seq = 0
        self._session_start_us = 0
        self._win_idx = 0
        self._pending: list[SampleRecord] = []

        # logging state
        self._log_start_us = 0
        self._seg_idx = 0
        self._seg_start_us = 0
        self._seg_buf = bytearray()
        self._log_written = 0
        self._next_file_id = 1

        # download state
        self._dl: tuple[int, int] | None = None    # (file_id, next offset)

        self.battery.set_draw(0, self._draw_now())

    # ------------------------------------------------------------ basics

    @property
    def powered(self) -> bool:
        return self.battery.level_at(self.cursor_us) > 0.0

    @property
    def radio_on(self) -> bool:
        return self.powered and self.mode in _MODES_RADIO_ON

    def device_time_us(self, t_us: int | None = None) -> int:
        return self.rtc.device_time_us(self.cursor_us if t_us is None else t_us,
                                       self.epoch_base_us)

    def flash_free(self) -> int:
        return self.flash.capacity - self.flash.occupancy() - len(self._seg_buf)

    def inject_fault(self, sensor: int) -> None:
        self.fault_mask |= 1 << sensor

    def _draw_now(self) -> float:
        if self.battery.level_at(self.cursor_us) <= 0.0:
            return 0.0
        if self.mode in (Mode.STREAMING, Mode.LOGGING):
            return BASE_DRAW_MA + self.config.draw_ma()
        return BASE_DRAW_MA

    def _update_draw(self) -> None:
        self.battery.set_draw(self.cursor_us, self._draw_now())

    def status_report(self) -> StatusReport:
        c = self.config
        return StatusReport(
            mode=self.mode,
            enabled_mask=c.enabled_mask(),
            fault_mask=self.fault_mask,
            ppg_rate_hz=c.ppg_rate_hz,
            imu_rate_hz=c.imu_rate_hz,
            temp_rate_hz=c.temp_rate_hz,
            led=c.led,
            pulse_width_us=c.pulse_width_us,
            battery_pct=self.battery.pct_at(self.cursor_us),
            flash_free=self.flash_free(),
            flash_capacity=self.flash.capacity,
            fw_version=self.fw_version,
        )

    # ------------------------------------------------------------ commands

    def apply_command(self, cmd: Command) -> tuple[Response, list]:
        """Execute one decoded command at the current cursor time."""
        emissions: list = []
        handler = getattr(self, f"_cmd_{cmd.opcode.name.lower()}")
        if self.mode == Mode.LOGGING:
            return Response(Status.INVALID_TRANSITION, cmd.opcode), emissions
        resp = handler(cmd, emissions)
        self._update_draw()
        return resp, emissions

    def _cmd_set_mode(self, cmd, emissions):
        try:
            target = Mode(cmd["mode"])
        except ValueError:
            return Response(Status.BAD_ARGUMENT, cmd.opcode)
        if target == Mode.IDLE:
            if self.mode == Mode.STREAMING:
                self._flush_partial_window(emissions)
            if self.mode == Mode.DOWNLOADING:
                self._dl = None
            if self.mode == Mode.OFFLINE_ARMED:
                self.plan = None
            self.mode = Mode.IDLE
            return Response(Status.OK, cmd.opcode)
        if target == Mode.STREAMING:
            if self.mode != Mode.IDLE:
                return Response(Status.INVALID_TRANSITION, cmd.opcode)
            self.mode = Mode.STREAMING
            self.seq = 0
            self._session_start_us = self.cursor_us
            self._win_idx = 0
            self._pending = []
            return Response(Status.OK, cmd.opcode)
        # OFFLINE_ARMED / LOGGING / DOWNLOADING are entered via their own commands
        return Response(Status.BAD_ARGUMENT, cmd.opcode)

    def _cmd_sensor_enable(self, cmd, emissions):
        if self.mode != Mode.IDLE:
            return Response(Status.INVALID_TRANSITION, cmd.opcode)
        mask = cmd["mask"]
        if mask & ~0b111:
            return Response(Status.BAD_ARGUMENT, cmd.opcode)
        self.config.ppg_enabled = bool(mask & proto.PRESENT_PPG)
        self.config.imu_enabled = bool(mask & proto.PRESENT_IMU)
        self.config.temp_enabled = bool(mask & proto.PRESENT_TEMP)
        return Response(Status.OK, cmd.opcode)

    def _cmd_set_rate(self, cmd, emissions):
        if self.mode != Mode.IDLE:
            return Response(Status.INVALID_TRANSITION, cmd.opcode)
        sensor, rate = cmd["sensor"], cmd["rate_hz"]
        allowed = {proto.SENSOR_PPG: PPG_RATES, proto.SENSOR_IMU: IMU_RATES,
                   proto.SENSOR_TEMP: TEMP_RATES}.get(sensor)
        if allowed is None or rate not in allowed:
            return Response(Status.BAD_ARGUMENT, cmd.opcode)
        if sensor == proto.SENSOR_PPG:
            self.config.ppg_rate_hz = rate
        elif sensor == proto.SENSOR_IMU:
            self.config.imu_rate_hz = rate
        else:
            self.config.temp_rate_hz = rate
        return Response(Status.OK, cmd.opcode)

    def _cmd_set_led(self, cmd, emissions):
        if self.mode != Mode.IDLE:
            return Response(Status.INVALID_TRANSITION, cmd.opcode)
        self.config.led = (cmd["led0"], cmd["led1"], cmd["led2"])
        self.config.pulse_width_us = cmd["pulse_width_us"]
        return Response(Status.OK, cmd.opcode)

    def _cmd_calib_probe(self, cmd, emissions):
        now = self.device_time_us()
        body = struct.pack("<II", now // US, now % US)
        return Response(Status.OK, cmd.opcode, body)

    def _cmd_calib_trim(self, cmd, emissions):
        if self.mode != Mode.IDLE:
            return Response(Status.INVALID_TRANSITION, cmd.opcode)
        target = cmd["epoch_s"] * US + cmd["epoch_us"]
        self.rtc.trim_to(self.cursor_us, target, self.epoch_base_us)
        return Response(Status.OK, cmd.opcode)

    def _cmd_schedule_offline(self, cmd, emissions):
        if self.mode != Mode.IDLE:
            return Response(Status.INVALID_TRANSITION, cmd.opcode)
        delay, total, segment = cmd["start_delay_s"], cmd["total_s"], cmd["segment_s"]
        if total <= 0 or segment <= 0 or segment > total:
            return Response(Status.BAD_ARGUMENT, cmd.opcode)
        if self.config.enabled_mask() == 0:
            return Response(Status.BAD_ARGUMENT, cmd.opcode)
        if self.flash_free() < FLASH_RECORD_SIZE:
            return Response(Status.FLASH_FULL, cmd.opcode)
        self.plan = OfflinePlan(delay, total, segment)
        self.mode = Mode.OFFLINE_ARMED
        self._log_start_us = self.cursor_us + delay * US
        return Response(Status.OK, cmd.opcode)

    def _cmd_get_status(self, cmd, emissions):
        return Response(Status.OK, cmd.opcode, proto.encode_status_report(self.status_report()))

    def _cmd_get_file_list(self, cmd, emissions):
        if self.mode != Mode.IDLE:
            return Response(Status.INVALID_TRANSITION, cmd.opcode)
        entries = sorted(self.flash.entries(), key=lambda e: e.start_time_s)
        pages = [entries[i:i + proto.FILE_LIST_PAGE_MAX]
                 for i in range(0, len(entries), proto.FILE_LIST_PAGE_MAX)] or [[]]
        for idx, page in enumerate(pages):
            emissions.append(FileListEmission(
                self.cursor_us, FileListPage(len(entries), idx, tuple(page))))
        return Response(Status.OK, cmd.opcode, struct.pack("<H", len(pages)))

    def _cmd_open_file(self, cmd, emissions):
        if self.mode != Mode.IDLE:
            return Response(Status.INVALID_TRANSITION, cmd.opcode)
        seg = self.flash.find(cmd["file_id"])
        if seg is None:
            return Response(Status.NO_SUCH_FILE, cmd.opcode)
        if cmd["offset"] > seg.entry.size:
            return Response(Status.BAD_ARGUMENT, cmd.opcode)
        self.mode = Mode.DOWNLOADING
        self._dl = (cmd["file_id"], cmd["offset"])
        body = struct.pack("<II", seg.entry.size, seg.entry.crc)
        return Response(Status.OK, cmd.opcode, body)

    def _cmd_read_chunk(self, cmd, emissions):
        if self.mode != Mode.DOWNLOADING or self._dl is None:
            return Response(Status.INVALID_TRANSITION, cmd.opcode)
        file_id, offset = self._dl
        seg = self.flash.find(file_id)
        queued = 0
        for _ in range(cmd["count"]):
            if offset >= seg.entry.size:
                break
            data = seg.payload[offset:offset + proto.CHUNK_DATA_SIZE]
            emissions.append(ChunkEmission(self.cursor_us, proto.Chunk(file_id, offset, data)))
            offset += len(data)
            queued += 1
        self._dl = (file_id, offset)
        return Response(Status.OK, cmd.opcode, struct.pack("<H", queued))

    def _cmd_close_file(self, cmd, emissions):
        if self.mode != Mode.DOWNLOADING:
            return Response(Status.INVALID_TRANSITION, cmd.opcode)
        self.mode = Mode.IDLE
        self._dl = None
        return Response(Status.OK, cmd.opcode)

    # ------------------------------------------------------------ time

    def advance(self, dt_us: int) -> list:
        return self.advance_to(self.cursor_us + int(dt_us))

    def advance_to(self, t_us: int) -> list:
        """Run the polling scheduler up to t_us; returns emissions in time order."""
        emissions: list = []
        if t_us < self.cursor_us:
            raise RingError("cannot advance backwards")
        while True:
            stop, tag = self._next_stop(t_us)
            if stop > self.cursor_us:
                self._generate_span(self.cursor_us, stop)
                self.cursor_us = stop
            if tag is None:
                break
            self._fire(tag, emissions)
        return emissions

    def next_wakeup_us(self) -> int | None:
        """Next instant the owner should advance the ring to (boundary or death)."""
        cands = []
        dead = self.battery.empty_time_us()
        if dead is not None:
            cands.append(dead)
        if self.mode == Mode.STREAMING:
            step = max(1, self.wake_quantum_windows)
            cands.append(self._session_start_us
                         + (self._win_idx + step) * proto.STREAM_WINDOW_US)
        elif self.mode == Mode.OFFLINE_ARMED:
            cands.append(self._log_start_us)
        elif self.mode == Mode.LOGGING:
            seg_end = self._log_start_us + (self._seg_idx + 1) * self.plan.segment_s * US
            log_end = self._log_start_us + self.plan.total_s * US
            cands.append(min(seg_end, log_end))
            full = self._flash_full_time()
            if full is not None:
                cands.append(full)
        return min(cands) if cands else None

    def _next_stop(self, t_limit: int) -> tuple[int, str | None]:
        cands: list[tuple[int, int, str]] = []
        dead = self.battery.empty_time_us()
        if dead is not None and dead <= t_limit:
            cands.append((dead, 0, "dead"))
        if self.mode == Mode.STREAMING:
            b = self._session_start_us + (self._win_idx + 1) * proto.STREAM_WINDOW_US
            if b <= t_limit:
                cands.append((b, 1, "packet"))
        elif self.mode == Mode.OFFLINE_ARMED:
            if self._log_start_us <= t_limit:
                cands.append((self._log_start_us, 4, "log_start"))
        elif self.mode == Mode.LOGGING:
            log_end = self._log_start_us + self.plan.total_s * US
            seg_end = self._log_start_us + (self._seg_idx + 1) * self.plan.segment_s * US
            if seg_end < log_end and seg_end <= t_limit:
                cands.append((seg_end, 2, "segment"))
            full = self._flash_full_time()
            if full is not None and full <= t_limit and full < log_end:
                cands.append((full, 3, "flash_full"))
            if log_end <= t_limit:
                cands.append((log_end, 5, "log_end"))
        if not cands:
            return t_limit, None
        t, _, tag = min(cands)
        return t, tag

    def _fire(self, tag: str, emissions: list) -> None:
        t = self.cursor_us
        if tag == "dead":
            if self.mode == Mode.LOGGING:
                self._close_segment(emissions)
            self._pending = []
            self.mode = Mode.IDLE
            self.plan = None
            self._dl = None
            self.battery.kill(t)
            emissions.append(BatteryEmptyEmission(t))
        elif tag == "packet":
            self._emit_packet(emissions)
        elif tag == "segment":
            self._close_segment(emissions)
            self._seg_idx += 1
            self._seg_start_us = t
        elif tag == "log_start":
            self.mode = Mode.LOGGING
            self._seg_idx = 0
            self._seg_start_us = t
            self._seg_buf = bytearray()
            self._log_written = 0
            self._update_draw()
        elif tag == "log_end":
            self._close_segment(emissions)
            self.mode = Mode.IDLE
            self.plan = None
            emissions.append(LoggingCompleteEmission(t))
            self._update_draw()
        elif tag == "flash_full":
            self._close_segment(emissions)
            self.mode = Mode.IDLE
            self.plan = None
            emissions.append(FlashFullEmission(t))
            self._update_draw()

    def _emit_packet(self, emissions: list) -> None:
        base = self.rtc.device_time_us(
            self._session_start_us + self._win_idx * proto.STREAM_WINDOW_US,
            self.epoch_base_us)
        pkt = proto.pack_samples(self._pending, self.seq, base)
        emissions.append(PacketEmission(self.cursor_us, pkt))
        self.seq += 1
        self._win_idx += 1
        self._pending = []

    def _flush_partial_window(self, emissions: list) -> None:
        if self._pending:
            self._emit_packet(emissions)

    def _close_segment(self, emissions: list) -> None:
        if not self._seg_buf:
            return
        payload = bytes(self._seg_buf)
        entry = LogFileEntry(
            file_id=self._next_file_id,
            start_time_s=self.device_time_us(self._seg_start_us) // US,
            size=len(payload),
            crc=crc32(payload),
        )
        self._next_file_id += 1
        self.flash.append(entry, payload)
        self._seg_buf = bytearray()
        emissions.append(SegmentClosedEmission(self.cursor_us, entry))

    def _flash_full_time(self) -> int | None:
        rate = self.config.master_rate_hz()
        if rate == 0:
            return None
        free = self.flash.capacity - self.flash.occupancy() - len(self._seg_buf)
        fit = free // FLASH_RECORD_SIZE
        period = US // rate
        return self._log_start_us + (self._log_written + fit) * period

    # ------------------------------------------------------------ sampling

    def _grid(self, a: int, b: int, anchor: int) -> np.ndarray | None:
        """Master-grid tick times in [a, b), anchored at the session start."""
        rate = self.config.master_rate_hz()
        if rate == 0 or b <= a:
            return None
        p = US // rate
        k0 = -((a - anchor) // -p)      # ceil
        k1 = -((b - anchor) // -p)
        if k1 <= k0:
            return None
        return anchor + np.arange(k0, k1, dtype=np.int64) * p

    def _due_mask(self, ticks: np.ndarray, anchor: int, rate_hz: int) -> np.ndarray:
        return (ticks - anchor) % (US // rate_hz) == 0

    def _generate_span(self, a: int, b: int) -> None:
        if self.mode == Mode.STREAMING:
            anchor = self._session_start_us
        elif self.mode == Mode.LOGGING:
            anchor = self._log_start_us
        else:
            return
        ticks = self._grid(a, b, anchor)
        if ticks is None:
            return
        if self.mode == Mode.STREAMING and self.jitter_on:
            for t in ticks:
                self._pending.extend(self.sample_at(int(t)))
            return
        c = self.config
        n = len(ticks)
        ts = self.rtc.device_time_vec(ticks, self.epoch_base_us).astype(np.uint64)
        rows = np.zeros(n, dtype=proto.FLASH_DTYPE)
        rows["ts"] = ts
        rows["ppg"] = proto.PPG_SENTINEL
        rows["imu"] = proto.I16_SENTINEL
        rows["temp"] = proto.I16_SENTINEL
        masks = {}
        if c.ppg_enabled:
            m = self._due_mask(ticks, anchor, c.ppg_rate_hz)
            rows["ppg"][m] = sensors.ppg_synth(self.scenario, ticks[m], c.led)
            masks["ppg"] = m
        if c.imu_enabled:
            m = self._due_mask(ticks, anchor, c.imu_rate_hz)
            rows["imu"][m] = sensors.imu_synth(self.scenario, ticks[m])
            masks["imu"] = m
        if c.temp_enabled:
            m = self._due_mask(ticks, anchor, c.temp_rate_hz)
            rows["temp"][m] = sensors.temp_synth(self.scenario, ticks[m])
            masks["temp"] = m
        if self.mode == Mode.LOGGING:
            self._seg_buf += rows.tobytes()
            self._log_written += n
            return
        ppg_m = masks.get("ppg", np.zeros(n, dtype=bool))
        imu_m = masks.get("imu", np.zeros(n, dtype=bool))
        temp_m = masks.get("temp", np.zeros(n, dtype=bool))
        for i in range(n):
            row = rows[i]
            self._pending.append(SampleRecord(
                timestamp_us=int(row["ts"]),
                ppg=tuple(int(v) for v in row["ppg"]) if ppg_m[i] else None,
                imu=tuple(int(v) for v in row["imu"]) if imu_m[i] else None,
                temp=tuple(int(v) for v in row["temp"]) if temp_m[i] else None,
            ))

    def sample_at(self, t_us: int) -> list[SampleRecord]:
        """Sample every sensor due at tick t_us.

        With jitter simulation off, co-due modalities share one record and one
        timestamp.  With it on, each modality gets its own record whose
        timestamp carries that modality's draw from [0, 8] us.
        """
        anchor = self._session_start_us if self.mode == Mode.STREAMING else self._log_start_us
        c = self.config
        due = {}
        if c.ppg_enabled and (t_us - anchor) % (US // c.ppg_rate_hz) == 0:
            due["ppg"] = tuple(int(v) for v in
                               sensors.ppg_synth(self.scenario, np.array([t_us]), c.led)[0])
        if c.imu_enabled and (t_us - anchor) % (US // c.imu_rate_hz) == 0:
            due["imu"] = tuple(int(v) for v in
                               sensors.imu_synth(self.scenario, np.array([t_us]))[0])
        if c.temp_enabled and (t_us - anchor) % (US // c.temp_rate_hz) == 0:
            due["temp"] = tuple(int(v) for v in
                                sensors.temp_synth(self.scenario, np.array([t_us]))[0])
        if not due:
            raise RingError(f"no sensor due at {t_us}")
        if not self.jitter_on:
            ts = self.device_time_us(t_us)
            return [SampleRecord(timestamp_us=ts,
                                 ppg=due.get("ppg"), imu=due.get("imu"), temp=due.get("temp"))]
        lanes = {"ppg": proto.SENSOR_PPG, "imu": proto.SENSOR_IMU, "temp": proto.SENSOR_TEMP}
        recs = []
        for name, vals in due.items():
            j = sensors.jitter_us(self.scenario, lanes[name], t_us, JITTER_CAP_US)
            recs.append(SampleRecord(
                timestamp_us=self.device_time_us(t_us) + j,
                **{name: vals}))
        recs.sort(key=lambda r: (r.timestamp_us, r.presence))
        return recs


def _derive_mac(name: str) -> str:
    h = crc32(name.encode())
    octets = [0xA4, 0xC1, (h >> 24) & 0xFF, (h >> 16) & 0xFF, (h >> 8) & 0xFF, h & 0xFF]
    return ":".join(f"{o:02X}" for o in octets)
