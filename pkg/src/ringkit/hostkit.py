"""Host-side SDK: discovery, dashboard, clock calibration, live sessions with
annotations, offline scheduling and verified log retrieval, session persistence.

Everything here drives a Link from ringkit.transport and speaks the frame
vocabulary from ringkit.proto; no business logic lives in the CLI or gateway.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ringkit import dsp, proto
from ringkit.proto import (
    FrameKind,
    LogFileEntry,
    Mode,
    Opcode,
    Response,
    SampleRecord,
    Status,
    StatusReport,
    StreamPacket,
    command,
    crc32,
)
from ringkit.transport import Disconnected, Environment, Link, NoSuchFile

US = 1_000_000

CALIB_MAX_ITERATIONS = 8
CALIB_TRIM_THRESHOLD_US = 1_000_000

BATTERY_WARN_PCT = 20
RENDER_RATE_HZ = 30
LIVE_WINDOW_S = 8.0
LIVE_STEP_S = 1.0


class HostError(Exception):
    pass


class DeviceError(HostError):
    """A command came back with a non-OK status."""

    def __init__(self, status: Status, opcode: Opcode):
        super().__init__(f"{opcode.name}: {status.name}")
        self.status = status
        self.opcode = opcode


class InvalidTransition(DeviceError):
    pass


class BadArgument(DeviceError):
    pass


class CrcMismatch(HostError):
    pass


class NotConverged(HostError):
    def __init__(self, report: "CalibrationReport"):
        super().__init__(f"no convergence after {len(report.iterations)} iterations")
        self.report = report


class FetchInterrupted(HostError):
    """Transfer dropped mid-way; `received` resumes a later fetch_file call."""

    def __init__(self, file_id: int, received: bytes):
        super().__init__(f"file {file_id}: link dropped after {len(received)} bytes")
        self.file_id = file_id
        self.received = received


def _check(resp: Response) -> Response:
    if resp.ok:
        return resp
    cls = {Status.INVALID_TRANSITION: InvalidTransition,
           Status.BAD_ARGUMENT: BadArgument}.get(resp.status, DeviceError)
    raise cls(resp.status, resp.opcode)


# ---------------------------------------------------------------- discovery

def discover(env: Environment, duration_s: float = 1.0):
    """Scan and return advertisements sorted by RSSI, strongest first."""
    return sorted(env.scan(duration_s), key=lambda a: -a.rssi_dbm)


# ---------------------------------------------------------------- dashboard

HEALTH_OK = "ok"
HEALTH_WARN = "warn"
HEALTH_FAULT = "fault"


@dataclass(frozen=True)
class Dashboard:
    mac: str
    mode: Mode
    sensors: dict
    flash_free: int
    flash_capacity: int
    battery_pct: int
    fw_version: str
    fault_mask: int
    health: str


def _health(report: StatusReport) -> str:
    if report.fault_mask:
        return HEALTH_FAULT
    if report.battery_pct < BATTERY_WARN_PCT:
        return HEALTH_WARN
    return HEALTH_OK


def device_info(link: Link) -> Dashboard:
    resp = _check(link.request(command(Opcode.GET_STATUS)))
    r = proto.decode_status_report(resp.body)
    sensors = {
        "ppg": {"enabled": bool(r.enabled_mask & proto.PRESENT_PPG),
                "rate_hz": r.ppg_rate_hz, "led": list(r.led),
                "pulse_width_us": r.pulse_width_us},
        "imu": {"enabled": bool(r.enabled_mask & proto.PRESENT_IMU),
                "rate_hz": r.imu_rate_hz},
        "temp": {"enabled": bool(r.enabled_mask & proto.PRESENT_TEMP),
                 "rate_hz": r.temp_rate_hz},
    }
    return Dashboard(
        mac=link.mac, mode=r.mode, sensors=sensors,
        flash_free=r.flash_free, flash_capacity=r.flash_capacity,
        battery_pct=r.battery_pct, fw_version=r.fw_version,
        fault_mask=r.fault_mask, health=_health(r),
    )


# ---------------------------------------------------------------- calibration

@dataclass(frozen=True)
class CalibIteration:
    host_send_us: int
    device_time_us: int
    rtt_us: int
    offset_estimate_us: int
    trimmed: bool


@dataclass(frozen=True)
class CalibrationReport:
    iterations: tuple[CalibIteration, ...]
    final_offset_us: int
    converged: bool

    def to_dict(self) -> dict:
        return {
            "iterations": [vars(i) for i in self.iterations],
            "final_offset_us": self.final_offset_us,
            "converged": self.converged,
        }


def calibrate(link: Link) -> CalibrationReport:
    """Half-RTT clock offset estimation; trims the device RTC until the
    measured offset is within one second, then reports the residual."""
    iterations: list[CalibIteration] = []
    for _ in range(CALIB_MAX_ITERATIONS):
        host_send = link.env.host_epoch_us()
        resp = _check(link.request(command(
            Opcode.CALIB_PROBE, epoch_s=host_send // US, epoch_us=host_send % US)))
        host_recv = link.env.host_epoch_us()
        dev_s, dev_us = struct.unpack("<II", resp.body)
        device_time = dev_s * US + dev_us
        rtt = host_recv - host_send
        offset = device_time - (host_send + rtt // 2)
        trim = abs(offset) > CALIB_TRIM_THRESHOLD_US
        iterations.append(CalibIteration(host_send, device_time, rtt, offset, trim))
        if not trim:
            report = CalibrationReport(tuple(iterations), offset, True)
            link.last_offset_us = offset
            return report
        target = link.env.host_epoch_us() + rtt // 2
        _check(link.request(command(
            Opcode.CALIB_TRIM, epoch_s=target // US, epoch_us=target % US)))
    raise NotConverged(CalibrationReport(tuple(iterations),
                                         iterations[-1].offset_estimate_us, False))


# ---------------------------------------------------------------- sessions

class SampleStore:
    """Append-only record store, packed in wire layout; decoded lazily."""

    def __init__(self):
        self._buf = bytearray()
        self._arrays = None

    def append(self, records) -> None:
        for rec in records:
            self._buf += proto.encode_wire_record(rec)
        self._arrays = None

    def __len__(self) -> int:
        return len(self._buf) // proto.WIRE_RECORD.size

    def record(self, i: int) -> SampleRecord:
        return proto.decode_wire_record(self._buf, i * proto.WIRE_RECORD.size)

    def __iter__(self):
        for i in range(len(self)):
            yield self.record(i)

    _DTYPE = np.dtype([("presence", "u1"), ("ts", "<u8"), ("ppg", "<u4", (3,)),
                       ("imu", "<i2", (6,)), ("temp", "<i2", (3,))])

    def arrays(self):
        if self._arrays is None:
            self._arrays = np.frombuffer(bytes(self._buf), dtype=self._DTYPE)
        return self._arrays

    def flash_bytes(self) -> bytes:
        """Records re-packed in the 38-byte on-flash layout."""
        rows = self.arrays()
        out = np.zeros(len(rows), dtype=proto.FLASH_DTYPE)
        out["ts"] = rows["ts"]
        out["ppg"] = rows["ppg"]
        out["imu"] = rows["imu"]
        out["temp"] = rows["temp"]
        return out.tobytes()


@dataclass(frozen=True)
class Annotation:
    device_time_us: int
    tag: str


@dataclass(frozen=True)
class RenderFrame:
    index: int
    t_start_us: int
    t_end_us: int
    channels: dict
    sample_count: int


class Session:
    """One live acquisition: record intake, gap tracking, annotations,
    live heart-rate/activity metrics, and a fixed-rate render stream."""

    def __init__(self, link: Link, config_snapshot: dict, *, live_metrics: bool = True):
        self.link = link
        self.mac = link.mac
        self.config = config_snapshot
        self.live_metrics = live_metrics
        self.samples = SampleStore()
        self.annotations: list[Annotation] = []
        self.gaps: list[tuple[int, int]] = []
        self.packet_count = 0
        self.live_hr: dsp.HrEstimate | None = None
        self.live_activity: int = 0
        self.started_device_us: int | None = None
        self.ended_device_us: int | None = None
        self.session_id: str | None = None
        self.frame_observers: list = []
        self.metric_observers: list = []
        self._next_seq = 0
        self._frame_idx = 0
        self._frame_pending: list[SampleRecord] = []
        self._next_metric_us: int | None = None
        self._tail: list[tuple[int, float, tuple]] = []   # (ts, ppg0, accel_g)
        self._closed = False

    # -------------------------------------------------- intake

    def on_frame(self, frame) -> None:
        if self._closed or frame.kind != FrameKind.STREAM_DATA:
            return
        pkt: StreamPacket = proto.decode_message(frame)
        if self.started_device_us is None:
            base = pkt.base_timestamp_us - pkt.seq * proto.STREAM_WINDOW_US
            self.started_device_us = base
            self.session_id = f"{self.mac.replace(':', '')}-{base}"
            self._next_metric_us = base + round(LIVE_WINDOW_S * US)
        if pkt.seq > self._next_seq:
            self.gaps.append((self._next_seq, pkt.seq - 1))
        self._next_seq = pkt.seq + 1
        self.packet_count += 1
        self.samples.append(pkt.records)
        self._frame_pending.extend(pkt.records)
        if self.live_metrics:
            for rec in pkt.records:
                if rec.ppg is not None or rec.imu is not None:
                    accel = (tuple(v / 2048.0 for v in rec.imu[0:3])
                             if rec.imu is not None else None)
                    self._tail.append((rec.timestamp_us,
                                       float(rec.ppg[0]) if rec.ppg is not None else np.nan,
                                       accel))
        window_end = pkt.base_timestamp_us + proto.STREAM_WINDOW_US
        self._emit_render_frames(window_end)
        self._update_metrics(window_end)

    # -------------------------------------------------- render stream

    def _frame_end_us(self, k: int) -> int:
        return self.started_device_us + ((k + 1) * US) // RENDER_RATE_HZ

    def _emit_render_frames(self, upto_us: int) -> None:
        while self._frame_end_us(self._frame_idx) <= upto_us:
            end = self._frame_end_us(self._frame_idx)
            start = self.started_device_us + (self._frame_idx * US) // RENDER_RATE_HZ
            inside = [r for r in self._frame_pending if r.timestamp_us < end]
            self._frame_pending = [r for r in self._frame_pending if r.timestamp_us >= end]
            channels: dict = {}
            for name, sel in (("ppg0", lambda r: r.ppg and r.ppg[0]),
                              ("ppg1", lambda r: r.ppg and r.ppg[1]),
                              ("ppg2", lambda r: r.ppg and r.ppg[2]),
                              ("ax", lambda r: r.imu and r.imu[0]),
                              ("ay", lambda r: r.imu and r.imu[1]),
                              ("az", lambda r: r.imu and r.imu[2])):
                vals = [sel(r) for r in inside if sel(r) is not None]
                channels[name] = [min(vals), max(vals)] if vals else None
            frame = RenderFrame(self._frame_idx, start, end, channels, len(inside))
            self._frame_idx += 1
            for cb in list(self.frame_observers):
                cb(frame)

    # -------------------------------------------------- live metrics

    def _update_metrics(self, upto_us: int) -> None:
        if not self.live_metrics:
            return
        while self._next_metric_us is not None and self._next_metric_us <= upto_us:
            t_hi = self._next_metric_us
            t_lo = t_hi - round(LIVE_WINDOW_S * US)
            self._tail = [x for x in self._tail if x[0] >= upto_us - round(LIVE_WINDOW_S * US) - US]
            ppg = [(ts, v) for ts, v, _ in self._tail if t_lo <= ts < t_hi and not np.isnan(v)]
            if len(ppg) >= 16:
                fs = self.config.get("ppg", {}).get("rate_hz", 100)
                est = dsp.estimate_hr([v for _, v in ppg], float(fs), window_start_us=t_lo)
                if est is not None:
                    self.live_hr = est
            accel = [a for ts, _, a in self._tail if t_lo <= ts < t_hi and a is not None]
            if len(accel) >= 16:
                fs = self.config.get("imu", {}).get("rate_hz", 100)
                self.live_activity = dsp.activity_counts(np.array(accel), float(fs))
            for cb in list(self.metric_observers):
                cb(self.live_hr, self.live_activity)
            self._next_metric_us += round(LIVE_STEP_S * US)

    # -------------------------------------------------- annotations

    def annotation_sample_index(self, ann: Annotation) -> int:
        rows = self.samples.arrays()
        if not len(rows):
            raise HostError("no samples")
        return int(np.argmin(np.abs(rows["ts"].astype(np.int64) - ann.device_time_us)))

    def finalize(self, ended_device_us: int) -> None:
        self._closed = True
        self.ended_device_us = ended_device_us


def _config_snapshot(report: StatusReport) -> dict:
    return {
        "ppg": {"enabled": bool(report.enabled_mask & proto.PRESENT_PPG),
                "rate_hz": report.ppg_rate_hz, "led": list(report.led),
                "pulse_width_us": report.pulse_width_us},
        "imu": {"enabled": bool(report.enabled_mask & proto.PRESENT_IMU),
                "rate_hz": report.imu_rate_hz},
        "temp": {"enabled": bool(report.enabled_mask & proto.PRESENT_TEMP),
                 "rate_hz": report.temp_rate_hz},
    }


def push_config(link: Link, *, ppg_rate=None, imu_rate=None, temp_rate=None,
                enabled_mask=None, led=None, pulse_width_us=400) -> None:
    """Apply sensor settings; None leaves the device's current value alone."""
    if enabled_mask is not None:
        _check(link.request(command(Opcode.SENSOR_ENABLE, mask=enabled_mask)))
    for sensor, rate in ((proto.SENSOR_PPG, ppg_rate), (proto.SENSOR_IMU, imu_rate),
                         (proto.SENSOR_TEMP, temp_rate)):
        if rate is not None:
            _check(link.request(command(Opcode.SET_RATE, sensor=sensor, rate_hz=rate)))
    if led is not None:
        _check(link.request(command(Opcode.SET_LED, led0=led[0], led1=led[1],
                                    led2=led[2], pulse_width_us=pulse_width_us)))


def start_session(link: Link, *, live_metrics: bool = True, **config_kw) -> Session:
    """Configure, switch the ring to streaming and begin collecting."""
    if config_kw:
        push_config(link, **config_kw)
    status = proto.decode_status_report(
        _check(link.request(command(Opcode.GET_STATUS))).body)
    session = Session(link, _config_snapshot(status), live_metrics=live_metrics)
    link.subscribe_notify(session.on_frame)
    _check(link.request(command(Opcode.SET_MODE, mode=Mode.STREAMING)))
    return session


STOP_DRAIN_US = 200_000     # grace so in-flight packets land before unsubscribe


def stop_session(link: Link, session: Session) -> Session:
    _check(link.request(command(Opcode.SET_MODE, mode=Mode.IDLE)))
    link.env.run_for(STOP_DRAIN_US)
    link.unsubscribe_notify(session.on_frame)
    session.finalize(_device_time_estimate(link))
    return session


def _device_time_estimate(link: Link) -> int:
    offset = link.last_offset_us or 0
    return link.env.host_epoch_us() + offset


def annotate(session: Session, tag: str) -> Annotation:
    """Timestamp a tag with the current device-time estimate and store it."""
    ann = Annotation(device_time_us=_device_time_estimate(session.link), tag=str(tag))
    session.annotations.append(ann)
    return ann


# ---------------------------------------------------------------- offline

def configure_offline(link: Link, total_s: int, segment_s: int, *,
                      start_delay_s: int = 1) -> int:
    """Arm the on-ring scheduler; returns the planned segment count.

    The radio sleeps once logging starts, so the link will drop then."""
    if segment_s <= 0 or total_s <= 0 or segment_s > total_s:
        raise BadArgument(Status.BAD_ARGUMENT, Opcode.SCHEDULE_OFFLINE)
    _check(link.request(command(Opcode.SCHEDULE_OFFLINE, start_delay_s=start_delay_s,
                                total_s=total_s, segment_s=segment_s)))
    return -(-total_s // segment_s)


def list_files(link: Link) -> list[LogFileEntry]:
    """Enumerate stored recordings, sorted by start time."""
    pages: list[proto.FileListPage] = []

    def on_frame(frame):
        if frame.kind == FrameKind.FILE_LIST:
            pages.append(proto.decode_message(frame))

    link.subscribe_notify(on_frame)
    try:
        resp = _check(link.request(command(Opcode.GET_FILE_LIST)))
        (page_count,) = struct.unpack("<H", resp.body)
        deadline = link.env.loop.now_us + 5 * US
        while len(pages) < page_count and link.env.loop.now_us < deadline:
            nxt = link.env.loop.peek_us()
            if nxt is None or nxt > deadline:
                break
            link.env.loop.step()
    finally:
        link.unsubscribe_notify(on_frame)
    entries = [e for page in pages for e in page.entries]
    return sorted(entries, key=lambda e: (e.start_time_s, e.file_id))


def fetch_file(link: Link, file_id: int, *, resume_from: int = 0, prefix: bytes = b"",
               progress=None) -> tuple[bytes, list[SampleRecord]]:
    """Download a recording over the bulk channel and verify its checksum.

    On success returns (payload, parsed records).  Raises CrcMismatch when the
    assembled payload fails verification (payload is discarded), NoSuchFile,
    or FetchInterrupted carrying the bytes received so far (resume by passing
    them back as `prefix` with resume_from=len(prefix)).
    """
    if len(prefix) != resume_from:
        raise BadArgument(Status.BAD_ARGUMENT, Opcode.OPEN_FILE)
    sink = bytearray()
    try:
        size, crc, rest = link.bulk_read(file_id, resume_from=resume_from,
                                         progress=progress, sink=sink)
    except Disconnected:
        raise FetchInterrupted(file_id, bytes(prefix) + bytes(sink)) from None
    payload = bytes(prefix) + rest
    if len(payload) != size or crc32(payload) != crc:
        raise CrcMismatch(f"file {file_id}: checksum mismatch on {len(payload)} bytes")
    return payload, proto.decode_flash_records(payload)


# ---------------------------------------------------------------- persistence

def export_session(session: Session, out_dir: str | Path, *, fmt: str = "csv") -> Path:
    """Write a session directory: metadata.json plus sample tables.

    fmt "csv" writes one delimited table per modality; "bin" writes the
    38-byte on-flash record layout.  Field names here are the stable data
    contract for downstream analysis.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "session_id": session.session_id,
        "mac": session.mac,
        "config": session.config,
        "started_device_us": session.started_device_us,
        "ended_device_us": session.ended_device_us,
        "record_count": len(session.samples),
        "packet_count": session.packet_count,
        "gaps": [list(g) for g in session.gaps],
        "annotations": [{"device_time_us": a.device_time_us, "tag": a.tag}
                        for a in session.annotations],
        "calibration_offset_us": (session.link.last_offset_us
                                  if session.link is not None else None),
        "format": fmt,
    }
    (out / "metadata.json").write_text(json.dumps(meta, indent=2) + "\n")
    rows = session.samples.arrays()
    if fmt == "bin":
        (out / "records.bin").write_bytes(session.samples.flash_bytes())
    elif fmt == "csv":
        presence = rows["presence"]
        ts = rows["ts"]
        _write_csv(out / "ppg.csv", "timestamp_us,ppg0,ppg1,ppg2",
                   ts, rows["ppg"], presence & proto.PRESENT_PPG > 0)
        _write_csv(out / "imu.csv", "timestamp_us,ax,ay,az,gx,gy,gz",
                   ts, rows["imu"], presence & proto.PRESENT_IMU > 0)
        _write_csv(out / "temp.csv", "timestamp_us,t0,t1,t2",
                   ts, rows["temp"], presence & proto.PRESENT_TEMP > 0)
    else:
        raise ValueError(f"unknown export format {fmt!r}")
    return out


def _write_csv(path: Path, header: str, ts, values, mask) -> None:
    lines = [header]
    sub_ts = ts[mask]
    sub_vals = values[mask]
    for i in range(len(sub_ts)):
        lines.append(str(int(sub_ts[i])) + "," + ",".join(str(int(v)) for v in sub_vals[i]))
    path.write_text("\n".join(lines) + "\n")


@dataclass
class SessionData:
    meta: dict
    records: list[SampleRecord]
    annotations: list[Annotation]


def import_session(session_dir: str | Path) -> SessionData:
    """Read an exported session back; inverse of export_session for both formats."""
    d = Path(session_dir)
    meta = json.loads((d / "metadata.json").read_text())
    annotations = [Annotation(a["device_time_us"], a["tag"]) for a in meta["annotations"]]
    if meta["format"] == "bin":
        records = proto.decode_flash_records((d / "records.bin").read_bytes())
    else:
        merged: dict[int, dict] = {}
        for name, key, width in (("ppg.csv", "ppg", 3), ("imu.csv", "imu", 6),
                                 ("temp.csv", "temp", 3)):
            path = d / name
            if not path.exists():
                continue
            for line in path.read_text().splitlines()[1:]:
                parts = line.split(",")
                ts = int(parts[0])
                merged.setdefault(ts, {})[key] = tuple(int(v) for v in parts[1:1 + width])
        records = [
            SampleRecord(timestamp_us=ts, ppg=vals.get("ppg"), imu=vals.get("imu"),
                         temp=vals.get("temp"))
            for ts, vals in sorted(merged.items())
        ]
    return SessionData(meta=meta, records=records, annotations=annotations)


def save_log_segment(out_dir: str | Path, entry: LogFileEntry, payload: bytes) -> Path:
    """Persist a fetched recording: raw payload plus its catalog entry."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"log_{entry.file_id:05d}.bin").write_bytes(payload)
    meta = {"file_id": entry.file_id, "start_time_s": entry.start_time_s,
            "size": entry.size, "crc": entry.crc}
    (out / f"log_{entry.file_id:05d}.json").write_text(json.dumps(meta, indent=2) + "\n")
    return out
