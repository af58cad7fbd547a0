"""Wire protocol for the ring link.

Every message crossing the device/host boundary is a Frame:

    [kind u8][payload length u16 LE][payload][crc32 u32 LE]

The CRC is CRC-32/ISO-HDLC computed over the kind byte and the payload.
Layouts for each frame kind are documented with worked hex dumps in
PROTOCOL.md; the encoders here are the normative implementation.
"""

from __future__ import annotations

import binascii
import struct
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

MTU = 1024                    # hard cap on one encoded frame
FRAME_OVERHEAD = 7            # kind + length + crc
MAX_PAYLOAD = MTU - FRAME_OVERHEAD
STREAM_WINDOW_US = 50_000     # stream packet cadence

CHUNK_DATA_SIZE = 1000        # bulk transfer chunk payload bytes

# sensor ids / presence bits shared by device and host
SENSOR_PPG, SENSOR_IMU, SENSOR_TEMP = 0, 1, 2
PRESENT_PPG, PRESENT_IMU, PRESENT_TEMP = 0x01, 0x02, 0x04

PPG_SENTINEL = 0xFFFFFFFF     # "modality absent" filler, PPG field
I16_SENTINEL = -1             # same for IMU/temp fields


class FrameKind(IntEnum):
    COMMAND = 1
    RESPONSE = 2
    STREAM_DATA = 3
    FILE_LIST = 4
    CHUNK = 5
    EVENT = 6


class Opcode(IntEnum):
    SET_MODE = 0x01
    SENSOR_ENABLE = 0x02
    SET_RATE = 0x03
    SET_LED = 0x04
    CALIB_PROBE = 0x05
    CALIB_TRIM = 0x06
    SCHEDULE_OFFLINE = 0x07
    GET_STATUS = 0x08
    GET_FILE_LIST = 0x09
    OPEN_FILE = 0x0A
    READ_CHUNK = 0x0B
    CLOSE_FILE = 0x0C


class Mode(IntEnum):
    IDLE = 0
    STREAMING = 1
    OFFLINE_ARMED = 2
    LOGGING = 3
    DOWNLOADING = 4


class Status(IntEnum):
    OK = 0
    INVALID_TRANSITION = 1
    BAD_ARGUMENT = 2
    NO_SUCH_FILE = 3
    BUSY = 4
    FLASH_FULL = 5


class EventCode(IntEnum):
    SEGMENT_CLOSED = 1
    FLASH_FULL = 2
    BATTERY_EMPTY = 3
    LOGGING_COMPLETE = 4


class ProtocolError(Exception):
    """Base for anything the codec rejects."""


class OversizedPayload(ProtocolError):
    pass


class Truncated(ProtocolError):
    pass


class BadLength(ProtocolError):
    pass


class BadCrc(ProtocolError):
    pass


class UnknownKind(ProtocolError):
    pass


class UnknownOpcode(ProtocolError):
    pass


class SchemaError(ProtocolError):
    pass


class WindowViolation(ProtocolError):
    pass


def crc32(data: bytes, value: int = 0) -> int:
    """CRC-32/ISO-HDLC. `value` chains a previous result for streaming updates."""
    return binascii.crc32(data, value) & 0xFFFFFFFF


# ---------------------------------------------------------------- frames

@dataclass(frozen=True)
class Frame:
    kind: FrameKind
    payload: bytes

    @property
    def crc(self) -> int:
        return crc32(bytes([self.kind]) + self.payload)


def encode_frame(frame: Frame) -> bytes:
    total = FRAME_OVERHEAD + len(frame.payload)
    if total > MTU:
        raise OversizedPayload(f"encoded frame would be {total} B, MTU is {MTU}")
    return (
        bytes([frame.kind])
        + struct.pack("<H", len(frame.payload))
        + frame.payload
        + struct.pack("<I", frame.crc)
    )


def decode_frame(data: bytes) -> Frame:
    """Total on arbitrary bytes: every malformed input raises a ProtocolError."""
    if len(data) < FRAME_OVERHEAD:
        raise Truncated(f"{len(data)} B is shorter than the {FRAME_OVERHEAD} B minimum")
    if len(data) > MTU:
        raise BadLength(f"{len(data)} B exceeds the {MTU} B MTU")
    (declared,) = struct.unpack_from("<H", data, 1)
    total = FRAME_OVERHEAD + declared
    if len(data) < total:
        raise Truncated(f"length field declares {declared} B payload, frame is short")
    if len(data) > total:
        raise BadLength(f"{len(data) - total} trailing bytes after declared payload")
    payload = data[3:3 + declared]
    (crc_field,) = struct.unpack_from("<I", data, 3 + declared)
    if crc32(data[0:1] + payload) != crc_field:
        raise BadCrc("frame checksum mismatch")
    try:
        kind = FrameKind(data[0])
    except ValueError:
        raise UnknownKind(f"frame kind {data[0]:#x}") from None
    return Frame(kind, bytes(payload))


# ---------------------------------------------------------------- commands

# opcode -> (struct format, field names)
COMMAND_SCHEMAS: dict[Opcode, tuple[str, tuple[str, ...]]] = {
    Opcode.SET_MODE: ("<B", ("mode",)),
    Opcode.SENSOR_ENABLE: ("<B", ("mask",)),
    Opcode.SET_RATE: ("<BH", ("sensor", "rate_hz")),
    Opcode.SET_LED: ("<BBBH", ("led0", "led1", "led2", "pulse_width_us")),
    Opcode.CALIB_PROBE: ("<II", ("epoch_s", "epoch_us")),
    Opcode.CALIB_TRIM: ("<II", ("epoch_s", "epoch_us")),
    Opcode.SCHEDULE_OFFLINE: ("<III", ("start_delay_s", "total_s", "segment_s")),
    Opcode.GET_STATUS: ("", ()),
    Opcode.GET_FILE_LIST: ("", ()),
    Opcode.OPEN_FILE: ("<HI", ("file_id", "offset")),
    Opcode.READ_CHUNK: ("<H", ("count",)),
    Opcode.CLOSE_FILE: ("", ()),
}


@dataclass(frozen=True)
class Command:
    opcode: Opcode
    args: dict

    def __post_init__(self):
        fmt, names = COMMAND_SCHEMAS[self.opcode]
        if tuple(self.args) != names:
            raise SchemaError(f"{self.opcode.name} takes {names}, got {tuple(self.args)}")

    def __getitem__(self, name: str) -> int:
        return self.args[name]


def command(opcode: Opcode, **args: int) -> Command:
    return Command(opcode, args)


def encode_command(cmd: Command) -> Frame:
    fmt, names = COMMAND_SCHEMAS[cmd.opcode]
    try:
        packed = struct.pack(fmt, *(cmd.args[n] for n in names)) if names else b""
    except struct.error as exc:
        raise SchemaError(f"{cmd.opcode.name}: {exc}") from None
    return Frame(FrameKind.COMMAND, bytes([cmd.opcode]) + packed)


def decode_command(payload: bytes) -> Command:
    if not payload:
        raise Truncated("empty command payload")
    try:
        opcode = Opcode(payload[0])
    except ValueError:
        raise UnknownOpcode(f"opcode {payload[0]:#x}") from None
    fmt, names = COMMAND_SCHEMAS[opcode]
    want = struct.calcsize(fmt)
    if len(payload) - 1 != want:
        raise SchemaError(f"{opcode.name} args must be {want} B, got {len(payload) - 1}")
    values = struct.unpack(fmt, payload[1:]) if names else ()
    return Command(opcode, dict(zip(names, values)))


# ---------------------------------------------------------------- responses

@dataclass(frozen=True)
class Response:
    status: Status
    opcode: Opcode
    body: bytes = b""

    @property
    def ok(self) -> bool:
        return self.status == Status.OK


def encode_response(resp: Response) -> Frame:
    return Frame(FrameKind.RESPONSE, bytes([resp.status, resp.opcode]) + resp.body)


def decode_response(payload: bytes) -> Response:
    if len(payload) < 2:
        raise Truncated("response payload shorter than status+opcode")
    try:
        status = Status(payload[0])
        opcode = Opcode(payload[1])
    except ValueError as exc:
        raise SchemaError(str(exc)) from None
    return Response(status, opcode, bytes(payload[2:]))


# device status snapshot carried in a GET_STATUS response body
_STATUS_HEAD = struct.Struct("<BBBHHHBBBHBII")


@dataclass(frozen=True)
class StatusReport:
    mode: Mode
    enabled_mask: int
    fault_mask: int
    ppg_rate_hz: int
    imu_rate_hz: int
    temp_rate_hz: int
    led: tuple[int, int, int]
    pulse_width_us: int
    battery_pct: int
    flash_free: int
    flash_capacity: int
    fw_version: str


def encode_status_report(r: StatusReport) -> bytes:
    fw = r.fw_version.encode("ascii")
    head = _STATUS_HEAD.pack(
        r.mode, r.enabled_mask, r.fault_mask,
        r.ppg_rate_hz, r.imu_rate_hz, r.temp_rate_hz,
        r.led[0], r.led[1], r.led[2], r.pulse_width_us,
        r.battery_pct, r.flash_free, r.flash_capacity,
    )
    return head + bytes([len(fw)]) + fw


def decode_status_report(body: bytes) -> StatusReport:
    if len(body) < _STATUS_HEAD.size + 1:
        raise Truncated("status report body too short")
    vals = _STATUS_HEAD.unpack_from(body)
    fw_len = body[_STATUS_HEAD.size]
    fw = body[_STATUS_HEAD.size + 1:_STATUS_HEAD.size + 1 + fw_len]
    if len(fw) != fw_len:
        raise Truncated("status report firmware string truncated")
    return StatusReport(
        mode=Mode(vals[0]), enabled_mask=vals[1], fault_mask=vals[2],
        ppg_rate_hz=vals[3], imu_rate_hz=vals[4], temp_rate_hz=vals[5],
        led=(vals[6], vals[7], vals[8]), pulse_width_us=vals[9],
        battery_pct=vals[10], flash_free=vals[11], flash_capacity=vals[12],
        fw_version=fw.decode("ascii"),
    )


# ---------------------------------------------------------------- samples

@dataclass(frozen=True)
class SampleRecord:
    """One synchronized multi-sensor sample; absent modalities are None."""

    timestamp_us: int
    ppg: tuple[int, int, int] | None = None
    imu: tuple[int, int, int, int, int, int] | None = None
    temp: tuple[int, int, int] | None = None

    @property
    def presence(self) -> int:
        return (
            (PRESENT_PPG if self.ppg is not None else 0)
            | (PRESENT_IMU if self.imu is not None else 0)
            | (PRESENT_TEMP if self.temp is not None else 0)
        )


# on the wire each record carries an explicit presence byte
WIRE_RECORD = struct.Struct("<BQ3I6h3h")    # 39 B
# in flash the record is 38 B; absent modalities are all-ones sentinels
FLASH_RECORD = struct.Struct("<Q3I6h3h")

FLASH_DTYPE = np.dtype([
    ("ts", "<u8"), ("ppg", "<u4", (3,)), ("imu", "<i2", (6,)), ("temp", "<i2", (3,)),
])


def _record_fields(rec: SampleRecord) -> tuple:
    ppg = rec.ppg if rec.ppg is not None else (PPG_SENTINEL,) * 3
    imu = rec.imu if rec.imu is not None else (I16_SENTINEL,) * 6
    temp = rec.temp if rec.temp is not None else (I16_SENTINEL,) * 3
    return (rec.timestamp_us, *ppg, *imu, *temp)


def encode_wire_record(rec: SampleRecord) -> bytes:
    return WIRE_RECORD.pack(rec.presence, *_record_fields(rec))


def decode_wire_record(data: bytes, offset: int = 0) -> SampleRecord:
    vals = WIRE_RECORD.unpack_from(data, offset)
    presence = vals[0]
    return SampleRecord(
        timestamp_us=vals[1],
        ppg=tuple(vals[2:5]) if presence & PRESENT_PPG else None,
        imu=tuple(vals[5:11]) if presence & PRESENT_IMU else None,
        temp=tuple(vals[11:14]) if presence & PRESENT_TEMP else None,
    )


def encode_flash_record(rec: SampleRecord) -> bytes:
    return FLASH_RECORD.pack(*_record_fields(rec))


def decode_flash_records(payload: bytes) -> list[SampleRecord]:
    """Parse a log segment payload back into records (sentinel groups -> None)."""
    if len(payload) % FLASH_RECORD.size:
        raise BadLength(f"segment payload is not a multiple of {FLASH_RECORD.size} B")
    rows = np.frombuffer(payload, dtype=FLASH_DTYPE)
    out = []
    for row in rows:
        ppg = tuple(int(v) for v in row["ppg"])
        imu = tuple(int(v) for v in row["imu"])
        temp = tuple(int(v) for v in row["temp"])
        out.append(SampleRecord(
            timestamp_us=int(row["ts"]),
            ppg=None if ppg == (PPG_SENTINEL,) * 3 else ppg,
            imu=None if imu == (I16_SENTINEL,) * 6 else imu,
            temp=None if temp == (I16_SENTINEL,) * 3 else temp,
        ))
    return out


# ---------------------------------------------------------------- stream packets

@dataclass(frozen=True)
class StreamPacket:
    seq: int
    base_timestamp_us: int
    records: tuple[SampleRecord, ...]


_STREAM_HEAD = struct.Struct("<IQH")


def pack_samples(records, seq: int, base_timestamp_us: int) -> StreamPacket:
    """Assemble one 50 ms window of records into a packet, validating the window."""
    recs = tuple(records)
    last = None
    for rec in recs:
        if not base_timestamp_us <= rec.timestamp_us < base_timestamp_us + STREAM_WINDOW_US:
            raise WindowViolation(
                f"record at {rec.timestamp_us} outside [{base_timestamp_us}, +50 ms)")
        if last is not None and rec.timestamp_us < last:
            raise WindowViolation("records not time-ordered")
        last = rec.timestamp_us
    return StreamPacket(seq, base_timestamp_us, recs)


def encode_stream_packet(pkt: StreamPacket) -> Frame:
    body = _STREAM_HEAD.pack(pkt.seq, pkt.base_timestamp_us, len(pkt.records))
    body += b"".join(encode_wire_record(r) for r in pkt.records)
    return Frame(FrameKind.STREAM_DATA, body)


def decode_stream_packet(payload: bytes) -> StreamPacket:
    if len(payload) < _STREAM_HEAD.size:
        raise Truncated("stream packet header truncated")
    seq, base, count = _STREAM_HEAD.unpack_from(payload)
    want = _STREAM_HEAD.size + count * WIRE_RECORD.size
    if len(payload) != want:
        raise BadLength(f"stream packet declares {count} records, size mismatch")
    records = tuple(
        decode_wire_record(payload, _STREAM_HEAD.size + i * WIRE_RECORD.size)
        for i in range(count)
    )
    return StreamPacket(seq, base, records)


# ---------------------------------------------------------------- file transfer

@dataclass(frozen=True)
class LogFileEntry:
    file_id: int
    start_time_s: int       # device-epoch seconds
    size: int
    crc: int


_ENTRY = struct.Struct("<HIII")
_FILE_LIST_HEAD = struct.Struct("<HHH")   # total entries, page index, page count

FILE_LIST_PAGE_MAX = (MAX_PAYLOAD - _FILE_LIST_HEAD.size) // _ENTRY.size


@dataclass(frozen=True)
class FileListPage:
    total: int
    index: int
    entries: tuple[LogFileEntry, ...]


def encode_file_list_page(page: FileListPage) -> Frame:
    body = _FILE_LIST_HEAD.pack(page.total, page.index, len(page.entries))
    for e in page.entries:
        body += _ENTRY.pack(e.file_id, e.start_time_s, e.size, e.crc)
    return Frame(FrameKind.FILE_LIST, body)


def decode_file_list_page(payload: bytes) -> FileListPage:
    if len(payload) < _FILE_LIST_HEAD.size:
        raise Truncated("file list header truncated")
    total, index, count = _FILE_LIST_HEAD.unpack_from(payload)
    want = _FILE_LIST_HEAD.size + count * _ENTRY.size
    if len(payload) != want:
        raise BadLength("file list page size mismatch")
    entries = tuple(
        LogFileEntry(*_ENTRY.unpack_from(payload, _FILE_LIST_HEAD.size + i * _ENTRY.size))
        for i in range(count)
    )
    return FileListPage(total, index, entries)


@dataclass(frozen=True)
class Chunk:
    file_id: int
    offset: int
    data: bytes


_CHUNK_HEAD = struct.Struct("<HI")


def encode_chunk(chunk: Chunk) -> Frame:
    return Frame(FrameKind.CHUNK, _CHUNK_HEAD.pack(chunk.file_id, chunk.offset) + chunk.data)


def decode_chunk(payload: bytes) -> Chunk:
    if len(payload) < _CHUNK_HEAD.size:
        raise Truncated("chunk header truncated")
    file_id, offset = _CHUNK_HEAD.unpack_from(payload)
    return Chunk(file_id, offset, bytes(payload[_CHUNK_HEAD.size:]))


# ---------------------------------------------------------------- events

@dataclass(frozen=True)
class DeviceEvent:
    code: EventCode
    entry: LogFileEntry | None = None   # SEGMENT_CLOSED carries its entry


def encode_event(ev: DeviceEvent) -> Frame:
    body = bytes([ev.code])
    if ev.code == EventCode.SEGMENT_CLOSED:
        e = ev.entry
        body += _ENTRY.pack(e.file_id, e.start_time_s, e.size, e.crc)
    return Frame(FrameKind.EVENT, body)


def decode_event(payload: bytes) -> DeviceEvent:
    if not payload:
        raise Truncated("empty event payload")
    try:
        code = EventCode(payload[0])
    except ValueError:
        raise SchemaError(f"event code {payload[0]:#x}") from None
    entry = None
    if code == EventCode.SEGMENT_CLOSED:
        if len(payload) != 1 + _ENTRY.size:
            raise BadLength("segment-closed event size mismatch")
        entry = LogFileEntry(*_ENTRY.unpack_from(payload, 1))
    return DeviceEvent(code, entry)


# ---------------------------------------------------------------- dispatch

_PAYLOAD_DECODERS = {
    FrameKind.COMMAND: decode_command,
    FrameKind.RESPONSE: decode_response,
    FrameKind.STREAM_DATA: decode_stream_packet,
    FrameKind.FILE_LIST: decode_file_list_page,
    FrameKind.CHUNK: decode_chunk,
    FrameKind.EVENT: decode_event,
}


def decode_message(frame: Frame):
    """Decode a frame payload into its typed message object."""
    return _PAYLOAD_DECODERS[frame.kind](frame.payload)
