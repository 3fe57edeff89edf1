"""Wire protocol between alarm terminals and the monitoring server, plus the
SMS text grammar between a terminal and its user.

Binary frame layout (all integers big-endian)::

    offset  size  field
    0       2     sync: 0xAA 0x55
    2       1     version: 0x01
    3       1     msg_type
    4       4     te_id (unsigned)
    8       2     seq (unsigned)
    10      2     payload_len (unsigned, <= 1024)
    12      n     payload
    12+n    2     CRC-16/CCITT-FALSE over bytes 2 .. 12+n (version..payload)

Request frames (REGISTER, HEARTBEAT, ALARM, CONTROL, STATUS_QUERY) carry a
fresh sequence number minted by the sender; the matching ack/response frame
echoes that sequence number so the peer can correlate replies and ignore
stale duplicates.  A retransmission is a byte-identical resend of the
original frame, which is what lets the server deduplicate alarms on
(te_id, seq).

The SMS grammar is plain uppercase ASCII, one message per text, at most 160
characters:

    user -> terminal   "ARM" | "DISARM" | "STATUS"
    terminal -> user   "OK ARMED" | "OK DISARMED"
                       "STATUS <ARMED|DISARMED> BAT <0-15>"
                       "ALARM ZONE <z> TYPE <IR|SMOKE|TEMP> AT <unix-seconds>"
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum, IntEnum
import re
import struct

SYNC = b"\xaa\x55"
PROTOCOL_VERSION = 0x01
HEADER_LEN = 12
CRC_LEN = 2
MAX_PAYLOAD = 1024
SMS_MAX_CHARS = 160

_HEADER = struct.Struct(">2sBBIHH")


# -- Errors -------------------------------------------------------------------


class ProtocolError(Exception):
    """Base class for framing and grammar errors."""


class PayloadTooLarge(ProtocolError):
    pass


class FrameError(ProtocolError):
    """A framing error found while scanning a buffer.

    ``consumed`` is the number of leading octets the caller can discard and
    still resynchronize on any frame that may follow.
    """

    def __init__(self, msg: str, consumed: int = 0):
        super().__init__(msg)
        self.consumed = consumed


class BadCrc(FrameError):
    pass


class UnknownType(FrameError):
    pass


class MalformedPayload(FrameError):
    pass


class SmsParseError(ProtocolError):
    pass


# -- CRC-16/CCITT-FALSE -------------------------------------------------------

_CRC_POLY = 0x1021
_CRC_TABLE = []
for _b in range(256):
    _r = _b << 8
    for _ in range(8):
        _r = ((_r << 1) ^ _CRC_POLY) if _r & 0x8000 else (_r << 1)
    _CRC_TABLE.append(_r & 0xFFFF)


def crc16(data: bytes) -> int:
    """CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, no xorout.

    Check value: crc16(b"123456789") == 0x29B1.
    """
    crc = 0xFFFF
    for byte in data:
        crc = ((crc << 8) & 0xFFFF) ^ _CRC_TABLE[(crc >> 8) ^ byte]
    return crc


# -- Message set --------------------------------------------------------------


class MsgType(IntEnum):
    REGISTER = 0x01
    REGISTER_ACK = 0x02
    HEARTBEAT = 0x03
    HEARTBEAT_ACK = 0x04
    ALARM = 0x05
    ALARM_ACK = 0x06
    CONTROL = 0x07
    CONTROL_ACK = 0x08
    STATUS_QUERY = 0x09
    STATUS_REPORT = 0x0A


class AlarmType(IntEnum):
    IR = 0x01
    SMOKE = 0x02
    TEMPERATURE = 0x03


class ControlCmd(IntEnum):
    ARM = 0x01
    DISARM = 0x02
    SIREN_ON = 0x03
    SIREN_OFF = 0x04
    REBOOT = 0x05


CONTROL_OK = 0x00
CONTROL_UNKNOWN_CMD = 0xFF


@dataclass(frozen=True)
class StatusByte:
    """Packed terminal status: bit0 armed, bit1 alarm-active, bits4-7 battery.

    Bits 2 and 3 are reserved and must be zero on the wire.
    """

    armed: bool = False
    alarm_active: bool = False
    battery: int = 15

    def __post_init__(self):
        if not 0 <= self.battery <= 15:
            raise ValueError(f"battery level out of range 0-15: {self.battery}")

    def pack(self) -> int:
        return int(self.armed) | (int(self.alarm_active) << 1) | (self.battery << 4)

    @classmethod
    def unpack(cls, octet: int) -> "StatusByte":
        if octet & 0x0C:
            raise ValueError(f"reserved status bits 2-3 set: 0x{octet:02X}")
        return cls(
            armed=bool(octet & 0x01),
            alarm_active=bool(octet & 0x02),
            battery=(octet >> 4) & 0x0F,
        )


@dataclass(frozen=True)
class Register:
    fw_version: int
    zone_count: int


@dataclass(frozen=True)
class RegisterAck:
    pass


@dataclass(frozen=True)
class Heartbeat:
    status: StatusByte


@dataclass(frozen=True)
class HeartbeatAck:
    pass


@dataclass(frozen=True)
class Alarm:
    zone: int
    alarm_type: AlarmType
    ts: int  # unix seconds, 32-bit


@dataclass(frozen=True)
class AlarmAck:
    pass


@dataclass(frozen=True)
class Control:
    cmd: int  # ControlCmd when recognized; raw octet preserved otherwise


@dataclass(frozen=True)
class ControlAck:
    result: int


@dataclass(frozen=True)
class StatusQuery:
    pass


@dataclass(frozen=True)
class StatusReport:
    status: StatusByte
    uptime_s: int


Message = (
    Register
    | RegisterAck
    | Heartbeat
    | HeartbeatAck
    | Alarm
    | AlarmAck
    | Control
    | ControlAck
    | StatusQuery
    | StatusReport
)

_TYPE_BY_CLASS = {
    Register: MsgType.REGISTER,
    RegisterAck: MsgType.REGISTER_ACK,
    Heartbeat: MsgType.HEARTBEAT,
    HeartbeatAck: MsgType.HEARTBEAT_ACK,
    Alarm: MsgType.ALARM,
    AlarmAck: MsgType.ALARM_ACK,
    Control: MsgType.CONTROL,
    ControlAck: MsgType.CONTROL_ACK,
    StatusQuery: MsgType.STATUS_QUERY,
    StatusReport: MsgType.STATUS_REPORT,
}


def msg_type_of(message: Message) -> MsgType:
    return _TYPE_BY_CLASS[type(message)]


def _encode_payload(message: Message) -> bytes:
    if isinstance(message, Register):
        return bytes([message.fw_version & 0xFF, message.zone_count & 0xFF])
    if isinstance(message, Heartbeat):
        return bytes([message.status.pack()])
    if isinstance(message, Alarm):
        return struct.pack(">BBI", message.zone, int(message.alarm_type), message.ts)
    if isinstance(message, Control):
        return bytes([int(message.cmd) & 0xFF])
    if isinstance(message, ControlAck):
        return bytes([message.result & 0xFF])
    if isinstance(message, StatusReport):
        return struct.pack(">BI", message.status.pack(), message.uptime_s)
    # REGISTER_ACK, HEARTBEAT_ACK, ALARM_ACK, STATUS_QUERY carry no payload
    return b""


def _decode_payload(msg_type: int, payload: bytes) -> Message:
    """Rebuild a message from its payload octets.

    Raises ValueError on any length or domain violation; the framing layer
    maps that to MalformedPayload.
    """

    def need(n):
        if len(payload) != n:
            raise ValueError(
                f"payload length {len(payload)} for type 0x{msg_type:02X}, expected {n}"
            )

    if msg_type == MsgType.REGISTER:
        need(2)
        return Register(fw_version=payload[0], zone_count=payload[1])
    if msg_type == MsgType.REGISTER_ACK:
        need(0)
        return RegisterAck()
    if msg_type == MsgType.HEARTBEAT:
        need(1)
        return Heartbeat(status=StatusByte.unpack(payload[0]))
    if msg_type == MsgType.HEARTBEAT_ACK:
        need(0)
        return HeartbeatAck()
    if msg_type == MsgType.ALARM:
        need(6)
        zone, kind, ts = struct.unpack(">BBI", payload)
        return Alarm(zone=zone, alarm_type=AlarmType(kind), ts=ts)
    if msg_type == MsgType.ALARM_ACK:
        need(0)
        return AlarmAck()
    if msg_type == MsgType.CONTROL:
        need(1)
        cmd = payload[0]
        try:
            cmd = ControlCmd(cmd)
        except ValueError:
            pass  # unknown commands travel as raw octets; the TE acks 0xFF
        return Control(cmd=cmd)
    if msg_type == MsgType.CONTROL_ACK:
        need(1)
        return ControlAck(result=payload[0])
    if msg_type == MsgType.STATUS_QUERY:
        need(0)
        return StatusQuery()
    if msg_type == MsgType.STATUS_REPORT:
        need(5)
        status, uptime = struct.unpack(">BI", payload)
        return StatusReport(status=StatusByte.unpack(status), uptime_s=uptime)
    raise ValueError(f"unknown msg_type 0x{msg_type:02X}")


# -- Framing ------------------------------------------------------------------


def encode_frame(message: Message, te_id: int, seq: int) -> bytes:
    """Serialize one message into a complete frame."""
    payload = _encode_payload(message)
    if len(payload) > MAX_PAYLOAD:
        raise PayloadTooLarge(f"payload {len(payload)} octets exceeds {MAX_PAYLOAD}")
    head = _HEADER.pack(
        SYNC, PROTOCOL_VERSION, int(msg_type_of(message)), te_id, seq, len(payload)
    )
    body = head + payload
    return body + struct.pack(">H", crc16(body[2:]))


@dataclass(frozen=True)
class DecodedFrame:
    message: Message
    te_id: int
    seq: int
    consumed: int  # octets consumed from the buffer front, skipped garbage included


@dataclass(frozen=True)
class NeedMore:
    """The buffer holds no complete frame yet.

    ``consumed`` octets at the front are garbage that can be discarded
    without losing any frame that may still be completing.
    """

    consumed: int = 0


def decode_frame(buf: bytes | bytearray) -> DecodedFrame | NeedMore:
    """Scan ``buf`` and decode the first complete, valid frame.

    Leading garbage is skipped by searching for the sync pattern.  A sync
    candidate that fails the CRC is abandoned and the scan resumes just past
    its sync pair, so a frame embedded after corruption is still recovered.

    Returns NeedMore when the buffer ends before any candidate completes.
    Raises BadCrc / UnknownType / MalformedPayload only when the scan found
    a broken candidate and nothing decodable after it; the exception's
    ``consumed`` says how much of the buffer is safe to drop.
    """
    buf = bytes(buf)
    pos = 0
    pending_error: FrameError | None = None

    def finish(consumed: int):
        if pending_error is not None:
            pending_error.consumed = consumed
            raise pending_error
        return NeedMore(consumed=consumed)

    while True:
        start = buf.find(SYNC, pos)
        if start < 0:
            # keep a trailing lone 0xAA: it may pair with the next chunk
            keep = 1 if buf.endswith(SYNC[:1]) else 0
            return finish(len(buf) - keep)
        if len(buf) - start < HEADER_LEN:
            return finish(start)
        _, version, msg_type, te_id, seq, payload_len = _HEADER.unpack_from(buf, start)
        if version != PROTOCOL_VERSION or payload_len > MAX_PAYLOAD:
            pos = start + 2
            continue
        total = HEADER_LEN + payload_len + CRC_LEN
        if len(buf) - start < total:
            return finish(start)
        body_end = start + HEADER_LEN + payload_len
        (crc_rx,) = struct.unpack_from(">H", buf, body_end)
        if crc_rx != crc16(buf[start + 2 : body_end]):
            if pending_error is None:
                pending_error = BadCrc(
                    f"CRC mismatch on candidate at offset {start}", consumed=start + 2
                )
            pos = start + 2
            continue
        if msg_type not in MsgType._value2member_map_:
            if pending_error is None:
                pending_error = UnknownType(
                    f"unknown msg_type 0x{msg_type:02X}", consumed=start + total
                )
            pos = start + total
            continue
        try:
            message = _decode_payload(msg_type, buf[start + HEADER_LEN : body_end])
        except ValueError as exc:
            if pending_error is None:
                pending_error = MalformedPayload(str(exc), consumed=start + total)
            pos = start + total
            continue
        return DecodedFrame(message=message, te_id=te_id, seq=seq, consumed=start + total)


class FrameDecoder:
    """Incremental decoder for a frame stream arriving in arbitrary chunks.

    Feed raw octets, collect complete frames; corrupt candidates are skipped
    and counted.
    """

    def __init__(self):
        self._buf = bytearray()
        self.bad_crc_count = 0
        self.unknown_type_count = 0
        self.malformed_count = 0

    def feed(self, chunk: bytes) -> list[DecodedFrame]:
        self._buf.extend(chunk)
        frames: list[DecodedFrame] = []
        while True:
            try:
                result = decode_frame(self._buf)
            except BadCrc as exc:
                self.bad_crc_count += 1
                del self._buf[: max(exc.consumed, 2)]
                continue
            except UnknownType as exc:
                self.unknown_type_count += 1
                del self._buf[: max(exc.consumed, 2)]
                continue
            except MalformedPayload as exc:
                self.malformed_count += 1
                del self._buf[: max(exc.consumed, 2)]
                continue
            if isinstance(result, NeedMore):
                if result.consumed:
                    del self._buf[: result.consumed]
                return frames
            frames.append(result)
            del self._buf[: result.consumed]

    @property
    def buffered(self) -> int:
        return len(self._buf)


# -- SMS grammar --------------------------------------------------------------


class UserCommand(Enum):
    ARM = "ARM"
    DISARM = "DISARM"
    STATUS = "STATUS"


@dataclass(frozen=True)
class SmsAck:
    """Reply to ARM/DISARM: confirms the resulting state."""

    armed: bool


@dataclass(frozen=True)
class SmsStatus:
    armed: bool
    battery: int


@dataclass(frozen=True)
class SmsAlert:
    zone: int
    alarm_type: AlarmType
    ts: int


ALARM_TYPE_WORDS = {
    AlarmType.IR: "IR",
    AlarmType.SMOKE: "SMOKE",
    AlarmType.TEMPERATURE: "TEMP",
}
_ALARM_TYPE_BY_WORD = {w: t for t, w in ALARM_TYPE_WORDS.items()}

_STATUS_RE = re.compile(r"^STATUS (ARMED|DISARMED) BAT (\d{1,2})$")
_ALERT_RE = re.compile(r"^ALARM ZONE (\d{1,3}) TYPE (IR|SMOKE|TEMP) AT (\d+)$")


def parse_sms(text: str) -> UserCommand:
    """Parse a user command text. Case-sensitive, exact match only."""
    for cmd in UserCommand:
        if text == cmd.value:
            return cmd
    raise SmsParseError(f"not a command: {text!r}")


def render_sms(item: UserCommand | SmsAck | SmsStatus | SmsAlert) -> str:
    if isinstance(item, UserCommand):
        text = item.value
    elif isinstance(item, SmsAck):
        text = "OK ARMED" if item.armed else "OK DISARMED"
    elif isinstance(item, SmsStatus):
        text = f"STATUS {'ARMED' if item.armed else 'DISARMED'} BAT {item.battery}"
    elif isinstance(item, SmsAlert):
        word = ALARM_TYPE_WORDS[item.alarm_type]
        text = f"ALARM ZONE {item.zone} TYPE {word} AT {item.ts}"
    else:
        raise TypeError(f"not an SMS item: {item!r}")
    assert len(text) <= SMS_MAX_CHARS and text.isascii()
    return text


def parse_sms_reply(text: str) -> SmsAck | SmsStatus | SmsAlert:
    """Parse a terminal-originated text (reply or alert)."""
    if text == "OK ARMED":
        return SmsAck(armed=True)
    if text == "OK DISARMED":
        return SmsAck(armed=False)
    m = _STATUS_RE.match(text)
    if m:
        battery = int(m.group(2))
        if battery > 15:
            raise SmsParseError(f"battery out of range: {text!r}")
        return SmsStatus(armed=m.group(1) == "ARMED", battery=battery)
    m = _ALERT_RE.match(text)
    if m:
        zone = int(m.group(1))
        if zone > 255:
            raise SmsParseError(f"zone out of range: {text!r}")
        return SmsAlert(
            zone=zone, alarm_type=_ALARM_TYPE_BY_WORD[m.group(2)], ts=int(m.group(3))
        )
    raise SmsParseError(f"unrecognized terminal message: {text!r}")
