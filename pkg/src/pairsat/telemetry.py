"""Fixed 32-byte telemetry records, redundant flash storage, link arithmetic.

Record layout (little-endian, 32 bytes total):

    offset  size  field
    0       4     time_ms         u32   milliseconds since power-up
    4       2     scan_id         u16   current scan attempt, 0 when idle
    6       1     step            u8    LC step index within the scan
    7       1     pair_sel        u8    0 = detector pair 1&4, 1 = pair 2&3
    8       2     lc_signal_mv    u16   signal-arm LC drive voltage
    10      2     lc_idler_mv     u16   idler-arm LC drive voltage
    12      4     singles_1       u32   counts this record period
    16      4     singles_2       u32   counts this record period
    20      2     coinc_raw       u16   counts this record period
    22      2     temp_centi_c    i16   housing temperature, 0.01 C units
    24      2     laser_power_10uw u16  pump power, 10 uW units
    26      2     bias_1_decivolt u16   active signal APD bias, 0.1 V units
    28      2     bias_2_decivolt u16   active idler APD bias, 0.1 V units
    30      1     flags           u8
    31      1     crc8            u8    poly 0x07, init 0x00, over bytes 0..30

Records are written identically to two 1 MiB flash sectors; each sector is
a ring of 32768 record slots and wraps silently (the wrap is visible only
as a flag bit on later records). Erased flash reads 0xFF, which can never
carry a valid CRC, so blank slots are self-identifying.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

SECTOR_BYTES = 1_048_576
RECORD_BYTES = 32
SECTOR_CAPACITY = SECTOR_BYTES // RECORD_BYTES

_RECORD_STRUCT = struct.Struct("<IHBBHHIIHhHHHBB")
assert _RECORD_STRUCT.size == RECORD_BYTES

FLAG_PRESENT = 0x01
FLAG_LASER_ON = 0x02
FLAG_COUNTING = 0x04
FLAG_HEATER_ON = 0x08
FLAG_FAULT_HOLD = 0x10
FLAG_SCAN_COMMIT = 0x20
FLAG_WRAPPED = 0x40
FLAG_BIAS_RAILED = 0x80


class CorruptRecordError(Exception):
    """Record bytes failed the length or CRC check."""


def _crc8_table() -> list[int]:
    table = []
    for byte in range(256):
        crc = byte
        for _ in range(8):
            crc = ((crc << 1) ^ 0x07 if crc & 0x80 else crc << 1) & 0xFF
        table.append(crc)
    return table


_CRC8_TABLE = _crc8_table()


def crc8(data: bytes) -> int:
    crc = 0x00
    for b in data:
        crc = _CRC8_TABLE[crc ^ b]
    return crc


@dataclass
class TelemetryRecord:
    time_ms: int
    scan_id: int = 0
    step: int = 0
    pair_sel: int = 0
    lc_signal_mv: int = 0
    lc_idler_mv: int = 0
    singles_1: int = 0
    singles_2: int = 0
    coinc_raw: int = 0
    temp_centi_c: int = 0
    laser_power_10uw: int = 0
    bias_1_decivolt: int = 0
    bias_2_decivolt: int = 0
    flags: int = FLAG_PRESENT

    _RANGES = {
        "time_ms": (0, 2**32 - 1),
        "scan_id": (0, 2**16 - 1),
        "step": (0, 2**8 - 1),
        "pair_sel": (0, 2**8 - 1),
        "lc_signal_mv": (0, 2**16 - 1),
        "lc_idler_mv": (0, 2**16 - 1),
        "singles_1": (0, 2**32 - 1),
        "singles_2": (0, 2**32 - 1),
        "coinc_raw": (0, 2**16 - 1),
        "temp_centi_c": (-(2**15), 2**15 - 1),
        "laser_power_10uw": (0, 2**16 - 1),
        "bias_1_decivolt": (0, 2**16 - 1),
        "bias_2_decivolt": (0, 2**16 - 1),
        "flags": (0, 2**8 - 1),
    }

    def validate(self) -> None:
        for name, (lo, hi) in self._RANGES.items():
            v = getattr(self, name)
            if not lo <= v <= hi:
                raise ValueError(f"{name}={v} outside [{lo}, {hi}]")


def encode(record: TelemetryRecord) -> bytes:
    """Serialize to 32 bytes with the CRC in the final byte."""
    record.validate()
    body = _RECORD_STRUCT.pack(
        record.time_ms,
        record.scan_id,
        record.step,
        record.pair_sel,
        record.lc_signal_mv,
        record.lc_idler_mv,
        record.singles_1,
        record.singles_2,
        record.coinc_raw,
        record.temp_centi_c,
        record.laser_power_10uw,
        record.bias_1_decivolt,
        record.bias_2_decivolt,
        record.flags,
        0,
    )[:-1]
    return body + bytes([crc8(body)])


def decode(data: bytes) -> TelemetryRecord:
    """Parse 32 bytes back into a record, verifying length and CRC."""
    if len(data) != RECORD_BYTES:
        raise CorruptRecordError(f"record must be {RECORD_BYTES} bytes, got {len(data)}")
    if crc8(data[:-1]) != data[-1]:
        raise CorruptRecordError("CRC mismatch")
    fields = _RECORD_STRUCT.unpack(data)
    return TelemetryRecord(*fields[:-1])


@dataclass
class FlashImage:
    """Two redundant ring-buffer sectors of 32-byte record slots."""

    sector_a: bytearray = field(default_factory=lambda: bytearray(b"\xff" * SECTOR_BYTES))
    sector_b: bytearray = field(default_factory=lambda: bytearray(b"\xff" * SECTOR_BYTES))
    cursor: int = 0  # total records ever written; slot = cursor % capacity

    @property
    def wrapped(self) -> bool:
        return self.cursor > SECTOR_CAPACITY

    @property
    def bytes_used(self) -> int:
        return min(self.cursor, SECTOR_CAPACITY) * RECORD_BYTES


def write_redundant(flash: FlashImage, records: list[TelemetryRecord]) -> FlashImage:
    """Append records to both sectors identically, wrapping when full."""
    for record in records:
        blob = encode(record)
        off = (flash.cursor % SECTOR_CAPACITY) * RECORD_BYTES
        flash.sector_a[off : off + RECORD_BYTES] = blob
        flash.sector_b[off : off + RECORD_BYTES] = blob
        flash.cursor += 1
    return flash


def sectors_identical(flash: FlashImage) -> bool:
    return flash.sector_a == flash.sector_b


def read_records(flash: FlashImage) -> list[TelemetryRecord]:
    """Recover all valid records, using sector_b to repair bad sector_a slots.

    Slots that decode in neither sector (blank or doubly corrupt) are
    skipped. Records come back in time order regardless of ring position.
    """
    out: list[TelemetryRecord] = []
    for slot in range(SECTOR_CAPACITY):
        off = slot * RECORD_BYTES
        for sector in (flash.sector_a, flash.sector_b):
            raw = bytes(sector[off : off + RECORD_BYTES])
            if raw == b"\xff" * RECORD_BYTES:
                continue
            try:
                out.append(decode(raw))
                break
            except CorruptRecordError:
                continue
    out.sort(key=lambda r: r.time_ms)
    return out


def save_image(flash: FlashImage, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(flash.sector_a)
        fh.write(flash.sector_b)


def load_image(path: str) -> FlashImage:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) != 2 * SECTOR_BYTES:
        raise ValueError(f"flash image must be {2 * SECTOR_BYTES} bytes, got {len(blob)}")
    return FlashImage(
        sector_a=bytearray(blob[:SECTOR_BYTES]),
        sector_b=bytearray(blob[SECTOR_BYTES:]),
    )


def session_volume(duration_s: float, record_rate_hz: float) -> int:
    """Telemetry bytes generated by an uninterrupted session."""
    if duration_s < 0 or record_rate_hz <= 0:
        raise ValueError("duration must be nonnegative and rate positive")
    return int(duration_s * record_rate_hz * RECORD_BYTES)


@dataclass
class LinkBudget:
    volume_bytes: float
    rate_bytes_per_s: float = 1250.0

    def __post_init__(self) -> None:
        if self.rate_bytes_per_s <= 0:
            raise ValueError("rate must be positive")
        if self.volume_bytes < 0:
            raise ValueError("volume must be nonnegative")


def downlink_time(budget: LinkBudget) -> float:
    return budget.volume_bytes / budget.rate_bytes_per_s
