"""Run traces: the deterministic record stream a report is derived from.

Format (UTF-8 text, one JSON document per line, deterministic key order):

    CPASTRACE/1
    {header: schema, seed, scenario ...}
    {record}
    ...
    #END <record-count> <crc32 of everything above, hex>

The header embeds the full scenario (seed included), so a replay needs no
other input and refuses any attempt to override the seed.  The END line
makes truncation and tampering detectable.
"""

from __future__ import annotations

import json
import zlib
from pathlib import Path

MAGIC = "CPASTRACE/1"


class TraceError(Exception):
    pass


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def trace_bytes(header: dict, records: list[dict]) -> bytes:
    lines = [MAGIC, _dump(header)]
    lines.extend(_dump(r) for r in records)
    body = ("\n".join(lines) + "\n").encode("utf-8")
    crc = zlib.crc32(body) & 0xFFFFFFFF
    return body + f"#END {len(records)} {crc:08x}\n".encode("utf-8")


def write_trace(path: str | Path, header: dict, records: list[dict]) -> None:
    Path(path).write_bytes(trace_bytes(header, records))


def read_trace(path: str | Path) -> tuple[dict, list[dict]]:
    raw = Path(path).read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise TraceError(f"not a trace file: {exc}") from exc
    lines = text.splitlines()
    if not lines or lines[0] != MAGIC:
        raise TraceError(f"bad magic; expected {MAGIC!r}")
    if not lines[-1].startswith("#END "):
        raise TraceError("truncated trace: END line missing")
    end_parts = lines[-1].split()
    if len(end_parts) != 3:
        raise TraceError("malformed END line")
    declared_count, declared_crc = int(end_parts[1]), end_parts[2]
    body = text[: text.rindex("#END ")].encode("utf-8")
    actual_crc = f"{zlib.crc32(body) & 0xFFFFFFFF:08x}"
    if actual_crc != declared_crc:
        raise TraceError(
            f"trace corrupt: crc {actual_crc} != declared {declared_crc}"
        )
    try:
        header = json.loads(lines[1])
        records = [json.loads(line) for line in lines[2:-1]]
    except json.JSONDecodeError as exc:
        raise TraceError(f"bad record at line {exc.lineno}: {exc.msg}") from exc
    if len(records) != declared_count:
        raise TraceError(
            f"truncated trace: {len(records)} records, END declares {declared_count}"
        )
    return header, records
