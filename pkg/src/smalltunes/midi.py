"""Byte-level Standard MIDI File reading and writing.

Only what a monophonic melody pipeline needs: note on/off pairs, track names
and time signatures. Errors carry the byte offset where parsing failed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from .errors import MidiParseError


@dataclass
class RawTrack:
    name: str = ""
    # (pitch, start_tick, end_tick) in file resolution
    notes: list[tuple[int, int, int]] = field(default_factory=list)


@dataclass
class RawMidi:
    format: int
    ticks_per_quarter: int
    tracks: list[RawTrack]
    time_signatures: list[tuple[int, int, int]]  # (tick, numerator, denominator)


class _Reader:
    def __init__(self, data: bytes, pos: int = 0, end: int | None = None) -> None:
        self.data = data
        self.pos = pos
        self.end = len(data) if end is None else end

    def need(self, n: int, what: str) -> None:
        if self.pos + n > self.end:
            raise MidiParseError(f"truncated {what}", self.pos)

    def u8(self, what: str = "byte") -> int:
        self.need(1, what)
        b = self.data[self.pos]
        self.pos += 1
        return b

    def take(self, n: int, what: str) -> bytes:
        self.need(n, what)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def varlen(self) -> int:
        start = self.pos
        value = 0
        for _ in range(4):
            b = self.u8("variable-length quantity")
            value = (value << 7) | (b & 0x7F)
            if not b & 0x80:
                return value
        raise MidiParseError("variable-length quantity longer than 4 bytes", start)


def read_smf(data: bytes) -> RawMidi:
    r = _Reader(data)
    if r.take(4, "header chunk id") != b"MThd":
        raise MidiParseError("missing MThd header", 0)
    (length,) = struct.unpack(">I", r.take(4, "header length"))
    if length < 6:
        raise MidiParseError(f"header length {length} < 6", 4)
    fmt, ntracks, division = struct.unpack(">HHh", r.take(6, "header"))
    r.pos = 8 + length
    if fmt not in (0, 1):
        raise MidiParseError(f"unsupported SMF format {fmt}", 8)
    if division <= 0:
        raise MidiParseError("SMPTE time division is not supported", 12)

    tracks: list[RawTrack] = []
    signatures: list[tuple[int, int, int]] = []
    while len(tracks) < ntracks:
        if r.pos >= len(data):
            raise MidiParseError(f"expected {ntracks} tracks, found {len(tracks)}", r.pos)
        chunk_id = r.take(4, "chunk id")
        (size,) = struct.unpack(">I", r.take(4, "chunk length"))
        body_start = r.pos
        if body_start + size > len(data):
            raise MidiParseError(f"chunk of {size} bytes runs past end of file", body_start - 4)
        r.pos = body_start + size
        if chunk_id != b"MTrk":
            continue
        tracks.append(_read_track(data, body_start, body_start + size, signatures))
    signatures.sort(key=lambda s: s[0])
    return RawMidi(fmt, division, tracks, signatures)


def _read_track(data: bytes, start: int, end: int,
                signatures: list[tuple[int, int, int]]) -> RawTrack:
    r = _Reader(data, start, end)
    track = RawTrack()
    tick = 0
    status = None
    sounding: dict[tuple[int, int], int] = {}  # (channel, pitch) -> start tick

    def close(key: tuple[int, int], at: int) -> None:
        began = sounding.pop(key)
        track.notes.append((key[1], began, at))

    while r.pos < end:
        tick += r.varlen()
        event_pos = r.pos
        first = r.u8("event status")
        if first == 0xFF:
            kind = r.u8("meta type")
            payload = r.take(r.varlen(), "meta payload")
            if kind == 0x2F:
                break
            if kind == 0x03 and not track.name:
                track.name = payload.decode("utf-8", errors="replace")
            elif kind == 0x58:
                if len(payload) < 2:
                    raise MidiParseError("short time-signature payload", event_pos)
                signatures.append((tick, payload[0], 2 ** payload[1]))
            continue
        if first in (0xF0, 0xF7):
            r.take(r.varlen(), "sysex payload")
            continue
        if first & 0x80:
            status = first
            data1 = r.u8("channel data")
        else:
            if status is None:
                raise MidiParseError("running status without a prior status byte", event_pos)
            data1 = first
        kind, channel = status & 0xF0, status & 0x0F
        if kind in (0xC0, 0xD0):
            continue
        if kind < 0x80 or kind > 0xE0:
            raise MidiParseError(f"invalid status byte 0x{status:02X}", event_pos)
        data2 = r.u8("channel data")
        if data1 > 127 or data2 > 127:
            raise MidiParseError("data byte out of range", event_pos)
        key = (channel, data1)
        if kind == 0x90 and data2 > 0:
            if key in sounding:
                close(key, tick)
            sounding[key] = tick
        elif kind == 0x80 or kind == 0x90:
            if key in sounding:
                close(key, tick)
    for key in list(sounding):
        close(key, tick)
    track.notes.sort(key=lambda n: (n[1], n[0]))
    return track


def _varlen(value: int) -> bytes:
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append(0x80 | (value & 0x7F))
        value >>= 7
    return bytes(reversed(out))


def write_smf(notes: list[tuple[int, int, int]], ticks_per_quarter: int,
              time_signature: tuple[int, int], title: str = "",
              tempo_us: int = 500_000) -> bytes:
    """Write a type-0 file with a single track.

    ``notes`` are ``(pitch, start_tick, end_tick)``. Note-offs at a tick are
    emitted before note-ons at the same tick so repeated pitches survive.
    """
    num, den = time_signature
    if den & (den - 1) or den < 1:
        raise ValueError(f"time-signature denominator must be a power of two, got {den}")
    events: list[tuple[int, int, bytes]] = []
    if title:
        name = title.encode("utf-8")
        events.append((0, -3, b"\xff\x03" + _varlen(len(name)) + name))
    events.append((0, -2, bytes([0xFF, 0x58, 4, num, den.bit_length() - 1, 24, 8])))
    events.append((0, -1, b"\xff\x51\x03" + tempo_us.to_bytes(3, "big")))
    for pitch, start, end in notes:
        events.append((start, 1, bytes([0x90, pitch, 80])))
        events.append((end, 0, bytes([0x80, pitch, 0])))
    events.sort(key=lambda e: (e[0], e[1]))
    body = bytearray()
    last = 0
    for tick, _, payload in events:
        body += _varlen(tick - last) + payload
        last = tick
    body += b"\x00\xff\x2f\x00"
    header = b"MThd" + struct.pack(">IHHH", 6, 0, 1, ticks_per_quarter)
    return header + b"MTrk" + struct.pack(">I", len(body)) + bytes(body)
