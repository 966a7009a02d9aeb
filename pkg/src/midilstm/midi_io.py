"""Standard MIDI File reading and writing, reduced to what the tokenizers need.

Raw events are kept on read (meta, sysex, every channel message) so a parsed
file can be inspected or re-emitted; the note stream used for tokenization is
pulled out separately by :func:`extract_note_events`.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterable, Iterator

DEFAULT_TPB = 480
DEFAULT_VELOCITY = 64
DEFAULT_TEMPO_US = 500_000  # 120 BPM

ON = "on"
OFF = "off"

META = 0xFF
END_OF_TRACK = 0x2F
SET_TEMPO = 0x51


class MidiError(ValueError):
    """Base class for everything :func:`parse_midi` and :func:`write_midi` raise."""


class MalformedHeader(MidiError):
    pass


class UnsupportedFormat(MidiError):
    pass


class TruncatedTrack(MidiError):
    pass


class InvalidVlq(MidiError):
    pass


class MalformedTrack(MidiError):
    """Track bytes that are present but make no sense (e.g. data byte with no running status)."""


class PitchOutOfRange(MidiError):
    pass


@dataclass(frozen=True)
class MidiEvent:
    """One raw track event.

    ``status`` is the full status byte. For meta events (0xFF) ``data`` is the
    meta type byte followed by the payload; for sysex (0xF0/0xF7) it is the
    payload; for channel messages it is the one or two data bytes.
    """

    delta: int
    status: int
    data: bytes = b""

    @property
    def is_meta(self) -> bool:
        return self.status == META

    @property
    def meta_type(self) -> int | None:
        return self.data[0] if self.is_meta and self.data else None


@dataclass
class MidiFile:
    format: int
    ticks_per_beat: int
    tracks: list[list[MidiEvent]] = field(default_factory=list)

    def __post_init__(self):
        if self.ticks_per_beat <= 0:
            raise MalformedHeader(f"ticks_per_beat must be positive, got {self.ticks_per_beat}")
        if self.format not in (0, 1):
            raise UnsupportedFormat(f"SMF format {self.format} is not supported")
        if self.format == 0 and len(self.tracks) != 1:
            raise MalformedHeader(f"format 0 file must have exactly one track, got {len(self.tracks)}")


@dataclass(frozen=True)
class NoteEvent:
    kind: str  # ON or OFF
    pitch: int
    delta: int = 0
    track_index: int = 0

    def __post_init__(self):
        if self.kind not in (ON, OFF):
            raise ValueError(f"kind must be 'on' or 'off', got {self.kind!r}")
        if not 0 <= self.pitch <= 127:
            raise PitchOutOfRange(f"pitch {self.pitch} outside 0..127")
        if self.delta < 0:
            raise ValueError(f"negative delta {self.delta}")


# -- variable length quantities ---------------------------------------------

def read_vlq(buf: bytes, pos: int, end: int | None = None) -> tuple[int, int]:
    """Decode a VLQ starting at ``pos``; return ``(value, next_pos)``."""
    end = len(buf) if end is None else end
    value = 0
    for n in range(4):
        if pos >= end:
            raise TruncatedTrack("track ended inside a variable-length quantity")
        byte = buf[pos]
        pos += 1
        value = (value << 7) | (byte & 0x7F)
        if not byte & 0x80:
            return value, pos
    raise InvalidVlq("variable-length quantity longer than 4 bytes")


def write_vlq(value: int) -> bytes:
    if value < 0 or value > 0x0FFFFFFF:
        raise InvalidVlq(f"value {value} not representable as a 4-byte VLQ")
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append((value & 0x7F) | 0x80)
        value >>= 7
    return bytes(reversed(out))


# -- parsing -----------------------------------------------------------------

_CHANNEL_DATA_LEN = {0x80: 2, 0x90: 2, 0xA0: 2, 0xB0: 2, 0xC0: 1, 0xD0: 1, 0xE0: 2}


def _parse_track(buf: bytes, pos: int, end: int) -> list[MidiEvent]:
    events = []
    running = None
    while pos < end:
        delta, pos = read_vlq(buf, pos, end)
        if pos >= end:
            raise TruncatedTrack("track ended after a delta time")
        status = buf[pos]
        if status & 0x80:
            pos += 1
        elif running is None:
            raise MalformedTrack(f"data byte 0x{status:02x} with no running status")
        else:
            status = running

        if status == META:
            if pos >= end:
                raise TruncatedTrack("track ended inside a meta event")
            mtype = buf[pos]
            length, pos = read_vlq(buf, pos + 1, end)
            if pos + length > end:
                raise TruncatedTrack("meta event payload runs past end of track")
            events.append(MidiEvent(delta, META, bytes([mtype]) + buf[pos:pos + length]))
            pos += length
            # meta and sysex events cancel running status
            running = None
            if mtype == END_OF_TRACK:
                break
        elif status in (0xF0, 0xF7):
            length, pos = read_vlq(buf, pos, end)
            if pos + length > end:
                raise TruncatedTrack("sysex payload runs past end of track")
            events.append(MidiEvent(delta, status, bytes(buf[pos:pos + length])))
            pos += length
            running = None
        elif status >= 0xF0:
            raise MalformedTrack(f"unexpected system status 0x{status:02x} in track")
        else:
            n = _CHANNEL_DATA_LEN[status & 0xF0]
            if pos + n > end:
                raise TruncatedTrack("track ended inside a channel message")
            data = bytes(buf[pos:pos + n])
            if any(b & 0x80 for b in data):
                raise MalformedTrack("status byte where a data byte was expected")
            events.append(MidiEvent(delta, status, data))
            pos += n
            running = status
    return events


def parse_midi(data: bytes) -> MidiFile:
    """Parse SMF bytes. Every failure surfaces as a :class:`MidiError` subclass."""
    data = bytes(data)
    if len(data) < 14 or data[:4] != b"MThd":
        raise MalformedHeader("missing or short MThd header chunk")
    hlen = struct.unpack(">I", data[4:8])[0]
    if hlen < 6 or 8 + hlen > len(data):
        raise MalformedHeader(f"bad header length {hlen}")
    fmt, ntracks, division = struct.unpack(">HHH", data[8:14])
    if fmt == 2 or fmt > 2:
        raise UnsupportedFormat(f"SMF format {fmt} is not supported")
    if division & 0x8000:
        raise UnsupportedFormat("SMPTE time division is not supported")
    if division == 0:
        raise MalformedHeader("ticks per beat is zero")

    tracks = []
    pos = 8 + hlen
    while len(tracks) < ntracks:
        if pos + 8 > len(data):
            raise TruncatedTrack(f"expected {ntracks} tracks, found {len(tracks)}")
        ctype = data[pos:pos + 4]
        clen = struct.unpack(">I", data[pos + 4:pos + 8])[0]
        body = pos + 8
        if body + clen > len(data):
            raise TruncatedTrack("track chunk length runs past end of file")
        if ctype == b"MTrk":
            tracks.append(_parse_track(data, body, body + clen))
        # unknown chunk types are skipped
        pos = body + clen

    try:
        return MidiFile(fmt, division, tracks)
    except MidiError:
        raise
    except ValueError as exc:  # pragma: no cover - defensive
        raise MalformedHeader(str(exc)) from exc


def read_midi_file(path) -> MidiFile:
    with open(path, "rb") as fh:
        return parse_midi(fh.read())


# -- time normalization ------------------------------------------------------

def _scale(delta: int, ratio: Fraction) -> int:
    # round() on a Fraction is half-to-even
    return round(delta * ratio)


def normalize_ticks(midi: MidiFile, target_tpb: int = DEFAULT_TPB) -> MidiFile:
    if target_tpb <= 0:
        raise ValueError("target_tpb must be positive")
    if midi.ticks_per_beat == target_tpb:
        return MidiFile(midi.format, target_tpb, [list(t) for t in midi.tracks])
    ratio = Fraction(target_tpb, midi.ticks_per_beat)
    tracks = [[replace(ev, delta=_scale(ev.delta, ratio)) for ev in track] for track in midi.tracks]
    return MidiFile(midi.format, target_tpb, tracks)


# -- note extraction -----------------------------------------------------------

def _note_kind(ev: MidiEvent) -> str | None:
    kind = ev.status & 0xF0
    if kind == 0x90:
        return ON if ev.data[1] > 0 else OFF
    if kind == 0x80:
        return OFF
    return None


def iter_track_notes(track: Iterable[MidiEvent]) -> Iterator[tuple[int, str, int]]:
    """Yield ``(absolute_tick, kind, pitch)`` for the note messages of one track."""
    tick = 0
    for ev in track:
        tick += ev.delta
        if ev.status < 0xF0:
            kind = _note_kind(ev)
            if kind is not None:
                yield tick, kind, ev.data[0]


def track_length(track: Iterable[MidiEvent]) -> int:
    return sum(ev.delta for ev in track)


def extract_note_events(midi: MidiFile) -> list[NoteEvent]:
    """Note-on/off messages in file order, grouped by track.

    Deltas are measured from the previous *note* event of the same track, so
    time spent in dropped messages (tempo changes, controllers) is kept.
    """
    events = []
    for ti, track in enumerate(midi.tracks):
        last = 0
        for tick, kind, pitch in iter_track_notes(track):
            events.append(NoteEvent(kind, pitch, tick - last, ti))
            last = tick
    return events


def flatten_tracks(events: list[NoteEvent]) -> list[NoteEvent]:
    # sorted() is stable, so per-track order survives
    return sorted(events, key=lambda e: e.track_index)


# -- writing -------------------------------------------------------------------

def _chunk(ctype: bytes, body: bytes) -> bytes:
    return ctype + struct.pack(">I", len(body)) + body


def write_midi(
    events: Iterable[NoteEvent],
    ticks_per_beat: int = DEFAULT_TPB,
    end_delta: int = 0,
    tempo_us: int = DEFAULT_TEMPO_US,
) -> bytes:
    """Emit a format-0 SMF holding ``events`` on channel 0.

    ``end_delta`` is the gap before end-of-track, which lets trailing silence
    survive. Running status is never used.
    """
    if ticks_per_beat <= 0 or ticks_per_beat >= 0x8000:
        raise ValueError(f"ticks_per_beat out of range: {ticks_per_beat}")
    body = bytearray()
    body += b"\x00" + bytes([META, SET_TEMPO, 3]) + tempo_us.to_bytes(3, "big")
    for ev in events:
        if not 0 <= ev.pitch <= 127:
            raise PitchOutOfRange(f"pitch {ev.pitch} outside 0..127")
        status = 0x90 if ev.kind == ON else 0x80
        body += write_vlq(ev.delta) + bytes([status, ev.pitch, DEFAULT_VELOCITY])
    body += write_vlq(end_delta) + bytes([META, END_OF_TRACK, 0])
    header = _chunk(b"MThd", struct.pack(">HHH", 0, 1, ticks_per_beat))
    return header + _chunk(b"MTrk", bytes(body))
