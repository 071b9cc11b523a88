"""Standard MIDI File reading and writing.

Times are resolved to absolute milliseconds through the file's tempo map.
Only what a piano performance needs is kept: notes and the sustain pedal
(controller 64).
"""

from __future__ import annotations

import bisect
import struct
import warnings
from collections import defaultdict, deque
from dataclasses import dataclass, field

DEFAULT_TEMPO = 500_000  # microseconds per quarter note
DEFAULT_PPQ = 480
SUSTAIN_CC = 64
PEDAL_THRESHOLD = 64

# data bytes that follow each channel status nibble
_DATA_LENGTH = {0x8: 2, 0x9: 2, 0xA: 2, 0xB: 2, 0xC: 1, 0xD: 1, 0xE: 2}


class MidiParseError(ValueError):
    """Malformed MIDI data. ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class DanglingNoteWarning(UserWarning):
    """A note-on had no matching note-off before the end of its track."""


@dataclass(frozen=True)
class NoteEvent:
    pitch: int
    onset_ms: float
    duration_ms: float
    velocity: int
    pedal_on: bool = False

    def __post_init__(self):
        if not 0 <= self.pitch <= 127:
            raise ValueError(f"pitch {self.pitch} outside [0, 127]")
        if not 1 <= self.velocity <= 127:
            raise ValueError(f"velocity {self.velocity} outside [1, 127]")
        if not self.onset_ms >= 0:
            raise ValueError(f"negative onset {self.onset_ms}")
        if not self.duration_ms > 0:
            raise ValueError(f"non-positive duration {self.duration_ms}")


@dataclass
class TempoMap:
    """Piecewise-constant tempo, as ``(tick, microseconds_per_quarter)`` entries."""

    ppq: int
    entries: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        if self.ppq <= 0:
            raise ValueError("ppq must be positive")
        merged: dict[int, int] = {}
        for tick, tempo in self.entries:
            if tick < 0 or tempo <= 0:
                raise ValueError(f"invalid tempo entry ({tick}, {tempo})")
            merged[tick] = tempo  # a later event at the same tick wins
        if 0 not in merged:
            merged[0] = DEFAULT_TEMPO
        self.entries = sorted(merged.items())
        self._ticks = [t for t, _ in self.entries]
        # cumulative ms at the start of each segment
        self._ms = [0.0]
        for (t0, tempo), (t1, _) in zip(self.entries, self.entries[1:]):
            self._ms.append(self._ms[-1] + (t1 - t0) * tempo / (self.ppq * 1000.0))

    def tick_to_ms(self, tick: int) -> float:
        i = bisect.bisect_right(self._ticks, tick) - 1
        t0, tempo = self.entries[i]
        return self._ms[i] + (tick - t0) * tempo / (self.ppq * 1000.0)


def _read_vlq(data: bytes, pos: int, end: int) -> tuple[int, int]:
    value = 0
    for _ in range(4):
        if pos >= end:
            raise MidiParseError("truncated variable-length quantity", pos)
        byte = data[pos]
        pos += 1
        value = (value << 7) | (byte & 0x7F)
        if not byte & 0x80:
            return value, pos
    raise MidiParseError("variable-length quantity longer than 4 bytes", pos)


def _write_vlq(value: int) -> bytes:
    if value < 0 or value > 0x0FFFFFFF:
        raise ValueError(f"cannot encode {value} as a variable-length quantity")
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append((value & 0x7F) | 0x80)
        value >>= 7
    return bytes(reversed(out))


def _read_track(data: bytes, pos: int, end: int, track_index: int):
    """Yield ``(tick, track, seq, kind, payload)`` for the events we care about."""
    tick = 0
    status = None
    seq = 0
    while pos < end:
        delta, pos = _read_vlq(data, pos, end)
        tick += delta
        if pos >= end:
            raise MidiParseError("event missing after delta time", pos)
        byte = data[pos]
        if byte & 0x80:
            status = byte
            pos += 1
        elif status is None:
            raise MidiParseError("running status without a previous status byte", pos)

        if status == 0xFF:
            if pos >= end:
                raise MidiParseError("truncated meta event", pos)
            meta_type = data[pos]
            length, pos = _read_vlq(data, pos + 1, end)
            if pos + length > end:
                raise MidiParseError("meta event overruns track", pos)
            payload = data[pos:pos + length]
            pos += length
            status = None  # meta events cancel running status
            if meta_type == 0x51:
                if length != 3:
                    raise MidiParseError("tempo event must carry 3 bytes", pos - length)
                yield tick, track_index, seq, "tempo", int.from_bytes(payload, "big")
            elif meta_type == 0x2F:
                yield tick, track_index, seq, "end", None
                return
        elif status in (0xF0, 0xF7):
            length, pos = _read_vlq(data, pos, end)
            if pos + length > end:
                raise MidiParseError("sysex event overruns track", pos)
            pos += length
            status = None
        elif status >= 0xF0:
            raise MidiParseError(f"unsupported status byte 0x{status:02X}", pos - 1)
        else:
            n = _DATA_LENGTH[status >> 4]
            if pos + n > end:
                raise MidiParseError("truncated channel message", pos)
            args = data[pos:pos + n]
            pos += n
            kind = status >> 4
            channel = status & 0x0F
            if kind == 0x9 and args[1] > 0:
                yield tick, track_index, seq, "on", (channel, args[0], args[1])
            elif kind == 0x8 or kind == 0x9:
                yield tick, track_index, seq, "off", (channel, args[0])
            elif kind == 0xB and args[0] == SUSTAIN_CC:
                yield tick, track_index, seq, "pedal", (channel, args[1])
        seq += 1
    # track ended without an end-of-track meta event; tolerated
    yield tick, track_index, seq, "end", None


def parse_smf(data: bytes) -> tuple[list[NoteEvent], TempoMap]:
    """Parse a format 0 or 1 Standard MIDI File.

    Returns the notes sorted by ``(onset_ms, pitch)`` and the tempo map.
    Note-on/off pairs are matched first-in first-out per (channel, pitch).
    Events sharing a tick are applied in file order, so a pedal change
    written just before a note-on at the same tick governs that note.
    """
    if len(data) < 14 or data[:4] != b"MThd":
        raise MidiParseError("missing MThd header", 0)
    (header_len,) = struct.unpack(">I", data[4:8])
    if header_len < 6 or 8 + header_len > len(data):
        raise MidiParseError(f"bad header length {header_len}", 4)
    fmt, ntracks, division = struct.unpack(">HHH", data[8:14])
    if fmt not in (0, 1):
        raise MidiParseError(f"unsupported SMF format {fmt}", 8)
    if division & 0x8000:
        raise MidiParseError("SMPTE time division is not supported", 12)
    if division == 0:
        raise MidiParseError("zero ticks per quarter note", 12)

    events = []
    pos = 8 + header_len
    track_index = 0
    while pos < len(data) and track_index < ntracks:
        if pos + 8 > len(data):
            raise MidiParseError("truncated chunk header", pos)
        chunk_type = data[pos:pos + 4]
        (length,) = struct.unpack(">I", data[pos + 4:pos + 8])
        start = pos + 8
        end = start + length
        if end > len(data):
            raise MidiParseError(f"chunk length {length} overruns file", pos + 4)
        if chunk_type == b"MTrk":
            events.extend(_read_track(data, start, end, track_index))
            track_index += 1
        pos = end  # alien chunks are skipped
    if track_index < ntracks:
        raise MidiParseError(f"expected {ntracks} tracks, found {track_index}", pos)

    events.sort(key=lambda e: (e[0], e[1], e[2]))
    tempo_map = TempoMap(division, [(e[0], e[4]) for e in events if e[3] == "tempo"])

    pedal = defaultdict(bool)
    open_notes: dict[tuple[int, int], deque] = defaultdict(deque)
    pending = []  # (on_tick, off_tick, pitch, velocity, pedal)
    track_end: dict[int, int] = {}
    for tick, track, _, kind, payload in events:
        if kind == "on":
            channel, pitch, velocity = payload
            open_notes[(track, channel, pitch)].append((tick, velocity, pedal[channel]))
        elif kind == "off":
            channel, pitch = payload
            queue = open_notes.get((track, channel, pitch))
            if queue:
                on_tick, velocity, ped = queue.popleft()
                pending.append((on_tick, tick, pitch, velocity, ped))
        elif kind == "pedal":
            channel, value = payload
            pedal[channel] = value >= PEDAL_THRESHOLD
        elif kind == "end":
            track_end[track] = tick

    dangling = 0
    for (track, _, pitch), queue in open_notes.items():
        for on_tick, velocity, ped in queue:
            dangling += 1
            pending.append((on_tick, track_end.get(track, on_tick), pitch, velocity, ped))
    if dangling:
        warnings.warn(f"{dangling} note(s) left open; closed at end of track",
                      DanglingNoteWarning, stacklevel=2)

    notes = []
    for on_tick, off_tick, pitch, velocity, ped in pending:
        onset = tempo_map.tick_to_ms(on_tick)
        duration = tempo_map.tick_to_ms(off_tick) - onset
        if duration <= 0:
            continue  # zero-length note (on and off at the same tick)
        notes.append(NoteEvent(pitch, onset, duration, velocity, ped))
    notes.sort(key=lambda n: (n.onset_ms, n.pitch))
    return notes, tempo_map


def write_smf(notes: list[NoteEvent], ppq: int = DEFAULT_PPQ) -> bytes:
    """Write notes as a format 0 file at a fixed 500000 us/quarter tempo.

    Millisecond times snap to the nearest tick (durations are rounded
    independently of onsets). A controller-64 event is emitted right before
    each note-on whose pedal flag differs from the previous note's; the
    pedal is assumed up at the start.
    """
    if ppq <= 0 or ppq > 0x7FFF:
        raise ValueError(f"ppq {ppq} out of range")
    ms_per_tick = DEFAULT_TEMPO / (ppq * 1000.0)
    last_onset = float("-inf")
    placed = []
    for note in notes:
        if not 0 <= note.pitch <= 127:
            raise ValueError(f"pitch {note.pitch} outside [0, 127]")
        if note.onset_ms < last_onset:
            raise ValueError("notes must be sorted by onset")
        last_onset = note.onset_ms
        on = int(round(note.onset_ms / ms_per_tick))
        length = max(1, int(round(note.duration_ms / ms_per_tick)))
        placed.append((on, note.pitch, on + length, note))
    # ties: ascending pitch, then earlier release first so FIFO pairing holds
    placed.sort(key=lambda p: (p[0], p[1], p[2]))

    # (tick, order, seq, bytes); offs sort before pedal changes and ons
    timeline = []
    pedal = False
    for seq, (on, pitch, off, note) in enumerate(placed):
        if note.pedal_on != pedal:
            pedal = note.pedal_on
            timeline.append((on, 1, seq, bytes([0xB0, SUSTAIN_CC, 127 if pedal else 0])))
        timeline.append((on, 1, seq, bytes([0x90, pitch, note.velocity])))
        timeline.append((off, 0, seq, bytes([0x80, pitch, 0])))
    timeline.sort(key=lambda e: (e[0], e[1], e[2]))

    track = bytearray()
    track += b"\x00\xFF\x51\x03" + DEFAULT_TEMPO.to_bytes(3, "big")
    tick = 0
    for when, _, _, message in timeline:
        track += _write_vlq(when - tick)
        track += message
        tick = when
    track += b"\x00\xFF\x2F\x00"

    header = b"MThd" + struct.pack(">IHHH", 6, 0, 1, ppq)
    return header + b"MTrk" + struct.pack(">I", len(track)) + bytes(track)


def read_midi(path) -> list[NoteEvent]:
    with open(path, "rb") as fh:
        return parse_smf(fh.read())[0]


def write_midi(path, notes: list[NoteEvent], ppq: int = DEFAULT_PPQ) -> None:
    with open(path, "wb") as fh:
        fh.write(write_smf(notes, ppq))
