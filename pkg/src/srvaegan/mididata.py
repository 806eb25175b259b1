"""Standard MIDI File I/O, piano-roll bars and the binary dataset format.

A bar is an 88x16 float array: row ``p - 21`` holds MIDI pitch ``p``
(A0..C8), each column is 0.125 s, and a cell holds ``velocity / 127`` while
the note sounds.  Notes crossing a bar boundary are split at the boundary.
"""

from __future__ import annotations

import struct
from collections import defaultdict, deque
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import FormatError, MidiParseError

LOWEST_PITCH = 21
HIGHEST_PITCH = 108
N_PITCHES = HIGHEST_PITCH - LOWEST_PITCH + 1
STEPS_PER_BAR = 16
STEP_SECONDS = 0.125
DEFAULT_TEMPO = 500_000  # microseconds per quarter note (120 BPM)
EXPORT_TPQ = 480
EXPORT_THRESHOLD = 0.05

NOTE_ON, NOTE_OFF, TEMPO, OTHER = "note_on", "note_off", "tempo", "other"


class MidiEvent(NamedTuple):
    tick: int
    kind: str
    pitch: int = 0
    velocity: int = 0
    channel: int = 0
    tempo: int = 0  # microseconds per quarter, tempo events only


@dataclass
class MidiFile:
    format: int
    ticks_per_quarter: int
    events: list[MidiEvent]
    end_tick: int
    smpte_ticks_per_second: float | None = None

    def seconds(self, ticks):
        """Convert absolute ticks (scalar or array) to seconds via the tempo map."""
        ticks = np.asarray(ticks, dtype=np.float64)
        if self.smpte_ticks_per_second:
            return ticks / self.smpte_ticks_per_second
        changes = [(0, DEFAULT_TEMPO)] + [(e.tick, e.tempo) for e in self.events if e.kind == TEMPO]
        # later duplicate ticks win
        bounds, tempos, offsets = [], [], []
        elapsed, prev_tick, prev_tempo = 0.0, 0, DEFAULT_TEMPO
        for tick, tempo in changes:
            elapsed += (tick - prev_tick) * prev_tempo / 1e6 / self.ticks_per_quarter
            if bounds and bounds[-1] == tick:
                tempos[-1], offsets[-1] = tempo, elapsed
            else:
                bounds.append(tick)
                tempos.append(tempo)
                offsets.append(elapsed)
            prev_tick, prev_tempo = tick, tempo
        k = np.searchsorted(np.asarray(bounds), ticks, side="right") - 1
        tempos, offsets, bounds = np.asarray(tempos), np.asarray(offsets), np.asarray(bounds)
        return offsets[k] + (ticks - bounds[k]) * tempos[k] / 1e6 / self.ticks_per_quarter


# ---------------------------------------------------------------------------
# parsing


def read_vlq(data: bytes, pos: int, limit: int | None = None) -> tuple[int, int]:
    """Decode a variable-length quantity at ``pos``; returns ``(value, new_pos)``."""
    limit = len(data) if limit is None else limit
    value = 0
    for k in range(4):
        if pos >= limit:
            raise MidiParseError("truncated variable-length quantity", pos)
        byte = data[pos]
        pos += 1
        value = (value << 7) | (byte & 0x7F)
        if not byte & 0x80:
            return value, pos
    raise MidiParseError("variable-length quantity longer than 4 bytes", pos - 1)


def write_vlq(value: int) -> bytes:
    if not 0 <= value <= 0x0FFFFFFF:
        raise ValueError(f"value {value} out of VLQ range")
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append(0x80 | (value & 0x7F))
        value >>= 7
    return bytes(reversed(out))


_DATA_LENGTH = {0x80: 2, 0x90: 2, 0xA0: 2, 0xB0: 2, 0xC0: 1, 0xD0: 1, 0xE0: 2}


def _parse_track(data: bytes, pos: int, end: int, events: list):
    tick = 0
    status = None
    while pos < end:
        delta, pos = read_vlq(data, pos, end)
        tick += delta
        if pos >= end:
            raise MidiParseError("event truncated after delta time", pos)
        byte = data[pos]
        if byte == 0xFF:
            if pos + 1 >= end:
                raise MidiParseError("truncated meta event", pos)
            meta_type = data[pos + 1]
            length, body = read_vlq(data, pos + 2, end)
            if body + length > end:
                raise MidiParseError("meta event overruns track chunk", body)
            if meta_type == 0x51:
                if length != 3:
                    raise MidiParseError("tempo meta event must have length 3", body)
                tempo = int.from_bytes(data[body:body + 3], "big")
                events.append(MidiEvent(tick, TEMPO, tempo=tempo))
            pos = body + length
            if meta_type == 0x2F:
                return tick
            continue
        if byte in (0xF0, 0xF7):
            length, body = read_vlq(data, pos + 1, end)
            if body + length > end:
                raise MidiParseError("sysex event overruns track chunk", body)
            pos = body + length
            status = None
            continue
        if byte & 0x80:
            if byte >= 0xF0:
                raise MidiParseError(f"unexpected system message 0x{byte:02X} in track", pos)
            status = byte
            pos += 1
        elif status is None:
            raise MidiParseError("running status without a preceding status byte", pos)
        kind = status & 0xF0
        n = _DATA_LENGTH[kind]
        if pos + n > end:
            raise MidiParseError("channel message truncated", pos)
        payload = data[pos:pos + n]
        if any(b & 0x80 for b in payload):
            raise MidiParseError("data byte has its high bit set", pos)
        pos += n
        channel = status & 0x0F
        if kind == 0x90 and payload[1] > 0:
            events.append(MidiEvent(tick, NOTE_ON, payload[0], payload[1], channel))
        elif kind in (0x80, 0x90):
            events.append(MidiEvent(tick, NOTE_OFF, payload[0], 0, channel))
        else:
            events.append(MidiEvent(tick, OTHER, channel=channel))
    return tick


def parse_midi(data: bytes) -> MidiFile:
    """Parse a format 0 or 1 Standard MIDI File.

    Events from all tracks are merged and sorted by tick (stable, so within
    a track the file order is kept).  Note-on with velocity 0 becomes
    note-off.  Raises :class:`MidiParseError` on any malformation.
    """
    data = bytes(data)
    if data[:4] != b"MThd":
        raise MidiParseError("missing MThd header", 0)
    if len(data) < 8:
        raise MidiParseError("truncated header chunk", len(data))
    (hlen,) = struct.unpack_from(">I", data, 4)
    if hlen < 6:
        raise MidiParseError("header chunk shorter than 6 bytes", 4)
    if len(data) < 8 + hlen:
        raise MidiParseError("truncated header chunk", len(data))
    fmt, ntracks, division = struct.unpack_from(">HHH", data, 8)
    if fmt not in (0, 1, 2):
        raise MidiParseError(f"unknown MIDI format {fmt}", 8)
    if fmt == 0 and ntracks != 1:
        raise MidiParseError("format 0 file must contain exactly one track", 10)
    smpte = None
    if division & 0x8000:
        fps = 256 - (division >> 8)
        smpte = float(fps * (division & 0xFF))
        if smpte <= 0:
            raise MidiParseError("invalid SMPTE division", 12)
        tpq = 1
    else:
        tpq = division
        if tpq == 0:
            raise MidiParseError("ticks per quarter note is zero", 12)
    pos = 8 + hlen
    events: list[MidiEvent] = []
    end_tick = 0
    found = 0
    while found < ntracks:
        if pos + 8 > len(data):
            raise MidiParseError(f"expected {ntracks} tracks, found {found}", pos)
        chunk_id = data[pos:pos + 4]
        (length,) = struct.unpack_from(">I", data, pos + 4)
        body = pos + 8
        if body + length > len(data):
            raise MidiParseError("chunk length exceeds file size", pos + 4)
        if chunk_id == b"MTrk":
            end_tick = max(end_tick, _parse_track(data, body, body + length, events))
            found += 1
        pos = body + length
    events.sort(key=lambda e: e.tick)
    return MidiFile(fmt, tpq, events, end_tick, smpte)


def read_midi(path) -> MidiFile:
    return parse_midi(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# piano rolls


@dataclass
class PianoRollSequence:
    """Consecutive bars of one piece: ``bars`` has shape (n, 88, 16)."""

    bars: np.ndarray
    source: str = ""
    dropped_notes: int = 0

    def __post_init__(self):
        self.bars = np.asarray(self.bars, dtype=np.float32).reshape(-1, N_PITCHES, STEPS_PER_BAR)

    def __len__(self):
        return len(self.bars)

    def roll(self) -> np.ndarray:
        """Bars joined along time: (88, 16 * n)."""
        return np.concatenate(list(self.bars), axis=1) if len(self.bars) else np.zeros((N_PITCHES, 0), np.float32)


def note_intervals(midi: MidiFile):
    """Yield ``(start_s, end_s, pitch, velocity)`` for every sounding note.

    Note-offs close the earliest open note of the same channel and pitch;
    notes still open at the end of the file close at its last tick.
    """
    open_notes = defaultdict(deque)
    spans = []
    for e in midi.events:
        if e.kind == NOTE_ON:
            open_notes[(e.channel, e.pitch)].append((e.tick, e.velocity))
        elif e.kind == NOTE_OFF and open_notes[(e.channel, e.pitch)]:
            start, vel = open_notes[(e.channel, e.pitch)].popleft()
            spans.append((start, e.tick, e.pitch, vel))
    for (channel, pitch), queue in open_notes.items():
        for start, vel in queue:
            spans.append((start, midi.end_tick, pitch, vel))
    if not spans:
        return []
    spans.sort()
    arr = np.asarray([(s, t) for s, t, _, _ in spans], dtype=np.float64)
    secs = midi.seconds(arr)
    return [(float(a), float(b), p, v) for (a, b), (_, _, p, v) in zip(secs, spans)]


def to_piano_roll(midi: MidiFile, source: str = "") -> PianoRollSequence:
    """Quantise a parsed file onto the 0.125 s grid and cut it into 16-step bars."""
    if not midi.events:
        return PianoRollSequence(np.zeros((0, N_PITCHES, STEPS_PER_BAR)), source)
    spans = note_intervals(midi)
    end_steps = int(round(float(midi.seconds(midi.end_tick)) / STEP_SECONDS))
    cells = []
    dropped = 0
    for start_s, end_s, pitch, vel in spans:
        if not LOWEST_PITCH <= pitch <= HIGHEST_PITCH:
            dropped += 1
            continue
        a = int(round(start_s / STEP_SECONDS))
        b = max(int(round(end_s / STEP_SECONDS)), a + 1)
        cells.append((pitch - LOWEST_PITCH, a, b, vel / 127.0))
        end_steps = max(end_steps, b)
    n_bars = -(-end_steps // STEPS_PER_BAR)
    roll = np.zeros((N_PITCHES, n_bars * STEPS_PER_BAR), dtype=np.float32)
    for row, a, b, v in cells:
        np.maximum(roll[row, a:b], np.float32(v), out=roll[row, a:b])
    bars = roll.reshape(N_PITCHES, n_bars, STEPS_PER_BAR).transpose(1, 0, 2)
    return PianoRollSequence(bars, source, dropped)


def midi_file_to_sequence(path) -> PianoRollSequence:
    return to_piano_roll(read_midi(path), str(path))


def make_pairs(seq: PianoRollSequence):
    """``(bars[t-1], bars[t])`` for t = 1..n."""
    return [(seq.bars[t - 1], seq.bars[t]) for t in range(1, len(seq.bars))]


def corpus_pairs(sequences) -> tuple[np.ndarray, np.ndarray]:
    """Stack the pairs of every sequence; no pair spans two sequences."""
    prev, nxt = [], []
    for seq in sequences:
        if len(seq.bars) >= 2:
            prev.append(seq.bars[:-1])
            nxt.append(seq.bars[1:])
    if not prev:
        empty = np.zeros((0, N_PITCHES, STEPS_PER_BAR), np.float32)
        return empty, empty.copy()
    return np.concatenate(prev), np.concatenate(nxt)


# ---------------------------------------------------------------------------
# export


def _note_runs(roll: np.ndarray, threshold: float):
    """Runs of contiguous cells per row sharing one quantised velocity."""
    vel = np.where(roll >= threshold, np.rint(roll.astype(np.float64) * 127), 0).astype(np.int64)
    runs = []
    for row in range(roll.shape[0]):
        line = vel[row]
        t = 0
        while t < len(line):
            v = line[t]
            if v == 0:
                t += 1
                continue
            start = t
            while t < len(line) and line[t] == v:
                t += 1
            runs.append((start, t, row + LOWEST_PITCH, int(v)))
    return runs


def roll_to_midi_bytes(seq: PianoRollSequence, threshold: float = EXPORT_THRESHOLD) -> bytes:
    """Encode as a format-0 SMF at 120 BPM with one step per sixteenth note."""
    ticks_per_step = EXPORT_TPQ * 1_000_000 * STEP_SECONDS / DEFAULT_TEMPO
    ticks_per_step = int(ticks_per_step)
    roll = seq.roll()
    events = []  # (tick, order, bytes); offs sort before ons at equal ticks
    for start, stop, pitch, vel in _note_runs(roll, threshold):
        events.append((start * ticks_per_step, 1, bytes([0x90, pitch, vel])))
        events.append((stop * ticks_per_step, 0, bytes([0x80, pitch, 0])))
    events.sort(key=lambda e: (e[0], e[1], e[2][1]))
    track = bytearray(b"\x00\xff\x51\x03" + DEFAULT_TEMPO.to_bytes(3, "big"))
    now = 0
    for tick, _, msg in events:
        track += write_vlq(tick - now) + msg
        now = tick
    end = roll.shape[1] * ticks_per_step
    track += write_vlq(end - now) + b"\xff\x2f\x00"
    header = b"MThd" + struct.pack(">IHHH", 6, 0, 1, EXPORT_TPQ)
    return header + b"MTrk" + struct.pack(">I", len(track)) + bytes(track)


def export_midi(seq: PianoRollSequence, path, threshold: float = EXPORT_THRESHOLD):
    Path(path).write_bytes(roll_to_midi_bytes(seq, threshold))


# ---------------------------------------------------------------------------
# dataset files

DATASET_MAGIC = b"SRVD"
DATASET_VERSION = 1


def dataset_to_bytes(sequences) -> bytes:
    counts = [len(s.bars) for s in sequences]
    head = DATASET_MAGIC + struct.pack("<HIII", DATASET_VERSION, N_PITCHES, STEPS_PER_BAR, len(counts))
    head += struct.pack(f"<{len(counts)}I", *counts)
    payload = b"".join(np.asarray(s.bars, dtype="<f4").tobytes() for s in sequences)
    return head + payload


def save_dataset(path, sequences):
    Path(path).write_bytes(dataset_to_bytes(sequences))


def dataset_from_bytes(buf: bytes, source: str = "") -> list[PianoRollSequence]:
    if buf[:4] != DATASET_MAGIC:
        raise FormatError("not a dataset file: bad magic")
    if len(buf) < 18:
        raise FormatError("dataset header truncated")
    version, h, w, count = struct.unpack_from("<HIII", buf, 4)
    if version != DATASET_VERSION:
        raise FormatError(f"unsupported dataset version {version}")
    if (h, w) != (N_PITCHES, STEPS_PER_BAR):
        raise FormatError(f"dataset bars are {h}x{w}, expected {N_PITCHES}x{STEPS_PER_BAR}")
    pos = 18
    if len(buf) < pos + 4 * count:
        raise FormatError("dataset index table truncated")
    counts = struct.unpack_from(f"<{count}I", buf, pos)
    pos += 4 * count
    bar_bytes = h * w * 4
    expected = pos + sum(counts) * bar_bytes
    if len(buf) != expected:
        raise FormatError(f"dataset payload is {len(buf) - pos} bytes, expected {expected - pos}")
    out = []
    for k, n in enumerate(counts):
        bars = np.frombuffer(buf, dtype="<f4", count=n * h * w, offset=pos).reshape(n, h, w)
        out.append(PianoRollSequence(bars.astype(np.float32), f"{source}#{k}"))
        pos += n * bar_bytes
    return out


def load_dataset(path) -> list[PianoRollSequence]:
    return dataset_from_bytes(Path(path).read_bytes(), str(path))


# ---------------------------------------------------------------------------
# synthetic data

MAJOR_STEPS = (0, 2, 4, 5, 7, 9, 11, 12)


def scale_pattern_bar(root: int, velocity: float = 0.8) -> np.ndarray:
    """One bar running up a major scale from MIDI ``root``, two steps per note."""
    bar = np.zeros((N_PITCHES, STEPS_PER_BAR), np.float32)
    for k, interval in enumerate(MAJOR_STEPS):
        row = root + interval - LOWEST_PITCH
        bar[row, 2 * k:2 * k + 2] = velocity
    return bar


def synthetic_scale_corpus(n_sequences: int = 8, bars_per_sequence: int = 9, base: int = 48,
                           shift: int = 2, velocity: float = 0.8) -> list[PianoRollSequence]:
    """Sequences of ascending scale bars, each bar transposed by ``shift`` from the last."""
    seqs = []
    for s in range(n_sequences):
        roots = [base + s + shift * t for t in range(bars_per_sequence)]
        bars = np.stack([scale_pattern_bar(r, velocity) for r in roots])
        seqs.append(PianoRollSequence(bars, f"synthetic-scale-{s}"))
    return seqs
