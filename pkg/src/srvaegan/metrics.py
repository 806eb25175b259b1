"""Musical statistics of generated samples.

All per-sample metrics read a :data:`NoteEventList`: notes sorted by
``(onset, pitch)``.  Metrics that are undefined on an empty sample return
``None``.  Diversity works on per-step token sequences, where each token is
the set of pitches sounding at that step.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from rapidfuzz.distance import Levenshtein
from rapidfuzz.process import cdist

from .mididata import EXPORT_THRESHOLD, LOWEST_PITCH, STEP_SECONDS, MidiFile, note_intervals

MAJOR = (0, 2, 4, 5, 7, 9, 11)
NATURAL_MINOR = (0, 2, 3, 5, 7, 8, 10)
SCALES = {
    f"{root}-{name}": frozenset((root + i) % 12 for i in steps)
    for root in range(12)
    for name, steps in (("major", MAJOR), ("minor", NATURAL_MINOR))
}

# values reported for generated music at 300 epochs, for side-by-side display
REFERENCE = {
    "scale_consistency": "~87 (mean, %)",
    "uniqueness": "~37 (mean, %)",
    "tone_span": "10..21 (min..max semitones)",
    "recurrence": "~7 (mean)",
    "diversity": "~0.59",
}

ASSUMPTIONS = {
    "scales": "24 scales: 12 major + 12 natural minor",
    "uniqueness_denominator": "number of note events",
    "recurrence": "repeated pitch bigrams over the (onset, pitch)-ordered sequence",
    "diversity_tokens": "set of sounding pitches per 0.125 s step; distance / longer length",
    "note_threshold": EXPORT_THRESHOLD,
}


class Note(NamedTuple):
    onset: int
    pitch: int
    velocity: int
    duration: int = 1


NoteEventList = list  # list[Note], sorted by (onset, pitch)


def notes_from_roll(roll: np.ndarray, threshold: float = EXPORT_THRESHOLD) -> NoteEventList:
    """Note events of an (88, T) roll, or of (n, 88, 16) bars joined in time.

    A note is a horizontal run of cells at or above ``threshold`` sharing
    one 0..127 velocity, mirroring what MIDI export writes.
    """
    roll = np.asarray(roll)
    if roll.ndim == 3:
        roll = np.concatenate(list(roll), axis=1) if len(roll) else np.zeros((roll.shape[1], 0))
    vel = np.where(roll >= threshold, np.rint(roll.astype(np.float64) * 127), 0).astype(np.int64)
    notes = []
    for row in range(vel.shape[0]):
        line = vel[row]
        # run boundaries: positions where the velocity value changes
        change = np.flatnonzero(np.diff(line, prepend=0, append=0))
        for start, stop in zip(change[:-1], change[1:]):
            if line[start]:
                notes.append(Note(int(start), row + LOWEST_PITCH, int(line[start]), int(stop - start)))
    notes.sort()
    return notes


def notes_from_midi(midi: MidiFile) -> NoteEventList:
    notes = []
    for start_s, end_s, pitch, vel in note_intervals(midi):
        onset = int(round(start_s / STEP_SECONDS))
        stop = max(int(round(end_s / STEP_SECONDS)), onset + 1)
        notes.append(Note(onset, pitch, vel, stop - onset))
    notes.sort()
    return notes


def tokens_from_notes(notes: NoteEventList, length: int | None = None) -> list[frozenset]:
    end = max((n.onset + n.duration for n in notes), default=0)
    length = end if length is None else length
    sounding = [set() for _ in range(length)]
    for n in notes:
        for t in range(n.onset, min(n.onset + n.duration, length)):
            sounding[t].add(n.pitch)
    return [frozenset(s) for s in sounding]


# ---------------------------------------------------------------------------
# per-sample metrics


def scale_consistency(notes: NoteEventList) -> float | None:
    """Percentage of notes inside the best-fitting major/natural-minor scale."""
    if not notes:
        return None
    classes = Counter(n.pitch % 12 for n in notes)
    best = max(sum(c for pc, c in classes.items() if pc in scale) for scale in SCALES.values())
    return 100.0 * best / len(notes)


def uniqueness(notes: NoteEventList) -> float | None:
    if not notes:
        return None
    return 100.0 * len({n.pitch for n in notes}) / len(notes)


def velocity_span(notes: NoteEventList) -> int | None:
    if not notes:
        return None
    vels = [n.velocity for n in notes]
    return max(vels) - min(vels)


def recurrence(notes: NoteEventList) -> int:
    """Number of pitch bigram occurrences beyond each bigram's first."""
    pitches = [n.pitch for n in sorted(notes)]
    counts = Counter(zip(pitches, pitches[1:]))
    return sum(c - 1 for c in counts.values())


def tone_span(notes: NoteEventList) -> int | None:
    if not notes:
        return None
    pitches = [n.pitch for n in notes]
    return max(pitches) - min(pitches)


# ---------------------------------------------------------------------------
# corpus diversity


def levenshtein(a: Sequence, b: Sequence) -> int:
    """Edit distance between two sequences of hashable symbols."""
    return Levenshtein.distance(list(a), list(b))


def normalized_distance(a: Sequence, b: Sequence) -> float:
    longest = max(len(a), len(b))
    return levenshtein(a, b) / longest if longest else 0.0


def distance_matrix(queries: Sequence[Sequence], choices: Sequence[Sequence] | None = None,
                    dtype=np.int32) -> np.ndarray:
    """All pairwise edit distances, ``(len(queries), len(choices))``."""
    choices = queries if choices is None else choices
    return cdist([list(q) for q in queries], [list(c) for c in choices], scorer=Levenshtein.distance, dtype=dtype)


def diversity(token_sequences: Sequence[Sequence]) -> float | None:
    """Mean normalised edit distance over all unordered pairs."""
    if len(token_sequences) < 2:
        return None
    # map token sets to small integers so the distance kernel hashes cheaply
    symbols: dict = {}
    encoded = [[symbols.setdefault(t, len(symbols)) for t in seq] for seq in token_sequences]
    dist = distance_matrix(encoded)
    lengths = np.array([len(e) for e in encoded])
    longest = np.maximum(lengths[:, None], lengths[None, :])
    i, j = np.triu_indices(len(encoded), k=1)
    norm = np.where(longest[i, j] > 0, dist[i, j] / np.maximum(longest[i, j], 1), 0.0)
    return float(np.mean(norm))


# ---------------------------------------------------------------------------
# reports


@dataclass
class MetricsReport:
    scale_consistency: float | None
    uniqueness: float | None
    velocity_span: int | None
    recurrence: int
    tone_span: int | None
    diversity: float | None = None


def sample_metrics(notes: NoteEventList) -> MetricsReport:
    return MetricsReport(
        scale_consistency=scale_consistency(notes),
        uniqueness=uniqueness(notes),
        velocity_span=velocity_span(notes),
        recurrence=recurrence(notes),
        tone_span=tone_span(notes),
    )


_PER_SAMPLE = ("scale_consistency", "uniqueness", "velocity_span", "recurrence", "tone_span")


def evaluate(samples: Sequence[NoteEventList], tokens: Sequence[Sequence] | None = None) -> dict:
    """Per-sample metric arrays, corpus mean/min/max, and diversity when ≥ 2 samples.

    ``tokens`` defaults to :func:`tokens_from_notes` of each sample.
    """
    if not samples:
        raise ValueError("evaluation needs at least one sample")
    reports = [sample_metrics(n) for n in samples]
    per_sample = {k: [getattr(r, k) for r in reports] for k in _PER_SAMPLE}
    aggregates = {}
    for key, values in per_sample.items():
        vals = [v for v in values if v is not None]
        aggregates[key] = (
            {"mean": float(np.mean(vals)), "min": float(np.min(vals)), "max": float(np.max(vals))}
            if vals else None
        )
    report = {
        "assumptions": ASSUMPTIONS,
        "n_samples": len(samples),
        "per_sample": per_sample,
        "aggregate": aggregates,
        "reference": REFERENCE,
    }
    if len(samples) >= 2:
        tokens = tokens if tokens is not None else [tokens_from_notes(n) for n in samples]
        report["diversity"] = diversity(tokens)
    return report


def summary_lines(report: dict) -> list[str]:
    """Human-readable comparison of corpus aggregates with the reference values."""
    agg = report["aggregate"]
    lines = [f"samples: {report['n_samples']}"]
    for key in ("scale_consistency", "uniqueness", "tone_span", "recurrence", "velocity_span"):
        a = agg.get(key)
        got = "n/a" if a is None else f"mean {a['mean']:.2f} min {a['min']:.0f} max {a['max']:.0f}"
        ref = REFERENCE.get(key, "-")
        lines.append(f"{key:18s} {got:40s} reference {ref}")
    if "diversity" in report:
        lines.append(f"{'diversity':18s} {report['diversity']:<40.4f} reference {REFERENCE['diversity']}")
    return lines

