import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from srvaegan import metrics
from srvaegan.metrics import Note
from srvaegan.mididata import PianoRollSequence, parse_midi, roll_to_midi_bytes


def notes(pitches, velocities=None):
    velocities = velocities or [100] * len(pitches)
    return sorted(Note(t, p, v) for t, (p, v) in enumerate(zip(pitches, velocities)))


def dp_levenshtein(a, b):
    """Textbook quadratic edit-distance table."""
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def brute_scale_consistency(ns):
    """Best fraction over the 24 scales, enumerated from interval patterns."""
    major = [0, 2, 4, 5, 7, 9, 11]
    minor = [0, 2, 3, 5, 7, 8, 10]
    best = 0
    for root in range(12):
        for steps in (major, minor):
            members = {(root + s) % 12 for s in steps}
            best = max(best, sum(1 for n in ns if n.pitch % 12 in members))
    return 100 * best / len(ns)


# -- scale consistency ------------------------------------------------------------


def test_scale_table():
    assert len(metrics.SCALES) == 24
    assert all(len(s) == 7 for s in metrics.SCALES.values())
    assert metrics.SCALES["0-major"] == frozenset({0, 2, 4, 5, 7, 9, 11})
    assert metrics.SCALES["9-minor"] == metrics.SCALES["0-major"]


def test_scale_consistency_examples():
    assert metrics.scale_consistency(notes([60, 62, 64, 65, 67, 69, 71, 72])) == 100.0
    chromatic = notes(list(range(60, 72)))
    assert metrics.scale_consistency(chromatic) == pytest.approx(58.33, abs=0.01)
    assert metrics.scale_consistency(chromatic) == pytest.approx(brute_scale_consistency(chromatic))
    assert metrics.scale_consistency([]) is None


def test_scale_consistency_transposition_invariant():
    rng = np.random.default_rng(0)
    for _ in range(100):
        pitches = rng.integers(33, 96, size=int(rng.integers(1, 30)))
        base = metrics.scale_consistency(notes(list(pitches)))
        assert base == pytest.approx(brute_scale_consistency(notes(list(pitches))))
        for shift in range(12):
            assert metrics.scale_consistency(notes(list(pitches + shift))) == base


# -- simple counts -------------------------------------------------------------------


def test_uniqueness_examples():
    assert metrics.uniqueness(notes([60, 61, 62])) == 100.0
    assert metrics.uniqueness(notes([60, 60, 62, 64])) == 75.0
    assert metrics.uniqueness([]) is None


def test_velocity_span_examples():
    assert metrics.velocity_span(notes([60, 62], [80, 80])) == 0
    assert metrics.velocity_span(notes([60, 62], [32, 100])) == 68
    assert metrics.velocity_span([]) is None


def test_recurrence_examples():
    assert metrics.recurrence(notes([60, 62, 60, 62, 60])) == 2
    assert metrics.recurrence(notes([60, 60, 60])) == 1
    assert metrics.recurrence(notes([60])) == 0
    assert metrics.recurrence([]) == 0


def test_tone_span_examples():
    assert metrics.tone_span(notes([64, 64, 64])) == 0
    assert metrics.tone_span(notes([60, 81])) == 21
    assert metrics.tone_span([]) is None


@settings(max_examples=100, deadline=None)
@given(ps=st.lists(st.tuples(st.integers(21, 108), st.integers(1, 127)), min_size=1, max_size=40))
def test_metric_ranges(ps):
    ns = notes([p for p, _ in ps], [v for _, v in ps])
    r = metrics.sample_metrics(ns)
    assert 0 <= r.scale_consistency <= 100 and 0 < r.uniqueness <= 100
    assert 0 <= r.tone_span <= 87 and 0 <= r.velocity_span <= 126
    assert r.recurrence >= 0


# -- note extraction --------------------------------------------------------------------


def test_notes_from_roll_merges_runs():
    roll = np.zeros((88, 16), np.float32)
    roll[39, 2:6] = 100 / 127
    roll[39, 6:8] = 50 / 127  # velocity change starts a new note
    roll[0, 15] = 0.01  # below threshold
    got = metrics.notes_from_roll(roll)
    assert got == [Note(2, 60, 100, 4), Note(6, 60, 50, 2)]


def test_notes_from_bars_and_midi_agree():
    rng = np.random.default_rng(3)
    bars = np.where(rng.random((2, 88, 16)) < 0.05, rng.random((2, 88, 16)), 0).astype(np.float32)
    from_roll = metrics.notes_from_roll(bars)
    from_midi = metrics.notes_from_midi(parse_midi(roll_to_midi_bytes(PianoRollSequence(bars))))
    assert from_roll == from_midi


def test_tokens_are_sounding_pitch_sets():
    toks = metrics.tokens_from_notes([Note(0, 60, 90, 2), Note(1, 64, 90, 1)], length=4)
    assert toks == [frozenset({60}), frozenset({60, 64}), frozenset(), frozenset()]


# -- Levenshtein and diversity -------------------------------------------------------------


def _dp_rows(codes, lengths, alphabet):
    """Yield ``(a, distances from a to every candidate)`` for every string ``a`` up to the candidates' max length.

    Walks the prefix tree of ``a`` so each DP row is computed once from its
    parent's row, for all (padded) candidates at the same time.  Padding only
    touches columns past a candidate's length, which are never read.
    """
    n, m = codes.shape
    take = np.arange(n)

    def walk(prefix, prev):
        yield prefix, prev[take, lengths]
        if len(prefix) == m:
            return
        for x in alphabet:
            cur = np.empty_like(prev)
            cur[:, 0] = len(prefix) + 1
            best = np.minimum(prev[:, :-1] + (codes != x), prev[:, 1:] + 1)
            for j in range(1, m + 1):
                cur[:, j] = np.minimum(best[:, j - 1], cur[:, j - 1] + 1)
            yield from walk(prefix + (x,), cur)

    yield from walk((), np.tile(np.arange(m + 1), (n, 1)))


def test_levenshtein_exhaustive_against_dp():
    strings = [s for n in range(9) for s in itertools.product(range(3), repeat=n)]
    assert len(strings) == 9841
    index = {s: k for k, s in enumerate(strings)}
    lengths = np.array([len(s) for s in strings])
    codes = np.full((len(strings), 8), -1)
    for k, s in enumerate(strings):
        codes[k, :len(s)] = s
    got = metrics.distance_matrix(strings, dtype=np.int8)
    seen = 0
    for a, expected in _dp_rows(codes, lengths, range(3)):
        assert np.array_equal(got[index[a]], expected), a
        seen += 1
    assert seen == len(strings)
    # the scalar entry point agrees with the plain table on a sample
    rng = np.random.default_rng(0)
    for i, j in rng.integers(0, len(strings), size=(2000, 2)):
        assert metrics.levenshtein(strings[i], strings[j]) == dp_levenshtein(strings[i], strings[j])


@settings(max_examples=300, deadline=None)
@given(a=st.text("abc", max_size=8), b=st.text("abc", max_size=8))
def test_levenshtein_property(a, b):
    assert metrics.levenshtein(a, b) == dp_levenshtein(a, b)


def test_levenshtein_on_token_sets():
    x, y = frozenset({60}), frozenset({60, 64})
    assert metrics.levenshtein([x, y], [x, x]) == 1


def test_diversity_examples():
    s = [frozenset({60}), frozenset({62})]
    assert metrics.diversity([s, s]) == 0.0
    assert metrics.diversity([list("ab"), list("cd")]) == 1.0
    assert metrics.diversity([s]) is None
    d = metrics.diversity([list("abcd"), list("abce"), list("wxyz")])
    assert d == pytest.approx((0.25 + 1 + 1) / 3)


# -- reports ---------------------------------------------------------------------------------


def test_evaluate_report_structure():
    c_major = notes([60, 62, 64, 65, 67, 69, 71, 72], [60, 70, 80, 90, 100, 90, 80, 70])
    report = metrics.evaluate([c_major])
    assert "diversity" not in report
    assert report["per_sample"]["scale_consistency"] == [100.0]
    assert report["per_sample"]["uniqueness"] == [100.0]
    assert report["per_sample"]["tone_span"] == [12]
    assert report["per_sample"]["velocity_span"] == [40]
    assert report["per_sample"]["recurrence"] == [0]
    assert report["assumptions"]["scales"].startswith("24")
    two = metrics.evaluate([c_major, c_major])
    assert two["diversity"] == 0.0
    assert two["aggregate"]["tone_span"] == {"mean": 12.0, "min": 12.0, "max": 12.0}
    lines = metrics.summary_lines(two)
    assert any(l.startswith("diversity") for l in lines)


def test_evaluate_handles_empty_samples():
    report = metrics.evaluate([[], notes([60, 64])])
    assert report["per_sample"]["scale_consistency"][0] is None
    assert report["aggregate"]["scale_consistency"]["mean"] == 100.0
    with pytest.raises(ValueError):
        metrics.evaluate([])
