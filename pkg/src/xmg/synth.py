"""Synthetic corpora with known structure, for tests and demos.

* ``planted`` token language: pitch is drawn uniformly from every other key and
  duration is a fixed function of pitch, so the exact (n, d) joint is known.
  Time shift follows the previous pitch, velocity change follows the time
  shift and the pedal follows pitch register.
* ``cycle`` token language: a short fixed cycle of notes repeated forever.
* ``performance`` MIDI: heavy-tailed random timing and dynamics, enough
  spread to calibrate every class.
"""

from __future__ import annotations

import numpy as np

from .codec import CLASS_COUNTS, NoteToken
from .midi import DEFAULT_PPQ, DEFAULT_TEMPO, NoteEvent

# every other key, so the pitch input block is mostly populated
PLANTED_PITCHES = tuple(range(0, 88, 2))
PLANTED_DURATIONS = tuple((7 + 37 * i) % 120 for i in range(len(PLANTED_PITCHES)))  # d = f(n)
PLANTED_SHIFTS = tuple((10, 30, 50, 70, 90, 100)[i % 6]                              # t = g(prev n)
                       for i in range(len(PLANTED_PITCHES)))
PLANTED_VELOCITIES = {10: 20, 30: 23, 50: 26, 70: 20, 90: 23, 100: 26}  # v = h(t)


def planted_token(n: int, prev_n: int) -> NoteToken:
    i = PLANTED_PITCHES.index(n)
    t = PLANTED_SHIFTS[PLANTED_PITCHES.index(prev_n)]
    return NoteToken(n, t, PLANTED_DURATIONS[i], PLANTED_VELOCITIES[t], int(n >= 44))


def planted_corpus(num_sequences: int, length: int, seed=0) -> list[np.ndarray]:
    """Sequences of the planted language.

    Pitches are a shuffle of a pool holding every planted pitch equally often,
    so corpus-wide pitch counts are as uniform as the total length allows.
    """
    rng = np.random.default_rng(seed)
    pool = np.resize(np.array(PLANTED_PITCHES), num_sequences * length)
    pitches = rng.permutation(pool).reshape(num_sequences, length)
    corpus = []
    for row in pitches:
        prev = row[0]
        seq = []
        for n in row:
            seq.append(planted_token(int(n), int(prev)))
            prev = n
        corpus.append(np.array(seq, dtype=np.int64))
    return corpus


def planted_joint() -> np.ndarray:
    """Exact stationary joint of (n, d) in the planted language, ``(88, 120)``."""
    joint = np.zeros((CLASS_COUNTS[0], CLASS_COUNTS[2]))
    for n, d in zip(PLANTED_PITCHES, PLANTED_DURATIONS):
        joint[n, d] = 1.0 / len(PLANTED_PITCHES)
    return joint


def planted_duration(n: int) -> int:
    return PLANTED_DURATIONS[PLANTED_PITCHES.index(n)]


def alien_token(rng) -> NoteToken:
    """A token none of whose fields occur in the planted language."""
    def pick(count, used):
        return int(rng.choice([k for k in range(count) if k not in used]))
    return NoteToken(pick(CLASS_COUNTS[0], PLANTED_PITCHES), pick(CLASS_COUNTS[1], PLANTED_SHIFTS),
                     pick(CLASS_COUNTS[2], PLANTED_DURATIONS),
                     pick(CLASS_COUNTS[3], set(PLANTED_VELOCITIES.values())), 0)


def inject_aliens(seq, count: int, rng) -> np.ndarray:
    """Replace ``count`` random positions (never the first) with alien tokens."""
    out = np.array(seq, dtype=np.int64, copy=True)
    for i in rng.choice(np.arange(1, len(out)), size=count, replace=False):
        out[i] = alien_token(rng)
    return out


CYCLE = (
    NoteToken(39, 0, 60, 23, 0),
    NoteToken(46, 40, 30, 30, 1),
    NoteToken(43, 60, 90, 16, 1),
    NoteToken(51, 20, 45, 23, 0),
)


def cycle_corpus(num_sequences: int, length: int, cycle=CYCLE, seed=0) -> list[np.ndarray]:
    """Repeats of ``cycle``; sequence ``j`` starts at a random phase."""
    rng = np.random.default_rng(seed)
    arr = np.array(cycle, dtype=np.int64)
    corpus = []
    for _ in range(num_sequences):
        phase = int(rng.integers(len(arr)))
        idx = (phase + np.arange(length)) % len(arr)
        corpus.append(arr[idx])
    return corpus


def performance_notes(num_notes: int, seed=0, ppq: int = DEFAULT_PPQ) -> list[NoteEvent]:
    """A random "performance": log-normal time shifts and durations, a random
    walk in velocity, pedal flips now and then. Times are whole ticks at the
    default tempo so the notes survive a MIDI round trip unchanged."""
    rng = np.random.default_rng(seed)
    ms_per_tick = DEFAULT_TEMPO / (ppq * 1000.0)
    shifts = np.round(rng.lognormal(np.log(120), 1.0, num_notes) / ms_per_tick).astype(int)
    shifts[0] = 0
    chord = rng.random(num_notes) < 0.15
    shifts[chord] = rng.integers(0, 12, chord.sum())
    durations = np.maximum(1, np.round(rng.lognormal(np.log(250), 0.9, num_notes) / ms_per_tick)).astype(int)
    pitch = 60
    velocity = 64
    pedal = False
    onset = 0
    rows = []          # [pitch, onset tick, duration ticks, velocity, pedal]
    last = {}          # pitch -> index of its latest row
    for i in range(num_notes):
        onset += int(shifts[i])
        pitch = int(np.clip(pitch + rng.integers(-7, 8), 21, 108))
        velocity = int(np.clip(velocity + np.round(rng.normal(0, 8)), 1, 127))
        if rng.random() < 0.1:
            pedal = not pedal
        step = 1 if pitch < 100 else -1
        while pitch in last and rows[last[pitch]][1] == onset:
            pitch += step
        prev = rows[last[pitch]] if pitch in last else None
        if prev is not None and prev[1] + prev[2] > onset:
            prev[2] = onset - prev[1]  # same-pitch overlaps are ambiguous in MIDI
        last[pitch] = len(rows)
        rows.append([pitch, onset, int(durations[i]), velocity, pedal])
    notes = [NoteEvent(p, o * ms_per_tick, d * ms_per_tick, v, ped) for p, o, d, v, ped in rows]
    notes.sort(key=lambda n: (n.onset_ms, n.pitch))
    return notes


def cycle_notes(num_notes: int, ppq: int = DEFAULT_PPQ) -> list[NoteEvent]:
    """A performance that repeats four notes exactly, in whole ticks."""
    ms_per_tick = DEFAULT_TEMPO / (ppq * 1000.0)
    pattern = [  # (pitch, shift ticks, duration ticks, velocity, pedal)
        (60, 240, 200, 70, False),
        (67, 120, 400, 52, True),
        (64, 360, 90, 80, True),
        (72, 240, 300, 64, False),
    ]
    notes = []
    onset = 0
    for i in range(num_notes):
        pitch, shift, dur, vel, ped = pattern[i % len(pattern)]
        if i:
            onset += shift
        notes.append(NoteEvent(pitch, onset * ms_per_tick, dur * ms_per_tick, vel, ped))
    return notes
