"""Perceptual quantization of note streams into five categorical fields.

Time shifts, durations and velocity changes are cut into equal-frequency
classes calibrated on a corpus. Quantile bins widen wherever the data thins
out, which for performance timing tracks Weber's law closely;
:func:`weber_diagnostic` reports where it does not.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import NamedTuple, Sequence

import numpy as np

from .midi import NoteEvent

logger = logging.getLogger(__name__)

FIELDS = ("n", "t", "d", "v", "p")
CLASS_COUNTS = (88, 105, 120, 47, 2)
LOWEST_PITCH = 21
HIGHEST_PITCH = LOWEST_PITCH + CLASS_COUNTS[0] - 1
DEFAULT_REFERENCE_VELOCITY = 64
CONFIG_VERSION = 1
WEBER_SMOOTHING = 4

_NORMAL = NormalDist()


class CalibrationError(ValueError):
    pass


class NoteToken(NamedTuple):
    n: int
    t: int
    d: int
    v: int
    p: int

    def validate(self) -> "NoteToken":
        for name, value, count in zip(FIELDS, self, CLASS_COUNTS):
            if not 0 <= value < count:
                raise ValueError(f"field {name}={value} outside [0, {count - 1}]")
        return self


@dataclass(frozen=True)
class BinSpec:
    """Interior cut points plus one representative value per class.

    Class ``k`` covers ``[boundaries[k-1], boundaries[k])``; the first and
    last classes extend to -inf/+inf.
    """

    boundaries: tuple[float, ...]
    representatives: tuple[float, ...]
    domain_kind: str = "nonnegative"

    def __post_init__(self):
        b = np.asarray(self.boundaries, dtype=float)
        if self.domain_kind not in ("nonnegative", "signed"):
            raise ValueError(f"unknown domain kind {self.domain_kind!r}")
        if len(self.representatives) != len(b) + 1:
            raise ValueError("need exactly one representative per class")
        if np.any(np.diff(b) <= 0):
            raise ValueError("boundaries must be strictly ascending")
        if self.domain_kind == "signed" and self.num_classes % 2 == 0:
            raise ValueError("signed bins need an odd class count")
        for k, rep in enumerate(self.representatives):
            lo, hi = self.class_interval(k)
            if not lo <= rep < hi:
                raise ValueError(f"representative {rep} outside class {k} [{lo}, {hi})")

    @property
    def num_classes(self) -> int:
        return len(self.boundaries) + 1

    def class_interval(self, k: int) -> tuple[float, float]:
        lo = self.boundaries[k - 1] if k > 0 else -math.inf
        hi = self.boundaries[k] if k < len(self.boundaries) else math.inf
        return lo, hi

    def class_width(self, k: int) -> float:
        lo, hi = self.class_interval(k)
        return hi - lo

    def to_dict(self) -> dict:
        return {
            "domain_kind": self.domain_kind,
            "boundaries": [float(x) for x in self.boundaries],
            "representatives": [float(x) for x in self.representatives],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BinSpec":
        return cls(tuple(d["boundaries"]), tuple(d["representatives"]), d["domain_kind"])


def _cut_indices(cumulative: np.ndarray, targets: Sequence[float]) -> np.ndarray:
    """Cut index ``i`` separates distinct value ``i`` from ``i + 1``.

    Each cut lands where the cumulative count is closest to its target,
    subject to every class keeping at least one distinct value.
    """
    ncuts = len(targets)
    last = len(cumulative) - 2
    out = np.empty(ncuts, dtype=np.int64)
    prev = -1
    for j, target in enumerate(targets):
        lo, hi = prev + 1, last - (ncuts - 1 - j)
        i = int(np.searchsorted(cumulative, target))
        candidates = [c for c in (i - 1, i) if lo <= c <= hi]
        if candidates:
            i = min(candidates, key=lambda c: abs(cumulative[c] - target))
        else:
            i = min(max(i, lo), hi)
        out[j] = prev = i
    return out


def _local_quadratic(x: np.ndarray, y: np.ndarray, half_window: int) -> np.ndarray:
    n = len(y)
    width = min(2 * half_window + 1, n)
    out = np.empty(n)
    for j in range(n):
        start = min(max(j - width // 2, 0), n - width)
        xs, ys = x[start:start + width], y[start:start + width]
        coef = np.polyfit(xs - x[j], ys, 2)
        out[j] = coef[-1]
    return out


def _cut_points(values: np.ndarray, targets: Sequence[float], smoothing: int) -> list[float]:
    """Equal-frequency cuts for sorted ``values``, halfway between distinct values.

    With ``smoothing > 0`` the cuts are regularized on the perceptual scale:
    log cut value is fit by a local quadratic in the normal score of its
    target rank over ``2 * smoothing + 1`` neighbouring cuts, then snapped
    back to the nearest midpoint. Sampling noise in the class widths goes
    away; log-normal data is left where it was.
    """
    distinct, counts = np.unique(values, return_counts=True)
    cumulative = np.cumsum(counts)
    idx = _cut_indices(cumulative, targets)
    midpoints = 0.5 * (distinct[:-1] + distinct[1:])
    if smoothing > 0 and len(idx) >= 4 and midpoints[0] > 0:
        total = float(cumulative[-1])
        scores = np.array([_NORMAL.inv_cdf(t / total) for t in targets])
        smooth = np.exp(_local_quadratic(scores, np.log(midpoints[idx]), smoothing))
        snapped = np.clip(np.searchsorted(midpoints, smooth), 1, len(midpoints) - 1)
        left_closer = np.abs(midpoints[snapped - 1] - smooth) <= np.abs(midpoints[snapped] - smooth)
        snapped = np.where(left_closer, snapped - 1, snapped)
        ncuts = len(idx)
        feasible = (np.all(np.diff(snapped) > 0) and snapped[0] >= 0
                    and snapped[-1] <= len(midpoints) - 1)
        if feasible and ncuts:
            idx = snapped
    return [float(m) for m in midpoints[idx]]


def _medians(values: np.ndarray, boundaries: Sequence[float]) -> list[float]:
    classes = np.searchsorted(boundaries, values, side="right")
    return [float(np.median(values[classes == k])) for k in range(len(boundaries) + 1)]


def calibrate(values, class_count: int, domain_kind: str = "nonnegative",
              name: str = "values", smoothing: int = 0) -> BinSpec:
    """Equal-frequency bins over ``values``, represented by per-class medians.

    For a signed domain the cuts are computed on ``|values|`` and mirrored
    around a zero class, and the cut targets give the zero class one share
    of the data and each magnitude class two (one per sign).
    """
    if class_count < 2:
        raise CalibrationError(f"{name}: need at least 2 classes, got {class_count}")
    x = np.sort(np.asarray(values, dtype=float).ravel())
    if x.size == 0:
        raise CalibrationError(f"{name}: no values to calibrate on")
    if not np.all(np.isfinite(x)):
        raise CalibrationError(f"{name}: non-finite values")

    if domain_kind == "nonnegative":
        if x[0] < 0:
            raise CalibrationError(f"{name}: negative value in a nonnegative field")
        n_distinct = len(np.unique(x))
        if n_distinct < class_count:
            raise CalibrationError(
                f"{name}: {n_distinct} distinct values for {class_count} classes")
        targets = [j * x.size / class_count for j in range(1, class_count)]
        bounds = _cut_points(x, targets, smoothing)
        return BinSpec(tuple(bounds), tuple(_medians(x, bounds)), "nonnegative")

    if domain_kind != "signed":
        raise CalibrationError(f"{name}: unknown domain kind {domain_kind!r}")
    if class_count % 2 == 0:
        raise CalibrationError(f"{name}: signed fields need an odd class count")
    half = (class_count - 1) // 2
    mags = np.sort(np.abs(x))
    n_distinct = len(np.unique(mags))
    if n_distinct < half + 1:
        raise CalibrationError(
            f"{name}: {n_distinct} distinct magnitudes for {half + 1} magnitude classes")
    share = mags.size / class_count
    targets = [share + 2 * share * j for j in range(half)]
    cuts = _cut_points(mags, targets, smoothing)
    reps = _medians(mags, cuts)[1:]
    bounds = [-c for c in reversed(cuts)] + list(cuts)
    representatives = [-r for r in reversed(reps)] + [0.0] + reps
    return BinSpec(tuple(bounds), tuple(representatives), "signed")


def weber_diagnostic(spec: BinSpec) -> list[tuple[int, float]]:
    """Classes narrower than their lower-magnitude neighbour.

    Only bounded classes take part. For signed specs the positive side is
    walked outwards from the zero class, whose half-width opens the series.
    Each violation is ``(class index, width / previous width)``.
    """
    b = spec.boundaries
    if spec.domain_kind == "signed":
        zero = spec.num_classes // 2
        widths = [(zero, b[zero])]  # zero class half-width, from 0 to its upper edge
        widths += [(k, b[k] - b[k - 1]) for k in range(zero + 1, spec.num_classes - 1)]
    else:
        widths = [(k, b[k] - b[k - 1]) for k in range(1, spec.num_classes - 1)]
    violations = []
    for (_, prev), (k, width) in zip(widths, widths[1:]):
        if width < prev:
            violations.append((k, width / prev))
    return violations


def quantize(value: float, spec: BinSpec) -> int:
    if math.isnan(value):
        raise ValueError("cannot quantize NaN")
    return int(np.searchsorted(spec.boundaries, value, side="right"))


def quantize_array(values, spec: BinSpec) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if np.isnan(values).any():
        raise ValueError("cannot quantize NaN")
    return np.searchsorted(spec.boundaries, values, side="right")


def dequantize(k: int, spec: BinSpec) -> float:
    if not 0 <= k < spec.num_classes:
        raise IndexError(f"class {k} outside [0, {spec.num_classes - 1}]")
    return spec.representatives[k]


@dataclass(frozen=True)
class CodecConfig:
    time_shift_bins: BinSpec
    duration_bins: BinSpec
    velocity_change_bins: BinSpec
    reference_velocity: int = DEFAULT_REFERENCE_VELOCITY

    def __post_init__(self):
        got = (self.time_shift_bins.num_classes, self.duration_bins.num_classes,
               self.velocity_change_bins.num_classes)
        if got != CLASS_COUNTS[1:4]:
            raise ValueError(f"class counts {got} != {CLASS_COUNTS[1:4]}")
        if self.velocity_change_bins.domain_kind != "signed":
            raise ValueError("velocity change bins must be signed")
        if not 1 <= self.reference_velocity <= 127:
            raise ValueError("reference velocity outside [1, 127]")

    def to_json(self) -> str:
        doc = {
            "format": "xmg-codec",
            "version": CONFIG_VERSION,
            "reference_velocity": self.reference_velocity,
            "time_shift": self.time_shift_bins.to_dict(),
            "duration": self.duration_bins.to_dict(),
            "velocity_change": self.velocity_change_bins.to_dict(),
        }
        return json.dumps(doc, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "CodecConfig":
        doc = json.loads(text)
        if doc.get("format") != "xmg-codec" or doc.get("version") != CONFIG_VERSION:
            raise ValueError("not a version-1 codec config")
        return cls(BinSpec.from_dict(doc["time_shift"]), BinSpec.from_dict(doc["duration"]),
                   BinSpec.from_dict(doc["velocity_change"]), int(doc["reference_velocity"]))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "CodecConfig":
        with open(path) as fh:
            return cls.from_json(fh.read())


def extract_features(notes: Sequence[NoteEvent],
                     reference_velocity: int = DEFAULT_REFERENCE_VELOCITY):
    """Time shifts, durations and velocity changes exactly as :func:`encode` sees them."""
    onsets = np.array([n.onset_ms for n in notes], dtype=float)
    velocities = np.array([n.velocity for n in notes], dtype=float)
    shifts = np.diff(onsets, prepend=onsets[:1]) if len(notes) else onsets
    durations = np.array([n.duration_ms for n in notes], dtype=float)
    changes = np.diff(velocities, prepend=float(reference_velocity))
    return shifts, durations, changes


def calibrate_config(notes_per_piece: Sequence[Sequence[NoteEvent]],
                     reference_velocity: int = DEFAULT_REFERENCE_VELOCITY,
                     smoothing: int = WEBER_SMOOTHING) -> CodecConfig:
    """Calibrate all three continuous fields on a corpus of pieces.

    Unlike :func:`calibrate`, cut smoothing is on by default here: corpus
    timings are heavy tailed and raw quantile widths are too noisy to grow
    monotonically.
    """
    shifts, durations, changes = [], [], []
    for notes in notes_per_piece:
        s, d, c = extract_features(sort_notes(notes), reference_velocity)
        shifts.append(s)
        durations.append(d)
        changes.append(c)
    if not shifts:
        raise CalibrationError("no pieces to calibrate on")
    return CodecConfig(
        calibrate(np.concatenate(shifts), CLASS_COUNTS[1], "nonnegative", "time shift", smoothing),
        calibrate(np.concatenate(durations), CLASS_COUNTS[2], "nonnegative", "duration", smoothing),
        calibrate(np.concatenate(changes), CLASS_COUNTS[3], "signed", "velocity change", smoothing),
        reference_velocity,
    )


def sort_notes(notes: Sequence[NoteEvent]) -> list[NoteEvent]:
    return sorted(notes, key=lambda n: (n.onset_ms, n.pitch))


def encode(notes: Sequence[NoteEvent], config: CodecConfig) -> list[NoteToken]:
    """Tokenize notes in onset order.

    Use :func:`sort_notes` for the canonical ``(onset_ms, pitch)`` order.
    Notes sharing an onset are taken as given, so the output of
    :func:`decode` always encodes back to its tokens. The first note's time
    shift is zero and its velocity change is taken against
    ``config.reference_velocity``. Pitches outside the piano range are
    clamped and counted in a log warning.
    """
    for a, b in zip(notes, notes[1:]):
        if b.onset_ms < a.onset_ms:
            raise ValueError("notes must be sorted by onset")
    shifts, durations, changes = extract_features(notes, config.reference_velocity)
    t = quantize_array(shifts, config.time_shift_bins)
    d = quantize_array(durations, config.duration_bins)
    v = quantize_array(changes, config.velocity_change_bins)
    tokens = []
    clamped = 0
    for i, note in enumerate(notes):
        n = note.pitch - LOWEST_PITCH
        if not 0 <= n < CLASS_COUNTS[0]:
            clamped += 1
            n = min(max(n, 0), CLASS_COUNTS[0] - 1)
        tokens.append(NoteToken(n, int(t[i]), int(d[i]), int(v[i]), int(note.pedal_on)))
    if clamped:
        logger.warning("clamped %d pitch(es) outside [%d, %d]", clamped, LOWEST_PITCH, HIGHEST_PITCH)
    return tokens


def decode(tokens: Sequence[NoteToken], config: CodecConfig) -> list[NoteEvent]:
    notes = []
    onset = 0.0
    velocity = config.reference_velocity
    for i, tok in enumerate(tokens):
        n, t, d, v, p = NoteToken(*tok).validate()
        if i > 0:
            onset += dequantize(t, config.time_shift_bins)
        velocity = min(127, max(1, int(round(velocity + dequantize(v, config.velocity_change_bins)))))
        duration = dequantize(d, config.duration_bins)
        notes.append(NoteEvent(n + LOWEST_PITCH, onset, duration, velocity, bool(p)))
    return notes


def tokens_to_array(tokens: Sequence[NoteToken]) -> np.ndarray:
    return np.asarray(tokens, dtype=np.int64).reshape(-1, len(FIELDS))


def array_to_tokens(arr) -> list[NoteToken]:
    return [NoteToken(*(int(x) for x in row)).validate() for row in np.asarray(arr)]


def write_tokens_csv(path, tokens: Sequence[NoteToken]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(FIELDS)
        writer.writerows(tuple(int(x) for x in tok) for tok in tokens)


def read_tokens_csv(path) -> list[NoteToken]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != FIELDS:
            raise ValueError(f"{path}: expected header {','.join(FIELDS)}")
        return [NoteToken(*(int(x) for x in row)).validate() for row in reader if row]
