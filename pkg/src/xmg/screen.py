"""Entropy-sequence statistics and post-generation screening.

A generation that wandered off the learned data (for example after sampling
a value the model never saw) tends to leave the model uncertain for a while,
which shows up as high output entropy. Candidates are ranked by their mean
entropy, nudged toward the entropy behaviour of real data.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .codec import FIELDS
from .model import entropy_nats, teacher_forced_entropies

STAT_NAMES = ("mean", "variance", "moving_avg_variance")
DEFAULT_WINDOW = 16
DEFAULT_LAMBDA = 0.5
STD_FLOOR = 1e-9


def entropy(dist) -> float:
    """Shannon entropy in nats, with 0 ln 0 = 0."""
    p = np.asarray(dist, dtype=float)
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("not a probability vector")
    return float(entropy_nats(p))


@dataclass(frozen=True)
class EntropyStats:
    mean: float
    variance: float
    moving_avg_variance: float
    window: int

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.mean, self.variance, self.moving_avg_variance)


def moving_average(seq, window: int) -> np.ndarray:
    """Trailing means ``a_i`` over entries ``i-W+1..i`` for ``i >= W-1``."""
    x = np.asarray(seq, dtype=float)
    c = np.concatenate([[0.0], np.cumsum(x)])
    return (c[window:] - c[:-window]) / window


def stats(seq, window: int = DEFAULT_WINDOW) -> EntropyStats:
    x = np.asarray(seq, dtype=float)
    if window < 1:
        raise ValueError("window must be at least 1")
    if len(x) < window:
        raise ValueError(f"sequence of length {len(x)} is shorter than the window {window}")
    a = moving_average(x, window)
    return EntropyStats(float(x.mean()), float(x.var()), float(a.var()), window)


@dataclass(frozen=True)
class ScreeningConfig:
    regulation: float = DEFAULT_LAMBDA   # lambda
    window: int = DEFAULT_WINDOW         # W
    aesthetic_weight: float = 1.0        # kappa

    def __post_init__(self):
        if self.regulation < 0 or self.aesthetic_weight < 0:
            raise ValueError("regulation and aesthetic weight must be non-negative")
        if self.window < 1:
            raise ValueError("window must be at least 1")


@dataclass
class GroundTruthStats:
    """Per submodel: mean and sample std of (mean, variance, mavar) over a corpus.

    Both arrays are ``(5, 3)``.
    """

    mean: np.ndarray
    std: np.ndarray
    window: int
    per_sequence: np.ndarray | None = None  # (S, 5, 3), kept for plotting


def stats_matrix(entropies, window: int) -> np.ndarray:
    """``(5, 3)`` statistics of a five-row entropy array."""
    return np.array([stats(row, window).as_tuple() for row in np.asarray(entropies)])


def ground_truth_stats(models, corpus: Sequence, window: int = DEFAULT_WINDOW) -> GroundTruthStats:
    if len(corpus) < 2:
        raise ValueError("ground-truth statistics need at least 2 sequences")
    per_seq = np.array([stats_matrix(teacher_forced_entropies(models, seq), window)
                        for seq in corpus])
    return GroundTruthStats(per_seq.mean(axis=0), per_seq.std(axis=0, ddof=1), window, per_seq)


@dataclass
class ScoredCandidate:
    index: int
    stats: np.ndarray   # (5, 3)
    base: float
    distance: float
    score: float


def score_candidates(candidate_stats: Sequence[np.ndarray], gt: GroundTruthStats | None,
                     regulation: float = DEFAULT_LAMBDA) -> list[ScoredCandidate]:
    """Score from precomputed ``(5, 3)`` statistics.

    ``base`` is the mean over submodels of the entropy means, ``distance``
    the mean absolute z-distance of all fifteen statistics from the ground
    truth, and ``score = base + regulation * distance``.
    """
    out = []
    for j, st in enumerate(candidate_stats):
        st = np.asarray(st, dtype=float)
        base = float(st[:, 0].mean())
        if gt is None:
            dist = 0.0
        else:
            dist = float((np.abs(st - gt.mean) / np.maximum(gt.std, STD_FLOOR)).mean())
        out.append(ScoredCandidate(j, st, base, dist, base + regulation * dist))
    return out


def rank_and_select(candidates: Sequence, gt: GroundTruthStats | None,
                    cfg: ScreeningConfig = ScreeningConfig()):
    """Pick the candidate with the lowest regulated score.

    ``candidates`` holds one ``(5, N)`` entropy array per generation. Returns
    ``(winner index, scored table)``; ties go to the lower index, and with
    ``cfg.regulation == 0`` this is plain ascending-mean selection.
    """
    if len(candidates) < 1:
        raise ValueError("no candidates to rank")
    table = score_candidates([stats_matrix(c, cfg.window) for c in candidates], gt,
                             cfg.regulation)
    winner = min(table, key=lambda row: (row.score, row.index)).index
    return winner, table


def aesthetic_score(st: EntropyStats, kappa: float = 1.0) -> float:
    """``variance - kappa * mean``: reward fluctuation, penalize overall uncertainty.

    A concrete reading of "low mean, lively variance" for an entropy
    sequence. It is a report, not a validated perceptual measure, and does
    not take part in selection.
    """
    return st.variance - kappa * st.mean


def aesthetic_scores(entropies, window: int, kappa: float = 1.0) -> tuple[list[float], float]:
    per_model = [aesthetic_score(stats(row, window), kappa) for row in np.asarray(entropies)]
    return per_model, float(np.mean(per_model))


def write_scored_table(path, table: Sequence[ScoredCandidate]) -> None:
    header = ["candidate"]
    for f in FIELDS:
        header += [f"{f}_mean", f"{f}_var", f"{f}_mavar"]
    header += ["base", "D", "S"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in table:
            w.writerow([row.index, *(f"{x:.6g}" for x in row.stats.ravel()),
                        f"{row.base:.6g}", f"{row.distance:.6g}", f"{row.score:.6g}"])
