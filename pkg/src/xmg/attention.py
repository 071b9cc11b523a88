"""Per-field attention scores read off trained first-layer input weights.

For submodel ``m`` and input field group ``g`` the raw score is the mean
absolute value of the layer-1 input weights (all four gates) in ``g``'s
one-hot column block. Using the mean keeps wide fields (120 duration
classes) from outscoring narrow ones (2 pedal states) by size alone. Each
submodel's column is normalized to sum to one. This is a weight-magnitude
summary, not a learned attention mechanism.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .codec import FIELDS
from .model import NUM_FIELDS, FieldLayout, ModelParams


@dataclass
class AttentionMatrix:
    values: np.ndarray  # (9, 5): field groups x submodels
    rows: tuple[str, ...] = FieldLayout.row_names
    columns: tuple[str, ...] = FIELDS

    def column(self, m: int) -> np.ndarray:
        return self.values[:, m]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["field", *self.columns])
            for name, row in zip(self.rows, self.values):
                w.writerow([name, *(f"{x:.6f}" for x in row)])


def raw_scores(params: ModelParams) -> np.ndarray:
    W = params.layers[0][0]
    if W.shape[1] != FieldLayout.input_dim(params.submodel):
        raise ValueError(f"submodel {params.submodel}: input width {W.shape[1]} does not "
                         f"match its layout")
    out = np.zeros(len(FieldLayout.row_names))
    for row, cols in FieldLayout.blocks(params.submodel):
        out[row] = np.abs(W[:, cols]).mean()
    return out


def attention_scores(models: Sequence[ModelParams]) -> AttentionMatrix:
    if [p.submodel for p in models] != list(range(NUM_FIELDS)):
        raise ValueError("need the five submodels in field order")
    values = np.zeros((len(FieldLayout.row_names), NUM_FIELDS))
    for m, params in enumerate(models):
        raw = raw_scores(params)
        total = raw.sum()
        values[:, m] = raw / total if total > 0 else 0.0
    return AttentionMatrix(values)


def self_reference_report(att: AttentionMatrix) -> list[dict]:
    """How much each submodel weighs the previous value of its own field.

    ``ratio`` compares that row to the mean over the rows the submodel
    actually has.
    """
    out = []
    for m, name in enumerate(FIELDS):
        present = NUM_FIELDS + m
        col = att.values[:present, m]
        own = float(att.values[m, m])
        mean = float(col.mean())
        out.append({"submodel": name, "own": own, "column_mean": mean,
                    "ratio": own / mean if mean > 0 else float("nan")})
    return out
