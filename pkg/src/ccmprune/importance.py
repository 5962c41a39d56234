"""Channel importance scores.

``chip_scores`` rates a channel by how much the nuclear norm of the layer's
channel matrix drops when that channel's row is zeroed. ``l1_weight_scores``
is the classic filter-magnitude criterion, kept as a reference.
"""

import csv
from dataclasses import dataclass

import numpy as np

from ._validation import check_channel_matrix, check_finite
from .tensor import nuclear_norm

__all__ = [
    "ImportanceList",
    "chip_scores",
    "average_scores",
    "l1_weight_scores",
    "gini",
    "write_importance_csv",
    "read_importance_csv",
]

NEGATIVE_TOL = 1e-9


@dataclass(frozen=True)
class ImportanceList:
    layer: int
    scores: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        if scores.size < 1:
            raise ValueError("an importance list needs at least one channel")
        object.__setattr__(self, "scores", scores)

    def __len__(self):
        return self.scores.size


def chip_scores(c, layer=0):
    """Nuclear-norm drop for each row of ``c`` when that row alone is zeroed.

    Round-off can push a score a hair below zero; those are clamped to 0.
    """
    c = check_channel_matrix(c)
    full = nuclear_norm(c)
    scores = np.empty(c.shape[0])
    for k in range(c.shape[0]):
        masked = c.copy()
        masked[k] = 0.0
        scores[k] = full - nuclear_norm(masked)
    return ImportanceList(layer, np.maximum(scores, 0.0))


def average_scores(batches):
    batches = list(batches)
    if not batches:
        raise ValueError("need at least one importance list to average")
    layer = batches[0].layer
    n = len(batches[0])
    for item in batches[1:]:
        if item.layer != layer or len(item) != n:
            raise ValueError("importance lists disagree on layer or channel count")
    total = np.zeros(n)
    for item in batches:
        total = total + item.scores
    return ImportanceList(layer, total / len(batches))


def l1_weight_scores(weights, layer=0):
    """Sum of absolute kernel weights per output filter; ``weights`` is ``(out, ...)``."""
    w = check_finite(weights, name="filter weights")
    if w.ndim < 1 or w.shape[0] < 1:
        raise ValueError("need at least one filter")
    return ImportanceList(layer, np.abs(w.reshape(w.shape[0], -1)).sum(axis=1))


def gini(scores):
    """Gini coefficient of a nonnegative score vector (0 = uniform, -> 1 = one channel holds it all)."""
    x = np.asarray(getattr(scores, "scores", scores), dtype=np.float64).reshape(-1)
    n = x.size
    total = x.sum()
    if n == 0 or total <= 0.0:
        return 0.0
    x = np.sort(x)
    ranks = np.arange(1, n + 1)
    return float((2.0 * np.sum(ranks * x) / (n * total)) - (n + 1.0) / n)


def write_importance_csv(path, items):
    """One row per channel: ``layer,channel,score``."""
    if isinstance(items, ImportanceList):
        items = [items]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["layer", "channel", "score"])
        for item in items:
            for k, s in enumerate(item.scores):
                writer.writerow([item.layer, k, f"{s:.17g}"])


def read_importance_csv(path):
    rows = {}
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.setdefault(int(rec["layer"]), []).append((int(rec["channel"]), float(rec["score"])))
    out = []
    for layer in sorted(rows):
        entries = sorted(rows[layer])
        if [k for k, _ in entries] != list(range(len(entries))):
            raise ValueError(f"{path}: channel indices of layer {layer} are not 0..n-1")
        out.append(ImportanceList(layer, np.array([s for _, s in entries])))
    return out
