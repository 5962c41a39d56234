"""Which channels to keep: PCRR cumulative-importance selection, a fixed-ratio
baseline, and assembly of a whole-network pruning plan."""

import json
import math
from dataclasses import dataclass

import numpy as np

from ._validation import check_alpha
from .exceptions import ConfigError, DegenerateInputError, StructuralError

__all__ = [
    "RetainSet",
    "PruningPlan",
    "ranked_order",
    "pcrr_select",
    "fixed_ratio_select",
    "build_plan",
    "identity_plan",
]


@dataclass(frozen=True)
class RetainSet:
    layer: int
    indices: tuple
    original_width: int

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        object.__setattr__(self, "indices", idx)
        if not 1 <= len(idx) <= self.original_width:
            raise StructuralError(f"layer {self.layer}: retain count {len(idx)} outside 1..{self.original_width}")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise StructuralError(f"layer {self.layer}: retained indices must be strictly increasing")
        if idx[0] < 0 or idx[-1] >= self.original_width:
            raise StructuralError(f"layer {self.layer}: retained index outside 0..{self.original_width - 1}")

    @property
    def k(self):
        return len(self.indices)


def _scores(scores):
    return np.asarray(getattr(scores, "scores", scores), dtype=np.float64).reshape(-1)


def ranked_order(scores):
    """Channel indices by descending score; equal scores keep ascending index order."""
    s = _scores(scores)
    return np.argsort(-s, kind="stable")


def pcrr_select(scores, alpha, layer=None):
    """Keep the fewest top-scoring channels whose share of the total score reaches ``alpha``.

    With scores sorted descending, ``k`` is the smallest count such that
    ``sum(top k) / sum(all) >= alpha``; the top ``k - 1`` then fall strictly
    short of ``alpha``. Returns the kept original indices in ascending order.
    """
    alpha = check_alpha(alpha)
    s = _scores(scores)
    if layer is None:
        layer = getattr(scores, "layer", 0)
    if np.any(s < 0) or not np.all(np.isfinite(s)):
        raise DegenerateInputError(f"layer {layer}: scores must be finite and nonnegative")
    total = math.fsum(s)
    if total <= 0.0:
        raise DegenerateInputError(f"layer {layer}: all channel scores are zero, retained fraction undefined")
    order = ranked_order(s)
    ranked = s[order].tolist()
    # correctly rounded prefix sums: a running cumsum can land an ulp under
    # alpha exactly at a boundary and keep one channel too many
    k = s.size
    for i in range(s.size):
        if math.fsum(ranked[:i + 1]) / total >= alpha:
            k = i + 1
            break
    return RetainSet(layer, tuple(sorted(order[:k].tolist())), s.size)


def fixed_ratio_select(scores, ratio, layer=None):
    """Keep the ``ceil(ratio * n)`` highest-scoring channels."""
    ratio = float(ratio)
    if not 0.0 < ratio <= 1.0:
        raise ConfigError(f"ratio must lie in (0, 1], got {ratio}")
    s = _scores(scores)
    if layer is None:
        layer = getattr(scores, "layer", 0)
    # round first so that e.g. 0.7 * 10 counts as 7, not 8
    k = max(1, math.ceil(round(ratio * s.size, 9)))
    return RetainSet(layer, tuple(sorted(ranked_order(s)[:k].tolist())), s.size)


@dataclass(frozen=True)
class PruningPlan:
    """Retained output channels per conv stage, plus the induced input slices.

    ``input_slices[l]`` lists which input channels stage ``l`` keeps (all
    input-image channels for stage 0); ``classifier_input_map`` lists the
    classifier features kept after global pooling.
    """

    retain_sets: tuple
    input_slices: tuple
    classifier_input_map: tuple
    alpha: float = None

    @property
    def widths(self):
        return tuple(rs.k for rs in self.retain_sets)

    @property
    def original_widths(self):
        return tuple(rs.original_width for rs in self.retain_sets)

    def is_identity(self):
        return all(rs.indices == tuple(range(rs.original_width)) for rs in self.retain_sets)

    def to_dict(self):
        return {
            "alpha": self.alpha,
            "layers": [
                {"layer": rs.layer, "retain": list(rs.indices), "original_width": rs.original_width}
                for rs in self.retain_sets
            ],
            "classifier_input_map": list(self.classifier_input_map),
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def from_dict(cls, d, spec):
        sets = [RetainSet(int(e["layer"]), tuple(e["retain"]), int(e["original_width"])) for e in d["layers"]]
        plan = build_plan(sets, spec, alpha=d.get("alpha"))
        if tuple(d.get("classifier_input_map", plan.classifier_input_map)) != plan.classifier_input_map:
            raise StructuralError("classifier_input_map does not match the last layer's retain set")
        return plan

    @classmethod
    def from_json(cls, path, spec):
        with open(path) as fh:
            return cls.from_dict(json.load(fh), spec)


def build_plan(retain_sets, spec, alpha=None):
    """Combine one :class:`RetainSet` per conv stage of ``spec`` into a plan."""
    by_layer = {}
    for rs in retain_sets:
        if rs.layer in by_layer:
            raise StructuralError(f"layer {rs.layer} listed twice")
        by_layer[rs.layer] = rs
    n = len(spec.stages)
    missing = [l for l in range(n) if l not in by_layer]
    if missing:
        raise StructuralError(f"no retain set for layer(s) {missing}")
    extra = sorted(set(by_layer) - set(range(n)))
    if extra:
        raise StructuralError(f"retain sets for unknown layer(s) {extra}")
    ordered = tuple(by_layer[l] for l in range(n))
    for l, rs in enumerate(ordered):
        if rs.original_width != spec.stages[l]:
            raise StructuralError(f"layer {l}: retain set built for width {rs.original_width}, spec has {spec.stages[l]}")
    slices = (tuple(range(spec.input_shape[0])),) + tuple(rs.indices for rs in ordered[:-1])
    return PruningPlan(ordered, slices, ordered[-1].indices, None if alpha is None else float(alpha))


def identity_plan(spec):
    return build_plan([RetainSet(l, tuple(range(w)), w) for l, w in enumerate(spec.stages)], spec)
