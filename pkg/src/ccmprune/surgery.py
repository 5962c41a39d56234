"""Structural pruning of a trained network, finetuning, and size/compute accounting.

Counting conventions: a 3x3 conv with bias has ``out*in*9 + out`` parameters
and ``2*out*in*9*H*W`` FLOPs (one multiply-add = 2 operations, output
resolution ``H x W``); the classifier has ``in*classes + classes`` parameters
and ``2*in*classes`` FLOPs. ReLU, pooling and bias additions count as 0 FLOPs.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .exceptions import StructuralError
from .nn import KERNEL, NetworkParams
from .training import train

__all__ = [
    "PrunedModel",
    "CompressionReport",
    "apply_plan",
    "finetune",
    "count_params",
    "count_flops",
    "compression_report",
    "plan_masks",
]


@dataclass
class PrunedModel:
    spec: object
    params: NetworkParams
    provenance: dict = field(default_factory=dict)


def apply_plan(params, spec, plan, source=None):
    """Remove every channel outside ``plan`` and slice successors to match."""
    params.check(spec)
    if plan.original_widths != spec.stages:
        raise StructuralError(f"plan was built for widths {plan.original_widths}, network has {spec.stages}")
    weights, biases = [], []
    for l, rs in enumerate(plan.retain_sets):
        keep_out = np.asarray(rs.indices, dtype=np.int64)
        keep_in = np.asarray(plan.input_slices[l], dtype=np.int64)
        if keep_in.size and keep_in.max() >= params.conv_weights[l].shape[1]:
            raise StructuralError(f"layer {l}: input slice exceeds the layer's input width")
        weights.append(params.conv_weights[l][keep_out][:, keep_in].copy())
        biases.append(params.conv_biases[l][keep_out].copy())
    fc_w = params.fc_weight[:, np.asarray(plan.classifier_input_map, dtype=np.int64)].copy()
    new_spec = spec.with_stages(plan.widths)
    new_params = NetworkParams(weights, biases, fc_w, params.fc_bias.copy()).check(new_spec)
    provenance = {"plan": plan.to_dict(), "source": source, "original_spec": spec.to_dict()}
    return PrunedModel(new_spec, new_params, provenance)


def plan_masks(plan):
    """0/1 channel masks equivalent to ``plan``, for :func:`ccmprune.nn.forward`."""
    masks = {}
    for l, rs in enumerate(plan.retain_sets):
        m = np.zeros(rs.original_width)
        m[list(rs.indices)] = 1.0
        masks[l] = m
    return masks


def finetune(model, dataset, config, keep_ccm=False):
    """Retrain a pruned model from its current weights.

    The cosine schedule restarts from ``config.learning_rate``. The CCM term
    is switched off unless ``keep_ccm`` is set. Returns ``(model, history)``.
    """
    if not keep_ccm:
        config = config.replace(mode="off")
    params, history = train(model.spec, dataset, config, params=model.params)
    provenance = dict(model.provenance, finetune=config.to_dict())
    return PrunedModel(model.spec, params, provenance), history


def _conv_params(cin, cout):
    return cout * cin * KERNEL * KERNEL + cout


def count_params(spec):
    total = sum(_conv_params(cin, cout) for cin, cout in zip(spec.stage_inputs(), spec.stages))
    return total + spec.stages[-1] * spec.num_classes + spec.num_classes


def layer_flops(spec):
    """FLOPs of each conv stage followed by the classifier, in network order."""
    out = []
    for (cin, cout), (h, w) in zip(zip(spec.stage_inputs(), spec.stages), spec.stage_sizes()):
        out.append(2 * cout * cin * KERNEL * KERNEL * h * w)
    out.append(2 * spec.stages[-1] * spec.num_classes)
    return out


def count_flops(spec, input_shape=None):
    if input_shape is not None and tuple(input_shape) != spec.input_shape:
        spec = type(spec)(tuple(input_shape), spec.stages, spec.num_classes, spec.ccm_layers)
    return int(sum(layer_flops(spec)))


@dataclass
class CompressionReport:
    params_before: int
    params_after: int
    flops_before: int
    flops_after: int
    widths_before: tuple
    widths_after: tuple
    accuracy_before: float = None
    accuracy_pruned: float = None
    accuracy_after: float = None
    alpha: float = None

    @property
    def params_ratio(self):
        return 1.0 - self.params_after / self.params_before

    @property
    def flops_ratio(self):
        return 1.0 - self.flops_after / self.flops_before

    def to_dict(self):
        return {
            "alpha": self.alpha,
            "params_before": self.params_before,
            "params_after": self.params_after,
            "params_ratio": self.params_ratio,
            "flops_before": self.flops_before,
            "flops_after": self.flops_after,
            "flops_ratio": self.flops_ratio,
            "layers": [
                {"layer": l, "width_before": b, "width_after": a}
                for l, (b, a) in enumerate(zip(self.widths_before, self.widths_after))
            ],
            "accuracy_before": self.accuracy_before,
            "accuracy_pruned": self.accuracy_pruned,
            "accuracy_after": self.accuracy_after,
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["layer", "width_before", "width_after"])
            for l, (b, a) in enumerate(zip(self.widths_before, self.widths_after)):
                writer.writerow([l, b, a])


def compression_report(spec_before, spec_after, alpha=None, **accuracies):
    return CompressionReport(
        count_params(spec_before), count_params(spec_after),
        count_flops(spec_before), count_flops(spec_after),
        tuple(spec_before.stages), tuple(spec_after.stages),
        alpha=alpha, **accuracies,
    )
