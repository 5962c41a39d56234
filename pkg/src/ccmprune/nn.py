"""A small convolutional classifier with hand-written forward and backward passes.

Architecture per stage: 3x3 convolution (stride 1, zero padding 1) -> ReLU,
with 2x2 average pooling between consecutive stages. After the last stage a
global average pool feeds a linear classifier.

The training objective is cross-entropy combined with the CCM regulariser of
the post-ReLU feature maps of ``spec.ccm_layers`` (see :mod:`ccmprune.ccm`).
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .ccm import CcmMode, LayerLossSet, ccm_loss_and_grad, combine_objective
from .exceptions import ConfigError, StructuralError

__all__ = [
    "KERNEL",
    "NetworkSpec",
    "NetworkParams",
    "init_params",
    "forward",
    "loss_and_grads",
    "cross_entropy",
    "predict_logits",
]

KERNEL = 3


@dataclass(frozen=True)
class NetworkSpec:
    input_shape: tuple = (1, 16, 16)
    stages: tuple = (8, 16, 16)
    num_classes: int = 4
    # None means every conv stage carries the CCM term
    ccm_layers: tuple = None

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "stages", tuple(int(v) for v in self.stages))
        if self.ccm_layers is None:
            object.__setattr__(self, "ccm_layers", tuple(range(len(self.stages))))
        else:
            object.__setattr__(self, "ccm_layers", tuple(sorted({int(v) for v in self.ccm_layers})))
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ConfigError(f"input_shape must be (channels, height, width), got {self.input_shape}")
        if not self.stages or min(self.stages) < 1:
            raise ConfigError("need at least one conv stage, each with >= 1 channel")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if any(not 0 <= l < len(self.stages) for l in self.ccm_layers):
            raise ConfigError(f"ccm_layers {self.ccm_layers} outside 0..{len(self.stages) - 1}")
        factor = 2 ** (len(self.stages) - 1)
        _, h, w = self.input_shape
        if h % factor or w % factor:
            raise ConfigError(f"input {h}x{w} cannot be pooled {len(self.stages) - 1} times by 2")

    def stage_inputs(self):
        """Input channel count of every stage."""
        return (self.input_shape[0],) + self.stages[:-1]

    def stage_sizes(self):
        """Spatial ``(h, w)`` of every stage's output."""
        _, h, w = self.input_shape
        return tuple((h >> i, w >> i) for i in range(len(self.stages)))

    def with_stages(self, stages):
        return NetworkSpec(self.input_shape, tuple(stages), self.num_classes, self.ccm_layers)

    def to_dict(self):
        return {
            "input_shape": list(self.input_shape),
            "stages": list(self.stages),
            "num_classes": self.num_classes,
            "ccm_layers": list(self.ccm_layers),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["input_shape"]), tuple(d["stages"]), int(d["num_classes"]), d.get("ccm_layers"))


@dataclass
class NetworkParams:
    conv_weights: list = field(default_factory=list)
    conv_biases: list = field(default_factory=list)
    fc_weight: np.ndarray = None
    fc_bias: np.ndarray = None

    def named_arrays(self):
        out = []
        for i, (w, b) in enumerate(zip(self.conv_weights, self.conv_biases)):
            out.append((f"conv{i}_weight", w))
            out.append((f"conv{i}_bias", b))
        out.append(("fc_weight", self.fc_weight))
        out.append(("fc_bias", self.fc_bias))
        return out

    def arrays(self):
        return [a for _, a in self.named_arrays()]

    @classmethod
    def from_named(cls, named):
        named = dict(named)
        n = sum(1 for k in named if k.startswith("conv") and k.endswith("_weight"))
        return cls(
            [np.asarray(named[f"conv{i}_weight"], dtype=np.float64) for i in range(n)],
            [np.asarray(named[f"conv{i}_bias"], dtype=np.float64) for i in range(n)],
            np.asarray(named["fc_weight"], dtype=np.float64),
            np.asarray(named["fc_bias"], dtype=np.float64),
        )

    def copy(self):
        return NetworkParams.from_named((k, a.copy()) for k, a in self.named_arrays())

    def check(self, spec):
        if len(self.conv_weights) != len(spec.stages) or len(self.conv_biases) != len(spec.stages):
            raise StructuralError("parameter stage count does not match the network")
        for i, (cin, cout) in enumerate(zip(spec.stage_inputs(), spec.stages)):
            if self.conv_weights[i].shape != (cout, cin, KERNEL, KERNEL):
                raise StructuralError(f"conv{i} weight has shape {self.conv_weights[i].shape}")
            if self.conv_biases[i].shape != (cout,):
                raise StructuralError(f"conv{i} bias has shape {self.conv_biases[i].shape}")
        if self.fc_weight.shape != (spec.num_classes, spec.stages[-1]):
            raise StructuralError(f"fc weight has shape {self.fc_weight.shape}")
        if self.fc_bias.shape != (spec.num_classes,):
            raise StructuralError(f"fc bias has shape {self.fc_bias.shape}")
        return self


def init_params(spec, rng):
    """He-normal conv kernels, zero biases, ``N(0, 1/in)`` classifier weights."""
    weights, biases = [], []
    for cin, cout in zip(spec.stage_inputs(), spec.stages):
        std = np.sqrt(2.0 / (cin * KERNEL * KERNEL))
        weights.append(rng.normal(0.0, std, size=(cout, cin, KERNEL, KERNEL)))
        biases.append(np.zeros(cout))
    fc_w = rng.normal(0.0, np.sqrt(1.0 / spec.stages[-1]), size=(spec.num_classes, spec.stages[-1]))
    return NetworkParams(weights, biases, fc_w, np.zeros(spec.num_classes))


def _im2col(x):
    b, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (KERNEL, KERNEL), axis=(2, 3))  # b, c, h, w, 3, 3
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(b * h * w, c * KERNEL * KERNEL)


def _conv_forward(x, weight, bias):
    b, _, h, w = x.shape
    cout = weight.shape[0]
    cols = _im2col(x)
    out = cols @ weight.reshape(cout, -1).T + bias
    return out.reshape(b, h, w, cout).transpose(0, 3, 1, 2), cols


def _conv_backward(dout, cols, weight, need_dx=True):
    cout = weight.shape[0]
    d = dout.transpose(0, 2, 3, 1).reshape(-1, cout)
    dw = (d.T @ cols).reshape(weight.shape)
    db = d.sum(axis=0)
    # input gradient = padded correlation of dout with the flipped, transposed kernel
    if not need_dx:
        return None, dw, db
    flipped = weight[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
    dx, _ = _conv_forward(dout, flipped, 0.0)
    return dx, dw, db


def _pool_forward(x):
    b, c, h, w = x.shape
    return x.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))


def _pool_backward(dout):
    return np.repeat(np.repeat(dout, 2, axis=2), 2, axis=3) * 0.25


def forward(params, spec, x, masks=None, return_cache=False):
    """Run the network.

    Returns ``(features, logits)`` where ``features[l]`` is the post-ReLU map of
    stage ``l``. ``masks`` optionally maps a stage id to a 0/1 vector that
    multiplies that stage's post-ReLU channels (used to check surgery against
    zero-masking).
    """
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 4 or a.shape[1:] != spec.input_shape:
        raise StructuralError(f"input shape {a.shape} does not match spec input {spec.input_shape}")
    features, cache = [], []
    n_stages = len(spec.stages)
    for l in range(n_stages):
        pre, cols = _conv_forward(a, params.conv_weights[l], params.conv_biases[l])
        act = np.maximum(pre, 0.0)
        if masks is not None and l in masks:
            act = act * np.asarray(masks[l], dtype=np.float64)[None, :, None, None]
        features.append(act)
        cache.append((cols, pre))
        a = _pool_forward(act) if l < n_stages - 1 else act
    pooled = a.mean(axis=(2, 3))
    logits = pooled @ params.fc_weight.T + params.fc_bias
    if return_cache:
        return features, logits, (cache, pooled)
    return features, logits


def predict_logits(params, spec, x):
    return forward(params, spec, x)[1]


def _softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits, y):
    """Mean softmax cross-entropy and its gradient w.r.t. the logits."""
    y = np.asarray(y, dtype=np.int64)
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    b = logits.shape[0]
    ce = float(-logp[np.arange(b), y].mean())
    d = np.exp(logp)
    d[np.arange(b), y] -= 1.0
    return ce, d / b


def loss_and_grads(params, spec, x, y, lam=0.0, mode="minus", ccm_layers=None):
    """Objective value, its parts, and exact gradients for every parameter.

    Returns ``(info, grads)``; ``info`` holds ``objective``, ``ce``,
    ``ccm`` (dict stage -> loss), ``logits``; ``grads`` is a
    :class:`NetworkParams` of the same shapes as ``params``.

    CCM losses are always evaluated for the target stages so they can be
    logged, but their gradient is only injected when ``mode`` is not ``off``
    and ``lam > 0``.
    """
    mode = CcmMode.parse(mode)
    targets = spec.ccm_layers if ccm_layers is None else tuple(ccm_layers)
    features, logits, (cache, pooled) = forward(params, spec, x, return_cache=True)
    ce, dlogits = cross_entropy(logits, y)

    ccm_vals, ccm_grads = {}, {}
    inject = mode is not CcmMode.OFF and lam > 0.0
    for l in targets:
        val, g = ccm_loss_and_grad(features[l])
        ccm_vals[l] = val
        if inject:
            ccm_grads[l] = (mode.sign * lam) * g
    objective = combine_objective(ce, LayerLossSet(ccm_vals, lam), mode)

    grads = NetworkParams(
        [None] * len(spec.stages), [None] * len(spec.stages),
        dlogits.T @ pooled, dlogits.sum(axis=0),
    )
    dpooled = dlogits @ params.fc_weight
    last = features[-1]
    hw = last.shape[2] * last.shape[3]
    da = np.broadcast_to(dpooled[:, :, None, None] / hw, last.shape)
    for l in reversed(range(len(spec.stages))):
        if l < len(spec.stages) - 1:
            da = _pool_backward(da)
        if l in ccm_grads:
            da = da + ccm_grads[l]
        cols, pre = cache[l]
        dpre = da * (pre > 0.0)
        da, grads.conv_weights[l], grads.conv_biases[l] = _conv_backward(dpre, cols, params.conv_weights[l], l > 0)
    info = {"objective": objective, "ce": ce, "ccm": ccm_vals, "logits": logits}
    return info, grads
