"""SGD training with momentum, L2 weight decay and cosine learning-rate annealing."""

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ._validation import check_nonnegative
from .ccm import CcmMode
from .exceptions import ConfigError, TrainingDivergedError
from .nn import init_params, loss_and_grads, predict_logits

__all__ = [
    "TrainConfig",
    "EpochRecord",
    "cosine_lr",
    "sgd_step",
    "train",
    "evaluate",
    "write_history_csv",
    "read_history_csv",
]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    batch_size: int = 64
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.005
    lam: float = 0.01
    mode: str = "minus"
    seed: int = 0

    def __post_init__(self):
        if int(self.epochs) < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if int(self.batch_size) < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        for name in ("learning_rate", "momentum", "weight_decay", "lam"):
            check_nonnegative(getattr(self, name), name)
        object.__setattr__(self, "mode", CcmMode.parse(self.mode).value)

    def replace(self, **changes):
        d = asdict(self)
        d.update(changes)
        return TrainConfig(**d)

    def to_dict(self):
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    objective: float
    ce: float
    ccm: dict = field(default_factory=dict)
    accuracy: float = 0.0
    lr: float = 0.0

    @property
    def ccm_sum(self):
        return float(sum(self.ccm[k] for k in sorted(self.ccm)))

    def to_dict(self):
        return {
            "epoch": self.epoch,
            "objective": self.objective,
            "ce": self.ce,
            "ccm": {str(k): v for k, v in sorted(self.ccm.items())},
            "accuracy": self.accuracy,
            "lr": self.lr,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["epoch"]), float(d["objective"]), float(d["ce"]),
                   {int(k): float(v) for k, v in d["ccm"].items()}, float(d["accuracy"]), float(d["lr"]))


def cosine_lr(initial, epoch, epochs):
    """``initial * (1 + cos(pi * epoch / epochs)) / 2``; stepped once per epoch."""
    return initial * (1.0 + math.cos(math.pi * epoch / epochs)) / 2.0


def sgd_step(params, grads, velocity, lr, momentum, weight_decay):
    """One in-place SGD update: ``v = m*v + (g + wd*w)``, ``w -= lr*v``."""
    for w, g, v in zip(params.arrays(), grads.arrays(), velocity):
        d = g + weight_decay * w if weight_decay else g
        v *= momentum
        v += d
        w -= lr * v


def _check_dataset(spec, images, labels):
    if images.ndim != 4 or images.shape[1:] != spec.input_shape:
        raise ConfigError(f"dataset images {images.shape} do not match network input {spec.input_shape}")
    if labels.shape != (images.shape[0],):
        raise ConfigError("labels must be a vector with one entry per image")
    if labels.size and (labels.min() < 0 or labels.max() >= spec.num_classes):
        raise ConfigError("labels outside 0..num_classes-1")


def train(spec, dataset, config, params=None, callback=None):
    """Train ``spec`` on ``dataset`` (anything with ``images``/``labels``).

    ``params`` gives the starting weights (finetuning); otherwise they are
    drawn from the seeded generator. Returns ``(params, history)``, one
    :class:`EpochRecord` per epoch holding batch means of every objective
    component and the running training accuracy.

    Determinism: one ``default_rng(config.seed)`` stream draws the
    initialisation (when needed) and then one permutation per epoch.
    """
    images = np.asarray(dataset.images, dtype=np.float64)
    labels = np.asarray(dataset.labels, dtype=np.int64)
    _check_dataset(spec, images, labels)
    rng = np.random.default_rng(config.seed)
    if params is None:
        params = init_params(spec, rng)
    else:
        params = params.copy().check(spec)
    velocity = [np.zeros_like(a) for a in params.arrays()]
    n = labels.size
    bs = int(config.batch_size)
    history = []
    for epoch in range(int(config.epochs)):
        lr = cosine_lr(config.learning_rate, epoch, config.epochs)
        order = rng.permutation(n)
        objs, ces, ccms, correct = [], [], [], 0
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            info, grads = loss_and_grads(params, spec, images[idx], labels[idx], config.lam, config.mode)
            if not np.isfinite(info["objective"]) or not all(np.all(np.isfinite(g)) for g in grads.arrays()):
                raise TrainingDivergedError(
                    f"non-finite objective/gradient at epoch {epoch}, batch starting {start} "
                    f"(ce={info['ce']}, lr={lr})"
                )
            sgd_step(params, grads, velocity, lr, config.momentum, config.weight_decay)
            if not all(np.all(np.isfinite(a)) for a in params.arrays()):
                raise TrainingDivergedError(f"non-finite parameters after the update at epoch {epoch} (lr={lr})")
            objs.append(info["objective"])
            ces.append(info["ce"])
            ccms.append(info["ccm"])
            correct += int(np.sum(np.argmax(info["logits"], axis=1) == labels[idx]))
        rec = EpochRecord(
            epoch=epoch,
            objective=float(np.mean(objs)),
            ce=float(np.mean(ces)),
            ccm={l: float(np.mean([c[l] for c in ccms])) for l in spec.ccm_layers},
            accuracy=correct / n,
            lr=lr,
        )
        history.append(rec)
        if callback is not None:
            callback(rec)
    return params, history


def evaluate(params, spec, dataset, batch_size=256):
    """Top-1 accuracy; logit ties go to the lowest class index."""
    images = np.asarray(dataset.images, dtype=np.float64)
    labels = np.asarray(dataset.labels, dtype=np.int64)
    correct = 0
    for start in range(0, labels.size, batch_size):
        logits = predict_logits(params, spec, images[start:start + batch_size])
        correct += int(np.sum(np.argmax(logits, axis=1) == labels[start:start + batch_size]))
    return correct / labels.size if labels.size else 0.0


HISTORY_COLUMNS = ["epoch", "objective", "ce", "ccm_sum", "accuracy", "lr"]


def write_history_csv(path, history):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_COLUMNS)
        for rec in history:
            writer.writerow([rec.epoch] + [f"{v:.17g}" for v in (rec.objective, rec.ce, rec.ccm_sum, rec.accuracy, rec.lr)])


def read_history_csv(path):
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "epoch" else float(v)) for k, v in row.items()} for row in csv.DictReader(fh)]
