"""scikit-learn style wrappers around training, scoring and pruning."""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, clone
from sklearn.utils.validation import check_is_fitted

from ._validation import check_alpha, check_images
from .data import SynthDataset
from .exceptions import ConfigError
from .importance import average_scores, chip_scores, l1_weight_scores
from .nn import NetworkSpec, forward, predict_logits
from .selection import build_plan, fixed_ratio_select, pcrr_select
from .surgery import apply_plan, finetune
from .tensor import channel_matrix
from .training import TrainConfig, train

__all__ = ["CCMNetClassifier", "ChannelPruner"]


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class CCMNetClassifier(ClassifierMixin, BaseEstimator):
    """Small CNN trained with cross-entropy plus the CCM term.

    ``X`` is either ``(n, c, h, w)`` or flat ``(n, c*h*w)`` images; ``y``
    holds integer labels ``0..num_classes-1`` or any labels, which are
    encoded through ``classes_``.
    """

    def __init__(self, stages=(8, 16, 16), input_shape=(1, 16, 16), ccm_layers=None, epochs=40,
                 batch_size=64, learning_rate=0.01, momentum=0.9, weight_decay=0.005, lam=0.01,
                 mode="minus", random_state=0):
        self.stages = stages
        self.input_shape = input_shape
        self.ccm_layers = ccm_layers
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.lam = lam
        self.mode = mode
        self.random_state = random_state

    def _train_config(self, **changes):
        cfg = TrainConfig(self.epochs, self.batch_size, self.learning_rate, self.momentum,
                          self.weight_decay, self.lam, self.mode, int(self.random_state))
        return cfg.replace(**changes) if changes else cfg

    def fit(self, X, y):
        X = check_images(X, tuple(self.input_shape))
        y = np.asarray(y)
        if y.shape != (X.shape[0],):
            raise ConfigError("y must hold one label per image")
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if self.classes_.size < 2:
            raise ConfigError("need at least two classes")
        ccm = None if self.ccm_layers is None else tuple(self.ccm_layers)
        self.spec_ = NetworkSpec(tuple(self.input_shape), tuple(self.stages), int(self.classes_.size), ccm)
        self.params_, self.history_ = train(self.spec_, SynthDataset(X, encoded, None), self._train_config())
        return self

    def _set_fitted(self, spec, params, history, classes):
        self.spec_, self.params_, self.history_, self.classes_ = spec, params, history, classes
        return self

    def decision_function(self, X):
        check_is_fitted(self, "params_")
        X = check_images(X, self.spec_.input_shape)
        return np.concatenate([predict_logits(self.params_, self.spec_, X[i:i + 256])
                               for i in range(0, X.shape[0], 256)])

    def predict_proba(self, X):
        return _softmax(self.decision_function(X))

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[np.argmax(scores, axis=1)]

    def feature_maps(self, X):
        """Post-ReLU activations of every conv stage for ``X``."""
        check_is_fitted(self, "params_")
        feats, _ = forward(self.params_, self.spec_, check_images(X, self.spec_.input_shape))
        return feats


class ChannelPruner(BaseEstimator):
    """Score, select and remove channels of a fitted :class:`CCMNetClassifier`.

    ``fit(X)`` scores channels on ``n_batches`` consecutive slices of
    ``batch_size`` images of ``X``, builds one plan with a single ``alpha``
    (or fixed keep ratio when ``selector="ratio"``) and, if ``y`` is given
    and ``finetune_epochs > 0``, finetunes the pruned copy on ``(X, y)``.
    """

    def __init__(self, estimator=None, alpha=0.7, selector="pcrr", scorer="chip", n_batches=5,
                 batch_size=64, finetune_epochs=0):
        self.estimator = estimator
        self.alpha = alpha
        self.selector = selector
        self.scorer = scorer
        self.n_batches = n_batches
        self.batch_size = batch_size
        self.finetune_epochs = finetune_epochs

    def _importances(self, est, X):
        n_layers = len(est.spec_.stages)
        if self.scorer == "l1":
            return [l1_weight_scores(est.params_.conv_weights[l], layer=l) for l in range(n_layers)]
        if self.scorer != "chip":
            raise ConfigError(f"unknown scorer {self.scorer!r}")
        per_layer = [[] for _ in range(n_layers)]
        for b in range(int(self.n_batches)):
            chunk = X[b * self.batch_size:(b + 1) * self.batch_size]
            if len(chunk) == 0:
                break
            for l, f in enumerate(forward(est.params_, est.spec_, chunk)[0]):
                per_layer[l].append(chip_scores(channel_matrix(f), layer=l))
        if not per_layer[0]:
            raise ConfigError("X holds no images to score")
        return [average_scores(s) for s in per_layer]

    def fit(self, X, y=None):
        est = self.estimator
        if est is None:
            raise ConfigError("ChannelPruner needs a fitted estimator")
        check_is_fitted(est, "params_")
        X = check_images(X, est.spec_.input_shape)
        if self.selector == "pcrr":
            select = pcrr_select
            check_alpha(self.alpha)
        elif self.selector == "ratio":
            select = fixed_ratio_select
        else:
            raise ConfigError(f"unknown selector {self.selector!r}")
        self.importances_ = self._importances(est, X)
        self.plan_ = build_plan([select(s, self.alpha) for s in self.importances_], est.spec_,
                                alpha=self.alpha if self.selector == "pcrr" else None)
        model = apply_plan(est.params_, est.spec_, self.plan_)
        history = []
        if y is not None and self.finetune_epochs > 0:
            y = np.asarray(y)
            encoded = np.searchsorted(est.classes_, y)
            if np.any(encoded >= est.classes_.size) or np.any(est.classes_[np.minimum(encoded, est.classes_.size - 1)] != y):
                raise ConfigError("y contains labels unseen by the estimator")
            cfg = est._train_config(epochs=int(self.finetune_epochs))
            model, history = finetune(model, SynthDataset(X, encoded, None), cfg)
        pruned = clone(est)
        pruned.stages = model.spec.stages
        self.pruned_estimator_ = pruned._set_fitted(model.spec, model.params, history, est.classes_)
        return self

    def predict(self, X):
        check_is_fitted(self, "pruned_estimator_")
        return self.pruned_estimator_.predict(X)

    def score(self, X, y):
        check_is_fitted(self, "pruned_estimator_")
        return self.pruned_estimator_.score(X, y)

    def transform(self, X):
        """Last-stage feature maps of the pruned network."""
        check_is_fitted(self, "pruned_estimator_")
        return self.pruned_estimator_.feature_maps(X)[-1]
