"""Input validation helpers shared by the numerical modules and the estimators."""

import numpy as np

from .exceptions import ConfigError, InvalidAlphaError


def check_finite(x, ndim=None, name="array"):
    arr = np.asarray(x, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return arr


def check_feature_batch(f, name="feature batch"):
    arr = check_finite(f, ndim=4, name=name)
    if min(arr.shape) < 1:
        raise ValueError(f"{name} has an empty dimension: {arr.shape}")
    return arr


def check_channel_matrix(c, name="channel matrix"):
    arr = check_finite(c, ndim=2, name=name)
    if min(arr.shape) < 1:
        raise ValueError(f"{name} has an empty dimension: {arr.shape}")
    return arr


def check_images(X, input_shape=None):
    """Coerce ``X`` to a float64 ``(n, c, h, w)`` array.

    2-D input of shape ``(n, c*h*w)`` is accepted when ``input_shape`` is
    known, so the estimators work on flat feature tables too.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2 and input_shape is not None:
        if X.shape[1] != int(np.prod(input_shape)):
            raise ValueError(f"flat input has {X.shape[1]} features, expected {int(np.prod(input_shape))}")
        X = X.reshape((X.shape[0],) + tuple(input_shape))
    if X.ndim == 3:
        X = X[:, None]
    if X.ndim != 4:
        raise ValueError(f"expected images shaped (n, c, h, w), got {X.shape}")
    if input_shape is not None and X.shape[1:] != tuple(input_shape):
        raise ValueError(f"image shape {X.shape[1:]} does not match network input {tuple(input_shape)}")
    if not np.all(np.isfinite(X)):
        raise ValueError("images contain NaN or Inf")
    return X


def check_alpha(alpha):
    try:
        alpha = float(alpha)
    except (TypeError, ValueError):
        raise InvalidAlphaError(f"alpha must be a real number, got {alpha!r}") from None
    if not 0.0 < alpha < 1.0:
        raise InvalidAlphaError(f"alpha must lie strictly inside (0, 1), got {alpha}")
    return alpha


def check_nonnegative(value, name):
    value = float(value)
    if not value >= 0.0:
        raise ConfigError(f"{name} must be >= 0, got {value}")
    return value
