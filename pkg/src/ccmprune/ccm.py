"""Correlation-coefficient matrices over channels and the CCM regulariser.

The regulariser for one layer is the mean absolute entry of the channel
correlation matrix, computed on the batch-averaged feature map. Training in
``minus`` mode subtracts it from the cross-entropy (pushing channels towards
linear dependence); ``plus`` adds it (pushing them apart).
"""

import csv
import enum
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_channel_matrix, check_feature_batch, check_nonnegative
from .exceptions import ConfigError, DegenerateInputError
from .tensor import channel_matrix

__all__ = [
    "VARIANCE_FLOOR",
    "CcmMode",
    "LayerLossSet",
    "corr_matrix",
    "ccm_loss",
    "ccm_loss_and_grad",
    "ccm_loss_grad",
    "combine_objective",
    "mean_offdiag_abs",
    "write_corr_csv",
]

# rows whose population variance falls below this are treated as dead channels
VARIANCE_FLOOR = 1e-12


class CcmMode(str, enum.Enum):
    MINUS = "minus"
    PLUS = "plus"
    OFF = "off"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigError(f"unknown CCM mode {value!r}; use one of minus, plus, off") from None

    @property
    def sign(self):
        return {"minus": -1.0, "plus": 1.0, "off": 0.0}[self.value]


@dataclass
class LayerLossSet:
    """Per-layer CCM losses keyed by layer id, plus the weight ``lam``."""

    losses: dict = field(default_factory=dict)
    lam: float = 0.0

    def __post_init__(self):
        self.lam = check_nonnegative(self.lam, "lambda")

    @property
    def total(self):
        # fixed summation order: ascending layer id
        return float(sum(self.losses[k] for k in sorted(self.losses)))


def _unit_rows(c):
    """Centre each row and scale it to unit length; dead rows become zero.

    Returns ``(z, norms, live)``.
    """
    u = c - c.mean(axis=1, keepdims=True)
    norms = np.sqrt(np.einsum("ij,ij->i", u, u))
    live = norms**2 / c.shape[1] >= VARIANCE_FLOOR
    z = np.zeros_like(u)
    z[live] = u[live] / norms[live, None]
    return z, norms, live


def corr_matrix(c):
    """Pearson correlation between every pair of rows of a channel matrix.

    Population moments are used (the ratio does not depend on the choice).
    A row with variance below :data:`VARIANCE_FLOOR` has correlation 0 with
    every other row and 1 with itself.
    """
    c = check_channel_matrix(c)
    if c.shape[1] < 2:
        raise DegenerateInputError("correlation needs at least 2 pixels per channel")
    z, _, _ = _unit_rows(c)
    r = z @ z.T
    r = 0.5 * (r + r.T)
    np.clip(r, -1.0, 1.0, out=r)
    np.fill_diagonal(r, 1.0)
    return r


def ccm_loss(r):
    """``sum(|r|) / n**2`` for an ``n x n`` correlation matrix; lies in ``[1/n, 1]``."""
    r = np.asarray(r, dtype=np.float64)
    n = r.shape[0]
    return float(np.abs(r).sum() / (n * n))


def ccm_loss_and_grad(f):
    """CCM loss of a feature batch and its gradient with respect to the batch.

    The loss is ``ccm_loss(corr_matrix(channel_matrix(f)))``; the gradient has
    the shape of ``f`` and includes the ``1/batch`` factor from averaging.
    """
    f = check_feature_batch(f)
    b, n, h, w = f.shape
    if h * w < 2:
        raise DegenerateInputError("correlation needs at least 2 pixels per channel")
    c = channel_matrix(f)
    z, norms, live = _unit_rows(c)
    r = z @ z.T
    r = 0.5 * (r + r.T)
    np.clip(r, -1.0, 1.0, out=r)
    np.fill_diagonal(r, 1.0)
    loss = ccm_loss(r)

    # d loss / d z_i = (2 / n^2) sum_{j != i} sign(r_ij) z_j ; dead rows have z_j = 0
    sgn = np.sign(r)
    np.fill_diagonal(sgn, 0.0)
    gz = (2.0 / (n * n)) * (sgn @ z)
    gz[~live] = 0.0
    # through the normalisation z = u / |u| and the centring u = x - mean(x)
    radial = np.einsum("ij,ij->i", gz, z)
    gu = np.zeros_like(gz)
    gu[live] = (gz[live] - radial[live, None] * z[live]) / norms[live, None]
    gx = gu - gu.mean(axis=1, keepdims=True)
    grad = np.broadcast_to(gx.reshape(1, n, h, w) / b, f.shape).copy()
    return loss, grad


def ccm_loss_grad(f):
    return ccm_loss_and_grad(f)[1]


def combine_objective(ce, losses, mode):
    """Cross-entropy combined with the weighted sum of layer CCM losses.

    ``minus``: ``ce - lam * sum``; ``plus``: ``ce + lam * sum``; ``off``: ``ce``.
    """
    mode = CcmMode.parse(mode)
    check_nonnegative(losses.lam, "lambda")
    if mode is CcmMode.OFF:
        return float(ce)
    return float(ce + mode.sign * losses.lam * losses.total)


def mean_offdiag_abs(r):
    """Mean absolute off-diagonal correlation; 0 for a single channel."""
    r = np.asarray(r, dtype=np.float64)
    n = r.shape[0]
    if n < 2:
        return 0.0
    return float((np.abs(r).sum() - np.abs(np.diag(r)).sum()) / (n * (n - 1)))


def write_corr_csv(path, r):
    r = np.asarray(r, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in r:
            writer.writerow([f"{v:.17g}" for v in row])


def read_corr_csv(path):
    with open(path, newline="") as fh:
        return np.array([[float(v) for v in row] for row in csv.reader(fh)], dtype=np.float64)
