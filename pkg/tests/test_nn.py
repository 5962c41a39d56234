import math

import numpy as np
import pytest

from ccmprune.exceptions import ConfigError, StructuralError
from ccmprune.nn import NetworkParams, NetworkSpec, cross_entropy, forward, init_params, loss_and_grads
from oracles import central_difference, max_relative_error, naive_forward

TINY = NetworkSpec((1, 4, 4), (3, 3), 4)


def zero_params(spec):
    p = init_params(spec, np.random.default_rng(0))
    for a in p.arrays():
        a[...] = 0.0
    return p


def perturbed(spec, rng, scale=0.2):
    p = init_params(spec, rng)
    for a in p.arrays():
        a += rng.normal(scale=scale, size=a.shape)
    return p


def test_zero_params_give_uniform_softmax(rng):
    spec = NetworkSpec()
    x = rng.uniform(size=(5,) + spec.input_shape)
    _, logits = forward(zero_params(spec), spec, x)
    np.testing.assert_array_equal(logits, 0.0)
    ce, _ = cross_entropy(logits, np.arange(5) % 4)
    assert ce == pytest.approx(math.log(4), abs=1e-15)


def test_delta_kernel_is_identity(rng):
    spec = NetworkSpec((1, 6, 6), (1,), 2)
    p = zero_params(spec)
    p.conv_weights[0][0, 0, 1, 1] = 1.0
    x = rng.normal(size=(2, 1, 6, 6))
    feats, _ = forward(p, spec, x)
    np.testing.assert_array_equal(feats[0], np.maximum(x, 0.0))


def test_forward_matches_naive_loops(rng):
    spec = NetworkSpec((2, 8, 8), (3, 4), 3)
    p = perturbed(spec, rng)
    x = rng.normal(size=(2, 2, 8, 8))
    feats, logits = forward(p, spec, x)
    ref_feats, ref_logits = naive_forward(p, x)
    for a, b in zip(feats, ref_feats):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)
    np.testing.assert_allclose(logits, ref_logits, rtol=0, atol=1e-12)


def test_forward_shape_errors(rng):
    with pytest.raises(StructuralError):
        forward(init_params(TINY, rng), TINY, np.zeros((1, 1, 5, 5)))


def test_spec_validation():
    with pytest.raises(ConfigError):
        NetworkSpec(stages=())
    with pytest.raises(ConfigError):
        NetworkSpec(num_classes=1)
    with pytest.raises(ConfigError):
        NetworkSpec((1, 6, 6), (2, 2, 2), 2)
    with pytest.raises(ConfigError):
        NetworkSpec(ccm_layers=(5,))


def test_params_shape_check(rng):
    p = init_params(TINY, rng)
    p.conv_weights[1] = p.conv_weights[1][:, :2]
    with pytest.raises(StructuralError):
        p.check(TINY)


def _flat_objective(spec, params, x, y, lam, mode):
    names = [n for n, _ in params.named_arrays()]
    shapes = [a.shape for a in params.arrays()]
    sizes = [a.size for a in params.arrays()]

    def unflatten(v):
        parts = np.split(v, np.cumsum(sizes)[:-1])
        return NetworkParams.from_named({n: part.reshape(s) for n, part, s in zip(names, parts, shapes)})

    def objective(v):
        return loss_and_grads(unflatten(v), spec, x, y, lam, mode)[0]["objective"]

    return objective, np.concatenate([a.ravel() for a in params.arrays()])


@pytest.mark.parametrize("mode", ["minus", "plus"])
def test_full_gradient_matches_finite_differences(rng, mode):
    p = perturbed(TINY, rng)
    x = rng.normal(size=(2, 1, 4, 4))
    y = np.array([0, 3])
    _, grads = loss_and_grads(p, TINY, x, y, lam=0.3, mode=mode)
    fun, v = _flat_objective(TINY, p, x, y, 0.3, mode)
    numeric = central_difference(fun, v)
    analytic = np.concatenate([g.ravel() for g in grads.arrays()])
    assert max_relative_error(analytic, numeric) <= 1e-5


def test_lambda_zero_equals_plain_cross_entropy(rng):
    p = perturbed(TINY, rng)
    x = rng.normal(size=(3, 1, 4, 4))
    y = np.array([1, 2, 0])
    _, with_ccm = loss_and_grads(p, TINY, x, y, lam=0.0, mode="minus")
    _, plain = loss_and_grads(p, TINY, x, y, lam=0.5, mode="minus", ccm_layers=())
    for a, b in zip(with_ccm.arrays(), plain.arrays()):
        np.testing.assert_array_equal(a, b)


def test_minus_and_plus_differ_by_twice_the_ccm_term(rng):
    p = perturbed(TINY, rng)
    x = rng.normal(size=(2, 1, 4, 4))
    y = np.array([0, 1])
    lam = 0.05
    info_m, gm = loss_and_grads(p, TINY, x, y, lam, "minus")
    info_p, gp = loss_and_grads(p, TINY, x, y, lam, "plus")
    _, g_ce = loss_and_grads(p, TINY, x, y, 0.0, "off")
    # Plus gradient minus CE gradient isolates lam * d(sum ccm)
    for a, b, c in zip(gp.arrays(), gm.arrays(), g_ce.arrays()):
        np.testing.assert_allclose(a - b, 2.0 * (a - c), atol=1e-14)
    total = sum(info_m["ccm"].values())
    assert info_p["objective"] - info_m["objective"] == pytest.approx(2 * lam * total, abs=1e-14)


def test_objective_decomposition(rng):
    p = perturbed(TINY, rng)
    x = rng.normal(size=(2, 1, 4, 4))
    info, _ = loss_and_grads(p, TINY, x, np.array([0, 1]), 0.01, "minus")
    assert info["objective"] == pytest.approx(info["ce"] - 0.01 * sum(info["ccm"].values()), abs=1e-12)
