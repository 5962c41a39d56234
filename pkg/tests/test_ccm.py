import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccmprune.ccm import (
    CcmMode,
    LayerLossSet,
    ccm_loss,
    ccm_loss_and_grad,
    ccm_loss_grad,
    combine_objective,
    corr_matrix,
    mean_offdiag_abs,
    read_corr_csv,
    write_corr_csv,
)
from ccmprune.exceptions import ConfigError, DegenerateInputError
from ccmprune.tensor import channel_matrix
from oracles import central_difference, max_relative_error, two_pass_corr


def test_perfect_positive_correlation():
    r = corr_matrix([[1, 2, 3, 4], [2, 4, 6, 8]])
    assert r[0, 1] == pytest.approx(1.0, abs=1e-12)


def test_perfect_negative_correlation():
    r = corr_matrix([[1, 2, 3, 4], [4, 3, 2, 1]])
    assert r[0, 1] == pytest.approx(-1.0, abs=1e-12)


def test_corr_matches_two_pass_oracle(rng):
    c = rng.normal(size=(5, 16))
    r = corr_matrix(c)
    for i in range(5):
        for j in range(5):
            assert abs(r[i, j] - two_pass_corr(list(c[i]), list(c[j]))) <= 1e-12


def test_corr_structure(rng):
    r = corr_matrix(rng.normal(size=(7, 9)))
    np.testing.assert_array_equal(r, r.T)
    np.testing.assert_allclose(np.diag(r), 1.0, atol=1e-12)
    assert np.all(np.abs(r) <= 1 + 1e-12)


def test_corr_needs_two_pixels():
    with pytest.raises(DegenerateInputError):
        corr_matrix([[1.0], [2.0]])


def test_dead_channel_has_zero_correlation():
    r = corr_matrix([[1, 2, 3, 4], [3, 3, 3, 3], [2, 1, 4, 3]])
    assert r[1, 1] == 1.0
    assert r[0, 1] == r[1, 0] == r[1, 2] == 0.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 10), st.floats(-5, 5), st.booleans())
def test_affine_invariance(seed, a, b, negate):
    rng = np.random.default_rng(seed)
    c = rng.normal(size=(4, 12))
    k = int(rng.integers(0, 4))
    scale = -a if negate else a
    d = c.copy()
    d[k] = scale * c[k] + b
    r0, r1 = corr_matrix(c), corr_matrix(d)
    flip = np.ones(4)
    flip[k] = np.sign(scale)
    np.testing.assert_allclose(r1, r0 * np.outer(flip, flip), atol=1e-12)
    assert ccm_loss(r1) == pytest.approx(ccm_loss(r0), abs=1e-12)


def test_loss_single_channel():
    assert ccm_loss(np.ones((1, 1))) == 1.0


def test_loss_uncorrelated_pair():
    assert ccm_loss(np.eye(2)) == 0.5


def test_loss_identical_channels():
    assert ccm_loss(corr_matrix([[1, 5, 2, 8], [1, 5, 2, 8]])) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 8), st.integers(2, 20))
def test_loss_bounds(seed, n, p):
    c = np.random.default_rng(seed).normal(size=(n, p))
    loss = ccm_loss(corr_matrix(c))
    assert 1.0 / n - 1e-12 <= loss <= 1.0 + 1e-12


def test_loss_is_one_for_affine_copies(rng):
    base = rng.normal(size=10)
    c = np.stack([a * base + b for a, b in [(1, 0), (-2, 3), (0.5, -1), (7, 7)]])
    assert ccm_loss(corr_matrix(c)) == pytest.approx(1.0, abs=1e-12)


def test_gradient_matches_finite_differences(rng):
    f = rng.normal(size=(2, 5, 4, 4))
    numeric = central_difference(lambda x: ccm_loss_and_grad(x)[0], f)
    assert max_relative_error(ccm_loss_grad(f), numeric) <= 1e-6


def test_gradient_of_dead_channel_is_zero(rng):
    f = rng.normal(size=(2, 3, 3, 3))
    f[:, 1] = 0.7
    g = ccm_loss_grad(f)
    np.testing.assert_array_equal(g[:, 1], 0.0)
    # the live pair still interacts; the dead one does not feed into them
    f2 = f.copy()
    f2[:, 1] = -4.0
    np.testing.assert_allclose(ccm_loss_grad(f2), g, atol=1e-15)


def test_gradient_permutation_equivariant(rng):
    f = rng.normal(size=(3, 4, 3, 3))
    perm = rng.permutation(4)
    np.testing.assert_allclose(ccm_loss_grad(f[:, perm]), ccm_loss_grad(f)[:, perm], atol=1e-15)


def test_single_channel_gradient_is_zero(rng):
    np.testing.assert_array_equal(ccm_loss_grad(rng.normal(size=(2, 1, 3, 3))), 0.0)


def test_gradient_carries_batch_factor(rng):
    f = rng.normal(size=(1, 3, 3, 3))
    g1 = ccm_loss_grad(f)
    g4 = ccm_loss_grad(np.repeat(f, 4, axis=0))
    np.testing.assert_allclose(g4, np.repeat(g1, 4, axis=0) / 4, atol=1e-15)


def test_gradient_needs_two_pixels():
    with pytest.raises(DegenerateInputError):
        ccm_loss_grad(np.ones((2, 2, 1, 1)))


def test_layer_sum_gradient_is_per_layer_concatenation(rng):
    fa, fb = rng.normal(size=(2, 3, 3, 3)), rng.normal(size=(2, 4, 2, 2))

    def total(flat):
        a = flat[:fa.size].reshape(fa.shape)
        b = flat[fa.size:].reshape(fb.shape)
        return ccm_loss_and_grad(a)[0] + ccm_loss_and_grad(b)[0]

    flat = np.concatenate([fa.ravel(), fb.ravel()])
    numeric = central_difference(total, flat)
    joint = np.concatenate([ccm_loss_grad(fa).ravel(), ccm_loss_grad(fb).ravel()])
    assert max_relative_error(joint, numeric) <= 1e-6


def test_loss_matches_pipeline(rng):
    f = rng.normal(size=(3, 4, 3, 3))
    assert ccm_loss_and_grad(f)[0] == ccm_loss(corr_matrix(channel_matrix(f)))


def test_combine_objective():
    losses = LayerLossSet({0: 1.0, 1: 2.0}, lam=0.01)
    assert combine_objective(2.0, losses, "minus") == pytest.approx(1.97, abs=1e-15)
    assert combine_objective(2.0, losses, CcmMode.PLUS) == pytest.approx(2.03, abs=1e-15)
    assert combine_objective(2.0, losses, "off") == 2.0
    assert combine_objective(2.0, LayerLossSet({0: 1.0}, lam=0.0), "minus") == 2.0


def test_negative_lambda_is_config_error():
    with pytest.raises(ConfigError):
        LayerLossSet({0: 0.5}, lam=-0.1)


def test_unknown_mode():
    with pytest.raises(ConfigError):
        CcmMode.parse("sideways")


def test_mean_offdiag_abs():
    assert mean_offdiag_abs(np.ones((1, 1))) == 0.0
    assert mean_offdiag_abs(np.array([[1, -0.5], [-0.5, 1]])) == 0.5


def test_corr_csv_round_trip(tmp_path, rng):
    r = corr_matrix(rng.normal(size=(4, 6)))
    write_corr_csv(tmp_path / "c.csv", r)
    back = read_corr_csv(tmp_path / "c.csv")
    np.testing.assert_array_equal(back, r)
