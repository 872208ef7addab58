import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oradapt.nn import (ChecksumError, GruParams, LinearParams, MlpParams, ShapeError, bce_loss,
                        cross_entropy, dumps_checkpoint, grad_check, gru_backward, gru_forward,
                        init_gru, init_mlp, load_checkpoint, loads_checkpoint, mlp_backward,
                        mlp_forward, save_checkpoint, sgd_step, softmax)

M, F, K = 4, 3, 5


@pytest.fixture
def mlp():
    return init_mlp(M * F, K, hidden=16, latent=8, rng=np.random.default_rng(0))


@pytest.fixture
def gru():
    return init_gru(6, K, hidden=7, rng=np.random.default_rng(1))


def test_default_shapes():
    p = init_mlp(16 * 8, 10, rng=np.random.default_rng(0))
    assert p["W1"].shape == (128, 128) and p["W2"].shape == (128, 64) and p["W3"].shape == (64, 10)
    g = init_gru(64, 10, rng=np.random.default_rng(0))
    assert g["Wo"].shape == (32, 10) and g.hidden_dim == 32


# mlp

def test_zero_params_give_zero_outputs(mlp):
    zero = mlp.zeros_like()
    f, z = mlp_forward(zero, np.random.default_rng(2).normal(size=(3, M, F)))
    assert not f.any() and not z.any()


def test_batch_independence(mlp):
    x = np.random.default_rng(3).normal(size=(1, M, F))
    f1, z1 = mlp_forward(mlp, x)
    f2, z2 = mlp_forward(mlp, np.concatenate([x, x]))
    # matrix-vector and matrix-matrix kernels may round differently in the last ulp
    np.testing.assert_allclose(z1[0], z2[0], rtol=0, atol=1e-14)
    np.testing.assert_allclose(f1[0], f2[1], rtol=0, atol=1e-14)
    np.testing.assert_array_equal(z2[0], z2[1])


def test_mlp_forward_deterministic(mlp):
    x = np.random.default_rng(4).normal(size=(5, M, F))
    a, b = mlp_forward(mlp, x), mlp_forward(mlp, x)
    assert np.array_equal(a[1], b[1]) and np.array_equal(a[0], b[0])


def test_mlp_shape_mismatch(mlp):
    with pytest.raises(ValueError):
        mlp_forward(mlp, np.zeros((2, M + 1, F)))


# softmax and losses

def test_softmax_examples():
    np.testing.assert_allclose(softmax(np.array([0.0, 0.0])), [0.5, 0.5])
    np.testing.assert_allclose(softmax(np.log([1.0, 3.0])), [0.25, 0.75], atol=1e-15)
    z = np.array([1.0, -2.0, 0.5])
    np.testing.assert_allclose(softmax(z + 1234.5), softmax(z), atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-700, 700), min_size=1, max_size=10))
def test_softmax_is_probability(z):
    p = softmax(np.array(z))
    assert np.all(p >= 0) and abs(p.sum() - 1) < 1e-9


def test_cross_entropy_examples():
    z = np.array([[100.0, 0.0]])
    assert cross_entropy(z, [0]) < 1e-10
    assert cross_entropy(np.zeros((3, 10)), [0, 4, 9]) == pytest.approx(np.log(10), abs=1e-15)
    assert cross_entropy(np.ones((2, 3)), [0, 1], weights=[0.0, 0.0]) == 0.0


def test_cross_entropy_label_out_of_range():
    with pytest.raises(ValueError):
        cross_entropy(np.zeros((1, 3)), [3])


def test_cross_entropy_finite_for_extreme_logits():
    assert np.isfinite(cross_entropy(np.array([[1e4, -1e4]]), [1]))


def test_bce_examples():
    assert bce_loss(np.zeros((3, 4)), np.ones((3, 4))) == pytest.approx(np.log(2), abs=1e-15)
    assert bce_loss(np.array([[100.0]]), np.array([[1.0]])) < 1e-10
    rng = np.random.default_rng(5)
    z, t = rng.normal(size=(4, 6)), rng.integers(0, 2, size=(4, 6)).astype(float)
    assert bce_loss(-z, 1 - t) == pytest.approx(bce_loss(z, t), abs=1e-15)
    assert np.isfinite(bce_loss(np.array([[1e4, -1e4]]), np.array([[0.0, 1.0]])))


# mlp backward

def test_zero_weights_zero_gradients(mlp):
    x = np.random.default_rng(6).normal(size=(3, M, F))
    loss, g = mlp_backward(mlp, x, [0, 1, 2], [0.0, 0.0, 0.0])
    assert loss == 0.0 and all(not v.any() for v in g.values())


def test_weight_two_equals_duplicate(mlp):
    rng = np.random.default_rng(7)
    x = rng.normal(size=(2, M, F))
    _, a = mlp_backward(mlp, x, [1, 3], [2.0, 1.0])
    _, b = mlp_backward(mlp, np.concatenate([x[:1], x]), [1, 1, 3], [1.0, 1.0, 1.0])
    for k in a:
        np.testing.assert_allclose(a[k], b[k], rtol=1e-12, atol=1e-15)


def test_mlp_grad_check_two_clip_batch(mlp):
    rng = np.random.default_rng(8)
    data = (rng.normal(size=(2, M, F)), np.array([0, 4]), None)
    assert grad_check("mlp", mlp, data, n_coords=500, rng=rng) < 1e-4


def test_mlp_grad_check_weighted(mlp):
    rng = np.random.default_rng(9)
    data = (rng.normal(size=(4, M, F)), np.array([0, 4, 2, 2]), np.array([1.0, 0.0, 1.0, 1.0]))
    assert grad_check("mlp", mlp, data, n_coords=300, rng=rng) < 1e-4


# gru

def test_gru_zero_params_zero_logits(gru):
    z = gru_forward(gru.zeros_like(), np.random.default_rng(0).normal(size=(6, 9)))
    assert z.shape == (K, 9) and not z.any()


def test_gru_causality(gru):
    seq = np.random.default_rng(1).normal(size=(6, 2))
    np.testing.assert_allclose(gru_forward(gru, seq[:, :1])[:, 0], gru_forward(gru, seq)[:, 0],
                               rtol=0, atol=1e-14)


def test_gru_deterministic(gru):
    seq = np.random.default_rng(2).normal(size=(6, 5))
    assert np.array_equal(gru_forward(gru, seq), gru_forward(gru, seq))


def test_gru_shape_mismatch(gru):
    with pytest.raises(ValueError):
        gru_forward(gru, np.zeros((5, 3)))


def test_gru_requires_nonempty_sequence(gru):
    with pytest.raises(ShapeError):
        gru_backward(gru, np.zeros((6, 0)), np.zeros((K, 0)))


@pytest.mark.parametrize("N", [1, 20])
def test_gru_grad_check(gru, N):
    rng = np.random.default_rng(N)
    data = (rng.normal(size=(6, N)), rng.integers(0, 2, size=(K, N)).astype(float))
    assert grad_check("gru", gru, data, n_coords=500, rng=rng) < 1e-4


def test_linear_grad_check_exact():
    rng = np.random.default_rng(3)
    p = LinearParams(W=rng.normal(size=(4, 3)), b=rng.normal(size=3))
    data = (rng.normal(size=(10, 4)), rng.normal(size=(10, 3)))
    assert grad_check("linear", p, data, n_coords=15, rng=rng) < 1e-7


def test_grad_check_rejects_bad_eps(mlp):
    with pytest.raises(ValueError):
        grad_check("mlp", mlp, (np.zeros((1, M, F)), [0], None), eps=0)


# sgd

def test_sgd_zero_grads_unchanged(mlp):
    out = sgd_step(mlp, mlp.zeros_like(), 0.1)
    assert all(np.array_equal(out[k], mlp[k]) for k in mlp)


def test_sgd_unit_step_on_params_zeroes(mlp):
    out = sgd_step(mlp, mlp, 1.0)
    assert all(not out[k].any() for k in out)


def test_sgd_two_half_steps_equal_one(mlp):
    g = MlpParams({k: np.full_like(v, 0.25) for k, v in mlp.items()})
    a = sgd_step(sgd_step(mlp, g, 0.5), g, 0.5)
    b = sgd_step(mlp, g, 1.0)
    for k in a:
        np.testing.assert_allclose(a[k], b[k], rtol=0, atol=1e-15)


@pytest.mark.parametrize("lr", [0.0, -0.1])
def test_sgd_rejects_nonpositive_lr(mlp, lr):
    with pytest.raises(ValueError):
        sgd_step(mlp, mlp, lr)


def test_sgd_shape_mismatch(mlp):
    g = mlp.zeros_like()
    g["b1"] = np.zeros(3)
    with pytest.raises(ShapeError):
        sgd_step(mlp, g, 0.1)


# checkpoints

@pytest.mark.parametrize("make", [
    lambda: init_mlp(12, 4, hidden=5, latent=3, rng=np.random.default_rng(0)),
    lambda: init_gru(3, 4, hidden=5, rng=np.random.default_rng(0)),
])
def test_checkpoint_round_trip_bit_exact(make, tmp_path):
    p = make()
    p[next(iter(p))].flat[0] = np.nextafter(0.1, 1.0)
    q = load_checkpoint(save_checkpoint(p, tmp_path / "m.ckpt"))
    assert type(q) is type(p) and list(q) == list(p)
    for k in p:
        assert q[k].shape == p[k].shape
        assert q[k].tobytes() == p[k].tobytes()


def test_checkpoint_detects_corruption(mlp):
    blob = bytearray(dumps_checkpoint(mlp))
    blob[-10] = ord("7") if blob[-10] != ord("7") else ord("8")
    with pytest.raises(ChecksumError):
        loads_checkpoint(bytes(blob))
    with pytest.raises(ChecksumError):
        loads_checkpoint(b"no header")


def test_params_kind():
    assert isinstance(init_gru(2, 2, hidden=2, rng=np.random.default_rng(0)), GruParams)
