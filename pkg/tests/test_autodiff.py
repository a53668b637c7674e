import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eegdann.autodiff import tensor as T
from eegdann.autodiff import Tensor, ShapeError, no_grad, grad_check, grad_check_param, checkpoint
from eegdann.autodiff.optim import Adam, AdamState, adam_step

SEEDS = range(5)
TOL = 1e-4


def rand(rng, *shape):
    return Tensor(rng.standard_normal(shape))


def weighted(out, rng):
    """Reduce to a scalar with fixed random weights so every output entry matters."""
    w = np.random.default_rng(99).standard_normal(out.shape)
    return (out * Tensor(w)).sum()


# (name, function of x, input shape)
UNARY = [
    ("neg", lambda x: -x, (3, 4)),
    ("exp", T.exp, (3, 4)),
    ("log", lambda x: T.log(T.exp(x) + 1.0), (3, 4)),
    ("sum_axis", lambda x: x.sum(axis=1), (3, 4)),
    ("sum_keepdims", lambda x: x.sum(axis=0, keepdims=True), (3, 4)),
    ("mean", lambda x: x.mean(axis=-1), (2, 3, 4)),
    ("reshape", lambda x: x.reshape(4, 3), (3, 4)),
    ("transpose", lambda x: x.transpose(2, 0, 1), (2, 3, 4)),
    ("swap_last", T.swap_last, (2, 3, 4)),
    ("slice", lambda x: x[1:, ::2], (3, 4)),
    ("take_repeat", lambda x: T.take(x, [0, 2, 0], axis=1), (2, 3)),
    ("concat", lambda x: T.concat([x, x * 2.0], axis=-1), (2, 3)),
    ("stack", lambda x: T.stack([x, T.exp(x)], axis=1), (2, 3)),
    ("expand", lambda x: T.expand(x, (4, 2, 3)), (2, 3)),
    ("sigmoid", T.sigmoid, (3, 4)),
    ("tanh", T.tanh, (3, 4)),
    ("gelu", T.gelu, (3, 4)),
    ("leaky_relu", T.leaky_relu, (3, 4)),
    ("softmax", lambda x: T.softmax(x, axis=-1), (3, 4)),
    ("mse", lambda x: T.mse_loss(x, np.ones((3, 4))), (3, 4)),
    ("bce", lambda x: T.bce_with_logits(x, np.array([0.0, 1.0, 1.0, 0.0])), (4,)),
]


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("name,f,shape", UNARY, ids=[u[0] for u in UNARY])
def test_unary_primitives_match_finite_differences(name, f, shape, seed):
    rng = np.random.default_rng(seed)
    x = rand(rng, *shape)
    if name == "leaky_relu":  # keep away from the kink
        x = Tensor(x.data + np.sign(x.data) * 0.1)
    assert grad_check(lambda t: weighted(f(t), rng), x) < TOL


BINARY = [
    ("add", lambda a, b: a + b, (3, 4), (3, 4)),
    ("add_bias", lambda a, b: a + b, (2, 3, 4), (4,)),
    ("add_keepdims", lambda a, b: a - b, (3, 4), (3, 1)),
    ("mul_suffix", lambda a, b: a * b, (2, 3, 4), (3, 4)),
    ("div", lambda a, b: a / (T.exp(b) + 0.5), (3, 4), (3, 4)),
    ("matmul_2d", lambda a, b: a @ b, (3, 4), (4, 5)),
    ("matmul_batched_weight", lambda a, b: a @ b, (2, 3, 3, 4), (4, 5)),
    ("matmul_batched", lambda a, b: a @ b, (2, 3, 4), (2, 4, 5)),
    ("matmul_vector", lambda a, b: a @ b, (4,), (4, 5)),
]


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("name,f,sa,sb", BINARY, ids=[b[0] for b in BINARY])
def test_binary_primitives_match_finite_differences(name, f, sa, sb, seed):
    rng = np.random.default_rng(seed)
    a, b = rand(rng, *sa), rand(rng, *sb)
    assert grad_check(lambda t: weighted(f(t, b), rng), a) < TOL
    assert grad_check(lambda t: weighted(f(a, t), rng), b) < TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_norm_primitives_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    x = rand(rng, 5, 6)
    gamma, beta = rand(rng, 6), rand(rng, 6)
    ln = lambda t: weighted(T.layer_norm(t, gamma, beta), rng)  # noqa: E731
    assert grad_check(ln, x) < TOL
    assert grad_check(lambda g: weighted(T.layer_norm(x, g, beta), rng), gamma) < TOL

    def bn(t):
        return weighted(T.batch_norm(t, gamma, beta, np.zeros(6), np.ones(6), training=True), rng)

    assert grad_check(bn, x) < TOL
    assert grad_check(lambda g: weighted(T.batch_norm(x, g, beta, np.zeros(6), np.ones(6), True), rng),
                      gamma) < TOL


def test_second_backward_accumulates_into_leaves():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    loss = (x * x).sum()
    loss.backward()
    loss.backward()
    np.testing.assert_allclose(x.grad, 2 * 2 * x.data)


def test_shared_subexpression_gradient_sums_paths():
    x = Tensor(np.array(3.0), requires_grad=True)
    y = x * x
    (y + y * x).backward()  # d/dx (x^2 + x^3) = 2x + 3x^2
    assert x.grad == pytest.approx(2 * 3 + 3 * 9)


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = (x * 2.0).sum()
    assert not y.requires_grad
    with pytest.raises(RuntimeError):
        y.backward()


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError):
        (x * 2.0).backward()


@pytest.mark.parametrize("sa,sb", [((3, 4), (4, 3)), ((2, 3), (2,)), ((2, 3, 4), (2, 1, 5))])
def test_mismatched_shapes_name_both_operands(sa, sb):
    with pytest.raises(ShapeError, match=r"\(.*\).*\(.*\)"):
        Tensor(np.ones(sa)) + Tensor(np.ones(sb))


@given(st.lists(st.integers(1, 4), min_size=1, max_size=3), st.integers(0, 2))
@settings(max_examples=40, deadline=None)
def test_suffix_broadcast_gradient_reduces_to_operand_shape(shape, cut):
    cut = min(cut, len(shape) - 1)
    rng = np.random.default_rng(len(shape) * 7 + cut)
    a = Tensor(rng.standard_normal(shape), requires_grad=True)
    b = Tensor(rng.standard_normal(shape[cut:]), requires_grad=True)
    (a * b).sum().backward()
    assert b.grad.shape == b.shape
    lead = tuple(range(cut))
    np.testing.assert_allclose(b.grad, a.data.sum(axis=lead) if lead else a.data)


# -- gradient reversal -------------------------------------------------------

@pytest.mark.parametrize("coeff", [0.0, 0.5, 1.0])
def test_grl_forward_identity_and_scaled_reversal(coeff):
    rng = np.random.default_rng(1)
    x = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
    y = T.grl(x, coeff)
    assert np.array_equal(y.data, x.data)
    w = rng.standard_normal((4, 3))
    (y * Tensor(w)).sum().backward()
    # Hand differentiation: d(sum(w * x))/dx = w, reversed and scaled.
    np.testing.assert_array_equal(x.grad, -coeff * w)


def test_grl_sum_gives_minus_one():
    x = Tensor(np.arange(5.0), requires_grad=True)
    T.grl(x, 1.0).sum().backward()
    np.testing.assert_array_equal(x.grad, -np.ones(5))


def test_grl_rejects_negative_coefficient():
    with pytest.raises(ValueError):
        T.grl(Tensor(np.ones(2)), -0.1)


# -- batch norm ---------------------------------------------------------------

def test_batch_norm_training_normalizes_and_tracks_unbiased_variance():
    rng = np.random.default_rng(0)
    x = rng.normal(3.0, 2.0, (16, 5))
    rm, rv = np.zeros(5), np.ones(5)
    out = T.batch_norm(Tensor(x), Tensor(np.ones(5)), Tensor(np.zeros(5)), rm, rv, training=True)
    np.testing.assert_allclose(out.data.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.data.var(axis=0), x.var(axis=0) / (x.var(axis=0) + 1e-5), rtol=1e-12)
    np.testing.assert_allclose(rm, 0.1 * x.mean(axis=0))
    np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(axis=0, ddof=1))


def test_batch_norm_rejects_single_row_in_training():
    with pytest.raises(ValueError):
        T.batch_norm(Tensor(np.ones((1, 3))), Tensor(np.ones(3)), Tensor(np.zeros(3)),
                      np.zeros(3), np.ones(3), training=True)


def test_bce_is_stable_for_large_logits():
    z = Tensor(np.array([800.0, -800.0]))
    assert T.bce_with_logits(z, np.array([1.0, 0.0])).item() == 0.0
    assert T.bce_with_logits(z, np.array([0.0, 1.0])).item() == pytest.approx(800.0)


# -- Adam ---------------------------------------------------------------------

def test_adam_first_step_moves_each_coordinate_by_lr():
    params = [np.array([1.0, -2.0, 0.5])]
    grads = [np.array([0.3, -4.0, 1e-3])]
    new, state = adam_step(params, grads, AdamState(lr=0.01))
    # With bias correction the first update is lr * g / (|g| + eps).
    np.testing.assert_allclose(new[0], params[0] - 0.01 * grads[0] / (np.abs(grads[0]) + 1e-8))
    assert state.step_count == 1


def test_adam_matches_reference_recurrence_over_steps():
    rng = np.random.default_rng(3)
    p = rng.standard_normal(4)
    state = AdamState(lr=0.05)
    m = v = np.zeros(4)
    ref = p.copy()
    cur = [p.copy()]
    for t in range(1, 6):
        g = rng.standard_normal(4)
        cur, state = adam_step(cur, [g], state)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 0.05 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    np.testing.assert_allclose(cur[0], ref, rtol=1e-12)


def test_adam_minimizes_a_quadratic():
    x = Tensor(np.array([3.0, -2.0]), requires_grad=True)
    opt = Adam([x], lr=0.1)
    for _ in range(300):
        opt.zero_grad()
        ((x - 1.0) * (x - 1.0)).sum().backward()
        opt.step()
    np.testing.assert_allclose(x.data, 1.0, atol=1e-3)


def test_adam_lr_scales_match_separate_optimizers():
    rng = np.random.default_rng(0)
    init = [rng.standard_normal(3) for _ in range(3)]
    grads = [[rng.standard_normal(3) for _ in range(3)] for _ in range(4)]
    grouped = [Tensor(p.copy(), requires_grad=True) for p in init]
    single = [Tensor(p.copy(), requires_grad=True) for p in init]
    opt = Adam(grouped, lr=0.01, lr_scales=[1.0, 4.0, 1.0])
    ref = [Adam([single[0], single[2]], lr=0.01), Adam([single[1]], lr=0.04)]
    for step in grads:
        for t, u, g in zip(grouped, single, step):
            t.grad, u.grad = g.copy(), g.copy()
        opt.step()
        for r in ref:
            r.step()
    for t, u in zip(grouped, single):
        np.testing.assert_array_equal(t.data, u.data)
    with pytest.raises(ValueError):
        Adam(grouped, lr_scales=[1.0])


def test_adam_skips_parameters_without_gradient():
    new, _ = adam_step([np.ones(2), np.ones(2)], [None, np.ones(2)], AdamState())
    np.testing.assert_array_equal(new[0], np.ones(2))


# -- checkpoints -----------------------------------------------------------------

def test_checkpoint_round_trip_is_bitwise(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {"a.w": rng.standard_normal((3, 4)), "b": np.array(2.5), "c": rng.standard_normal(7)}
    checkpoint.save(tmp_path / "m.ckpt", arrays)
    back = checkpoint.load(tmp_path / "m.ckpt")
    assert list(back) == list(arrays)
    for k in arrays:
        assert back[k].tobytes() == arrays[k].tobytes()
    assert checkpoint.digest(back) == checkpoint.digest(arrays)


def test_checkpoint_rejects_corrupt_blobs():
    blob = checkpoint.dumps({"w": np.ones(3)})
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.loads(b"NOTMAGIC" + blob[8:])
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.loads(blob[:-4])


def test_grad_check_param_restores_weights():
    rng = np.random.default_rng(0)
    w = Tensor(rng.standard_normal((3, 2)), requires_grad=True)
    x = Tensor(rng.standard_normal((4, 3)))
    before = w.data.copy()
    assert grad_check_param(lambda: T.tanh(x @ w).sum(), w) < TOL
    np.testing.assert_array_equal(w.data, before)
