import math

import numpy as np
import pytest

from fedselect import mask as M
from fedselect.data import synth_blobs
from fedselect.local_update import LocalConfig, epoch_batches, grad_select, local_alt, sgd_pass
from fedselect.model import Batch, ConfigError, LayerSpec, Model, mlp_arch


def plain_sgd(model, theta, batch_seq, lr):
    for b in batch_seq:
        theta = theta - lr * model.gradient(theta, b)
    return theta


@pytest.fixture
def setup(rng):
    model = Model(tuple(mlp_arch(3, (4,), 3)))
    theta = model.init_params(0)
    ds = synth_blobs(3, 3, 6, 1.0, 0)
    seq = epoch_batches(ds, 5, 1, rng)[0]
    return model, theta, seq


def test_all_ones_mask_is_plain_sgd_at_gamma_v(setup):
    model, theta, seq = setup
    cfg = LocalConfig(gamma_v=0.3, gamma_u=0.01)
    out = local_alt(model, theta, M.ones(model.d), seq, cfg)
    assert np.array_equal(out, plain_sgd(model, theta, seq, 0.3))


def test_all_zeros_mask_is_plain_sgd_at_gamma_u(setup):
    model, theta, seq = setup
    cfg = LocalConfig(gamma_v=0.3, gamma_u=0.01)
    out = local_alt(model, theta, M.zeros(model.d), seq, cfg)
    assert np.array_equal(out, plain_sgd(model, theta, seq, 0.01))


def test_empty_batch_sequence(setup):
    model, theta, _ = setup
    with pytest.raises(ValueError):
        local_alt(model, theta, M.zeros(model.d), [], LocalConfig())


def softmax_ce_grad(params, xs, ys):
    # single linear layer 1 -> 2, params [w0, w1, b0, b1]; mean over samples
    w0, w1, b0, b1 = params
    g = [0.0, 0.0, 0.0, 0.0]
    for x, y in zip(xs, ys):
        z0, z1 = w0 * x + b0, w1 * x + b1
        m = max(z0, z1)
        e0, e1 = math.exp(z0 - m), math.exp(z1 - m)
        p0, p1 = e0 / (e0 + e1), e1 / (e0 + e1)
        r0, r1 = p0 - (y == 0), p1 - (y == 1)
        g[0] += r0 * x
        g[1] += r1 * x
        g[2] += r0
        g[3] += r1
    return [v / len(xs) for v in g]


def test_tau_one_hand_computed():
    model = Model((LayerSpec(1, 2, "identity"),))
    theta = np.array([0.4, -0.3, 0.1, 0.2])
    xs, ys = [0.5, -1.5], [0, 1]
    batch = Batch(np.array(xs)[:, None], np.array(ys))
    m = np.array([True, False, False, True])
    gv, gu = 0.5, 0.2

    # v step on positions 0 and 3, then u step at the updated point
    g = softmax_ce_grad(theta.tolist(), xs, ys)
    vplus = [theta[0] - gv * g[0], theta[1], theta[2], theta[3] - gv * g[3]]
    g2 = softmax_ce_grad(vplus, xs, ys)
    expected = [vplus[0], vplus[1] - gu * g2[1], vplus[2] - gu * g2[2], vplus[3]]

    out = local_alt(model, theta, m, [batch], LocalConfig(gamma_v=gv, gamma_u=gu))
    np.testing.assert_allclose(out, expected, rtol=1e-14, atol=1e-16)


class TestGradSelect:
    def test_frozen_when_at_limit(self, setup):
        model, theta, seq = setup
        m = M.zeros(model.d)
        m[: model.d // 2] = True
        cfg = LocalConfig(alpha=0.4, p=0.3)
        _, m_next = grad_select(model, theta, m, [seq], cfg)
        assert np.array_equal(m_next, m)

    def test_first_round_growth_count(self, setup):
        model, theta, seq = setup
        cfg = LocalConfig(alpha=0.5, p=0.05, gamma_u=0.1)
        _, m_next = grad_select(model, theta, M.zeros(model.d), [seq, seq], cfg)
        assert m_next.sum() == math.ceil(0.05 * model.d)

    def test_selected_index_is_argmax_of_reexecution(self):
        model = Model((LayerSpec(1, 2, "identity"),))
        theta = np.array([0.4, -0.3, 0.1, 0.2])
        batch = Batch(np.array([[0.5], [-1.5], [2.0]]), np.array([0, 1, 0]))
        m = np.array([False, False, True, False])
        cfg = LocalConfig(local_epochs=1, gamma_v=0.5, gamma_u=0.2, p=0.01, alpha=0.9)

        # independent re-execution of one LocalAlt epoch
        trained = local_alt(model, theta, m, [batch], cfg)
        delta = np.where(m, -1.0, np.abs(trained - theta))
        expected = int(np.argmax(delta))

        out, m_next = grad_select(model, theta, m, [[batch]], cfg)
        assert np.array_equal(out, trained)
        assert np.flatnonzero(m_next & ~m).tolist() == [expected]

    def test_no_growth_flag(self, setup):
        model, theta, seq = setup
        _, m_next = grad_select(model, theta, M.zeros(model.d), [seq], LocalConfig(alpha=1.0), grow=False)
        assert not m_next.any()

    def test_does_not_mutate_inputs(self, setup):
        model, theta, seq = setup
        before, m = theta.copy(), M.zeros(model.d)
        grad_select(model, theta, m, [seq], LocalConfig(gamma_u=0.1))
        assert np.array_equal(theta, before) and not m.any()


def test_momentum_zero_matches_plain(setup):
    model, theta, seq = setup
    a = sgd_pass(model, theta, M.ones(model.d), seq, 0.1, momentum=0.0)
    assert np.array_equal(a, plain_sgd(model, theta, seq, 0.1))
    b = sgd_pass(model, theta, M.ones(model.d), seq, 0.1, momentum=0.9)
    assert not np.array_equal(a, b)


@pytest.mark.parametrize("field,value", [("p", 0.0), ("p", 1.5), ("alpha", -0.1), ("local_epochs", 0)])
def test_config_validation(field, value):
    with pytest.raises(ConfigError):
        LocalConfig(**{field: value})
