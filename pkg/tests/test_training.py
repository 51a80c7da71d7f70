import numpy as np
import pytest

from labelfrugal.numerics import ContractError
from labelfrugal.training import TrainingError, minimize


def quad(target):
    def loss_grad(params, idx):
        diff = params[0] - target
        return float(np.sum(diff ** 2)), [2 * diff]
    return loss_grad


def test_minimizes_a_quadratic():
    params, losses, _ = minimize([np.zeros(3)], quad(np.array([1.0, -2.0, 0.5])), n=10,
                                 epochs=300, lr0=0.05, rng=0)
    np.testing.assert_allclose(params[0], [1.0, -2.0, 0.5], atol=1e-6)
    assert losses[-1] < losses[0]


def test_learning_rate_schedule():
    """Rate shrinks by the factor when the loss change grows, grows otherwise."""
    seq = iter([10.0, 8.0, 7.0, 6.5, 9.0])

    def loss_grad(params, idx):
        return next(seq), [np.zeros(1)]

    _, losses, rates = minimize([np.zeros(1)], loss_grad, n=1, epochs=5, lr0=1.0, rng=0)
    # deltas: -2, -1, -0.5, +2.5 -> larger, larger, larger
    f = 0.99
    np.testing.assert_allclose(rates, [1.0, 1.0, f, f * f, f ** 3])
    seq2 = iter([10.0, 5.0, 4.0, 3.9])
    _, _, rates2 = minimize([np.zeros(1)], lambda p, i: (next(seq2), [np.zeros(1)]), n=1,
                            epochs=4, lr0=1.0, rng=0)
    # deltas: -5, -1, -0.1 -> the change grows each time
    np.testing.assert_allclose(rates2, [1.0, 1.0, f, f * f])
    seq3 = iter([10.0, 9.0, 7.0])
    _, _, rates3 = minimize([np.zeros(1)], lambda p, i: (next(seq3), [np.zeros(1)]), n=1,
                            epochs=3, lr0=1.0, rng=0)
    # deltas: -1, -2 -> the change shrinks
    np.testing.assert_allclose(rates3, [1.0, 1.0, 1 / f])
    assert losses == [10.0, 8.0, 7.0, 6.5, 9.0]


def test_minibatches_cover_every_sample():
    seen = []

    def loss_grad(params, idx):
        seen.extend(idx.tolist())
        return 0.0, [np.zeros(1)]

    minimize([np.zeros(1)], loss_grad, n=7, epochs=2, batch=3, rng=0)
    assert sorted(seen) == sorted(list(range(7)) * 2)


def test_errors():
    with pytest.raises(ContractError):
        minimize([np.zeros(1)], quad(np.zeros(1)), n=0)
    with pytest.raises(TrainingError, match="epoch 1"):
        minimize([np.zeros(1)], lambda p, i: (float("nan"), [np.zeros(1)]), n=1)
