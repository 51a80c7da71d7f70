"""Minibatch momentum descent with the loss-driven learning-rate schedule."""

import numpy as np

from .numerics import ContractError, NumericError, make_rng


class TrainingError(NumericError):
    def __init__(self, epoch, msg="non-finite loss"):
        super().__init__(f"{msg} at epoch {epoch}")
        self.epoch = epoch


def minimize(params, loss_grad, n, epochs=500, batch=200, lr0=0.01, momentum=0.9,
             rng=None, lr_factor=0.99):
    """Minimize a minibatch loss over ``params``; returns updated copies.

    ``loss_grad(params, idx)`` returns the mean loss over samples ``idx`` and
    one gradient per parameter. After every epoch the learning rate is
    multiplied by ``lr_factor`` if the epoch-to-epoch loss change grew, and
    divided by it otherwise.

    Returns
    -------
    params, losses, learning_rates
    """
    if n == 0:
        raise ContractError("training set is empty")
    if epochs < 1:
        raise ContractError("epochs must be at least 1")
    rng = make_rng(rng)
    params = [np.array(p, dtype=np.float64, copy=True) for p in params]
    vel = [np.zeros_like(p) for p in params]
    batch = n if batch is None else max(1, min(int(batch), n))
    lr = lr0
    losses, rates = [], []
    prev_delta = None
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n) if batch < n else np.arange(n)
        total = 0.0
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            loss, grads = loss_grad(params, idx)
            if not np.isfinite(loss):
                raise TrainingError(epoch)
            total += loss * idx.size
            for i, g in enumerate(grads):
                vel[i] = momentum * vel[i] - lr * g
                params[i] = params[i] + vel[i]
        epoch_loss = total / n
        if losses:
            delta = epoch_loss - losses[-1]
            if prev_delta is not None:
                lr = lr * lr_factor if delta > prev_delta else lr / lr_factor
            prev_delta = delta
        losses.append(epoch_loss)
        rates.append(lr)
    return params, losses, rates
