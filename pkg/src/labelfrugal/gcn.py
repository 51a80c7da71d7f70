"""Graph-convolution classifier over skeleton graphs.

One block computes ``g(A Z W)`` where ``Z`` (m x c) holds the current node
signals (initially the transposed descriptor matrix), ``A`` aggregates
neighbors and ``W`` (c x C) applies ``C`` filters. Three blocks are followed by
a fully connected layer and a class-score layer.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax, softmax
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .invertible import ActivationSpec
from .numerics import ContractError, make_rng
from .skeleton import DEFAULT_CHUNKS, adjacency_matrix, default_topology
from .training import minimize

GCN_ACTIVATION = ActivationSpec(u=1.0, l=0.1)


@dataclass
class GcnBlock:
    conv_weights: np.ndarray  # (c_in, C)
    use_adjacency: bool = True

    def __call__(self, Z, A, activation=GCN_ACTIVATION):
        """Block output for node signals ``Z`` of shape (..., m, c_in)."""
        agg = np.matmul(A, Z) if self.use_adjacency else Z
        return activation(agg @ self.conv_weights)


@dataclass
class GraphConvNet:
    blocks: list
    fc_weights: np.ndarray  # (m * C, hidden)
    fc_bias: np.ndarray
    out_weights: np.ndarray  # (hidden, classes)
    out_bias: np.ndarray
    activation: ActivationSpec = GCN_ACTIVATION

    @property
    def n_classes(self):
        return self.out_weights.shape[1]

    def params(self):
        return [b.conv_weights for b in self.blocks] + [
            self.fc_weights, self.fc_bias, self.out_weights, self.out_bias]

    @classmethod
    def from_params(cls, params, template):
        nb = len(template.blocks)
        blocks = [GcnBlock(W, b.use_adjacency) for W, b in zip(params[:nb], template.blocks)]
        return cls(blocks, *params[nb:], activation=template.activation)


def init_network(n_nodes, descriptor_size, n_classes, n_filters=8, n_blocks=3, hidden=64,
                 rng=None):
    rng = make_rng(rng)
    blocks = []
    c_in = descriptor_size
    for _ in range(n_blocks):
        blocks.append(GcnBlock(rng.standard_normal((c_in, n_filters)) * np.sqrt(2.0 / c_in)))
        c_in = n_filters
    flat = n_nodes * n_filters
    return GraphConvNet(
        blocks,
        rng.standard_normal((flat, hidden)) * np.sqrt(2.0 / flat),
        np.zeros(hidden),
        rng.standard_normal((hidden, n_classes)) * np.sqrt(1.0 / hidden),
        np.zeros(n_classes),
    )


def _forward(net, U, A):
    """``U`` is (n, m, s): descriptors with nodes as rows. Returns scores and caches."""
    g = net.activation
    Z = U
    cache = []
    for block in net.blocks:
        P = np.matmul(A, Z) if block.use_adjacency else Z
        Q = P @ block.conv_weights
        cache.append((P, Q))
        Z = g(Q)
    flat = Z.reshape(Z.shape[0], -1)
    h_pre = flat @ net.fc_weights + net.fc_bias
    h = g(h_pre)
    scores = h @ net.out_weights + net.out_bias
    return scores, (cache, flat, h_pre, h)


def scores(net, U, A):
    return _forward(net, U, A)[0]


def classify(net, graph):
    """Class scores of a single :class:`SkeletonGraph`."""
    U = graph.node_descriptors.T[None]
    if U.shape[2] != net.blocks[0].conv_weights.shape[0]:
        raise ContractError("descriptor size does not match the first block")
    if net.fc_weights.shape[0] != graph.m * net.blocks[-1].conv_weights.shape[1]:
        raise ContractError("node count does not match the fully connected layer")
    return scores(net, U, graph.adjacency)[0]


def loss_and_grads(net, U, A, y):
    n = U.shape[0]
    g = net.activation
    s, (cache, flat, h_pre, h) = _forward(net, U, A)
    logp = log_softmax(s, axis=1)
    loss = -float(np.mean(logp[np.arange(n), y]))
    ds = np.exp(logp)
    ds[np.arange(n), y] -= 1.0
    ds /= n
    g_out_w = h.T @ ds
    g_out_b = ds.sum(axis=0)
    dh_pre = (ds @ net.out_weights.T) * g.derivative(h_pre)
    g_fc_w = flat.T @ dh_pre
    g_fc_b = dh_pre.sum(axis=0)
    dZ = (dh_pre @ net.fc_weights.T).reshape(n, A.shape[0], -1)
    block_grads = [None] * len(net.blocks)
    for i in range(len(net.blocks) - 1, -1, -1):
        P, Q = cache[i]
        dQ = dZ * g.derivative(Q)
        block_grads[i] = np.einsum("nmc,nmk->ck", P, dQ)
        dP = dQ @ net.blocks[i].conv_weights.T
        dZ = np.matmul(A.T, dP) if net.blocks[i].use_adjacency else dP
    return loss, block_grads + [g_fc_w, g_fc_b, g_out_w, g_out_b]


class GraphConvClassifier(ClassifierMixin, BaseEstimator):
    """Three-block graph-convolution classifier on flattened graph descriptors.

    ``X`` rows are flattened graphs (node after node, ``descriptor_size``
    values per node, optional zero padding at the end).

    Parameters
    ----------
    adjacency : array (m, m) or None
        Aggregation matrix; ``None`` builds the default bone topology for
        ``n_nodes`` joints.
    n_nodes : int or None
        Needed only when ``adjacency`` is None.
    descriptor_size : int
        Values per node (``3 * chunks``).
    n_filters : int
        Filters per block (8 for SBU-scale data, 16 for FPHA-scale).
    """

    def __init__(self, adjacency=None, n_nodes=None, descriptor_size=3 * DEFAULT_CHUNKS,
                 n_filters=8, n_blocks=3, hidden=64, epochs=300, batch_size=200, lr=0.01,
                 momentum=0.9, random_state=None):
        self.adjacency = adjacency
        self.n_nodes = n_nodes
        self.descriptor_size = descriptor_size
        self.n_filters = n_filters
        self.n_blocks = n_blocks
        self.hidden = hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.momentum = momentum
        self.random_state = random_state

    def _adjacency(self):
        if self.adjacency is not None:
            return np.asarray(self.adjacency, dtype=np.float64)
        if self.n_nodes is None:
            raise ContractError("give either adjacency or n_nodes")
        return adjacency_matrix(self.n_nodes, default_topology(self.n_nodes))

    def _to_nodes(self, X):
        m, s = self.adjacency_.shape[0], self.descriptor_size
        if X.shape[1] < m * s:
            raise ContractError(f"rows of length {X.shape[1]} hold fewer than {m}*{s} values")
        return X[:, : m * s].reshape(X.shape[0], m, s)

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.adjacency_ = self._adjacency()
        enc = LabelEncoder().fit(y)
        self.classes_ = enc.classes_
        yi = enc.transform(y)
        U = self._to_nodes(X)
        rng = make_rng(self.random_state)
        template = init_network(self.adjacency_.shape[0], self.descriptor_size,
                                len(self.classes_), self.n_filters, self.n_blocks,
                                self.hidden, rng)
        A = self.adjacency_

        def loss_grad(params, idx):
            return loss_and_grads(GraphConvNet.from_params(params, template), U[idx], A, yi[idx])

        params, losses, _ = minimize(template.params(), loss_grad, X.shape[0], self.epochs,
                                     self.batch_size, self.lr, self.momentum, rng)
        self.network_ = GraphConvNet.from_params(params, template)
        self.loss_curve_ = losses
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "network_")
        X = check_array(X, dtype=np.float64)
        return scores(self.network_, self._to_nodes(X), self.adjacency_)

    def predict_proba(self, X):
        return softmax(self.decision_function(X), axis=1)

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]
