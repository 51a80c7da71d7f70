import numpy as np
import pytest

from labelfrugal.gcn import (GCN_ACTIVATION, GcnBlock, GraphConvClassifier, GraphConvNet, classify,
                             init_network, loss_and_grads, scores)
from labelfrugal.numerics import ContractError, finite_diff_grad
from labelfrugal.skeleton import SkeletonSequence, adjacency_matrix, build_graph, synth_pool


def small_net(rng, m=4, s=6, C=3, hidden=5):
    net = init_network(m, s, C, n_filters=3, n_blocks=2, hidden=hidden, rng=rng)
    net.fc_bias = rng.standard_normal(hidden)
    net.out_bias = rng.standard_normal(C)
    return net


def test_zero_signal_scores_come_from_biases(rng):
    net = init_network(4, 6, 3, rng=rng)
    net.out_bias = np.array([0.5, -1.0, 2.0])
    A = adjacency_matrix(4, [(0, 1), (1, 2), (2, 3)])
    np.testing.assert_array_equal(scores(net, np.zeros((1, 4, 6)), A)[0], net.out_bias)


def test_single_node_block_is_a_dense_layer(rng):
    W = rng.standard_normal((5, 3))
    z = rng.standard_normal((1, 1, 5))
    out = GcnBlock(W)(z, np.array([[1.0]]))
    np.testing.assert_allclose(out[0, 0], GCN_ACTIVATION(z[0, 0] @ W), rtol=1e-15)


def test_node_permutation_consistency(rng):
    m, s = 5, 6
    net = small_net(rng, m, s)
    A = adjacency_matrix(m, [(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)])
    U = rng.standard_normal((3, m, s))
    perm = rng.permutation(m)
    # permute nodes, adjacency and the node blocks of the fully connected layer together
    f = net.blocks[-1].conv_weights.shape[1]
    fc = net.fc_weights.reshape(m, f, -1)[perm].reshape(m * f, -1)
    pnet = GraphConvNet(net.blocks, fc, net.fc_bias, net.out_weights, net.out_bias)
    np.testing.assert_allclose(scores(pnet, U[:, perm], A[np.ix_(perm, perm)]), scores(net, U, A),
                               atol=1e-9)


def test_gradients_match_finite_differences(rng):
    m, s = 4, 6
    net = small_net(rng, m, s)
    A = adjacency_matrix(m, [(0, 1), (1, 2), (2, 3)])
    U, y = rng.standard_normal((5, m, s)), rng.integers(0, 3, 5)
    _, grads = loss_and_grads(net, U, A, y)
    params = net.params()
    for i, p in enumerate(params):
        def f(x, i=i):
            ps = [q.copy() for q in params]
            ps[i] = x
            return loss_and_grads(GraphConvNet.from_params(ps, net), U, A, y)[0]
        np.testing.assert_allclose(grads[i], finite_diff_grad(f, p, 1e-6), rtol=1e-4, atol=1e-7)


def test_classify_single_graph_and_shape_checks(rng):
    seq = SkeletonSequence(rng.standard_normal((8, 4, 3)))
    g = build_graph(seq, chunks=4)
    net = init_network(4, 12, 2, rng=rng)
    assert classify(net, g).shape == (2,)
    with pytest.raises(ContractError):
        classify(init_network(4, 6, 2, rng=rng), g)
    with pytest.raises(ContractError):
        classify(init_network(5, 12, 2, rng=rng), g)


def test_classifier_learns_easy_pool():
    pool = synth_pool(3, 10, 4, 8, 0.2, 0, test_per_class=5)
    train, test = pool.train_test()
    clf = GraphConvClassifier(n_nodes=4, epochs=150, random_state=0).fit(train.features, train.labels)
    assert clf.score(test.features, test.labels) >= 0.9
    np.testing.assert_allclose(clf.predict_proba(test.features).sum(axis=1), 1.0)
    again = GraphConvClassifier(n_nodes=4, epochs=150, random_state=0).fit(train.features, train.labels)
    assert np.array_equal(clf.decision_function(test.features), again.decision_function(test.features))


def test_classifier_needs_a_graph():
    with pytest.raises(ContractError):
        GraphConvClassifier().fit(np.zeros((2, 12)), [0, 1])
