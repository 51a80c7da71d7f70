import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from labelfrugal.invertible import (ActivationSpec, CertificationError, LayerStack,
                                    OrthonormalNetClassifier, certify, forward, inverse,
                                    latent_map, latent_unmap, lipschitz_bounds, load_checkpoint,
                                    loss_and_grads, ortho_penalty, project, save_checkpoint,
                                    train)
from labelfrugal.numerics import ContractError, finite_diff_grad


def identity_net(d=3, depth=2):
    return LayerStack([np.eye(d)] * (depth - 1))


# -- activation and forward map -----------------------------------------------

def test_identity_net_scales_by_slopes():
    net = identity_net()
    np.testing.assert_allclose(forward(net, np.array([1.0, 2.0, 3.0]))[0], [0.99, 1.98, 2.97])
    np.testing.assert_allclose(forward(net, -np.array([1.0, 2.0, 3.0]))[0], [-0.95, -1.9, -2.85])


def test_activation_inverse_of_negative_scalar():
    g = ActivationSpec()
    assert g.inverse(g(-2.0)) == -2.0


def test_activation_slopes_validated():
    with pytest.raises(ValueError):
        ActivationSpec(u=0.9, l=0.95)
    with pytest.raises(ValueError):
        ActivationSpec(u=0.99, l=0.0)


def test_zero_maps_to_zero():
    net = LayerStack.random(5, 4, 0)
    assert np.all(latent_map(net, np.zeros((5, 1))) == 0)


def test_forward_contraction_on_random_pairs(rng):
    net = LayerStack.random(4, 3, rng)
    x1, x2 = rng.standard_normal((4, 1000)), rng.standard_normal((4, 1000))
    ratio = (np.linalg.norm(latent_map(net, x1) - latent_map(net, x2), axis=0)
             / np.linalg.norm(x1 - x2, axis=0))
    assert ratio.max() <= 0.99 ** 2 + 1e-12


# -- inverse --------------------------------------------------------------------

def test_inverse_round_trip(rng):
    net = LayerStack.random(6, 3, rng)
    x = rng.standard_normal((6, 1000)) * 3
    assert np.max(np.abs(inverse(net, forward(net, x)[0]) - x)) < 1e-9


@given(st.integers(2, 5), st.integers(1, 8), st.integers(0, 2 ** 32 - 1))
def test_inverse_round_trip_property(depth, dim, seed):
    rng = np.random.default_rng(seed)
    net = LayerStack.random(dim, depth, rng)
    x = rng.standard_normal((dim, 20)) * 10
    np.testing.assert_allclose(inverse(net, latent_map(net, x)), x, atol=1e-9 * (1 + np.abs(x).max()))


def test_inverse_expansion_bounded(rng):
    net = LayerStack.random(4, 3, rng)
    y1, y2 = rng.standard_normal((4, 1000)), rng.standard_normal((4, 1000))
    ratio = (np.linalg.norm(inverse(net, y1) - inverse(net, y2), axis=0)
             / np.linalg.norm(y1 - y2, axis=0))
    assert ratio.max() <= (1 / 0.95) ** 2 + 1e-12


def test_inverse_refuses_non_orthonormal_weights(rng):
    net = LayerStack.random(4, 3, rng)
    net.weights[1] = net.weights[1] * 1.01
    with pytest.raises(CertificationError, match="layer 3"):
        inverse(net, np.ones(4))
    assert np.max(np.abs(inverse(project(net), np.ones(4)))) < np.inf


# -- certificate ----------------------------------------------------------------

def test_bounds_formula():
    K, M = lipschitz_bounds(3, ActivationSpec())
    assert K == pytest.approx(0.9801)
    assert M == pytest.approx(1 / 0.95 ** 2)
    assert M == pytest.approx(1.1080, abs=1e-4)


def test_certificate_valid_then_flags_scaled_weights(rng):
    net = LayerStack.random(5, 3, rng)
    cert = certify(net, 1, 2000)
    assert cert.valid and cert.K_emp <= cert.K_bound + 1e-9
    net.weights = [2 * W for W in net.weights]
    bad = certify(net, 1, 2000)
    assert not bad.forward_ok and not bad.valid


def test_unmap_requires_a_valid_certificate(rng):
    net = LayerStack.random(4, 3, rng)
    V = rng.standard_normal((4, 3))
    np.testing.assert_allclose(latent_unmap(net, latent_map(net, V)), V, atol=1e-12)
    scaled = LayerStack([2 * W for W in net.weights])
    with pytest.raises(CertificationError):
        latent_unmap(scaled, V)


def test_latent_perturbation_stays_bounded(rng):
    net = LayerStack.random(6, 3, rng)
    _, M = lipschitz_bounds(3, net.activation)
    Z = rng.standard_normal((6, 50))
    delta = 1e-3 * rng.standard_normal((6, 50))
    moved = np.linalg.norm(inverse(net, Z + delta) - inverse(net, Z), axis=0)
    assert np.all(moved <= M * np.linalg.norm(delta, axis=0) + 1e-9)


# -- penalty and gradients ------------------------------------------------------

def test_penalty_examples():
    assert ortho_penalty(identity_net(3, 3))[0] == 0.0
    total, grads = ortho_penalty(LayerStack([2 * np.eye(3)]))
    assert total == pytest.approx(3 * math.sqrt(3))
    np.testing.assert_array_equal(ortho_penalty(identity_net())[1][0], 0.0)


def test_penalty_gradient_matches_finite_differences(rng):
    W = rng.standard_normal((4, 4))
    f = lambda M: ortho_penalty(LayerStack([M]))[0]
    np.testing.assert_allclose(ortho_penalty(LayerStack([W]))[1][0], finite_diff_grad(f, W, 1e-6),
                               rtol=1e-5, atol=1e-8)


def test_total_loss_gradient_on_two_layer_net(rng):
    d, C, n = 3, 2, 7
    net = LayerStack([rng.standard_normal((d, d))], lam=0.3)
    head = rng.standard_normal((d, C))
    X, y = rng.standard_normal((d, n)), rng.integers(0, C, n)
    _, gw, gh = loss_and_grads(net, head, X, y, 0.3)
    fw = lambda W: loss_and_grads(LayerStack([W]), head, X, y, 0.3)[0]
    fh = lambda H: loss_and_grads(net, H, X, y, 0.3)[0]
    np.testing.assert_allclose(gw[0], finite_diff_grad(fw, net.weights[0], 1e-6), rtol=1e-5, atol=1e-9)
    np.testing.assert_allclose(gh, finite_diff_grad(fh, head, 1e-6), rtol=1e-5, atol=1e-9)


# -- training -------------------------------------------------------------------

def toy_two_class(rng, d=8, n=60):
    X = rng.standard_normal((d, n))
    y = (X[0] + 0.5 * X[1] > 0).astype(int)
    return X, y


@pytest.mark.parametrize("seed", range(3))
def test_huge_penalty_restores_orthonormality(seed):
    rng = np.random.default_rng(seed)
    X, y = toy_two_class(rng, d=4)
    net = LayerStack([rng.standard_normal((4, 4)) for _ in range(2)])
    start = ortho_penalty(net)[0]
    # lr0 * lam must stay small: the penalty gradient has norm about 2 per layer
    res = train(net, 0.01 * rng.standard_normal((4, 2)), X, y, epochs=500, lr0=1e-5, lam=100.0,
                rng=0)
    assert ortho_penalty(res.net)[0] < 5e-3 * start


def test_training_is_deterministic(rng):
    X, y = toy_two_class(rng)
    a = OrthonormalNetClassifier(epochs=20, random_state=3).fit(X.T, y)
    b = OrthonormalNetClassifier(epochs=20, random_state=3).fit(X.T, y)
    assert all(np.array_equal(u, v) for u, v in zip(a.net_.weights, b.net_.weights))
    assert np.array_equal(a.head_, b.head_)


def test_classifier_estimator_api(rng):
    X, y = toy_two_class(rng)
    clf = OrthonormalNetClassifier(epochs=200, random_state=0).fit(X.T, y)
    assert clf.score(X.T, y) == 1.0
    P = clf.predict_proba(X.T)
    np.testing.assert_allclose(P.sum(axis=1), 1.0)
    Z = clf.transform(X.T)
    np.testing.assert_allclose(clf.inverse_transform(Z), X.T, atol=1e-9)
    assert clf.certify(200).valid
    assert clf.get_params()["depth"] == 3


def test_depth_validated():
    with pytest.raises(ContractError):
        LayerStack.random(3, 1)


# -- checkpoints ----------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path, rng):
    net = LayerStack.random(4, 3, 9)
    head = rng.standard_normal((4, 2))
    path = tmp_path / "net.json"
    save_checkpoint(net, path, head, [0, 1])
    loaded, h, classes = load_checkpoint(path)
    assert all(np.array_equal(a, b) for a, b in zip(loaded.weights, net.weights))
    assert np.array_equal(h, head) and classes == [0, 1]
    assert loaded.activation == net.activation and loaded.seed == 9


def test_checkpoint_rejects_foreign_files(tmp_path):
    path = tmp_path / "x.json"
    path.write_text('{"format": "other"}')
    with pytest.raises(ValueError, match="not a layer-stack checkpoint"):
        load_checkpoint(path)
