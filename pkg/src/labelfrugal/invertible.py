"""Invertible, bi-Lipschitz dense network and its classifier head.

The latent map is a stack of square layers ``phi_l = g(W_l' phi_{l-1})``,
``l = 2..L``, with a leaky-ReLU ``g`` of slopes ``u`` (positive side) and
``l`` (negative side), ``0 < l < u``. When every ``W_l`` is orthonormal the map
is invertible in closed form, ``phi_{l-1} = W_l g^{-1}(phi_l)``, and it is
``u^(L-1)``-Lipschitz with a ``(1/l)^(L-1)``-Lipschitz inverse.

Training minimizes cross-entropy of a linear head on top of the latent output
plus ``lam * sum_l ||W_l' W_l - I||_F``, which keeps the weights close to
orthonormal; :func:`project` snaps them back exactly.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_softmax, softmax
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .numerics import ContractError, make_rng, polar_project, random_orthonormal
from .training import minimize

CHECKPOINT_VERSION = 1


class CertificationError(RuntimeError):
    """The network does not satisfy the orthonormality/Lipschitz contract."""


@dataclass(frozen=True)
class ActivationSpec:
    u: float = 0.99
    l: float = 0.95

    def __post_init__(self):
        if not 0 < self.l < self.u:
            raise ContractError(f"need 0 < l < u, got l={self.l}, u={self.u}")

    def __call__(self, x):
        return np.where(x >= 0, self.u * x, self.l * x)

    def inverse(self, y):
        return np.where(y >= 0, y / self.u, y / self.l)

    def derivative(self, x):
        return np.where(x >= 0, self.u, self.l)


@dataclass
class LayerStack:
    """Square weights ``W_2..W_L`` (so ``depth = len(weights) + 1``)."""

    weights: list
    activation: ActivationSpec = field(default_factory=ActivationSpec)
    lam: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        self.weights = [np.asarray(W, dtype=np.float64) for W in self.weights]
        if not self.weights:
            raise ContractError("a layer stack needs at least one weight matrix")
        d = self.weights[0].shape[0]
        for W in self.weights:
            if W.shape != (d, d):
                raise ContractError("all weights must be square with equal dimension")

    @property
    def dim(self):
        return self.weights[0].shape[0]

    @property
    def depth(self):
        return len(self.weights) + 1

    @classmethod
    def random(cls, dim, depth, rng=None, activation=None, lam=None):
        """Random orthonormal weights; ``lam`` defaults to ``1/dim``."""
        if depth < 2:
            raise ContractError("depth must be at least 2")
        seed = rng if isinstance(rng, (int, np.integer)) else None
        rng = make_rng(rng)
        weights = [random_orthonormal(dim, rng) for _ in range(depth - 1)]
        return cls(weights, activation or ActivationSpec(), 1.0 / dim if lam is None else lam,
                   None if seed is None else int(seed))

    def copy(self):
        return LayerStack([W.copy() for W in self.weights], self.activation, self.lam, self.seed)


def forward(net, x):
    """Apply the stack to a vector or to the columns of a matrix.

    Returns the output and the list of pre-activations ``W_l' phi_{l-1}``.
    """
    phi = np.asarray(x, dtype=np.float64)
    trace = []
    for W in net.weights:
        z = W.T @ phi
        trace.append(z)
        phi = net.activation(z)
    return phi, trace


def ortho_residuals(net):
    """``||W_l' W_l - I||_F`` for each layer."""
    eye = np.eye(net.dim)
    return np.array([np.linalg.norm(W.T @ W - eye) for W in net.weights])


def inverse(net, y, ortho_tol=1e-6):
    """Closed-form inverse using ``(W')^{-1} = W``.

    Raises :class:`CertificationError` when some layer is further than
    ``ortho_tol`` from orthonormal; call :func:`project` first.
    """
    res = ortho_residuals(net)
    if np.any(res > ortho_tol):
        worst = int(np.argmax(res))
        raise CertificationError(
            f"layer {worst + 2} has ||W'W - I||_F = {res[worst]:.3g} > {ortho_tol:g}; "
            "re-project the weights before inverting")
    phi = np.asarray(y, dtype=np.float64)
    for W in reversed(net.weights):
        phi = W @ net.activation.inverse(phi)
    return phi


def _exact_inverse(net, y):
    phi = np.asarray(y, dtype=np.float64)
    for W in reversed(net.weights):
        phi = np.linalg.solve(W.T, net.activation.inverse(phi))
    return phi


def project(net):
    """Copy of ``net`` with every weight replaced by its polar factor."""
    out = net.copy()
    out.weights = [polar_project(W) for W in net.weights]
    return out


def ortho_penalty(net):
    """``sum_l ||W_l' W_l - I||_F`` and its gradient with respect to each ``W_l``.

    The gradient of one term is ``2 W (W'W - I) / ||W'W - I||_F``; at the
    norm's zero it is taken as 0.
    """
    eye = np.eye(net.dim)
    total, grads = 0.0, []
    for W in net.weights:
        R = W.T @ W - eye
        norm = np.linalg.norm(R)
        total += norm
        grads.append(2.0 * W @ R / norm if norm > 0 else np.zeros_like(W))
    return total, grads


@dataclass
class LipschitzCertificate:
    K_bound: float
    M_bound: float
    K_emp: float
    M_emp: float
    samples: int
    tol: float = 1e-9

    @property
    def forward_ok(self):
        return self.K_emp <= self.K_bound + self.tol

    @property
    def inverse_ok(self):
        return self.M_emp <= self.M_bound + self.tol

    @property
    def valid(self):
        return self.forward_ok and self.inverse_ok

    def summary(self):
        return {"K_bound": self.K_bound, "M_bound": self.M_bound, "K_emp": self.K_emp,
                "M_emp": self.M_emp, "samples": self.samples, "valid": self.valid}


def lipschitz_bounds(depth, activation):
    return activation.u ** (depth - 1), (1.0 / activation.l) ** (depth - 1)


def certify(net, rng=None, samples=1000, tol=1e-9):
    """Closed-form bi-Lipschitz bounds plus the largest sampled expansion ratios.

    Half of the pairs are independent Gaussian points, half are small
    perturbations of a Gaussian point (local slopes). The inverse side is
    evaluated with linear solves, so nets that are not orthonormal can still
    be measured and flagged.
    """
    if samples < 2:
        raise ContractError("need at least 2 samples")
    rng = make_rng(rng)
    d = net.dim
    half = samples // 2
    a = rng.standard_normal((d, samples))
    b = np.empty_like(a)
    b[:, :half] = rng.standard_normal((d, half))
    scales = 10.0 ** rng.uniform(-4, 0, size=samples - half)
    b[:, half:] = a[:, half:] + scales * rng.standard_normal((d, samples - half))

    def max_ratio(f, x1, x2):
        num = np.linalg.norm(f(x1) - f(x2), axis=0)
        den = np.linalg.norm(x1 - x2, axis=0)
        return float(np.max(num / den))

    fwd = lambda x: forward(net, x)[0]
    inv = lambda y: _exact_inverse(net, y)
    K_bound, M_bound = lipschitz_bounds(net.depth, net.activation)
    return LipschitzCertificate(K_bound, M_bound, max_ratio(fwd, a, b), max_ratio(inv, a, b),
                                samples, tol)


def latent_map(net, X):
    """Forward image of every column of ``X`` (d x n)."""
    return forward(net, X)[0]


def latent_unmap(net, V, certificate=None):
    """Inverse image of latent columns; refuses nets without a valid certificate."""
    cert = certificate if certificate is not None else certify(net, 0, 200)
    if not cert.valid:
        raise CertificationError(
            f"certificate failed (K_emp={cert.K_emp:.6g} vs {cert.K_bound:.6g}, "
            f"M_emp={cert.M_emp:.6g} vs {cert.M_bound:.6g}); refusing to unmap")
    return inverse(net, V)


def save_checkpoint(net, path, head=None, classes=None):
    doc = {
        "format": "labelfrugal.layerstack",
        "version": CHECKPOINT_VERSION,
        "dim": net.dim,
        "depth": net.depth,
        "u": net.activation.u,
        "l": net.activation.l,
        "lambda": net.lam,
        "seed": net.seed,
        "weights": [W.tolist() for W in net.weights],
    }
    if head is not None:
        doc["head"] = np.asarray(head).tolist()
        doc["classes"] = None if classes is None else np.asarray(classes).tolist()
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_checkpoint(path):
    """Returns ``(net, head, classes)``; head and classes may be None."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != "labelfrugal.layerstack":
        raise ValueError(f"{path}: not a layer-stack checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    net = LayerStack([np.array(W) for W in doc["weights"]],
                     ActivationSpec(doc["u"], doc["l"]), doc["lambda"], doc.get("seed"))
    if net.depth != doc["depth"] or net.dim != doc["dim"]:
        raise ValueError(f"{path}: declared dims do not match the stored weights")
    head = np.array(doc["head"]) if "head" in doc else None
    return net, head, doc.get("classes")


# -- training --------------------------------------------------------------

def loss_and_grads(net, head, X, y, lam):
    """Mean cross-entropy of ``head' f(X)`` plus ``lam`` times the penalty.

    Parameters
    ----------
    net : LayerStack
    head : array (d, C)
    X : array (d, n), samples as columns
    y : int array (n,), values in ``0..C-1``
    lam : float

    Returns
    -------
    loss, weight_grads, head_grad
    """
    n = X.shape[1]
    phis = [X]
    zs = []
    phi = X
    for W in net.weights:
        z = W.T @ phi
        zs.append(z)
        phi = net.activation(z)
        phis.append(phi)
    scores = head.T @ phi  # (C, n)
    logp = log_softmax(scores, axis=0)
    ce = -float(np.mean(logp[y, np.arange(n)]))
    dS = np.exp(logp)
    dS[y, np.arange(n)] -= 1.0
    dS /= n
    head_grad = phi @ dS.T
    dphi = head @ dS
    wgrads = [None] * len(net.weights)
    for i in range(len(net.weights) - 1, -1, -1):
        dz = dphi * net.activation.derivative(zs[i])
        wgrads[i] = phis[i] @ dz.T
        dphi = net.weights[i] @ dz
    pen, pgrads = ortho_penalty(net)
    if lam:
        wgrads = [g + lam * pg for g, pg in zip(wgrads, pgrads)]
    return ce + lam * pen, wgrads, head_grad


@dataclass
class TrainResult:
    net: LayerStack
    head: np.ndarray
    losses: list
    learning_rates: list


def train(net, head, X, y, epochs=500, batch=200, lr0=0.01, momentum=0.9, lam=None,
          rng=None, lr_factor=0.99):
    """Fit weights and head on ``(X, y)`` (samples as columns of ``X``)."""
    lam = net.lam if lam is None else lam
    nw = len(net.weights)

    def loss_grad(params, idx):
        stack = LayerStack(params[:nw], net.activation, lam, net.seed)
        loss, gw, gh = loss_and_grads(stack, params[nw], X[:, idx], y[idx], lam)
        return loss, gw + [gh]

    params, losses, rates = minimize(list(net.weights) + [head], loss_grad, X.shape[1],
                                     epochs, batch, lr0, momentum, rng, lr_factor)
    trained = LayerStack(params[:nw], net.activation, net.lam, net.seed)
    return TrainResult(trained, params[nw], losses, rates)


class OrthonormalNetClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Invertible latent map with a linear classification head.

    ``transform`` maps samples to the latent space, ``inverse_transform`` maps
    latent points back, and ``predict_proba`` reads class scores from the
    latent output through the head.

    Parameters
    ----------
    depth : int
        Network depth L (``L - 1`` weight matrices).
    u, l : float
        Leaky-ReLU slopes.
    lam : float or None
        Orthonormality weight; ``None`` means ``1 / n_features``.
    epochs, batch_size, lr, momentum : training schedule.
    project : bool
        Snap weights to the nearest orthonormal matrices after training.
    random_state : int or None
    """

    def __init__(self, depth=3, u=0.99, l=0.95, lam=None, epochs=500, batch_size=200,
                 lr=0.01, momentum=0.9, project=True, random_state=None):
        self.depth = depth
        self.u = u
        self.l = l
        self.lam = lam
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.momentum = momentum
        self.project = project
        self.random_state = random_state

    def _init(self, n_features, n_classes, rng):
        act = ActivationSpec(self.u, self.l)
        lam = 1.0 / n_features if self.lam is None else self.lam
        net = LayerStack.random(n_features, self.depth, rng, act, lam)
        head = 0.01 * rng.standard_normal((n_features, n_classes))
        return net, head

    def init_unfitted(self, n_features, n_classes=1):
        """Set a random orthonormal net without training (usable as a latent map)."""
        rng = make_rng(self.random_state)
        self.net_, self.head_ = self._init(n_features, n_classes, rng)
        self.classes_ = np.arange(n_classes)
        self.n_features_in_ = n_features
        self.loss_curve_ = []
        return self

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        enc = LabelEncoder().fit(y)
        self.classes_ = enc.classes_
        yi = enc.transform(y)
        rng = make_rng(self.random_state)
        net, head = self._init(X.shape[1], len(self.classes_), rng)
        res = train(net, head, X.T, yi, self.epochs, self.batch_size, self.lr,
                    self.momentum, net.lam, rng)
        self.net_ = project(res.net) if self.project else res.net
        self.head_ = res.head
        self.loss_curve_ = res.losses
        self.ortho_residual_ = float(ortho_residuals(res.net).sum())
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "net_")
        X = check_array(X, dtype=np.float64)
        return (self.head_.T @ forward(self.net_, X.T)[0]).T

    def predict_proba(self, X):
        return softmax(self.decision_function(X), axis=1)

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]

    def transform(self, X):
        check_is_fitted(self, "net_")
        X = check_array(X, dtype=np.float64)
        return latent_map(self.net_, X.T).T

    def inverse_transform(self, Z):
        check_is_fitted(self, "net_")
        Z = check_array(Z, dtype=np.float64)
        return inverse(self.net_, Z.T).T

    def certify(self, samples=1000, rng=0):
        check_is_fitted(self, "net_")
        return certify(self.net_, rng, samples)
