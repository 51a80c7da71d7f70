"""Pool-based active learning with designed or sampled displays.

Each round builds a display of ``K`` pool samples, asks the oracle for their
labels, retrains the classifier from scratch on everything labeled so far and
scores it on a held-out split. Designed displays come from the exemplar
solver, run either on the raw features (``designed_ambient``) or on their
image under the invertible network (``designed_latent``), then grounded to
the nearest unlabeled pool samples.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .display import DisplayProblem, default_hypers, solve
from .gcn import GraphConvClassifier
from .invertible import OrthonormalNetClassifier, certify, latent_map, latent_unmap
from .numerics import ContractError, make_rng, pairwise_sq_dists
from .strategies import (STRATEGIES, diversity_coreset_pick, ground_exemplars,
                         macro_accuracy, random_pick, uncertainty_margin_pick)

log = logging.getLogger(__name__)


class BudgetExhausted(Exception):
    """Every pool sample is already labeled."""


class Oracle:
    """Hands out hidden labels and keeps a ledger of what was asked."""

    def __init__(self, labels):
        self._labels = np.asarray(labels).copy()
        self.queried = []

    def __len__(self):
        return self._labels.size

    def query(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        self.queried.extend(indices.tolist())
        return self._labels[indices].copy()

    @property
    def repeated_queries(self):
        return len(self.queried) - len(set(self.queried))


@dataclass
class ALRun:
    T: int
    K: int
    n: int
    t: int = 0
    displays: list = field(default_factory=list)
    labels: list = field(default_factory=list)
    H: np.ndarray | None = None  # designed exemplars so far, ambient, (p, N)
    classifier: object = None
    accuracy: list = field(default_factory=list)
    records: list = field(default_factory=list)

    @property
    def labeled(self):
        if not self.displays:
            return np.array([], dtype=np.int64)
        return np.concatenate(self.displays)

    @property
    def labeling_rate(self):
        return self.labeled.size / self.n

    @property
    def done(self):
        return self.t >= self.T or self.labeled.size >= self.n


def rounds_for_rate(rate, n, K):
    """Rounds needed to label a fraction ``rate`` of ``n`` samples, ``K`` at a time."""
    return max(1, math.ceil(rate * n / K - 1e-9))


def _seed(base, *keys):
    return np.random.SeedSequence([int(base) & 0xFFFFFFFF, *keys])


class ActiveLearner(BaseEstimator):
    """Run a labeling budget with one display strategy.

    Parameters
    ----------
    strategy : str
        One of ``designed_ambient``, ``designed_latent``, ``random``,
        ``uncertainty_margin``, ``diversity_coreset``.
    labeling_rate : float
        Target fraction of the pool to label; rounds = ceil(rate * n / K).
    display_size : int
        Exemplars (labels) per round.
    display_tol, display_max_iter, sigma_ratio, gamma : exemplar solver settings.
    depth, u, l, lam : invertible network settings (``lam=None`` -> 1/p).
    epochs, batch_size, lr, momentum : training schedule.
    classifier : "latent" or "gcn"
        ``latent`` scores classes through the head of the invertible network;
        ``gcn`` additionally trains a graph-convolution classifier and uses it
        for margins and accuracy.
    gcn_params : dict or None
        Extra keyword arguments for :class:`GraphConvClassifier`.
    random_state : int

    Attributes
    ----------
    run_ : ALRun
    accuracy_trace_ : list of float
    labeled_indices_ : ndarray
    """

    def __init__(self, strategy="designed_latent", labeling_rate=0.15, display_size=12,
                 display_tol=1e-6, display_max_iter=200, sigma_ratio=2.0, gamma="adaptive",
                 depth=3, u=0.99, l=0.95, lam=None, epochs=500, batch_size=200, lr=0.01,
                 momentum=0.9, classifier="latent", gcn_params=None, random_state=0):
        self.strategy = strategy
        self.labeling_rate = labeling_rate
        self.display_size = display_size
        self.display_tol = display_tol
        self.display_max_iter = display_max_iter
        self.sigma_ratio = sigma_ratio
        self.gamma = gamma
        self.depth = depth
        self.u = u
        self.l = l
        self.lam = lam
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.momentum = momentum
        self.classifier = classifier
        self.gcn_params = gcn_params
        self.random_state = random_state

    # -- setup -------------------------------------------------------------

    def start(self, X, y, eval_set=None):
        """Validate inputs and return a fresh :class:`ALRun`."""
        if self.strategy not in STRATEGIES:
            raise ContractError(f"unknown strategy {self.strategy!r}")
        if self.classifier not in ("latent", "gcn"):
            raise ContractError(f"unknown classifier {self.classifier!r}")
        if not 0 < self.labeling_rate <= 1:
            raise ContractError("labeling_rate must be in (0, 1]")
        X = check_array(X, dtype=np.float64)
        if self.display_size < 1 or self.display_size > X.shape[0]:
            raise ContractError("display_size must be between 1 and the pool size")
        self.X_ = X
        self.oracle_ = Oracle(y)
        self.classes_ = np.unique(y)
        if eval_set is None:
            eval_set = (X, y)
        self.eval_X_ = check_array(eval_set[0], dtype=np.float64)
        self.eval_y_ = np.asarray(eval_set[1])
        n, p = X.shape
        T = rounds_for_rate(self.labeling_rate, n, self.display_size)
        return ALRun(T=T, K=self.display_size, n=n, H=np.zeros((p, 0)))

    def _mapper(self, seed):
        return OrthonormalNetClassifier(
            depth=self.depth, u=self.u, l=self.l, lam=self.lam, epochs=self.epochs,
            batch_size=self.batch_size, lr=self.lr, momentum=self.momentum, project=True,
            random_state=seed)

    # -- one round ---------------------------------------------------------

    def _design(self, run, rng_init, latent):
        X = self.X_.T
        H = run.H
        info = {}
        if latent:
            mapper = run.classifier["mapper"] if run.classifier else None
            if mapper is None:
                mapper = self._mapper(_seed(self.random_state, run.t, 7))
                mapper.init_unfitted(X.shape[0], len(self.classes_))
            net = mapper.net_
            cert = certify(net, _seed(self.random_state, run.t, 3), 200)
            info["certificate"] = cert.summary()
            X = latent_map(net, X)
            H = latent_map(net, H)
        K, N = run.K, H.shape[1]
        alpha, beta, _, sigma = default_hypers(X.shape[1], X.shape[0], K, N,
                                               sigma_ratio=self.sigma_ratio)
        gamma_mode = self.gamma
        prob = DisplayProblem(X, H, K, alpha=alpha, beta=beta,
                              gamma=1.0 if isinstance(gamma_mode, str) else float(gamma_mode),
                              sigma=sigma if sigma > 0 else 1.0)
        free = np.setdiff1d(np.arange(run.n), run.labeled)
        state = solve(prob, make_rng(rng_init), self.display_max_iter, self.display_tol, gamma_mode,
                      candidates=free)
        info["solver_iterations"] = state.iteration
        V = state.V
        if latent:
            V = latent_unmap(net, V, cert)
        return V, info

    def _pick(self, run):
        strat = self.strategy
        labeled = run.labeled
        n = run.n
        info = {}
        designed = None
        if strat == "random":
            picks = random_pick(n, run.K, labeled, _seed(self.random_state, run.t, 1))
        elif strat == "uncertainty_margin":
            if run.classifier is None:
                info["fallback"] = "random (no classifier yet)"
                log.info("round %d: margin strategy falls back to random", run.t)
                picks = random_pick(n, run.K, labeled, _seed(self.random_state, run.t, 1))
            else:
                proba = run.classifier["scorer"].predict_proba(self.X_)
                picks = uncertainty_margin_pick(proba, run.K, labeled)
        elif strat == "diversity_coreset":
            picks = diversity_coreset_pick(self.X_.T, run.K, labeled)
        else:
            designed, info = self._design(run, _seed(self.random_state, run.t, 2),
                                          latent=strat == "designed_latent")
            picks = ground_exemplars(designed, self.X_.T, labeled)
            if picks.size < run.K:
                info["warning"] = f"partial display: {picks.size} of {run.K}"
        return picks, designed, info

    def _retrain(self, run, idx, y):
        Xl = self.X_[idx]
        mapper = self._mapper(_seed(self.random_state, run.t, 4))
        mapper.fit(Xl, y)
        scorer = mapper
        if self.classifier == "gcn":
            params = dict(self.gcn_params or {})
            params.setdefault("epochs", self.epochs)
            params.setdefault("random_state", _seed(self.random_state, run.t, 5))
            scorer = GraphConvClassifier(**params).fit(Xl, y)
        return {"mapper": mapper, "scorer": scorer}

    def round(self, run):
        """Play one round in place and return ``run``."""
        if run.labeled.size >= run.n:
            raise BudgetExhausted("every pool sample is labeled")
        if run.t >= run.T:
            raise BudgetExhausted(f"round budget of {run.T} spent")
        picks, designed, info = self._pick(run)
        y_new = self.oracle_.query(picks)
        run.displays.append(picks)
        run.labels.append(y_new)
        idx = run.labeled
        y_all = np.concatenate(run.labels)
        run.classifier = self._retrain(run, idx, y_all)
        if designed is not None:
            run.H = np.concatenate([run.H, designed], axis=1)
        pred = run.classifier["scorer"].predict(self.eval_X_)
        acc, omitted = macro_accuracy(self.eval_y_, pred, self.classes_)
        run.accuracy.append(acc)
        record = {
            "round": run.t,
            "strategy": self.strategy,
            "picked": picks.tolist(),
            "labeling_rate": run.labeling_rate,
            "accuracy": acc,
            "solver_iterations": info.get("solver_iterations"),
            "certificate": info.get("certificate"),
        }
        for key in ("fallback", "warning"):
            if key in info:
                record[key] = info[key]
        if omitted:
            record["omitted_classes"] = omitted
        run.records.append(record)
        run.t += 1
        return run

    # -- estimator API -----------------------------------------------------

    def fit(self, X, y, eval_set=None, on_round=None):
        """Run every round; ``y`` is the oracle's hidden ground truth.

        ``on_round(record)`` is called after each round.
        """
        run = self.start(X, y, eval_set)
        while not run.done:
            self.round(run)
            if on_round is not None:
                on_round(run.records[-1])
        self.run_ = run
        self.accuracy_trace_ = list(run.accuracy)
        self.labeled_indices_ = run.labeled
        self.records_ = run.records
        return self

    def predict(self, X):
        check_is_fitted(self, "run_")
        return self.run_.classifier["scorer"].predict(X)

    def score(self, X, y):
        return macro_accuracy(y, self.predict(X))[0]


def nearest_neighbor_distances(X):
    """Distance from each column of ``X`` to its nearest other column."""
    D = pairwise_sq_dists(X, X)
    np.fill_diagonal(D, np.inf)
    return np.sqrt(D.min(axis=1))


def realism_gap(V, X, picks):
    """Distances between designed exemplars and their grounded pool samples."""
    return np.sqrt(np.sum((V[:, : len(picks)] - X[:, picks]) ** 2, axis=0))
