"""Exemplar design by fixed-point iteration.

The display objective over memberships ``mu`` (n x K, column-stochastic) and
exemplars ``V`` (p x K) is::

    sum_ik mu_ik d(x_i, V_k)                       representativity
    + alpha * sum_{k,k'} exp(-||V_k - H_k'||^2 / sigma)   diversity vs. history H
    + beta  * tr(V'V)                               shrinkage
    + gamma * sum_ik mu_ik log mu_ik                entropy

with ``d`` the squared Euclidean distance. Minimizing over ``mu`` for fixed
``V`` gives a column-wise softmin of ``d / gamma``; the stationarity condition
in ``V`` gives the weighted-mean update implemented in :func:`update_V`.

Arrays follow the column convention (samples are columns). The
:class:`DisplayDesigner` estimator wraps the solver with the usual
``(n_samples, n_features)`` orientation.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, xlogy
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .numerics import ContractError, NumericError, as_matrix, make_rng, pairwise_sq_dists


class ParameterError(ContractError):
    """Hyperparameters are outside their admissible range."""


class DisplayDivergence(NumericError):
    """The fixed-point iteration produced non-finite values."""

    def __init__(self, iteration, msg="non-finite iterate"):
        super().__init__(f"{msg} at iteration {iteration}")
        self.iteration = iteration


@dataclass
class DisplayProblem:
    X: np.ndarray
    H: np.ndarray
    K: int
    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 1.0
    sigma: float = 1.0

    def __post_init__(self):
        self.X = as_matrix(self.X, "X")
        p = self.X.shape[0]
        if self.H is None:
            self.H = np.zeros((p, 0))
        self.H = np.asarray(self.H, dtype=np.float64).reshape(p, -1)
        if self.K < 1:
            raise ContractError("K must be at least 1")
        if not np.all(np.isfinite(self.X)):
            raise ContractError("pool X contains non-finite values")
        if min(self.alpha, self.beta) < 0 or self.gamma < 0 or self.sigma < 0:
            raise ParameterError("alpha, beta, gamma, sigma must be nonnegative")

    @property
    def n(self):
        return self.X.shape[1]

    @property
    def p(self):
        return self.X.shape[0]

    @property
    def N(self):
        return self.H.shape[1]


@dataclass
class DisplayState:
    V: np.ndarray
    mu: np.ndarray
    iteration: int = 0
    objective: float = float("nan")
    gamma: float = float("nan")
    converged: bool = False
    trace: list = field(default_factory=list)


GAMMA_MODES = ("adaptive", "mean", "nearest")
NEIGHBORS = 10


def default_hypers(n, p, K, N, dist_matrix=None, sigma_ratio=2.0, gamma_mode="adaptive",
                   X=None):
    """Balanced weights for the four objective terms.

    ``alpha = 1/(K N)`` (0 without history), ``beta = 1/(K p)``,
    ``sigma = sigma_ratio * alpha``. ``gamma`` is :func:`neighbor_gap_gamma`
    of ``X`` in ``"adaptive"`` mode and :func:`adaptive_gamma` of
    ``dist_matrix`` otherwise (``nan`` when the needed input is missing).
    """
    if K < 1 or p < 1:
        raise ContractError("K and p must be at least 1")
    alpha = 1.0 / (K * N) if N > 0 else 0.0
    beta = 1.0 / (K * p)
    sigma = sigma_ratio * alpha
    gamma = float("nan")
    if gamma_mode == "adaptive":
        if X is not None:
            gamma = neighbor_gap_gamma(X)
    elif dist_matrix is not None:
        gamma = adaptive_gamma(dist_matrix, gamma_mode)
    return alpha, beta, gamma, sigma


def neighbor_gap_gamma(X, k=NEIGHBORS):
    """Pool temperature: mean gap between the nearest and the ``k``-th nearest neighbor.

    Computed once from the pool columns of ``X`` (p x n). Distance gaps at
    this scale let the softmin tell a sample's close neighbors apart, so each
    exemplar settles on a local density peak near where it started instead of
    drifting to the global one.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[1]
    if n < 3:
        return 1.0
    k = min(k, n - 1)
    D = np.sort(pairwise_sq_dists(X, X), axis=1)  # column 0 is the point itself
    g = float(np.mean(D[:, 2:k + 1] - D[:, 1:2]))
    return g if g > 0 else 1.0


def adaptive_gamma(dist_matrix, mode="mean"):
    """Temperature refreshed from the current point/exemplar distances (n x K).

    ``"mean"`` averages over all pairs and ``"nearest"`` averages each point's
    distance to its nearest exemplar. Both grow as exemplars merge, and on
    multi-cluster pools they end with every exemplar on one mode.
    """
    D = np.asarray(dist_matrix)
    if mode == "nearest":
        g = float(np.mean(D.min(axis=1)))
    elif mode == "mean":
        g = float(np.mean(D))
    else:
        raise ParameterError(f"unknown gamma mode {mode!r}")
    # every point on an exemplar: any positive temperature gives the same mu
    return g if g > 0 else 1.0


def similarity_S(V, H, sigma):
    """``S[k', k] = exp(-||H_k' - V_k||^2 / sigma)``, shape (N, K)."""
    if sigma <= 0:
        raise ParameterError("sigma must be positive")
    return np.exp(-pairwise_sq_dists(H, V) / sigma)


def _diversity_active(prob):
    return prob.N > 0 and prob.alpha > 0


def objective(prob, state, gamma=None):
    """Value of the display objective at ``(state.mu, state.V)``."""
    gamma = prob.gamma if gamma is None else gamma
    V, mu = as_matrix(state.V), as_matrix(state.mu)
    if V.shape != (prob.p, prob.K) or mu.shape != (prob.n, prob.K):
        raise ContractError("state dimensions do not match the problem")
    D = pairwise_sq_dists(prob.X, V)
    value = float(np.sum(mu * D))
    if _diversity_active(prob):
        if prob.sigma <= 0:
            raise ParameterError("sigma must be positive when history is present")
        value += prob.alpha * float(similarity_S(V, prob.H, prob.sigma).sum())
    value += prob.beta * float(np.sum(V * V))
    if gamma:
        value += gamma * float(np.sum(xlogy(mu, mu)))
    return value


def update_mu(prob, V, gamma=None):
    """Column-wise softmin of ``d(X, V) / gamma``, computed in the log domain."""
    gamma = prob.gamma if gamma is None else gamma
    if not gamma > 0:
        raise ParameterError("gamma must be positive")
    logits = -pairwise_sq_dists(prob.X, V) / gamma
    return np.exp(logits - logsumexp(logits, axis=0, keepdims=True))


def update_V(prob, V, mu):
    """Exemplar update from the stationarity condition in ``V``.

    Column ``k`` becomes::

        (X mu_k + (alpha/sigma) * sum_k' S[k',k] (V_k - H_k')) / (sum_i mu_ik + beta)

    The fixed point of this map is exactly a zero of the objective's gradient
    in ``V``, and one application equals a gradient step of size
    ``1 / (2 (sum_i mu_ik + beta))``. The history term pushes exemplars away
    from ``H``.
    """
    V = as_matrix(V)
    numer = prob.X @ mu
    if _diversity_active(prob):
        S = similarity_S(V, prob.H, prob.sigma)
        numer = numer + (prob.alpha / prob.sigma) * (V * S.sum(axis=0)[None, :] - prob.H @ S)
    return numer / (mu.sum(axis=0) + prob.beta)[None, :]


def init_state(prob, rng, candidates=None):
    """Random memberships and exemplars drawn from the pool columns.

    ``candidates`` restricts the starting exemplars to those pool indices.
    """
    rng = make_rng(rng)
    mu = rng.random((prob.n, prob.K))
    mu /= mu.sum(axis=0, keepdims=True)
    pool = np.arange(prob.n) if candidates is None or len(candidates) == 0 else np.asarray(candidates)
    idx = rng.choice(pool, size=prob.K, replace=prob.K > pool.size)
    return DisplayState(V=prob.X[:, idx].copy(), mu=mu)


def solve(prob, init_rng=None, max_iters=200, tol=1e-6, gamma_mode="adaptive", record=False,
          candidates=None):
    """Alternate :func:`update_mu` and :func:`update_V` until the iterates settle.

    Parameters
    ----------
    prob : DisplayProblem
    init_rng : int, Generator or None
        Source of the random initialization.
    max_iters : int
    tol : float
        Stop once the max entrywise change of ``mu`` and ``V`` drops below it.
    gamma_mode : "adaptive", "mean", "nearest" or float
        ``"adaptive"`` fixes gamma once from the pool (see
        :func:`neighbor_gap_gamma`); ``"mean"`` and ``"nearest"`` refresh it
        every iteration (see :func:`adaptive_gamma`); a number is used as is.
    record : bool
        Keep a per-iteration trace (gamma, objective before/after, change).
    candidates : array of int or None
        Pool indices the starting exemplars are drawn from.

    Returns
    -------
    DisplayState
    """
    if max_iters < 1 or not tol > 0:
        raise ContractError("max_iters must be >= 1 and tol > 0")
    state = init_state(prob, init_rng, candidates)
    V, mu = state.V, state.mu
    if isinstance(gamma_mode, str) and gamma_mode not in GAMMA_MODES:
        raise ParameterError(f"unknown gamma mode {gamma_mode!r}")
    if gamma_mode == "adaptive":
        gamma = neighbor_gap_gamma(prob.X)
    elif isinstance(gamma_mode, str):
        gamma = prob.gamma
    else:
        gamma = float(gamma_mode)
        if not gamma > 0:
            raise ParameterError("gamma must be positive")
    for it in range(1, max_iters + 1):
        if gamma_mode in ("mean", "nearest"):
            gamma = adaptive_gamma(pairwise_sq_dists(prob.X, V), gamma_mode)
        mu_new = update_mu(prob, V, gamma)
        V_new = update_V(prob, V, mu_new)
        if not (np.all(np.isfinite(V_new)) and np.all(np.isfinite(mu_new))):
            raise DisplayDivergence(it)
        change = max(np.max(np.abs(mu_new - mu)), np.max(np.abs(V_new - V)))
        if record:
            state.trace.append({
                "iteration": it,
                "gamma": gamma,
                "objective_before": objective(prob, DisplayState(V, mu), gamma),
                "objective_after": objective(prob, DisplayState(V_new, mu_new), gamma),
                "column_sum_error": float(np.max(np.abs(mu_new.sum(axis=0) - 1.0))),
                "change": float(change),
            })
        V, mu = V_new, mu_new
        if change < tol:
            state.converged = True
            break
    state.V, state.mu, state.iteration, state.gamma = V, mu, it, gamma
    state.objective = objective(prob, state, gamma)
    if not np.isfinite(state.objective):
        raise DisplayDivergence(it, "non-finite objective")
    return state


class DisplayDesigner(BaseEstimator):
    """Design ``n_exemplars`` representative, diverse exemplars for a pool.

    Parameters
    ----------
    n_exemplars : int
        Display size K.
    alpha, beta, sigma : float or None
        Objective weights; ``None`` picks the balanced defaults of
        :func:`default_hypers`.
    sigma_ratio : float
        ``sigma = sigma_ratio * alpha`` when ``sigma`` is None.
    gamma : "adaptive", "mean", "nearest" or float
        Softmin temperature rule, see :func:`solve`.
    max_iter, tol : stopping rule of :func:`solve`.
    random_state : int, Generator or None

    Attributes
    ----------
    exemplars_ : ndarray of shape (n_exemplars, n_features)
    memberships_ : ndarray of shape (n_samples, n_exemplars)
    n_iter_ : int
    objective_ : float
    converged_ : bool
    """

    def __init__(self, n_exemplars=10, alpha=None, beta=None, sigma=None,
                 sigma_ratio=2.0, gamma="adaptive", max_iter=200, tol=1e-6,
                 random_state=None):
        self.n_exemplars = n_exemplars
        self.alpha = alpha
        self.beta = beta
        self.sigma = sigma
        self.sigma_ratio = sigma_ratio
        self.gamma = gamma
        self.max_iter = max_iter
        self.tol = tol
        self.random_state = random_state

    def fit(self, X, y=None, history=None):
        """Solve for exemplars; ``history`` holds previously designed ones (rows)."""
        X = check_array(X, dtype=np.float64)
        n, p = X.shape
        H = np.zeros((0, p)) if history is None else check_array(
            history, dtype=np.float64, ensure_min_samples=0)
        if H.shape[1] != p:
            raise ContractError("history must have the same feature count as X")
        K, N = self.n_exemplars, H.shape[0]
        alpha, beta, _, sigma = default_hypers(n, p, K, N, sigma_ratio=self.sigma_ratio)
        alpha = alpha if self.alpha is None else self.alpha
        beta = beta if self.beta is None else self.beta
        if self.sigma is not None:
            sigma = self.sigma
        elif self.alpha is not None:
            sigma = self.sigma_ratio * alpha
        gamma_mode = self.gamma
        fixed_gamma = 1.0 if isinstance(gamma_mode, str) else float(gamma_mode)
        prob = DisplayProblem(X.T, H.T, K, alpha=alpha, beta=beta, gamma=fixed_gamma,
                              sigma=sigma if sigma > 0 else 1.0)
        state = solve(prob, make_rng(self.random_state), self.max_iter, self.tol, gamma_mode)
        self.exemplars_ = state.V.T.copy()
        self.memberships_ = state.mu
        self.n_iter_ = state.iteration
        self.objective_ = state.objective
        self.converged_ = state.converged
        self.hypers_ = {"alpha": alpha, "beta": beta, "sigma": prob.sigma, "gamma": state.gamma}
        return self

    def transform(self, X):
        """Squared distances from each sample to each fitted exemplar."""
        check_is_fitted(self, "exemplars_")
        X = check_array(X, dtype=np.float64)
        return pairwise_sq_dists(X.T, self.exemplars_.T)
