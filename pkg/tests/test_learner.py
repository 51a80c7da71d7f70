import numpy as np
import pytest

from labelfrugal.display import DisplayProblem, default_hypers, init_state, solve
from labelfrugal.invertible import (LayerStack, certify, latent_map, latent_unmap,
                                    lipschitz_bounds)
from labelfrugal.learner import ActiveLearner, BudgetExhausted, Oracle, rounds_for_rate
from labelfrugal.numerics import ContractError, pairwise_sq_dists
from labelfrugal.skeleton import synth_pool
from labelfrugal.strategies import ground_exemplars


@pytest.fixture(scope="module")
def small_pool():
    pool = synth_pool(4, 10, 4, 8, 1.0, 0, test_per_class=5)
    return pool.train_test()


def fit(strategy, data, **kw):
    train, test = data
    params = {"labeling_rate": 0.3, "display_size": 4, "epochs": 30, "random_state": 0, **kw}
    return ActiveLearner(strategy=strategy, **params).fit(
        train.features, train.labels, eval_set=(test.features, test.labels))


def test_rounds_and_labeling_rate(small_pool):
    al = fit("random", small_pool)
    T = rounds_for_rate(0.3, 40, 4)
    assert T == 3 and len(al.records_) == T
    assert al.records_[-1]["labeling_rate"] == pytest.approx(T * 4 / 40)
    assert len(set(al.labeled_indices_.tolist())) == T * 4
    assert al.oracle_.repeated_queries == 0


def test_random_strategy_is_reproducible(small_pool):
    a, b = fit("random", small_pool), fit("random", small_pool)
    assert [r["picked"] for r in a.records_] == [r["picked"] for r in b.records_]
    assert a.accuracy_trace_ == b.accuracy_trace_


@pytest.mark.parametrize("strategy", ["designed_ambient", "designed_latent", "uncertainty_margin",
                                      "diversity_coreset"])
def test_every_strategy_runs(strategy, small_pool):
    al = fit(strategy, small_pool)
    assert len(al.accuracy_trace_) == 3
    assert all(0 <= a <= 1 for a in al.accuracy_trace_)
    if strategy == "designed_latent":
        assert all(r["certificate"]["valid"] for r in al.records_)
    if strategy.startswith("designed"):
        assert all(r["solver_iterations"] >= 1 for r in al.records_)
    if strategy == "uncertainty_margin":
        assert "fallback" in al.records_[0] and "fallback" not in al.records_[1]


def test_history_grows_by_one_display_per_designed_round(small_pool):
    train, test = small_pool
    al = ActiveLearner("designed_ambient", labeling_rate=0.3, display_size=4, epochs=5)
    run = al.start(train.features, train.labels, (test.features, test.labels))
    assert run.H.shape[1] == 0
    al.round(run)
    assert run.H.shape == (train.p, 4)
    al.round(run)
    assert run.H.shape == (train.p, 8)


def test_budget_exhausted(small_pool):
    train, test = small_pool
    al = ActiveLearner("random", labeling_rate=0.1, display_size=4, epochs=5)
    run = al.start(train.features, train.labels)
    al.round(run)
    with pytest.raises(BudgetExhausted):
        al.round(run)


def test_invalid_settings(small_pool):
    train, _ = small_pool
    for kw in ({"strategy": "oracle"}, {"labeling_rate": 0.0}, {"display_size": 0},
               {"classifier": "svm"}):
        with pytest.raises(ContractError):
            ActiveLearner(**kw).start(train.features, train.labels)


def test_gcn_scorer(small_pool):
    al = fit("random", small_pool, classifier="gcn", gcn_params={"n_nodes": 4})
    assert al.score(small_pool[1].features, small_pool[1].labels) == al.accuracy_trace_[-1]


def test_oracle_ledger():
    oracle = Oracle([5, 6, 7])
    assert oracle.query([2, 0]).tolist() == [7, 5]
    oracle.query([0])
    assert oracle.repeated_queries == 1 and len(oracle) == 3


# -- diversity and latent design ------------------------------------------------

def test_history_keeps_new_exemplars_away():
    """Against an alpha=0 ablation, the nearest history distance grows on most seeds."""
    wins = 0
    for seed in range(10):
        X = synth_pool(8, 30, 6, 16, 3.0, 1000 + seed).flat
        n, p, K = X.shape[1], X.shape[0], 12
        H = solve(DisplayProblem(X, None, K), seed).V
        alpha, beta, _, sigma = default_hypers(n, p, K, K)
        with_h = solve(DisplayProblem(X, H, K, alpha=alpha, beta=beta, sigma=sigma), seed + 1)
        without = solve(DisplayProblem(X, H, K, alpha=0.0, beta=beta, sigma=sigma), seed + 1)
        wins += pairwise_sq_dists(H, with_h.V).min() > pairwise_sq_dists(H, without.V).min()
    assert wins >= 8


def test_first_round_has_no_diversity_term():
    alpha, *_ = default_hypers(30, 4, 3, 0)
    assert alpha == 0.0


def test_latent_design_is_stable_under_unmapping(rng):
    """Ambient displacement of each exemplar is at most M times its latent displacement."""
    X = synth_pool(4, 10, 4, 8, 1.0, 0).flat
    net = LayerStack.random(X.shape[0], 3, rng)
    prob = DisplayProblem(latent_map(net, X), None, 3)
    start = init_state(prob, 0).V
    state = solve(prob, 0)
    _, M = lipschitz_bounds(net.depth, net.activation)
    cert = certify(net, 0, 200)
    moved = np.linalg.norm(latent_unmap(net, state.V, cert) - latent_unmap(net, start, cert), axis=0)
    assert np.all(moved <= M * np.linalg.norm(state.V - start, axis=0) + 1e-9)


def test_grounded_history_pushes_the_next_display_away():
    X = synth_pool(8, 30, 6, 16, 3.0, 1000).flat
    n, p, K = X.shape[1], X.shape[0], 12
    first = solve(DisplayProblem(X, None, K), 0).V
    grounded = X[:, ground_exemplars(first, X)]
    alpha, beta, _, sigma = default_hypers(n, p, K, K)
    nxt = solve(DisplayProblem(X, grounded, K, alpha=alpha, beta=beta, sigma=sigma), 0).V
    ablate = solve(DisplayProblem(X, grounded, K, alpha=0.0, beta=beta, sigma=sigma), 0).V
    assert pairwise_sq_dists(grounded, nxt).min() > pairwise_sq_dists(grounded, ablate).min()
