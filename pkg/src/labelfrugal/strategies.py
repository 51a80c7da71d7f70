"""Display selection: grounding designed exemplars and baseline query strategies.

Pools use the column convention, ``X`` of shape (p, n). ``labeled`` is a
boolean mask over the pool or an index list.
"""

import warnings

import numpy as np

from .numerics import ContractError, make_rng, pairwise_sq_dists

STRATEGIES = ("designed_ambient", "designed_latent", "random", "uncertainty_margin",
              "diversity_coreset")


class PartialDisplayWarning(UserWarning):
    """Fewer unlabeled samples remain than the display size."""


def _labeled_mask(n, labeled):
    mask = np.zeros(n, dtype=bool)
    if labeled is not None:
        labeled = np.asarray(labeled)
        if labeled.dtype == bool:
            mask |= labeled
        else:
            mask[labeled.astype(int)] = True
    return mask


def ground_exemplars(V, X, labeled=None):
    """Match each exemplar to a distinct unlabeled pool sample.

    Exemplars are served in ascending order of their distance to the nearest
    unlabeled sample; each takes its nearest sample not taken yet (ties go to
    the lower pool index). The result is ordered like the columns of ``V``.
    If fewer than ``K`` unlabeled samples remain, the exemplars served last
    stay unmatched and a :class:`PartialDisplayWarning` is issued.
    """
    V = np.asarray(V, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    K, n = V.shape[1], X.shape[1]
    mask = _labeled_mask(n, labeled)
    free = np.flatnonzero(~mask)
    if free.size < K:
        warnings.warn(f"only {free.size} unlabeled samples for a display of {K}",
                      PartialDisplayWarning, stacklevel=2)
    if free.size == 0:
        return np.array([], dtype=np.int64)
    D = pairwise_sq_dists(V, X[:, free])  # (K, free)
    order = np.lexsort((np.arange(K), D.min(axis=1)))
    taken = np.zeros(free.size, dtype=bool)
    match = np.full(K, -1, dtype=np.int64)
    for k in order:
        if taken.all():
            break
        row = np.where(taken, np.inf, D[k])
        j = int(np.argmin(row))
        taken[j] = True
        match[k] = free[j]
    return match[match >= 0]


def random_pick(n, K, labeled=None, rng=None):
    free = np.flatnonzero(~_labeled_mask(n, labeled))
    rng = make_rng(rng)
    return np.sort(rng.choice(free, size=min(K, free.size), replace=False))


def margins(proba):
    """Top-1 minus top-2 score per row (rows with one class get margin 1)."""
    proba = np.asarray(proba, dtype=np.float64)
    if proba.shape[1] < 2:
        return np.ones(proba.shape[0])
    top2 = np.sort(proba, axis=1)[:, -2:]
    return top2[:, 1] - top2[:, 0]


def uncertainty_margin_pick(proba, K, labeled=None):
    """The ``K`` unlabeled rows of ``proba`` with the smallest margin."""
    m = margins(proba)
    free = np.flatnonzero(~_labeled_mask(m.size, labeled))
    order = free[np.argsort(m[free], kind="stable")]
    return order[:K]


def diversity_coreset_pick(X, K, labeled=None):
    """Greedy k-center selection.

    Each pick maximizes the distance to the nearest labeled-or-picked sample.
    With nothing labeled, the first pick is the sample farthest from the pool
    centroid. Ties go to the lowest index.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[1]
    mask = _labeled_mask(n, labeled)
    if K > np.count_nonzero(~mask):
        raise ContractError("display larger than the unlabeled pool")

    # direct differences rather than the Gram expansion, so exact ties stay ties
    def sq_dist_to(v):
        return np.sum((X - v[:, None]) ** 2, axis=0)

    picks = []
    if mask.any():
        nearest = np.min([sq_dist_to(X[:, j]) for j in np.flatnonzero(mask)], axis=0)
    elif K > 0:
        j = int(np.argmax(sq_dist_to(X.mean(axis=1))))
        picks.append(j)
        mask[j] = True
        nearest = sq_dist_to(X[:, j])
    while len(picks) < K:
        j = int(np.argmax(np.where(mask, -np.inf, nearest)))
        picks.append(j)
        mask[j] = True
        nearest = np.minimum(nearest, sq_dist_to(X[:, j]))
    return np.array(picks, dtype=np.int64)


def macro_accuracy(y_true, y_pred, classes=None):
    """Mean over classes of the per-class accuracy (recall).

    Returns ``(score, omitted)`` where ``omitted`` lists classes from
    ``classes`` that do not occur in ``y_true`` and were left out.
    """
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.size == 0:
        raise ContractError("empty test split")
    present = np.unique(y_true)
    omitted = [] if classes is None else sorted(set(np.asarray(classes).tolist()) - set(present.tolist()))
    per_class = [np.mean(y_pred[y_true == c] == c) for c in present]
    return float(np.mean(per_class)), omitted
