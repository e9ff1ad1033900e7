"""Clustering-based inference over a few-shot episode's pooled samples.

Two inference schemes refine the plain nearest-prototype decision using the
episode's unlabeled pool (queries in the transductive setting, the extra
unlabeled set in the semi-supervised one):

* Bayesian k-means (``bkm``): cluster the pool, treat each cluster as a
  mixture over classes, and marginalize the per-cluster class posteriors by
  each query's cluster membership probabilities.
* Mean-shift propagation (``msp``): iteratively re-estimate the class
  prototypes as the means of the most confidently predicted pool samples,
  keeping the per-class count balanced, then classify queries against the
  final prototypes.

Both are deterministic given their seed and inputs; there is no state shared
across episodes.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from tafssl.classify import Prototypes, build_prototypes, nn_classify
from tafssl.linalg import NumericalWarning, as_matrix, pairwise_sqdist, softmax_rows

__all__ = ["Clustering", "MspResult", "bkm", "bkm_from_centroids", "kmeans", "msp"]

BKM_DEFAULT_CLUSTERS = 5
MSP_DEFAULT_THRESHOLD = 0.3
MSP_DEFAULT_ITERATIONS = 4

KMEANS_MAX_ITER = 100


@dataclass(frozen=True)
class Clustering:
    """Hard k-means centroids plus soft membership probabilities."""

    k: int
    centroids: np.ndarray
    assign_probs: np.ndarray
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class MspResult:
    """Refined prototypes with the per-iteration balanced count history."""

    prototypes: np.ndarray
    class_ids: np.ndarray
    posterior: np.ndarray
    predictions: np.ndarray
    k_history: list[int] = field(default_factory=list)


def _farthest_point_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++-style greedy seeding: random first centroid, then repeatedly
    the point farthest from the chosen set.  Deterministic given the seed
    (argmax ties resolve to the lowest row index)."""
    chosen = [int(rng.integers(X.shape[0]))]
    min_sq = pairwise_sqdist(X, X[chosen[-1]][None, :])[:, 0]
    while len(chosen) < k:
        chosen.append(int(np.argmax(min_sq)))
        min_sq = np.minimum(min_sq, pairwise_sqdist(X, X[chosen[-1]][None, :])[:, 0])
    return X[chosen].copy()


def kmeans(pool, k: int, seed: int = 0) -> Clustering:
    """Hard Lloyd iterations to an assignment fixpoint (at most 100 rounds),
    followed by a soft assignment softmax(-d^2) against the final centroids.

    If the pool has fewer than ``k`` rows, k is reduced to the row count and
    the reduction recorded in ``meta``.
    """
    pool = as_matrix(pool, "pool")
    if pool.shape[0] < 1:
        raise ValueError("empty pool")
    meta: dict = {}
    if pool.shape[0] < k:
        meta["k_reduced"] = {"requested": k, "used": pool.shape[0]}
        k = pool.shape[0]

    rng = np.random.default_rng(seed)
    centroids = _farthest_point_init(pool, k, rng)
    assign = np.full(pool.shape[0], -1)
    for _ in range(KMEANS_MAX_ITER):
        new_assign = np.argmin(pairwise_sqdist(pool, centroids), axis=1)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            members = assign == j
            if members.any():
                centroids[j] = pool[members].mean(axis=0)
            else:
                # Re-seed an empty cluster at the point farthest from its
                # assigned centroid; keeps every centroid meaningful.
                to_own = ((pool - centroids[assign]) ** 2).sum(axis=1)
                centroids[j] = pool[int(np.argmax(to_own))]
    assign_probs = softmax_rows(-pairwise_sqdist(pool, centroids))
    return Clustering(k=k, centroids=centroids, assign_probs=assign_probs, meta=meta)


def bkm_from_centroids(support, support_labels, queries, centroids) -> np.ndarray:
    """Class posteriors for ``queries`` given fixed cluster centroids.

    For each sample x, cluster membership is softmax(-|x - c_j|^2).  Within
    a cluster, the class posterior of a query weighs every support sample by
    exp(-|q - s|^2) times that support's membership in the cluster; the
    final posterior marginalizes over clusters by the query's own
    memberships.  Rows sum to one.
    """
    support = as_matrix(support, "support")
    queries = as_matrix(queries, "queries")
    centroids = as_matrix(centroids, "centroids")
    labels = np.asarray(support_labels)
    class_ids = np.unique(labels)

    member_q = softmax_rows(-pairwise_sqdist(queries, centroids))  # queries x k
    member_s = softmax_rows(-pairwise_sqdist(support, centroids))  # supports x k

    # Support affinities exp(-d^2), max-subtracted per query; the common
    # factor cancels in the conditional ratio so this is exact.
    neg_sq = -pairwise_sqdist(queries, support)
    affinity = np.exp(neg_sq - neg_sq.max(axis=1, keepdims=True))  # queries x supports

    denom = affinity @ member_s  # queries x k
    numer = np.stack([affinity[:, labels == cid] @ member_s[labels == cid] for cid in class_ids], axis=1)
    # queries x classes x k

    degenerate = denom <= 0.0
    if degenerate.any():
        warnings.warn(
            f"{int(degenerate.sum())} degenerate cluster denominator(s); using uniform class mix",
            NumericalWarning,
            stacklevel=2,
        )
        numer[np.broadcast_to(degenerate[:, None, :], numer.shape)] = 1.0
        denom = np.where(degenerate, float(len(class_ids)), denom)

    conditional = numer / denom[:, None, :]
    posterior = np.einsum("qik,qk->qi", conditional, member_q)
    return posterior / posterior.sum(axis=1, keepdims=True)


def bkm(support, support_labels, queries, pool, k: int = BKM_DEFAULT_CLUSTERS, seed: int = 0) -> np.ndarray:
    """Bayesian k-means posteriors: cluster the pool, then marginalize.

    ``pool`` is the episode's full sample set (support + queries, or support
    + unlabeled).  Returns a queries x classes posterior matrix whose rows
    sum to one; predictions are the row argmax.
    """
    clustering = kmeans(pool, k, seed)
    return bkm_from_centroids(support, support_labels, queries, clustering.centroids)


def msp(
    support,
    support_labels,
    queries,
    pool,
    threshold: float = MSP_DEFAULT_THRESHOLD,
    iterations: int = MSP_DEFAULT_ITERATIONS,
) -> MspResult:
    """Mean-shift propagation: balanced confident-mean prototype refinement.

    Starting from the support-mean prototypes, each of the ``iterations``
    rounds soft-classifies every pool sample against the current prototypes,
    counts per class the samples predicted for it with confidence above
    ``threshold``, balances that count to K = min over classes, and replaces
    each prototype with the mean of its K most confident samples (ties by
    pool index).  A round with K = 0 keeps all prototypes unchanged.  The
    final posterior is the nearest-prototype softmax for the queries.
    """
    support = as_matrix(support, "support")
    queries = as_matrix(queries, "queries")
    pool = as_matrix(pool, "pool")
    protos = build_prototypes(support, support_labels)
    vectors = protos.vectors.copy()
    n_classes = protos.n

    k_history: list[int] = []
    for _ in range(iterations):
        sq = pairwise_sqdist(pool, vectors)
        posterior = softmax_rows(-sq)
        predicted = np.argmin(sq, axis=1)  # == posterior argmax, ties to lowest class
        confidence = posterior[np.arange(pool.shape[0]), predicted]

        counts = np.array(
            [int(((predicted == i) & (confidence > threshold)).sum()) for i in range(n_classes)]
        )
        k = int(counts.min())
        k_history.append(k)
        if k == 0:
            continue
        for i in range(n_classes):
            members = np.flatnonzero(predicted == i)
            # Sort by decreasing confidence, pool index breaking ties.
            order = members[np.lexsort((members, -posterior[members, i]))]
            vectors[i] = pool[order[:k]].mean(axis=0)

    final = Prototypes(vectors=vectors, class_ids=protos.class_ids)
    predictions, posterior = nn_classify(queries, final)
    return MspResult(
        prototypes=vectors,
        class_ids=protos.class_ids,
        posterior=posterior,
        predictions=predictions,
        k_history=k_history,
    )
