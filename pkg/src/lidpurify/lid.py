"""Batch-local LID estimation (maximum-likelihood, k nearest neighbours).

For a point with sorted neighbour distances r_1 <= ... <= r_k (self
excluded) the estimate is ``-1 / mean(log(r_j / r_k))``. Two singular cases
are clamped to finite sentinels:

* a duplicate neighbour (r_1 = 0) hits the ratio floor and yields a small
  positive score;
* all k distances equal makes the log-mean zero and yields ``LID_MAX``.
"""
import numpy as np

from .numkit import as_matrix, pairwise_distances

RATIO_FLOOR = 1e-12
LID_MAX = 1e6
DEFAULT_K = 20


def default_k(n, k=DEFAULT_K):
    return max(1, min(k, n - 1))


def lid_from_neighbor_distances(dists):
    """Estimate from the k smallest neighbour distances, one row per point."""
    r = np.sort(np.asarray(dists, dtype=np.float64), axis=-1)
    r_max = r[..., -1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(r_max > 0, r / r_max, 1.0)
    ratio = np.clip(ratio, RATIO_FLOOR, 1.0)
    mean_log = np.log(ratio).mean(axis=-1)
    with np.errstate(divide="ignore"):
        est = np.where(mean_log < 0, -1.0 / mean_log, LID_MAX)
    return np.clip(est, np.finfo(np.float64).tiny, LID_MAX)


def _scores_from_distance_matrix(dist, k_nn):
    n = dist.shape[0]
    if k_nn < 1:
        raise ValueError("k_nn must be >= 1")
    if n < k_nn + 1:
        raise ValueError(f"insufficient neighbors: {n} rows for k_nn={k_nn}")
    d = dist.copy()
    np.fill_diagonal(d, np.inf)
    nearest = np.partition(d, k_nn - 1, axis=1)[:, :k_nn]
    return lid_from_neighbor_distances(nearest)


def lid_estimate(index, reprs, k_nn):
    """LID of row ``index`` against the other rows of ``reprs``."""
    reprs = as_matrix(reprs)
    n = reprs.shape[0]
    if n < k_nn + 1:
        raise ValueError(f"insufficient neighbors: {n} rows for k_nn={k_nn}")
    d = np.sqrt(((reprs - reprs[index]) ** 2).sum(axis=1))
    d = np.delete(d, index)
    nearest = np.partition(d, k_nn - 1)[:k_nn]
    return float(lid_from_neighbor_distances(nearest))


def lid_weight_scores(view_reprs, k_nn=None):
    """Score every representation of one view against its own batch."""
    reprs = as_matrix(view_reprs)
    k = default_k(reprs.shape[0]) if k_nn is None else k_nn
    return _scores_from_distance_matrix(pairwise_distances(reprs), k)


def lid_union_scores(label_reprs, pseudo_reprs, k_nn=None):
    """Score label pairs and pseudo-label pairs inside their 2n-row union.

    Returns ``(label_scores, pseudo_scores)``. Only the exact self row is
    excluded from each neighbour search; the instance's twin stays eligible.
    """
    a = as_matrix(label_reprs)
    b = as_matrix(pseudo_reprs)
    if a.shape != b.shape:
        raise ValueError(f"row-count mismatch: {a.shape} vs {b.shape}")
    n = a.shape[0]
    k = default_k(2 * n) if k_nn is None else k_nn
    scores = _scores_from_distance_matrix(pairwise_distances(np.vstack([a, b])), k)
    return scores[:n], scores[n:]
