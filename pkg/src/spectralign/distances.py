"""Symmetric squared nearest-neighbor distance with gradients.

Works in any dimension: 3 (and 6 with colors) during the extrinsic fit,
K (and K+3) during the intrinsic refinement. Assignments are exact; low
dimensions with many points go through a kd-tree, everything else through
a blocked distance-matrix argmin, which at these scales is faster than
tree backtracking anyway. Gradients treat the assignments as locally
constant.
"""

import numpy as np
from scipy.spatial import cKDTree

__all__ = ["chamfer", "nearest_neighbors"]

# above this dimension kd-trees degenerate to linear scans with overhead
_KDTREE_MAX_DIM = 16
# target entry count for one distance-matrix block
_BLOCK_ENTRIES = 4_000_000


def nearest_neighbors(query, points):
    """Index into ``points`` of the nearest row for each row of ``query``.

    Exact search; ties resolve to the lowest index. Distances are
    recomputed from the gathered pairs, so they are exact regardless of
    the search path taken.

    Returns
    -------
    idx : ndarray
        (n,) int indices into ``points``.
    dist : ndarray
        (n,) Euclidean distances.
    """
    query = np.asarray(query, dtype=np.float64)
    points = np.asarray(points, dtype=np.float64)
    if query.ndim != 2 or points.ndim != 2 or query.shape[1] != points.shape[1]:
        raise ValueError(
            f"point arrays must be 2-D with equal width, got {query.shape} vs {points.shape}"
        )
    if len(points) == 0 or len(query) == 0:
        raise ValueError("empty point set")
    n, m = len(query), len(points)
    d = query.shape[1]

    if d <= _KDTREE_MAX_DIM and n * m > _BLOCK_ENTRIES:
        tree = cKDTree(points)
        dist, idx = tree.query(query, k=1, workers=1)
        idx = _lowest_index_ties(tree, points, query, dist, idx)
    else:
        idx = np.empty(n, dtype=np.int64)
        qq = np.einsum("ij,ij->i", query, query)
        pp = np.einsum("ij,ij->i", points, points)
        step = max(1, _BLOCK_ENTRIES // m)
        for s in range(0, n, step):
            e = min(n, s + step)
            block = qq[s:e, None] + pp[None, :] - 2.0 * (query[s:e] @ points.T)
            idx[s:e] = np.argmin(block, axis=1)
    diff = query - points[idx]
    return idx, np.sqrt(np.einsum("ij,ij->i", diff, diff))


def _lowest_index_ties(tree, points, query, dist, idx):
    """Rewrite kd-tree picks so exact ties resolve to the lowest index."""
    idx = idx.astype(np.int64)
    radius = dist * (1.0 + 1e-12) + 1e-300
    for i, cands in enumerate(tree.query_ball_point(query, radius, workers=1)):
        if len(cands) <= 1:
            continue
        cands = np.sort(np.asarray(cands))
        dd = np.linalg.norm(points[cands] - query[i], axis=1)
        best = dd.min()
        idx[i] = cands[dd <= best][0]
    return idx


def chamfer(P, Q):
    """Two-sided mean squared nearest-neighbor distance and its gradients.

    value = mean_i min_j |P_i - Q_j|^2 + mean_j min_i |Q_j - P_i|^2

    Returns
    -------
    value : float
    dP : ndarray
        (n, d) gradient with respect to P.
    dQ : ndarray
        (m, d) gradient with respect to Q.
    """
    P = np.asarray(P, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    n, m = len(P), len(Q)
    idx_pq, _ = nearest_neighbors(P, Q)
    idx_qp, _ = nearest_neighbors(Q, P)

    diff_p = P - Q[idx_pq]
    diff_q = Q - P[idx_qp]
    value = float(np.einsum("ij,ij->", diff_p, diff_p) / n
                  + np.einsum("ij,ij->", diff_q, diff_q) / m)

    dP = (2.0 / n) * diff_p
    dQ = (2.0 / m) * diff_q
    np.add.at(dQ, idx_pq, -(2.0 / n) * diff_p)
    np.add.at(dP, idx_qp, -(2.0 / m) * diff_q)
    return value, dP, dQ
