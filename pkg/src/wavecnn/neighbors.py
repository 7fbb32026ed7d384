"""Deterministic Euclidean k-nearest-neighbour search.

Candidates are screened with the Gram-matrix expansion of squared
distance, then re-ranked with exactly computed distances. Equal distances
are ordered by lower row index, so results do not depend on chunking.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

_CHUNK = 256


class NeighborModel(BaseEstimator):
    """Brute-force Euclidean neighbour index with lowest-index tie breaking.

    Parameters
    ----------
    n_neighbors : int, default=5
    """

    def __init__(self, n_neighbors=5):
        self.n_neighbors = n_neighbors

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.reference_ = X
        self.sq_norms_ = np.einsum("ij,ij->i", X, X)
        return self

    def kneighbors(self, X=None, n_neighbors=None, return_distance=True):
        """Neighbours of ``X``, or of the reference points themselves.

        With ``X=None`` every reference point is queried against the others,
        excluding itself.

        Returns
        -------
        distances : ndarray of shape (n_queries, k)
            Only when ``return_distance`` is true.
        indices : ndarray of shape (n_queries, k)
        """
        check_is_fitted(self, "reference_")
        k = self.n_neighbors if n_neighbors is None else n_neighbors
        R = self.reference_
        exclude_self = X is None
        Q = R if exclude_self else check_array(X, dtype=np.float64)
        if Q.shape[1] != R.shape[1]:
            raise ValueError(f"query has {Q.shape[1]} features, index has {R.shape[1]}")
        available = R.shape[0] - (1 if exclude_self else 0)
        if not 1 <= k <= available:
            raise ValueError(f"n_neighbors={k} but only {available} candidate points")

        q_norms = self.sq_norms_ if exclude_self else np.einsum("ij,ij->i", Q, Q)
        r_max = self.sq_norms_.max(initial=0.0)
        ind = np.empty((Q.shape[0], k), dtype=np.int64)
        dist = np.empty((Q.shape[0], k), dtype=np.float64)
        for start in range(0, Q.shape[0], _CHUNK):
            stop = min(start + _CHUNK, Q.shape[0])
            approx = q_norms[start:stop, None] + self.sq_norms_[None, :] - 2.0 * (Q[start:stop] @ R.T)
            if exclude_self:
                rows = np.arange(start, stop)
                approx[rows - start, rows] = np.inf
            kth = np.partition(approx, k - 1, axis=1)[:, k - 1]
            tol = 1e-7 * (q_norms[start:stop] + r_max) + 1e-12
            cand_mask = approx <= (kth + tol)[:, None]
            for r in range(stop - start):
                cand = np.flatnonzero(cand_mask[r])
                if exclude_self:
                    cand = cand[cand != start + r]
                diff = R[cand] - Q[start + r]
                exact = np.einsum("ij,ij->i", diff, diff)
                order = np.lexsort((cand, exact))[:k]
                ind[start + r] = cand[order]
                dist[start + r] = exact[order]
        np.sqrt(dist, out=dist)
        return (dist, ind) if return_distance else ind


def kneighbors(X, n_neighbors, query=None):
    """Functional shortcut: indices of the ``n_neighbors`` nearest points."""
    return NeighborModel(n_neighbors).fit(X).kneighbors(query, return_distance=False)
