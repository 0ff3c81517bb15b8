"""
Sparse spatial weights.

Schemes
-------
inverse_distance
    1/d for every pair; with ``threshold=D`` only pairs with d <= D.
inverse_square
    1/d**2, optionally thresholded the same way.
knn
    Binary weights on the k nearest neighbours (ties -> lower index).
contiguity
    Binary weights on a supplied adjacency list.

Rows are standardized after thresholding. Rows left without neighbours
(isolates) stay all-zero so indices are stable across thresholds. Row sums
are exactly rounded (``math.fsum``), which makes the sparse and dense
constructions agree bit for bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.spatial.distance import pdist, squareform

from .geo import project_miles

SCHEMES = ("inverse_distance", "inverse_square", "knn", "contiguity")


@dataclass
class SpatialWeights:
    matrix: sparse.csr_matrix
    scheme: str
    params: dict = field(default_factory=dict)
    row_standardized: bool = True
    ids: list | None = None

    @property
    def n(self):
        return self.matrix.shape[0]

    @property
    def isolates(self):
        return np.flatnonzero(np.diff(self.matrix.indptr) == 0)

    @property
    def nnz(self):
        return self.matrix.nnz

    @property
    def label(self):
        extra = ",".join(f"{k}={v}" for k, v in sorted(self.params.items()))
        return f"{self.scheme}({extra})" if extra else self.scheme

    def lag(self, x):
        return spatial_lag(self, x)

    def dense(self):
        return self.matrix.toarray()

    def row_sums(self):
        return _exact_row_sums(self.matrix)

    def neighbors(self, i):
        lo, hi = self.matrix.indptr[i], self.matrix.indptr[i + 1]
        return self.matrix.indices[lo:hi].copy()

    def standardize(self):
        if self.row_standardized:
            return self
        return SpatialWeights(_standardize_rows(self.matrix), self.scheme, dict(self.params),
                              True, self.ids)

    def to_frame(self):
        """Long (i, j, weight) listing for audit dumps."""
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return pd.DataFrame({"i": coo.row[order], "j": coo.col[order],
                             "weight": coo.data[order]})


def _exact_row_sums(m: sparse.csr_matrix):
    data, ptr = m.data, m.indptr
    return np.array([math.fsum(data[ptr[i]:ptr[i + 1]]) for i in range(m.shape[0])])


def _standardize_rows(m: sparse.csr_matrix) -> sparse.csr_matrix:
    m = m.tocsr(copy=True)
    sums = _exact_row_sums(m)
    counts = np.diff(m.indptr)
    scale = np.repeat(np.where(sums > 0, sums, 1.0), counts)
    m.data = m.data / scale
    return m


def pairwise_miles(coords):
    """Dense matrix of planar distances; raises on duplicate points."""
    coords = np.asarray(coords, dtype=float)
    d = pdist(coords)
    if (d == 0).any():
        raise ValueError("duplicate centroids: zero off-diagonal distance")
    return squareform(d)


def cbg_coordinates(cbgs: pd.DataFrame, ref_lat=None):
    """Planar miles for a CBG table with lon/lat columns."""
    return project_miles(cbgs["lon"], cbgs["lat"], ref_lat)


def _raw_dense(coords, scheme, threshold=None, k=None, adjacency=None, ids=None):
    n = len(coords) if coords is not None else len(ids)
    if n < 2:
        raise ValueError("weights need at least two units")
    if scheme in ("inverse_distance", "inverse_square"):
        d = pairwise_miles(coords)
        power = 1.0 if scheme == "inverse_distance" else 2.0
        with np.errstate(divide="ignore"):
            w = np.where(d > 0, 1.0 / d ** power, 0.0)
        if threshold is not None:
            w[d > threshold] = 0.0
        np.fill_diagonal(w, 0.0)
        return w
    if scheme == "knn":
        if k is None or k < 1:
            raise ValueError("knn needs k >= 1")
        if k >= n:
            raise ValueError(f"knn needs k < n (k={k}, n={n})")
        d = pairwise_miles(coords)
        np.fill_diagonal(d, np.inf)
        nn = np.argsort(d, axis=1, kind="stable")[:, :k]
        w = np.zeros((n, n))
        np.put_along_axis(w, nn, 1.0, axis=1)
        return w
    if scheme == "contiguity":
        if adjacency is None or ids is None:
            raise ValueError("contiguity needs an adjacency list and unit ids")
        pos = {u: i for i, u in enumerate(ids)}
        w = np.zeros((n, n))
        for a, b in adjacency:
            if a in pos and b in pos and a != b:
                w[pos[a], pos[b]] = 1.0
        return w
    raise ValueError(f"unknown weight scheme {scheme!r}")


def build_weights(coords, scheme="inverse_distance", threshold=None, k=None,
                  adjacency=None, ids=None, standardize=True) -> SpatialWeights:
    """Build a sparse weights object.

    Parameters
    ----------
    coords : array_like, shape (n, 2)
        Planar coordinates in miles (see :func:`cbg_coordinates`). May be
        None for contiguity when `ids` is given.
    scheme : {'inverse_distance', 'inverse_square', 'knn', 'contiguity'}
    threshold : float, optional
        Distance band D in miles for the distance schemes (pairs with d <= D).
    k : int, optional
        Neighbour count for knn.
    adjacency : iterable of (id_a, id_b), optional
        Directed pairs for contiguity.
    ids : sequence, optional
        Unit identifiers in row order.
    """
    w = _raw_dense(coords, scheme, threshold, k, adjacency, ids)
    m = sparse.csr_matrix(w)
    m.sort_indices()
    params = {}
    if threshold is not None:
        params["threshold"] = float(threshold)
    if k is not None and scheme == "knn":
        params["k"] = int(k)
    out = SpatialWeights(m, scheme, params, False, list(ids) if ids is not None else None)
    return out.standardize() if standardize else out


def dense_weights(coords, scheme="inverse_distance", threshold=None, k=None,
                  adjacency=None, ids=None, standardize=True):
    """Same weights as :func:`build_weights` as a dense ndarray."""
    w = _raw_dense(coords, scheme, threshold, k, adjacency, ids)
    if standardize:
        sums = np.array([math.fsum(row) for row in w])
        w = w / np.where(sums > 0, sums, 1.0)[:, None]
    return w


def spatial_lag(W, x):
    """Wx; isolate rows give 0. `x` may be a vector or an (n, p) block."""
    m = W.matrix if isinstance(W, SpatialWeights) else W
    x = np.asarray(x, dtype=float)
    if x.shape[0] != m.shape[0]:
        raise ValueError(f"length mismatch: W is {m.shape[0]}x{m.shape[1]}, x has {x.shape[0]} rows")
    return np.asarray(m @ x)


class DistanceBandLags:
    """Row-standardized lags of X under a growing distance threshold.

    Pairs are sorted by distance once. Moving from threshold D to D' only
    touches the pairs with D < d <= D', so a full sweep costs one pass over
    the pairs instead of a fresh matrix per threshold.

    Parameters
    ----------
    coords : array_like, shape (n, 2)
        Planar coordinates in miles.
    power : float
        1 for inverse distance, 2 for inverse square.
    """

    def __init__(self, coords, power=1.0):
        coords = np.asarray(coords, dtype=float)
        self.n = len(coords)
        if self.n < 2:
            raise ValueError("need at least two units")
        d = pdist(coords)
        if (d == 0).any():
            raise ValueError("duplicate centroids: zero off-diagonal distance")
        order = np.argsort(d, kind="stable")
        iu, ju = np.triu_indices(self.n, k=1)
        self.dist = d[order]
        self.i = iu[order].astype(np.intp)
        self.j = ju[order].astype(np.intp)
        self.power = float(power)
        self.max_distance = float(self.dist[-1])

    def lags(self, X, thresholds):
        """Yield ``(D, WX, n_isolates, n_pairs)`` for increasing thresholds."""
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        thresholds = np.asarray(thresholds, dtype=float)
        if np.any(np.diff(thresholds) <= 0):
            raise ValueError("thresholds must be strictly increasing")
        n, p = self.n, X.shape[1]
        acc = np.zeros((n, p))
        rows = np.zeros(n)
        pos = 0
        for D in thresholds:
            end = int(np.searchsorted(self.dist, D, side="right"))
            if end > pos:
                i, j = self.i[pos:end], self.j[pos:end]
                w = 1.0 / self.dist[pos:end] ** self.power
                rows += np.bincount(i, w, n) + np.bincount(j, w, n)
                for c in range(p):
                    acc[:, c] += np.bincount(i, w * X[j, c], n) + np.bincount(j, w * X[i, c], n)
                pos = end
            has = rows > 0
            wx = np.zeros((n, p))
            wx[has] = acc[has] / rows[has, None]
            yield float(D), wx, int(n - has.sum()), pos

    def neighbor_counts(self, D):
        end = int(np.searchsorted(self.dist, D, side="right"))
        return np.bincount(self.i[:end], minlength=self.n) + np.bincount(self.j[:end], minlength=self.n)
