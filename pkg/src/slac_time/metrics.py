"""Cluster validity indices, NMI, k-sweeps and a PCA projection for reports.

Degenerate denominators give ``math.inf`` rather than a clipped number so that
reports show them.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np


def _relabel(labels) -> tuple[np.ndarray, int]:
    labels = np.asarray(labels)
    _, inv = np.unique(labels, return_inverse=True)
    return inv.reshape(-1), int(inv.max()) + 1 if inv.size else 0


def _exact_pairwise(points: np.ndarray, chunk: int = 64) -> np.ndarray:
    # explicit differences rather than the Gram trick, which cancels badly for close points
    n = len(points)
    out = np.empty((n, n))
    for start in range(0, n, chunk):
        diff = points[start:start + chunk, None, :] - points[None, :, :]
        out[start:start + chunk] = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return out


def _prepare(points, labels, min_clusters: int = 2):
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    lab, k = _relabel(labels)
    if len(lab) != len(X):
        raise ValueError("points and labels differ in length")
    if k < min_clusters:
        raise ValueError(f"need at least {min_clusters} non-empty clusters, got {k}")
    return X, lab, k


def silhouette(points, labels) -> float:
    """Mean silhouette width with Euclidean distance; singleton clusters score 0."""
    X, lab, k = _prepare(points, labels)
    D = _exact_pairwise(X)
    counts = np.bincount(lab, minlength=k)
    sums = np.zeros((len(X), k))
    for j in range(k):
        sums[:, j] = D[:, lab == j].sum(axis=1)
    own = counts[lab]
    a = np.where(own > 1, sums[np.arange(len(X)), lab] / np.maximum(own - 1, 1), 0.0)
    mean_other = sums / counts[None, :]
    mean_other[np.arange(len(X)), lab] = np.inf
    b = mean_other.min(axis=1)
    denom = np.maximum(a, b)
    s = np.where((own > 1) & (denom > 0), (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    return float(s.mean())


def calinski_harabasz(points, labels) -> float:
    X, lab, k = _prepare(points, labels)
    n = len(X)
    if n <= k:
        raise ValueError("Calinski-Harabasz needs more points than clusters")
    c = X.mean(axis=0)
    between = 0.0
    within = 0.0
    for j in range(k):
        Xj = X[lab == j]
        cj = Xj.mean(axis=0)
        between += len(Xj) * float(((cj - c) ** 2).sum())
        within += float(((Xj - cj) ** 2).sum())
    if within == 0:
        return math.inf
    return (between / (k - 1)) / (within / (n - k))


def dunn(points, labels) -> float:
    """Smallest between-cluster point distance over the largest cluster diameter."""
    X, lab, k = _prepare(points, labels)
    D = _exact_pairwise(X)
    same = lab[:, None] == lab[None, :]
    diameter = float(D[same].max())
    separation = float(D[~same].min())
    if diameter == 0:
        return math.inf
    return separation / diameter


def davies_bouldin(points, labels) -> float:
    X, lab, k = _prepare(points, labels)
    cents = np.stack([X[lab == j].mean(axis=0) for j in range(k)])
    scatter = np.array([np.sqrt(((X[lab == j] - cents[j]) ** 2).sum(axis=1)).mean() for j in range(k)])
    total = 0.0
    for i in range(k):
        worst = 0.0
        for j in range(k):
            if i == j:
                continue
            dij = float(np.sqrt(((cents[i] - cents[j]) ** 2).sum()))
            if dij == 0:
                return math.inf
            worst = max(worst, float(scatter[i] + scatter[j]) / dij)
        total += worst
    return total / k


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def contingency(a, b) -> np.ndarray:
    la, ka = _relabel(a)
    lb, kb = _relabel(b)
    table = np.zeros((ka, kb), dtype=np.int64)
    np.add.at(table, (la, lb), 1)
    return table


def nmi(a, b) -> float:
    """Mutual information over the geometric mean of the entropies (natural log).

    When either labeling is constant the ratio is undefined: two constant
    labelings score 1, otherwise 0.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError("labelings differ in length")
    if a.size == 0:
        raise ValueError("empty labeling")
    table = contingency(a, b).astype(float)
    n = table.sum()
    ha = _entropy(table.sum(axis=1))
    hb = _entropy(table.sum(axis=0))
    if ha == 0 or hb == 0:
        return 1.0 if ha == 0 and hb == 0 else 0.0
    pij = table / n
    pi = pij.sum(axis=1, keepdims=True)
    pj = pij.sum(axis=0, keepdims=True)
    nz = pij > 0
    mi = float((pij[nz] * np.log(pij[nz] / (pi @ pj)[nz])).sum())
    return max(0.0, mi / math.sqrt(ha * hb))


@dataclass
class ValidityReport:
    k: int
    N: int
    silhouette: float
    calinski_harabasz: float
    dunn: float
    davies_bouldin: float
    external_nmi: float | None = None

    def to_json(self) -> dict:
        out = asdict(self)
        if out["external_nmi"] is None:
            del out["external_nmi"]
        return out

    def wins(self, other: "ValidityReport") -> dict[str, bool]:
        return {
            "silhouette": self.silhouette > other.silhouette,
            "dunn": self.dunn > other.dunn,
            "davies_bouldin": self.davies_bouldin < other.davies_bouldin,
            "calinski_harabasz": self.calinski_harabasz > other.calinski_harabasz,
        }


INDEX_COLUMNS = ("silhouette", "dunn", "davies_bouldin", "calinski_harabasz")


def validity_report(points, labels, truth=None) -> ValidityReport:
    X = np.asarray(points, dtype=float)
    _, k = _relabel(labels)
    return ValidityReport(
        k=k,
        N=len(X),
        silhouette=silhouette(X, labels),
        calinski_harabasz=calinski_harabasz(X, labels),
        dunn=dunn(X, labels),
        davies_bouldin=davies_bouldin(X, labels),
        external_nmi=None if truth is None else nmi(truth, labels),
    )


def sweep_k(points, k_set, seed: int, truth=None) -> list[ValidityReport]:
    """K-means at each k on fixed points, with all four indices per k."""
    from .training import kmeans

    X = np.asarray(points, dtype=float)
    out = []
    for k in k_set:
        if not 2 <= k < len(X):
            raise ValueError(f"k={k} outside [2, N)")
        km = kmeans(X, k, seed)
        out.append(validity_report(X, km.labels, truth))
    return out


def best_k_votes(reports: list[ValidityReport]) -> dict[int, int]:
    """How many of the four indices each k wins."""
    votes = {r.k: 0 for r in reports}
    votes[max(reports, key=lambda r: r.silhouette).k] += 1
    votes[max(reports, key=lambda r: r.dunn).k] += 1
    votes[min(reports, key=lambda r: r.davies_bouldin).k] += 1
    votes[max(reports, key=lambda r: r.calinski_harabasz).k] += 1
    return votes


def pca_project(points, components: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Project mean-centred points onto the top eigenvectors of their covariance.

    Returns the ``(N, components)`` coordinates and explained-variance ratios.
    """
    X = np.asarray(points, dtype=float)
    if len(X) < 2:
        raise ValueError("PCA needs at least 2 points")
    Xc = X - X.mean(axis=0)
    cov = Xc.T @ Xc / (len(X) - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]
    m = min(components, X.shape[1])
    # deterministic sign: largest-magnitude loading positive
    vecs = evecs[:, :m]
    signs = np.sign(vecs[np.argmax(np.abs(vecs), axis=0), np.arange(m)])
    vecs = vecs * np.where(signs == 0, 1.0, signs)
    coords = Xc @ vecs
    total = evals.sum()
    ratios = evals[:m] / total if total > 0 else np.zeros(m)
    if m < components:
        coords = np.hstack([coords, np.zeros((len(X), components - m))])
        ratios = np.concatenate([ratios, np.zeros(components - m)])
    return coords, ratios
