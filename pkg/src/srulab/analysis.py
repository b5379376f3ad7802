"""Feature-distribution analytics: PCA, Mahalanobis distance, success rate by distance."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import ContractError

RIDGE_SCALE = 1e-6


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"expected an (N, D) feature matrix, got shape {X.shape}")
    return X


@dataclass
class PCAResult:
    mean: np.ndarray  # (D,)
    components: np.ndarray  # (k, D), orthonormal rows
    explained_variance: np.ndarray  # (k,), nonincreasing
    projections: np.ndarray  # (N, k)
    total_variance: float

    @property
    def explained_ratio(self) -> np.ndarray:
        if self.total_variance == 0:
            return np.zeros_like(self.explained_variance)
        return self.explained_variance / self.total_variance

    def project(self, X) -> np.ndarray:
        return (_as_matrix(X) - self.mean) @ self.components.T

    def reconstruct(self, Z) -> np.ndarray:
        return np.asarray(Z) @ self.components + self.mean


def pca_fit_project(X, k: int) -> PCAResult:
    """Top-``k`` principal axes of the sample covariance and the centered projections.

    Zero-variance directions are allowed (rank-deficient data); each
    component's sign is fixed so its largest-magnitude entry is positive.
    """
    X = _as_matrix(X)
    N, D = X.shape
    if not 1 <= k <= D or N <= k:
        raise ValueError(f"need N > k >= 1 and k <= D, got N={N}, D={D}, k={k}")
    mean = X.mean(axis=0)
    cov = np.cov(X - mean, rowvar=False, ddof=1).reshape(D, D)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    comps = evecs[:, order].T
    pivot = np.argmax(np.abs(comps), axis=1)
    comps *= np.sign(comps[np.arange(D), pivot])[:, None]
    return PCAResult(mean, comps[:k], evals[:k], (X - mean) @ comps[:k].T, float(evals.sum()))


@dataclass
class FeatureSet:
    """A Gaussian summary (mean, covariance) of an (N, D) feature matrix."""

    mean: np.ndarray
    cov: np.ndarray
    ridge: float = 0.0

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.cov = np.atleast_2d(np.asarray(self.cov, dtype=np.float64))
        D = self.mean.shape[0]
        if self.cov.shape != (D, D):
            raise ValueError(f"covariance shape {self.cov.shape} does not match mean of length {D}")
        if not np.allclose(self.cov, self.cov.T, rtol=0, atol=1e-12 * max(1.0, np.abs(self.cov).max())):
            raise ValueError("covariance must be symmetric")
        self._chol = None

    @classmethod
    def fit(cls, X, ridge_scale: float = RIDGE_SCALE) -> "FeatureSet":
        """Column mean and sample covariance; ridge ``ridge_scale * trace / D`` for inversion."""
        X = _as_matrix(X)
        if X.shape[0] < 2:
            raise ValueError("need at least two samples to fit a covariance")
        mean = X.mean(axis=0)
        cov = np.cov(X, rowvar=False, ddof=1).reshape(X.shape[1], X.shape[1])
        cov = 0.5 * (cov + cov.T)
        return cls(mean, cov, ridge_scale * float(np.trace(cov)) / X.shape[1])

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def cholesky(self) -> np.ndarray:
        if self._chol is None:
            reg = self.cov + self.ridge * np.eye(self.dim)
            ev = np.linalg.eigvalsh(reg)
            if ev[0] <= self.dim * np.finfo(np.float64).eps * max(ev[-1], 0.0):
                raise ContractError("covariance is singular; fit with a positive ridge")
            try:
                self._chol = np.linalg.cholesky(reg)
            except np.linalg.LinAlgError:
                raise ContractError("covariance is singular; fit with a positive ridge") from None
        return self._chol

    def mahalanobis(self, x) -> np.ndarray | float:
        return mahalanobis(x, self)


def mahalanobis(x, fs: FeatureSet):
    """``sqrt((x - mu)^T (Sigma + ridge I)^{-1} (x - mu))`` for one query (D,) or a batch (M, D)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    diff = np.atleast_2d(x) - fs.mean
    if diff.shape[1] != fs.dim:
        raise ValueError(f"query dimension {diff.shape[1]} != feature dimension {fs.dim}")
    z = np.linalg.solve(fs.cholesky(), diff.T)
    d = np.sqrt(np.sum(z * z, axis=0))
    return float(d[0]) if single else d


@dataclass
class ClassConditional:
    """Per-class means with one shared (tied) covariance; distance = min over classes."""

    means: np.ndarray  # (C, D)
    classes: np.ndarray
    shared: FeatureSet

    @classmethod
    def fit(cls, X, labels, ridge_scale: float = RIDGE_SCALE) -> "ClassConditional":
        X = _as_matrix(X)
        labels = np.asarray(labels)
        classes = np.unique(labels)
        means = np.stack([X[labels == c].mean(axis=0) for c in classes])
        centered = X - means[np.searchsorted(classes, labels)]
        cov = centered.T @ centered / max(len(X) - len(classes), 1)
        cov = 0.5 * (cov + cov.T)
        shared = FeatureSet(np.zeros(X.shape[1]), cov, ridge_scale * float(np.trace(cov)) / X.shape[1])
        return cls(means, classes, shared)

    def mahalanobis(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        d = np.stack([mahalanobis(x - m, self.shared) for m in self.means])
        return d.min(axis=0)


@dataclass
class DistanceBuckets:
    edges: list
    successes: list
    totals: list
    out_of_range: int

    @property
    def rates(self) -> list:
        return [None if n == 0 else s / n for s, n in zip(self.successes, self.totals)]

    def to_dict(self) -> dict:
        return {"edges": list(self.edges), "successes": list(self.successes), "totals": list(self.totals),
                "rates": self.rates, "out_of_range": self.out_of_range}


def success_by_distance(distances, successes, edges) -> DistanceBuckets:
    """Count outcomes in buckets ``[e_i, e_{i+1})``; the last bucket also includes its upper edge.

    Empty buckets report a ``None`` rate; distances outside the edges are
    counted in ``out_of_range``.
    """
    edges = [float(e) for e in edges]
    if len(edges) < 2 or any(b <= a for a, b in zip(edges[:-1], edges[1:])):
        raise ValueError(f"bucket edges must be strictly increasing with at least two entries, got {edges}")
    d = np.asarray(distances, dtype=np.float64)
    ok = np.asarray(successes).astype(bool)
    if d.shape != ok.shape:
        raise ValueError("distances and successes must have the same length")
    idx = np.searchsorted(edges, d, side="right") - 1
    idx[d == edges[-1]] = len(edges) - 2
    inside = (idx >= 0) & (idx < len(edges) - 1)
    nb = len(edges) - 1
    totals = np.bincount(idx[inside], minlength=nb)
    wins = np.bincount(idx[inside & ok], minlength=nb)
    return DistanceBuckets(edges, [int(v) for v in wins], [int(v) for v in totals], int((~inside).sum()))


def box_stats(values) -> dict:
    """Median, quartiles and Tukey whiskers (1.5 IQR) of a sample."""
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if v.size == 0:
        raise ValueError("box_stats of an empty sample")
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    iqr = q3 - q1
    lo = v[v >= q1 - 1.5 * iqr].min()
    hi = v[v <= q3 + 1.5 * iqr].max()
    return {"n": int(v.size), "median": float(med), "q1": float(q1), "q3": float(q3),
            "whisker_low": float(lo), "whisker_high": float(hi), "min": float(v[0]), "max": float(v[-1])}


def read_feature_csv(path: str | Path) -> tuple[list[str], np.ndarray]:
    """Header row plus float rows."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty CSV")
    header, body = rows[0], [r for r in rows[1:] if r]
    try:
        data = np.array([[float(v) for v in r] for r in body], dtype=np.float64)
    except ValueError as exc:
        raise ValueError(f"{path}: non-numeric value ({exc})") from None
    if data.size and data.shape[1] != len(header):
        raise ValueError(f"{path}: {data.shape[1]} columns but {len(header)} header names")
    return header, data.reshape(len(body), len(header))
