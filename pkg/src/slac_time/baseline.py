"""Comparison arm: interpolate onto a regular grid, flatten, run K-means on raw values."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import TimeSeriesSample
from .metrics import ValidityReport, validity_report
from .training import ClusterState, kmeans


@dataclass
class GridSpec:
    step: float = 6.0
    horizon: float = 120.0

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError(f"grid step must be > 0, got {self.step}")
        ratio = self.horizon / self.step
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError(f"grid step {self.step} must divide horizon {self.horizon}")

    @property
    def length(self) -> int:
        return int(round(self.horizon / self.step)) + 1

    def hours(self) -> np.ndarray:
        return np.arange(self.length) * self.step


def interpolate_to_grid(sample: TimeSeriesSample, n_features: int, grid: GridSpec) -> np.ndarray:
    """Per-variable linear interpolation of a normalized sample onto the grid.

    Flat extrapolation outside the observed range; a variable with no
    observations is filled with 0, the training mean in normalized units.
    Sample times are expected in ``t / horizon`` units.
    """
    t, f, v = sample.arrays()
    hours = t * grid.horizon
    g = grid.hours()
    out = np.zeros((n_features, grid.length))
    for j in range(n_features):
        sel = f == j
        if not sel.any():
            continue
        tj, vj = hours[sel], v[sel]
        order = np.argsort(tj, kind="stable")
        out[j] = np.interp(g, tj[order], vj[order])
    return out.reshape(-1)


def flatten(samples: list[TimeSeriesSample], n_features: int, grid: GridSpec) -> np.ndarray:
    """``[grid values ; static vector]`` per sample; statics must already be imputed."""
    rows = [np.concatenate([interpolate_to_grid(s, n_features, grid), s.static]) for s in samples]
    X = np.vstack(rows)
    if np.isnan(X).any():
        raise ValueError("static vectors must be imputed before flattening")
    return X


@dataclass
class BaselineResult:
    state: ClusterState
    report: ValidityReport
    points: np.ndarray


def baseline_cluster(samples: list[TimeSeriesSample], n_features: int, k: int, grid: GridSpec, seed: int,
                     truth=None, restarts: int = 10) -> BaselineResult:
    if len(samples) < k:
        raise ValueError(f"need at least k={k} samples")
    X = flatten(samples, n_features, grid)
    km = kmeans(X, k, seed, restarts)
    state = ClusterState(km.centroids, km.labels, [], [np.bincount(km.labels, minlength=k).tolist()])
    return BaselineResult(state, validity_report(X, km.labels, truth), X)
