import numpy as np

from rande_prmf.numerics import SpaceTimeField
from rande_prmf.synthdata import ObservedDataSet


def as_fit_view(field: SpaceTimeField, clean: SpaceTimeField | None = None) -> ObservedDataSet:
    """Treat a whole field as fit-window data."""
    n = field.time_grid.n_points
    return ObservedDataSet(field, clean, np.ones(n, bool), np.zeros(n, bool), float(field.times[-1]))


def exhaustive_inertia(X: np.ndarray, k: int) -> float:
    """Minimum within-cluster sum of squares over every labeling with k nonempty clusters."""
    import itertools

    n = len(X)
    best = np.inf
    for labels in itertools.product(range(k), repeat=n - 1):
        lab = np.array((0,) + labels)  # fix the first point's label to drop relabelings
        if len(set(lab.tolist())) != k:
            continue
        total = 0.0
        for j in range(k):
            pts = X[lab == j]
            total += float(((pts - pts.mean(0)) ** 2).sum())
        best = min(best, total)
    return best
