import math

import numpy as np

from measures import DiscreteMeasure, signed_difference


class WeakMetricDict:
    """
    Dyadic hat functions on (0, x_max].

    Level l splits (0, x_max] into 2^l cells of width w; the hat on a cell
    peaks at its midpoint with height min(1, w/2) and vanishes at the cell
    edges, so each g_k is 1-Lipschitz with sup <= 1. Hats are enumerated
    coarse-to-fine, left to right, and the k-th one (k = 1, 2, ...) carries
    weight 2^-k. Atoms above x_max are invisible to the metric.
    """

    def __init__(self, x_max: float, levels: int = 8):
        if x_max <= 0:
            raise ValueError(f"x_max must be positive, got {x_max}")
        if levels < 1:
            raise ValueError(f"levels must be >= 1, got {levels}")
        self.x_max = float(x_max)
        self.levels = int(levels)

    def __repr__(self):
        return f"WeakMetricDict(x_max={self.x_max:g}, levels={self.levels})"

    @property
    def size(self) -> int:
        return 2**self.levels - 1

    def level_integrals(self, sites: np.ndarray, weights: np.ndarray, level: int) -> np.ndarray:
        """<g, m> for every hat of one level, m = sum weights * delta_sites."""
        cells = 2**level
        width = self.x_max / cells
        height = min(1.0, width / 2)
        visible = (sites > 0) & (sites <= self.x_max)
        x = sites[visible]
        w = weights[visible]
        index = np.minimum((x // width).astype(int), cells - 1)
        centre = (index + 0.5) * width
        values = height * np.clip(1.0 - np.abs(x - centre) / (width / 2), 0.0, None)
        return np.bincount(index, weights=values * w, minlength=cells)

    def coefficients(self, sites: np.ndarray, weights: np.ndarray) -> np.ndarray:
        return np.concatenate([self.level_integrals(sites, weights, level) for level in range(self.levels)])

    def weights(self) -> np.ndarray:
        return np.power(0.5, np.arange(1, self.size + 1))


def weak_distance_d0(mu: DiscreteMeasure, nu: DiscreteMeasure, dictionary: WeakMetricDict) -> float:
    sites, diff = signed_difference(mu, nu)
    if len(sites) == 0:
        return 0.0
    coefficients = dictionary.coefficients(sites, diff)
    return math.fsum(dictionary.weights() * np.minimum(1.0, np.abs(coefficients)))
