"""
Binary indexed tree over non-negative particle weights, used to draw a slot
with probability proportional to its weight in O(log m).
"""

from typing import Sequence

import numpy as np


class PhiTree:
    def __init__(self, values: Sequence[float]):
        self.rebuild(values)

    def rebuild(self, values: Sequence[float]) -> None:
        """Reset every slot; the tree is filled in linear time."""
        values = [float(v) for v in values]
        if any(v < 0 for v in values):
            raise ValueError("PhiTree weights must be non-negative")
        self._size = len(values)
        self._value = values
        tree = [0.0] + values
        for j in range(1, self._size + 1):
            parent = j + (j & -j)
            if parent <= self._size:
                tree[parent] += tree[j]
        self._tree = tree
        top = 1
        while top * 2 <= self._size:
            top *= 2
        self._top = top

    def __len__(self):
        return self._size

    def value(self, slot: int) -> float:
        return self._value[slot]

    def values(self) -> np.ndarray:
        return np.array(self._value)

    def set_value(self, slot: int, v: float) -> None:
        if v < 0:
            raise ValueError(f"PhiTree weights must be non-negative, got {v}")
        delta = v - self._value[slot]
        self._value[slot] = v
        j = slot + 1
        while j <= self._size:
            self._tree[j] += delta
            j += j & -j

    def prefix_sum(self, slot: int) -> float:
        """Sum of slots 0..slot inclusive."""
        j = slot + 1
        s = 0.0
        while j > 0:
            s += self._tree[j]
            j -= j & -j
        return s

    def total(self) -> float:
        return self.prefix_sum(self._size - 1) if self._size else 0.0

    def find(self, u: float) -> int:
        """Smallest slot whose inclusive prefix sum exceeds u, for 0 <= u < total."""
        j = 0
        remaining = u
        half = self._top
        while half > 0:
            k = j + half
            if k <= self._size and remaining >= self._tree[k]:
                j = k
                remaining -= self._tree[k]
            half >>= 1
        return min(j, self._size - 1)

    def sample(self, rng: np.random.Generator) -> int:
        """A slot drawn with probability proportional to its weight; zero-weight slots are never returned."""
        total = self.total()
        if total <= 0:
            raise ValueError("Cannot sample from a PhiTree with zero total weight")
        while True:
            slot = self.find(rng.random() * total)
            # Rounding in the prefix sums can land on an emptied slot
            if self._value[slot] > 0:
                return slot
