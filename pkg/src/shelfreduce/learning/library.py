"""Deduplicated strategy labels and the random baseline."""

from __future__ import annotations

import numpy as np

from ..solver import IntegerStrategy


class StrategyLibrary:
    """Bijection between integer assignments and dense labels ``0..n-1``."""

    def __init__(self):
        self._labels: dict = {}
        self._strategies: list[IntegerStrategy] = []

    def __len__(self) -> int:
        return len(self._strategies)

    def add(self, strategy: IntegerStrategy) -> int:
        key = strategy.key()
        if key not in self._labels:
            self._labels[key] = len(self._strategies)
            self._strategies.append(strategy)
        return self._labels[key]

    def label(self, strategy: IntegerStrategy) -> int | None:
        return self._labels.get(strategy.key())

    def strategy(self, label: int) -> IntegerStrategy:
        return self._strategies[label]

    def labels(self) -> list[int]:
        return list(range(len(self._strategies)))

    def to_list(self) -> list[dict]:
        return [{"z": [list(t) for t in s.z_star], "n": [list(t) for t in s.n_star]} for s in self._strategies]

    @classmethod
    def from_list(cls, items) -> "StrategyLibrary":
        lib = cls()
        for it in items:
            lib.add(IntegerStrategy(tuple((a, int(b)) for a, b in it["z"]), tuple((a, int(b)) for a, b in it["n"])))
        return lib


def baseline_sample(library: StrategyLibrary | int, k: int, rng_seed: int = 0, pool=None) -> list[int]:
    """``k`` distinct labels drawn uniformly (all of them when fewer exist).

    ``pool`` restricts the draw to a subset of labels.
    """
    labels = list(pool) if pool is not None else (list(range(library)) if isinstance(library, int)
                                                  else library.labels())
    k = max(0, min(k, len(labels)))
    rng = np.random.default_rng(rng_seed)
    pick = rng.choice(len(labels), size=k, replace=False) if k else []
    return [labels[i] for i in pick]
