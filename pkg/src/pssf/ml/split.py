"""Subject-level train / validation / test assignment."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import SplitError
from ..seeding import substream

FOLDS = ("train", "val", "test")


@dataclass(frozen=True)
class SplitPlan:
    folds: dict  # subject_id -> fold name
    fractions: tuple
    seed: int

    def subjects(self, fold: str) -> list:
        return sorted(s for s, f in self.folds.items() if f == fold)

    def fold_of(self, subject_id: str) -> str:
        return self.folds[subject_id]

    def to_dict(self) -> dict:
        return {"folds": dict(sorted(self.folds.items())), "fractions": list(self.fractions), "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "SplitPlan":
        return cls(dict(d["folds"]), tuple(d["fractions"]), int(d["seed"]))


def fold_sizes(n: int, fractions) -> list:
    raw = np.asarray(fractions, dtype=np.float64) * n
    sizes = np.floor(raw + 1e-9).astype(int)
    order = sorted(range(len(sizes)), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in order[: n - sizes.sum()]:
        sizes[i] += 1
    return sizes.tolist()


def split_subjects(subject_ids, fractions=(0.70, 0.15, 0.15), seed: int = 0) -> SplitPlan:
    """Seeded shuffle of the sorted unique ids, cut contiguously into folds."""
    ids = sorted(set(subject_ids))
    f = np.asarray(fractions, dtype=np.float64)
    if f.shape != (3,) or np.any(f < 0) or abs(f.sum() - 1.0) > 1e-9:
        raise SplitError("fractions must be three non-negative numbers summing to 1")
    if len(ids) < 3:
        raise SplitError("need at least 3 subjects to split")
    order = substream(seed, "split").permutation(len(ids))
    sizes = fold_sizes(len(ids), f)
    folds = {}
    start = 0
    for name, size in zip(FOLDS, sizes):
        for i in order[start : start + size]:
            folds[ids[i]] = name
        start += size
    return SplitPlan(folds, tuple(float(x) for x in f), int(seed))
