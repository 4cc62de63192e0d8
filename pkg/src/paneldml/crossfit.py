"""Fold plans that split a panel across both units and time.

A plan partitions units into randomly assigned folds and time into
contiguous blocks. For a fold pair the main sample is the product of one
unit fold and one time block; the auxiliary sample drops that unit fold
and the block together with both neighboring blocks, so nuisance fits
never touch observations adjacent in time to the ones they are used on.

All indices are 0-based positions into the panel's unit and time axes.
"""

import json
from dataclasses import dataclass

import numpy as np

__all__ = ["CrossFitPlan", "make_plan", "main_sample", "auxiliary_sample"]


@dataclass(frozen=True)
class CrossFitPlan:
    """Immutable two-way fold layout.

    unit_folds and time_folds are tuples of tuples of 0-based indices.
    Unit folds partition range(n_units) in shuffled assignment; time folds
    partition range(n_periods) into ordered contiguous blocks. Fold sizes
    differ by at most one along each axis.
    """

    n_units: int
    n_periods: int
    unit_folds: tuple
    time_folds: tuple
    seed: int

    def __post_init__(self):
        units = sorted(i for fold in self.unit_folds for i in fold)
        if units != list(range(self.n_units)):
            raise ValueError("unit folds must partition range(n_units)")
        times = [t for fold in self.time_folds for t in fold]
        if times != list(range(self.n_periods)):
            raise ValueError(
                "time folds must partition range(n_periods) in contiguous order"
            )
        for folds in (self.unit_folds, self.time_folds):
            sizes = [len(f) for f in folds]
            if min(sizes) == 0:
                raise ValueError("folds must be nonempty")
            if max(sizes) - min(sizes) > 1:
                raise ValueError("fold sizes must differ by at most one")

    @property
    def n_unit_folds(self):
        return len(self.unit_folds)

    @property
    def n_time_folds(self):
        return len(self.time_folds)

    def to_json(self):
        """Serialize the fold membership lists to a JSON string."""
        payload = {
            "n_units": self.n_units,
            "n_periods": self.n_periods,
            "seed": self.seed,
            "unit_folds": [list(f) for f in self.unit_folds],
            "time_folds": [list(f) for f in self.time_folds],
        }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        payload = json.loads(text)
        return cls(
            n_units=int(payload["n_units"]),
            n_periods=int(payload["n_periods"]),
            unit_folds=tuple(tuple(int(i) for i in f) for f in payload["unit_folds"]),
            time_folds=tuple(tuple(int(t) for t in f) for f in payload["time_folds"]),
            seed=int(payload["seed"]),
        )


def make_plan(n_units, n_periods, n_unit_folds=4, n_time_folds=8, seed=0):
    """Build a fold plan with shuffled unit folds and contiguous time blocks.

    Parameters
    ----------
    n_units, n_periods : int
    n_unit_folds : int
        Number of unit folds, between 1 and n_units. With a single unit
        fold no auxiliary sample exists, so estimation requires >= 2.
    n_time_folds : int
        Number of time blocks, between 4 and n_periods. Fewer than 4
        blocks leave no auxiliary periods for the middle blocks.
    seed : int
        Unit assignment comes from a shuffle seeded with this value; the
        same seed always yields the same plan.

    Returns
    -------
    CrossFitPlan
    """
    n, t_len = int(n_units), int(n_periods)
    k_folds, l_folds = int(n_unit_folds), int(n_time_folds)
    if not 1 <= k_folds <= n:
        raise ValueError(f"unit fold count must lie in [1, {n}], got {k_folds}")
    if l_folds < 4:
        raise ValueError(
            f"need at least 4 time folds so every block has non-adjacent "
            f"auxiliary periods, got {l_folds}"
        )
    if l_folds > t_len:
        raise ValueError(f"time fold count {l_folds} exceeds T={t_len}")
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    order = rng.permutation(n)
    unit_folds = tuple(
        tuple(sorted(int(i) for i in chunk)) for chunk in np.array_split(order, k_folds)
    )
    time_folds = tuple(
        tuple(int(t) for t in chunk)
        for chunk in np.array_split(np.arange(t_len), l_folds)
    )
    return CrossFitPlan(
        n_units=n,
        n_periods=t_len,
        unit_folds=unit_folds,
        time_folds=time_folds,
        seed=int(seed),
    )


def _check_pair(plan, k, l):
    if not 0 <= k < plan.n_unit_folds:
        raise IndexError(f"unit fold index {k} out of range [0, {plan.n_unit_folds})")
    if not 0 <= l < plan.n_time_folds:
        raise IndexError(f"time fold index {l} out of range [0, {plan.n_time_folds})")


def main_sample(plan, k, l):
    """Unit and time indices of the main sample for fold pair (k, l).

    Returns
    -------
    (ndarray, ndarray)
        Sorted 0-based unit indices (fold k) and time indices (block l);
        the sample is their product set.
    """
    _check_pair(plan, k, l)
    units = np.asarray(plan.unit_folds[k], dtype=np.intp)
    times = np.asarray(plan.time_folds[l], dtype=np.intp)
    return units, times


def auxiliary_sample(plan, k, l):
    """Unit and time indices of fold pair (k, l)'s auxiliary sample.

    Units come from every fold except k. Times come from every block
    except l and its immediate neighbors; the neighbor exclusion is
    clipped at the boundaries, never wrapped around.

    Returns
    -------
    (ndarray, ndarray)
        Sorted 0-based unit and time indices; the sample is their product.
        Raises if either side is empty, which happens only with a single
        unit fold or fewer than 4 time blocks.
    """
    _check_pair(plan, k, l)
    units = sorted(
        i for kk in range(plan.n_unit_folds) if kk != k for i in plan.unit_folds[kk]
    )
    times = [
        t
        for ll in range(plan.n_time_folds)
        if abs(ll - l) > 1
        for t in plan.time_folds[ll]
    ]
    if not units or not times:
        raise ValueError(
            f"auxiliary sample for fold pair ({k}, {l}) is empty; need at "
            "least 2 unit folds and 4 time folds"
        )
    return np.asarray(units, dtype=np.intp), np.asarray(times, dtype=np.intp)
