"""Summaries, grouped statistics, histograms and two-sample distances.

Variances use the population convention (divide by n) throughout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .randomness import InvalidParameterError, InvalidRangeError
from .signals import Predicate

SIGN_GROUPS = ("q>0", "q<=0")


def _nonempty(xs, name: str = "xs") -> np.ndarray:
    x = np.asarray(xs, float).ravel()
    if x.size == 0:
        raise InvalidParameterError(f"{name} is empty")
    return x


def summary(xs) -> tuple[float, float, float, float]:
    """(mean, population variance, min, max)."""
    x = _nonempty(xs)
    return float(x.mean()), float(x.var()), float(x.min()), float(x.max())


@dataclass(frozen=True)
class GroupStat:
    key: str
    count: int
    mean: float
    variance: float


@dataclass(frozen=True)
class GroupedSummary:
    groups: tuple
    between_group_variance: float
    within_group_mean_variance: float

    def group(self, key: str) -> GroupStat:
        for g in self.groups:
            if g.key == key:
                return g
        raise KeyError(key)

    @property
    def total_variance(self) -> float:
        return self.between_group_variance + self.within_group_mean_variance


def grouped_summary(xs, q, s, tag, group_by: Sequence[str | Predicate] = SIGN_GROUPS,
                    default: str | None = None) -> GroupedSummary:
    """Per-group statistics with the between/within variance decomposition.

    Each vertex goes to the first predicate it satisfies; vertices matching
    none go to ``default`` or raise when no default is given.
    """
    x = _nonempty(xs)
    q, s, tag = (np.broadcast_to(np.asarray(v), x.shape) for v in (q, s, tag))
    preds = [p if isinstance(p, Predicate) else Predicate.parse(p) for p in group_by]
    key = np.full(x.size, -1)
    for j, p in enumerate(preds):
        key[(key < 0) & p.test_array(q, s, tag)] = j
    names = [p.describe() for p in preds]
    if np.any(key < 0):
        if default is None:
            i = int(np.flatnonzero(key < 0)[0])
            raise InvalidParameterError(f"vertex {i} (q={float(q[i])!r}) matches no group")
        key[key < 0] = len(preds)
        names.append(default)
    mean = x.mean()
    out, between, within = [], 0.0, 0.0
    for j, name in enumerate(names):
        m = key == j
        if not m.any():
            continue
        xg = x[m]
        w = xg.size / x.size
        out.append(GroupStat(name, int(xg.size), float(xg.mean()), float(xg.var())))
        between += w * (xg.mean() - mean) ** 2
        within += w * xg.var()
    return GroupedSummary(tuple(out), float(between), float(within))


@dataclass(frozen=True)
class Histogram:
    lo: float
    hi: float
    bins: int
    counts: np.ndarray
    total: int

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.bins + 1)

    def mass_within(self, a: float, b: float) -> float:
        """Fraction of the total in bins lying entirely inside [a, b]."""
        e = self.edges
        inside = (e[:-1] >= a) & (e[1:] <= b)
        return float(self.counts[inside].sum() / self.total) if self.total else 0.0


def histogram(xs, lo: float = -1.0, hi: float = 1.0, bins: int = 40) -> Histogram:
    """Equal-width bins [lo, lo+h), ..., [hi-h, hi]; values outside [lo, hi] are rejected."""
    if not lo < hi:
        raise InvalidParameterError(f"need lo < hi, got {lo}, {hi}")
    if bins < 1:
        raise InvalidParameterError(f"bins={bins} must be at least 1")
    x = np.asarray(xs, float).ravel()
    bad = x[(x < lo) | (x > hi) | np.isnan(x)]
    if bad.size:
        raise InvalidRangeError(f"value {float(bad[0])!r} outside [{lo}, {hi}]")
    counts, _ = np.histogram(x, bins=bins, range=(lo, hi))
    return Histogram(float(lo), float(hi), int(bins), counts.astype(np.int64), int(x.size))


def ks_distance(xs, ys) -> float:
    """Sup distance between the two empirical CDFs."""
    x = _nonempty(xs, "xs")
    y = _nonempty(ys, "ys")
    with np.errstate(divide="ignore", invalid="ignore"):   # only the statistic is used, not the p-value
        return float(stats.ks_2samp(x, y, method="asymp").statistic)
