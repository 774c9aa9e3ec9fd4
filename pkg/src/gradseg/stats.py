"""Nonparametric statistics: Wilcoxon signed-rank test, Spearman correlation,
and volume-binned correlation of tumor shrinkage against segmentation accuracy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AllZeroDifferences, DegenerateInput

EXACT_MAX_N = 25


def midranks(values) -> np.ndarray:
    """1-based ranks with ties replaced by the mean of the ranks they span."""
    x = np.asarray(values, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    sx = x[order]
    ranks = np.empty(len(x))
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


@dataclass
class PairedSample:
    values_a: list[float]
    values_b: list[float]
    ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        if len(self.values_a) != len(self.values_b) or len(self.values_a) < 1:
            raise DegenerateInput("paired sample needs two equal-length, non-empty lists")
        if not (np.isfinite(self.values_a).all() and np.isfinite(self.values_b).all()):
            raise DegenerateInput("paired sample values must be finite")


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float  # min(W+, W-)
    p_two_sided: float
    n_effective: int
    w_plus: float
    method: str  # "exact" or "normal"

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def exact_signed_rank_counts(ranks) -> np.ndarray:
    """Number of sign assignments giving each value of ``2 * W+``.

    Equivalent to enumerating all ``2**n`` sign patterns; computed by
    convolving one rank at a time. Ranks must be multiples of 0.5.
    """
    doubled = np.rint(np.asarray(ranks) * 2).astype(np.int64)
    counts = np.zeros(int(doubled.sum()) + 1, dtype=np.int64)
    counts[0] = 1
    for r in doubled:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: len(counts) - r]
        counts = counts + shifted
    return counts


def wilcoxon_signed_rank(s: PairedSample) -> WilcoxonResult:
    """Two-sided Wilcoxon signed-rank test on ``a - b``.

    Zero differences are dropped, tied magnitudes get mid-ranks. Up to 25
    non-zero differences the p-value is exact; beyond that a normal
    approximation with tie and continuity corrections is used.
    """
    d = np.asarray(s.values_a, dtype=np.float64) - np.asarray(s.values_b, dtype=np.float64)
    d = d[d != 0]
    n = len(d)
    if n == 0:
        raise AllZeroDifferences("all paired differences are zero")
    ranks = midranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)
    if n <= EXACT_MAX_N:
        counts = exact_signed_rank_counts(ranks)
        tail = counts[: int(round(2 * w)) + 1].sum()
        p = min(1.0, 2.0 * float(tail) / float(2**n))
        method = "exact"
    else:
        mean = n * (n + 1) / 4.0
        _, tie_counts = np.unique(ranks, return_counts=True)
        var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(tie_counts**3 - tie_counts)) / 48.0
        dev = max(abs(w_plus - mean) - 0.5, 0.0)
        z = dev / math.sqrt(var)
        p = min(1.0, math.erfc(z / math.sqrt(2.0)))
        p = max(p, np.finfo(float).tiny)
        method = "normal"
    return WilcoxonResult(w, p, n, w_plus, method)


def spearman(x, y) -> float:
    """Spearman's rho: Pearson correlation of the mid-ranks."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise DegenerateInput("spearman needs two equal-length vectors of length >= 2")
    rx, ry = midranks(x), midranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    den = math.sqrt(float(np.dot(rx, rx)) * float(np.dot(ry, ry)))
    if den == 0.0:
        raise DegenerateInput("spearman is undefined for a constant vector")
    return float(np.clip(np.dot(rx, ry) / den, -1.0, 1.0))


@dataclass(frozen=True)
class VolumeChangeRecord:
    case_id: str
    label: str
    pre_cc: float
    mid_cc: float
    dsc: float

    def __post_init__(self):
        if self.pre_cc < 0 or self.mid_cc < 0:
            raise ValueError(f"{self.case_id}: volumes must be >= 0")

    @property
    def delta_cc(self) -> float:
        """Shrinkage: pre-RT volume minus mid-RT volume."""
        return self.pre_cc - self.mid_cc

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "label": self.label,
            "pre_cc": self.pre_cc,
            "mid_cc": self.mid_cc,
            "delta_cc": self.delta_cc,
            "dsc": self.dsc,
        }


@dataclass
class VolumeGroup:
    name: str
    lo: float | None
    hi: float | None
    records: list[VolumeChangeRecord]
    rho: float | None = None

    @property
    def n(self) -> int:
        return len(self.records)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "lo": self.lo,
            "hi": self.hi,
            "n": self.n,
            "spearman_rho": self.rho,
            "case_ids": [r.case_id for r in self.records],
        }


@dataclass
class BinnedVolumes:
    underflow: VolumeGroup
    bins: list[VolumeGroup]
    overflow: VolumeGroup
    zero_volume: VolumeGroup

    @property
    def groups(self) -> list[VolumeGroup]:
        return [self.zero_volume, self.underflow, *self.bins, self.overflow]

    def to_dict(self) -> dict:
        return {
            "zero_volume": self.zero_volume.to_dict(),
            "underflow": self.underflow.to_dict(),
            "bins": [b.to_dict() for b in self.bins],
            "overflow": self.overflow.to_dict(),
        }


def _group_rho(records) -> float | None:
    if len(records) < 2:
        return None
    try:
        return spearman([r.delta_cc for r in records], [r.dsc for r in records])
    except DegenerateInput:
        return None


def bin_volume_records(records, edges) -> BinnedVolumes:
    """Partition records by mid-RT volume into half-open bins ``[e_i, e_i+1)``.

    Records with zero mid-RT volume go to a separate group; the rest fall in
    underflow (below the first edge), one bin, or overflow (at or above the
    last edge). Each group carries ``spearman(delta_cc, dsc)`` when defined.
    """
    edges = [float(e) for e in edges]
    if len(edges) < 1 or any(b <= a for a, b in zip(edges, edges[1:])):
        raise ValueError(f"bin edges must be strictly ascending, got {edges}")
    zero, under, over = [], [], []
    inner = [[] for _ in range(len(edges) - 1)]
    for r in records:
        if r.mid_cc == 0:
            zero.append(r)
        elif r.mid_cc < edges[0]:
            under.append(r)
        elif r.mid_cc >= edges[-1]:
            over.append(r)
        else:
            i = int(np.searchsorted(edges, r.mid_cc, side="right")) - 1
            inner[i].append(r)

    def group(name, lo, hi, recs):
        return VolumeGroup(name, lo, hi, recs, _group_rho(recs))

    bins = [group(f"[{lo:g}, {hi:g})", lo, hi, recs) for lo, hi, recs in zip(edges, edges[1:], inner)]
    return BinnedVolumes(
        underflow=group(f"(0, {edges[0]:g})", 0.0, edges[0], under),
        bins=bins,
        overflow=group(f"[{edges[-1]:g}, inf)", edges[-1], None, over),
        zero_volume=group("zero", 0.0, 0.0, zero),
    )
