"""Association statistics: Pearson, Spearman and the concordance family.

The concordance index (CI), robust CI (rCI) and kernelized CI (kCI) each
come with a brute-force O(n^2) reference and, where one exists, an
O(n log n) path.  The two are required to agree exactly, which is why every
"difference exceeds delta" test in this package is written as
``hi > lo + delta`` rather than ``abs(hi - lo) > delta``.
"""

from dataclasses import dataclass
from typing import Literal, NamedTuple, Optional

import numpy as np
from scipy.stats import rankdata

from . import _kernels

__all__ = [
    "ConcordanceError",
    "DegenerateInputError",
    "UndefinedStatisticError",
    "PrecisionLimitError",
    "PairedSample",
    "RciParams",
    "KernelSpec",
    "AssociationResult",
    "PairCensus",
    "pearson",
    "spearman",
    "ci_naive",
    "ci_fast",
    "rci_naive",
    "rci_fast",
    "kci",
    "pair_census",
    "associate",
]

TieMode = Literal["strict", "exclude"]


class ConcordanceError(ValueError):
    """Base class for errors raised by this package."""


class DegenerateInputError(ConcordanceError):
    """Input lacks the variation a statistic needs (constant or all-tied vector)."""


class UndefinedStatisticError(ConcordanceError):
    """The statistic has an empty denominator: no valid pairs or zero weight."""


class PrecisionLimitError(ConcordanceError):
    """The requested exact computation exceeds double precision."""


@dataclass(frozen=True, eq=False)
class PairedSample:
    """Two aligned, finite measurement vectors of equal length n >= 2."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.array(self.x, dtype=float).ravel()
        y = np.array(self.y, dtype=float).ravel()
        if x.shape != y.shape:
            raise ConcordanceError(f"x and y differ in length ({x.size} != {y.size})")
        if x.size < 2:
            raise ConcordanceError("a paired sample needs at least 2 observations")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ConcordanceError("paired sample contains NaN or infinite values")
        x.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.size

    def swapped(self) -> "PairedSample":
        return PairedSample(self.y, self.x)

    def with_y(self, y) -> "PairedSample":
        return PairedSample(self.x, y)


@dataclass(frozen=True)
class RciParams:
    """Noise thresholds for the robust CI, in the units of x and y."""

    delta_x: float = 0.0
    delta_y: float = 0.0

    def __post_init__(self):
        for name in ("delta_x", "delta_y"):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v < 0:
                raise ConcordanceError(f"{name} must be finite and >= 0, got {v}")
            object.__setattr__(self, name, v)

    def swapped(self) -> "RciParams":
        return RciParams(self.delta_y, self.delta_x)


@dataclass(frozen=True)
class KernelSpec:
    """Pair-weighting kernel for kCI: w(dx, dy) = k_x(dx) * k_y(dy).

    ``unit`` weights every pair 1 (kCI reduces to CI), ``heavyside`` gives
    the rCI validity indicator, and ``logistic`` applies the same sigmoid
    ``1 / (1 + exp(slope * (d - midpoint)))`` to both axes.  A negative slope
    makes the weight rise from near 0 at d = 0 towards 1.
    """

    form: Literal["unit", "heavyside", "logistic"] = "unit"
    delta_x: float = 0.0
    delta_y: float = 0.0
    slope: float = -1.0
    midpoint: float = 0.0

    def __post_init__(self):
        if self.form not in ("unit", "heavyside", "logistic"):
            raise ConcordanceError(f"unknown kernel form {self.form!r}")
        if self.form == "heavyside":
            RciParams(self.delta_x, self.delta_y)
        if self.form == "logistic":
            if not (np.isfinite(self.slope) and np.isfinite(self.midpoint)):
                raise ConcordanceError("logistic kernel parameters must be finite")
            if self.slope >= 0:
                raise ConcordanceError("logistic kernel slope must be negative")

    @classmethod
    def unit(cls) -> "KernelSpec":
        return cls("unit")

    @classmethod
    def heavyside(cls, delta_x: float, delta_y: float) -> "KernelSpec":
        return cls("heavyside", delta_x=float(delta_x), delta_y=float(delta_y))

    @classmethod
    def logistic(cls, slope: float, midpoint: float) -> "KernelSpec":
        return cls("logistic", slope=float(slope), midpoint=float(midpoint))

    def weight(self, d, axis: str = "x"):
        """Per-axis weight of an absolute difference ``d``."""
        d = np.asarray(d, dtype=float)
        if self.form == "unit":
            return np.ones_like(d)
        if self.form == "heavyside":
            delta = self.delta_x if axis == "x" else self.delta_y
            return (d > delta).astype(float)
        with np.errstate(over="ignore"):
            return 1.0 / (1.0 + np.exp(self.slope * (d - self.midpoint)))

    def pair_weights(self, v, axis: str = "x") -> np.ndarray:
        """n x n matrix of per-axis weights for the values ``v``."""
        v = np.asarray(v, dtype=float)
        if self.form == "heavyside":
            delta = self.delta_x if axis == "x" else self.delta_y
            hi = v[None, :] > v[:, None] + delta
            return (hi | hi.T).astype(float)
        return self.weight(np.abs(v[None, :] - v[:, None]), axis)

    def swapped(self) -> "KernelSpec":
        if self.form == "heavyside":
            return KernelSpec.heavyside(self.delta_y, self.delta_x)
        return self


@dataclass(frozen=True)
class AssociationResult:
    statistic: str
    estimate: float
    effective_pairs: float
    n: int

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "estimate": self.estimate,
            "effective_pairs": self.effective_pairs,
            "n": self.n,
        }


class PairCensus(NamedTuple):
    concordant: int
    discordant: int
    tied: int
    invalid: int


def _n_pairs(n: int) -> int:
    return n * (n - 1) // 2


def _tied_pairs(v: np.ndarray) -> int:
    _, counts = np.unique(v, return_counts=True)
    return int(np.sum(counts * (counts - 1) // 2))


def _tied_both(sample: PairedSample) -> int:
    _, counts = np.unique(np.column_stack([sample.x, sample.y]), axis=0, return_counts=True)
    return int(np.sum(counts * (counts - 1) // 2))


def pearson(sample: PairedSample) -> AssociationResult:
    """Sample product-moment correlation."""
    xc = sample.x - sample.x.mean()
    yc = sample.y - sample.y.mean()
    sxx = np.dot(xc, xc)
    syy = np.dot(yc, yc)
    if sxx == 0 or syy == 0:
        raise DegenerateInputError("Pearson correlation needs non-constant x and y")
    r = float(np.dot(xc, yc) / np.sqrt(sxx * syy))
    r = min(1.0, max(-1.0, r))
    return AssociationResult("pearson", r, float(_n_pairs(sample.n)), sample.n)


def spearman(sample: PairedSample) -> AssociationResult:
    """Pearson correlation of midranks (ties share their average rank)."""
    if np.ptp(sample.x) == 0 or np.ptp(sample.y) == 0:
        raise DegenerateInputError("Spearman correlation needs >= 2 distinct values per vector")
    res = pearson(PairedSample(rankdata(sample.x), rankdata(sample.y)))
    return AssociationResult("spearman", res.estimate, res.effective_pairs, sample.n)


def _concordance_masks(x, y, delta_x=0.0, delta_y=0.0):
    xj_hi = x[None, :] > x[:, None] + delta_x
    xi_hi = x[:, None] > x[None, :] + delta_x
    yj_hi = y[None, :] > y[:, None] + delta_y
    yi_hi = y[:, None] > y[None, :] + delta_y
    upper = np.triu(np.ones((x.size, x.size), dtype=bool), 1)
    conc = ((xj_hi & yj_hi) | (xi_hi & yi_hi)) & upper
    disc = ((xj_hi & yi_hi) | (xi_hi & yj_hi)) & upper
    return conc, disc


def _ci_result(sample, conc, disc, ties):
    total = _n_pairs(sample.n)
    if ties == "strict":
        return AssociationResult("ci", conc / total, float(total), sample.n)
    if ties != "exclude":
        raise ConcordanceError(f"unknown tie handling {ties!r}")
    untied = conc + disc
    if untied == 0:
        raise UndefinedStatisticError("every pair is tied; CI excluding ties is undefined")
    return AssociationResult("ci", conc / untied, float(untied), sample.n)


def ci_naive(sample: PairedSample, ties: TieMode = "strict") -> AssociationResult:
    """Concordance index by enumerating all pairs.

    With ``ties="strict"`` a pair tied in x or y stays in the C(n, 2)
    denominator but is never concordant.  ``ties="exclude"`` drops tied
    pairs from both numerator and denominator.
    """
    conc, disc = _concordance_masks(sample.x, sample.y)
    return _ci_result(sample, int(conc.sum()), int(disc.sum()), ties)


def ci_fast(sample: PairedSample, ties: TieMode = "strict") -> AssociationResult:
    """Concordance index in O(n log n).

    Orders the pairs by x (y descending inside tied x blocks) and counts
    strictly ascending pairs of y with a merge sort.
    """
    order = np.lexsort((-sample.y, sample.x))
    conc = int(_kernels.count_ascending_pairs(sample.y[order]))
    if ties == "strict":
        return _ci_result(sample, conc, 0, ties)
    tied = _tied_pairs(sample.x) + _tied_pairs(sample.y) - _tied_both(sample)
    disc = _n_pairs(sample.n) - tied - conc
    return _ci_result(sample, conc, disc, ties)


def _rci_result(sample, conc, disc):
    valid = conc + disc
    if valid == 0:
        raise UndefinedStatisticError("no valid pairs at these thresholds; rCI is undefined")
    return AssociationResult("rci", conc / valid, float(valid), sample.n)


def rci_naive(sample: PairedSample, params: RciParams) -> AssociationResult:
    """Robust CI by enumerating pairs.

    A pair is valid when it differs by more than ``delta_x`` in x and more
    than ``delta_y`` in y; the estimate is the concordant share of valid pairs.
    """
    conc, disc = _concordance_masks(sample.x, sample.y, params.delta_x, params.delta_y)
    return _rci_result(sample, int(conc.sum()), int(disc.sum()))


def rci_fast(sample: PairedSample, params: RciParams) -> AssociationResult:
    """Robust CI in O(n log n).

    Each observation i contributes a virtual item at (x_i + dx, y_i + dy);
    concordant valid pairs are the real items that dominate a virtual item
    in both coordinates.  Discordant pairs use virtual items
    (x_i + dx, -y_i) against real items (x_j, -(y_j + dy)).  Both counts
    come from one merge sort each (see ``_kernels.count_dominating``).
    """
    x, y = sample.x, sample.y
    dx, dy = params.delta_x, params.delta_y
    conc = int(_kernels.count_dominating(x, y, x + dx, y + dy))
    disc = int(_kernels.count_dominating(x, -(y + dy), x + dx, -y))
    return _rci_result(sample, conc, disc)


def kci(sample: PairedSample, kernel: KernelSpec) -> AssociationResult:
    """Kernelized CI: weighted share of concordant pairs, O(n^2).

    Summing over ordered pairs, 2 * sum(w * I[concordant]) / sum(w) equals
    the same ratio over unordered pairs, so the unit kernel gives CI and the
    heavyside kernel gives rCI.
    """
    w = kernel.pair_weights(sample.x, "x") * kernel.pair_weights(sample.y, "y")
    conc, _ = _concordance_masks(sample.x, sample.y)
    upper = np.triu(np.ones_like(w, dtype=bool), 1)
    total = float(w[upper].sum())
    if not total > 0:
        raise UndefinedStatisticError("total kernel weight is zero; kCI is undefined")
    return AssociationResult("kci", float(w[conc].sum()) / total, total, sample.n)


def pair_census(sample: PairedSample, params: Optional[RciParams] = None) -> PairCensus:
    """Classify every unordered pair as concordant, discordant, tied or invalid.

    A pair tied in x or y counts as tied; otherwise a pair failing either
    threshold is invalid.  The four counts sum to C(n, 2).
    """
    params = params or RciParams()
    x, y = sample.x, sample.y
    upper = np.triu(np.ones((sample.n, sample.n), dtype=bool), 1)
    tied = ((x[None, :] == x[:, None]) | (y[None, :] == y[:, None])) & upper
    conc, disc = _concordance_masks(x, y, params.delta_x, params.delta_y)
    n_tied = int(tied.sum())
    n_conc = int(conc.sum())
    n_disc = int(disc.sum())
    return PairCensus(n_conc, n_disc, n_tied, _n_pairs(sample.n) - n_tied - n_conc - n_disc)


def associate(sample: PairedSample, statistic: str, params: Optional[RciParams] = None,
              kernel: Optional[KernelSpec] = None, ties: TieMode = "strict") -> AssociationResult:
    """Dispatch by statistic name, using the fast path where there is one."""
    if statistic == "pearson":
        return pearson(sample)
    if statistic == "spearman":
        return spearman(sample)
    if statistic == "ci":
        return ci_fast(sample, ties)
    if statistic == "rci":
        return rci_fast(sample, params or RciParams())
    if statistic == "kci":
        if kernel is None:
            raise ConcordanceError("kci needs a KernelSpec")
        return kci(sample, kernel)
    raise ConcordanceError(f"unknown statistic {statistic!r}")
