"""Exact and asymptotic null distributions for the concordance index.

Without ties the number of permutations of n items with k inversions is the
coefficient of x^k in prod_{j=1..n} (1 + x + ... + x^(j-1)).  With ties in
one vector the count over multiset arrangements is the q-multinomial
coefficient.  Both products are formed with a single pass of FFTs: every
factor is transformed, the transforms are multiplied pointwise and one
inverse transform recovers the coefficients, which are then rounded.

Counts are kept as doubles, which limits the element count to 170
(171! overflows).  FFT rounding error is absolute (about 1e-17 in the pmf),
so tail probabilities keep full relative accuracy only down to about 1e-8.
"""

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Literal, Optional, Sequence

import numpy as np
from scipy import stats

from . import _kernels
from .core import (
    ConcordanceError,
    DegenerateInputError,
    PairedSample,
    PrecisionLimitError,
    RciParams,
    UndefinedStatisticError,
)

__all__ = [
    "MAX_EXACT_ELEMENTS",
    "InversionDistribution",
    "MultisetSpec",
    "inversion_dist_no_ties",
    "inversion_dist_multiset",
    "null_for_sample",
    "exact_ci_pvalue",
    "exact_ci_test",
    "asymptotic_pearson_pvalue",
    "asymptotic_spearman_pvalue",
    "asymptotic_ci_pvalue",
    "noether_pvalues",
]

MAX_EXACT_ELEMENTS = 170

Alternative = Literal["two_sided", "greater", "less"]


@dataclass(frozen=True, eq=False)
class InversionDistribution:
    """Exact distribution of the inversion count under random ordering.

    ``counts[k]`` is the number of arrangements with k inversions, stored as
    doubles; ``pmf`` normalizes them.
    """

    n_elements: int
    counts: np.ndarray
    multiplicities: Optional[tuple] = None
    pmf: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=float)
        counts.flags.writeable = False
        pmf = counts / counts.sum()
        pmf.flags.writeable = False
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "pmf", pmf)

    @property
    def max_inversions(self) -> int:
        return self.counts.size - 1

    @property
    def n_pairs(self) -> int:
        return self.n_elements * (self.n_elements - 1) // 2

    def cdf(self) -> np.ndarray:
        return np.minimum(np.cumsum(self.pmf), 1.0)

    def sf(self) -> np.ndarray:
        """P(K >= k) for each k, summed from the upper tail for accuracy."""
        return np.minimum(np.cumsum(self.pmf[::-1])[::-1], 1.0)

    def mean(self) -> float:
        return float(np.dot(np.arange(self.counts.size), self.pmf))

    def to_csv_rows(self):
        """(k, count, probability); counts below 2**53 are exact integers."""
        for k, (c, p) in enumerate(zip(self.counts.tolist(), self.pmf.tolist())):
            yield k, int(c) if c < 2 ** 53 else c, p


@dataclass(frozen=True)
class MultisetSpec:
    """Class sizes of a multiset: ``multiplicities[j]`` copies of element j."""

    multiplicities: tuple

    def __post_init__(self):
        m = tuple(int(a) for a in self.multiplicities)
        if not m or any(a < 1 for a in m):
            raise ConcordanceError("multiplicities must be positive integers")
        if sum(m) < 2:
            raise ConcordanceError("a multiset needs at least 2 elements in total")
        object.__setattr__(self, "multiplicities", m)

    @property
    def total(self) -> int:
        return sum(self.multiplicities)

    @classmethod
    def from_values(cls, values) -> "MultisetSpec":
        _, counts = np.unique(np.asarray(values), return_counts=True)
        return cls(tuple(int(c) for c in counts))


def _check_size(total: int):
    if total > MAX_EXACT_ELEMENTS:
        raise PrecisionLimitError(
            f"exact null limited to {MAX_EXACT_ELEMENTS} elements (got {total}); "
            "use a permutation test instead"
        )


def _ones(m: int) -> np.ndarray:
    return np.ones(m)


def _stride_ones(m: int, k: int) -> np.ndarray:
    """Coefficients of (1 + x + ... + x^(m-1)) / (1 + ... + x^(k-1)) for k | m."""
    out = np.zeros(m - k + 1)
    out[::k] = 1.0
    return out


def _fft_product(factors: Sequence[np.ndarray], degree: int) -> np.ndarray:
    size = 1
    while size < degree + 1:
        size *= 2
    acc = np.ones(size // 2 + 1, dtype=complex)
    for f in factors:
        acc *= np.fft.rfft(f, size)
    coeffs = np.rint(np.fft.irfft(acc, size)[: degree + 1])
    if not np.all(np.isfinite(coeffs)):
        raise PrecisionLimitError("generating polynomial overflowed double precision")
    # the exact counts are palindromic and non-negative; FFT noise in the far tails is not
    coeffs = np.maximum(0.5 * (coeffs + coeffs[::-1]), 0.0)
    return coeffs


def inversion_dist_no_ties(n: int) -> InversionDistribution:
    """Inversion-count distribution over the n! permutations of n distinct items."""
    n = int(n)
    if n < 2:
        raise ConcordanceError("need at least 2 elements")
    _check_size(n)
    factors = [_ones(j) for j in range(2, n + 1)]
    counts = _fft_product(factors, n * (n - 1) // 2)
    return InversionDistribution(n, counts)


def _match_divisors(den: list, num: list) -> Optional[dict]:
    """Assign each denominator degree k a distinct numerator m with k | m.

    Kuhn's augmenting-path matching, largest k first and smallest m first.
    Returns None when no complete assignment exists.
    """
    owner = {}

    def augment(i, seen):
        k = den[i]
        for m in num:
            if m % k or m in seen:
                continue
            seen.add(m)
            if m not in owner or augment(owner[m], seen):
                owner[m] = i
                return True
        return False

    order = sorted(range(len(den)), key=lambda i: -den[i])
    for i in order:
        if not augment(i, set()):
            return None
    return {i: m for m, i in owner.items()}


@lru_cache(maxsize=None)
def _cyclotomic(d: int) -> tuple:
    """Integer coefficients of the d-th cyclotomic polynomial, low degree first."""
    poly = [-1] + [0] * (d - 1) + [1]
    for e in range(1, d):
        if d % e == 0:
            poly = _exact_divide(poly, list(_cyclotomic(e)))
    return tuple(poly)


def _exact_divide(num: list, den: list) -> list:
    num = list(num)
    q = [0] * (len(num) - len(den) + 1)
    lead = den[-1]
    for i in range(len(q) - 1, -1, -1):
        c, r = divmod(num[i + len(den) - 1], lead)
        assert r == 0
        q[i] = c
        for j, dj in enumerate(den):
            num[i + j] -= c * dj
    assert not any(num[: len(den) - 1])
    return q


def _multiset_factors(mults: Sequence[int]) -> list:
    """Division-free factor list whose product is the q-multinomial coefficient."""
    total = sum(mults)
    num = list(range(2, total + 1))
    den = [k for a in mults for k in range(2, a + 1)]
    match = _match_divisors(den, num)
    if match is not None:
        used = set(match.values())
        factors = [_stride_ones(m, den[i]) for i, m in match.items()]
        factors += [_ones(m) for m in num if m not in used]
        return factors
    # no factor-level cancellation exists (e.g. multiplicities (4, 4)); cancel
    # cyclotomic factors instead, whose exponents are always non-negative
    factors = []
    for d in range(2, total + 1):
        e = total // d - sum(a // d for a in mults)
        assert e >= 0
        factors += [np.array(_cyclotomic(d), dtype=float)] * e
    return factors


def inversion_dist_multiset(spec) -> InversionDistribution:
    """Inversion-count distribution over distinct arrangements of a multiset.

    ``spec`` is a MultisetSpec or a sequence of multiplicities.  The
    q-factorial ratio is cancelled factor by factor: each denominator factor
    1 + ... + x^(k-1) is matched to a numerator factor 1 + ... + x^(m-1)
    with k | m, leaving the quotient 1 + x^k + x^(2k) + ... + x^(m-k).
    """
    if not isinstance(spec, MultisetSpec):
        spec = MultisetSpec(tuple(spec))
    total = spec.total
    _check_size(total)
    mults = spec.multiplicities
    degree = total * (total - 1) // 2 - sum(a * (a - 1) // 2 for a in mults)
    if degree == 0:
        return InversionDistribution(total, np.ones(1), mults)
    counts = _fft_product(_multiset_factors(mults), degree)
    return InversionDistribution(total, counts, mults)


def null_for_sample(sample: PairedSample) -> InversionDistribution:
    """Exact CI null matching the sample's tie structure.

    No ties gives the permutation distribution; ties in exactly one vector
    give the multiset distribution over that vector's tie classes.  Ties in
    both vectors have no known exact null.
    """
    x_ties = np.unique(sample.x).size < sample.n
    y_ties = np.unique(sample.y).size < sample.n
    if x_ties and y_ties:
        raise ConcordanceError("both vectors contain ties; no exact null is known, use a permutation test")
    if x_ties:
        return inversion_dist_multiset(MultisetSpec.from_values(sample.x))
    if y_ties:
        return inversion_dist_multiset(MultisetSpec.from_values(sample.y))
    return inversion_dist_no_ties(sample.n)


def _inversion_index(ci: float, null: InversionDistribution, ties: str) -> int:
    big_k = null.max_inversions
    if ties == "strict":
        conc = ci * null.n_pairs
    elif ties == "exclude":
        conc = ci * big_k
    else:
        raise ConcordanceError(f"unknown tie handling {ties!r}")
    return int(min(big_k, max(0, round(big_k - conc))))


def exact_ci_pvalue(ci: float, null: InversionDistribution, alternative: Alternative = "two_sided",
                    ties: str = "strict") -> float:
    """Tail probability of the observed CI under the exact null.

    ``greater`` is the probability of a CI at least as large (at most as many
    inversions); the two-sided value doubles the smaller tail, capped at 1.
    ``ties`` must match how the CI was computed.
    """
    if not 0.0 <= ci <= 1.0:
        raise ConcordanceError(f"ci must lie in [0, 1], got {ci}")
    k = _inversion_index(ci, null, ties)
    lower = float(null.cdf()[k])
    upper = float(null.sf()[k])
    if alternative == "greater":
        return lower
    if alternative == "less":
        return upper
    if alternative == "two_sided":
        return min(1.0, 2.0 * min(lower, upper))
    raise ConcordanceError(f"unknown alternative {alternative!r}")


def exact_ci_test(sample: PairedSample, alternative: Alternative = "two_sided") -> float:
    """Exact p-value for the sample's CI (no ties, or ties in one vector only)."""
    from .core import ci_fast

    null = null_for_sample(sample)
    return exact_ci_pvalue(ci_fast(sample).estimate, null, alternative)


def _t_pvalue(r: float, n: int) -> float:
    if n < 3:
        raise ConcordanceError("need n >= 3 for the t approximation")
    if not -1.0 <= r <= 1.0:
        raise ConcordanceError(f"correlation must lie in [-1, 1], got {r}")
    if abs(r) == 1.0:
        return 0.0
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    return float(min(1.0, 2.0 * stats.t.sf(abs(t), n - 2)))


def asymptotic_pearson_pvalue(r: float, n: int) -> float:
    """Two-sided p from t = r sqrt((n-2)/(1-r^2)) on n-2 degrees of freedom."""
    return _t_pvalue(r, n)


def asymptotic_spearman_pvalue(rho: float, n: int) -> float:
    """Two-sided p for Spearman's rho using the same t approximation as Pearson."""
    return _t_pvalue(rho, n)


def _noether(ch: np.ndarray, dh: np.ndarray):
    """C-index and its Noether standard error from per-observation counts.

    Along the last axis, with pc, pd the concordant/discordant shares of
    ordered pairs and pcc, pdd, pcd the matching share of ordered triples,

        var = 4 / (pc + pd)^4 * (pd^2 pcc - 2 pc pd pcd + pc^2 pdd)
        se  = sqrt(var / n)
    """
    n = ch.shape[-1]
    pairs = n * (n - 1.0)
    triples = pairs * (n - 2.0)
    pc = ch.sum(-1) / pairs
    pd = dh.sum(-1) / pairs
    pcc = (ch * (ch - 1)).sum(-1) / triples
    pdd = (dh * (dh - 1)).sum(-1) / triples
    pcd = (ch * dh).sum(-1) / triples
    with np.errstate(divide="ignore", invalid="ignore"):
        cindex = pc / (pc + pd)
        var = 4.0 / (pc + pd) ** 4 * (pd ** 2 * pcc - 2 * pc * pd * pcd + pc ** 2 * pdd)
        se = np.sqrt(np.maximum(var, 0.0) / n)
    return cindex, se, var


def _z_pvalue(z, alternative):
    if alternative == "two_sided":
        return np.minimum(1.0, 2.0 * stats.norm.sf(np.abs(z)))
    if alternative == "greater":
        return stats.norm.sf(z)
    if alternative == "less":
        return stats.norm.cdf(z)
    raise ConcordanceError(f"unknown alternative {alternative!r}")


def asymptotic_ci_pvalue(sample: PairedSample, params: Optional[RciParams] = None,
                         alternative: Alternative = "two_sided") -> float:
    """Normal-approximation p-value for CI (or rCI with ``params``), Noether variance.

    Kept to demonstrate how badly the approximation controls small p-values
    at moderate n; prefer an exact or permutation test for inference.
    """
    if sample.n < 3:
        raise ConcordanceError("need n >= 3")
    params = params or RciParams()
    ch, dh = _kernels.concordance_profile(sample.x, sample.y, params.delta_x, params.delta_y)
    if ch.sum() + dh.sum() == 0:
        raise UndefinedStatisticError("no untied valid pairs")
    cindex, se, var = _noether(ch, dh)
    if var < -1e-12 or not np.isfinite(var):
        raise DegenerateInputError(f"Noether variance estimate is invalid ({var})")
    if se == 0:
        if cindex == 0.5:
            raise DegenerateInputError("Noether variance is zero at CI = 0.5")
        z = math.copysign(math.inf, cindex - 0.5)
    else:
        z = (cindex - 0.5) / se
    return float(_z_pvalue(z, alternative))


def noether_pvalues(x: np.ndarray, y: np.ndarray, params: Optional[RciParams] = None,
                    alternative: Alternative = "two_sided") -> np.ndarray:
    """Vectorized ``asymptotic_ci_pvalue`` over the rows of 2-D ``x`` and ``y``.

    Rows with an undefined statistic, or zero variance at CI = 0.5, get NaN.
    """
    params = params or RciParams()
    x = np.ascontiguousarray(np.atleast_2d(x), dtype=float)
    y = np.ascontiguousarray(np.atleast_2d(y), dtype=float)
    ch, dh = _kernels.concordance_profile_batch(x, y, params.delta_x, params.delta_y)
    cindex, se, _ = _noether(ch, dh)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (cindex - 0.5) / se
    p = _z_pvalue(z, alternative)
    p[np.isnan(z)] = np.nan
    return p
