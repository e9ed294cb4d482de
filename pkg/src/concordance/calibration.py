"""Noise calibration from replicate measurements.

Replicate pairs measure the same quantity twice, so their absolute
differences (S0) show what a difference looks like when nothing has changed.
Differences between arbitrary pairs of the population (S) are a mixture of
such null pairs and genuinely different ones.  Comparing the two empirical
tails gives an upper bound on the probability that a pair exceeding a
threshold t is a null pair:

    P(h0 | D > t) <= pi0 * (1 - F0(t)) / (1 - F(t)),    pi0 <= 1.

From the bound we build a confusion table for the rule "D > t means
different", pick the rCI threshold maximizing the Matthews correlation, and
fit a logistic curve to P(h1 | D > t) for use as a kCI kernel.
"""

import logging
from dataclasses import dataclass, field
from typing import Literal, NamedTuple, Optional, Sequence

import numpy as np
from scipy import stats
from scipy.optimize import curve_fit, isotonic_regression

from .core import ConcordanceError, KernelSpec

__all__ = [
    "DeltaSet",
    "Ecdf",
    "ecdf",
    "ConfusionMatrix",
    "CalibrationResult",
    "NoiseFit",
    "null_posterior_bound",
    "confusion_matrix",
    "mcc",
    "estimate_null_fraction",
    "threshold_grid",
    "fit_rci_threshold",
    "fit_kci_kernel",
    "bootstrap_thresholds",
    "fit_noise",
    "replicate_differences",
]

log = logging.getLogger(__name__)

MAX_GRID = 512
MAX_POPULATION_PAIRS = 10 ** 6


@dataclass(frozen=True, eq=False)
class DeltaSet:
    """Absolute differences between measurement pairs.

    ``kind`` is ``"replicate"`` for repeated measurements of the same
    condition (S0) and ``"population"`` for arbitrary pairs (S).
    """

    values: np.ndarray
    kind: Literal["replicate", "population"] = "population"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if v.size == 0:
            raise ConcordanceError("a DeltaSet needs at least one value")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ConcordanceError("deltas must be finite and non-negative")
        if self.kind not in ("replicate", "population"):
            raise ConcordanceError(f"unknown DeltaSet kind {self.kind!r}")
        v = np.sort(v)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size

    @classmethod
    def from_replicates(cls, a, b) -> "DeltaSet":
        """|a - b| for aligned replicate measurements, ignoring NaN pairs."""
        return cls(np.abs(replicate_differences(a, b)), "replicate")

    @classmethod
    def from_population(cls, values, max_pairs: int = MAX_POPULATION_PAIRS, seed: int = 0) -> "DeltaSet":
        """Pairwise |v_i - v_j| over all i < j, or a uniform sample of
        ``max_pairs`` pairs when there are more than that.  NaNs are dropped."""
        v = np.asarray(values, dtype=float).ravel()
        v = v[np.isfinite(v)]
        n = v.size
        if n < 2:
            raise ConcordanceError("need at least two population values")
        total = n * (n - 1) // 2
        if total <= max_pairs:
            i, j = np.triu_indices(n, 1)
        else:
            rng = np.random.default_rng(seed)
            i = rng.integers(0, n, size=max_pairs)
            j = rng.integers(0, n - 1, size=max_pairs)
            j = j + (j >= i)
        return cls(np.abs(v[i] - v[j]), "population")

    @classmethod
    def pooled(cls, sets: Sequence["DeltaSet"]) -> "DeltaSet":
        """Concatenate several sets of the same kind."""
        kinds = {s.kind for s in sets}
        if len(kinds) != 1:
            raise ConcordanceError("cannot pool replicate and population deltas")
        return cls(np.concatenate([s.values for s in sets]), kinds.pop())


def replicate_differences(a, b) -> np.ndarray:
    """Signed a - b over pairs where both replicates are present."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise ConcordanceError("replicate vectors differ in length")
    ok = np.isfinite(a) & np.isfinite(b)
    if not ok.any():
        raise ConcordanceError("no complete replicate pairs")
    return a[ok] - b[ok]


class Ecdf:
    """Right-continuous empirical CDF: ``F(t)`` is the fraction of values <= t."""

    def __init__(self, values):
        v = np.sort(np.asarray(values, dtype=float).ravel())
        if v.size == 0:
            raise ConcordanceError("ECDF of an empty sample")
        if not np.all(np.isfinite(v)):
            raise ConcordanceError("ECDF values must be finite")
        self.points = v

    def __call__(self, t):
        return np.searchsorted(self.points, t, side="right") / self.points.size

    def table(self):
        """Distinct values and the ECDF just after each (the step heights)."""
        u, idx = np.unique(self.points, return_index=True)
        counts = np.diff(np.append(idx, self.points.size))
        return u, np.cumsum(counts) / self.points.size


def ecdf(values) -> Ecdf:
    return Ecdf(values)


def _values(d) -> np.ndarray:
    return d.values if isinstance(d, DeltaSet) else np.sort(np.asarray(d, dtype=float).ravel())


def _tails(t, s0, s):
    f0 = Ecdf(_values(s0))(t)
    f = Ecdf(_values(s))(t)
    return np.asarray(f0, dtype=float), np.asarray(f, dtype=float)


def null_posterior_bound(t, s0, s, null_fraction: float = 1.0):
    """Upper bound on P(h0 | D > t): min(1, pi0 (1 - F0(t)) / (1 - F(t)))."""
    f0, f = _tails(t, s0, s)
    if np.any(f >= 1):
        raise ConcordanceError("threshold is beyond the support of the population deltas")
    out = np.minimum(1.0, null_fraction * (1 - f0) / (1 - f))
    return float(out) if out.ndim == 0 else out


class ConfusionMatrix(NamedTuple):
    """Conditional cell probabilities of the rule "D > t means different".

    Rows are the decision (positive: D > t, negative: D <= t); each row
    sums to 1.  A row is NaN when its condition has zero probability.
    """

    h1_positive: float
    h0_positive: float
    h1_negative: float
    h0_negative: float
    p_positive: float

    def joint(self):
        """(TP, FP, FN, TN) as joint probabilities."""
        pp = self.p_positive
        return (self.h1_positive * pp, self.h0_positive * pp,
                self.h1_negative * (1 - pp), self.h0_negative * (1 - pp))


def _check_fraction(null_fraction):
    if not 0 < null_fraction <= 1:
        raise ConcordanceError("null_fraction_estimate must lie in (0, 1]")


def _cells(t, s0, s, null_fraction):
    f0, f = _tails(t, s0, s)
    with np.errstate(divide="ignore", invalid="ignore"):
        h0_pos = np.where(f < 1, np.minimum(1.0, null_fraction * (1 - f0) / (1 - f)), np.nan)
        h0_neg = np.where(f > 0, np.minimum(1.0, null_fraction * f0 / f), np.nan)
    return 1 - h0_pos, h0_pos, 1 - h0_neg, h0_neg, 1 - f


def confusion_matrix(t: float, s0, s, null_fraction_estimate: float = 1.0) -> ConfusionMatrix:
    """Confusion table at threshold ``t`` from the Bayes bound on each side."""
    _check_fraction(null_fraction_estimate)
    cells = [float(c) for c in _cells(t, s0, s, null_fraction_estimate)]
    if np.isnan(cells[0]) and np.isnan(cells[2]):
        raise ConcordanceError("both decision regions are empty at this threshold")
    return ConfusionMatrix(*cells)


def _mcc_from_joint(tp, fp, fn, tn):
    den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, (tp * tn - fp * fn) / np.sqrt(np.where(den > 0, den, 1.0)), np.nan)


def mcc(cm: ConfusionMatrix) -> float:
    """Matthews correlation of a confusion table; NaN when undefined."""
    tp, fp, fn, tn = (np.nan_to_num(v) for v in cm.joint())
    return float(_mcc_from_joint(tp, fp, fn, tn))


def estimate_null_fraction(s0, s, quantiles=(0.01, 0.95)) -> float:
    """Conservative estimate of pi0, the share of null pairs in S.

    Null pairs can account for at most all of the population's small
    deltas, so pi0 * F0(t) <= F(t) for every t.  The estimate is the
    smallest ratio F(t) / F0(t) over S0 quantiles in ``quantiles``, which
    errs low; an underestimate shifts tau far less than an overestimate.
    """
    v0 = _values(s0)
    t = np.quantile(v0, np.linspace(quantiles[0], quantiles[1], 128))
    f0, f = _tails(t, s0, s)
    ok = f0 > 0
    if not ok.any():
        raise ConcordanceError("replicate deltas give no mass in the tuning range")
    return float(np.clip(np.min(f[ok] / f0[ok]), 1e-12, 1.0))


def threshold_grid(s0, s, max_points: int = MAX_GRID) -> np.ndarray:
    """Candidate thresholds: all distinct observed deltas, or ``max_points``
    quantile-spaced values of the pooled deltas when there are more."""
    pooled = np.concatenate([_values(s0), _values(s)])
    grid = np.unique(pooled)
    if grid.size > max_points:
        grid = np.unique(np.quantile(pooled, np.linspace(0, 1, max_points), method="inverted_cdf"))
    return grid


@dataclass(frozen=True, eq=False)
class CalibrationResult:
    """Threshold, kernel and the curves they were derived from."""

    threshold: float
    mcc_curve: np.ndarray  # (m, 2): t, MCC
    posterior_curve: np.ndarray  # (m, 2): t, P(h1 | D > t) after isotonic cleanup
    kernel: Optional[KernelSpec] = None
    null_fraction: float = 1.0
    threshold_bootstrap: Optional[np.ndarray] = None
    raw_posterior: Optional[np.ndarray] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        out = {
            "threshold": self.threshold,
            "null_fraction": self.null_fraction,
            "kernel": None if self.kernel is None else {
                "form": self.kernel.form, "slope": self.kernel.slope, "midpoint": self.kernel.midpoint},
            "mcc_curve": {"t": self.mcc_curve[:, 0].tolist(), "mcc": self.mcc_curve[:, 1].tolist()},
            "posterior_curve": {"t": self.posterior_curve[:, 0].tolist(),
                                "p_h1": self.posterior_curve[:, 1].tolist()},
        }
        if self.threshold_bootstrap is not None:
            out["threshold_bootstrap"] = self.threshold_bootstrap.tolist()
        return out


def _posterior(grid, s0, s, null_fraction):
    bound = null_posterior_bound(grid, s0, s, null_fraction)
    raw = 1 - np.atleast_1d(bound)
    return raw, isotonic_regression(raw, increasing=True).x


def _mcc_curve(grid, s0, s, null_fraction):
    tp_, fp_, fn_, tn_, pp = _cells(grid, s0, s, null_fraction)
    tp, fp = np.nan_to_num(tp_ * pp), np.nan_to_num(fp_ * pp)
    fn, tn = np.nan_to_num(fn_ * (1 - pp)), np.nan_to_num(tn_ * (1 - pp))
    return _mcc_from_joint(tp, fp, fn, tn)


def _threshold(s0, s, null_fraction, max_grid):
    """argmax-MCC threshold and the (t, MCC) curve it was read from.

    When the quantile grid is coarser than the data, the bracket around the
    coarse maximum is searched again over the distinct deltas inside it.
    """
    grid = threshold_grid(s0, s, max_grid)
    curve = _mcc_curve(grid, s0, s, null_fraction)
    if np.all(np.isnan(curve)):
        raise ConcordanceError("MCC is undefined at every candidate threshold")
    k = int(np.nanargmax(curve))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
    pooled = np.concatenate([_values(s0), _values(s)])
    inside = np.unique(pooled[(pooled > lo) & (pooled < hi)])
    if inside.size:
        if inside.size > max_grid:
            inside = np.unique(np.quantile(inside, np.linspace(0, 1, max_grid), method="inverted_cdf"))
        grid = np.concatenate([grid, inside])
        curve = np.concatenate([curve, _mcc_curve(inside, s0, s, null_fraction)])
        order = np.argsort(grid, kind="stable")
        grid, curve = grid[order], curve[order]
    # nanargmax returns the first maximum, i.e. the smallest t
    return float(grid[np.nanargmax(curve)]), grid, curve


def fit_rci_threshold(s0, s, null_fraction_estimate: float = 1.0, max_grid: int = MAX_GRID,
                      n_bootstrap: int = 0, seed: int = 0) -> CalibrationResult:
    """Threshold tau maximizing the Matthews correlation of "D > tau means different".

    Parameters
    ----------
    s0, s : DeltaSet or array_like
        Replicate and population absolute differences.
    null_fraction_estimate : float
        pi0 in the Bayes bound; 1.0 gives the conservative bound.
    n_bootstrap : int
        If positive, also report tau over this many bootstrap resamples of
        both sets (``threshold_bootstrap``).
    """
    _check_fraction(null_fraction_estimate)
    tau, grid, curve = _threshold(s0, s, null_fraction_estimate, max_grid)
    live = grid < _values(s)[-1]
    raw, post = _posterior(grid[live], s0, s, null_fraction_estimate)
    boot = bootstrap_thresholds(s0, s, n_bootstrap, seed, null_fraction_estimate, max_grid) if n_bootstrap else None
    return CalibrationResult(
        threshold=tau,
        mcc_curve=np.column_stack([grid, curve]),
        posterior_curve=np.column_stack([grid[live], post]),
        null_fraction=null_fraction_estimate,
        threshold_bootstrap=boot,
        raw_posterior=np.column_stack([grid[live], raw]),
    )


def bootstrap_thresholds(s0, s, n_bootstrap: int, seed: int = 0, null_fraction_estimate: float = 1.0,
                         max_grid: int = MAX_GRID) -> np.ndarray:
    """tau re-estimated on ``n_bootstrap`` resamples (with replacement) of S0 and S."""
    rng = np.random.default_rng(seed)
    v0, v = _values(s0), _values(s)
    out = np.empty(n_bootstrap)
    for k in range(n_bootstrap):
        b0 = rng.choice(v0, v0.size)
        b = rng.choice(v, v.size)
        out[k] = _threshold(b0, b, null_fraction_estimate, max_grid)[0]
    return out


def _logistic(t, slope, midpoint):
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(slope * (t - midpoint)))


def fit_kci_kernel(s0, s, null_fraction_estimate: float = 1.0, max_grid: int = MAX_GRID,
                   calibration: Optional[CalibrationResult] = None, anchor_weight: float = 1.0) -> CalibrationResult:
    """Fit ``1 / (1 + exp(slope * (t - midpoint)))`` to the monotone
    posterior curve P(h1 | D > t) by least squares.

    A kernel should give zero weight to a zero difference, which a two
    parameter logistic can only approach.  The fit therefore adds the point
    (0, 0) with ``anchor_weight`` times the combined weight of the curve
    (0 disables it).

    Keep ``null_fraction_estimate`` at 1 for kernels: only the pi0 = 1
    bound makes P(h1 | D > t) start at 0, while a smaller pi0 starts the
    curve at 1 - pi0 and pulls the fitted midpoint towards 0.

    Returns the calibration with ``kernel`` set to the fitted logistic
    KernelSpec.  A flat curve or a fit without a negative slope is an error.
    """
    cal = calibration or fit_rci_threshold(s0, s, null_fraction_estimate, max_grid)
    t, p = cal.posterior_curve[:, 0], cal.posterior_curve[:, 1]
    if t.size < 8:
        raise ConcordanceError(f"posterior curve has only {t.size} points; need at least 8")
    if np.ptp(p) < 0.05:
        raise ConcordanceError(f"posterior curve is flat (range {np.ptp(p):.3g}); no sigmoid to fit")
    lo, hi = p.min(), p.max()
    mid0 = float(np.interp(0.5 * (lo + hi), p, t))
    q25 = float(np.interp(lo + 0.25 * (hi - lo), p, t))
    q75 = float(np.interp(lo + 0.75 * (hi - lo), p, t))
    spread = max(q75 - q25, 1e-3 * max(np.ptp(t), 1e-12))
    slope0 = -2 * np.log(3) / spread
    try:
        sigma = np.full(t.size, np.sqrt(t.size))
        if anchor_weight > 0:
            t, p = np.r_[0.0, t], np.r_[0.0, p]
            sigma = np.r_[1 / np.sqrt(anchor_weight), sigma]
        (slope, midpoint), _ = curve_fit(_logistic, t, p, p0=(slope0, mid0), sigma=sigma, maxfev=10000)
    except (RuntimeError, ValueError) as exc:
        raise ConcordanceError(
            f"logistic fit did not converge (start slope={slope0:.4g}, midpoint={mid0:.4g}): {exc}") from exc
    if not (np.isfinite(slope) and np.isfinite(midpoint)) or slope >= 0:
        raise ConcordanceError(f"logistic fit is not increasing: slope={slope:.4g}, midpoint={midpoint:.4g}")
    return CalibrationResult(
        threshold=cal.threshold,
        mcc_curve=cal.mcc_curve,
        posterior_curve=cal.posterior_curve,
        kernel=KernelSpec.logistic(slope, midpoint),
        null_fraction=cal.null_fraction,
        threshold_bootstrap=cal.threshold_bootstrap,
        raw_posterior=cal.raw_posterior,
    )


@dataclass(frozen=True)
class NoiseFit:
    family: Literal["laplace", "gaussian"]
    location: float
    scale: float

    def __post_init__(self):
        if not self.scale > 0:
            raise ConcordanceError("noise scale must be positive")

    def to_dict(self) -> dict:
        return {"family": self.family, "location": self.location, "scale": self.scale}


def fit_noise(deltas, family: Literal["laplace", "gaussian"] = "laplace") -> NoiseFit:
    """Maximum-likelihood fit to signed replicate differences.

    Laplace: location = median, scale = mean absolute deviation from it.
    Gaussian: mean and population standard deviation.
    """
    d = np.asarray(deltas, dtype=float).ravel()
    d = d[np.isfinite(d)]
    if d.size < 2:
        raise ConcordanceError("need at least two finite differences")
    if family == "laplace":
        loc, scale = stats.laplace.fit(d)
    elif family == "gaussian":
        loc, scale = stats.norm.fit(d)
    else:
        raise ConcordanceError(f"unknown noise family {family!r}")
    if not scale > 0:
        raise ConcordanceError("differences have zero spread")
    return NoiseFit(family, float(loc), float(scale))
