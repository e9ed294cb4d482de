"""Permutation tests with QUICK-STOP style adaptive stopping.

The y vector is permuted against a fixed x.  Permutation ``i`` of a test
seeded with ``seed`` depends only on ``(seed, i)``: permutations are drawn in
blocks of deterministic size, each block from its own Philox stream keyed by
``(seed, block)``.  Stopping is evaluated in permutation-index order, so the
outcome never depends on how the work is scheduled.

Stopping rule.  Each permutation is a Bernoulli draw with success
probability p (the permutation p-value).  After m draws with b exceedances
and p_hat = b / m, the test stops with

* ``significant`` once p_hat < alpha + d and m * KL(p_hat, alpha + d) >= a,
* ``not_significant`` once p_hat > alpha - d and m * KL(p_hat, alpha - d) >= a,

where KL is the Bernoulli Kullback-Leibler divergence, d the indifference
half-width and a = log(1 / error_prob).  This is a generalized likelihood
ratio test with a constant boundary; it decides quickly when p is far from
alpha and keeps sampling when p is near it, up to ``max_permutations``.
"""

import logging
import math
from dataclasses import asdict, dataclass
from typing import Callable, Literal, Optional, Sequence, Union

import numpy as np
from scipy.special import rel_entr
from scipy.stats import rankdata

from . import _kernels
from .core import (
    ConcordanceError,
    KernelSpec,
    PairedSample,
    RciParams,
    UndefinedStatisticError,
    associate,
)

__all__ = [
    "StopSpec",
    "PermDecision",
    "Statistic",
    "make_statistic",
    "PermutationStream",
    "adaptive_permutation_test",
    "adaptive_permutation_tests",
    "fixed_permutation_test",
]

log = logging.getLogger(__name__)

Alternative = Literal["two_sided", "greater", "less"]

_FIRST_BLOCK = 32
_MAX_BLOCK = 4096
_TOL = 1e-12


@dataclass(frozen=True)
class StopSpec:
    """Parameters of the adaptive stopping rule.

    Defaults: indifference ``0.001 * alpha``, error probability ``e^-10``,
    and at most ``100 / alpha`` permutations.
    """

    alpha: float
    indifference: Optional[float] = None
    error_prob: float = math.exp(-10)
    max_permutations: Optional[int] = None

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ConcordanceError(f"alpha must lie in (0, 1), got {self.alpha}")
        d = 0.001 * self.alpha if self.indifference is None else float(self.indifference)
        if not 0 < d < self.alpha:
            raise ConcordanceError("indifference must lie in (0, alpha)")
        if not 0 < self.error_prob < 1:
            raise ConcordanceError("error_prob must lie in (0, 1)")
        k = math.ceil(100 / self.alpha - 1e-9) if self.max_permutations is None else int(self.max_permutations)
        if k < 1 / self.alpha:
            raise ConcordanceError("max_permutations must be at least 1 / alpha")
        object.__setattr__(self, "indifference", d)
        object.__setattr__(self, "max_permutations", k)


@dataclass(frozen=True)
class PermDecision:
    decision: Literal["significant", "not_significant", "exhausted"]
    p_estimate: float
    permutations_used: int
    exceedances: int
    seed: int
    alpha: float
    statistic: str = ""
    observed: float = float("nan")
    redraws: int = 0

    @property
    def rejected(self) -> bool:
        """Null rejected at ``alpha``; an exhausted test falls back to its estimate."""
        if self.decision == "exhausted":
            return self.p_estimate < self.alpha
        return self.decision == "significant"

    def to_dict(self) -> dict:
        return asdict(self)


class PermutationStream:
    """Deterministic, lazily generated sequence of permutations of range(n)."""

    def __init__(self, n: int, seed: int):
        if seed < 0:
            raise ConcordanceError("seed must be a non-negative integer")
        self.n = int(n)
        self.seed = int(seed)
        self._blocks = []

    @staticmethod
    def block_size(b: int) -> int:
        return min(_FIRST_BLOCK << min(b, 20), _MAX_BLOCK)

    def block(self, b: int) -> np.ndarray:
        while len(self._blocks) <= b:
            k = len(self._blocks)
            rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([self.seed, k])))
            self._blocks.append(_kernels.shuffle_block(rng.random((self.block_size(k), self.n))))
        return self._blocks[b]

    def forget(self):
        self._blocks.clear()


class Statistic:
    """An association statistic prepared for fast evaluation on permutations.

    ``evaluate(sample)`` returns the scalar estimate; ``batch(sample)``
    returns a function mapping a (B, n) block of y-permutations to B values,
    with NaN where the statistic is undefined.
    """

    def __init__(self, name: str, params: Optional[RciParams] = None, kernel: Optional[KernelSpec] = None,
                 ties: str = "strict", func: Optional[Callable] = None, center: Optional[float] = None):
        self.name = name
        self.params = params
        self.kernel = kernel
        self.ties = ties
        self.func = func
        if center is None:
            center = 0.0 if name in ("pearson", "spearman") else 0.5
        self.center = center

    def __repr__(self):
        return f"Statistic({self.name!r})"

    def evaluate(self, sample: PairedSample) -> float:
        if self.func is not None:
            res = self.func(sample)
            return float(getattr(res, "estimate", res))
        return associate(sample, self.name, self.params, self.kernel, self.ties).estimate

    def batch(self, sample: PairedSample) -> Callable[[np.ndarray], np.ndarray]:
        name = self.name
        if self.func is not None:
            return self._batch_callable(sample)
        if name in ("pearson", "spearman"):
            return _batch_correlation(sample, rank=name == "spearman")
        if name == "ci" and self.ties == "strict":
            return _batch_conc_disc(sample, 0.0, 0.0, mode="strict")
        if name == "ci":
            return _batch_conc_disc(sample, 0.0, 0.0, mode="exclude")
        if name == "rci":
            p = self.params or RciParams()
            return _batch_conc_disc(sample, p.delta_x, p.delta_y, mode="exclude")
        if name == "kci":
            return _batch_kci(sample, self.kernel)
        raise ConcordanceError(f"unknown statistic {name!r}")

    def _batch_callable(self, sample):
        def run(perms):
            out = np.empty(perms.shape[0])
            for i, perm in enumerate(perms):
                try:
                    out[i] = self.evaluate(sample.with_y(sample.y[perm]))
                except UndefinedStatisticError:
                    out[i] = np.nan
            return out
        return run


def make_statistic(statistic: Union[str, Statistic, Callable], params: Optional[RciParams] = None,
                   kernel: Optional[KernelSpec] = None, ties: str = "strict") -> Statistic:
    if isinstance(statistic, Statistic):
        return statistic
    if callable(statistic):
        return Statistic(getattr(statistic, "__name__", "custom"), func=statistic)
    if statistic == "kci" and kernel is None:
        raise ConcordanceError("kci needs a KernelSpec")
    return Statistic(statistic, params=params, kernel=kernel, ties=ties)


def _batch_correlation(sample, rank):
    x, y = (rankdata(sample.x), rankdata(sample.y)) if rank else (sample.x, sample.y)
    xc = x - x.mean()
    yc = y - y.mean()
    sx = np.sqrt(np.dot(xc, xc))
    sy = np.sqrt(np.dot(yc, yc))
    if sx == 0 or sy == 0:
        return lambda perms: np.full(perms.shape[0], np.nan)
    xs = xc / sx
    ys = yc / sy
    return lambda perms: np.clip(ys[perms] @ xs, -1.0, 1.0)


def _batch_conc_disc(sample, delta_x, delta_y, mode):
    order = np.argsort(sample.x, kind="stable")
    xs = sample.x[order]
    start = np.searchsorted(xs, xs + delta_x, side="right").astype(np.int64)
    total = sample.n * (sample.n - 1) // 2

    def run(perms):
        yp = np.ascontiguousarray(sample.y[perms[:, order]])
        conc, disc = _kernels.conc_disc_block(start, yp, delta_y)
        if mode == "strict":
            return conc / total
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(conc + disc > 0, conc / np.maximum(conc + disc, 1), np.nan)
    return run


def _batch_kci(sample, kernel):
    order = np.argsort(sample.x, kind="stable")
    xs = np.ascontiguousarray(sample.x[order])
    wx = np.ascontiguousarray(kernel.pair_weights(xs, "x"))
    wy = np.ascontiguousarray(kernel.pair_weights(sample.y, "y"))

    def run(perms):
        num, den = _kernels.weighted_conc_block(xs, wx, np.ascontiguousarray(perms[:, order]), sample.y, wy)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(den > 0, num / np.where(den > 0, den, 1.0), np.nan)
    return run


def _exceeds(values, observed, center, alternative):
    if alternative == "two_sided":
        return np.abs(values - center) >= abs(observed - center) - _TOL
    if alternative == "greater":
        return values >= observed - _TOL
    if alternative == "less":
        return values <= observed + _TOL
    raise ConcordanceError(f"unknown alternative {alternative!r}")


def _bernoulli_kl(q, p):
    return rel_entr(q, p) + rel_entr(1.0 - q, 1.0 - p)


class _Tracker:
    """Running state of one statistic's sequential test."""

    def __init__(self, stat, run, observed, spec, alternative, adaptive, budget):
        self.stat = stat
        self.run = run
        self.observed = observed
        self.spec = spec
        self.alternative = alternative
        self.adaptive = adaptive
        self.budget = budget
        self.m = 0
        self.b = 0
        self.redraws = 0
        self.decision = None

    def consume(self, perms):
        values = self.run(perms)
        ok = ~np.isnan(values)
        self.redraws += int((~ok).sum())
        draws = self.m + self.redraws + int(ok.sum())
        if self.redraws and draws >= 100 and self.redraws > 0.01 * draws:
            raise UndefinedStatisticError(
                f"{self.stat.name} undefined on {self.redraws} of {draws} permutations"
            )
        hits = _exceeds(values[ok], self.observed, self.stat.center, self.alternative)
        if hits.size == 0:
            return
        cum_b = self.b + np.cumsum(hits)
        cum_m = self.m + np.arange(1, hits.size + 1)
        stop = cum_m >= self.budget
        verdict = np.full(hits.size, "", dtype=object)
        if self.adaptive:
            a = -math.log(self.spec.error_prob)
            p_hi = self.spec.alpha + self.spec.indifference
            p_lo = self.spec.alpha - self.spec.indifference
            p_hat = cum_b / cum_m
            sig = (p_hat < p_hi) & (cum_m * _bernoulli_kl(p_hat, p_hi) >= a)
            non = (p_hat > p_lo) & (cum_m * _bernoulli_kl(p_hat, p_lo) >= a)
            verdict[non] = "not_significant"
            verdict[sig] = "significant"
            stop |= sig | non
        hit = np.flatnonzero(stop)
        if hit.size:
            i = hit[0]
            self.m = int(cum_m[i])
            self.b = int(cum_b[i])
            if self.adaptive:
                self.decision = verdict[i] or "exhausted"
            else:
                p = (self.b + 1) / (self.m + 1)
                self.decision = "significant" if p < self.spec.alpha else "not_significant"
        else:
            self.m = int(cum_m[-1])
            self.b = int(cum_b[-1])

    def result(self, seed):
        if self.redraws:
            log.info("%s: redrew %d permutations with an undefined statistic", self.stat.name, self.redraws)
        return PermDecision(
            decision=self.decision,
            p_estimate=(self.b + 1) / (self.m + 1),
            permutations_used=self.m,
            exceedances=self.b,
            seed=seed,
            alpha=self.spec.alpha,
            statistic=self.stat.name,
            observed=float(self.observed),
            redraws=self.redraws,
        )


def _run(sample, stats, spec, seed, alternative, adaptive, budget, stream=None):
    stream = stream or PermutationStream(sample.n, seed)
    identity = np.arange(sample.n, dtype=np.int64)[None, :]
    trackers = []
    for stat in stats:
        run = stat.batch(sample)
        observed = float(run(identity)[0])
        if np.isnan(observed):
            raise UndefinedStatisticError(f"{stat.name} is undefined on the observed sample")
        trackers.append(_Tracker(stat, run, observed, spec, alternative, adaptive, budget))
    b = 0
    while any(t.decision is None for t in trackers):
        perms = stream.block(b)
        for t in trackers:
            if t.decision is None:
                t.consume(perms)
        b += 1
    return [t.result(seed) for t in trackers]


def adaptive_permutation_tests(sample: PairedSample, statistics: Sequence, spec: StopSpec, seed: int = 0,
                               alternative: Alternative = "two_sided",
                               stream: Optional[PermutationStream] = None) -> list:
    """Run the adaptive test for several statistics over one shared permutation stream.

    Each statistic stops on its own; the result for a statistic is identical
    to calling ``adaptive_permutation_test`` on it alone with the same seed.
    """
    stats = [make_statistic(s) for s in statistics]
    return _run(sample, stats, spec, seed, alternative, True, spec.max_permutations, stream)


def adaptive_permutation_test(sample: PairedSample, statistic, spec: Optional[StopSpec] = None, seed: int = 0,
                              alternative: Alternative = "two_sided", params: Optional[RciParams] = None,
                              kernel: Optional[KernelSpec] = None, ties: str = "strict") -> PermDecision:
    """Permutation test of no association that stops as soon as the p-value is
    confidently above or below ``spec.alpha``.

    Parameters
    ----------
    sample : PairedSample
    statistic : str, Statistic or callable
        One of ``pearson``, ``spearman``, ``ci``, ``rci``, ``kci``, or any
        function of a PairedSample returning a float or AssociationResult.
    spec : StopSpec, optional
        Defaults to ``StopSpec(alpha=0.05)``.
    seed : int
        Non-negative; fixes the permutation stream.
    alternative : {"two_sided", "greater", "less"}
        Two-sided exceedance is measured as distance from the statistic's
        null center (0.5 for the concordance family, 0 for correlations).
    """
    spec = spec or StopSpec(0.05)
    stat = make_statistic(statistic, params, kernel, ties)
    return _run(sample, [stat], spec, seed, alternative, True, spec.max_permutations)[0]


def fixed_permutation_test(sample: PairedSample, statistic, n_permutations: int, seed: int = 0,
                           alpha: float = 0.05, alternative: Alternative = "two_sided",
                           params: Optional[RciParams] = None, kernel: Optional[KernelSpec] = None,
                           ties: str = "strict") -> PermDecision:
    """Plain Monte Carlo permutation test with exactly ``n_permutations`` draws.

    p_estimate = (b + 1) / (K + 1), where b counts permutations at least as
    extreme as the observed statistic.
    """
    if n_permutations < 1:
        raise ConcordanceError("n_permutations must be >= 1")
    spec = StopSpec(alpha, max_permutations=max(int(n_permutations), math.ceil(1 / alpha)))
    stat = make_statistic(statistic, params, kernel, ties)
    return _run(sample, [stat], spec, seed, alternative, False, int(n_permutations))[0]
