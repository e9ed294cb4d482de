"""Synthetic data and the power / null-calibration experiments.

Samplers produce bivariate normal or bivariate beta data with a chosen
population correlation, optionally with Laplace noise added to y.  The
power harness runs the adaptive permutation test for several statistics on
each simulated sample; the null harness collects asymptotic and exact
p-values on independent data to show how well each test is calibrated.

Every replicate draws its randomness from ``SeedSequence([seed, cell, rep])``
so a grid cell's results do not depend on how many other cells run, in what
order, or on how many threads.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Literal, Optional, Sequence, Union

import numpy as np
from scipy import stats
from scipy.optimize import brentq

from . import _kernels
from .core import ConcordanceError, KernelSpec, PairedSample, RciParams
from .exact_null import exact_ci_pvalue, inversion_dist_no_ties, noether_pvalues
from .permutation import PermutationStream, Statistic, StopSpec, adaptive_permutation_tests, make_statistic

__all__ = [
    "BivariateBetaSpec",
    "NoiseSpec",
    "PowerConfig",
    "PowerRow",
    "PowerGrid",
    "NullCalibration",
    "sample_bivariate_normal",
    "solve_dirichlet_params",
    "beta_model_correlation",
    "sample_bivariate_beta",
    "add_noise",
    "pearson_power",
    "level_set_effect_size",
    "run_power_sim",
    "run_null_calibration_sim",
    "NULL_METHODS",
]

log = logging.getLogger(__name__)

Family = Literal["normal", "beta"]


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_bivariate_normal(n: int, r: float, seed=None) -> PairedSample:
    """n draws from a standard bivariate normal with correlation ``r``."""
    x, y = _normal_xy(n, r, _rng(seed))
    return PairedSample(x, y)


def _normal_xy(shape, r, rng):
    if not -1 < r < 1:
        raise ConcordanceError(f"correlation must lie in (-1, 1), got {r}")
    z0 = rng.standard_normal(shape)
    z1 = rng.standard_normal(shape)
    return z0, r * z0 + math.sqrt(1 - r * r) * z1


@dataclass(frozen=True)
class BivariateBetaSpec:
    """Bivariate beta with Beta(a, b) marginals built from a Dirichlet draw.

    With (U1, U2, U3, U4) ~ Dirichlet(a1, a1, a - a1, b - a1), the pair
    X = U1 + U3, Y = U2 + U3 has Beta(a, b) marginals and correlation
    1 - a1 (a + b) / (a b); a1 is chosen to hit ``target_r``.
    """

    a: float = 1.2
    b: float = 4.5
    target_r: float = 0.0
    dirichlet_params: tuple = ()

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ConcordanceError("beta shapes must be positive")
        if not self.dirichlet_params:
            object.__setattr__(self, "dirichlet_params", solve_dirichlet_params(self.a, self.b, self.target_r)
                               .dirichlet_params)
        p = self.dirichlet_params
        if len(p) != 4 or min(p) <= 0:
            raise ConcordanceError(f"invalid Dirichlet parameters {p}")

    @property
    def r_range(self):
        return beta_model_correlation(self.a, self.b, min(self.a, self.b)), 1.0


def beta_model_correlation(a: float, b: float, a1: float) -> float:
    """Correlation of X and Y from the Dirichlet moments.

    Var(Ui) = ai (s - ai) / (s^2 (s + 1)), Cov(Ui, Uj) = -ai aj / (s^2 (s + 1)),
    with s the sum of the four parameters.
    """
    p = np.array([a1, a1, a - a1, b - a1])
    s = p.sum()
    cov = -np.outer(p, p)
    np.fill_diagonal(cov, p * (s - p))
    cov /= s * s * (s + 1)
    ex = np.array([1, 0, 1, 0])
    ey = np.array([0, 1, 1, 0])
    return float(ex @ cov @ ey / math.sqrt((ex @ cov @ ex) * (ey @ cov @ ey)))


def solve_dirichlet_params(a: float = 1.2, b: float = 4.5, target_r: float = 0.0,
                           tol: float = 1e-12) -> BivariateBetaSpec:
    """Dirichlet parameters giving Beta(a, b) marginals with correlation
    ``target_r``, found by Brent's method on a1 in (0, min(a, b))."""
    hi_a1 = min(a, b)
    r_min = beta_model_correlation(a, b, hi_a1)
    if not r_min < target_r < 1:
        raise ConcordanceError(
            f"target correlation {target_r} is infeasible for Beta({a}, {b}) marginals; "
            f"need {r_min:.6g} < r < r_max = 1")
    a1 = brentq(lambda v: beta_model_correlation(a, b, v) - target_r, 1e-15 * hi_a1, hi_a1 * (1 - 1e-15),
                xtol=tol, rtol=4 * np.finfo(float).eps)
    return BivariateBetaSpec(a, b, target_r, (a1, a1, a - a1, b - a1))


def _beta_xy(shape, spec, rng):
    u = rng.dirichlet(spec.dirichlet_params, size=shape)
    return u[..., 0] + u[..., 2], u[..., 1] + u[..., 2]


def sample_bivariate_beta(n: int, spec: BivariateBetaSpec, seed=None) -> PairedSample:
    """n draws of (X, Y) from the bivariate beta ``spec``."""
    x, y = _beta_xy(n, spec, _rng(seed))
    return PairedSample(x, y)


@dataclass(frozen=True)
class NoiseSpec:
    """Laplace noise added to y, then clamped to [lower, upper]."""

    location: float = 0.0
    scale: float = 0.05
    family: Literal["laplace"] = "laplace"
    lower: float = 0.0
    upper: float = 1.0

    def __post_init__(self):
        if self.family != "laplace":
            raise ConcordanceError("only Laplace noise is supported")
        if not self.scale > 0:
            raise ConcordanceError("noise scale must be positive")
        if not self.lower < self.upper:
            raise ConcordanceError("noise bounds must satisfy lower < upper")


def _noisy(y, noise, rng):
    raw = y + rng.laplace(noise.location, noise.scale, size=np.shape(y))
    out = np.clip(raw, noise.lower, noise.upper)
    return out, int(np.count_nonzero(out != raw))


def add_noise(sample: PairedSample, noise: NoiseSpec, seed=None, return_clamped: bool = False):
    """Add Laplace noise to y and clamp to the noise bounds.

    With ``return_clamped`` the number of clamped values is returned too.
    """
    y, clamped = _noisy(sample.y, noise, _rng(seed))
    out = sample.with_y(y)
    return (out, clamped) if return_clamped else out


def pearson_power(r: float, n: int, alpha: float) -> float:
    """Two-sided Pearson test power from the Fisher z approximation."""
    z = stats.norm.isf(alpha / 2)
    shift = math.atanh(r) * math.sqrt(n - 3)
    return float(stats.norm.cdf(shift - z) + stats.norm.cdf(-shift - z))


def level_set_effect_size(power_target: float, n: int, alpha: float) -> float:
    """Correlation at which the Pearson test has ``power_target`` power
    under the Fisher z approximation."""
    if n < 4:
        raise ConcordanceError("need n >= 4")
    if not 0 < alpha < 1:
        raise ConcordanceError("alpha must lie in (0, 1)")
    if math.isclose(power_target, alpha, rel_tol=1e-12):
        return 0.0
    if not alpha < power_target < 1:
        raise ConcordanceError(f"power target must lie in (alpha, 1), got {power_target}")
    return float(brentq(lambda r: pearson_power(r, n, alpha) - power_target, 0.0, 1 - 1e-15, xtol=1e-14))


@dataclass(frozen=True)
class PowerConfig:
    """Settings of a power simulation.

    ``statistics`` entries are names (``pearson``, ``spearman``, ``ci``,
    ``rci``, ``kci``) or prepared ``Statistic`` objects; name entries use
    ``rci_params`` and ``kernel``.  ``rci_params`` defaults to delta 1 for
    normal data and 0.1 for beta data.
    """

    family: Family = "normal"
    sample_sizes: tuple = (100,)
    effect_sizes: tuple = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)
    alpha: float = 0.001
    replications: int = 1000
    statistics: tuple = ("pearson", "spearman", "ci", "rci")
    rci_params: Optional[RciParams] = None
    kernel: Optional[KernelSpec] = None
    noise: Optional[NoiseSpec] = None
    beta_shapes: tuple = (1.2, 4.5)
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.family not in ("normal", "beta"):
            raise ConcordanceError(f"unknown family {self.family!r}")
        if self.replications < 1:
            raise ConcordanceError("replications must be >= 1")
        if self.seed < 0:
            raise ConcordanceError("seed must be non-negative")
        if self.rci_params is None:
            d = 1.0 if self.family == "normal" else 0.1
            object.__setattr__(self, "rci_params", RciParams(d, d))
        object.__setattr__(self, "sample_sizes", tuple(int(n) for n in self.sample_sizes))
        object.__setattr__(self, "effect_sizes", tuple(float(r) for r in self.effect_sizes))
        object.__setattr__(self, "statistics", tuple(self.statistics))

    def prepared_statistics(self) -> list:
        out = []
        for s in self.statistics:
            if isinstance(s, str) and s == "kci" and self.kernel is None:
                raise ConcordanceError("kci needs a kernel")
            out.append(make_statistic(s, self.rci_params, self.kernel))
        return out

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("statistics", "rci_params", "kernel", "noise")}
        d["statistics"] = [statistic_label(s) for s in self.prepared_statistics()]
        d["rci_params"] = asdict(self.rci_params)
        d["kernel"] = None if self.kernel is None else asdict(self.kernel)
        d["noise"] = None if self.noise is None else asdict(self.noise)
        return d


def statistic_label(stat: Statistic) -> str:
    """Readable label that distinguishes parameterized statistics."""
    if stat.name == "rci":
        p = stat.params
        return f"rci({p.delta_x:g},{p.delta_y:g})"
    if stat.name == "kci":
        k = stat.kernel
        if k.form == "logistic":
            return f"kci({k.slope:g},{k.midpoint:g})"
        if k.form == "heavyside":
            return f"kci_heavyside({k.delta_x:g},{k.delta_y:g})"
        return "kci_unit"
    if stat.name == "ci" and stat.ties != "strict":
        return f"ci_{stat.ties}"
    return stat.name


@dataclass(frozen=True)
class PowerRow:
    statistic: str
    effect_size: float
    n: int
    alpha: float
    replications: int
    rejections: int
    power: float
    mean_permutations: float


@dataclass
class PowerGrid:
    rows: list
    metadata: dict = field(default_factory=dict)

    FIELDS = ("statistic", "effect_size", "n", "alpha", "replications", "rejections", "power",
              "mean_permutations")

    def power(self, statistic: str, effect_size: float, n: Optional[int] = None) -> float:
        for row in self.rows:
            if row.statistic == statistic and math.isclose(row.effect_size, effect_size) and (
                    n is None or row.n == n):
                return row.power
        raise KeyError((statistic, effect_size, n))

    def to_records(self) -> list:
        return [asdict(r) for r in self.rows]

    def to_csv(self) -> str:
        lines = [",".join(self.FIELDS)]
        for r in self.rows:
            lines.append(",".join(repr(getattr(r, f)) if isinstance(getattr(r, f), float) else str(getattr(r, f))
                                  for f in self.FIELDS))
        return "\n".join(lines) + "\n"


def _replicate(config: PowerConfig, stats_: list, spec: StopSpec, cell: int, n: int, r: float,
               beta: Optional[BivariateBetaSpec], rep: int):
    ss = np.random.SeedSequence([config.seed, cell, rep])
    data_ss, perm_ss = ss.spawn(2)
    rng = np.random.default_rng(data_ss)
    if config.family == "normal":
        x, y = _normal_xy(n, r, rng)
    else:
        x, y = _beta_xy(n, beta, rng)
    clamped = 0
    if config.noise is not None:
        y, clamped = _noisy(y, config.noise, rng)
    sample = PairedSample(x, y)
    perm_seed = int(perm_ss.generate_state(1, np.uint64)[0] >> np.uint64(1))
    decisions = adaptive_permutation_tests(sample, stats_, spec, perm_seed,
                                           stream=PermutationStream(n, perm_seed))
    return [d.rejected for d in decisions], [d.permutations_used for d in decisions], clamped


def run_power_sim(config: PowerConfig, progress=None) -> PowerGrid:
    """Empirical power of each statistic over the (n, r) grid.

    For each cell the replicate samples are tested with the adaptive
    permutation test at ``config.alpha``; power is the rejection fraction.
    All statistics on one sample share the same permutation stream.
    """
    stats_ = config.prepared_statistics()
    labels = [statistic_label(s) for s in stats_]
    spec = StopSpec(config.alpha)
    rows = []
    clamped_total = 0
    values_total = 0
    cells = [(n, r) for n in config.sample_sizes for r in config.effect_sizes]
    pool = ThreadPoolExecutor(config.threads) if config.threads > 1 else None
    try:
        for cell, (n, r) in enumerate(cells):
            beta = None
            if config.family == "beta":
                beta = solve_dirichlet_params(*config.beta_shapes, r)
            reps = range(config.replications)
            job = lambda k: _replicate(config, stats_, spec, cell, n, r, beta, k)  # noqa: E731
            results = list(pool.map(job, reps)) if pool else [job(k) for k in reps]
            rejected = np.array([res[0] for res in results], dtype=bool)
            used = np.array([res[1] for res in results], dtype=float)
            clamped_total += sum(res[2] for res in results)
            values_total += n * config.replications
            for j, label in enumerate(labels):
                k = int(rejected[:, j].sum())
                rows.append(PowerRow(label, r, n, config.alpha, config.replications, k,
                                     k / config.replications, float(used[:, j].mean())))
            if progress is not None:
                progress(cell + 1, len(cells))
    finally:
        if pool:
            pool.shutdown()
    meta = {"config": config.to_dict()}
    if config.noise is not None:
        meta["clamped_fraction"] = clamped_total / max(values_total, 1)
    return PowerGrid(rows, meta)


NULL_METHODS = ("pearson_t", "spearman_t", "ci_noether", "rci_noether", "ci_exact")


def _row_corr(x, y):
    xc = x - x.mean(axis=1, keepdims=True)
    yc = y - y.mean(axis=1, keepdims=True)
    return np.einsum("ij,ij->i", xc, yc) / np.sqrt(np.einsum("ij,ij->i", xc, xc) * np.einsum("ij,ij->i", yc, yc))


def _t_pvalues(r, n):
    r = np.clip(r, -1.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = r * np.sqrt((n - 2) / (1 - r * r))
    return np.where(np.abs(r) >= 1, 0.0, 2 * stats.t.sf(np.abs(t), n - 2))


def _exact_pvalues(x, y):
    n = x.shape[1]
    null = inversion_dist_no_ties(n)
    ox = np.argsort(x, axis=1, kind="stable")
    yr = np.argsort(np.argsort(y, axis=1, kind="stable"), axis=1, kind="stable")
    inv = _kernels.inversions_batch(np.take_along_axis(yr, ox, axis=1).astype(np.int64))
    ci = 1 - inv / null.max_inversions
    return np.array([exact_ci_pvalue(c, null) for c in ci])


@dataclass
class NullCalibration:
    """p-values of each method on independent data, keyed by (method, n)."""

    pvalues: dict
    metadata: dict = field(default_factory=dict)

    def qq(self, method: str, n: int, points: int = 200) -> np.ndarray:
        """(expected, observed) -log10 quantiles for a QQ plot."""
        p = np.sort(self.pvalues[(method, n)])
        m = p.size
        idx = np.unique(np.geomspace(1, m, points).astype(int)) - 1
        expected = (idx + 1) / (m + 1)
        return np.column_stack([-np.log10(expected), -np.log10(np.maximum(p[idx], 1e-300))])

    def false_positive_rate(self, method: str, n: int, alpha: float) -> float:
        p = self.pvalues[(method, n)]
        p = p[~np.isnan(p)]
        return float(np.mean(p < alpha))

    def fpr_table(self, alphas: Sequence[float] = (1e-2, 1e-3, 1e-4)) -> list:
        rows = []
        for (method, n), p in sorted(self.pvalues.items()):
            for a in alphas:
                fpr = self.false_positive_rate(method, n, a)
                rows.append({"method": method, "n": n, "alpha": a, "fpr": fpr, "inflation": fpr / a,
                             "repetitions": int(np.sum(~np.isnan(p)))})
        return rows


def run_null_calibration_sim(family: Family = "normal", sample_sizes: Sequence[int] = (100,),
                             repetitions: int = 10000, methods: Sequence[str] = NULL_METHODS,
                             seed: int = 0, rci_params: Optional[RciParams] = None,
                             beta_shapes=(1.2, 4.5), chunk: int = 10000) -> NullCalibration:
    """p-values of each method on independent (x, y) samples.

    Methods: ``pearson_t`` and ``spearman_t`` (t approximation),
    ``ci_noether`` and ``rci_noether`` (normal approximation with the
    Noether variance), ``ci_exact`` (exact inversion null, n <= 170).
    Independent samples are drawn from the family with correlation 0.
    """
    for m in methods:
        if m not in NULL_METHODS:
            raise ConcordanceError(f"unknown method {m!r}; choose from {NULL_METHODS}")
    if rci_params is None:
        d = 1.0 if family == "normal" else 0.1
        rci_params = RciParams(d, d)
    out = {}
    for cell, n in enumerate(sample_sizes):
        acc = {m: [] for m in methods}
        for c, start in enumerate(range(0, repetitions, chunk)):
            k = min(chunk, repetitions - start)
            rng = np.random.default_rng(np.random.SeedSequence([seed, cell, c]))
            if family == "normal":
                x = rng.standard_normal((k, n))
                y = rng.standard_normal((k, n))
            elif family == "beta":
                x = rng.beta(*beta_shapes, size=(k, n))
                y = rng.beta(*beta_shapes, size=(k, n))
            else:
                raise ConcordanceError(f"unknown family {family!r}")
            for m in methods:
                if m == "pearson_t":
                    p = _t_pvalues(_row_corr(x, y), n)
                elif m == "spearman_t":
                    rx = stats.rankdata(x, axis=1)
                    ry = stats.rankdata(y, axis=1)
                    p = _t_pvalues(_row_corr(rx, ry), n)
                elif m == "ci_noether":
                    p = noether_pvalues(x, y)
                elif m == "rci_noether":
                    p = noether_pvalues(x, y, rci_params)
                else:
                    p = _exact_pvalues(x, y)
                acc[m].append(p)
        for m in methods:
            out[(m, n)] = np.concatenate(acc[m])
    meta = {"family": family, "sample_sizes": list(sample_sizes), "repetitions": repetitions,
            "methods": list(methods), "seed": seed, "rci_params": asdict(rci_params)}
    return NullCalibration(out, meta)
