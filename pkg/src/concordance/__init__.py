"""Concordance-based association statistics with exact and permutation tests.

The concordance index (CI), a robust variant that ignores pairs whose
differences are within measurement noise (rCI), and a kernel-weighted
variant (kCI), alongside Pearson and Spearman baselines.  Significance comes
from exact inversion-count nulls or adaptive permutation tests; noise
thresholds and kernels are calibrated from replicate measurements.
"""

from .calibration import (
    CalibrationResult,
    ConfusionMatrix,
    DeltaSet,
    NoiseFit,
    confusion_matrix,
    ecdf,
    estimate_null_fraction,
    fit_kci_kernel,
    fit_noise,
    fit_rci_threshold,
    mcc,
    null_posterior_bound,
)
from .core import (
    AssociationResult,
    ConcordanceError,
    DegenerateInputError,
    KernelSpec,
    PairCensus,
    PairedSample,
    PrecisionLimitError,
    RciParams,
    UndefinedStatisticError,
    associate,
    ci_fast,
    ci_naive,
    kci,
    pair_census,
    pearson,
    rci_fast,
    rci_naive,
    spearman,
)
from .exact_null import (
    InversionDistribution,
    MultisetSpec,
    asymptotic_ci_pvalue,
    asymptotic_pearson_pvalue,
    asymptotic_spearman_pvalue,
    exact_ci_pvalue,
    exact_ci_test,
    inversion_dist_multiset,
    inversion_dist_no_ties,
)
from .permutation import (
    PermDecision,
    StopSpec,
    adaptive_permutation_test,
    adaptive_permutation_tests,
    fixed_permutation_test,
)
from .recall import RecallReport, SensitivityMatrix, drug_recall, similarity_matrix
from .simulation import (
    BivariateBetaSpec,
    NoiseSpec,
    PowerConfig,
    PowerGrid,
    add_noise,
    level_set_effect_size,
    run_null_calibration_sim,
    run_power_sim,
    sample_bivariate_beta,
    sample_bivariate_normal,
    solve_dirichlet_params,
)

__version__ = "0.1.0"
