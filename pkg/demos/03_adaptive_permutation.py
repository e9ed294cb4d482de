"""Adaptive permutation testing.

A fixed Monte Carlo test at alpha = 0.001 needs tens of thousands of
permutations for every sample.  The adaptive test stops once the p-value is
confidently on one side of alpha, so clearly null samples finish after a
few dozen permutations and only borderline ones use the full budget.
"""

# %%
import numpy as np

from concordance import PairedSample, RciParams, StopSpec
from concordance.permutation import adaptive_permutation_test, adaptive_permutation_tests, fixed_permutation_test

rng = np.random.default_rng(3)
spec = StopSpec(alpha=0.001)
print(spec)

# %% Independent data: decided quickly.
null = PairedSample(*rng.normal(size=(2, 100)))
print(adaptive_permutation_test(null, "ci", spec, seed=1))

# %% Strong association: about 10 / alpha permutations without an exceedance.
x = rng.normal(size=100)
strong = PairedSample(x, 0.6 * x + 0.8 * rng.normal(size=100))
print(adaptive_permutation_test(strong, "rci", spec, seed=1, params=RciParams(1, 1)))

# %% Several statistics can share one permutation stream; each stops on its own.
for d in adaptive_permutation_tests(strong, ["pearson", "spearman", "ci"], spec, seed=2):
    print(f"{d.statistic:<9} {d.decision:<16} p~{d.p_estimate:.2e}  permutations={d.permutations_used}")

# %% The fixed-K test is available for comparison.
print(fixed_permutation_test(strong, "ci", 5000, seed=4, alpha=0.05))

# %% Any function of a PairedSample can be tested.
def median_agreement(sample):
    return np.mean((sample.x > np.median(sample.x)) == (sample.y > np.median(sample.y)))


print(adaptive_permutation_test(strong, median_agreement, StopSpec(0.01), seed=5))
