"""Exact null distribution of the CI.

Under independence every ordering of y against x is equally likely, so the
number of discordant pairs follows the inversion-count distribution.  With
ties in one vector the count runs over distinct arrangements of a multiset.
"""

# %%
import numpy as np

from concordance import PairedSample, ci_fast
from concordance.exact_null import (
    asymptotic_ci_pvalue,
    exact_ci_pvalue,
    exact_ci_test,
    inversion_dist_multiset,
    inversion_dist_no_ties,
    null_for_sample,
)

# %% Small cases can be checked by hand: n = 4 gives 1, 3, 5, 6, 5, 3, 1.
print(inversion_dist_no_ties(4).counts.astype(int).tolist())

# %% Two tie classes of size 2 give the Gaussian binomial [4 choose 2]_q.
print(inversion_dist_multiset((2, 2)).counts.astype(int).tolist())

# %% n = 100 in a few milliseconds; mean n(n-1)/4.
d = inversion_dist_no_ties(100)
print("support", d.counts.size, "mean", d.mean(), "expected", 100 * 99 / 4)

# %% Exact versus normal-approximation p-values on a weakly associated sample.
rng = np.random.default_rng(1)
x = rng.normal(size=100)
y = 0.35 * x + rng.normal(size=100)
s = PairedSample(x, y)
ci = ci_fast(s).estimate
print(f"CI = {ci:.4f}")
print("exact two-sided p     ", exact_ci_pvalue(ci, d))
print("Noether-variance p    ", asymptotic_ci_pvalue(s))

# %% Ties in x are handled through the multiset null.
xt = np.round(x, 0)
st = PairedSample(xt, y)
print("tie classes", null_for_sample(st).multiplicities)
print("exact p with ties", exact_ci_test(st))
