"""Choosing rCI thresholds and a kCI kernel from replicate measurements.

Replicate differences (S0) describe pure measurement noise; differences
between arbitrary population pairs (S) mix noise with real differences.
Here both come from a labeled synthetic mixture, so the threshold can be
compared with the one that is optimal given the true labels.
"""

# %%
import numpy as np

from concordance.calibration import (
    confusion_matrix,
    estimate_null_fraction,
    fit_kci_kernel,
    fit_noise,
    fit_rci_threshold,
    mcc,
)

rng = np.random.default_rng(31)
m = 50_000
signed_noise = rng.laplace(0, 0.02, m)
s0 = np.abs(signed_noise)
s = np.concatenate([np.abs(rng.laplace(0, 0.02, m)), np.abs(rng.normal(0.3, 0.05, m))])

# %% Noise model fitted to the signed replicate differences.
print(fit_noise(signed_noise, "laplace"))
print(fit_noise(signed_noise, "gaussian"))

# %% With pi0 = 1 the Bayes bound counts every small population delta as noise
# and the MCC keeps improving deep into the noise tail.
print("tau (pi0 = 1)       ", fit_rci_threshold(s0, s).threshold)

# %% A conservative pi0 estimate fixes that.
pi0 = estimate_null_fraction(s0, s)
cal = fit_rci_threshold(s0, s, pi0, n_bootstrap=20, seed=1)
print(f"pi0 estimate {pi0:.3f}; tau {cal.threshold:.4f}; bootstrap sd {cal.threshold_bootstrap.std():.4f}")
cm = confusion_matrix(cal.threshold, s0, s, pi0)
print(cm, "MCC", mcc(cm))

# %% Threshold optimal under the true labels, for reference.
labels = np.r_[np.zeros(m, bool), np.ones(m, bool)]
grid = np.quantile(s, np.linspace(0.3, 0.7, 400))
best = max(grid, key=lambda t: np.corrcoef(s > t, labels)[0, 1])
print("labeled optimum ~", best)

# %% Logistic kernel fitted to P(h1 | D > t) from the pi0 = 1 bound.
k = fit_kci_kernel(s0, s).kernel
print(k, "w(0) =", float(k.weight(0.0)), "w(0.05) =", float(k.weight(0.05)))
