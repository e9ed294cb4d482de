"""How well do the asymptotic tests hold their size in the far tail?

On independent data a calibrated test rejects at p < a with probability a.
The CI normal approximation with the Noether variance overshoots at small
a and moderate n; the exact null does not.
"""

# %%
from concordance.simulation import run_null_calibration_sim

res = run_null_calibration_sim("normal", sample_sizes=(50, 150), repetitions=20_000, seed=1,
                               methods=("pearson_t", "ci_noether", "rci_noether", "ci_exact"))

# %% False positive rate relative to the nominal level.
for row in res.fpr_table((1e-2, 1e-3)):
    print(f"{row['method']:<12} n={row['n']:<4} alpha={row['alpha']:<6} fpr={row['fpr']:.5f} "
          f"inflation={row['inflation']:.2f}")

# %% QQ data (-log10 expected vs observed) for plotting.
qq = res.qq("ci_noether", 50, points=10)
print(qq.round(3))
