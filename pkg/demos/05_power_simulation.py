"""Power of the adaptive permutation test, scaled down.

Full-size runs (1000 replications per cell at alpha = 0.001) take minutes
per statistic; this uses alpha = 0.01 and 100 replications so it finishes
quickly.  The same grid is available from ``concordance power``.
"""

# %%
from concordance import KernelSpec, RciParams
from concordance.simulation import NoiseSpec, PowerConfig, level_set_effect_size, pearson_power, run_power_sim

# %% Analytic Pearson power under the Fisher z approximation.
print("Pearson power at r=0.3, n=100, alpha=0.001:", round(pearson_power(0.3, 100, 0.001), 4))
print("r giving 50% power:", round(level_set_effect_size(0.5, 100, 0.001), 4))

# %% Normal data.
cfg = PowerConfig(family="normal", sample_sizes=(100,), effect_sizes=(0.0, 0.2, 0.3), alpha=0.01,
                  replications=100, statistics=("pearson", "spearman", "ci", "rci"), rci_params=RciParams(1, 1),
                  seed=1)
grid = run_power_sim(cfg)
for row in grid.rows:
    print(f"{row.statistic:<10} r={row.effect_size:.1f} power={row.power:.2f} "
          f"mean permutations={row.mean_permutations:.0f}")

# %% Beta data with and without Laplace noise on y.
for noise in (None, NoiseSpec(0.0, 0.05)):
    cfg = PowerConfig(family="beta", effect_sizes=(0.4,), alpha=0.01, replications=100,
                      statistics=("pearson", "ci", "rci", "kci"), kernel=KernelSpec.logistic(-27.52, 0.0646),
                      noise=noise, seed=2)
    g = run_power_sim(cfg)
    print("noise" if noise else "clean", {r.statistic: r.power for r in g.rows},
          g.metadata.get("clamped_fraction", ""))
