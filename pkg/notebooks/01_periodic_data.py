# %% [markdown]
# # Artificial periodic data
#
# Every feature is the sum of a daily and a yearly Gaussian component. Both
# the mean and the variance follow |sin| with a random phase per dimension,
# so the distribution drifts slowly over the year and quickly over the day.

# %%
import numpy as np

from streamcl import datagen

cfg = datagen.GeneratorConfig(seed=0)
data = datagen.generate_series(cfg)
phases = data.meta["phases"]
print(data.X.shape, "supervised:", data.supervised)
print("daily phases ", np.round(phases.day, 3))
print("yearly phases", np.round(phases.year, 3))

# %% [markdown]
# The analytic moments at a few hours, next to 5000 fresh draws at the same hour.

# %%
rng = np.random.default_rng(1)
for t0 in (0, 6, 12, 4380):
    mean, var = datagen.moments([t0], phases, cfg)
    xd, xy = datagen.sample_components(np.full(5000, float(t0)), phases, cfg, rng)
    x = xd + xy
    print(f"t={t0:5d}  mean f1 {mean[0, 0]:.3f} ~ {x[:, 0].mean():.3f}   "
          f"var f1 {var[0, 0]:.3f} ~ {x[:, 0].var():.3f}")

# %% [markdown]
# Windowed means of the first feature: the yearly component shows up as a slow
# trend across the twelve 1000-sample windows of the experiment protocol.

# %%
print(np.round(data.X[:, 0].reshape(12, 1000).mean(axis=1), 3))

# %% [markdown]
# A supervised variant adds a target that is a noisy linear combination of
# the features with yearly drifting coefficients.

# %%
sup = datagen.generate_series(datagen.GeneratorConfig(seed=0, supervised=True))
print("target range", sup.y.min().round(3), sup.y.max().round(3))
print(datagen.provenance_line(cfg, phases)[:120], "...")
