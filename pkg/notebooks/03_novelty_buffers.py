# %% [markdown]
# # Novelty detection and buffered updates
#
# A small autoencoder is trained on the first 500 samples. The stream that
# follows is scored sample by sample: errors above `alpha * mse_min` go to the
# novelty buffer, the rest to the familiarity buffer. A full novelty buffer
# triggers retraining on the novelties only.

# %%
import numpy as np

from streamcl import continual, datagen, engine, nn

data = datagen.generate_series(datagen.GeneratorConfig(length=4000, seed=3))
cfg = engine.EngineConfig(encoder_hidden=(16, 8), seed=3)
ae, _, layer = engine.build_networks(7, cfg, False, 0.0)
engine.pretrain(ae, None, layer, data.X[:500], None, 40, 40, 32, 1e-3, 0)

sub = engine.SubModel(ae, engine.ThresholdState(0.95, 0.0), engine.BufferPair(150),
                      continual.ConsolidationState(ae.n_params, gamma=0.9, lam=200.0))
model = engine.ClearModel(sub, layer, settings=engine.UpdateSettings(epochs_a=20, batch_size=16))
engine.reestimate_threshold(model, engine.Which.AUTOENCODER, (data.X[:500], None))
print("initial threshold", round(sub.threshold.threshold, 4))

# %%
engine.stream(model, data[500:])
for r in model.reports:
    print(f"update at sample {r.position:5d}: {r.n_novelty} novel / {r.n_familiarity} familiar, "
          f"new threshold {r.threshold:.4f}")
print("samples waiting in buffers:", len(sub.buffers.novelty), len(sub.buffers.familiarity))

# %% [markdown]
# The Fisher accumulator grows with every consolidation (`F <- gamma*F + F_new`).

# %%
print("consolidations", sub.consolidation.update_count,
      "Fisher mass", round(float(sub.consolidation.fisher.sum()), 3))
err = engine.reconstruction_errors(model, data.X)
print("mean error per 500 samples:", np.round(err.reshape(8, 500).mean(axis=1), 4))
