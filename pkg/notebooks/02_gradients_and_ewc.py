# %% [markdown]
# # Gradients, Fisher information and the Online-EWC penalty
#
# The networks keep all parameters in one flat vector, so a finite-difference
# check is a loop over that vector.

# %%
import numpy as np

from streamcl import continual, engine, nn

rng = np.random.default_rng(0)
ae, pred, latent_layer = engine.build_networks(7, engine.EngineConfig(), True, 0.0)
print(ae, pred)

x = rng.normal(size=(8, 7))
grad, loss = nn.backward(ae, x, mode=nn.Mode.EVAL)


def loss_at(p):
    return nn.mse(nn.forward(nn.MLP(ae.layers, p), x), x)


h = 1e-5
idx = rng.choice(ae.n_params, 10, replace=False)
for i in idx:
    up, dn = ae.params.copy(), ae.params.copy()
    up[i] += h
    dn[i] -= h
    print(f"param {i:4d}: analytic {grad[i]: .6e}  numeric {(loss_at(up) - loss_at(dn)) / (2 * h): .6e}")

# %% [markdown]
# The diagonal Fisher is the mean squared per-sample gradient. Parameters that
# matter for the current data get large values; the penalty pulls exactly
# those back towards the anchor.

# %%
fisher = continual.estimate_fisher_diagonal(ae, x)
print("Fisher range", fisher.values.min(), fisher.values.max())
state = continual.consolidate(continual.ConsolidationState(ae.n_params, gamma=0.9, lam=200.0),
                              fisher, ae.params)
moved = ae.params + 0.01 * rng.normal(size=ae.n_params)
value, g = continual.ewc_penalty(moved, state)
print("penalty after a small random move:", value)

# %% [markdown]
# One parameter, two quadratic tasks. Training the second task with the penalty
# lands on the weighted compromise `(2ab + lam*F*theta1) / (2a + lam*F)`.

# %%
net = nn.MLP([nn.LayerSpec(1, 1, "identity", bias=False)], params=[0.0])
x1 = rng.uniform(0.5, 1.5, (50, 1))
y1 = 2.0 * x1[:, 0]
for _ in range(5000):
    net.params -= 0.05 * nn.backward(net, x1, y1, mode=nn.Mode.EVAL)[0]
theta1 = net.params[0]
s = continual.consolidate(continual.ConsolidationState(1, lam=10.0),
                          continual.estimate_fisher_diagonal(net, x1, y1), net.params)
x2 = rng.uniform(0.5, 1.5, (50, 1))
y2 = -1.0 * x2[:, 0]
for _ in range(5000):
    net.params -= 0.05 * nn.backward(net, x2, y2, s.penalty, mode=nn.Mode.EVAL)[0]
a, b = np.mean(x2 ** 2), -1.0
F = s.fisher[0]
print("theta1", theta1, "theta2", net.params[0],
      "closed form", (2 * a * b + 10.0 * F * theta1) / (2 * a + 10.0 * F))
