"""
Reverse-mode gradients on numpy arrays
======================================

Every differentiable op records its parents and a rule that maps the
output gradient to parent gradients. ``backward`` walks the graph in
reverse topological order and sums what arrives at each leaf.
"""

import numpy as np

from masksum import numerics as nx

# %%
# A two-layer network and a cross-entropy loss.
rng = np.random.default_rng(0)
x = nx.Tensor(rng.normal(size=(6, 4)))
w1 = nx.parameter(rng.normal(size=(4, 8)) * 0.5)
w2 = nx.parameter(rng.normal(size=(8, 3)) * 0.5)
targets = np.array([0, 1, 2, 0, 1, 2])


def loss():
    return nx.cross_entropy(nx.gelu(x @ w1) @ w2, targets)


nx.backward(loss())
print("loss", loss().item())

# %%
# Central differences agree with the analytic gradient to about 1e-10.


def value():
    with nx.no_grad():
        return loss().item()


for name, p in (("w1", w1), ("w2", w2)):
    numeric = nx.numerical_gradient(value, p.data)
    print(name, "relative error", nx.relative_error(p.grad, numeric))

# %%
# A graph can be backpropagated once. Separate losses accumulate into the
# same leaves, which is how gradient accumulation works.
w1.grad = w2.grad = None
half = x.data.shape[0] // 2
for rows in (slice(0, half), slice(half, None)):
    part = nx.cross_entropy(nx.gelu(nx.Tensor(x.data[rows]) @ w1) @ w2, targets[rows]) * 0.5
    nx.backward(part)
full_grad = w1.grad.copy()
w1.grad = w2.grad = None
nx.backward(loss())
print("split batches match the full batch:", np.allclose(full_grad, w1.grad, atol=1e-14))
