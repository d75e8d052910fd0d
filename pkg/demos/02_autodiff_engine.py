"""The tape engine underneath every learnable module.

Shows the Tensor/Parameter surface, a backward pass through a tiny MLP, the
finite-difference gradient checker, and the single-file checkpoint container.
"""
import numpy as np

from kgdenoise import autodiff as ad
from kgdenoise.autodiff import Parameter, backward, grad_check

# -- a scalar chain ------------------------------------------------------------
x = Parameter(np.array(3.0), "x")
loss = ad.mul(x, x)  # x^2
backward(loss)
print(f"d(x^2)/dx at x=3 -> {x.grad}  (expect 6)")

# -- a two-layer MLP, checked against central differences -----------------------
rng = np.random.default_rng(0)
w1 = Parameter(rng.uniform(-1, 1, (4, 8)), "w1")
b1 = Parameter(np.zeros(8), "b1")
w2 = Parameter(rng.uniform(-1, 1, (8, 1)), "w2")
inputs = ad.constant(rng.uniform(-2, 2, (16, 4)))


def network():
    hidden = ad.relu(ad.add(inputs @ w1, b1))
    return ad.reduce_mean(ad.sigmoid(hidden @ w2))


report = grad_check(network, [w1, b1, w2])
for name, err in report.items():
    print(f"gradient check {name}: max relative error {err:.2e}")

# -- graph-flavoured primitives --------------------------------------------------
features = Parameter(rng.standard_normal((5, 3)), "features")
messages = ad.gather_rows(features, np.array([0, 0, 2, 4]))  # one row per edge
pooled = ad.scatter_add_rows(messages, np.array([1, 3, 3, 0]), num_rows=5)
backward(ad.reduce_sum(pooled))
print("scatter/gather round trip grad (row counts):", features.grad[:, 0])

# -- checkpoints -----------------------------------------------------------------
ad.save_checkpoint("/tmp/demo.ckpt", [w1, b1, w2])
stored = ad.load_checkpoint("/tmp/demo.ckpt")
print("checkpoint holds:", {k: v.shape for k, v in stored.items()})
