"""The numpy autodiff engine on a small conv net, and the SimSiam gradient asymmetry.

    python demos/02_autodiff_and_stop_gradient.py
"""

import numpy as np

from stylex import autodiff as ad
from stylex.autodiff import Tensor, gradcheck
from stylex.trainer import simsiam_loss

rng = np.random.default_rng(0)

# a conv -> relu -> pool -> linear chain checked against central differences
x = Tensor(rng.normal(size=(2, 1, 8, 8)), requires_grad=True, dtype=np.float64)
w = Tensor(rng.normal(size=(3, 1, 3, 3)) * 0.3, requires_grad=True, dtype=np.float64)
v = Tensor(rng.normal(size=(3, 4)), requires_grad=True, dtype=np.float64)


def net():
    h = ad.relu(ad.conv2d(x, w, padding=1))
    out = ad.matmul(ad.global_average_pool(h), v)
    return ad.sum_all(ad.mul(out, out))


errors = gradcheck(net, [x, w, v], step=1e-5)
print("relative gradient error per leaf:", ", ".join(f"{e:.1e}" for e in errors))

# the loss only trains the predictor side; the target embeddings get nothing
z1, z2 = (Tensor(rng.normal(size=(4, 16)), requires_grad=True, dtype=np.float64) for _ in range(2))
p1, p2 = (Tensor(rng.normal(size=(4, 16)), requires_grad=True, dtype=np.float64) for _ in range(2))
loss = simsiam_loss(z1, z2, p1, p2)
ad.backward(loss)
print(f"loss {loss.item():+.4f}")
for name, t in (("z1", z1), ("z2", z2), ("p1", p1), ("p2", p2)):
    g = 0.0 if t.grad is None else float(np.abs(t.grad).max())
    print(f"  max |dL/d{name}| = {g:.3e}")

# perfect prediction reaches the lower bound
print(f"p1 = z2, p2 = z1 gives {simsiam_loss(z1, z2, z2, z1).item():+.4f}")
