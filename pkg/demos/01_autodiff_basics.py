"""Tour of the tensor engine: graphs, gradients, and the checker that keeps it honest."""

import numpy as np

import demix.tensor as T
from demix.tensor import Tensor, finite_difference_check, no_grad

# Tensors wrap numpy arrays; requires_grad opts a leaf into the graph.
x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]), requires_grad=True)
w = Tensor(np.array([[0.5], [1.0]]), requires_grad=True)

# Ops build a graph as they run. backward() needs a scalar.
y = T.matmul(x, w)
loss = T.tmean(T.relu(y))
loss.backward()
print("loss:", loss.item())
print("dloss/dx:\n", x.grad)
print("dloss/dw:\n", w.grad)

# Fan-out accumulates: d(x*x + x)/dx = 2x + 1.
a = Tensor(np.float64(2.0), requires_grad=True)
out = T.add(T.mul(a, a), a)
out.backward()
print("d(a*a + a)/da at a=2:", a.grad, "(expect 5)")

# detach() cuts the graph; the value flows, the gradient does not.
b = Tensor(np.float64(3.0), requires_grad=True)
out = T.mul(b, T.detach(b))  # d/db = detach(b) = 3, not 2b
out.backward()
print("d(b * stop(b))/db at b=3:", b.grad, "(expect 3)")

# no_grad() builds nothing, for cheap inference passes.
with no_grad():
    silent = T.matmul(x, w)
print("no_grad output has no backward hook:", silent.requires_grad is False)

# Every op is validated against central differences. The helper perturbs the
# input, replays any detached values, and reports the worst relative error.
probe = Tensor(np.random.default_rng(0).standard_normal((4, 3)), requires_grad=True)
err = finite_difference_check(lambda t: T.tmean(T.softmax(t, axis=1) ** 2), probe)
print("softmax^2 fd error:", f"{err:.2e}")
