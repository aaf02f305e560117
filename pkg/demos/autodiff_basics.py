#!/usr/bin/env python3
"""Tour of the tape: gradients, and gradients of gradients.

Everything in this package runs on one small reverse-mode engine.  A Tape
records the ops executed inside its `with` block; `backward` replays the
records to accumulate gradients.  Because the replay itself is built from
the same public ops, you can record it on an *outer* tape and get
second-order gradients -- that is the trick the region penalty relies on.
"""

import numpy as np

from regiongrad.tensor import Tape, backward, exp, square, tensor, tsum


def f(x):
    # f(x) = sum(x^2 * exp(x)); f'(x) = 2x e^x + x^2 e^x
    return tsum(square(x) * exp(x))


x0 = np.array([0.5, -1.0, 2.0])

# ---- first order ---------------------------------------------------------
x = tensor(x0, requires_grad=True)
with Tape() as tp:
    y = f(x)
g = backward(tp, y)[x].data

expected = 2 * x0 * np.exp(x0) + x0**2 * np.exp(x0)
print("f(x)        =", y.item())
print("df/dx       =", g)
print("hand-derived=", expected)
print("agree:", np.allclose(g, expected, rtol=1e-12), "\n")

# ---- second order: gradient of the gradient-norm -------------------------
# r(x) = sum_i (df/dx_i)^2.  The inner backward runs *inside* the outer
# tape, so its arithmetic is differentiable too.
x = tensor(x0, requires_grad=True)
with Tape() as outer:
    with Tape() as inner:
        y = f(x)
    gx = backward(inner, y)[x]      # a live Tensor, still on `outer`
    r = tsum(square(gx))
hess_term = backward(outer, r)[x].data

# check against central differences of r(x) itself
h = 1e-5
fd = np.zeros_like(x0)
for i in range(x0.size):
    for sgn in (+1.0, -1.0):
        xs = x0.copy()
        xs[i] += sgn * h
        xt = tensor(xs, requires_grad=True)
        with Tape() as tp:
            ys = f(xt)
        gs = backward(tp, ys)[xt].data
        fd[i] += sgn * np.sum(gs**2) / (2 * h)

print("r(x) = |df/dx|^2 =", r.item())
print("dr/dx (nested tapes)      =", hess_term)
print("dr/dx (finite differences)=", fd)
print("agree:", np.allclose(hess_term, fd, rtol=1e-6))
