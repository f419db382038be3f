"""Independent reference implementations shared by the unit and acceptance tests."""

import numpy as np

from infolr.nn import loss_and_grad
from infolr.scheduler import MI_FLOOR, PolicyConstants, SchedulerState

# -- reference transcription ------------------------------------------------
#
# Written straight from the published case lists, with the cold-start,
# negative-floor and zero-denominator conventions applied first.


def _pre(hist):
    return [MI_FLOOR if v < 0 else v for v in hist]


def oracle_policy1(lr, hist, lr_min, lr_max, eps, g1, g2):
    if len(hist) < 2:
        return lr_min
    i2, i1 = _pre(hist[-2:])
    if i1 == 0:
        return min(lr_max, max(lr_min, lr))
    delta = abs(i1 - i2) / i1
    if delta > eps:
        return min(lr_max, lr + g1 * delta)
    return max(lr_min, lr - g2 * delta)


def oracle_policy2(lr, hist, ixy, lr_min, lr_max, eps, g1, g2, g3):
    if len(hist) < 2:
        return lr_min
    i2, i1 = _pre(hist[-2:])
    if i1 == 0 or ixy is None or ixy <= 0:
        return min(lr_max, max(lr_min, lr))
    d1 = 1 - i1 / ixy
    d2 = abs(i1 - i2) / i1
    if d1 > 0 and d2 > eps:
        return min(lr_max, lr + g1 * d1)
    if d1 > 0 and d2 <= eps:
        return max(lr_min, lr - g2 * d1)
    if d1 <= 0 and d2 > eps:
        return max(lr_min, lr + g3 * d1)
    return max(lr_min, lr + g3 * d1)


def oracle_value_only(lr, hist, ixy, lr_min, lr_max, eps, g1, g2, g3):
    # d2 is taken to exceed eps whatever its value
    if not hist:
        return lr_min
    (i1,) = _pre(hist[-1:])
    if i1 == 0 or ixy is None or ixy <= 0:
        return min(lr_max, max(lr_min, lr))
    d1 = 1 - i1 / ixy
    if d1 > 0:
        return min(lr_max, lr + g1 * d1)
    return max(lr_min, lr + g3 * d1)


def random_case(rng):
    lr_min = 10 ** rng.uniform(-5, -2)
    lr_max = lr_min * 10 ** rng.uniform(0, 3)
    c = PolicyConstants(
        lr_min=lr_min,
        lr_max=lr_max,
        epsilon=10 ** rng.uniform(-4, -1),
        gamma1=rng.choice([0.0, 10 ** rng.uniform(-4, 0)]),
        gamma2=rng.choice([0.0, 10 ** rng.uniform(-4, 0.5)]),
        gamma3=rng.choice([0.0, 10 ** rng.uniform(-4, 0)]),
    )
    lr = rng.uniform(lr_min, lr_max)
    n_hist = rng.choice([0, 1, 2, 2, 2, 2, 2, 2])
    base = rng.uniform(0.01, 3.0)
    hist = []
    for _ in range(n_hist):
        kind = rng.integers(10)
        if kind == 0:
            hist.append(float(-rng.uniform(0, 0.1)))  # negative estimate
        elif kind == 1:
            hist.append(base)  # repeated value
        elif kind == 2:
            hist.append(base * (1 + rng.uniform(-0.02, 0.02)))  # near-saturated
        else:
            hist.append(float(rng.uniform(0.01, 3.0)))
    ixy_kind = rng.integers(10)
    ixy = None if ixy_kind == 0 else (0.0 if ixy_kind == 1 else float(rng.uniform(0.5, 3.0)))
    if ixy and hist and rng.integers(8) == 0:
        hist[-1] = ixy  # exactly at the reference
    return SchedulerState(lr=lr, ihyll_history=tuple(hist), ixy=ixy), c


def c_args(c):
    return (c.lr_min, c.lr_max, c.epsilon, c.gamma1, c.gamma2, c.gamma3)


def max_fd_relative_error(net, x, labels, h=1e-5):
    """Largest relative gap between backprop and central differences."""
    _, grads = loss_and_grad(net, x, labels)
    worst = 0.0
    for i in range(net.n_layers):
        for param, g in ((net.weights[i], grads[i][0]), (net.biases[i], grads[i][1])):
            for idx in np.ndindex(param.shape):
                orig = param[idx]
                param[idx] = orig + h
                up, _ = loss_and_grad(net, x, labels)
                param[idx] = orig - h
                down, _ = loss_and_grad(net, x, labels)
                param[idx] = orig
                num = (up - down) / (2 * h)
                denom = max(abs(num), abs(g[idx]), 1e-8)
                worst = max(worst, abs(num - g[idx]) / denom)
    return worst
