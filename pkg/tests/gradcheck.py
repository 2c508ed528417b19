"""Central finite-difference oracle, independent of the analytic backward pass."""

import numpy as np

from hstloc.nn import loss_eval


def numeric_grads(net, x, y, loss, h=1e-5):
    """d loss / d theta for every parameter of ``net`` by central differences."""
    out = {}
    for key, p in net.parameters().items():
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            orig = p[i]
            p[i] = orig + h
            lp, _ = loss_eval(loss, net(x), y)
            p[i] = orig - h
            lm, _ = loss_eval(loss, net(x), y)
            p[i] = orig
            g[i] = (lp - lm) / (2 * h)
        out[key] = g
    return out


def numeric_input_grad(net, x, y, loss, h=1e-5):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + h
        lp, _ = loss_eval(loss, net(x), y)
        x[i] = orig - h
        lm, _ = loss_eval(loss, net(x), y)
        x[i] = orig
        g[i] = (lp - lm) / (2 * h)
    return g


def rel_error(a, b):
    """Norm-relative error ||a - b|| / (||a|| + ||b||) of one tensor."""
    denom = np.linalg.norm(a) + np.linalg.norm(b)
    return 0.0 if denom == 0 else float(np.linalg.norm(a - b) / denom)
