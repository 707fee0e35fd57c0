"""Finite-difference gradient checking and small brute-force oracles."""

import numpy as np

from fednasmri import autodiff as ad

H = 1e-5


def _eval(fn, arrays):
    return float(fn({k: ad.Tensor(v) for k, v in arrays.items()}).data)


def fd_gradient(fn, arrays, name, coords=None, h=H):
    """Central differences of ``fn`` w.r.t. ``arrays[name]`` at ``coords`` (all if None)."""
    base = arrays[name]
    coords = list(np.ndindex(base.shape)) if coords is None else coords
    out = np.zeros(len(coords))
    for n, idx in enumerate(coords):
        plus = dict(arrays, **{name: base.copy()})
        minus = dict(arrays, **{name: base.copy()})
        plus[name][idx] += h
        minus[name][idx] -= h
        out[n] = (_eval(fn, plus) - _eval(fn, minus)) / (2 * h)
    return out, coords


def rel_error(a, b):
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def check_grads(fn, arrays, max_coords=None, seed=0, h=H):
    """Worst relative error between analytic and numeric gradients.

    ``fn`` maps ``{name: Tensor}`` to a scalar Tensor. With ``max_coords``
    each array is probed at that many random coordinates instead of all.
    """
    params = {k: ad.Parameter(k, v) for k, v in arrays.items()}
    analytic = ad.grad(fn(params), params)
    rng = np.random.default_rng(seed)
    worst = {}
    for name, arr in arrays.items():
        coords = None
        if max_coords is not None and arr.size > max_coords:
            flat = rng.choice(arr.size, size=max_coords, replace=False)
            coords = [np.unravel_index(i, arr.shape) for i in flat]
        numeric, coords = fd_gradient(fn, arrays, name, coords, h)
        picked = np.array([analytic[name][idx] for idx in coords])
        worst[name] = rel_error(picked, numeric)
    return worst


def naive_conv2d(x, w, dilation=1, groups=1):
    """Direct nested-loop convolution with zero padding, stride 1."""
    n, cin, hh, ww = x.shape
    cout, cpg, k, _ = w.shape
    pad = dilation * (k - 1) // 2
    xp = np.zeros((n, cin, hh + 2 * pad, ww + 2 * pad))
    xp[:, :, pad:pad + hh, pad:pad + ww] = x
    out = np.zeros((n, cout, hh, ww))
    opg = cout // groups
    for b in range(n):
        for o in range(cout):
            g = o // opg
            for c in range(cpg):
                ci = g * cpg + c
                for i in range(hh):
                    for j in range(ww):
                        acc = 0.0
                        for u in range(k):
                            for v in range(k):
                                acc += w[o, c, u, v] * xp[b, ci, i + u * dilation, j + v * dilation]
                        out[b, o, i, j] += acc
    return out
