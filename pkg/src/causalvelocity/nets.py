"""Small fully connected networks with exact input-derivative propagation.

The fitting and data-generating machinery needs, for a tanh MLP f_theta,
not just f but also its first and second derivatives along an input
direction, plus parameter gradients of all of these. Forward passes carry
a truncated Taylor expansion (value, tangent, second tangent) along one
direction; the matching reverse pass differentiates any weighted
combination of the three outputs with respect to the flat parameter
vector. Everything is vectorized over a batch of inputs.
"""

from __future__ import annotations

import numpy as np


def layer_sizes_params(sizes) -> int:
    """Total parameter count for affine layers with the given unit sizes."""
    return sum((d_in + 1) * d_out for d_in, d_out in zip(sizes[:-1], sizes[1:]))


def unpack_params(theta: np.ndarray, sizes) -> list:
    """Split a flat vector into [(W, b), ...] per layer; views, no copies."""
    theta = np.asarray(theta, dtype=float)
    if theta.size != layer_sizes_params(sizes):
        raise ValueError(
            f"theta has {theta.size} entries, sizes {tuple(sizes)} need "
            f"{layer_sizes_params(sizes)}"
        )
    layers = []
    pos = 0
    for d_in, d_out in zip(sizes[:-1], sizes[1:]):
        w = theta[pos : pos + d_in * d_out].reshape(d_out, d_in)
        pos += d_in * d_out
        b = theta[pos : pos + d_out]
        pos += d_out
        layers.append((w, b))
    return layers


def pack_params(layers) -> np.ndarray:
    return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in layers])


def init_params(sizes, rng: np.random.Generator) -> np.ndarray:
    """Weights ~ N(0, 1/fan_in), biases 0."""
    parts = []
    for d_in, d_out in zip(sizes[:-1], sizes[1:]):
        parts.append(rng.normal(0.0, 1.0 / np.sqrt(d_in), size=d_in * d_out))
        parts.append(np.zeros(d_out))
    return np.concatenate(parts)


def init_params_iid(sizes, rng: np.random.Generator, sigma: float) -> np.ndarray:
    """All parameters (weights and biases) iid N(0, sigma^2); generator nets."""
    return rng.normal(0.0, sigma, size=layer_sizes_params(sizes))


def forward_jet(layers, x: np.ndarray, direction: np.ndarray | None = None, order: int = 0):
    """Forward pass with an optional jet along `direction`.

    x: (n, d_in). direction: (n, d_in) input tangent (required for order >= 1).
    Returns (outs, cache) where outs has 1 + order arrays of shape (n,):
    value, first and second directional derivatives of the scalar output.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ValueError("x must be (n, d_in)")
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1, or 2")
    a = x
    da = None if order < 1 else np.asarray(direction, dtype=float)
    if order >= 1 and (da is None or da.shape != x.shape):
        raise ValueError("direction must match x's shape")
    dda = None if order < 2 else np.zeros_like(x)

    records = []
    n_layers = len(layers)
    for li, (w, b) in enumerate(layers):
        z = a @ w.T + b
        dz = da @ w.T if order >= 1 else None
        ddz = dda @ w.T if order >= 2 else None
        rec = {"a_in": a, "da_in": da, "dda_in": dda}
        if li == n_layers - 1:
            a, da, dda = z, dz, ddz
        else:
            t = np.tanh(z)
            p = 1.0 - t * t
            rec["t"] = t
            rec["p"] = p
            rec["dz"] = dz
            rec["ddz"] = ddz
            a = t
            if order >= 1:
                da = p * dz
            if order >= 2:
                dda = p * ddz - 2.0 * t * p * dz * dz
        records.append(rec)

    outs = [a[:, 0]]
    if order >= 1:
        outs.append(da[:, 0])
    if order >= 2:
        outs.append(dda[:, 0])
    cache = {"records": records, "order": order, "n_layers": n_layers}
    return tuple(outs), cache


def _adjoint_sweep(layers, cache, g_a, g_da, g_dda):
    """Shared reverse recursion; adjoint inputs are (n, 1) arrays or None."""
    order = cache["order"]
    records = cache["records"]
    n_layers = cache["n_layers"]
    grads = [None] * n_layers

    for li in range(n_layers - 1, -1, -1):
        rec = records[li]
        if li == n_layers - 1:
            g_z, g_dz, g_ddz = g_a, g_da, g_dda
        else:
            t, p, dz, ddz = rec["t"], rec["p"], rec["dz"], rec["ddz"]
            g_z = g_a * p
            g_dz = None
            g_ddz = None
            if order >= 1 and g_da is not None:
                g_z = g_z + g_da * (-2.0 * t * p) * dz
                g_dz = g_da * p
            if order >= 2 and g_dda is not None:
                g_z = g_z + g_dda * ((-2.0 * t * p) * ddz - 2.0 * p * (p - 2.0 * t * t) * dz * dz)
                extra = g_dda * (-4.0 * t * p * dz)
                g_dz = extra if g_dz is None else g_dz + extra
                g_ddz = g_dda * p
        w, _ = layers[li]
        gw = g_z.T @ rec["a_in"]
        gb = g_z.sum(axis=0)
        if g_dz is not None:
            gw = gw + g_dz.T @ rec["da_in"]
        if g_ddz is not None:
            gw = gw + g_ddz.T @ rec["dda_in"]
        grads[li] = (gw, gb)
        g_a = g_z @ w
        g_da = g_dz @ w if g_dz is not None else None
        g_dda = g_ddz @ w if g_ddz is not None else None
    return grads


def backprop_jet(layers, cache, u=None, w=None, s=None) -> np.ndarray:
    """Parameter gradient of sum_i u_i*value_i + w_i*d1_i + s_i*d2_i.

    u, w, s are (n,) weight vectors (None = zero). Returns a flat gradient
    matching pack_params layout.
    """
    order = cache["order"]
    n = cache["records"][0]["a_in"].shape[0]

    def col(v):
        if v is None:
            return None
        v = np.asarray(v, dtype=float)
        return v.reshape(n, 1)

    g_a = col(u)
    if g_a is None:
        g_a = np.zeros((n, 1))
    g_da = col(w)
    g_dda = col(s)
    if g_da is None and order >= 1 and g_dda is not None:
        g_da = np.zeros((n, 1))
    if (w is not None and order < 1) or (s is not None and order < 2):
        raise ValueError("tangent weights need a forward pass of matching order")
    grads = _adjoint_sweep(layers, cache, g_a, g_da, g_dda)
    return pack_params(grads)


def per_sample_jacobian(layers, cache, component: int) -> np.ndarray:
    """(n, p) Jacobian of one jet output (0=value, 1=d1, 2=d2) w.r.t. params.

    Materializes per-sample outer products; intended for probes and tests,
    not for large-n training loops (use backprop_jet there).
    """
    order = cache["order"]
    if component > order:
        raise ValueError("component exceeds forward order")
    records = cache["records"]
    n_layers = cache["n_layers"]
    n = records[0]["a_in"].shape[0]
    ones = np.ones((n, 1))
    zeros = np.zeros((n, 1))
    g_a = ones if component == 0 else zeros
    g_da = (ones if component == 1 else zeros) if order >= 1 else None
    g_dda = (ones if component == 2 else zeros) if order >= 2 else None

    parts = [None] * n_layers
    for li in range(n_layers - 1, -1, -1):
        rec = records[li]
        if li == n_layers - 1:
            g_z, g_dz, g_ddz = g_a, g_da, g_dda
        else:
            t, p, dz, ddz = rec["t"], rec["p"], rec["dz"], rec["ddz"]
            g_z = g_a * p
            g_dz = None
            g_ddz = None
            if order >= 1 and g_da is not None:
                g_z = g_z + g_da * (-2.0 * t * p) * dz
                g_dz = g_da * p
            if order >= 2 and g_dda is not None:
                g_z = g_z + g_dda * ((-2.0 * t * p) * ddz - 2.0 * p * (p - 2.0 * t * t) * dz * dz)
                extra = g_dda * (-4.0 * t * p * dz)
                g_dz = extra if g_dz is None else g_dz + extra
                g_ddz = g_dda * p
        w, _ = layers[li]
        jw = np.einsum("no,ni->noi", g_z, rec["a_in"])
        jb = g_z
        if g_dz is not None:
            jw = jw + np.einsum("no,ni->noi", g_dz, rec["da_in"])
        if g_ddz is not None:
            jw = jw + np.einsum("no,ni->noi", g_ddz, rec["dda_in"])
        parts[li] = (jw.reshape(n, -1), jb)
        g_a = g_z @ w
        g_da = g_dz @ w if g_dz is not None else None
        g_dda = g_ddz @ w if g_ddz is not None else None
    return np.concatenate([np.concatenate(pair, axis=1) for pair in parts], axis=1)


def scalar_net_jets(theta, sizes, x, order: int = 0):
    """Evaluate a single-input net (and derivatives) at x of any shape.

    Returns `1 + order` arrays shaped like x: value, then derivatives in x.
    """
    if sizes[0] != 1:
        raise ValueError("scalar_net_jets is for single-input networks")
    x = np.asarray(x, dtype=float)
    flat = x.reshape(-1, 1)
    direction = np.ones_like(flat) if order >= 1 else None
    outs, _ = forward_jet(unpack_params(theta, sizes), flat, direction, order=order)
    return tuple(o.reshape(x.shape) for o in outs)


def scalar_net_value(theta, sizes, x) -> np.ndarray:
    return scalar_net_jets(theta, sizes, x, order=0)[0]
