"""Parametric velocity families v(y, x) with exact derivatives.

Basis families are linear in their coefficients over fixed feature maps;
MLP families wrap the jet machinery in `nets`. Every family exposes the
velocity, its y- and x-partials, per-point parameter Jacobians, and a
weighted parameter-gradient used by the optimizer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import nets

BASIS_FAMILIES = ("b-lin", "b-quad", "b-lin-exp", "b-quad-exp")
MLP_FAMILIES = ("v-anm", "v-lsnm", "v-nn")
FAMILIES = BASIS_FAMILIES + MLP_FAMILIES

HIDDEN = 64
DEFAULT_ARCHS = {
    "v-anm": (1, HIDDEN, HIDDEN, 1),
    "v-nn": (2, HIDDEN, HIDDEN, 1),
    "v-lsnm": (1, HIDDEN, HIDDEN, 1),  # shape of each of the two subnets
}


def basis_features(family: str, y: np.ndarray, x: np.ndarray):
    """Feature matrix and its exact y- and x-derivatives, each (n, K)."""
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    one = np.ones_like(x)
    zero = np.zeros_like(x)
    cols = [one, x, y]
    dy = [zero, zero, one]
    dx = [zero, one, zero]
    if family.startswith("b-quad"):
        cols += [x * x, y * y, x * y]
        dy += [zero, 2.0 * y, x]
        dx += [2.0 * x, zero, y]
    if family.endswith("-exp"):
        ex = np.exp(-x * x)
        ey = np.exp(-y * y)
        exy = np.exp(-(x * x + y * y))
        cols += [ex, ey, exy]
        dy += [zero, -2.0 * y * ey, -2.0 * y * exy]
        dx += [-2.0 * x * ex, zero, -2.0 * x * exy]
    return np.column_stack(cols), np.column_stack(dy), np.column_stack(dx)


def n_params(family: str, arch=None) -> int:
    if family in BASIS_FAMILIES:
        k = 3 if family.startswith("b-lin") else 6
        return k + (3 if family.endswith("-exp") else 0)
    arch = tuple(arch or DEFAULT_ARCHS[family])
    count = nets.layer_sizes_params(arch)
    return 2 * count if family == "v-lsnm" else count


@dataclass(frozen=True)
class VelocityModel:
    family: str
    theta: np.ndarray
    arch: Optional[tuple] = None
    seed: Optional[int] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown velocity family {self.family!r}")
        arch = self.arch
        if self.family in MLP_FAMILIES:
            arch = tuple(arch or DEFAULT_ARCHS[self.family])
        elif arch is not None:
            arch = tuple(arch)
        object.__setattr__(self, "arch", arch)
        theta = np.asarray(self.theta, dtype=float)
        object.__setattr__(self, "theta", theta)
        expected = n_params(self.family, arch)
        if theta.size != expected:
            raise ValueError(
                f"{self.family} expects {expected} parameters, got {theta.size}"
            )

    def with_theta(self, theta) -> "VelocityModel":
        return VelocityModel(self.family, theta, self.arch, self.seed)


def init_params(family: str, arch=None, seed: int = 0) -> np.ndarray:
    """Zero coefficients for basis families; N(0, 1/fan_in) weights for MLPs."""
    if family in BASIS_FAMILIES:
        return np.zeros(n_params(family))
    arch = tuple(arch or DEFAULT_ARCHS[family])
    rng = np.random.default_rng(seed)
    if family == "v-lsnm":
        return np.concatenate([nets.init_params(arch, rng), nets.init_params(arch, rng)])
    return nets.init_params(arch, rng)


def make_model(family: str, arch=None, seed: int = 0) -> VelocityModel:
    return VelocityModel(family, init_params(family, arch, seed), arch, seed)


def lsnm_compose(m, mdot, hdot, y):
    """Location-scale velocity from level/slope values: v = m' + h'*(y - m)."""
    v = mdot + hdot * (np.asarray(y, dtype=float) - m)
    return v, np.broadcast_to(hdot, np.shape(v)).astype(float, copy=True)


class _Evaluation:
    """Velocity values at a batch of points plus a weighted parameter gradient.

    grad(w_v, w_vy, w_vx) returns d/dtheta of sum_i of the weighted
    combination of v, dv/dy, dv/dx at the evaluation points.
    """

    def __init__(self, v, vy, vx, grad_fn, jac_fn):
        self.v = v
        self.vy = vy
        self.vx = vx
        self._grad_fn = grad_fn
        self._jac_fn = jac_fn

    def grad(self, w_v=None, w_vy=None, w_vx=None) -> np.ndarray:
        return self._grad_fn(w_v, w_vy, w_vx)

    def jacobians(self):
        """Per-point Jacobians (J_v, J_vy), each (n, p)."""
        return self._jac_fn()


def _as_batch(y, x):
    y = np.atleast_1d(np.asarray(y, dtype=float))
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if y.shape != x.shape or y.ndim != 1:
        raise ValueError("y and x must be equal-length 1-D arrays")
    return y, x


def evaluate(model: VelocityModel, y, x) -> _Evaluation:
    y, x = _as_batch(y, x)
    n = y.size
    fam = model.family

    if fam in BASIS_FAMILIES:
        phi, phi_y, phi_x = basis_features(fam, y, x)
        th = model.theta

        def grad_fn(w_v, w_vy, w_vx):
            g = np.zeros(th.size)
            if w_v is not None:
                g += phi.T @ w_v
            if w_vy is not None:
                g += phi_y.T @ w_vy
            if w_vx is not None:
                g += phi_x.T @ w_vx
            return g

        return _Evaluation(phi @ th, phi_y @ th, phi_x @ th, grad_fn, lambda: (phi, phi_y))

    arch = model.arch
    if fam == "v-anm":
        layers = nets.unpack_params(model.theta, arch)
        xin = x.reshape(n, 1)
        (v, vx), cache = nets.forward_jet(layers, xin, np.ones_like(xin), order=1)
        zeros = np.zeros(n)

        def grad_fn(w_v, w_vy, w_vx):
            # dv/dy is identically 0; its parameter gradient vanishes.
            if w_v is None and w_vx is None:
                return np.zeros(model.theta.size)
            return nets.backprop_jet(layers, cache, u=w_v, w=w_vx)

        def jac_fn():
            j_v = nets.per_sample_jacobian(layers, cache, 0)
            return j_v, np.zeros_like(j_v)

        return _Evaluation(v, zeros, vx, grad_fn, jac_fn)

    if fam == "v-nn":
        layers = nets.unpack_params(model.theta, arch)
        xin = np.column_stack([x, y])
        dir_y = np.zeros_like(xin)
        dir_y[:, 1] = 1.0
        dir_x = np.zeros_like(xin)
        dir_x[:, 0] = 1.0
        (v, vy), cache_y = nets.forward_jet(layers, xin, dir_y, order=1)
        (_, vx), cache_x = nets.forward_jet(layers, xin, dir_x, order=1)

        def grad_fn(w_v, w_vy, w_vx):
            g = np.zeros(model.theta.size)
            if w_v is not None or w_vy is not None:
                g += nets.backprop_jet(layers, cache_y, u=w_v, w=w_vy)
            if w_vx is not None:
                g += nets.backprop_jet(layers, cache_x, u=None, w=w_vx)
            return g

        def jac_fn():
            return (
                nets.per_sample_jacobian(layers, cache_y, 0),
                nets.per_sample_jacobian(layers, cache_y, 1),
            )

        return _Evaluation(v, vy, vx, grad_fn, jac_fn)

    # v-lsnm: theta = (theta_m, theta_h); v = m' + h'*(y - m).
    half = model.theta.size // 2
    layers_m = nets.unpack_params(model.theta[:half], arch)
    layers_h = nets.unpack_params(model.theta[half:], arch)
    xin = x.reshape(n, 1)
    ones = np.ones_like(xin)
    (m, md, mdd), cache_m = nets.forward_jet(layers_m, xin, ones, order=2)
    (_h, hd, hdd), cache_h = nets.forward_jet(layers_h, xin, ones, order=2)
    resid = y - m
    v = md + hd * resid
    vy = hd.copy()
    vx = mdd + hdd * resid - hd * md

    def grad_fn(w_v, w_vy, w_vx):
        w_v0 = np.zeros(n) if w_v is None else np.asarray(w_v, dtype=float)
        w_vy0 = np.zeros(n) if w_vy is None else np.asarray(w_vy, dtype=float)
        w_vx0 = np.zeros(n) if w_vx is None else np.asarray(w_vx, dtype=float)
        u_m = -w_v0 * hd - w_vx0 * hdd
        w_m = w_v0 - w_vx0 * hd
        s_m = w_vx0
        w_h = w_v0 * resid + w_vy0 - w_vx0 * md
        s_h = w_vx0 * resid
        g_m = nets.backprop_jet(layers_m, cache_m, u=u_m, w=w_m, s=s_m)
        g_h = nets.backprop_jet(layers_h, cache_h, u=None, w=w_h, s=s_h)
        return np.concatenate([g_m, g_h])

    def jac_fn():
        j_m = nets.per_sample_jacobian(layers_m, cache_m, 0)
        j_md = nets.per_sample_jacobian(layers_m, cache_m, 1)
        j_hd = nets.per_sample_jacobian(layers_h, cache_h, 1)
        j_v = np.concatenate([j_md - hd[:, None] * j_m, resid[:, None] * j_hd], axis=1)
        j_vy = np.concatenate([np.zeros_like(j_m), j_hd], axis=1)
        return j_v, j_vy

    return _Evaluation(v, vy, vx, grad_fn, jac_fn)


def eval_velocity(model: VelocityModel, y, x):
    """Velocity and its y-partial at (y, x); scalars in, scalars out."""
    scalar = np.isscalar(y) or (np.ndim(y) == 0 and np.ndim(x) == 0)
    ev = evaluate(model, y, x)
    if scalar:
        return float(ev.v[0]), float(ev.vy[0])
    return ev.v, ev.vy


def eval_velocity_dx(model: VelocityModel, y, x):
    scalar = np.isscalar(y) or (np.ndim(y) == 0 and np.ndim(x) == 0)
    ev = evaluate(model, y, x)
    return float(ev.vx[0]) if scalar else ev.vx


def eval_velocity_grad(model: VelocityModel, y, x):
    """Per-point parameter Jacobians of v and dv/dy, each (n, p)."""
    scalar = np.isscalar(y) or (np.ndim(y) == 0 and np.ndim(x) == 0)
    j_v, j_vy = evaluate(model, y, x).jacobians()
    if scalar:
        return j_v[0], j_vy[0]
    return j_v, j_vy


def velocity_fn(model: VelocityModel):
    """Scalar callable v(y, x) for the integrators."""

    def v(y, x):
        ev = evaluate(model, [float(y)], [float(x)])
        return float(ev.v[0])

    return v


def save_checkpoint(model: VelocityModel, path) -> Path:
    path = Path(path)
    payload = {
        "family": model.family,
        "arch": list(model.arch) if model.arch is not None else None,
        "theta": [float(t) for t in model.theta],
        "seed": model.seed,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)
        fh.write("\n")
    return path


def load_checkpoint(path) -> VelocityModel:
    with open(path, "r") as fh:
        payload = json.load(fh)
    arch = payload.get("arch")
    return VelocityModel(
        family=payload["family"],
        theta=np.asarray(payload["theta"], dtype=float),
        arch=tuple(arch) if arch else None,
        seed=payload.get("seed"),
    )
