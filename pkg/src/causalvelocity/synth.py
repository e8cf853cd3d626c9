"""Synthetic benchmark generation: random monotone noise maps, four SCM
families with randomly drawn network mechanisms, and Gaussian-noise variants
that come with closed-form mechanism oracles.

Every dataset is a pure function of (master_seed, dataset_index): parameters
and noise are drawn from a generator seeded with that tuple in a fixed order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.special import expit, ndtri

from . import nets
from .dataset import DataPair, Direction
from .errors import IntegrationFailure, QuadratureFailure
from .scores import MechanismOracle

TMI_SIZES = (1, 64, 64, 64, 1)
TMI_PARAM_SD = 0.3

FAMILIES = ("velocity", "sigmoid", "anm", "lsnm", "anm-gauss", "lsnm-gauss")
# (sigma_theta, sigma_y) per family
FAMILY_DEFAULTS = {
    "velocity": (1.0, 1.0),
    "sigmoid": (0.2, 3.0),
    "anm": (0.2, 0.2),
    "lsnm": (0.2, 0.2),
    "anm-gauss": (0.2, 0.2),
    "lsnm-gauss": (0.2, 0.2),
}
NET_SIZES = {
    "sigmoid": {"a": (1, 64, 64, 1), "b": (1, 64, 64, 1), "c": (1, 64, 64, 1), "d": (1, 64, 64, 1)},
    "anm": {"m": (1, 64, 64, 64, 1)},
    "lsnm": {"m": (1, 64, 64, 1), "h": (1, 64, 64, 1)},
    "anm-gauss": {"m": (1, 64, 64, 64, 1)},
    "lsnm-gauss": {"m": (1, 64, 64, 1), "h": (1, 64, 64, 1)},
}


def _softplus(z):
    return np.logaddexp(0.0, z)


@dataclass(frozen=True)
class TmiMap:
    """Strictly increasing map T(x) = integral_0^x softplus(f(u)) du."""

    theta: np.ndarray
    sizes: tuple = TMI_SIZES
    tol: float = 1e-6
    base_intervals: int = 2048
    max_doublings: int = 4

    def integrand(self, u):
        return _softplus(nets.scalar_net_value(self.theta, self.sizes, u))

    def __call__(self, x):
        scalar = np.isscalar(x) or np.ndim(x) == 0
        xq = np.atleast_1d(np.asarray(x, dtype=float)).ravel()
        # anchor 0 so T(0) = 0 exactly regardless of grid placement
        query = np.concatenate([xq, [0.0]])
        lo = min(0.0, float(query.min()))
        hi = max(0.0, float(query.max()))
        if hi == lo:
            out = np.zeros_like(xq)
            return float(out[0]) if scalar else out.reshape(np.shape(x))
        g_query = self.integrand(query)
        prev = self._trapezoid(lo, hi, self.base_intervals, query, g_query)
        n_int = self.base_intervals
        for _ in range(self.max_doublings):
            n_int *= 2
            cur = self._trapezoid(lo, hi, n_int, query, g_query)
            err = np.max(np.abs(cur - prev)) / 3.0
            if err <= self.tol:
                refined = cur + (cur - prev) / 3.0  # Richardson extrapolation
                vals = refined[:-1] - refined[-1]
                return float(vals[0]) if scalar else vals.reshape(np.shape(x))
            prev = cur
        raise QuadratureFailure(
            f"trapezoid refinement did not reach {self.tol} within "
            f"{n_int} intervals on [{lo}, {hi}]"
        )

    def _trapezoid(self, lo, hi, n_intervals, query, g_query):
        nodes = np.linspace(lo, hi, n_intervals + 1)
        g = self.integrand(nodes)
        h = (hi - lo) / n_intervals
        csum = np.concatenate([[0.0], np.cumsum(0.5 * h * (g[1:] + g[:-1]))])
        k = np.clip(np.searchsorted(nodes, query, side="right") - 1, 0, n_intervals - 1)
        return csum[k] + (query - nodes[k]) * 0.5 * (g[k] + g_query)


def sample_tmi(seed, tol: float = 1e-6) -> TmiMap:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    theta = nets.init_params_iid(TMI_SIZES, rng, TMI_PARAM_SD)
    return TmiMap(theta=theta, tol=tol)


@dataclass(frozen=True)
class BenchmarkSpec:
    family: str
    n_datasets: int = 100
    n: int = 5000
    sigma_theta: Optional[float] = None
    sigma_y: Optional[float] = None
    master_seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown benchmark family {self.family!r}")
        if self.n < 2 or self.n_datasets < 1:
            raise ValueError("need n >= 2 and n_datasets >= 1")
        s_t, s_y = FAMILY_DEFAULTS[self.family]
        object.__setattr__(self, "sigma_theta", float(self.sigma_theta or s_t))
        object.__setattr__(self, "sigma_y", float(self.sigma_y or s_y))
        if self.sigma_theta <= 0 or self.sigma_y <= 0:
            raise ValueError("sigma_theta and sigma_y must be positive")

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "n_datasets": self.n_datasets,
            "n": self.n,
            "sigma_theta": self.sigma_theta,
            "sigma_y": self.sigma_y,
            "master_seed": self.master_seed,
        }


def periodic_basis_velocity(theta):
    """The six-feature periodic velocity used by the 'velocity' family."""
    theta = np.asarray(theta, dtype=float)

    def v(y, u):
        return (
            theta[0]
            + theta[1] * np.sin(u)
            + theta[2] * np.sin(y)
            + theta[3] * np.cos(u)
            + theta[4] * np.cos(y)
            + theta[5] * np.sin(u + y)
        )

    return v


def _flow_from_origin(v, eps: np.ndarray, targets: np.ndarray,
                      rtol: float = 1e-9, atol: float = 1e-9) -> np.ndarray:
    """Transport initial states eps_i from u=0 to u=targets_i under dy/du = v.

    All trajectories share the field, so the whole batch integrates as one
    vector ODE with dense output; each coordinate is read off at its own
    endpoint.
    """
    out = np.array(eps, dtype=float, copy=True)
    for positive in (True, False):
        mask = targets > 0 if positive else targets < 0
        if not mask.any():
            continue
        idx = np.flatnonzero(mask)
        t_far = float(targets[idx].max() if positive else targets[idx].min())
        sol = solve_ivp(
            lambda u, y: v(y, u),
            (0.0, t_far),
            eps[idx],
            method="RK45",
            rtol=rtol,
            atol=atol,
            dense_output=True,
        )
        if not sol.success:
            raise IntegrationFailure(idx.tolist(), [sol.message])
        t_local = targets[idx]
        local = np.arange(idx.size)
        for start in range(0, idx.size, 256):
            sel = local[start : start + 256]
            block = sol.sol(t_local[sel])  # (n_states, n_times_in_chunk)
            out[idx[sel]] = block[sel, np.arange(sel.size)]
    return out


def _draw_nets(family: str, rng, sigma_theta: float) -> dict:
    drawn = {}
    for name, sizes in NET_SIZES.get(family, {}).items():
        drawn[name] = (nets.init_params_iid(sizes, rng, sigma_theta), sizes)
    return drawn


def generate_internals(spec: BenchmarkSpec, index: int, *, zero_mechanism: bool = False,
                       zero_noise: bool = False, zero_nets: tuple = ()) -> dict:
    """Generate one dataset plus its generating pieces (for tests and oracles).

    Draw order per (master_seed, index): TMI maps (non-Gaussian families),
    mechanism parameters, xi_x, xi_y.
    """
    if not (0 <= index < spec.n_datasets):
        raise ValueError(f"dataset index {index} outside 0..{spec.n_datasets - 1}")
    rng = np.random.default_rng([spec.master_seed, index])
    gaussian_noise = spec.family.endswith("-gauss")

    tmi_x = tmi_y = None
    if not gaussian_noise:
        tmi_x = TmiMap(theta=nets.init_params_iid(TMI_SIZES, rng, TMI_PARAM_SD))
        tmi_y = TmiMap(theta=nets.init_params_iid(TMI_SIZES, rng, TMI_PARAM_SD))

    theta_v = None
    drawn = {}
    if spec.family == "velocity":
        theta_v = rng.normal(0.0, spec.sigma_theta, size=6)
        if zero_mechanism:
            theta_v = np.zeros(6)
    else:
        drawn = _draw_nets(spec.family, rng, spec.sigma_theta)
        if zero_mechanism:
            drawn = {k: (np.zeros_like(th), sz) for k, (th, sz) in drawn.items()}
        for name in zero_nets:
            th, sz = drawn[name]
            drawn[name] = (np.zeros_like(th), sz)

    xi_x = rng.standard_normal(spec.n)
    xi_y = rng.standard_normal(spec.n)

    if gaussian_noise:
        x = xi_x
        eps = spec.sigma_y * xi_y
    else:
        x = tmi_x(xi_x)
        eps = spec.sigma_y * tmi_y(xi_y)
    if zero_noise:
        eps = np.zeros_like(eps)

    fn = {name: (lambda th=th, sz=sz: (lambda u: nets.scalar_net_value(th, sz, u)))()
          for name, (th, sz) in drawn.items()}

    true_velocity = None
    if spec.family == "velocity":
        v = periodic_basis_velocity(theta_v)
        y = _flow_from_origin(v, eps, x)
        true_velocity = v
    elif spec.family == "sigmoid":
        # clip the logistic argument so the Gaussian quantile stays finite
        z = np.clip(fn["a"](x) + np.exp(-fn["b"](x) ** 2) * eps, -36.0, 36.0)
        y = fn["c"](x) + np.exp(-fn["d"](x) ** 2) * ndtri(expit(z))
    elif spec.family in ("anm", "anm-gauss"):
        y = fn["m"](x) + eps
    elif spec.family in ("lsnm", "lsnm-gauss"):
        y = fn["m"](x) + (np.exp(-fn["h"](x) ** 2) + 0.2) * eps
    else:  # pragma: no cover
        raise AssertionError(spec.family)

    pair = DataPair(
        xs=x, ys=y, truth=Direction.XtoY, weight=1.0,
        id=f"{spec.family}-{index:04d}", seed=index,
    )
    return {
        "pair": pair, "xi_x": xi_x, "xi_y": xi_y, "eps": eps,
        "tmi_x": tmi_x, "tmi_y": tmi_y, "theta_v": theta_v,
        "nets": drawn, "true_velocity": true_velocity,
    }


def generate_dataset(spec: BenchmarkSpec, index: int, **hooks) -> DataPair:
    return generate_internals(spec, index, **hooks)["pair"]


def _anm_oracle(theta_m, sizes_m, sigma_y: float) -> MechanismOracle:
    def m_jets(x, order):
        return nets.scalar_net_jets(theta_m, sizes_m, x, order)

    def ones_like_pair(x, y):
        return np.ones(np.broadcast_shapes(np.shape(x), np.shape(y)))

    def zeros_like_pair(x, y):
        return np.zeros(np.broadcast_shapes(np.shape(x), np.shape(y)))

    def velocity(y, x):
        _, md = m_jets(x, 1)
        v = np.broadcast_to(md, np.broadcast_shapes(np.shape(y), np.shape(md))).copy()
        return v, np.zeros_like(v)

    return MechanismOracle(
        noise_sd=sigma_y,
        finv=lambda x, y: y - m_jets(x, 0)[0],
        dfinv_dx=lambda x, y: np.broadcast_to(-m_jets(x, 1)[1], np.broadcast_shapes(np.shape(x), np.shape(y))).copy(),
        dfinv_dy=ones_like_pair,
        dfinv_dxy=zeros_like_pair,
        dfinv_dyy=zeros_like_pair,
        velocity=velocity,
    )


def _lsnm_oracle(theta_m, sizes_m, theta_h, sizes_h, sigma_y: float) -> MechanismOracle:
    def pieces(x):
        m, md = nets.scalar_net_jets(theta_m, sizes_m, x, 1)
        h, hd = nets.scalar_net_jets(theta_h, sizes_h, x, 1)
        s = np.exp(-h * h) + 0.2
        sd = -2.0 * h * hd * np.exp(-h * h)
        return m, md, s, sd

    def finv(x, y):
        m, _, s, _ = pieces(x)
        return (y - m) / s

    def dfinv_dx(x, y):
        m, md, s, sd = pieces(x)
        return -md / s - (y - m) * sd / (s * s)

    def dfinv_dy(x, y):
        _, _, s, _ = pieces(x)
        return np.broadcast_to(1.0 / s, np.broadcast_shapes(np.shape(x), np.shape(y))).copy()

    def dfinv_dxy(x, y):
        _, _, s, sd = pieces(x)
        return np.broadcast_to(-sd / (s * s), np.broadcast_shapes(np.shape(x), np.shape(y))).copy()

    def dfinv_dyy(x, y):
        return np.zeros(np.broadcast_shapes(np.shape(x), np.shape(y)))

    def velocity(y, x):
        m, md, s, sd = pieces(x)
        ratio = sd / s
        v = md + ratio * (y - m)
        return v, np.broadcast_to(ratio, np.shape(v)).copy()

    return MechanismOracle(
        noise_sd=sigma_y, finv=finv, dfinv_dx=dfinv_dx, dfinv_dy=dfinv_dy,
        dfinv_dxy=dfinv_dxy, dfinv_dyy=dfinv_dyy, velocity=velocity,
    )


def linear_mechanism_oracle(slope: float, sigma_y: float) -> MechanismOracle:
    """Oracle for Y = slope * X + eps; the jointly Gaussian linear case."""

    def velocity(y, x):
        shape = np.broadcast_shapes(np.shape(y), np.shape(x))
        return np.full(shape, float(slope)), np.zeros(shape)

    return MechanismOracle(
        noise_sd=sigma_y,
        finv=lambda x, y: y - slope * np.asarray(x, dtype=float),
        dfinv_dx=lambda x, y: np.full(np.broadcast_shapes(np.shape(x), np.shape(y)), -float(slope)),
        dfinv_dy=lambda x, y: np.ones(np.broadcast_shapes(np.shape(x), np.shape(y))),
        dfinv_dxy=lambda x, y: np.zeros(np.broadcast_shapes(np.shape(x), np.shape(y))),
        dfinv_dyy=lambda x, y: np.zeros(np.broadcast_shapes(np.shape(x), np.shape(y))),
        velocity=velocity,
    )


def generate_gaussian_oracle(spec: BenchmarkSpec, index: int, **hooks):
    """Dataset plus closed-form mechanism oracle (anm-gauss / lsnm-gauss only)."""
    if spec.family not in ("anm-gauss", "lsnm-gauss"):
        raise ValueError("oracles exist only for the Gaussian-noise families")
    internals = generate_internals(spec, index, **hooks)
    drawn = internals["nets"]
    if spec.family == "anm-gauss":
        theta_m, sizes_m = drawn["m"]
        oracle = _anm_oracle(theta_m, sizes_m, spec.sigma_y)
    else:
        theta_m, sizes_m = drawn["m"]
        theta_h, sizes_h = drawn["h"]
        oracle = _lsnm_oracle(theta_m, sizes_m, theta_h, sizes_h, spec.sigma_y)
    return internals["pair"], oracle
