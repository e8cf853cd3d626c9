"""Score-function estimation: kernelized Stein solve, Laplace-KDE derivative,
and the analytic oracles available for Gaussian-noise synthetic mechanisms.

Conventions pinned here (and tested):
  - Gaussian kernel k(a, b) = exp(-||a-b||^2 / (2 sigma^2)); the median
    heuristic value is used directly as sigma.
  - KDE uses the Laplace (exponential) product kernel with per-dimension
    Silverman bandwidths, leave-self-in evaluation, and the smoothed score
    grad(p) / (p + eps) with eps = n^-2 by default.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.spatial.distance import pdist

from .dataset import DataPair
from .errors import AllPointsIdentical, NonInvertibleMechanism, SingularSystem


class ScoreSource(str, enum.Enum):
    STEIN = "STEIN"
    KDE = "KDE"
    ANALYTIC = "ANALYTIC"


@dataclass(frozen=True)
class ScoreField:
    """Marginal and joint score values at the sample points of one pair."""

    xs: np.ndarray
    ys: np.ndarray
    sx_marg: np.ndarray
    sx_joint: np.ndarray
    sy_joint: np.ndarray
    source: ScoreSource

    def __post_init__(self):
        arrays = {}
        for name in ("xs", "ys", "sx_marg", "sx_joint", "sy_joint"):
            v = np.asarray(getattr(self, name), dtype=float)
            arrays[name] = v
            object.__setattr__(self, name, v)
        n = arrays["xs"].size
        for name, v in arrays.items():
            if v.shape != (n,):
                raise ValueError(f"{name} must be a length-{n} vector")
            if not np.all(np.isfinite(v)):
                raise ValueError(f"{name} contains non-finite entries")

    @property
    def n(self) -> int:
        return self.xs.size

    def take(self, indices) -> "ScoreField":
        return ScoreField(
            self.xs[indices], self.ys[indices], self.sx_marg[indices],
            self.sx_joint[indices], self.sy_joint[indices], self.source,
        )


class Bandwidth(str, enum.Enum):
    MedianHeuristic = "median"
    Silverman = "silverman"


@dataclass(frozen=True)
class KernelConfig:
    family: str = "gaussian"  # "gaussian" | "laplace"
    lengthscale: Union[float, Bandwidth] = Bandwidth.MedianHeuristic
    regularization: Optional[float] = None  # None -> estimator default

    def __post_init__(self):
        if isinstance(self.lengthscale, (int, float)) and self.lengthscale <= 0:
            raise ValueError("explicit lengthscale must be positive")
        if self.regularization is not None and self.regularization <= 0:
            raise ValueError("regularization must be positive")


def median_heuristic(points) -> float:
    """Median pairwise Euclidean distance, used directly as the lengthscale."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.shape[0] < 2:
        raise ValueError("need at least two points")
    med = float(np.median(pdist(pts)))
    if med <= 0.0:
        raise AllPointsIdentical("median pairwise distance is zero")
    return med


def _stein_solve(z: np.ndarray, sigma: float, lam: float) -> np.ndarray:
    """Stein gradient estimate at the sample points: -(K + lam I)^-1 B."""
    n, d = z.shape
    sq = np.sum(z * z, axis=1)
    dist2 = sq[:, None] + sq[None, :] - 2.0 * (z @ z.T)
    np.maximum(dist2, 0.0, out=dist2)
    k = np.exp(-dist2 / (2.0 * sigma * sigma))
    # B[i, d] = sum_j dk(z_i, z_j)/dz_{j,d} = sum_j k_ij (z_i - z_j)_d / sigma^2
    b = (k.sum(axis=1)[:, None] * z - k @ z) / (sigma * sigma)
    for attempt, reg in enumerate((lam, 10.0 * lam)):
        try:
            factor = cho_factor(k + reg * np.eye(n), lower=True)
            return -cho_solve(factor, b)
        except np.linalg.LinAlgError:
            if attempt == 1:
                raise SingularSystem(
                    f"kernel system not SPD even at regularization {reg}"
                )
    raise AssertionError("unreachable")


def stein_scores(pair: DataPair, config: KernelConfig = KernelConfig()) -> ScoreField:
    """Kernelized Stein estimates of the marginal (cause) and joint scores."""
    if config.family != "gaussian":
        raise ValueError("the Stein estimator uses the Gaussian kernel")
    lam = 0.1 if config.regularization is None else config.regularization
    z = np.column_stack([pair.xs, pair.ys])

    def lengthscale(points):
        if isinstance(config.lengthscale, (int, float)):
            return float(config.lengthscale)
        return median_heuristic(points)

    joint = _stein_solve(z, lengthscale(z), lam)
    marg = _stein_solve(pair.xs[:, None], lengthscale(pair.xs[:, None]), lam)
    return ScoreField(
        xs=pair.xs, ys=pair.ys, sx_marg=marg[:, 0],
        sx_joint=joint[:, 0], sy_joint=joint[:, 1], source=ScoreSource.STEIN,
    )


def silverman_bandwidth(v: np.ndarray) -> float:
    """0.9 * min(sd, IQR/1.34) * n^(-1/5)."""
    v = np.asarray(v, dtype=float)
    sd = float(np.std(v))
    q75, q25 = np.percentile(v, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34)
    if spread <= 0.0:
        raise AllPointsIdentical("zero spread; Silverman bandwidth undefined")
    return 0.9 * spread * v.size ** (-0.2)


def kde_score_at(z_train: np.ndarray, z_eval: np.ndarray, h, eps: float,
                 block: int = 512) -> np.ndarray:
    """Smoothed score grad(p)/(p + eps) of a Laplace-product KDE.

    z_train: (n, d) kernel centers; z_eval: (m, d) evaluation points (the
    training points themselves for leave-self-in estimation); h: per-dimension
    bandwidths. The kernel gradient at its own center is taken as 0 (the
    subgradient midpoint of |u| at u = 0).
    """
    z_train = np.atleast_2d(np.asarray(z_train, dtype=float))
    z_eval = np.atleast_2d(np.asarray(z_eval, dtype=float))
    n, d = z_train.shape
    h = np.broadcast_to(np.asarray(h, dtype=float), (d,))
    norm = float(np.prod(2.0 * h)) * n
    m = z_eval.shape[0]
    out = np.empty((m, d))
    for start in range(0, m, block):
        stop = min(start + block, m)
        diff = z_eval[start:stop, None, :] - z_train[None, :, :]  # (b, n, d)
        kern = np.exp(-np.abs(diff) / h)
        prod = kern.prod(axis=2)  # (b, n)
        dens = prod.sum(axis=1) / norm
        slope = -np.sign(diff) / h
        grad = np.einsum("bn,bnd->bd", prod, slope) / norm
        out[start:stop] = grad / (dens + eps)[:, None]
    return out


def _kde_score(z: np.ndarray, eps: float):
    h = np.array([silverman_bandwidth(z[:, j]) for j in range(z.shape[1])])
    return kde_score_at(z, z, h, eps)


def kde_scores(pair: DataPair, config: KernelConfig = KernelConfig(family="laplace")) -> ScoreField:
    """Score of a Laplace-kernel KDE with additive-eps smoothing."""
    if config.family != "laplace":
        raise ValueError("the KDE estimator uses the Laplace kernel")
    n = pair.n
    eps = float(n) ** -2 if config.regularization is None else config.regularization
    z = np.column_stack([pair.xs, pair.ys])
    joint = _kde_score(z, eps)
    marg = _kde_score(pair.xs[:, None], eps)
    return ScoreField(
        xs=pair.xs, ys=pair.ys, sx_marg=marg[:, 0],
        sx_joint=joint[:, 0], sy_joint=joint[:, 1], source=ScoreSource.KDE,
    )


@dataclass(frozen=True)
class MechanismOracle:
    """Closed-form pieces of an invertible Gaussian-noise mechanism.

    All callables broadcast over numpy arrays: finv(x, y) is the noise
    recovered from (x, y); the dfinv_* fields are its partials. velocity
    returns (v, dv/dy) of the true causal velocity.
    """

    noise_sd: float
    finv: Optional[Callable] = None
    dfinv_dx: Optional[Callable] = None
    dfinv_dy: Optional[Callable] = None
    dfinv_dxy: Optional[Callable] = None
    dfinv_dyy: Optional[Callable] = None
    velocity: Optional[Callable] = None

    def conditional_density(self, x, y) -> np.ndarray:
        """p(y | x) via the change of variables through the inverse mechanism."""
        self._require_inverse()
        eps = self.finv(x, y)
        sd = self.noise_sd
        base = np.exp(-0.5 * (eps / sd) ** 2) / (np.sqrt(2.0 * np.pi) * sd)
        return base * np.abs(self.dfinv_dy(x, y))

    def _require_inverse(self):
        needed = (self.finv, self.dfinv_dx, self.dfinv_dy, self.dfinv_dxy, self.dfinv_dyy)
        if any(f is None for f in needed):
            raise NonInvertibleMechanism(
                "mechanism inverse (or one of its partials) is unavailable"
            )


def analytic_joint_scores(oracle: MechanismOracle, x, y):
    """Joint score components (s_x, s_y) at arbitrary points, X ~ N(0,1)."""
    oracle._require_inverse()
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    var = oracle.noise_sd**2
    finv = oracle.finv(x, y)
    d_y = oracle.dfinv_dy(x, y)
    s_x = -x - (finv / var) * oracle.dfinv_dx(x, y) + oracle.dfinv_dxy(x, y) / d_y
    s_y = -(finv / var) * d_y + oracle.dfinv_dyy(x, y) / d_y
    return s_x, s_y


def analytic_gaussian_scores(pair: DataPair, oracle: MechanismOracle) -> ScoreField:
    """Exact scores for a pair generated as X ~ N(0,1), Y = f(X, eps)."""
    s_x, s_y = analytic_joint_scores(oracle, pair.xs, pair.ys)
    return ScoreField(
        xs=pair.xs, ys=pair.ys, sx_marg=-pair.xs,
        sx_joint=s_x, sy_joint=s_y, source=ScoreSource.ANALYTIC,
    )


def effect_marginal_score(
    oracle: MechanismOracle,
    ys,
    n_draws: int = 100_000,
    fd_step: float = 1e-3,
    seed: int = 0,
    chunk: int = 10_000,
) -> np.ndarray:
    """Score of the effect marginal: Monte Carlo p(y) + central log-difference.

    p(y) is averaged over fresh draws x ~ N(0,1); common draws across the
    two offsets make the finite difference of log p stable.
    """
    ys = np.asarray(ys, dtype=float)
    rng = np.random.default_rng(seed)
    draws = rng.standard_normal(n_draws)
    acc = np.zeros((2, ys.size))
    offsets = np.array([fd_step, -fd_step])
    y_eval = ys[None, :, None] + offsets[:, None, None]  # (2, n_pts, 1)
    for start in range(0, n_draws, chunk):
        xs = draws[start : start + chunk][None, None, :]
        acc += oracle.conditional_density(xs, y_eval).sum(axis=2)
    p_plus, p_minus = acc / n_draws
    return (np.log(p_plus) - np.log(p_minus)) / (2.0 * fd_step)


def scaled_field(field: ScoreField, sd_x: float, sd_y: float,
                 mean_x: float = 0.0, mean_y: float = 0.0) -> ScoreField:
    """Score field of the affinely standardized variables.

    If x' = (x - mean_x)/sd_x and y' likewise, scores transform as
    s'_{x'} = sd_x * s_x (and correspondingly in y).
    """
    return ScoreField(
        xs=(field.xs - mean_x) / sd_x,
        ys=(field.ys - mean_y) / sd_y,
        sx_marg=field.sx_marg * sd_x,
        sx_joint=field.sx_joint * sd_x,
        sy_joint=field.sy_joint * sd_y,
        source=field.source,
    )


def reverse_field(field: ScoreField, cause_marginal) -> ScoreField:
    """View the joint scores with the variable roles exchanged.

    `cause_marginal` supplies the marginal score of the new cause (the old
    effect) at its sample points.
    """
    return ScoreField(
        xs=field.ys, ys=field.xs, sx_marg=cause_marginal,
        sx_joint=field.sy_joint, sy_joint=field.sx_joint, source=field.source,
    )


def save_field(field: ScoreField, path) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        fh.write("x,y,sx_marg,sx_joint,sy_joint,source\n")
        for row in zip(field.xs, field.ys, field.sx_marg, field.sx_joint, field.sy_joint):
            fh.write(",".join(f"{v:.17g}" for v in row) + f",{field.source.value}\n")
    return path


def load_field(path) -> ScoreField:
    data = np.genfromtxt(path, delimiter=",", skip_header=1, usecols=(0, 1, 2, 3, 4))
    data = np.atleast_2d(data)
    with open(path) as fh:
        fh.readline()
        source = fh.readline().strip().rsplit(",", 1)[-1]
    return ScoreField(
        xs=data[:, 0], ys=data[:, 1], sx_marg=data[:, 2],
        sx_joint=data[:, 3], sy_joint=data[:, 4], source=ScoreSource(source),
    )
