"""Continuity-equation goodness-of-fit: residuals, curvature penalty,
full-batch Adam minimization, and the two-direction discovery decision.

The per-point residual of a velocity v against a score field is

    r_i = s_x(x_i) - dv/dy(y_i, x_i) - [s_x(x_i, y_i) + v(y_i, x_i) s_y(x_i, y_i)]

and the fit statistic is the mean of r_i^2 (an absolute-value mode exists
behind a flag). The regularizer penalizes the squared second derivative of
the causal curves, (dv/dx + v dv/dy)^2, during optimization only; reported
decision losses are always unpenalized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dataset import DataPair, Direction, PreprocessConfig, standardize, subsample, trim_indices
from .errors import (
    DirectionTagged,
    IndexOutOfRange,
    NonFiniteLoss,
    NonInvertibleMechanism,
    UnsupportedOrder,
)
from .scores import (
    KernelConfig,
    MechanismOracle,
    ScoreField,
    ScoreSource,
    analytic_gaussian_scores,
    effect_marginal_score,
    kde_scores,
    reverse_field,
    scaled_field,
    stein_scores,
)
from .velocity import BASIS_FAMILIES, VelocityModel, evaluate, init_params


@dataclass(frozen=True)
class GofConfig:
    max_iters: int = 2000
    base_lr: float = 0.1          # basis families; divided by ln(#params)
    mlp_lr: float = 0.01          # MLP families, used as-is
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    penalty_weight: float = 1e-3
    penalty_order: int = 2
    tol: float = 1e-9             # relative plateau threshold
    plateau_window: int = 100
    absolute_residuals: bool = False
    low_confidence_threshold: float = 1e-3

    def __post_init__(self):
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")
        if self.base_lr <= 0 or self.mlp_lr <= 0:
            raise ValueError("learning rates must be positive")
        if self.penalty_weight < 0:
            raise ValueError("penalty_weight must be nonnegative")
        if self.penalty_order < 2:
            raise ValueError("penalty_order must be at least 2")


@dataclass(frozen=True)
class FitResult:
    loss_xy: float
    loss_yx: float
    theta_xy: np.ndarray
    theta_yx: np.ndarray
    decision: Direction
    confidence: float
    tie: bool
    low_confidence: bool
    trace_xy: np.ndarray
    trace_yx: np.ndarray

    def to_dict(self) -> dict:
        return {
            "loss_xy": self.loss_xy,
            "loss_yx": self.loss_yx,
            "decision": self.decision.value,
            "confidence": self.confidence,
            "tie": self.tie,
            "low_confidence": self.low_confidence,
            "theta_xy": [float(t) for t in self.theta_xy],
            "theta_yx": [float(t) for t in self.theta_yx],
        }


def residuals(model: VelocityModel, score: ScoreField) -> np.ndarray:
    ev = evaluate(model, score.ys, score.xs)
    return score.sx_marg - ev.vy - (score.sx_joint + ev.v * score.sy_joint)


def residual(model: VelocityModel, score: ScoreField, i: int) -> float:
    if not (0 <= i < score.n):
        raise IndexOutOfRange(f"index {i} outside 0..{score.n - 1}")
    return float(residuals(model, score)[i])


def gof_loss(model: VelocityModel, score: ScoreField, absolute: bool = False) -> float:
    r = residuals(model, score)
    return float(np.mean(np.abs(r))) if absolute else float(np.mean(r * r))


def penalty(model: VelocityModel, xs, ys, order: int = 2) -> float:
    """Mean squared curve curvature d^2 y / dx^2 = dv/dx + v dv/dy at the data."""
    if order != 2:
        raise UnsupportedOrder(f"penalty order {order} not supported (only 2)")
    ev = evaluate(model, ys, xs)
    q = ev.vx + ev.v * ev.vy
    return float(np.mean(q * q))


@dataclass
class DirectionFit:
    theta: np.ndarray
    loss: float
    trace: np.ndarray
    penalty_trace: np.ndarray
    iterations: int
    stopped_early: bool

    def __iter__(self):  # allows `theta, loss = fit_direction(...)`
        return iter((self.theta, self.loss))


def adam_step(theta, grad, m, v, t, lr, betas=(0.9, 0.999), eps=1e-8):
    """One Adam update; returns (theta', m', v'). Zero gradient is a fixpoint."""
    b1, b2 = betas
    m = b1 * m + (1.0 - b1) * grad
    v = b2 * v + (1.0 - b2) * grad * grad
    m_hat = m / (1.0 - b1**t)
    v_hat = v / (1.0 - b2**t)
    return theta - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


def fit_direction(
    pair: DataPair,
    score: ScoreField,
    family: str,
    config: GofConfig = GofConfig(),
    seed: int = 0,
    arch=None,
) -> DirectionFit:
    """Minimize mean r^2 (+ penalty) by full-batch Adam; deterministic per seed."""
    if score.n != pair.n:
        raise ValueError("score field and pair are not aligned")
    theta = init_params(family, arch, seed)
    model = VelocityModel(family, theta, arch, seed)
    lr = config.base_lr / math.log(theta.size) if family in BASIS_FAMILIES else config.mlp_lr

    n = pair.n
    xs, ys = score.xs, score.ys
    sxm, sxj, syj = score.sx_marg, score.sx_joint, score.sy_joint
    pw = config.penalty_weight

    m_state = np.zeros_like(theta)
    v_state = np.zeros_like(theta)
    trace, pen_trace = [], []
    objective_history = []
    stopped_early = False
    iters_done = 0

    for t in range(1, config.max_iters + 1):
        ev = evaluate(model, ys, xs)
        r = sxm - ev.vy - (sxj + ev.v * syj)
        q = ev.vx + ev.v * ev.vy
        if config.absolute_residuals:
            loss = float(np.mean(np.abs(r)))
            dl_dr = np.sign(r) / n
        else:
            loss = float(np.mean(r * r))
            dl_dr = 2.0 * r / n
        pen = float(np.mean(q * q))
        objective = loss + pw * pen
        if not np.isfinite(objective):
            raise NonFiniteLoss(t, objective)
        trace.append(loss)
        pen_trace.append(pen)

        dq = 2.0 * pw * q / n
        w_v = -dl_dr * syj + dq * ev.vy
        w_vy = -dl_dr + dq * ev.v
        w_vx = dq if pw != 0.0 else None
        grad = ev.grad(w_v, w_vy, w_vx)
        theta, m_state, v_state = adam_step(
            theta, grad, m_state, v_state, t, lr, config.adam_betas, config.adam_eps
        )
        model = model.with_theta(theta)
        iters_done = t

        objective_history.append(objective)
        w = config.plateau_window
        if len(objective_history) > w:
            prev = objective_history[-w - 1]
            if prev - objective < config.tol * max(abs(prev), 1e-300):
                stopped_early = True
                break

    final_loss = gof_loss(model, score, config.absolute_residuals)
    return DirectionFit(
        theta=theta,
        loss=final_loss,
        trace=np.asarray(trace),
        penalty_trace=np.asarray(pen_trace),
        iterations=iters_done,
        stopped_early=stopped_early,
    )


def estimate_fields(pair, estimator, kernel_config, oracle, stats, mc_draws, mc_seed):
    """Forward (X->Y) and reverse (Y->X) score fields on the working scale."""
    tag = ScoreSource(estimator.upper()) if isinstance(estimator, str) else estimator
    if tag is ScoreSource.STEIN:
        cfg = kernel_config or KernelConfig(family="gaussian")
        return stein_scores(pair, cfg), stein_scores(pair.swapped(), cfg)
    if tag is ScoreSource.KDE:
        cfg = kernel_config or KernelConfig(family="laplace")
        return kde_scores(pair, cfg), kde_scores(pair.swapped(), cfg)
    if tag is ScoreSource.ANALYTIC:
        if oracle is None:
            raise NonInvertibleMechanism("ANALYTIC scores need a mechanism oracle")
        if stats is None:
            raise ValueError("analytic fields need the original-scale points")
        orig_x = pair.xs * stats.sd_x + stats.mean_x
        orig_y = pair.ys * stats.sd_y + stats.mean_y
        from .dataset import DataPair as _DP

        base = analytic_gaussian_scores(_DP(xs=orig_x, ys=orig_y), oracle)
        y_marg = effect_marginal_score(oracle, orig_y, n_draws=mc_draws, seed=mc_seed)
        fwd = scaled_field(base, stats.sd_x, stats.sd_y, stats.mean_x, stats.mean_y)
        rev = scaled_field(
            reverse_field(base, y_marg), stats.sd_y, stats.sd_x, stats.mean_y, stats.mean_x
        )
        return fwd, rev
    raise ValueError(f"unknown estimator {estimator!r}")


def discover(
    pair: DataPair,
    estimator: str = "stein",
    family: str = "b-quad",
    config: GofConfig = GofConfig(),
    seed: int = 0,
    preprocess: PreprocessConfig = PreprocessConfig(),
    kernel_config: Optional[KernelConfig] = None,
    oracle: Optional[MechanismOracle] = None,
    arch=None,
    mc_draws: int = 100_000,
) -> FitResult:
    """Two-step discovery: estimate scores, fit both directions, compare losses.

    Preprocessing order: subsample, standardize, estimate scores on all
    points, then drop marginal extremes from the loss averages only.
    """
    work = pair
    if preprocess.subsample_to is not None:
        work = subsample(work, preprocess.subsample_to, preprocess.rng_seed)

    stats = None
    if preprocess.standardize:
        try:
            work, stats = standardize(work)
        except Exception as exc:
            raise DirectionTagged(getattr(exc, "coordinate", "X"), exc) from exc
    elif estimator == "analytic":
        from .dataset import StandardizeStats

        stats = StandardizeStats(0.0, 1.0, 0.0, 1.0)

    fwd_field, rev_field = estimate_fields(
        work, estimator, kernel_config, oracle, stats, mc_draws, mc_seed=seed
    )

    keep = trim_indices(work, preprocess.trim_fraction)
    fit_pair = work.take(keep)
    fits = {}
    for direction, fld in ((Direction.XtoY, fwd_field), (Direction.YtoX, rev_field)):
        use_pair = fit_pair if direction is Direction.XtoY else fit_pair.swapped()
        try:
            fits[direction] = fit_direction(
                use_pair, fld.take(keep), family, config, seed, arch
            )
        except Exception as exc:
            raise DirectionTagged(direction.value, exc) from exc

    loss_xy = fits[Direction.XtoY].loss
    loss_yx = fits[Direction.YtoX].loss
    tie = loss_xy == loss_yx
    decision = Direction.XtoY if loss_xy <= loss_yx else Direction.YtoX
    confidence = abs(loss_xy - loss_yx)
    return FitResult(
        loss_xy=loss_xy,
        loss_yx=loss_yx,
        theta_xy=fits[Direction.XtoY].theta,
        theta_yx=fits[Direction.YtoX].theta,
        decision=decision,
        confidence=confidence,
        tie=tie,
        low_confidence=confidence < config.low_confidence_threshold,
        trace_xy=fits[Direction.XtoY].trace,
        trace_yx=fits[Direction.YtoX].trace,
    )
