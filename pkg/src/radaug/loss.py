"""Pose-regression loss with homoscedastic weighting and relative-pose terms.

The per-pose term is
    h(p, p*) = ||t - t*||_1 * exp(-beta) + beta + ||w - w*||_1 * exp(-gamma) + gamma
and the tuple loss sums h over the poses plus alpha times h over the
relative poses of adjacent frame pairs. beta and gamma are trainable and
balance translation against rotation; the L1 subgradient at zero is
defined as 0 throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .core import Pose, poses_to_matrix


@dataclass(frozen=True)
class LossParams:
    """Trainable balance scalars plus the fixed relative-term weight.

    all_pairs=False restricts the relative sum to ordered adjacent pairs
    (|i-j| = 1); True uses every ordered pair i != j, which counts each
    unordered pair twice.
    """

    beta: float = 0.0
    gamma: float = -3.0
    alpha: float = 1.0
    all_pairs: bool = False

    def __post_init__(self):
        for name in ("beta", "gamma", "alpha"):
            v = float(getattr(self, name))
            if not np.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v}")
            object.__setattr__(self, name, v)

    def stepped(self, dbeta: float, dgamma: float, lr: float) -> "LossParams":
        """One gradient-descent update on beta and gamma."""
        return replace(self, beta=self.beta - lr * dbeta, gamma=self.gamma - lr * dgamma)


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    absolute_term: float
    relative_term: float


def _pair_indices(n: int, all_pairs: bool) -> tuple[np.ndarray, np.ndarray]:
    """Ordered (i, j) index arrays for the relative-pose sum."""
    if all_pairs:
        i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        keep = i != j
        return i[keep], j[keep]
    i = np.arange(n - 1)
    # adjacent pairs in both orders: (0,1), (1,0), (1,2), (2,1), ...
    return np.concatenate([i, i + 1]), np.concatenate([i + 1, i])


def _h_terms(err: np.ndarray, beta: float, gamma: float) -> np.ndarray:
    """Vector of h values for a (n, 6) error matrix (predicted minus truth)."""
    t_l1 = np.abs(err[:, :3]).sum(axis=1)
    w_l1 = np.abs(err[:, 3:]).sum(axis=1)
    # divergent runs overflow exp; callers detect the resulting non-finite
    # loss, so suppress the warning rather than crash mid-diagnosis
    with np.errstate(over="ignore", invalid="ignore"):
        return t_l1 * np.exp(-beta) + beta + w_l1 * np.exp(-gamma) + gamma


def pairwise_term(p: Pose, p_star: Pose, params: LossParams) -> float:
    """h(p, p*) for a single pose pair."""
    err = (p.as_vector() - p_star.as_vector())[None, :]
    return float(_h_terms(err, params.beta, params.gamma)[0])


def tuple_loss_arrays(pred: np.ndarray, truth: np.ndarray,
                      params: LossParams) -> LossBreakdown:
    """Tuple loss on (n, 6) pose matrices. Fast path used by training."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim != 2 or pred.shape[1] != 6:
        raise ValueError(f"pose matrices must share shape (n, 6), got "
                         f"{pred.shape} vs {truth.shape}")
    n = pred.shape[0]
    absolute = float(_h_terms(pred - truth, params.beta, params.gamma).sum())
    relative = 0.0
    if n >= 2:
        i, j = _pair_indices(n, params.all_pairs)
        v_err = (pred[i] - pred[j]) - (truth[i] - truth[j])
        relative = float(_h_terms(v_err, params.beta, params.gamma).sum())
    total = absolute + params.alpha * relative
    return LossBreakdown(total=total, absolute_term=absolute, relative_term=relative)


def tuple_loss(predicted: Sequence[Pose], truth: Sequence[Pose],
               params: LossParams) -> LossBreakdown:
    """Loss over a tuple of predicted poses against ground truth."""
    if len(predicted) != len(truth):
        raise ValueError(f"length mismatch: {len(predicted)} predicted vs "
                         f"{len(truth)} truth poses")
    if len(predicted) < 1:
        raise ValueError("need at least one pose")
    return tuple_loss_arrays(poses_to_matrix(predicted), poses_to_matrix(truth), params)


def tuple_loss_grad_arrays(pred: np.ndarray, truth: np.ndarray, params: LossParams
                           ) -> tuple[np.ndarray, float, float, LossBreakdown]:
    """Loss plus gradients w.r.t. predicted poses, beta and gamma.

    Returns (dL/dpred of shape (n, 6), dL/dbeta, dL/dgamma, breakdown).
    sign(0) = 0 is the L1 subgradient convention.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    n = pred.shape[0]
    with np.errstate(over="ignore", invalid="ignore"):
        eb, eg = np.exp(-params.beta), np.exp(-params.gamma)
        scale = np.concatenate([np.full(3, eb), np.full(3, eg)])

        err = pred - truth
        dpred = np.sign(err) * scale
        t_l1_sum = float(np.abs(err[:, :3]).sum())
        w_l1_sum = float(np.abs(err[:, 3:]).sum())
        n_terms = float(n)

        if n >= 2:
            i, j = _pair_indices(n, params.all_pairs)
            v_err = (pred[i] - pred[j]) - (truth[i] - truth[j])
            g = np.sign(v_err) * scale * params.alpha
            np.add.at(dpred, i, g)
            np.add.at(dpred, j, -g)
            t_l1_sum += params.alpha * float(np.abs(v_err[:, :3]).sum())
            w_l1_sum += params.alpha * float(np.abs(v_err[:, 3:]).sum())
            n_terms += params.alpha * len(i)

        # d/dbeta of (T * e^-beta + n_terms * beta) with T the weighted L1 total
        dbeta = -t_l1_sum * eb + n_terms
        dgamma = -w_l1_sum * eg + n_terms
    return dpred, dbeta, dgamma, tuple_loss_arrays(pred, truth, params)
