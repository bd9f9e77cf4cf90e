"""Training objectives: the combined cross-entropy/Dice loss and its
centerline-augmented variant built on a differentiable soft skeleton.

Both overlap terms return negated coefficients in [-1, 0) so the optimum of
every objective is a minimum.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ShapeError

CLAMP = 1e-7


@dataclass
class LossConfig:
    alpha: float = 0.5
    beta: float = 0.5
    skeleton_iterations: int = 10
    smooth_eps: float = 1.0
    deep_supervision_weights: list = field(default=None)

    def validate(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in [0,1], got {self.alpha}")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta must be in [0,1], got {self.beta}")
        if self.skeleton_iterations < 1:
            raise ConfigError("skeleton_iterations must be >= 1")
        if self.deep_supervision_weights is not None:
            w = np.asarray(self.deep_supervision_weights, dtype=float)
            if (w < 0).any() or w.sum() <= 0:
                raise ConfigError("deep_supervision_weights must be nonnegative")
            self.deep_supervision_weights = list(w / w.sum())
        return self

    def head_weights(self, n_heads):
        """Per-head weights, halving per scale from full resolution down,
        normalized to sum 1; an explicit list overrides."""
        if self.deep_supervision_weights is not None:
            if len(self.deep_supervision_weights) != n_heads:
                raise ConfigError(
                    f"{len(self.deep_supervision_weights)} supervision weights "
                    f"for {n_heads} heads")
            return list(self.deep_supervision_weights)
        w = np.array([2.0 ** -i for i in range(n_heads)])
        return list(w / w.sum())

    def to_dict(self):
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d):
        return cls(**d).validate()


def cross_entropy(pred, target):
    """Mean voxelwise binary cross-entropy; pred is clamped to
    [1e-7, 1-1e-7] before the logs."""
    if pred.shape != target.shape:
        raise ShapeError(f"cross_entropy: {pred.shape} vs {target.shape}")
    p = ad.clip(pred, CLAMP, 1.0 - CLAMP)
    one_minus_t = ad.Tensor(1.0 - target.data)
    pos = ad.mul(target, ad.log(p))
    neg = ad.mul(one_minus_t, ad.log(ad.add_scalar(ad.mul_scalar(p, -1.0), 1.0)))
    return ad.mul_scalar(ad.mean_all(ad.add(pos, neg)), -1.0)


def soft_dice_loss(pred, target, eps=1.0):
    """-(2*sum(p*t) + eps) / (sum(p) + sum(t) + eps), in [-1, 0)."""
    if pred.shape != target.shape:
        raise ShapeError(f"soft_dice_loss: {pred.shape} vs {target.shape}")
    inter = ad.sum_all(ad.mul(pred, target))
    num = ad.add_scalar(ad.mul_scalar(inter, 2.0), eps)
    den = ad.add_scalar(ad.add(ad.sum_all(pred), ad.sum_all(target)), eps)
    return ad.mul_scalar(ad.div(num, den), -1.0)


def soft_skeleton(x, iterations):
    """Differentiable skeleton by iterated morphology on shape-preserving
    3x3x3 pools: erode = minpool3, dilate = maxpool3, open = dilate(erode).

    skel = relu(x - open(x)); then per round: x = erode(x);
    delta = relu(x - open(x)); skel += relu(delta - skel*delta).
    """
    def opened(t):
        return ad.maxpool3(ad.minpool3(t))

    skel = ad.relu(ad.sub(x, opened(x)))
    for _ in range(iterations):
        x = ad.minpool3(x)
        delta = ad.relu(ad.sub(x, opened(x)))
        skel = ad.add(skel, ad.relu(ad.sub(delta, ad.mul(skel, delta))))
    return skel


def soft_cldice_loss(pred, target, iterations=10, eps=1.0):
    """Negated soft centerline-Dice: harmonic mean of topology precision
    (pred skeleton inside target) and sensitivity (target skeleton inside
    pred)."""
    if pred.shape != target.shape:
        raise ShapeError(f"soft_cldice_loss: {pred.shape} vs {target.shape}")
    sp = soft_skeleton(pred, iterations)
    st = soft_skeleton(target, iterations)
    tprec = ad.div(ad.add_scalar(ad.sum_all(ad.mul(sp, target)), eps),
                   ad.add_scalar(ad.sum_all(sp), eps))
    tsens = ad.div(ad.add_scalar(ad.sum_all(ad.mul(st, pred)), eps),
                   ad.add_scalar(ad.sum_all(st), eps))
    num = ad.mul_scalar(ad.mul(tprec, tsens), 2.0)
    return ad.mul_scalar(ad.div(num, ad.add(tprec, tsens)), -1.0)


def combo_loss(outputs, targets, cfg, use_cldice=False):
    """Deep-supervised total: per head h,
    L_h = (1-alpha)*CE + alpha*[(1-beta)*Dice + beta*clDice when enabled,
    else Dice]; total = sum of head weights * L_h."""
    heads = outputs.heads if hasattr(outputs, "heads") else list(outputs)
    if len(heads) != len(targets):
        raise ShapeError(f"{len(heads)} heads but {len(targets)} targets")
    weights = cfg.head_weights(len(heads))
    alpha, beta = cfg.alpha, cfg.beta
    total = None
    for wh, pred, tgt in zip(weights, heads, targets):
        ce = cross_entropy(pred, tgt)
        dice = soft_dice_loss(pred, tgt, cfg.smooth_eps)
        if use_cldice:
            cl = soft_cldice_loss(pred, tgt, cfg.skeleton_iterations, cfg.smooth_eps)
            dice_term = ad.add(ad.mul_scalar(dice, 1.0 - beta),
                               ad.mul_scalar(cl, beta))
        else:
            dice_term = dice
        head_loss = ad.add(ad.mul_scalar(ce, 1.0 - alpha),
                           ad.mul_scalar(dice_term, alpha))
        contrib = ad.mul_scalar(head_loss, wh)
        total = contrib if total is None else ad.add(total, contrib)
    return total
