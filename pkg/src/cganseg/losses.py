"""Adversarial segmentation objectives.

Generator:      mean_batch[-log D(x, G(x,z))] + lambda * mean_pixels |y - G(x,z)|
Discriminator:  mean_batch[-log D(x, y) - log(1 - D(x, G(x,z)))]
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass(frozen=True)
class LossConfig:
    lambda_l1: float = 100.0
    epsilon_log: float = 1e-12

    def __post_init__(self):
        if self.lambda_l1 < 0:
            raise ValueError(f"lambda_l1 must be >= 0, got {self.lambda_l1}")
        if not 0.0 < self.epsilon_log <= 1e-6:
            raise ValueError(f"epsilon_log must lie in (0, 1e-6], got {self.epsilon_log}")


def _check_scores(scores: Tensor, what: str) -> None:
    if scores.ndim != 1:
        raise ValueError(f"{what} must be a 1-d tensor of per-sample scores, got {scores.shape}")
    if scores.data.min() < 0.0 or scores.data.max() > 1.0:
        raise ValueError(f"{what} must lie in [0, 1]")


def generator_loss(d_score_on_fake: Tensor, fake_mask: Tensor, true_mask: Tensor,
                   cfg: LossConfig = LossConfig()) -> Tensor:
    _check_scores(d_score_on_fake, "d_score_on_fake")
    if fake_mask.shape != true_mask.shape:
        raise ValueError(f"mask shapes differ: {fake_mask.shape} vs {true_mask.shape}")
    if fake_mask.shape[0] != d_score_on_fake.shape[0]:
        raise ValueError("score count does not match the mask batch size")
    adversarial = ad.mean(-ad.log(d_score_on_fake, cfg.epsilon_log))
    if cfg.lambda_l1 == 0:
        return adversarial
    # equal-size masks: the mean over all pixels is the batch mean of per-mask means
    l1 = ad.mean(ad.abs(ad.sub(true_mask, fake_mask)))
    return ad.add(adversarial, ad.mul(l1, cfg.lambda_l1))


def discriminator_loss(d_score_on_real: Tensor, d_score_on_fake: Tensor,
                       cfg: LossConfig = LossConfig()) -> Tensor:
    """``d_score_on_fake`` must be computed from a detached generator output."""
    _check_scores(d_score_on_real, "d_score_on_real")
    _check_scores(d_score_on_fake, "d_score_on_fake")
    if d_score_on_real.shape != d_score_on_fake.shape:
        raise ValueError("real and fake score batches differ in size")
    real_term = -ad.log(d_score_on_real, cfg.epsilon_log)
    fake_term = -ad.log(ad.sub(1.0, d_score_on_fake), cfg.epsilon_log)
    return ad.mean(ad.add(real_term, fake_term))


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under row-wise softmax."""
    labels = np.asarray(labels, dtype=np.int64)
    onehot = np.zeros(logits.shape)
    onehot[np.arange(len(labels)), labels] = 1.0
    picked = ad.mul(ad.log_softmax(logits), onehot)
    return ad.mul(ad.sum(picked), -1.0 / len(labels))
