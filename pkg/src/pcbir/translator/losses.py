"""Adversarial, cycle-consistency and total CycleGAN losses.

Scores are discriminator probabilities. Before taking logs they are
clamped to ``[SCORE_EPS, 1 - SCORE_EPS]`` so a saturated discriminator
yields a large but finite loss.

The L1 reconstruction distance is a per-element *mean*, not a sum, which
keeps ``lambda_cyc`` independent of image size.
"""

from __future__ import annotations

from ..nncore import Tensor

SCORE_EPS = 1e-7


def _as_tensor(scores) -> Tensor:
    t = scores if isinstance(scores, Tensor) else Tensor(scores)
    if t.size == 0:
        raise ValueError("scores must be nonempty")
    return t


def _log_clamped(scores: Tensor) -> Tensor:
    return scores.clip(SCORE_EPS, 1.0 - SCORE_EPS).log()


def adversarial_loss(on_real, on_fake) -> Tensor:
    """-mean log D(real) - mean log(1 - D(fake))."""
    real, fake = _as_tensor(on_real), _as_tensor(on_fake)
    return -_log_clamped(real).mean() - _log_clamped(1.0 - fake).mean()


def adversarial_loss_y(dy_on_real, dy_on_fake) -> Tensor:
    """Discriminator loss in the infrared domain; ``dy_on_fake`` scores G(x)."""
    return adversarial_loss(dy_on_real, dy_on_fake)


def adversarial_loss_x(dx_on_real, dx_on_fake) -> Tensor:
    """Discriminator loss in the visible domain; ``dx_on_fake`` scores F(y)."""
    return adversarial_loss(dx_on_real, dx_on_fake)


def generator_adversarial_term(on_fake) -> Tensor:
    """Non-saturating generator term: -mean log D(fake)."""
    return -_log_clamped(_as_tensor(on_fake)).mean()


def l1_mean(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = b if isinstance(b, Tensor) else Tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch in L1 distance: {a.shape} vs {b.shape}")
    return (a - b).abs().mean()


def cycle_loss(x, x_reconstructed, y, y_reconstructed) -> Tensor:
    return l1_mean(x, x_reconstructed) + l1_mean(y, y_reconstructed)


def total_loss(adv_x, adv_y, cyc, lambda_cyc: float):
    return adv_x + adv_y + lambda_cyc * cyc
