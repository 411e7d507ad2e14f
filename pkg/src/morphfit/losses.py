"""Exact least-squares adversarial loss arithmetic and attention composition.

All functions are pure and operate on plain arrays or scalars. The discriminator
heads are: a real/fake head, a pairwise head conditioned on expression pairing, and
an identity head conditioned on subject pairing. Matched-real terms in the paired
heads carry a factor of 2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SizingError


@dataclass
class LossWeights:
    l1: float = 10.0
    perceptual: float = 10.0


@dataclass
class DiscriminatorOutputs:
    """Raw head outputs on one batch; scalars or arrays of matching shape."""

    real_on_real: np.ndarray        # D_real(T_real)
    real_on_fake: np.ndarray        # D_real(T_fake)
    pair_matched_real: np.ndarray   # D_pair(T_real, e_paired)
    pair_matched_fake: np.ndarray   # D_pair(T_fake, e_paired)
    pair_mismatched_real: np.ndarray  # D_pair(T_real, e_random)
    iden_matched_real: np.ndarray   # D_iden(T_real, subject_paired)
    iden_matched_fake: np.ndarray   # D_iden(T_fake, subject_paired)
    iden_mismatched_real: np.ndarray  # D_iden(T_real, subject_random)


def squared_error_to_one(x) -> float:
    """Sum of (x - 1)^2 over all entries."""
    arr = np.asarray(x, dtype=np.float64)
    return float(np.sum((arr - 1.0) ** 2))


def squared_error_to_zero(x) -> float:
    """Sum of x^2 over all entries."""
    arr = np.asarray(x, dtype=np.float64)
    return float(np.sum(arr * arr))


def loss_real(outputs: DiscriminatorOutputs) -> float:
    return squared_error_to_one(outputs.real_on_real) + squared_error_to_zero(
        outputs.real_on_fake
    )


def loss_pair(outputs: DiscriminatorOutputs) -> float:
    return (
        2.0 * squared_error_to_one(outputs.pair_matched_real)
        + squared_error_to_zero(outputs.pair_matched_fake)
        + squared_error_to_zero(outputs.pair_mismatched_real)
    )


def loss_iden(outputs: DiscriminatorOutputs) -> float:
    return (
        2.0 * squared_error_to_one(outputs.iden_matched_real)
        + squared_error_to_zero(outputs.iden_matched_fake)
        + squared_error_to_zero(outputs.iden_mismatched_real)
    )


def loss_gan(outputs: DiscriminatorOutputs) -> float:
    return loss_real(outputs) + loss_pair(outputs) + loss_iden(outputs)


def l1_loss(a: np.ndarray, b: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Mean absolute difference, over masked pixels when a mask is given."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise SizingError("l1_loss operands must share a shape")
    diff = np.abs(a - b)
    if mask is None:
        return float(diff.mean())
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.shape[: mask.ndim]:
        raise SizingError("mask extent must prefix the operand shape")
    if not mask.any():
        raise SizingError("l1_loss mask selects no pixels")
    return float(diff[mask].mean())


def generator_objective(gan_term: float, l1_term: float, perceptual_term: float,
                        weights: LossWeights | None = None) -> float:
    """gan + l1_weight * l1 + perceptual_weight * perceptual."""
    w = weights or LossWeights()
    return float(gan_term) + w.l1 * float(l1_term) + w.perceptual * float(perceptual_term)


def attention_compose(attention: np.ndarray, color: np.ndarray, source: np.ndarray,
                      attention_weights_source: bool = True) -> np.ndarray:
    """Per-channel blend of a predicted color map with the source texture.

    Default orientation: out = A * source + (1 - A) * color. The attention map is
    clamped to [0, 1] internally; the orientation flag swaps the two images' roles.
    """
    attn = np.clip(np.asarray(attention, dtype=np.float64), 0.0, 1.0)
    color = np.asarray(color, dtype=np.float64)
    source = np.asarray(source, dtype=np.float64)
    if not (attn.shape == color.shape == source.shape):
        raise SizingError("attention, color, and source must share a shape")
    if attention_weights_source:
        return attn * source + (1.0 - attn) * color
    return attn * color + (1.0 - attn) * source
