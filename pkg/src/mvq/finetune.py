"""Codebook fine-tuning with masked gradient aggregation.

Assignments and masks stay frozen; only codewords move. The per-codeword
gradient is the coverage-normalised average of the kept per-weight gradients,
which is the exact gradient of the loss
``sum_p ||(v_p - c[a_p]) * n_p||^2 / (2 * coverage)`` rather than the plain
chain-rule sum.
"""

from __future__ import annotations

import numpy as np

from mvq.clustering import Codebook, check_assignments
from mvq.errors import ConfigInvalid, DimensionMismatch
from mvq.quantization import absmax_scale, dequantize_values, quantize_values


def reconstruct_for_forward(c: Codebook, a, bm) -> np.ndarray:
    """Decoded rows ``c[a_j] * bm_j`` (an NG x d array)."""
    bm = np.asarray(bm, dtype=bool)
    a = check_assignments(a, bm.shape[0], c.k)
    if bm.ndim != 2 or bm.shape[1] != c.d:
        raise DimensionMismatch(f"mask shape {bm.shape} vs codeword length {c.d}")
    return c.codewords[a] * bm


def coverage(a, bm, k: int) -> np.ndarray:
    """Kept-entry count per codeword and coordinate (k x d)."""
    bm = np.asarray(bm, dtype=np.float64)
    return np.stack([np.bincount(a, weights=bm[:, t], minlength=k) for t in range(bm.shape[1])], axis=1)


def aggregate_codeword_grads(weight_grads, a, bm, k: int) -> np.ndarray:
    g = np.asarray(weight_grads, dtype=np.float64)
    bm = np.asarray(bm, dtype=bool)
    if g.shape != bm.shape:
        raise DimensionMismatch(f"gradient shape {g.shape} vs mask shape {bm.shape}")
    a = check_assignments(a, g.shape[0], k)
    masked = g * bm
    sums = np.stack([np.bincount(a, weights=masked[:, t], minlength=k) for t in range(g.shape[1])], axis=1)
    cov = coverage(a, bm, k)
    return np.where(cov > 0, sums / np.where(cov > 0, cov, 1.0), 0.0)


def sgd_step(
    c: Codebook,
    grad,
    lr: float,
    momentum: float = 0.0,
    velocity: np.ndarray | None = None,
) -> tuple[Codebook, np.ndarray]:
    """One SGD update; returns the new codebook and momentum buffer."""
    if lr <= 0:
        raise ConfigInvalid(f"learning rate must be positive, got {lr}")
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != c.codewords.shape:
        raise DimensionMismatch(f"gradient shape {grad.shape} vs codebook {c.codewords.shape}")
    v = grad if velocity is None or momentum == 0.0 else momentum * velocity + grad
    return Codebook(c.codewords - lr * v), v


def quadratic_loss(recon, target) -> float:
    diff = np.asarray(recon) - np.asarray(target)
    return 0.5 * float(np.sum(diff * diff))


def quadratic_loss_grad(recon, target) -> np.ndarray:
    return np.asarray(recon, dtype=np.float64) - np.asarray(target, dtype=np.float64)


def normalized_loss(c: Codebook, a, bm, target) -> float:
    """The objective whose exact gradient the aggregation computes."""
    bm = np.asarray(bm, dtype=bool)
    cov = coverage(a, bm, c.k)
    diff = (np.asarray(target) - c.codewords[a]) * bm
    weight = np.where(bm, 1.0 / np.where(cov > 0, cov, 1.0)[a], 0.0)
    return 0.5 * float(np.sum(weight * diff * diff))


def finetune_codebook(
    c: Codebook,
    a,
    bm,
    target,
    steps: int,
    lr: float,
    momentum: float = 0.0,
    fake_quant_bits: int | None = None,
) -> tuple[Codebook, list[float]]:
    """Fit codewords to ``target`` under the quadratic loss.

    With ``fake_quant_bits`` the forward pass uses an absmax-quantized copy of
    the codebook and gradients pass straight through to the real codewords.
    Returns the tuned codebook and the loss before each step plus the final one.
    """
    velocity = None
    losses = []

    def forward(cb):
        if fake_quant_bits is None:
            return reconstruct_for_forward(cb, a, bm)
        s = absmax_scale(cb.codewords, fake_quant_bits)
        fq = Codebook(dequantize_values(quantize_values(cb.codewords, s, fake_quant_bits), s))
        return reconstruct_for_forward(fq, a, bm)

    for _ in range(steps):
        recon = forward(c)
        losses.append(quadratic_loss(recon, target))
        grad = aggregate_codeword_grads(quadratic_loss_grad(recon, target), a, bm, c.k)
        c, velocity = sgd_step(c, grad, lr, momentum, velocity)
    losses.append(quadratic_loss(forward(c), target))
    return c, losses
