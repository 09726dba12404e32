"""Contrastive objectives over paired graph/summary embeddings.

The in-batch contrastive loss scores pairs by negative squared distance over
temperature; on unit-norm rows that equals (2 cos - 2) / temperature, so the
distance and cosine formulations pick the same positives and produce the
same gradients up to an additive constant. The uniformity diagnostic uses
the negative-exponent kernel e^{-||u - h||^2}: the positive-exponent variant
diverges and would attract negatives instead of repelling them.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ValidationError


def _check_batch(h: np.ndarray, u: np.ndarray) -> int:
    if h.ndim != 2 or u.ndim != 2:
        raise ValidationError("expected 2-D embedding batches")
    if h.shape != u.shape:
        raise ValidationError(f"batch shapes differ: {h.shape} vs {u.shape}")
    if h.shape[0] == 0:
        raise ValidationError("empty batch")
    return h.shape[0]


def pairwise_sq_dists(h: Tensor, u: Tensor) -> Tensor:
    """(B, B) matrix of ||h_i - u_j||^2, differentiable in both operands."""
    h_sq = ad.tsum(ad.mul(h, h), axis=1, keepdims=True)           # (B, 1)
    u_sq = ad.reshape(ad.tsum(ad.mul(u, u), axis=1, keepdims=True),
                      (1, u.data.shape[0]))                       # (1, B)
    cross = h @ ad.transpose(u, (1, 0))                           # (B, B)
    return ad.sub(ad.add(h_sq, u_sq), ad.mul(cross, ad.as_tensor(2.0)))


def contrastive_loss_tensor(h: Tensor, u: Tensor, temperature: float) -> Tensor:
    """Symmetric cross-entropy over the similarity matrix
    sim(i, j) = -||h_i - u_j||^2 / temperature."""
    if temperature <= 0:
        raise ValidationError("temperature must be positive")
    batch = _check_batch(h.data, u.data)
    sims = ad.mul(pairwise_sq_dists(h, u), ad.as_tensor(-1.0 / temperature))
    eye = Tensor(np.eye(batch))
    diag = ad.tsum(ad.mul(sims, eye), axis=1)                     # (B,)
    lse_rows = ad.logsumexp(sims, axis=1)                         # (B,)
    lse_cols = ad.logsumexp(ad.transpose(sims, (1, 0)), axis=1)   # (B,)
    loss_rows = ad.tmean(ad.sub(lse_rows, diag))
    loss_cols = ad.tmean(ad.sub(lse_cols, diag))
    return ad.mul(ad.add(loss_rows, loss_cols), ad.as_tensor(0.5))


def contrastive_loss(h: np.ndarray, u: np.ndarray, temperature: float):
    """Loss value plus gradients w.r.t. both embedding batches."""
    ht = Tensor(np.asarray(h, dtype=np.float64), requires_grad=True)
    ut = Tensor(np.asarray(u, dtype=np.float64), requires_grad=True)
    loss = contrastive_loss_tensor(ht, ut, temperature)
    loss.backward()
    return loss.item(), ht.grad, ut.grad


def alignment_uniformity(h: np.ndarray, u: np.ndarray) -> tuple[float, float]:
    """Diagnostics: alignment = mean ||h_i - u_i||^2; uniformity = mean over i
    of log mean over j of e^{-||u_i - h_j||^2}."""
    h = np.asarray(h, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    _check_batch(h, u)
    alignment = float(np.mean(np.sum((h - u) ** 2, axis=1)))
    d2 = (
        np.sum(u * u, axis=1)[:, None]
        + np.sum(h * h, axis=1)[None, :]
        - 2.0 * (u @ h.T)
    )
    uniformity = float(np.mean(np.log(np.mean(np.exp(-d2), axis=1))))
    return alignment, uniformity


def supervised_contrastive_loss_tensor(
    z: Tensor,
    labels: np.ndarray,
    label_embeddings: np.ndarray,
    temperature: float = 0.1,
) -> Tensor:
    """Supervised contrastive loss of anchors against label sentences and
    same-batch anchors.

    For anchor i the candidate set is every label sentence plus every other
    anchor; positives are the anchor's own class sentence and same-class
    anchors. Cosine similarities over temperature (all rows unit-norm).
    """
    if temperature <= 0:
        raise ValidationError("temperature must be positive")
    labels = np.asarray(labels)
    batch = z.data.shape[0]
    num_classes = label_embeddings.shape[0]
    if batch == 0:
        raise ValidationError("empty batch")
    if labels.shape[0] != batch:
        raise ValidationError("labels length does not match batch")
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ValidationError("label id out of range")

    inv_t = ad.as_tensor(1.0 / temperature)
    sims_zu = ad.mul(z @ Tensor(label_embeddings.T), inv_t)       # (B, C)
    sims_zz = ad.mul(z @ ad.transpose(z, (1, 0)), inv_t)          # (B, B)
    logits = ad.concat([sims_zu, sims_zz], axis=1)                # (B, C + B)

    # Mask out each anchor's self-similarity column from the candidate set.
    self_mask = np.zeros((batch, num_classes + batch))
    self_mask[np.arange(batch), num_classes + np.arange(batch)] = -1e9
    logits = ad.add(logits, Tensor(self_mask))

    positives = np.zeros((batch, num_classes + batch))
    positives[np.arange(batch), labels] = 1.0
    same = (labels[:, None] == labels[None, :]) & ~np.eye(batch, dtype=bool)
    positives[:, num_classes:] = same.astype(np.float64)
    counts = positives.sum(axis=1)                                # >= 1: own class sentence

    log_denominator = ad.logsumexp(logits, axis=1, keepdims=True)  # (B, 1)
    log_prob = ad.sub(logits, log_denominator)
    per_anchor = ad.mul(
        ad.tsum(ad.mul(log_prob, Tensor(positives)), axis=1),
        Tensor(-1.0 / counts),
    )
    return ad.tmean(per_anchor)
