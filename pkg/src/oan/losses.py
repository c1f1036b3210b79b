"""Objective terms for cross-modal embedding training.

Four ingredients, each a pure function from tensors to a 1x1 loss tensor:

* inter-class independence: softmax of embeddings against per-class memory
  keys, with label smoothing to keep the model from growing overconfident;
* hypersphere consistency: a Gaussian kernel turns pairwise squared
  distances into (0, 1] similarities, and a binary cross-entropy ties the
  similarity structure of one feature layer to another's;
* plain cross-entropy classification;
* semantic distillation: cross-entropy of student logits against a teacher
  probability table.

The weighted sum of the four is the training objective. Every function
keeps gradients flowing only where they belong: memory keys, distillation
targets, and teacher outputs are constants by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .errors import (
    ConfigError,
    DistributionError,
    EmptyBatchError,
    LabelError,
    NumericError,
    ShapeError,
)

__all__ = [
    "InterClassLossConfig",
    "HypersphereKernel",
    "LossWeights",
    "batch_categories",
    "inter_class_loss",
    "hypersphere_similarity",
    "hcr_loss",
    "self_distill_hcr",
    "teacher_student_hcr",
    "classification_loss",
    "semantic_loss",
    "total_loss",
]

_BCE_CLAMP = 1e-7


@dataclass(frozen=True)
class InterClassLossConfig:
    """Temperature and smoothing knobs for the inter-class loss.

    ``literal_coefficients`` switches from standard label smoothing to the
    historical coefficient pattern (own-class weight -1/N - eta, smoothing
    weight +eta/N); kept for side-by-side comparison, off by default.
    """

    beta: float = 10.0
    eta: float = 0.1
    literal_coefficients: bool = False

    def __post_init__(self):
        if not self.beta >= 0.0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}")
        if not 0.0 <= self.eta < 1.0:
            raise ConfigError(f"eta must be in [0, 1), got {self.eta}")


@dataclass(frozen=True)
class HypersphereKernel:
    """Gaussian bump mapping distances to similarities in (0, 1].

    D(d) = rho / sqrt(2*pi*sigma_sq) * exp(-(d - mu)^2 / (2*sigma_sq)).

    With ``rho`` left unset it is derived as sqrt(2*pi*sigma_sq), which
    makes the peak D(mu) exactly 1. The defaults (mu=0, sigma_sq=1/2)
    collapse the whole expression to D(d) = exp(-d^2).
    """

    mu: float = 0.0
    sigma_sq: float = 0.5
    rho: float | None = None

    def __post_init__(self):
        if not self.sigma_sq > 0.0:
            raise ConfigError(f"sigma_sq must be > 0, got {self.sigma_sq}")
        if self.rho is None:
            object.__setattr__(self, "rho", math.sqrt(2.0 * math.pi * self.sigma_sq))
        elif not self.rho > 0.0:
            raise ConfigError(f"rho must be > 0, got {self.rho}")

    @property
    def peak(self) -> float:
        """Kernel value at d = mu; 1.0 when rho is the derived default."""
        return self.rho / math.sqrt(2.0 * math.pi * self.sigma_sq)

    def apply(self, dists: np.ndarray) -> np.ndarray:
        """Elementwise kernel on a plain array (no gradient tracking)."""
        d = np.asarray(dists, dtype=np.float64)
        return self.peak * np.exp(-((d - self.mu) ** 2) / (2.0 * self.sigma_sq))


@dataclass(frozen=True)
class LossWeights:
    """Coefficients of the combined objective.

    total = cls + lambda1 * semantic + lambda2 * inter_class + lambda3 * hcr
    """

    lambda1: float = 1.0
    lambda2: float = 0.001
    lambda3: float = 0.1

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3"):
            v = float(getattr(self, name))
            if not math.isfinite(v) or v < 0.0:
                raise ConfigError(f"{name} must be finite and >= 0, got {v}")


def batch_categories(class_ids) -> tuple[np.ndarray, np.ndarray]:
    """Distinct classes of a batch in first-appearance order, plus the
    per-instance index into that distinct list."""
    ids = np.asarray(class_ids, dtype=np.intp)
    if ids.ndim != 1:
        raise ShapeError(f"class_ids must be 1-D, got shape {ids.shape}")
    if ids.size == 0:
        raise EmptyBatchError("batch contains no instances")
    distinct, index = np.unique(ids, return_inverse=True)
    order = np.argsort([np.argmax(ids == c) for c in distinct], kind="stable")
    distinct = distinct[order]
    remap = np.empty_like(order)
    remap[order] = np.arange(order.size)
    return distinct, remap[index]


def inter_class_loss(
    values: Tensor,
    cat_index: Sequence[int],
    key_rows,
    cfg: InterClassLossConfig,
) -> Tensor:
    """Smoothed softmax of batch embeddings against their category keys.

    ``key_rows`` holds one key per distinct batch category; ``cat_index``
    maps each instance to its row in ``key_rows``. Keys are constants here:
    the gradient reaches the embedding values only. Default mode is the
    usual label-smoothed cross-entropy; literal mode reproduces the
    historical coefficients, which flip the smoothing term's sign.
    """
    if values.rows == 0:
        raise EmptyBatchError("batch contains no instances")
    keys = key_rows.data if isinstance(key_rows, Tensor) else np.asarray(key_rows, dtype=np.float64)
    if keys.ndim != 2:
        raise ShapeError(f"key_rows must be 2-D, got shape {keys.shape}")
    n_bc, dim = keys.shape
    if dim != values.cols:
        raise ShapeError(f"value dim {values.cols} does not match key dim {dim}")
    idx = np.asarray(cat_index, dtype=np.intp)
    if idx.shape != (values.rows,):
        raise ShapeError(f"cat_index must have one entry per instance, got {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= n_bc):
        raise LabelError(f"category index out of range for {n_bc} batch categories")

    n = values.rows
    logits = dc.scale(dc.matmul(values, Tensor(keys.T)), cfg.beta)
    logp = dc.log_softmax_rows(logits)
    own = dc.pick_columns(logp, idx).sum()
    smooth = logp.sum()
    if cfg.literal_coefficients:
        xi = -1.0 / n - cfg.eta
        return dc.add(dc.scale(own, xi), dc.scale(smooth, cfg.eta / n))
    return dc.add(
        dc.scale(own, -(1.0 - cfg.eta) / n),
        dc.scale(smooth, -cfg.eta / (n * n_bc)),
    )


def hypersphere_similarity(dists: Tensor, kernel: HypersphereKernel) -> Tensor:
    """Differentiable elementwise kernel over a matrix of squared distances."""
    dists = dc.as_tensor(dists)
    d = dists.data
    if d.shape[0] != d.shape[1]:
        raise ShapeError(f"distance matrix must be square, got {d.shape}")
    if not np.isfinite(d).all():
        raise NumericError("distance matrix has non-finite entries")
    if (d < -1e-9).any():
        raise NumericError("distance matrix has negative entries")
    if not np.allclose(d, d.T, atol=1e-8):
        raise NumericError("distance matrix is not symmetric")
    centered = dc.add_scalar(dists, -kernel.mu)
    quad = dc.scale(dc.mul(centered, centered), -1.0 / (2.0 * kernel.sigma_sq))
    return dc.scale(dc.exp(quad), kernel.peak)


def _offdiag_mean(matrix: Tensor) -> Tensor:
    n = matrix.rows
    mask = np.ones((n, n))
    np.fill_diagonal(mask, 0.0)
    return dc.scale(dc.mul(matrix, Tensor(mask)).sum(), 1.0 / (n * (n - 1)))


def hcr_loss(target_feats: Tensor, pred_feats: Tensor, kernel: HypersphereKernel) -> Tensor:
    """Binary cross-entropy between two similarity structures.

    Both feature sets are reduced to pairwise squared distances and pushed
    through the kernel. The target side is detached and acts as the soft
    label t; the prediction side stays differentiable as s. The result is
    the mean BCE over off-diagonal pairs, with s clamped away from {0, 1}
    so the logs stay finite.
    """
    target_feats = dc.as_tensor(target_feats)
    pred_feats = dc.as_tensor(pred_feats)
    if target_feats.rows != pred_feats.rows:
        raise ShapeError(
            f"feature sets must align by instance: {target_feats.rows} vs {pred_feats.rows} rows"
        )
    t_dist = dc.pairwise_sq_dist(Tensor(target_feats.data.copy()))
    t = Tensor(kernel.apply(t_dist.data))

    s = hypersphere_similarity(dc.pairwise_sq_dist(pred_feats), kernel)
    s = dc.clamp(s, _BCE_CLAMP, 1.0 - _BCE_CLAMP)
    one_minus_t = Tensor(1.0 - t.data)
    one_minus_s = dc.add_scalar(dc.neg(s), 1.0)
    bce = dc.neg(dc.add(dc.mul(t, dc.log(s)), dc.mul(one_minus_t, dc.log(one_minus_s))))
    return _offdiag_mean(bce)


def self_distill_hcr(
    classification_out: Tensor, student_logits: Tensor, kernel: HypersphereKernel
) -> Tensor:
    """Consistency of the logit layer with the classification layer.

    The classification outputs provide the (detached) target similarity
    structure; the gradient shapes the logit layer toward it. The target is
    snapshotted at call time, so finite-difference verification must hold
    the target fixed externally.
    """
    return hcr_loss(classification_out, student_logits, kernel)


def teacher_student_hcr(
    classification_out: Tensor, teacher_logits: Tensor, kernel: HypersphereKernel
) -> Tensor:
    """Consistency of the classification layer with a frozen teacher.

    The teacher's logit similarities are the (detached) target; the
    gradient flows through the classification outputs, never the teacher.
    """
    return hcr_loss(teacher_logits, classification_out, kernel)


def classification_loss(class_logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy of logit rows against integer labels."""
    class_logits = dc.as_tensor(class_logits)
    if class_logits.rows == 0:
        raise EmptyBatchError("batch contains no instances")
    lab = np.asarray(labels, dtype=np.intp)
    if lab.shape != (class_logits.rows,):
        raise ShapeError(f"need one label per row, got {lab.shape} for {class_logits.shape}")
    if lab.size and (lab.min() < 0 or lab.max() >= class_logits.cols):
        raise LabelError(f"label out of range for {class_logits.cols} classes")
    logp = dc.log_softmax_rows(class_logits)
    return dc.scale(dc.pick_columns(logp, lab).sum(), -1.0 / class_logits.rows)


def semantic_loss(student_logits: Tensor, teacher_dist) -> Tensor:
    """Cross-entropy of student logits against teacher probability rows.

    The teacher table is a constant; each row must already be a probability
    vector. Gradient reaches the student logits only.
    """
    student_logits = dc.as_tensor(student_logits)
    e = teacher_dist.data if isinstance(teacher_dist, Tensor) else np.asarray(teacher_dist, dtype=np.float64)
    if e.ndim != 2 or e.shape != student_logits.shape:
        raise ShapeError(
            f"teacher table shape {e.shape} does not match student logits {student_logits.shape}"
        )
    if student_logits.rows == 0:
        raise EmptyBatchError("batch contains no instances")
    if (e < 0.0).any():
        raise DistributionError("teacher rows must be non-negative")
    sums = e.sum(axis=1)
    if not np.allclose(sums, 1.0, atol=1e-9):
        raise DistributionError("teacher rows must each sum to 1")
    logp = dc.log_softmax_rows(student_logits)
    return dc.scale(dc.mul(Tensor(e), logp).sum(), -1.0 / student_logits.rows)


def total_loss(cls, se, in_loss, hcr, weights: LossWeights) -> Tensor:
    """Weighted sum: cls + l1*se + l2*in + l3*hcr.

    When both consistency variants are active the caller passes their sum
    as ``hcr``. Any non-finite term is rejected by name before mixing.
    """
    terms = {"cls": cls, "se": se, "in": in_loss, "hcr": hcr}
    for name, term in terms.items():
        t = dc.as_tensor(term)
        if t.shape != (1, 1):
            raise ShapeError(f"loss term '{name}' must be scalar, got {t.shape}")
        if not np.isfinite(t.data[0, 0]):
            raise NumericError(f"loss term '{name}' is non-finite")
    out = dc.add(dc.as_tensor(cls), dc.scale(dc.as_tensor(se), weights.lambda1))
    out = dc.add(out, dc.scale(dc.as_tensor(in_loss), weights.lambda2))
    return dc.add(out, dc.scale(dc.as_tensor(hcr), weights.lambda3))
