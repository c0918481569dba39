"""Batch-level label selection, the asymmetric loss, and the cosine baseline."""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .tensor import Tensor

PROB_EPS = 1e-7


@dataclass
class AslConfig:
    gamma_pos: float = 0.0
    gamma_neg: float = 4.0
    margin: float = 0.05

    def __post_init__(self):
        if self.gamma_pos < 0 or self.gamma_neg < 0:
            raise ConfigurationError("focusing exponents must be >= 0")
        if not 0.0 <= self.margin < 1.0:
            raise ConfigurationError(f"margin must be in [0, 1), got {self.margin}")


@dataclass
class LabelSelection:
    selected: np.ndarray  # sorted indices of S' = positives + sampled negatives
    positives: np.ndarray
    sampled_negatives: np.ndarray
    alpha: float


def select_labels(batch_labels, alpha: float, stream) -> LabelSelection:
    """Pool positives across the batch, add min(alpha*|pos|, k-|pos|) uniform
    negatives sampled without replacement."""
    if alpha < 0:
        raise ConfigurationError(f"alpha must be >= 0, got {alpha}")
    labels = np.atleast_2d(np.asarray(batch_labels))
    k = labels.shape[1]
    positives = np.flatnonzero(labels.any(axis=0))
    negatives = np.setdiff1d(np.arange(k), positives)
    n_slt = min(int(alpha * len(positives)), len(negatives))
    if n_slt > 0:
        sampled = np.sort(stream.choice(negatives, size=n_slt, replace=False))
    else:
        sampled = np.array([], dtype=int)
    selected = np.sort(np.concatenate([positives, sampled])).astype(int)
    return LabelSelection(
        selected=selected,
        positives=positives.astype(int),
        sampled_negatives=sampled.astype(int),
        alpha=alpha,
    )


def asl_value_and_grad(p: np.ndarray, y: np.ndarray, cfg: AslConfig):
    """Asymmetric loss (mean over classes) and its gradient w.r.t. p.

    Positives: -(1-p)^g+ * log p. Negatives, with p_m = max(p - margin, 0):
    -(p_m)^g- * log(1 - p_m). With both exponents and the margin at zero this
    is exactly binary cross-entropy.
    """
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    y = np.asarray(y).reshape(-1)
    if p.shape != y.shape:
        raise ValueError(f"shapes differ: p {p.shape}, y {y.shape}")
    p = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    n = p.size
    gp, gn, m = cfg.gamma_pos, cfg.gamma_neg, cfg.margin

    loss = np.zeros(n)
    grad = np.zeros(n)
    pos = y == 1
    if pos.any():
        pp = p[pos]
        w = (1.0 - pp) ** gp
        loss[pos] = -w * np.log(pp)
        grad[pos] = -w / pp
        if gp > 0:
            grad[pos] += gp * (1.0 - pp) ** (gp - 1.0) * np.log(pp)
    neg = ~pos
    if neg.any():
        pm = np.maximum(p[neg] - m, 0.0)
        active = pm > 0
        lneg = np.zeros(pm.size)
        gneg = np.zeros(pm.size)
        pa = pm[active]
        w = pa**gn
        lneg[active] = -w * np.log1p(-pa)
        gneg[active] = w / (1.0 - pa)
        if gn > 0:
            gneg[active] += -gn * pa ** (gn - 1.0) * np.log1p(-pa)
        loss[neg] = lneg
        grad[neg] = gneg
    return float(loss.mean()), grad / n


def asl_loss(p, y, cfg: AslConfig):
    """Array-in, (scalar, gradient)-out form of the asymmetric loss."""
    return asl_value_and_grad(p, y, cfg)


def asl_loss_node(p: Tensor, y: np.ndarray, cfg: AslConfig) -> Tensor:
    """Graph form: scalar loss Tensor over a k x 1 probability column."""
    value, grad = asl_value_and_grad(p.value, y, cfg)
    grad_col = grad.reshape(p.value.shape).astype(p.value.dtype)

    def backward(g):
        p.grad += g[0, 0] * grad_col

    return Tensor(np.array([[value]], dtype=p.value.dtype),
                  _parents=(p,), _backward=backward)


def cosine_baseline(image_embedding, label_embeddings, eta: float = 0.5):
    """Cosine scores of one image embedding against every label embedding,
    thresholded at eta."""
    v = np.asarray(image_embedding, dtype=np.float64).reshape(-1)
    mat = np.atleast_2d(np.asarray(label_embeddings, dtype=np.float64))
    vn = np.linalg.norm(v)
    if vn == 0:
        raise ValueError("image embedding has zero norm")
    norms = np.linalg.norm(mat, axis=1)
    if np.any(norms == 0):
        raise ValueError("a label embedding has zero norm")
    scores = (mat @ v) / (norms * vn)
    return scores, scores > eta
