"""Accumulative per-class feature centroids and the centroid alignment loss.

Batches are tiny relative to the class count in imbalanced problems, so
per-batch class means are noisy or undefined.  ``CentroidStore`` instead
accumulates a confidence-weighted running mean per class across an epoch:
each update folds a batch into the stored centroids with weight equal to the
predictions' max probability, and the stored accumulated weight grows
accordingly.  Stores are reset at every epoch boundary."""

from __future__ import annotations

import torch

from .alignment import pairwise_distances

# Treat all-pairs-coincident centroid layouts as degenerate rather than
# feeding the loss a ~1e-12 denominator from the distance clamp.
_COINCIDENT = 2e-12


class CentroidsNotReady(RuntimeError):
    """Raised when no class has accumulated any weight yet."""


class CentroidStore:
    """Running weighted class centroids for one domain.

    ``centroids`` after an update carries gradients through that batch's
    features and weights; the state folded in from previous batches is
    detached, so backprop touches only the current iteration (the accumulated
    history acts as a constant anchor).
    """

    def __init__(self, n_classes: int, feat_dim: int, dtype: torch.dtype = torch.float64):
        if n_classes < 1 or feat_dim < 1:
            raise ValueError(f"bad store shape ({n_classes} classes, {feat_dim} dims)")
        self.n_classes = n_classes
        self.feat_dim = feat_dim
        self.dtype = dtype
        self.reset()

    def reset(self) -> None:
        """Zero all centroids and accumulated weights (epoch boundary)."""
        self.centroids = torch.zeros(self.n_classes, self.feat_dim, dtype=self.dtype)
        self.acc_weight = torch.zeros(self.n_classes, dtype=self.dtype)

    def eligible(self) -> torch.Tensor:
        """Boolean mask of classes that have accumulated any weight."""
        return self.acc_weight.detach() > 0

    def update(self, feats: torch.Tensor, weights: torch.Tensor, labels: torch.Tensor) -> None:
        """Fold one batch into the running centroids.

        New centroid for class k: (C_k * P_k + sum_i w_i f_i) / (P_k + sum_i w_i)
        over batch rows i labeled k, where P_k is the accumulated weight; the
        accumulated weight then grows by sum_i w_i.  Classes absent from the
        batch (or present only with zero weight) are left untouched.
        """
        if feats.ndim != 2 or feats.shape[1] != self.feat_dim:
            raise ValueError(
                f"expected features [batch, {self.feat_dim}], got {tuple(feats.shape)}"
            )
        n = feats.shape[0]
        if weights.shape != (n,) or labels.shape != (n,):
            raise ValueError("weights and labels must be 1-D with one entry per row")
        if (weights.detach() < 0).any():
            raise ValueError("centroid weights must be non-negative")
        labels = labels.long()
        if labels.numel() and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise ValueError(
                f"labels must lie in [0, {self.n_classes}), got "
                f"[{int(labels.min())}, {int(labels.max())}]"
            )
        feat_sum = torch.zeros_like(self.centroids).index_add_(
            0, labels, feats * weights.unsqueeze(1)
        )
        w_sum = torch.zeros_like(self.acc_weight).index_add_(0, labels, weights)

        old_c = self.centroids.detach()
        old_w = self.acc_weight.detach()
        present = (w_sum.detach() > 0).unsqueeze(1)
        denom = (old_w + w_sum).unsqueeze(1)
        safe_denom = torch.where(present, denom, torch.ones_like(denom))
        merged = (old_c * old_w.unsqueeze(1) + feat_sum) / safe_denom
        self.centroids = torch.where(present, merged, old_c)
        self.acc_weight = old_w + w_sum

    def detach_(self) -> None:
        """Drop any autograd graph hanging off the stored state."""
        self.centroids = self.centroids.detach()
        self.acc_weight = self.acc_weight.detach()


def nearest_centroid_labels(store: CentroidStore, feats: torch.Tensor) -> torch.Tensor:
    """Label each feature row by its nearest eligible centroid (no gradients).

    Only classes with accumulated weight participate; distance ties go to the
    lowest class id.  Raises CentroidsNotReady when no class is eligible yet,
    so callers can fall back to classifier predictions.
    """
    elig = store.eligible()
    if not bool(elig.any()):
        raise CentroidsNotReady("no class has accumulated weight yet")
    class_ids = torch.nonzero(elig, as_tuple=False).squeeze(1)
    with torch.no_grad():
        d = pairwise_distances(feats.detach(), store.centroids.detach()[class_ids])
        return class_ids[d.argmin(dim=1)]


def centroid_alignment_loss(
    source: CentroidStore, target: CentroidStore
) -> torch.Tensor | None:
    """Normalized sum of same-class source-target centroid distances.

    With E the classes eligible in both stores, the loss is
    |E| * sum_k ||C_k^s - C_k^t|| / sum_{i,j} ||C_i^s - C_j^t||, the
    denominator running over all ordered cross-domain pairs of eligible
    classes (same-class pairs included).  The normalization makes the loss
    scale-free: it compares same-class gaps to the overall centroid geometry
    instead of absolute distances.  Returns None (inactive) when fewer than
    two classes are eligible in both stores or all pairs coincide.
    """
    if source.n_classes != target.n_classes or source.feat_dim != target.feat_dim:
        raise ValueError("source and target stores must share shape")
    both = source.eligible() & target.eligible()
    n_eligible = int(both.sum())
    if n_eligible < 2:
        return None
    cs = source.centroids[both]
    ct = target.centroids[both]
    d = pairwise_distances(cs, ct)
    if float(d.detach().max()) <= _COINCIDENT:
        return None
    return n_eligible * d.diagonal().sum() / d.sum()
