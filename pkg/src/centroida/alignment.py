"""Class-wise cross-domain feature alignment: pull same-class pairs together,
push different-class pairs apart, weighting every pair by prediction confidence."""

from __future__ import annotations

from dataclasses import dataclass

import torch

# Squared distances are clamped here before the square root, so coincident
# pairs get distance 1e-12 with zero gradient instead of a NaN gradient.
_MIN_SQ_DIST = 1e-24

# Weight products are clamped before their square root for the same reason;
# the (product > 0) mask keeps genuinely zero-weight pairs at exactly zero.
_MIN_SQ_WEIGHT = 1e-300


def pairwise_distances(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Euclidean distance matrix [len(a), len(b)] between two row sets.

    Differentiable everywhere: squared distances are clamped at 1e-24 before
    the square root, so coincident pairs report ~1e-12 rather than 0 and
    their gradient is 0 rather than NaN.
    """
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(
            f"expected 2-D inputs, got shapes {tuple(a.shape)} and {tuple(b.shape)}"
        )
    if a.shape[1] != b.shape[1]:
        raise ValueError(
            f"feature width mismatch: {a.shape[1]} vs {b.shape[1]}"
        )
    diff = a.unsqueeze(1) - b.unsqueeze(0)
    sq = (diff * diff).sum(dim=-1)
    return torch.sqrt(sq.clamp(min=_MIN_SQ_DIST))


@dataclass
class PairAssignment:
    """The full source-batch x target-batch pair grid for one iteration.

    ``dist[i, j]`` is the feature distance between source row i and target row
    j; labels decide which pairs count as same-class, and the per-row weights
    multiply into sqrt(w_src[i] * w_tgt[j]) per pair.
    """

    source_labels: torch.Tensor
    target_labels: torch.Tensor
    source_weights: torch.Tensor
    target_weights: torch.Tensor
    dist: torch.Tensor

    def __post_init__(self):
        ns, nt = self.dist.shape
        if self.source_labels.shape != (ns,) or self.target_labels.shape != (nt,):
            raise ValueError(
                f"label shapes {tuple(self.source_labels.shape)}/"
                f"{tuple(self.target_labels.shape)} do not match dist {tuple(self.dist.shape)}"
            )
        if self.source_weights.shape != (ns,) or self.target_weights.shape != (nt,):
            raise ValueError("weight vectors must match the batch sizes of dist")
        if (self.source_weights < 0).any() or (self.target_weights < 0).any():
            raise ValueError("pair weights must be non-negative")


def class_wise_loss(assign: PairAssignment) -> torch.Tensor | None:
    """Ratio of weighted mean same-class distance to weighted mean different-class distance.

    Each pair (i, j) is weighted by sqrt(w_src[i] * w_tgt[j]); minimizing the
    ratio tightens same-class cross-domain pairs relative to different-class
    ones.  Returns None (inactive) when either pair set is empty or carries
    zero total weight, so the caller can skip the term that iteration.
    """
    same = assign.source_labels.unsqueeze(1) == assign.target_labels.unsqueeze(0)
    prod = assign.source_weights.unsqueeze(1) * assign.target_weights.unsqueeze(0)
    w = (prod > 0).to(assign.dist.dtype) * torch.sqrt(prod.clamp(min=_MIN_SQ_WEIGHT))
    w_same = w * same
    w_diff = w * ~same
    same_total = w_same.sum()
    diff_total = w_diff.sum()
    if float(same_total.detach()) <= 0.0 or float(diff_total.detach()) <= 0.0:
        return None
    d_same = (w_same * assign.dist).sum() / same_total
    d_diff = (w_diff * assign.dist).sum() / diff_total
    return d_same / d_diff
