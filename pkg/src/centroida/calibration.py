"""Temperature-scaled class probabilities and confidence-based sample weights."""

from __future__ import annotations

from dataclasses import dataclass

import torch


def temperature_softmax(logits: torch.Tensor, temperature: float) -> torch.Tensor:
    """Row-wise softmax of logits / temperature, stabilized by max subtraction.

    Higher temperature flattens the distribution; temperature must be > 0.
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    if logits.ndim != 2:
        raise ValueError(f"logits must be [batch, classes], got shape {tuple(logits.shape)}")
    if not torch.isfinite(logits).all():
        raise ValueError("non-finite logits")
    z = logits / temperature
    z = z - z.amax(dim=1, keepdim=True)
    e = torch.exp(z)
    return e / e.sum(dim=1, keepdim=True)


def max_prob(probs: torch.Tensor) -> torch.Tensor:
    """Per-row maximum probability (the confidence of the argmax class)."""
    if probs.ndim != 2:
        raise ValueError(f"probs must be [batch, classes], got shape {tuple(probs.shape)}")
    return probs.amax(dim=1)


def row_entropy(probs: torch.Tensor, eps: float = 1e-12) -> torch.Tensor:
    """Shannon entropy of each probability row (natural log).

    Probabilities are clamped to ``eps`` inside the log so exact zeros
    contribute 0 * log(eps) = 0 rather than NaN.
    """
    if probs.ndim != 2:
        raise ValueError(f"probs must be [batch, classes], got shape {tuple(probs.shape)}")
    return -(probs * torch.log(probs.clamp(min=eps))).sum(dim=1)


def batch_weights(probs: torch.Tensor) -> torch.Tensor:
    """Confidence weight for each row: certain rows count more, uncertain less.

    Row i gets B * (1 + exp(-H_i)) / sum_k (1 + exp(-H_k)) * max_prob_i, where
    H is row entropy and B the batch size.  The entropy factor alone averages
    to exactly 1 across the batch.
    """
    h = row_entropy(probs)
    c = 1.0 + torch.exp(-h)
    return probs.shape[0] * c / c.sum() * max_prob(probs)


@dataclass
class ProbBatch:
    """Calibrated probabilities plus the per-row statistics the losses consume."""

    probs: torch.Tensor
    max_prob: torch.Tensor
    entropy: torch.Tensor
    weight: torch.Tensor

    @classmethod
    def from_logits(cls, logits: torch.Tensor, temperature: float) -> "ProbBatch":
        probs = temperature_softmax(logits, temperature)
        return cls(
            probs=probs,
            max_prob=max_prob(probs),
            entropy=row_entropy(probs),
            weight=batch_weights(probs),
        )

    def validate(self, tol: float = 1e-6) -> None:
        """Assert the probability rows and derived stats are self-consistent."""
        b, _ = self.probs.shape
        if not torch.isfinite(self.probs).all():
            raise ValueError("non-finite probabilities")
        if (self.probs < 0).any() or (self.probs > 1).any():
            raise ValueError("probabilities outside [0, 1]")
        row_sums = self.probs.sum(dim=1)
        if (row_sums - 1.0).abs().max() > tol:
            raise ValueError("probability rows do not sum to 1")
        c = 1.0 + torch.exp(-self.entropy)
        norm_sum = (b * c / c.sum()).sum()
        if abs(float(norm_sum) - b) > tol:
            raise ValueError("entropy normalization does not sum to batch size")
