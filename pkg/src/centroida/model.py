"""Feature extractor + classifier model, momentum SGD, and the LR schedule.

Everything runs in float64 so loss values and gradients are reproducible to
the last bit across runs on the same machine."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import torch
from torch import nn


class BottleneckClassifier(nn.Module):
    """Two-layer ReLU feature extractor with a linear classifier head.

    ``features(x)`` returns the bottleneck activations that the centroid and
    alignment losses operate on; ``forward`` returns (features, logits).
    Weights and biases are initialized uniformly in +-1/sqrt(fan_in) from a
    dedicated torch.Generator, so construction with the same seed is
    bit-identical regardless of global RNG state.
    """

    def __init__(
        self,
        in_dim: int,
        hidden_dim: int,
        feature_dim: int,
        n_classes: int,
        seed: int = 0,
        dtype: torch.dtype = torch.float64,
    ):
        super().__init__()
        if min(in_dim, hidden_dim, feature_dim, n_classes) < 1:
            raise ValueError(
                f"all widths must be >= 1, got in={in_dim} hidden={hidden_dim} "
                f"feature={feature_dim} classes={n_classes}"
            )
        self.in_dim = in_dim
        self.feature_dim = feature_dim
        self.n_classes = n_classes
        self.fc1 = nn.Linear(in_dim, hidden_dim, dtype=dtype)
        self.fc2 = nn.Linear(hidden_dim, feature_dim, dtype=dtype)
        self.head = nn.Linear(feature_dim, n_classes, dtype=dtype)
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for layer in (self.fc1, self.fc2, self.head):
                bound = 1.0 / math.sqrt(layer.in_features)
                layer.weight.uniform_(-bound, bound, generator=gen)
                layer.bias.uniform_(-bound, bound, generator=gen)

    def _check_input(self, x: torch.Tensor) -> None:
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(
                f"expected input [batch, {self.in_dim}], got {tuple(x.shape)}"
            )
        for name, p in self.named_parameters():
            if not torch.isfinite(p).all():
                raise RuntimeError(f"non-finite parameter detected: {name}")

    def features(self, x: torch.Tensor) -> torch.Tensor:
        self._check_input(x)
        return self.fc2(torch.relu(self.fc1(x)))

    def classify(self, feats: torch.Tensor) -> torch.Tensor:
        return self.head(feats)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        feats = self.features(x)
        return feats, self.classify(feats)


class MomentumSGD:
    """Classic momentum SGD: v <- m*v + g; theta <- theta - lr*v.

    Velocities start at zero.  ``step`` accepts a per-call learning rate so a
    schedule can drive it; a non-finite gradient aborts with the parameter's
    name.  Parameters with no gradient are treated as zero-gradient (their
    velocity still decays).
    """

    def __init__(self, named_params, lr: float, momentum: float = 0.9):
        if lr <= 0:
            raise ValueError(f"lr must be > 0, got {lr}")
        if not 0.0 <= momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {momentum}")
        self._params = [(name, p) for name, p in named_params]
        if not self._params:
            raise ValueError("no parameters to optimize")
        self.lr = lr
        self.momentum = momentum
        self._velocity = [torch.zeros_like(p) for _, p in self._params]

    def zero_grad(self) -> None:
        for _, p in self._params:
            p.grad = None

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        with torch.no_grad():
            for (name, p), v in zip(self._params, self._velocity):
                g = p.grad
                if g is None:
                    g = torch.zeros_like(p)
                elif not torch.isfinite(g).all():
                    raise RuntimeError(f"non-finite gradient in {name}")
                v.mul_(self.momentum).add_(g)
                p.add_(v, alpha=-lr)


def lr_schedule(progress: float, lr0: float) -> float:
    """Annealed learning rate lr0 / (1 + 10*progress)^0.75 for progress in [0, 1]."""
    if not 0.0 <= progress <= 1.0:
        raise ValueError(f"progress must be in [0, 1], got {progress}")
    return lr0 / (1.0 + 10.0 * progress) ** 0.75


def save_checkpoint(model: BottleneckClassifier, path: str | Path) -> None:
    """Write all parameters as float64 arrays; round-trips bit-exactly."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    np.savez(path, **arrays)


def load_checkpoint(model: BottleneckClassifier, path: str | Path) -> None:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with np.load(path) as data:
        state = {k: torch.from_numpy(np.array(data[k])) for k in data.files}
    model.load_state_dict(state, strict=True)
