"""Shared test utilities: finite-difference gradients and relative-error checks."""

from __future__ import annotations

from typing import Callable

import numpy as np
import torch


def rel_err(a: float, b: float, floor: float = 1e-12) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def fd_gradient(closure: Callable[[], torch.Tensor], param: torch.Tensor, h: float = 1e-4) -> torch.Tensor:
    """Central finite-difference gradient of ``closure()`` wrt every entry of ``param``.

    The closure must rebuild the scalar from scratch on each call (it is
    evaluated 2 * param.numel() times with the parameter perturbed in place).
    """
    grad = torch.zeros_like(param)
    flat = param.data.view(-1)
    gflat = grad.view(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        with torch.no_grad():
            flat[i] = orig + h
            up = float(closure())
            flat[i] = orig - h
            down = float(closure())
            flat[i] = orig
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def assert_grad_close(
    analytic: torch.Tensor,
    numeric: torch.Tensor,
    rtol: float = 1e-4,
    atol: float = 1e-7,
    context: str = "",
) -> None:
    """Every entry must satisfy |a - n| <= max(rtol * max(|a|, |n|), atol).

    The absolute floor covers near-zero gradient entries, where central
    differences carry O(h^2) truncation noise that swamps any relative bound.
    """
    a = analytic.detach().reshape(-1)
    n = numeric.detach().reshape(-1)
    diff = (a - n).abs()
    allowed = torch.maximum(rtol * torch.maximum(a.abs(), n.abs()), torch.full_like(a, atol))
    bad = diff > allowed
    if bad.any():
        i = int(torch.argmax(diff - allowed))
        raise AssertionError(
            f"gradient mismatch {context} at flat index {i}: "
            f"analytic {a[i].item():.10e} vs numeric {n[i].item():.10e} "
            f"(diff {diff[i].item():.3e}, allowed {allowed[i].item():.3e})"
        )


def random_orthogonal(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-ish random orthogonal matrix via QR with sign fix."""
    m = rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(m)
    return q * np.sign(np.diag(r))
