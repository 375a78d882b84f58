"""Regression losses: L1, epsilon-insensitive, and their sum."""

from __future__ import annotations

import torch


def epsilon_loss(gt: float, pred: float, epsilon: float) -> float:
    """Zero inside the tube ``|gt - pred| < epsilon``, linear outside."""
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    err = abs(gt - pred)
    if err < epsilon:
        return 0.0
    return err - epsilon


def total_loss(gt: float, pred: float, epsilon: float) -> float:
    return abs(gt - pred) + epsilon_loss(gt, pred, epsilon)


def epsilon_loss_t(gt: torch.Tensor, pred: torch.Tensor, epsilon: float) -> torch.Tensor:
    """Element-wise tensor version; ``relu`` reproduces both branches exactly."""
    return torch.relu((gt - pred).abs() - epsilon)


LOSS_KINDS = ("l1", "eps", "both")


def regression_loss(gt: torch.Tensor, pred: torch.Tensor, epsilon: float, kind: str = "both") -> torch.Tensor:
    """Batch-mean training loss; ``kind`` picks L1, epsilon-insensitive, or both."""
    if kind == "l1":
        per = (gt - pred).abs()
    elif kind == "eps":
        per = epsilon_loss_t(gt, pred, epsilon)
    elif kind == "both":
        per = (gt - pred).abs() + epsilon_loss_t(gt, pred, epsilon)
    else:
        raise ValueError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")
    return per.mean()
