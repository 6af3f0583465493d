"""Piecewise-linear primitives that can record which branch each element took.

Finite-difference checks are only meaningful where the loss is differentiable. With
recording on, every ReLU, absolute value and clamp logs its branch pattern, so a
checker can tell when a perturbation moved some element across a kink.
"""
from __future__ import annotations

from contextlib import contextmanager

import torch

_record: list | None = None


@contextmanager
def record_branches():
    global _record
    prev, _record = _record, []
    try:
        yield _record
    finally:
        _record = prev


def _log(pattern: torch.Tensor) -> None:
    if _record is not None:
        _record.append(pattern.detach().to(torch.int8).reshape(-1))


def relu(x):
    _log(x > 0)
    return torch.relu(x)


def absval(x):
    _log(torch.sign(x))
    return x.abs()


def clamp(x, lo=None, hi=None):
    if _record is not None:
        below = (x < lo) if lo is not None else torch.zeros_like(x, dtype=torch.bool)
        above = (x > hi) if hi is not None else torch.zeros_like(x, dtype=torch.bool)
        _log(below.to(torch.int8) - above.to(torch.int8))
    return torch.clamp(x, lo, hi)


def same_pattern(a: list, b: list) -> bool:
    return len(a) == len(b) and all(x.shape == y.shape and torch.equal(x, y) for x, y in zip(a, b))
