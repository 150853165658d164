"""Finite-difference verification of reverse-mode gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from pixelens.autodiff import Tensor


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    passed: bool
    per_input: list
    checks: int


def _rel_error(a, fd):
    denom = max(abs(a), abs(fd))
    if denom < 1e-8:  # both effectively zero: compare absolutely
        return abs(a - fd)
    return abs(a - fd) / denom


def grad_check(f, point, tolerance=1e-4, step=1e-5,
               max_checks_per_input=None, seed=0) -> GradCheckReport:
    """Compare reverse-mode gradients of scalar f against central differences.

    `f` takes Tensors and returns a scalar Tensor; it must be pure. `point`
    is one ndarray or a sequence of ndarrays; everything is evaluated in
    float64. With max_checks_per_input set, a seeded subset of coordinates
    is probed per input instead of all of them.
    """
    if isinstance(point, np.ndarray):
        points = [point]
    else:
        points = list(point)
    points = [np.asarray(p, dtype=np.float64) for p in points]

    tensors = [Tensor(p.copy(), requires_grad=True) for p in points]
    y = f(*tensors)
    if y.size != 1:
        raise ValueError(f"grad_check: f must return a scalar, got shape {y.shape}")
    y.backward()
    analytic = [
        t.grad if t.grad is not None else np.zeros_like(t.data)
        for t in tensors
    ]

    def eval_at(values):
        out = f(*[Tensor(v) for v in values])
        return float(out.data.reshape(()))

    rng = np.random.default_rng(seed)
    per_input = []
    total_checks = 0
    for i, p in enumerate(points):
        idx = np.arange(p.size)
        if max_checks_per_input is not None and p.size > max_checks_per_input:
            idx = rng.choice(p.size, size=max_checks_per_input, replace=False)
        worst = 0.0
        flat_grad = analytic[i].reshape(-1)
        for j in idx:
            bumped = [q.copy() for q in points]
            bumped[i].reshape(-1)[j] += step
            up = eval_at(bumped)
            bumped[i].reshape(-1)[j] -= 2 * step
            down = eval_at(bumped)
            fd = (up - down) / (2 * step)
            worst = max(worst, _rel_error(flat_grad[j], fd))
            total_checks += 1
        per_input.append(worst)
    max_err = max(per_input) if per_input else 0.0
    return GradCheckReport(
        max_rel_error=max_err,
        tolerance=tolerance,
        passed=max_err < tolerance,
        per_input=per_input,
        checks=total_checks,
    )
