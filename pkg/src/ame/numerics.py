"""Dense float64 tensor helpers, parameter bookkeeping, and a gradient checker.

Tensors are plain numpy ``float64`` arrays in row-major layout; every public
operation here is deterministic for identical inputs and produces finite
values or raises. Checkpoints downcast to float32 at save time, all math in
between stays in double precision so finite-difference checks are meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DegenerateInputError, NumericError, ShapeError

Tensor = np.ndarray


def as_tensor(values) -> Tensor:
    """Coerce to a float64 array, rejecting NaN/Inf."""
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NumericError("tensor contains non-finite values")
    return arr


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with an explicit shape check.

    Raises ShapeError naming both shapes when the inner dimensions differ.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}: inner dimensions differ")
    return a @ b


def l2_normalize(v: Tensor) -> Tensor:
    """Scale a vector to unit Euclidean norm, preserving direction."""
    v = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise DegenerateInputError("cannot normalize a zero vector")
    if not np.isfinite(norm):
        raise NumericError("vector norm is not finite")
    return v / norm


def l2_normalize_rows(m: Tensor) -> Tensor:
    """Row-wise unit normalization of a 2-d array; zero rows are an error."""
    m = np.asarray(m, dtype=np.float64)
    norms = np.linalg.norm(m, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise DegenerateInputError(f"cannot normalize zero row(s) {zero[:5].tolist()}")
    return m / norms[:, None]


def svd_orthogonal_projection(w: Tensor) -> Tensor:
    """Nearest orthogonal matrix to ``w`` in Frobenius norm.

    Computed as U @ Vt from the singular value decomposition w = U S Vt.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ShapeError(f"expected a square matrix, got {w.shape}")
    if not np.all(np.isfinite(w)):
        raise NumericError("matrix contains non-finite values")
    try:
        u, _, vt = np.linalg.svd(w)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"SVD did not converge: {exc}") from exc
    return u @ vt


class ParamSet:
    """Named parameter tensors, each paired with a same-shape gradient buffer.

    Parameters are held by reference: optimizers mutate them in place and the
    arrays stay shared with whatever model object registered them. Gradient
    accumulation is single-writer.
    """

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.grads: dict[str, Tensor] = {}

    def add(self, name: str, tensor: Tensor) -> None:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        tensor = np.asarray(tensor)
        if tensor.dtype != np.float64:
            raise ShapeError(f"parameter {name!r} must be float64, got {tensor.dtype}")
        self.params[name] = tensor
        self.grads[name] = np.zeros_like(tensor)

    def names(self) -> list[str]:
        return list(self.params)

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def grad_norm(self) -> float:
        total = 0.0
        for g in self.grads.values():
            total += float(np.sum(g * g))
        return float(np.sqrt(total))

    def clip_grad_norm(self, max_norm: float) -> float:
        """Scale all gradients so their global norm is at most ``max_norm``."""
        norm = self.grad_norm()
        if norm > max_norm > 0.0:
            scale = max_norm / norm
            for g in self.grads.values():
                g *= scale
        return norm


@dataclass
class GradCheckReport:
    """Outcome of a finite-difference check against accumulated gradients."""

    per_param: dict[str, float] = field(default_factory=dict)
    max_rel_error: float = 0.0
    tolerance: float = 0.0
    passed: bool = False


def finite_diff_check(
    loss_fn: Callable[[ParamSet], float],
    params: ParamSet,
    epsilon: float = 1e-5,
    tolerance: float = 1e-4,
    max_coords: int = 128,
    seed: int = 0,
) -> GradCheckReport:
    """Compare accumulated analytic gradients against central differences.

    ``loss_fn`` must read the live arrays in ``params`` so that in-place
    perturbations are visible. Analytic gradients are expected to be already
    accumulated in ``params.grads``. Tensors larger than ``max_coords``
    entries are checked on a seeded random subsample of coordinates.

    Relative error per coordinate is |analytic - numeric| divided by
    max(1e-8, |analytic| + |numeric|).
    """
    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance=tolerance)
    for name, theta in params.params.items():
        flat = theta.reshape(-1)
        grad_flat = params.grads[name].reshape(-1)
        if flat.size <= max_coords:
            coords = np.arange(flat.size)
        else:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        worst = 0.0
        for i in coords:
            orig = flat[i]
            flat[i] = orig + epsilon
            loss_plus = float(loss_fn(params))
            flat[i] = orig - epsilon
            loss_minus = float(loss_fn(params))
            flat[i] = orig
            if not (np.isfinite(loss_plus) and np.isfinite(loss_minus)):
                raise NumericError(f"non-finite loss while probing {name!r} coordinate {int(i)}")
            numeric = (loss_plus - loss_minus) / (2.0 * epsilon)
            analytic = grad_flat[i]
            rel = abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))
            worst = max(worst, rel)
        report.per_param[name] = worst
        report.max_rel_error = max(report.max_rel_error, worst)
    report.passed = report.max_rel_error <= tolerance
    return report
