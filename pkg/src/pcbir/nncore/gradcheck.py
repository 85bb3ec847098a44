"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .layers import Network, Parameter
from .tensor import Tensor, no_grad, record_branches


@dataclass
class GradCheckReport:
    epsilon: float
    tolerance: float
    max_rel_error: dict[str, float] = field(default_factory=dict)
    checked: dict[str, int] = field(default_factory=dict)
    skipped: dict[str, int] = field(default_factory=dict)

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst < self.tolerance

    @property
    def skipped_fraction(self) -> float:
        total = sum(self.checked.values()) + sum(self.skipped.values())
        return sum(self.skipped.values()) / total if total else 0.0

    def lines(self) -> list[str]:
        return [f"{name}: max rel err {err:.3e} over {self.checked[name]} scalars"
                + (f" ({self.skipped[name]} straddled a kink)" if self.skipped.get(name) else "")
                for name, err in self.max_rel_error.items()]


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def grad_check_fn(loss_fn: Callable[[], Tensor], params: Sequence[Parameter],
                  epsilon: float = 1e-3, tolerance: float = 1e-2,
                  inputs: Sequence[Tensor] = (), dtype=np.float64,
                  max_scalars: int = 2000, seed: int = 0, floor: float = 1e-6,
                  skip_kinks: bool = True) -> GradCheckReport:
    """Compare backprop gradients of ``loss_fn()`` with central differences.

    Parameters and ``inputs`` are promoted to ``dtype`` while checking and
    restored bit-exactly afterwards; float32 round-off at the default
    epsilon would otherwise swamp small gradient entries. If the parameters
    hold more than ``max_scalars`` entries in total, a seeded subset is
    perturbed.

    Entries whose gradient is below ``floor`` in magnitude are compared in
    absolute terms. With ``skip_kinks`` an entry is left out (and counted
    in ``skipped``) when either perturbed evaluation switches a branch of
    a non-smooth op such as relu or abs, since the difference quotient then
    spans two smooth pieces.
    """
    params = list(params)
    tensors = params + [t for t in inputs if isinstance(t, Tensor)]
    saved = [t.data for t in tensors]
    saved_grads = [p.grad for p in params]
    report = GradCheckReport(epsilon=epsilon, tolerance=tolerance)
    try:
        for t in tensors:
            t.data = t.data.astype(dtype)
        for p in params:
            p.grad = None
        loss_fn().backward()
        analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.astype(dtype) for p in params]

        total = sum(p.size for p in params)
        rng = np.random.default_rng(seed)
        keep = None
        if total > max_scalars:
            keep = np.zeros(total, dtype=bool)
            keep[rng.choice(total, size=max_scalars, replace=False)] = True

        with no_grad(), record_branches() as base_branches:
            loss_fn()
        base_branches = list(base_branches)

        def evaluate() -> tuple[float, bool]:
            with record_branches() as branches:
                value = float(loss_fn().data)
            return value, branches == base_branches

        offset = 0
        with no_grad():
            for p, grad in zip(params, analytic):
                flat = p.data.reshape(-1)
                errors = []
                skipped = 0
                for k in range(flat.size):
                    if keep is not None and not keep[offset + k]:
                        continue
                    orig = flat[k]
                    flat[k] = orig + epsilon
                    f_plus, same_plus = evaluate()
                    flat[k] = orig - epsilon
                    f_minus, same_minus = evaluate()
                    flat[k] = orig
                    if skip_kinks and not (same_plus and same_minus):
                        skipped += 1
                        continue
                    numeric = (f_plus - f_minus) / (2.0 * epsilon)
                    errors.append(float(relative_error(grad.reshape(-1)[k], numeric, floor)))
                offset += flat.size
                label = p.name or f"param{len(report.max_rel_error)}"
                report.max_rel_error[label] = max(errors, default=0.0)
                report.checked[label] = len(errors)
                report.skipped[label] = skipped
    finally:
        for t, data in zip(tensors, saved):
            t.data = data
        for p, g in zip(params, saved_grads):
            p.grad = g
    return report


def projection_loss(output: Tensor, seed: int = 0) -> Tensor:
    """A scalar with a dense, non-degenerate gradient: <output, R> for fixed random R."""
    weights = np.random.default_rng(seed).normal(size=output.shape).astype(output.dtype)
    return (output * weights).sum()


def grad_check(network: Network, input: Tensor, epsilon: float = 1e-3, tolerance: float = 1e-2,
               loss: Callable[[Tensor], Tensor] | None = None, **kwargs) -> GradCheckReport:
    """Gradient-check every parameter of ``network`` on one input batch."""
    x = input if isinstance(input, Tensor) else Tensor(input)
    loss = loss or projection_loss
    return grad_check_fn(lambda: loss(network(x)), network.parameters(), epsilon, tolerance,
                         inputs=[x], **kwargs)
