"""Finite-difference gradient verification.

The check casts all parameters to float64, evaluates the analytic gradient
via backward(), then perturbs every parameter element with a central
difference of the same forward function.  Running the forward in 64-bit
keeps the comparison meaningful while the production path stays 32-bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .tensor import Tensor, backward, zero_grads


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_param: str
    per_param: dict[str, float] = field(default_factory=dict)

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_err < tolerance

    def summary(self) -> str:
        return f"max relative error {self.max_rel_err:.3e} (worst: {self.worst_param})"


def _rel_err(a: float, b: float) -> float:
    # absolute/relative hybrid: negligible gradients cannot trip the check,
    # sign or scale errors on O(1) gradients always do
    return abs(a - b) / (abs(a) + abs(b) + 1e-4)


def finite_diff_check(f, params: dict[str, Tensor], step: float = 1e-4,
                      tolerance: float = 1e-3) -> GradCheckReport:
    """Compare analytic gradients of scalar `f(params)` with central differences.

    `f` must be deterministic (fix any internal sampling before calling).
    Returns the max relative error over every element of every parameter.
    """
    p64 = {k: Tensor(p.data.astype(np.float64), requires_grad=True) for k, p in params.items()}

    zero_grads(p64)
    loss = f(p64)
    if not np.isfinite(loss.item()):
        raise ValidationError("finite_diff_check: loss is non-finite at the base point")
    backward(loss)
    analytic = {}
    for k, p in p64.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise ValidationError(f"finite_diff_check: non-finite analytic gradient in '{k}'")
        analytic[k] = g.copy()

    per_param: dict[str, float] = {}
    worst = ("", 0.0)
    for k, p in p64.items():
        flat = p.data.reshape(-1)
        worst_here = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = f(p64).item()
            flat[i] = orig - step
            f_minus = f(p64).item()
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise ValidationError(f"finite_diff_check: non-finite perturbed loss at '{k}'[{i}]")
            numeric = (f_plus - f_minus) / (2.0 * step)
            err = _rel_err(float(analytic[k].reshape(-1)[i]), numeric)
            if err > worst_here:
                worst_here = err
        per_param[k] = worst_here
        if worst_here > worst[1]:
            worst = (k, worst_here)
    return GradCheckReport(max_rel_err=worst[1], worst_param=worst[0], per_param=per_param)
