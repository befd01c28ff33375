"""
Central-difference gradient checking against the tape.
"""
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from src.autodiff.module import Parameter
from src.autodiff.tensor import Tensor, recording

FD_STEP = 1e-6


@dataclass
class GradCheckReport:
    max_rel_error: float
    checked: int
    worst_parameter: str = ""
    worst_index: tuple = ()
    errors: dict = field(default_factory=dict)

    def passed(self, tol: float) -> bool:
        return self.max_rel_error < tol


def analytic_gradients(closure: Callable[[], Tensor], params: Sequence[Parameter]) -> list[np.ndarray]:
    """Gradients of the scalar closure with respect to params, via one recorded pass."""
    for p in params:
        p.grad = None
    with recording() as tape:
        loss = closure()
    tape.backward(loss)
    return [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]


def grad_check(
    closure: Callable[[], Tensor],
    params: Sequence[Parameter],
    coords_per_param: int | None = 8,
    rng: np.random.Generator | None = None,
    step: float = FD_STEP,
    analytic: Sequence[np.ndarray] | None = None,
    abs_floor: float | None = None,
) -> GradCheckReport:
    """Compare analytic gradients with central differences on a random coordinate subset.

    Relative error is |a - n| / max(|a|, |n|, floor), where the floor
    defaults to 1e-5 * max(1, |f|) so coordinates with vanishing gradient
    are judged against the rounding noise of the difference quotient.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    params = list(params)
    if analytic is None:
        analytic = analytic_gradients(closure, params)
    f0 = closure().item()
    floor = abs_floor if abs_floor is not None else 1e-5 * max(1.0, abs(f0))

    report = GradCheckReport(max_rel_error=0.0, checked=0)
    for p, grad in zip(params, analytic):
        flat_count = p.data.size
        if coords_per_param is None or coords_per_param >= flat_count:
            picks = np.arange(flat_count)
        else:
            picks = np.sort(rng.choice(flat_count, size=coords_per_param, replace=False))
        worst_here = 0.0
        for flat in picks:
            index = np.unravel_index(flat, p.data.shape)
            original = p.data[index]
            p.data[index] = original + step
            f_plus = closure().item()
            p.data[index] = original - step
            f_minus = closure().item()
            p.data[index] = original
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = float(grad[index])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            report.checked += 1
            worst_here = max(worst_here, rel)
            if rel > report.max_rel_error:
                report.max_rel_error = rel
                report.worst_parameter = p.name
                report.worst_index = tuple(int(i) for i in index)
        report.errors[p.name] = worst_here
    return report
