from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class GradReport:
    errors: dict[str, float] = field(default_factory=dict)
    tolerance: float = 1e-4

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def __str__(self):
        lines = [f"{name:>16s}  {err:.3e}" for name, err in self.errors.items()]
        lines.append(f"{'PASS' if self.passed else 'FAIL'} (max {self.max_error:.3e}, tol {self.tolerance:.1e})")
        return "\n".join(lines)


def relative_error(analytic, numeric, floor=1e-6) -> float:
    """``||a - n|| / max(||a|| + ||n||, floor)``.

    The floor keeps parameters whose true gradient is zero (a bias in front
    of batch-norm, say) from comparing round-off against round-off.
    """
    diff = np.linalg.norm(np.ravel(analytic) - np.ravel(numeric))
    scale = np.linalg.norm(analytic) + np.linalg.norm(numeric)
    return float(diff / max(scale, floor))


def numeric_gradient(f, x, epsilon):
    """Central differences of scalar ``f`` w.r.t. every entry of ``x`` (in place, restored)."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + epsilon
        fp = f()
        x[idx] = orig - epsilon
        fm = f()
        x[idx] = orig
        grad[idx] = (fp - fm) / (2 * epsilon)
    return grad


def gradient_check(model, x, loss_fn, epsilon=1e-5, tolerance=1e-4, mode="train", check_input=True, floor=1e-6):
    """Compare backprop gradients of ``loss_fn(model(x))`` with central differences.

    ``loss_fn`` maps the model output to ``(loss, d loss / d output)``.
    Batch-norm running statistics are restored afterwards, so checking a
    model does not alter it.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    x = np.array(x, dtype=np.float64)
    saved = {k: v.copy() for k, v in model.named_buffers()}

    out = model.forward(x, mode=mode)
    _, upstream = loss_fn(out)
    dx = model.backward(upstream)
    analytic = {k: v.copy() for k, v in model.named_gradients()}

    def f():
        return loss_fn(model.forward(x, mode=mode))[0]

    report = GradReport(tolerance=tolerance)
    for i, layer in enumerate(model.layers):
        for name, p in layer.params.items():
            key = f"{i}.{name}"
            report.errors[key] = relative_error(analytic[key], numeric_gradient(f, p, epsilon), floor)
    if check_input:
        report.errors["input"] = relative_error(dx, numeric_gradient(f, x, epsilon), floor)

    model.load_state(saved)
    return report
