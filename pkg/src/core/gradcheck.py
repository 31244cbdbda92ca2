"""
Gradcheck - Compare tape gradients against central finite differences
"""

import logging
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Optional, Tuple

import numpy as np

from .tensor import Tensor, backward, no_grad

logger = logging.getLogger(__name__)

# Gradients smaller than this are compared absolutely rather than relatively
RELATIVE_FLOOR = 1e-3


@dataclass
class GradCheckReport:
    """Outcome of a finite-difference comparison"""
    passed: bool
    max_rel_error: float
    worst: Optional[Tuple[str, Tuple[int, ...]]]
    checked: int
    tolerance: float

    def __str__(self) -> str:
        status = "passed" if self.passed else "FAILED"
        return (f"grad check {status}: max rel error {self.max_rel_error:.3e} "
                f"over {self.checked} coords (tol {self.tolerance:g}, worst {self.worst})")


def _relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), RELATIVE_FLOOR)


def _scalar(out: Tensor) -> float:
    return float(np.sum(out.data))


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-5,
               tol: float = 1e-4) -> GradCheckReport:
    """
    Check d f(x) / dx coordinate by coordinate

    Non-scalar outputs are summed.

    Args:
        f: Deterministic tensor function
        x: Point to check at (left untouched)
        step: Central-difference half width
        tol: Maximum accepted relative error

    Returns:
        GradCheckReport
    """
    point = Tensor(x.data, requires_grad=True)
    out = f(point)
    if out.size != 1:
        out = out.sum()
    if out is point:
        analytic = np.ones_like(point.data)
    elif out._ctx is None:
        analytic = np.zeros_like(point.data)
    else:
        backward(out)
        analytic = point.grad if point.grad is not None else np.zeros_like(point.data)

    worst, max_err = None, 0.0
    base = np.array(x.data, dtype=np.float64)
    with no_grad():
        for idx in np.ndindex(base.shape):
            shifted = base.copy()
            shifted[idx] = base[idx] + step
            upper = _scalar(f(Tensor(shifted)))
            shifted[idx] = base[idx] - step
            lower = _scalar(f(Tensor(shifted)))
            err = _relative_error(float(analytic[idx]), (upper - lower) / (2 * step))
            if err > max_err or worst is None:
                worst, max_err = ("x", idx), max(err, max_err)
    report = GradCheckReport(max_err < tol, max_err, worst, base.size, tol)
    logger.debug(str(report))
    return report


def grad_check_params(loss_fn: Callable[[], Tensor], params: Mapping[str, Tensor],
                      step: float = 1e-5, tol: float = 1e-4, max_coords: Optional[int] = None,
                      seed: int = 0, names: Optional[Iterable[str]] = None) -> GradCheckReport:
    """
    Check the gradient of a scalar loss against every named parameter

    Args:
        loss_fn: Closure recomputing the loss from the current parameter values
        params: Parameters the closure reads (perturbed in place, then restored)
        step: Central-difference half width
        tol: Maximum accepted relative error
        max_coords: Sample at most this many coordinates per tensor (None = all)
        seed: Seed of the coordinate sampler
        names: Restrict the check to these parameter names

    Returns:
        GradCheckReport naming the worst parameter coordinate
    """
    selected = list(names) if names is not None else list(params)
    for name in selected:
        params[name].grad = None
    backward(loss_fn())
    analytic = {
        name: (params[name].grad.copy() if params[name].grad is not None else np.zeros_like(params[name].data))
        for name in selected
    }
    for name in selected:
        params[name].grad = None

    rng = np.random.default_rng(seed)
    worst, max_err, checked = None, 0.0, 0
    with no_grad():
        for name in selected:
            data = params[name].data
            coords = list(np.ndindex(data.shape))
            if max_coords is not None and len(coords) > max_coords:
                picks = rng.choice(len(coords), size=max_coords, replace=False)
                coords = [coords[i] for i in sorted(picks)]
            for idx in coords:
                original = data[idx]
                data[idx] = original + step
                upper = _scalar(loss_fn())
                data[idx] = original - step
                lower = _scalar(loss_fn())
                data[idx] = original
                err = _relative_error(float(analytic[name][idx]), (upper - lower) / (2 * step))
                checked += 1
                if err > max_err or worst is None:
                    worst, max_err = (name, idx), max(err, max_err)
    report = GradCheckReport(max_err < tol, max_err, worst, checked, tol)
    logger.info(str(report))
    return report
