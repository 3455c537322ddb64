"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np

from .params import ParamStore
from .tape import Tensor, no_grad


class NumericError(ArithmeticError):
    pass


@dataclass
class GradReport:
    errors: dict = field(default_factory=dict)
    checked: dict = field(default_factory=dict)
    tolerance: float = 1e-4

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def failing(self) -> list[str]:
        return [k for k, v in self.errors.items() if v >= self.tolerance]


def relative_error(a: np.ndarray, n: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def grad_check(loss_fn: Callable[[], Tensor], store: ParamStore, tolerance: float = 1e-4,
               h: float = 1e-4, names: Optional[Iterable[str]] = None,
               max_entries: Optional[int] = None, rng: Optional[np.random.Generator] = None,
               floor: float = 1e-6) -> GradReport:
    """Compare backprop gradients of ``loss_fn()`` with central differences.

    ``max_entries`` caps how many coordinates of each array are probed (chosen
    at random with ``rng``); ``None`` probes every coordinate.
    """
    rng = rng or np.random.default_rng(0)
    names = [n for n in (store.names() if names is None else names) if n not in store.frozen]
    store.zero_grad()
    loss = loss_fn()
    if not np.all(np.isfinite(loss.data)):
        raise NumericError("loss is not finite")
    loss.backward()
    report = GradReport(tolerance=tolerance)
    for name in names:
        p = store[name]
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        if not np.all(np.isfinite(analytic)):
            raise NumericError(f"non-finite gradient for {name}")
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        num = np.empty(len(idx))
        with no_grad():
            for k, i in enumerate(idx):
                old = flat[i]
                flat[i] = old + h
                fp = float(loss_fn().data)
                flat[i] = old - h
                fm = float(loss_fn().data)
                flat[i] = old
                if not (np.isfinite(fp) and np.isfinite(fm)):
                    raise NumericError(f"non-finite loss while perturbing {name}")
                num[k] = (fp - fm) / (2.0 * h)
        err = relative_error(analytic.reshape(-1)[idx], num, floor)
        report.errors[name] = float(err.max()) if err.size else 0.0
        report.checked[name] = int(len(idx))
    store.zero_grad()
    return report
