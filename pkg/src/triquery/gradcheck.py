"""Central-difference verification of analytic gradients.

Meant to run in f64; f32 roundoff swamps the eps=1e-6 stencil. Coordinates
are subsampled per parameter (deterministically) so whole-pipeline checks on
micro instances stay fast.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import NumericError, backward


@dataclass
class GradCheckEntry:
    name: str
    max_rel_err: float
    checked: int

    def ok(self, tol: float) -> bool:
        return self.max_rel_err <= tol


@dataclass
class GradCheckReport:
    tol: float
    eps: float
    entries: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.ok(self.tol) for e in self.entries)

    def worst(self) -> GradCheckEntry:
        return max(self.entries, key=lambda e: e.max_rel_err)

    def summary(self) -> str:
        lines = []
        for e in self.entries:
            state = "ok" if e.ok(self.tol) else "FAIL"
            lines.append(f"  {state:4s} {e.name}: max rel err {e.max_rel_err:.3e} ({e.checked} coords)")
        return "\n".join(lines)


def _rel_err(a: float, n: float) -> float:
    denom = max(abs(a), abs(n))
    if denom < 1e-10:
        return 0.0
    return abs(a - n) / max(denom, 1e-8)


def grad_check(
    f,
    params,
    eps: float = 1e-6,
    tol: float = 1e-5,
    max_coords: int = 12,
    seed: int = 0,
    grad_hook=None,
) -> GradCheckReport:
    """Compare analytic gradients of scalar ``f()`` against central differences.

    ``f`` must be deterministic given the current parameter values; this is
    verified by running it twice. ``grad_hook``, when given, maps the analytic
    gradient array before comparison (used to exercise the checker itself).
    """
    params = list(params)
    for p in params:
        if p.data.dtype != np.float64:
            raise NumericError(f"grad_check requires f64 parameters, got {p.data.dtype} for {p.name}")

    l1 = f()
    l2 = f()
    if l1.data.tobytes() != l2.data.tobytes():
        raise NumericError("non-deterministic function under grad_check: two forward passes disagree")
    grads = backward(l1, params)

    report = GradCheckReport(tol=tol, eps=eps)
    rng = np.random.default_rng(seed)
    for p in params:
        analytic = grads[p.name].data.reshape(-1)
        flat = p.data.reshape(-1)
        n = flat.size
        if n <= max_coords:
            coords = np.arange(n)
        else:
            coords = np.sort(rng.choice(n, size=max_coords, replace=False))
        worst = 0.0
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            f_plus = f().item()
            flat[c] = orig - eps
            f_minus = f().item()
            flat[c] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = analytic[c]
            if grad_hook is not None:
                a = grad_hook(p.name, a)
            worst = max(worst, _rel_err(a, numeric))
        report.entries.append(GradCheckEntry(p.name, worst, len(coords)))
    return report
