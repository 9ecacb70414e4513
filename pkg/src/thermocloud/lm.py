"""Dense Levenberg-Marquardt with an explicit accepted-cost trace.

The calibration refinement needs tighter control than a library solver
exposes: a damping sweep over a fixed range, a guarantee that the cost is
non-increasing across accepted iterations, and the full trace of accepted
costs for verification. The problems here are small (tens of parameters,
thousands of residuals), so a dense normal-equations solve is fine.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

LAMBDA_MIN = 1e-9
LAMBDA_MAX = 1e9


@dataclass
class LMResult:
    x: np.ndarray
    cost: float
    cost_trace: List[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    no_decrease: bool = False


def numeric_jacobian(
    fn: Callable[[np.ndarray], np.ndarray],
    x: np.ndarray,
    step_scale: float = 1e-7,
) -> np.ndarray:
    """Central-difference Jacobian; step per parameter is step_scale * max(1, |x_i|)."""
    x = np.asarray(x, dtype=np.float64)
    r0 = fn(x)
    jac = np.empty((r0.size, x.size))
    for i in range(x.size):
        h = step_scale * max(1.0, abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        jac[:, i] = (fn(xp) - fn(xm)) / (2.0 * h)
    return jac


def levenberg_marquardt(
    residual_fn: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray,
    jacobian_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    max_iterations: int = 200,
    cost_tol: float = 1e-10,
    gradient_tol: float = 1e-10,
    lambda_init: float = 1e-3,
) -> LMResult:
    """Minimize sum(residual_fn(x)**2) by Levenberg-Marquardt.

    Damping uses Marquardt scaling, ``(J.T J + lam * diag(J.T J)) dx = -J.T r``,
    swept upward by 10x within [1e-9, 1e9] until a step decreases the cost.
    Termination: relative cost change < cost_tol on an accepted step,
    infinity-norm of the gradient < gradient_tol, or max_iterations.

    If no damping value in the sweep range decreases the cost on the first
    iteration, the initial point is returned with ``no_decrease`` set.
    """
    if jacobian_fn is None:
        jacobian_fn = lambda x: numeric_jacobian(residual_fn, x)

    x = np.asarray(x0, dtype=np.float64).copy()
    r = residual_fn(x)
    cost = float(r @ r)
    trace = [cost]
    lam = lambda_init

    for it in range(1, max_iterations + 1):
        jac = jacobian_fn(x)
        g = jac.T @ r
        if np.max(np.abs(g)) < gradient_tol:
            return LMResult(x, cost, trace, it - 1, converged=True)
        jtj = jac.T @ jac
        diag = np.maximum(np.diag(jtj), 1e-12)

        lam = max(lam, LAMBDA_MIN)
        accepted = False
        while lam <= LAMBDA_MAX:
            try:
                dx = np.linalg.solve(jtj + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            x_new = x + dx
            try:
                r_new = residual_fn(x_new)
                cost_new = float(r_new @ r_new)
            except (ValueError, ArithmeticError):
                # step left the residual's domain; treat as a rejection
                cost_new = np.inf
            if np.isfinite(cost_new) and cost_new < cost:
                rel_drop = (cost - cost_new) / max(cost, 1e-300)
                x, r, cost = x_new, r_new, cost_new
                trace.append(cost)
                lam = max(lam / 3.0, LAMBDA_MIN)
                accepted = True
                if rel_drop < cost_tol:
                    return LMResult(x, cost, trace, it, converged=True)
                break
            lam *= 10.0
        if not accepted:
            if it == 1:
                return LMResult(x, cost, trace, 0, no_decrease=True)
            # exhausted the damping range after progress: local minimum
            return LMResult(x, cost, trace, it, converged=True)

    return LMResult(x, cost, trace, max_iterations, converged=False)
