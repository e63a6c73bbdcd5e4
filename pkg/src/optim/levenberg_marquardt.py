"""Levenberg-Marquardt over manifold states, dense or sparse Jacobians."""

from dataclasses import dataclass, field
from typing import Any, Callable, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from src.utils.logger import logger

Linearize = Callable[[Any], Tuple[np.ndarray, Any]]
Residuals = Callable[[Any], np.ndarray]
Retract = Callable[[Any, np.ndarray], Any]


@dataclass
class LMSettings:
    max_iterations: int = 50
    ftol: float = 1e-9  # relative cost decrease
    gtol: float = 1e-8  # gradient infinity norm
    initial_lambda: float = 1e-4
    max_lambda: float = 1e12


@dataclass
class LMResult:
    state: Any
    initial_cost: float
    final_cost: float
    iterations: int
    converged: bool
    reason: str
    gradient_norm: float
    cost_history: List[float] = field(default_factory=list)
    hessian: Optional[Any] = None


def _solve(H, g: np.ndarray) -> np.ndarray:
    if sp.issparse(H):
        dx = spsolve(H.tocsc(), -g)
    else:
        dx = np.linalg.solve(H, -g)
    if not np.all(np.isfinite(dx)):
        raise np.linalg.LinAlgError("Normal equations are singular")
    return np.asarray(dx).ravel()


def levenberg_marquardt(state: Any, linearize: Linearize, residuals: Residuals, retract: Retract,
                        settings: Optional[LMSettings] = None, keep_hessian: bool = False) -> LMResult:
    """Minimize 0.5 * ||r(x)||^2. Accepted steps never increase the cost."""
    s = settings or LMSettings()
    r, J = linearize(state)
    cost = 0.5 * float(r @ r)
    initial_cost = cost
    history = [cost]
    lam = s.initial_lambda
    converged, reason = False, "max_iterations"
    gradient_norm = np.inf
    iteration = 0

    for iteration in range(1, s.max_iterations + 1):
        g = J.T @ r
        gradient_norm = float(np.max(np.abs(g))) if g.size else 0.0
        if gradient_norm < s.gtol or cost <= 1e-300:
            converged, reason = True, "gradient"
            iteration -= 1
            break
        H = J.T @ J
        diag = np.maximum(H.diagonal(), 1e-12)

        accepted = False
        while lam <= s.max_lambda:
            damping = sp.diags(lam * diag) if sp.issparse(H) else np.diag(lam * diag)
            dx = _solve(H + damping, g)
            candidate = retract(state, dx)
            r_new = residuals(candidate)
            new_cost = 0.5 * float(r_new @ r_new)
            if np.isfinite(new_cost) and new_cost < cost:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            reason = "lambda_limit"
            converged = gradient_norm < 1e3 * s.gtol
            break

        relative_decrease = (cost - new_cost) / max(cost, 1e-300)
        state, cost = candidate, new_cost
        history.append(cost)
        lam = max(lam / 10.0, 1e-15)
        r, J = linearize(state)
        if relative_decrease < s.ftol:
            converged, reason = True, "cost"
            break

    if keep_hessian:
        r, J = linearize(state)
    g = J.T @ r
    gradient_norm = float(np.max(np.abs(g))) if g.size else 0.0
    logger.debug(f"LM finished after {iteration} iterations: {initial_cost:.4g} -> {cost:.4g} ({reason})")
    return LMResult(
        state=state,
        initial_cost=initial_cost,
        final_cost=cost,
        iterations=iteration,
        converged=converged,
        reason=reason,
        gradient_norm=gradient_norm,
        cost_history=history,
        hessian=(J.T @ J) if keep_hessian else None,
    )
