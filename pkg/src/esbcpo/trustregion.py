"""Constrained natural-gradient step machinery.

Solves, per epoch, the linearized problem
    max g.x  s.t.  c + b.x <= 0,  0.5 x.H.x <= delta
via its two-multiplier dual (single constraint, analytic), with a pure
constraint-descent recovery step when the feasible set is empty, followed by
backtracking line search against the exact surrogates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

S_DEGENERATE = 1e-12


@dataclass(frozen=True)
class StepProblem:
    g: np.ndarray
    b: np.ndarray
    c_slack: float  # J^C(theta) - d
    hessian_op: Callable[[np.ndarray], np.ndarray]
    delta: float

    def __post_init__(self):
        if self.g.shape != self.b.shape:
            raise ValueError("gradient length mismatch")
        if self.delta <= 0:
            raise ValueError("trust radius must be > 0")


@dataclass(frozen=True)
class StepSolution:
    direction: np.ndarray
    mu1: float
    mu2: float
    feasible_branch: bool


def conjugate_gradient(op, rhs: np.ndarray, iters: int = 20, tol: float = 1e-8) -> np.ndarray:
    """Matrix-free CG for symmetric PSD op; returns the best iterate if the
    iteration budget runs out before ||op(x) - rhs|| <= tol * ||rhs||.
    """
    rhs = np.asarray(rhs, dtype=float)
    if not np.isfinite(rhs).all():
        raise ValueError("non-finite right-hand side")
    x = np.zeros_like(rhs)
    r = rhs.copy()
    p = rhs.copy()
    rs = r @ r
    rhs_norm = np.sqrt(rs)
    if rhs_norm == 0.0:
        return x
    best_x, best_res = x.copy(), rhs_norm
    for _ in range(iters):
        hp = op(p)
        if not np.isfinite(hp).all():
            raise FloatingPointError("non-finite operator output in CG")
        denom = p @ hp
        if denom <= 0:
            break  # numerical loss of positive definiteness
        a = rs / denom
        x = x + a * p
        r = r - a * hp
        rs_new = r @ r
        res = np.sqrt(rs_new)
        if res < best_res:
            best_x, best_res = x.copy(), res
        if res <= tol * rhs_norm:
            break
        p = r + (rs_new / rs) * p
        rs = rs_new
    return best_x


def dual_value(mu1: float, mu2: float, q: float, r: float, s: float, c: float, delta: float) -> float:
    """Dual objective at (mu1, mu2); its minimum over mu >= 0 equals the
    primal optimum g.x*.
    """
    quad = q - 2.0 * r * mu2 + s * mu2**2
    return quad / (2.0 * mu1) - mu2 * c + mu1 * delta


def solve_dual(problem: StepProblem, hinv_g: np.ndarray, hinv_b: np.ndarray) -> StepSolution:
    """Analytic maximizer of the dual over mu1 >= 0, mu2 >= 0.

    Precomputed quantities: q = g.Hinv.g, r = g.Hinv.b, s = b.Hinv.b. The
    quadratic feasible set is empty iff c > 0 and c^2/s > 2*delta, in which
    case the recovery direction is returned instead.
    """
    g, b, c, delta = problem.g, problem.b, problem.c_slack, problem.delta
    q = float(g @ hinv_g)
    r = float(g @ hinv_b)
    s = float(b @ hinv_b)

    if s <= S_DEGENERATE:
        if c > 0:
            # degenerate constraint gradient while infeasible: unrecoverable
            # in the linear model; signal the recovery branch with no descent.
            return StepSolution(np.zeros_like(g), 0.0, 0.0, False)
        mu1 = np.sqrt(max(q, 0.0) / (2.0 * delta)) if q > 0 else 1.0
        d = hinv_g / max(mu1, 1e-12)
        return StepSolution(d, float(max(mu1, 1e-12)), 0.0, True)

    feasible = not (c > 0 and c**2 / s > 2.0 * delta)
    if not feasible:
        d = -np.sqrt(2.0 * delta / s) * hinv_b
        return StepSolution(d, 0.0, 0.0, False)

    if c < 0 and c**2 / s > 2.0 * delta:
        # trust region strictly inside the feasible half-space: plain step
        mu1 = np.sqrt(max(q, 0.0) / (2.0 * delta)) if q > 0 else 1.0
        return StepSolution(hinv_g / mu1, float(mu1), 0.0, True)

    # both boundaries can intersect; piecewise-analytic maximization with the
    # linear multiplier eliminated: mu2*(mu1) = max((r + mu1 c) / s, 0), which
    # is positive on one side of the breakpoint -r/c and zero on the other
    A = max(q - r**2 / s, 0.0)  # g's component orthogonal to b, in Hinv metric
    B = 2.0 * delta - c**2 / s  # >= 0 here

    def proj(x, lo, hi):
        return min(max(x, lo), hi)

    eps = 1e-12
    big = 1e12
    if abs(c) > eps:
        lam_mid = max(-r / c, 0.0)
        if c < 0:
            lam_a_interval = (eps, max(lam_mid, eps))
            lam_b_interval = (max(lam_mid, eps), big)
        else:
            lam_a_interval = (max(lam_mid, eps), big)
            lam_b_interval = (eps, max(lam_mid, eps))
    else:
        lam_a_interval = lam_b_interval = (eps, big)

    lam_a = proj(np.sqrt(A / B) if B > eps else big, *lam_a_interval)
    lam_b = proj(np.sqrt(max(q, eps) / (2.0 * delta)), *lam_b_interval)

    def evaluate(lam):
        nu = max((r + lam * c) / s, 0.0)
        return dual_value(lam, nu, q, r, s, c, delta), nu

    val_a, nu_a = evaluate(lam_a)
    val_b, nu_b = evaluate(lam_b)
    mu1, mu2 = (lam_a, nu_a) if val_a <= val_b else (lam_b, nu_b)
    d = (hinv_g - mu2 * hinv_b) / mu1
    return StepSolution(d, float(mu1), float(mu2), True)


def propose_step(problem: StepProblem, solution: StepSolution) -> np.ndarray:
    """Full-scale update direction for the chosen branch."""
    if solution.feasible_branch and solution.mu1 <= 0:
        raise RuntimeError("feasible branch with mu1 <= 0: dual solver bug")
    d = solution.direction
    if not np.isfinite(d).all():
        raise FloatingPointError("non-finite step direction")
    return d


@dataclass(frozen=True)
class ProbeResult:
    improve: float  # surrogate objective change vs theta_old
    constraint: float  # constraint surrogate value (compared against d)
    kl: float


def line_search(
    theta_old: np.ndarray,
    direction: np.ndarray,
    evaluate: Callable[[np.ndarray], ProbeResult],
    accept: Callable[[ProbeResult], bool],
    max_backtracks: int = 10,
    backtrack_ratio: float = 0.8,
) -> tuple[np.ndarray, bool, int]:
    """Backtrack over scales {1, r, r^2, ..., r^max} until `accept` passes.

    Returns (theta, accepted, shrink_count); rejection returns theta_old.
    """
    for j in range(max_backtracks + 1):
        scale = backtrack_ratio**j
        theta = theta_old + scale * direction
        if accept(evaluate(theta)):
            return theta, True, j
    return theta_old, False, max_backtracks


def standard_acceptance(delta: float, cost_limit: float, feasible_branch: bool, baseline_constraint: float):
    """Acceptance rule: KL inside the trust region always; on the feasible
    branch the constraint surrogate must sit below the limit and the
    objective must not decrease; on the recovery branch the constraint
    surrogate must strictly decrease from its pre-step value.
    """

    def accept(pr: ProbeResult) -> bool:
        if not (np.isfinite(pr.improve) and np.isfinite(pr.constraint) and np.isfinite(pr.kl)):
            return False
        if pr.kl > delta:
            return False
        if feasible_branch:
            return pr.constraint <= cost_limit and pr.improve >= 0.0
        return pr.constraint < baseline_constraint

    return accept
