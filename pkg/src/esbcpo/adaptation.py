"""Adaptive constraint loosening: safety-state recursion, the per-state beta
gate, the global alpha anneal, Lyapunov-based advantage weights, and the
budget-gap diagnostics.

The constraint surrogate weighs each transition by lae(...) / (1 - alpha).
That quantity decomposes exactly into the TD cost advantage plus two extra
terms (b1, b2); the batch gaps g1/g2 built from them measure how much the
practical constraint was loosened (negative gap = positive extra budget).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

Z_CLAMP = 10.0  # |z| bound before tanh; tanh saturates long before this
ALPHA_MAX = 0.999  # keeps the 1/(1 - alpha) weights finite


@dataclass(frozen=True)
class SafetyTrace:
    """Per-step safety state and gate along one trajectory.

    Arrays have length T + 1: index 0 is the initial value before the first
    step, index t+1 reflects the budget after paying cost t. beta[t] = 1
    whenever z[t] >= 0.
    """

    z: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        if self.z.shape != self.beta.shape:
            raise ValueError("z and beta length mismatch")


@dataclass(frozen=True)
class AlphaState:
    """Lagrange multiplier driving the global anneal weight alpha."""

    lambda_: float = 5.0
    k: float = 0.01
    eta: float = 0.01

    def __post_init__(self):
        if self.lambda_ < 0:
            raise ValueError("lambda_ must be >= 0")
        if self.k <= 0 or self.eta <= 0:
            raise ValueError("k and eta must be > 0")

    @property
    def alpha(self) -> float:
        return compute_alpha(self.lambda_, self.k)


@dataclass(frozen=True)
class EsbBreakdown:
    g1: float
    g2: float

    @property
    def esb_total(self) -> float:
        return -(self.g1 + self.g2)


def update_safety_state(z_prev: float, cost: float, gamma: float, d: float) -> float:
    """One step of the normalized-budget recursion z' = (z - c/d) / gamma,
    clamped to [-Z_CLAMP, Z_CLAMP] to prevent geometric blow-up.
    """
    if d <= 0:
        raise ValueError("cost limit d must be > 0")
    if not 0.0 < gamma <= 1.0:
        raise ValueError("gamma must be in (0,1]")
    z = (z_prev - cost / d) / gamma
    return float(np.clip(z, -Z_CLAMP, Z_CLAMP))


def compute_beta(z: float) -> float:
    """Per-state gate: 1 + min(tanh(z), 0). Equals 1 in safe states (z >= 0),
    shrinks toward 0 as the budget violation deepens.
    """
    return float(1.0 + min(np.tanh(z), 0.0))


def safety_trace(costs, gamma: float, d: float) -> SafetyTrace:
    """z/beta arrays (length T + 1) for one trajectory's cost sequence,
    starting from the initial value 1 before t = 0.
    """
    costs = np.asarray(costs, dtype=float)
    z = np.empty(len(costs) + 1)
    z[0] = 1.0
    for t, c in enumerate(costs):
        z[t + 1] = update_safety_state(z[t], c, gamma, d)
    beta = 1.0 + np.minimum(np.tanh(z), 0.0)
    return SafetyTrace(z, beta)


def compute_alpha(lambda_: float, k: float) -> float:
    """Anneal weight tanh(k * e^lambda), clamped to at most ALPHA_MAX."""
    if k <= 0:
        raise ValueError("k must be > 0")
    if lambda_ < 0:
        raise ValueError("lambda_ must be >= 0")
    return float(min(np.tanh(k * np.exp(lambda_)), ALPHA_MAX))


def update_lambda(state: AlphaState, p_value: float) -> AlphaState:
    """Dual ascent on the local constraint problem: lambda <- max(lambda + eta*P, 0)."""
    if not np.isfinite(p_value):
        raise ValueError("non-finite dual objective value")
    return AlphaState(max(state.lambda_ + state.eta * p_value, 0.0), state.k, state.eta)


def lae(v_s: float, v_sp: float, alpha: float, beta_sp: float) -> float:
    """Lyapunov-based advantage for one transition:
    V(s') - V(s) + alpha * (V(s) - beta * V(s')), beta taken at s'.

    beta = 1 gives the pure stability form (1 - alpha)(V(s') - V(s));
    beta = 0 adds the full safety-value term alpha * V(s').
    """
    return float((v_sp - v_s) + alpha * (v_s - beta_sp * v_sp))


def esb_decompose(cost, v_s, v_sp, alpha, beta_sp, gamma):
    """Split lae/(1 - alpha) into (TD cost advantage, b1, b2).

    a_c_td = c + gamma*V(s') - V(s); b1 = (1-gamma)*V(s') - c;
    b2 = alpha*(1-beta(s'))/(1-alpha) * V(s'). The three always sum back to
    lae(...)/(1 - alpha) exactly.
    """
    if alpha >= ALPHA_MAX + 1e-9:
        raise ValueError(f"alpha {alpha} exceeds the {ALPHA_MAX} ceiling")
    a_c_td = cost + gamma * v_sp - v_s
    b1 = (1.0 - gamma) * v_sp - cost
    b2 = alpha * (1.0 - beta_sp) / (1.0 - alpha) * v_sp
    return float(a_c_td), float(b1), float(b2)


def esb_constraint_terms(costs, v_s, v_sp, beta_sp, alpha, gamma, delta=None):
    """Per-transition constraint weights plus the gap diagnostics.

    weights[t] = lae(...)/(1 - alpha), the quantity multiplied by the policy
    tendency (ratio - 1) inside the constraint surrogate. `delta` holds the
    post-step per-sample tendencies; when omitted (policy unchanged) the gaps
    are identically zero. g1 = mean[delta*b1]/(1-gamma), likewise g2.
    """
    costs = np.asarray(costs, dtype=float)
    v_s = np.asarray(v_s, dtype=float)
    v_sp = np.asarray(v_sp, dtype=float)
    beta_sp = np.asarray(beta_sp, dtype=float)
    if not (costs.shape == v_s.shape == v_sp.shape == beta_sp.shape):
        raise ValueError("misaligned batch / safety trace arrays")
    if alpha >= ALPHA_MAX + 1e-9:
        raise ValueError(f"alpha {alpha} exceeds the {ALPHA_MAX} ceiling")

    a_c_td = costs + gamma * v_sp - v_s
    b1 = (1.0 - gamma) * v_sp - costs
    b2 = alpha * (1.0 - beta_sp) / (1.0 - alpha) * v_sp
    weights = a_c_td + b1 + b2

    if delta is None:
        delta = np.zeros_like(weights)
    else:
        delta = np.asarray(delta, dtype=float)
        if delta.shape != weights.shape:
            raise ValueError("misaligned tendency array")
    g1 = float((delta * b1).mean() / (1.0 - gamma))
    g2 = float((delta * b2).mean() / (1.0 - gamma))
    return weights, EsbBreakdown(g1, g2)
