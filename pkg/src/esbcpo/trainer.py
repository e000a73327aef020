"""Training orchestration: one epoch = rollout, safety traces, factor
adaptation, constrained natural-gradient step, line search, critic fit.

The same skeleton runs all algorithms; they differ only in how the
constraint weights are built (adaptive Lyapunov weights, plain cost
advantages, a Lagrangian penalty folded into the objective, or nothing).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from esbcpo import adaptation, policy as pol, trustregion as tr
from esbcpo.cmdp import CmdpConfig, Trajectory, batch_estimates
from esbcpo.envs import EnvSpec, rollout

ALGORITHMS = ("esb-cpo", "esb-cpo-g1", "cpo", "trpo", "trpo-lagrangian")


@dataclass(frozen=True)
class TrustConfig:
    delta: float = 0.01
    cg_iters: int = 20
    cg_tol: float = 1e-8
    damping: float = 0.1
    backtrack_ratio: float = 0.8
    max_backtracks: int = 10


@dataclass(frozen=True)
class AlgoConfig:
    algorithm: str = "esb-cpo"
    steps_per_epoch: int = 1000
    epochs: int = 100
    gae_lambda: float = 0.95
    cmdp: CmdpConfig = field(default_factory=CmdpConfig)
    trust: TrustConfig = field(default_factory=TrustConfig)
    adaptation: adaptation.AlphaState = field(default_factory=adaptation.AlphaState)
    hidden: tuple[int, ...] = (64, 64)
    logstd_init: float = -0.5
    critic_epochs: int = 80
    critic_lr: float = 1e-3
    lagrangian_eta: float = 0.05
    lagrangian_init: float = 0.0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if self.steps_per_epoch < self.cmdp.horizon:
            raise ValueError("steps_per_epoch must be >= horizon")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gae_lambda must be in [0,1]")


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    avg_return: float
    avg_cost: float
    kl: float
    alpha: float
    lambda_: float
    g1: float
    g2: float
    esb_total: float
    mean_beta: float
    feasible: bool
    accepted: bool
    mu1: float
    mu2: float
    shrink_count: int

    COLUMNS = (
        "epoch", "avg_return", "avg_cost", "kl", "alpha", "lambda", "g1", "g2",
        "esb_total", "mean_beta", "feasible", "accepted", "mu1", "mu2", "shrink_count",
    )

    def row(self):
        return (
            self.epoch, self.avg_return, self.avg_cost, self.kl, self.alpha,
            self.lambda_, self.g1, self.g2, self.esb_total, self.mean_beta,
            int(self.feasible), int(self.accepted), self.mu1, self.mu2, self.shrink_count,
        )


@dataclass(frozen=True)
class TrainState:
    policy: pol.PolicyParams
    critics: pol.CriticParams
    alpha_state: adaptation.AlphaState
    prev_policy: pol.PolicyParams  # sampling policy of the previous epoch
    lambda_lag: float = 0.0
    epoch: int = 0
    p_prev: float = 0.0  # accepted-step tendency mean[(ratio-1)*A'] of the previous epoch


def init_train_state(config: AlgoConfig, spec: EnvSpec, seed: int) -> TrainState:
    rng = np.random.default_rng(seed)
    head = "gaussian" if spec.continuous else "categorical"
    policy = pol.init_policy(rng, spec.obs_dim, spec.act_dim, config.hidden, head, config.logstd_init)
    critics = pol.init_critics(rng, spec.obs_dim, config.hidden)
    return TrainState(policy, critics, config.adaptation, policy, config.lagrangian_init, 0)


def compute_gae(signal, values, gamma: float, lam: float) -> np.ndarray:
    """Lambda-weighted TD-residual advantages for a per-step signal (rewards
    or costs); values has length T + 1 (bootstrap at the end, 0 if the
    trajectory ended on a true terminal).
    """
    signal = np.asarray(signal, dtype=float)
    values = np.asarray(values, dtype=float)
    if values.shape != (len(signal) + 1,):
        raise ValueError(f"values must have length {len(signal) + 1}, got {values.shape}")
    deltas = signal + gamma * values[1:] - values[:-1]
    adv = np.empty_like(deltas)
    acc = 0.0
    for t in range(len(deltas) - 1, -1, -1):
        acc = deltas[t] + gamma * lam * acc
        adv[t] = acc
    return adv


def discounted_returns_to_go(values, gamma: float, bootstrap: float) -> np.ndarray:
    out = np.empty(len(values))
    acc = bootstrap
    for t in range(len(values) - 1, -1, -1):
        acc = values[t] + gamma * acc
        out[t] = acc
    return out


@dataclass(frozen=True)
class _Batch:
    trajs: list
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    costs: np.ndarray
    adv_r: np.ndarray  # normalized reward advantages
    adv_c: np.ndarray  # unnormalized cost advantages (GAE)
    v_c_s: np.ndarray  # cost critic at s_t
    v_c_sp: np.ndarray  # cost critic at s_{t+1} (0 past a true terminal)
    beta_sp: np.ndarray  # safety gate at the successor state
    target_r: np.ndarray
    target_c: np.ndarray
    j_r: float
    j_c: float


def assemble_batch(trajs, critics: pol.CriticParams, config: AlgoConfig, force_beta_one=False) -> _Batch:
    gamma, lam, d = config.cmdp.gamma, config.gae_lambda, config.cmdp.cost_limit
    obs_l, act_l, advr_l, advc_l = [], [], [], []
    vcs_l, vcsp_l, beta_l, tr_l, tc_l = [], [], [], [], []
    for traj in trajs:
        states = np.stack([t.state for t in traj.transitions])
        last_next = traj.transitions[-1].next_state
        terminal = traj.transitions[-1].terminal
        vr = pol.value_r(critics, states)
        vc = pol.value_c(critics, states)
        vr_boot = 0.0 if terminal else float(pol.value_r(critics, last_next[None])[0])
        vc_boot = 0.0 if terminal else float(pol.value_c(critics, last_next[None])[0])
        advr_l.append(compute_gae(traj.rewards, np.append(vr, vr_boot), gamma, lam))
        advc_l.append(compute_gae(traj.costs, np.append(vc, vc_boot), gamma, lam))
        vcs_l.append(vc)
        vcsp_l.append(np.append(vc[1:], vc_boot))
        if force_beta_one:
            beta_l.append(np.ones(len(traj)))
        else:
            trace = adaptation.safety_trace(traj.costs, gamma, d)
            beta_l.append(trace.beta[1:])
        tr_l.append(discounted_returns_to_go(traj.rewards, gamma, vr_boot))
        tc_l.append(discounted_returns_to_go(traj.costs, gamma, vc_boot))
        obs_l.append(states)
        act_l.append(np.stack([t.action for t in traj.transitions]))
    adv_r = np.concatenate(advr_l)
    adv_r = (adv_r - adv_r.mean()) / (adv_r.std() + 1e-8)
    j_r, j_c = batch_estimates(trajs, gamma)
    return _Batch(
        trajs=list(trajs),
        obs=np.concatenate(obs_l),
        actions=np.concatenate(act_l),
        rewards=np.concatenate([t.rewards for t in trajs]),
        costs=np.concatenate([t.costs for t in trajs]),
        adv_r=adv_r,
        adv_c=np.concatenate(advc_l),
        v_c_s=np.concatenate(vcs_l),
        v_c_sp=np.concatenate(vcsp_l),
        beta_sp=np.concatenate(beta_l),
        target_r=np.concatenate(tr_l),
        target_c=np.concatenate(tc_l),
        j_r=j_r,
        j_c=j_c,
    )


def _policy_actions(batch: _Batch, head: str):
    return batch.actions if head == "gaussian" else batch.actions[:, 0].astype(int)


def run_epoch(state: TrainState, config: AlgoConfig, spec: EnvSpec, seed: int) -> tuple[TrainState, EpochMetrics]:
    """One full training epoch for any algorithm; deterministic given seed."""
    algo = config.algorithm
    gamma, d = config.cmdp.gamma, config.cmdp.cost_limit
    tc = config.trust
    is_esb = algo in ("esb-cpo", "esb-cpo-g1")

    trajs = rollout(state.policy, spec, seed, config.steps_per_epoch, config.cmdp.horizon)
    batch = assemble_batch(trajs, state.critics, config, force_beta_one=(algo == "esb-cpo-g1"))
    acts = _policy_actions(batch, state.policy.head)
    obs = batch.obs

    # factor adaptation (before the policy step, on the fresh batch)
    alpha_state = state.alpha_state
    lambda_lag = state.lambda_lag
    if is_esb:
        # lambda is driven by the previous epoch's accepted-step tendency
        # P = mean[(ratio - 1) * A'], measured on the batch the step was
        # solved on. Measured on the fresh batch instead, E[ratio - 1] >= 0
        # under the new policy's own samples, which with a nonnegative cost
        # critic keeps P >= 0 and ratchets lambda (and alpha) upward forever.
        alpha_state = adaptation.update_lambda(alpha_state, state.p_prev)
    elif algo == "trpo-lagrangian":
        lambda_lag = max(lambda_lag + config.lagrangian_eta * (batch.j_c - d), 0.0)

    # constraint / objective weights
    alpha = alpha_state.alpha
    if is_esb:
        w_cons, _ = adaptation.esb_constraint_terms(
            batch.costs, batch.v_c_s, batch.v_c_sp, batch.beta_sp, alpha, gamma
        )
        w_cons = w_cons / (1.0 - gamma)
        w_obj = batch.adv_r
    elif algo == "cpo":
        w_cons = batch.adv_c / (1.0 - gamma)
        w_obj = batch.adv_r
    elif algo == "trpo-lagrangian":
        w_cons = np.zeros_like(batch.adv_r)
        w_obj = batch.adv_r - lambda_lag * batch.adv_c
    else:  # trpo
        w_cons = np.zeros_like(batch.adv_r)
        w_obj = batch.adv_r

    constrained = algo in ("esb-cpo", "esb-cpo-g1", "cpo")
    grads = pol.surrogate_grads(state.policy, obs, acts, w_obj, w_cons)
    c_slack = (batch.j_c - d) if constrained else -1.0

    def hvp(v):
        return pol.fisher_vector_product(state.policy, obs, v, tc.damping)

    problem = tr.StepProblem(grads.objective_grad, grads.constraint_grad, c_slack, hvp, tc.delta)
    hinv_g = tr.conjugate_gradient(hvp, problem.g, tc.cg_iters, tc.cg_tol)
    hinv_b = (
        tr.conjugate_gradient(hvp, problem.b, tc.cg_iters, tc.cg_tol)
        if constrained
        else np.zeros_like(problem.b)
    )
    solution = tr.solve_dual(problem, hinv_g, hinv_b)
    direction = tr.propose_step(problem, solution)

    baseline_constraint = batch.j_c  # constraint surrogate at zero step

    def evaluate(theta):
        cand = state.policy.with_theta(theta)
        improve = pol.surrogate_value(cand, state.policy, obs, acts, w_obj) - float(w_obj.mean())
        cons = batch.j_c + pol.surrogate_value(cand, state.policy, obs, acts, w_cons, delta_form=True)
        return tr.ProbeResult(improve, cons, pol.mean_kl(cand, state.policy, obs))

    accept = tr.standard_acceptance(
        tc.delta, d if constrained else np.inf, solution.feasible_branch, baseline_constraint
    )
    theta_new, accepted, shrink = tr.line_search(
        state.policy.theta, direction, evaluate, accept, tc.max_backtracks, tc.backtrack_ratio
    )
    new_policy = state.policy.with_theta(theta_new) if accepted else state.policy
    achieved_kl = pol.mean_kl(new_policy, state.policy, obs) if accepted else 0.0

    # gap diagnostics and tendency at the accepted step
    p_next = 0.0
    if is_esb and accepted:
        delta_post = pol.ratio(new_policy, state.policy, obs, acts) - 1.0
        _, breakdown = adaptation.esb_constraint_terms(
            batch.costs, batch.v_c_s, batch.v_c_sp, batch.beta_sp, alpha, gamma, delta=delta_post
        )
        lae_vals = (batch.v_c_sp - batch.v_c_s) + alpha * (
            batch.v_c_s - batch.beta_sp * batch.v_c_sp
        )
        p_next = float((delta_post * lae_vals).mean())
    else:
        breakdown = adaptation.EsbBreakdown(0.0, 0.0)

    critics = pol.critic_fit(
        state.critics, obs, batch.target_r, batch.target_c, config.critic_epochs, config.critic_lr
    )

    metrics = EpochMetrics(
        epoch=state.epoch,
        avg_return=batch.j_r,
        avg_cost=batch.j_c,
        kl=achieved_kl,
        alpha=alpha,
        lambda_=alpha_state.lambda_ if is_esb else lambda_lag,
        g1=breakdown.g1,
        g2=breakdown.g2,
        esb_total=breakdown.esb_total,
        mean_beta=float(batch.beta_sp.mean()),
        feasible=solution.feasible_branch,
        accepted=accepted,
        mu1=solution.mu1,
        mu2=solution.mu2,
        shrink_count=shrink,
    )
    new_state = TrainState(
        new_policy, critics, alpha_state, state.policy, lambda_lag, state.epoch + 1, p_next
    )
    return new_state, metrics


def esbcpo_epoch(state: TrainState, config: AlgoConfig, spec: EnvSpec, seed: int):
    """Adaptive-budget epoch; config.algorithm must be an esb variant."""
    if config.algorithm not in ("esb-cpo", "esb-cpo-g1"):
        raise ValueError("esbcpo_epoch requires an esb-cpo algorithm config")
    return run_epoch(state, config, spec, seed)


def baseline_epoch(state: TrainState, config: AlgoConfig, spec: EnvSpec, seed: int):
    """Baseline epoch for cpo / trpo / trpo-lagrangian configs."""
    if config.algorithm not in ("cpo", "trpo", "trpo-lagrangian"):
        raise ValueError("baseline_epoch requires a baseline algorithm config")
    return run_epoch(state, config, spec, seed)


def train(config: AlgoConfig, spec: EnvSpec, seed: int, on_epoch=None):
    """Full training run; returns (final TrainState, list of EpochMetrics).

    `on_epoch(state, metrics)` is called after each epoch (checkpointing,
    CSV streaming). Fully deterministic given (config, spec, seed).
    """
    rng = np.random.default_rng(seed)
    state = init_train_state(config, spec, seed)
    history = []
    for _ in range(config.epochs):
        epoch_seed = int(rng.integers(2**63))
        state, metrics = run_epoch(state, config, spec, epoch_seed)
        history.append(metrics)
        if on_epoch is not None:
            on_epoch(state, metrics)
    return state, history
