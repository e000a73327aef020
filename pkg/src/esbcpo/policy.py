"""Actor and critic networks with manually derived gradients.

The actor is a tanh MLP with either a diagonal-Gaussian head (state-independent
learned log-std) or a categorical head. Critics are tanh MLPs; the cost critic
maps its output through softplus so predicted cost values are nonnegative.

Parameter records are immutable snapshots; fitting returns new records.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from esbcpo import nets

LOGSTD_MIN, LOGSTD_MAX = -5.0, 2.0
LOG2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class PolicyParams:
    obs_dim: int
    act_dim: int
    hidden: tuple[int, ...]
    head: str  # "gaussian" | "categorical"
    theta: np.ndarray

    def __post_init__(self):
        if self.head not in ("gaussian", "categorical"):
            raise ValueError(f"unknown head {self.head!r}")
        if self.theta.size != self.n_params:
            raise ValueError(f"theta has {self.theta.size} entries, topology needs {self.n_params}")
        theta = np.array(self.theta, dtype=float)
        if self.head == "gaussian":
            np.clip(theta[-self.act_dim :], LOGSTD_MIN, LOGSTD_MAX, out=theta[-self.act_dim :])
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    @property
    def net_sizes(self):
        return (self.obs_dim, *self.hidden, self.act_dim)

    @property
    def n_net(self) -> int:
        return nets.param_count(self.net_sizes)

    @property
    def n_params(self) -> int:
        return self.n_net + (self.act_dim if self.head == "gaussian" else 0)

    def with_theta(self, theta: np.ndarray) -> "PolicyParams":
        return replace(self, theta=theta)


@dataclass(frozen=True)
class CriticParams:
    obs_dim: int
    hidden: tuple[int, ...]
    phi_r: np.ndarray
    phi_c: np.ndarray

    @property
    def sizes(self):
        return (self.obs_dim, *self.hidden, 1)


@dataclass(frozen=True)
class GradReport:
    objective_grad: np.ndarray
    constraint_grad: np.ndarray

    def __post_init__(self):
        if self.objective_grad.shape != self.constraint_grad.shape:
            raise ValueError("gradient length mismatch")
        if not (np.isfinite(self.objective_grad).all() and np.isfinite(self.constraint_grad).all()):
            raise ValueError("non-finite gradient entries")


def init_policy(rng, obs_dim, act_dim, hidden=(64, 64), head="gaussian", logstd_init=-0.5) -> PolicyParams:
    sizes = (obs_dim, *hidden, act_dim)
    theta = nets.orthogonal_init(rng, sizes, hidden_gain=np.sqrt(2.0), out_gain=0.01)
    if head == "gaussian":
        theta = np.concatenate([theta, np.full(act_dim, logstd_init)])
    return PolicyParams(obs_dim, act_dim, tuple(hidden), head, theta)


def init_critics(rng, obs_dim, hidden=(64, 64)) -> CriticParams:
    sizes = (obs_dim, *hidden, 1)
    phi_r = nets.orthogonal_init(rng, sizes, hidden_gain=np.sqrt(2.0), out_gain=1.0)
    phi_c = nets.orthogonal_init(rng, sizes, hidden_gain=np.sqrt(2.0), out_gain=1.0)
    return CriticParams(obs_dim, tuple(hidden), phi_r, phi_c)


# ---------------------------------------------------------------- actor

def _split(params: PolicyParams):
    if params.head == "gaussian":
        return params.theta[: params.n_net], params.theta[params.n_net :]
    return params.theta, None


def forward_actor(params: PolicyParams, obs: np.ndarray):
    """Distribution parameters at a batch of observations.

    Gaussian: (means (n, act), logstd (act,)); categorical: logits (n, act).
    """
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    if obs.shape[1] != params.obs_dim:
        raise ValueError(f"obs dim {obs.shape[1]} != {params.obs_dim}")
    theta_net, logstd = _split(params)
    out, _ = nets.forward(theta_net, params.net_sizes, obs)
    if params.head == "gaussian":
        return out, np.clip(logstd, LOGSTD_MIN, LOGSTD_MAX)
    return out


def _log_softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def log_prob(params: PolicyParams, obs: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Per-sample log-probability of the given actions."""
    dist = forward_actor(params, obs)
    if params.head == "gaussian":
        mean, logstd = dist
        a = np.atleast_2d(actions)
        z = (a - mean) / np.exp(logstd)
        return -0.5 * (z**2).sum(axis=1) - logstd.sum() - 0.5 * params.act_dim * LOG2PI
    logp = _log_softmax(dist)
    idx = np.asarray(actions, dtype=int).reshape(-1)
    return logp[np.arange(len(idx)), idx]


def sample_and_logprob(params: PolicyParams, obs: np.ndarray, rng: np.random.Generator):
    """Sample actions at obs; returns (actions, per-sample log-probabilities)."""
    dist = forward_actor(params, obs)
    if params.head == "gaussian":
        mean, logstd = dist
        eps = rng.standard_normal(mean.shape)
        actions = mean + np.exp(logstd) * eps
        logp = -0.5 * (eps**2).sum(axis=1) - logstd.sum() - 0.5 * params.act_dim * LOG2PI
        return actions, logp
    logp_all = _log_softmax(dist)
    p = np.exp(logp_all)
    u = rng.random((p.shape[0], 1))
    actions = np.minimum((p.cumsum(axis=1) < u).sum(axis=1), p.shape[1] - 1)
    return actions, logp_all[np.arange(len(actions)), actions]


def ratio(params_new: PolicyParams, params_old: PolicyParams, obs, actions) -> np.ndarray:
    """Per-sample importance ratio pi_new(a|s) / pi_old(a|s)."""
    return np.exp(log_prob(params_new, obs, actions) - log_prob(params_old, obs, actions))


def mean_kl(params_new: PolicyParams, params_old: PolicyParams, obs) -> float:
    """KL(new || old) averaged over the observation batch (closed form)."""
    if params_new.head != params_old.head:
        raise ValueError("mismatched policy heads")
    if params_new.head == "gaussian":
        mn, lsn = forward_actor(params_new, obs)
        mo, lso = forward_actor(params_old, obs)
        var_ratio = np.exp(2.0 * (lsn - lso))
        per = (lso - lsn) + 0.5 * (var_ratio + ((mn - mo) / np.exp(lso)) ** 2 - 1.0)
        return float(per.sum(axis=1).mean())
    ln = _log_softmax(forward_actor(params_new, obs))
    lo = _log_softmax(forward_actor(params_old, obs))
    pn = np.exp(ln)
    return float((pn * (ln - lo)).sum(axis=1).mean())


def kl_grad(params_new: PolicyParams, params_old: PolicyParams, obs) -> np.ndarray:
    """Analytic gradient of mean_kl w.r.t. the new parameters."""
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    n = obs.shape[0]
    theta_net, _ = _split(params_new)
    out, acts = nets.forward(theta_net, params_new.net_sizes, obs)
    if params_new.head == "gaussian":
        mn, lsn = out, np.clip(params_new.theta[params_new.n_net :], LOGSTD_MIN, LOGSTD_MAX)
        mo, lso = forward_actor(params_old, obs)
        dmean = (mn - mo) / np.exp(2.0 * lso) / n
        g_net = nets.backward(theta_net, params_new.net_sizes, acts, dmean)
        g_logstd = np.exp(2.0 * (lsn - lso)) - 1.0
        return np.concatenate([g_net, g_logstd])
    ln = _log_softmax(out)
    lo = _log_softmax(forward_actor(params_old, obs))
    pn = np.exp(ln)
    diff = ln - lo
    dlogits = pn * (diff - (pn * diff).sum(axis=1, keepdims=True)) / n
    return nets.backward(theta_net, params_new.net_sizes, acts, dlogits)


def surrogate_grads(params: PolicyParams, obs, actions, reward_weights, cost_weights) -> GradReport:
    """Gradients of the weighted importance-ratio surrogates at the sampling
    policy itself, where d(ratio)/dtheta = d(log pi)/dtheta.

    Returns g = grad mean[ratio * w_R] and b = grad mean[(ratio - 1) * w_C].
    """
    w_r = np.asarray(reward_weights, dtype=float)
    w_c = np.asarray(cost_weights, dtype=float)
    if not (np.isfinite(w_r).all() and np.isfinite(w_c).all()):
        raise ValueError("non-finite surrogate weights")
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    n = obs.shape[0]
    theta_net, logstd = _split(params)
    out, acts = nets.forward(theta_net, params.net_sizes, obs)

    def weighted_score(w):
        if params.head == "gaussian":
            mean = out
            a = np.atleast_2d(actions)
            inv_var = np.exp(-2.0 * np.clip(logstd, LOGSTD_MIN, LOGSTD_MAX))
            dmean = (a - mean) * inv_var * w[:, None] / n
            g_net = nets.backward(theta_net, params.net_sizes, acts, dmean)
            dls = (((a - mean) ** 2) * inv_var - 1.0) * w[:, None] / n
            return np.concatenate([g_net, dls.sum(axis=0)])
        p = np.exp(_log_softmax(out))
        idx = np.asarray(actions, dtype=int).reshape(-1)
        dlogits = -p * w[:, None] / n
        dlogits[np.arange(n), idx] += w / n
        return nets.backward(theta_net, params.net_sizes, acts, dlogits)

    return GradReport(weighted_score(w_r), weighted_score(w_c))


def surrogate_value(params_new, params_old, obs, actions, weights, delta_form=False) -> float:
    """mean[ratio * w], or mean[(ratio - 1) * w] when delta_form is set."""
    r = ratio(params_new, params_old, obs, actions)
    w = np.asarray(weights, dtype=float)
    return float(((r - 1.0) * w).mean()) if delta_form else float((r * w).mean())


def fisher_vector_product(params: PolicyParams, obs, v: np.ndarray, damping: float = 0.0) -> np.ndarray:
    """(H + damping I) v, with H the Hessian of mean KL at params against
    itself (Gauss-Newton/Fisher form, exact for these heads).
    """
    if not np.isfinite(v).all():
        raise ValueError("non-finite vector in Fisher-vector product")
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    n = obs.shape[0]
    theta_net, logstd = _split(params)
    out, acts = nets.forward(theta_net, params.net_sizes, obs)
    if params.head == "gaussian":
        v_net, v_ls = v[: params.n_net], v[params.n_net :]
        t = nets.jvp(theta_net, params.net_sizes, acts, v_net)
        inv_var = np.exp(-2.0 * np.clip(logstd, LOGSTD_MIN, LOGSTD_MAX))
        hv_net = nets.backward(theta_net, params.net_sizes, acts, t * inv_var / n)
        hv = np.concatenate([hv_net, 2.0 * v_ls])
    else:
        t = nets.jvp(theta_net, params.net_sizes, acts, v)
        p = np.exp(_log_softmax(out))
        mt = p * t - p * (p * t).sum(axis=1, keepdims=True)
        hv = nets.backward(theta_net, params.net_sizes, acts, mt / n)
    return hv + damping * v


# ---------------------------------------------------------------- critics

def _softplus(x):
    return np.logaddexp(0.0, x)


def value_r(critics: CriticParams, obs) -> np.ndarray:
    out, _ = nets.forward(critics.phi_r, critics.sizes, np.atleast_2d(obs))
    return out[:, 0]


def value_c(critics: CriticParams, obs) -> np.ndarray:
    out, _ = nets.forward(critics.phi_c, critics.sizes, np.atleast_2d(obs))
    return _softplus(out[:, 0])


def critic_loss(critics: CriticParams, obs, target_r, target_c) -> tuple[float, float]:
    lr_ = float(((value_r(critics, obs) - target_r) ** 2).mean())
    lc_ = float(((value_c(critics, obs) - target_c) ** 2).mean())
    return lr_, lc_


class _Adam:
    def __init__(self, n, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m, self.v, self.t = np.zeros(n), np.zeros(n), 0

    def step(self, theta, grad):
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad**2
        mhat = self.m / (1 - self.b1**self.t)
        vhat = self.v / (1 - self.b2**self.t)
        return theta - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def critic_fit(critics: CriticParams, obs, target_r, target_c, epochs: int = 80, lr: float = 1e-3) -> CriticParams:
    """Full-batch regression of both critics onto their targets."""
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    target_r = np.asarray(target_r, dtype=float)
    target_c = np.asarray(target_c, dtype=float)
    if not (np.isfinite(target_r).all() and np.isfinite(target_c).all()):
        raise ValueError("non-finite critic targets")
    if (target_c < 0).any():
        raise ValueError("cost targets must be >= 0")
    n = obs.shape[0]
    sizes = critics.sizes

    phi_r = critics.phi_r.copy()
    opt = _Adam(phi_r.size, lr)
    for _ in range(epochs):
        out, acts = nets.forward(phi_r, sizes, obs)
        dy = 2.0 * (out[:, 0] - target_r)[:, None] / n
        phi_r = opt.step(phi_r, nets.backward(phi_r, sizes, acts, dy))

    phi_c = critics.phi_c.copy()
    opt = _Adam(phi_c.size, lr)
    for _ in range(epochs):
        out, acts = nets.forward(phi_c, sizes, obs)
        pred = _softplus(out[:, 0])
        dy = (2.0 * (pred - target_c) / (1.0 + np.exp(-out[:, 0])))[:, None] / n
        phi_c = opt.step(phi_c, nets.backward(phi_c, sizes, acts, dy))

    return CriticParams(critics.obs_dim, critics.hidden, phi_r, phi_c)


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(path, params: PolicyParams, critics: CriticParams) -> None:
    """Plain-text topology header + flat float64 parameter blob."""
    import json

    header = {
        "obs_dim": params.obs_dim,
        "act_dim": params.act_dim,
        "hidden": list(params.hidden),
        "head": params.head,
        "critic_hidden": list(critics.hidden),
        "n_theta": int(params.theta.size),
        "n_phi": int(critics.phi_r.size),
    }
    with open(path, "wb") as fh:
        fh.write((json.dumps(header) + "\n").encode())
        fh.write(np.ascontiguousarray(params.theta, dtype=np.float64).tobytes())
        fh.write(np.ascontiguousarray(critics.phi_r, dtype=np.float64).tobytes())
        fh.write(np.ascontiguousarray(critics.phi_c, dtype=np.float64).tobytes())


def load_checkpoint(path) -> tuple[PolicyParams, CriticParams]:
    import json

    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        blob = np.frombuffer(fh.read(), dtype=np.float64)
    nt, nphi = header["n_theta"], header["n_phi"]
    theta = blob[:nt]
    phi_r = blob[nt : nt + nphi]
    phi_c = blob[nt + nphi : nt + 2 * nphi]
    params = PolicyParams(header["obs_dim"], header["act_dim"], tuple(header["hidden"]), header["head"], theta)
    critics = CriticParams(
        header["obs_dim"], tuple(header["critic_hidden"]), phi_r.copy(), phi_c.copy()
    )
    return params, critics
