"""Acceptance gate: one criterion per test, one printed PASS/FAIL line each.

Criteria 1-7 are exact oracle suites and run in seconds. Criteria 8-12 train
full multi-seed runs (minutes each); results are cached on disk under
.acceptance_cache/ keyed by the full configuration, so repeated invocations
reuse them. Delete that directory to force recomputation from scratch.

Run just this gate with:  pytest tests/test_acceptance.py -v -s
"""

import hashlib
import json
import sys
from pathlib import Path

import numpy as np
import pytest

from esbcpo import adaptation as ad
from esbcpo import envs, nets
from esbcpo import policy as pol
from esbcpo import trainer
from esbcpo import trustregion as tr
from esbcpo.trainer import AlgoConfig, CmdpConfig

RNG = np.random.default_rng
CACHE_DIR = Path(__file__).resolve().parent.parent / ".acceptance_cache"

# shared configuration for the behavioral criteria (circle task):
# horizon 100, discounted objectives at gamma 0.95, cost limit 2.5
# (the 500-step/limit-25 benchmark scaled to preserve the ratio of the
# limit to the unconstrained cost level), 200 epochs, 5 seeds.
SEEDS = (0, 1, 2, 3, 4)
BEHAVIORAL = dict(
    epochs=200,
    gamma=0.95,
    horizon=100,
    steps=400,
    hidden=(32, 32),
    critic_epochs=80,
    lambda_init=5.0,
    alpha_k=0.01,
    alpha_eta=1.5,
)
CIRCLE_D = 2.5


def report(num, desc, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    line = f"CRITERION {num:2d} [{status}] {desc}" + (f" :: {detail}" if detail else "")
    print("\n" + line, file=sys.__stdout__, flush=True)
    assert ok, f"criterion {num} failed: {desc} {detail}"


# ---------------------------------------------------------------------------
# 1. advantage decomposition identity


def test_criterion_01_decomposition_identity():
    rng = RNG(101)
    worst = 0.0
    for _ in range(1000):
        c = rng.uniform(0, 2)
        v_s, v_sp = rng.uniform(0, 10, 2)
        alpha = rng.uniform(1e-3, ad.ALPHA_MAX)
        beta = rng.uniform(0, 1)
        gamma = rng.uniform(0.9, 0.999)
        a_c_td, b1, b2 = ad.esb_decompose(c, v_s, v_sp, alpha, beta, gamma)
        lhs = ad.lae(v_s, v_sp, alpha, beta) / (1 - alpha)
        worst = max(worst, abs(lhs - (a_c_td + b1 + b2)))
    report(1, "advantage decomposition identity over 1000 draws", worst < 1e-10, f"max |gap| = {worst:.3e}")


# ---------------------------------------------------------------------------
# 2. analytic gradients vs central finite differences


def _random_policy(rng, head="gaussian", obs_dim=4, act_dim=2, hidden=(8, 8)):
    p = pol.init_policy(rng, obs_dim, act_dim, hidden, head)
    return p.with_theta(p.theta + 0.3 * rng.standard_normal(p.n_params))


def _random_batch(rng, p, n=6):
    obs = rng.standard_normal((n, p.obs_dim))
    acts, _ = pol.sample_and_logprob(p, obs, rng)
    return obs, acts


def test_criterion_02_gradient_oracle():
    rng = RNG(102)
    worst = 0.0
    for head in ("gaussian", "categorical"):
        for _ in range(10):
            p = _random_policy(rng, head)
            obs, acts = _random_batch(rng, p)
            w = rng.standard_normal(len(obs))
            g = pol.surrogate_grads(p, obs, acts, w, w).objective_grad
            gfd = nets.finite_diff_grad(
                lambda th: pol.surrogate_value(p.with_theta(th), p, obs, acts, w), p.theta.copy()
            )
            worst = max(worst, np.linalg.norm(g - gfd) / max(np.linalg.norm(gfd), 1e-8))
    for _ in range(10):
        critics = pol.init_critics(rng, 3, (6,))
        obs = rng.standard_normal((5, 3))
        y = rng.standard_normal(5)
        sizes = critics.sizes
        out, acts_fw = nets.forward(critics.phi_r, sizes, obs)
        g = nets.backward(critics.phi_r, sizes, acts_fw, 2.0 * (out[:, 0] - y)[:, None] / 5)

        def loss(phi):
            o, _ = nets.forward(phi, sizes, obs)
            return ((o[:, 0] - y) ** 2).mean()

        gfd = nets.finite_diff_grad(loss, critics.phi_r.copy())
        worst = max(worst, np.linalg.norm(g - gfd) / np.linalg.norm(gfd))
    report(2, "policy/critic gradients vs finite differences", worst < 1e-4, f"max rel err = {worst:.3e}")


# ---------------------------------------------------------------------------
# 3. Fisher-vector products vs KL-gradient second differences


def test_criterion_03_fvp_oracle():
    rng = RNG(103)
    worst = 0.0
    for head in ("gaussian", "categorical"):
        for _ in range(5):
            p = _random_policy(rng, head)
            obs = rng.standard_normal((6, 4))
            v = rng.standard_normal(p.n_params)
            hv = pol.fisher_vector_product(p, obs, v)
            eps = 1e-5
            fd = (
                pol.kl_grad(p.with_theta(p.theta + eps * v), p, obs)
                - pol.kl_grad(p.with_theta(p.theta - eps * v), p, obs)
            ) / (2 * eps)
            worst = max(worst, np.linalg.norm(hv - fd) / np.linalg.norm(fd))
    # symmetry and positive semidefiniteness
    p = _random_policy(rng, "gaussian")
    obs = rng.standard_normal((6, 4))
    sym_ok, psd_ok = True, True
    for _ in range(10):
        u, v = rng.standard_normal((2, p.n_params))
        hu = pol.fisher_vector_product(p, obs, u)
        hv = pol.fisher_vector_product(p, obs, v)
        sym_ok = sym_ok and abs(u @ hv - v @ hu) < 1e-8
        psd_ok = psd_ok and v @ hv >= -1e-10
    report(
        3,
        "Fisher-vector product oracle + symmetry/PSD",
        worst < 1e-3 and sym_ok and psd_ok,
        f"max rel err = {worst:.3e}, symmetric = {sym_ok}, PSD = {psd_ok}",
    )


# ---------------------------------------------------------------------------
# 4. trust-region dual solution vs 200x200 grid search


def test_criterion_04_dual_oracle():
    rng = RNG(104)
    worst = 0.0
    checked = 0
    while checked < 10:
        a = rng.standard_normal((5, 5))
        h = a @ a.T + 5 * np.eye(5)
        g = rng.standard_normal(5)
        b = rng.standard_normal(5)
        c = rng.uniform(-1.0, 0.5)
        delta = 10 ** rng.uniform(-3, -1)
        hinv_g = np.linalg.solve(h, g)
        hinv_b = np.linalg.solve(h, b)
        problem = tr.StepProblem(g, b, c, lambda v: h @ v, delta)
        sol = tr.solve_dual(problem, hinv_g, hinv_b)
        if not sol.feasible_branch:
            continue  # the dual only exists for the feasible subproblem
        checked += 1
        q, r, s = g @ hinv_g, g @ hinv_b, b @ hinv_b
        analytic = tr.dual_value(max(sol.mu1, 1e-12), sol.mu2, q, r, s, c, delta)
        best = np.inf
        for m1 in np.geomspace(1e-4, 1e4, 200):
            for m2 in np.concatenate([[0.0], np.geomspace(1e-6, 1e4, 199)]):
                best = min(best, tr.dual_value(m1, m2, q, r, s, c, delta))
        worst = max(worst, analytic - best)  # grid is a subset: analytic must not exceed it
    report(4, "dual multipliers vs 200x200 grid on 10 problems", worst < 1e-3, f"max gap = {worst:.3e}")


# ---------------------------------------------------------------------------
# 5. conjugate gradient vs dense solve


def test_criterion_05_cg_oracle():
    rng = RNG(105)
    worst = 0.0
    for _ in range(10):
        a = rng.standard_normal((20, 20))
        h = a @ a.T + 20 * np.eye(20)
        rhs = rng.standard_normal(20)
        x = tr.conjugate_gradient(lambda v: h @ v, rhs, iters=20, tol=1e-14)
        exact = np.linalg.solve(h, rhs)
        worst = max(worst, np.linalg.norm(x - exact) / np.linalg.norm(exact))
    report(5, "conjugate gradient vs dense solve on 20x20 SPD", worst < 1e-6, f"max rel err = {worst:.3e}")


# ---------------------------------------------------------------------------
# 6. safety-state / beta / alpha frozen unit vectors


def test_criterion_06_adaptation_unit_vectors():
    checks = [
        # safety-state recursion
        ad.safety_trace(np.zeros(3), 0.99, 25.0).z[0] == 1.0,
        ad.update_safety_state(1.0, 25.0, 1.0, 25.0) == 0.0,
        abs(ad.update_safety_state(1.0, 0.0, 0.99, 25.0) - 1.0 / 0.99) < 1e-9,
        # beta gate
        ad.compute_beta(0.7) == 1.0,
        ad.compute_beta(0.0) == 1.0,
        abs(ad.compute_beta(-1.0) - 0.23840584404423515) < 1e-9,
        # multiplier update
        ad.update_lambda(ad.AlphaState(lambda_=0.7, k=1.0, eta=0.1), 0.0).lambda_ == 0.7,
        ad.update_lambda(ad.AlphaState(lambda_=0.5, k=1.0, eta=0.1), -10.0).lambda_ == 0.0,
        abs(ad.update_lambda(ad.AlphaState(lambda_=0.0, k=1.0, eta=0.1), 2.0).lambda_ - 0.2) < 1e-12,
        # alpha schedule
        ad.compute_alpha(10.0, 1.0) == ad.ALPHA_MAX,
        abs(ad.compute_alpha(0.0, 0.01) - np.tanh(0.01)) < 1e-9,
        abs(ad.compute_alpha(1.0, 1.0) - 0.99132891580059979) < 1e-9,
        # advantage estimator
        ad.lae(4.0, 4.0, 0.3, 1.0) == 0.0,
        abs(ad.lae(2.0, 3.0, 0.5, 1.0) - 0.5) < 1e-12,
        abs(ad.lae(2.0, 3.0, 0.5, 0.0) - 2.0) < 1e-12,
    ]
    report(6, "safety-state/beta/alpha/advantage frozen examples", all(checks), f"{sum(checks)}/{len(checks)} exact")


# ---------------------------------------------------------------------------
# 7. hard trust-region guarantees across a full training run


def test_criterion_07_trust_region_guarantees():
    recovery_products = []
    original = tr.propose_step

    def recording_propose_step(problem, solution):
        direction = original(problem, solution)
        if not solution.feasible_branch and np.linalg.norm(direction) > 0:
            recovery_products.append(float(problem.b @ direction))
        return direction

    cfg = _algo_config("esb-cpo", CIRCLE_D, epochs=80)
    spec = envs.get_spec("point-circle")
    tr.propose_step = recording_propose_step
    try:
        _, history = trainer.train(cfg, spec, seed=0)
    finally:
        tr.propose_step = original
    kl_ok = all(m.kl <= cfg.trust.delta + 1e-8 for m in history if m.accepted)
    rec_ok = all(p < 0 for p in recovery_products)
    report(
        7,
        "accepted-step KL bound and recovery-step descent across a full run",
        kl_ok and rec_ok and len(recovery_products) > 0,
        f"max KL = {max(m.kl for m in history):.5f} (delta = {cfg.trust.delta}), "
        f"{len(recovery_products)} recovery steps, max b.d = "
        f"{max(recovery_products, default=float('nan')):.4f}",
    )


# ---------------------------------------------------------------------------
# behavioral runs (criteria 8-12), cached on disk


def _algo_config(algo, d, epochs=None, gamma=None):
    p = BEHAVIORAL
    return AlgoConfig(
        algorithm=algo,
        epochs=epochs or p["epochs"],
        cmdp=CmdpConfig(gamma=gamma or p["gamma"], cost_limit=d, horizon=p["horizon"]),
        steps_per_epoch=p["steps"],
        hidden=p["hidden"],
        critic_epochs=p["critic_epochs"],
        adaptation=ad.AlphaState(k=p["alpha_k"], eta=p["alpha_eta"], lambda_=p["lambda_init"]),
    )


def _run(algo, env, seed, d):
    key = json.dumps([algo, env, seed, d, sorted(BEHAVIORAL.items())], default=str)
    path = CACHE_DIR / (hashlib.sha256(key.encode()).hexdigest()[:24] + ".npz")
    if path.exists():
        z = np.load(path)
        return {k: z[k] for k in z.files}
    _, history = trainer.train(_algo_config(algo, d), envs.get_spec(env), seed)
    out = dict(
        cost=np.array([m.avg_cost for m in history]),
        ret=np.array([m.avg_return for m in history]),
        esb=np.array([m.esb_total for m in history]),
        alpha=np.array([m.alpha for m in history]),
    )
    CACHE_DIR.mkdir(exist_ok=True)
    np.savez(path, **out)
    return out


def _phase(x, frac=0.1, tail=False):
    n = len(x)
    k = max(int(round(frac * n)), 1)
    return float(np.mean(x[-k:] if tail else x[:k]))


@pytest.fixture(scope="module")
def circle_runs():
    return {
        algo: [_run(algo, "point-circle", s, CIRCLE_D) for s in SEEDS]
        for algo in ("esb-cpo", "esb-cpo-g1", "cpo")
    }


def test_criterion_08_constraint_satisfaction(circle_runs):
    limit = 1.2 * CIRCLE_D
    esb = np.mean([_phase(r["cost"], tail=True) for r in circle_runs["esb-cpo"]])
    cpo = np.mean([_phase(r["cost"], tail=True) for r in circle_runs["cpo"]])
    report(
        8,
        "final-phase mean cost within 1.2x the limit (adaptive method and baseline)",
        esb <= limit and cpo <= limit,
        f"adaptive = {esb:.2f}, baseline = {cpo:.2f}, bound = {limit:.2f}",
    )


def test_criterion_09_early_exploration(circle_runs):
    wins = 0
    for e, c in zip(circle_runs["esb-cpo"], circle_runs["cpo"]):
        cost_hi = _phase(e["cost"]) > _phase(c["cost"])
        ret_ok = _phase(e["ret"]) >= _phase(c["ret"])
        wins += cost_hi and ret_ok
    report(9, "early phase: higher cost and no worse return than baseline in >= 4/5 seeds", wins >= 4, f"{wins}/5 seeds")


def test_criterion_10_budget_decay(circle_runs):
    wins, ratios = 0, []
    for r in circle_runs["esb-cpo"]:
        early = np.mean(np.abs(r["esb"][: len(r["esb"]) // 10]))
        late = np.mean(np.abs(r["esb"][-len(r["esb"]) // 10 :]))
        ratios.append(late / early)
        wins += late < 0.1 * early
    report(
        10,
        "extra-budget magnitude decays below 10% of its early level in >= 4/5 seeds",
        wins >= 4,
        "ratios = " + ", ".join(f"{x:.3f}" for x in ratios),
    )


def test_criterion_11_ablation_ordering(circle_runs):
    # orderings are statistical over 5 seeds: required within one pooled
    # standard deviation, exact values reported
    fin = {a: np.array([_phase(r["ret"], tail=True) for r in circle_runs[a]]) for a in circle_runs}
    early = {a: np.array([_phase(r["cost"]) for r in circle_runs[a]]) for a in circle_runs}

    def pooled(x, y):
        return float(np.sqrt((x.var(ddof=1) + y.var(ddof=1)) / 2))

    ok_g1 = fin["esb-cpo"].mean() >= fin["esb-cpo-g1"].mean() - pooled(fin["esb-cpo"], fin["esb-cpo-g1"])
    ok_cpo = fin["esb-cpo"].mean() >= fin["cpo"].mean() - pooled(fin["esb-cpo"], fin["cpo"])
    ok_cost = all(
        early["esb-cpo"].mean() >= early[a].mean() - pooled(early["esb-cpo"], early[a])
        for a in ("esb-cpo-g1", "cpo")
    )
    report(
        11,
        "ablation ordering: full variant matches reduced variant and baseline",
        ok_g1 and ok_cost and ok_cpo,
        f"final returns full/g1/cpo = {fin['esb-cpo'].mean():.2f}/{fin['esb-cpo-g1'].mean():.2f}/"
        f"{fin['cpo'].mean():.2f}; early costs = {early['esb-cpo'].mean():.2f}/"
        f"{early['esb-cpo-g1'].mean():.2f}/{early['cpo'].mean():.2f}",
    )


def test_criterion_12_near_unconstrained_regime():
    trpo = [_run("trpo", "point-goal", s, CIRCLE_D) for s in SEEDS]  # d unused by trpo
    trpo_cost = float(np.mean([_phase(r["cost"], tail=True) for r in trpo]))
    trpo_ret = float(np.mean([_phase(r["ret"], tail=True) for r in trpo]))
    d = round(1.1 * trpo_cost, 4)
    esb = [_run("esb-cpo", "point-goal", s, d) for s in SEEDS]
    esb_ret = float(np.mean([_phase(r["ret"], tail=True) for r in esb]))
    report(
        12,
        "near-unconstrained limit: adaptive method keeps >= 80% of unconstrained return",
        esb_ret >= 0.8 * trpo_ret,
        f"limit = {d:.3f} (1.1x unconstrained cost {trpo_cost:.3f}), "
        f"returns: adaptive = {esb_ret:.3f}, unconstrained = {trpo_ret:.3f}",
    )
