"""One constrained trust-region step, by hand.

Builds a small quadratic model (objective gradient g, constraint gradient b,
slack c, curvature H) and shows the three regimes of the step solver:

  - constraint slack strongly negative -> plain natural-gradient step,
  - constraint active -> dual multipliers trade return against cost,
  - constraint unreachable within the KL ball -> recovery step that ignores
    the objective and descends the constraint.
"""

import numpy as np

from esbcpo import trustregion as tr

rng = np.random.default_rng(7)
n = 5
a = rng.standard_normal((n, n))
h = a @ a.T + n * np.eye(n)  # SPD curvature, stands in for the Fisher
g = rng.standard_normal(n)
b = rng.standard_normal(n)
delta = 0.01

hvp = lambda v: h @ v
hinv_g = tr.conjugate_gradient(hvp, g, iters=n)
hinv_b = tr.conjugate_gradient(hvp, b, iters=n)

for label, c in [("slack, constraint ignorable", -50.0),
                 ("tight, constraint active", 0.05),
                 ("infeasible, recovery", 5.0)]:
    problem = tr.StepProblem(g, b, c, hvp, delta)
    sol = tr.solve_dual(problem, hinv_g, hinv_b)
    d = tr.propose_step(problem, sol)
    kl = 0.5 * d @ h @ d
    print(f"{label:32s} c={c:+6.2f}  feasible={sol.feasible_branch!s:5s} "
          f"mu1={sol.mu1:8.3f} mu2={sol.mu2:6.3f}  g.d={g @ d:+.4f} "
          f"b.d={b @ d:+.4f}  KL={kl:.4f} (delta={delta})")

print("\nevery step stays on or inside the KL ball; the recovery step has")
print("b.d < 0 by construction, so it always reduces the modeled cost.")
