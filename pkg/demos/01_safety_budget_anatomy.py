"""Anatomy of the adaptive safety budget.

Walks the three adaptation pieces on synthetic data, no training required:

  1. the safety state z tracks the remaining discounted cost budget along a
     trajectory (starts at 1, goes negative once the budget is spent),
  2. the per-state gate beta = 1 + min(tanh z, 0) stays at 1 while safe and
     shrinks toward 0 as the budget overruns,
  3. the global weight alpha = tanh(k * e^lambda) anneals as the Lagrange
     multiplier lambda is driven down by the accepted-step tendency P.
"""

import numpy as np

from esbcpo import adaptation as ad

gamma, d = 0.95, 2.5

# a trajectory that is safe for 10 steps, then sits in the hazard region
costs = np.concatenate([np.zeros(10), np.ones(15)])
trace = ad.safety_trace(costs, gamma, d)

print("step  cost     z      beta")
for t, c in enumerate(costs):
    print(f"{t:4d}  {c:4.1f}  {trace.z[t + 1]:7.3f}  {trace.beta[t + 1]:6.3f}")

print("\nbudget spent at step", int(np.argmax(trace.z[1:] < 0)) + 0)

# alpha annealing: feed the multiplier a stream of negative tendencies, the
# situation while the policy is actively pushing its cost down
state = ad.AlphaState(k=0.01, eta=1.5, lambda_=5.0)
print("\nupdate  lambda   alpha")
print(f"  init  {state.lambda_:6.3f}  {state.alpha:6.4f}")
for i in range(8):
    state = ad.update_lambda(state, p_value=-0.4)
    print(f"{i:6d}  {state.lambda_:6.3f}  {state.alpha:6.4f}")

print("\nalpha near 1 keeps the constraint loose (free exploration);")
print("alpha near 0 recovers the plain constrained update.")
