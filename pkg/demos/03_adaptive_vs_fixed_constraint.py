"""Adaptive budget vs fixed constraint on the circle task (~2 minutes).

Trains the adaptive method and the fixed-constraint baseline for a short
run on the same seed and prints their learning curves side by side. Look
for the signature phases:

  - early: the adaptive run has much higher cost (alpha near 1 loosens the
    constraint and the policy explores like an unconstrained learner) and
    at least comparable return,
  - late: alpha has annealed toward 0, the extra budget shrinks to ~0, and
    both runs sit at or under the cost limit, with the adaptive run keeping
    the return advantage it bought early.

Shorter than the evaluation runs; trends are visible but noisier.
"""

from esbcpo import adaptation, envs, trainer
from esbcpo.trainer import AlgoConfig, CmdpConfig

EPOCHS, D = 120, 2.5
spec = envs.get_spec("point-circle")


def make_config(algorithm):
    return AlgoConfig(
        algorithm=algorithm,
        epochs=EPOCHS,
        cmdp=CmdpConfig(gamma=0.95, cost_limit=D, horizon=100),
        steps_per_epoch=400,
        hidden=(32, 32),
        adaptation=adaptation.AlphaState(k=0.01, eta=1.5, lambda_=5.0),
    )


histories = {}
for algo in ("esb-cpo", "cpo"):
    print(f"training {algo} ...", flush=True)
    _, histories[algo] = trainer.train(make_config(algo), spec, seed=0)

print(f"\ncost limit d = {D}")
print("epoch |   adaptive: cost return alpha  budget |   fixed: cost return")
for e in range(0, EPOCHS, 10):
    a, c = histories["esb-cpo"][e], histories["cpo"][e]
    print(f"{e:5d} |  {a.avg_cost:7.2f} {a.avg_return:6.2f}  {a.alpha:5.3f} {a.esb_total:7.2f}"
          f" |  {c.avg_cost:7.2f} {c.avg_return:6.2f}")

last = EPOCHS // 10
tail = lambda h, f: sum(f(m) for m in h[-last:]) / last
print(f"\nfinal {last}-epoch means:")
for algo in histories:
    print(f"  {algo:8s} cost {tail(histories[algo], lambda m: m.avg_cost):5.2f}"
          f"  return {tail(histories[algo], lambda m: m.avg_return):5.2f}")
