"""Two-threshold heuristic on I1, and the exact joint policy of the
deterministic-shock instance.  Runs in about a minute."""

from shockmaint import instances
from shockmaint.evaluator import evaluate
from shockmaint.exact import check_monotonicity, coupling_states, solo_levels, solve_underlying_mdp
from shockmaint.heuristics import ThresholdPolicy, optimize_thresholds

cfg = instances.I1()
sweep = optimize_thresholds(cfg, reps=2000, horizon=1000, seed=1, ci_warn=1.0)
print(f"I1 thresholds {sweep.policy.tau_pm[0]}/{sweep.policy.tau_opm[0]}: J = {sweep.cost:.3f} +- {sweep.ci_halfwidth:.3f}")
r = evaluate(ThresholdPolicy.reactive(cfg), cfg, reps=2000, horizon=1000, seed=2)
print(f"I1 reactive: J = {r.mean:.3f} +- {r.ci_halfwidth:.3f}")

pol = solve_underlying_mdp(instances.twin_unit())
print("twin-unit solo PM levels:", solo_levels(pol))
print("states with a joint replacement:", len(coupling_states(pol)))
print("monotone in damage:", check_monotonicity(pol).ok)
print("joint action by (x1 rows, x2 cols); 0 none, 1 asset 1, 2 asset 2, 3 both")
for x in range(21):
    print(f"{x:2d} " + "".join(str(int(a)) for a in pol.actions[x]))
