"""Pathwise Doob and Burkholder hedges: deterministic inequalities, checked path by path."""

from cadlag_mot import burkholder_qv_hedge, doob_power_hedge, sample_paths

paths = sample_paths({"kind": "compound-jump", "d": 1, "max_jumps": 8, "sigma": 0.3}, 2000, seed=1)

# (p/(p-1))^p S_T^p - p/(p-1) + int gamma dS dominates the running maximum to the p
for p in (1.5, 2.0, 3.0):
    h = doob_power_hedge(p, 1, paths)
    print(f"Doob p={p}: {h.violations} violations, min slack {h.min_slack:.2e}")

# square function of the skeleton, hedged with |gamma| <= 1
for eps in (0.05, 0.1, 0.5):
    worst, gmax = float("inf"), 0.0
    for S in paths:
        B = burkholder_qv_hedge(eps, S)
        worst = min(worst, B.slacks_path.min(initial=0.0))
        gmax = max(gmax, B.gamma_bound)
    print(f"Burkholder eps={eps}: min slack {worst:.3f}, max |gamma| {gmax:.3f}")
