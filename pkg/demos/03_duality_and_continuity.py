"""Strong duality, relaxed markets and continuity in the marginal."""

import numpy as np

from cadlag_mot import (DiscreteMeasure, GridSpec, LatticeTruncation, MOTProblem, convex_order_check,
                        lattice_from_truncation, make_lookback, prokhorov_distance, solve_dual_superhedge,
                        solve_multi_marginal, solve_primal, solve_relaxed)

spec = GridSpec(2, 1, 0.6)
lat = lattice_from_truncation(LatticeTruncation(spec, M_max=2, V_max=1.5, V_min=0.5, durations_per_level=2))
G = lat.evaluate(make_lookback("put_fixed", K=1.2))
mu = DiscreteMeasure([[0.5], [1.0], [1.5]], [0.25, 0.5, 0.25])

v = solve_primal(MOTProblem.terminal(lat, G, mu)).value
w = solve_dual_superhedge(MOTProblem.terminal(lat, G, mu, gamma_bound=np.inf)).value
print(f"primal {v:.6f}  dual {w:.6f}  gap {abs(v - w):.1e}")

# relaxing the marginal and martingale constraints by c/n gives an upper value that falls with n
for n in range(2, 7):
    r = solve_relaxed(MOTProblem.terminal(lat, G, mu, mode="relaxed", c=0.5, relax_n=n))
    print(f"relax_n={n}  value {r.value:.4f}  defect {r.defect:.4f}")

# a mean-preserving perturbation of mu moving towards mu
sigma = DiscreteMeasure([[0.75], [1.25]], [0.5, 0.5])
for k in range(1, 7):
    m = 0.2 * 2.0 ** -k
    nu = DiscreteMeasure.from_pairs(np.vstack([mu.atoms, sigma.atoms]),
                                    np.concatenate([(1 - m) * mu.weights, m * sigma.weights]))
    vk = solve_primal(MOTProblem.terminal(lat, G, nu)).value
    print(f"k={k}  Prokhorov {prokhorov_distance(nu, mu, exact=True):.5f}  |v(nu) - v(mu)| {abs(vk - v):.2e}")

# two dates need the laws in convex order
lat2 = lattice_from_truncation(LatticeTruncation(GridSpec(1, 1, 1.5), M_max=2, V_max=1.5, V_min=0.5,
                                                 durations_per_level=1, dates=(0.75, 1.5)))
wide = DiscreteMeasure([[0.5], [1.0], [1.5]], [0.4, 0.2, 0.4])
print("\nmu <= wide:", bool(convex_order_check(mu, wide)))
res = convex_order_check(wide, mu)
print("wide <= mu:", bool(res), " witness kinks", res.witness.breakpoints(), " gap", res.witness.gap)
G2 = lat2.evaluate(make_lookback("max_minus_terminal"))
print("two-date value:", solve_multi_marginal(MOTProblem(lat2, G2, [(0, mu), (1, wide)])).value)
