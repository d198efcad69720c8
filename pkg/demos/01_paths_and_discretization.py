"""Step paths, the Skorokhod distance and the lattice maps."""

import numpy as np

from cadlag_mot import (GridSpec, StepPath, map_pi, map_pi_check, map_pi_hat, sample_paths, shifted_times,
                        skorokhod_distance, skorokhod_distance_oracle, stopping_times, sup_distance)

# two paths with one jump each, 0.05 apart in time
a = StepPath.from_jumps(1.0, [(0.40, [2.0])])
b = StepPath.from_jumps(1.0, [(0.45, [2.0])])
print("uniform distance  ", sup_distance(a, b))          # 1.0: the jumps are not aligned
print("Skorokhod distance", skorokhod_distance(a, b))    # 0.05: a time change aligns them
print("brute force       ", skorokhod_distance_oracle(a, b))

# a random path and its three lattice images at level n
spec = GridSpec(n=3, d=1, T=1.0)
r = spec.radius
S = sample_paths({"kind": "compound-jump", "d": 1, "max_jumps": 8, "sigma": 0.3}, 1, seed=5)[0]
tr = stopping_times(S, spec)
print("\nstopping times   ", np.round(tr.times, 4))
print("levels           ", np.round(tr.levels[:, 0], 4))
print("shifted times    ", np.round(shifted_times(tr, spec).times, 4))

pi, chk, hat = map_pi(S, spec), map_pi_check(S, spec), map_pi_hat(S, spec)
print(f"\nr = sqrt(d) 2^-n = {r}")
print("d(S, Pi)        ", round(skorokhod_distance(S, pi), 5), "<=", r)
print("d(Pi, Pi check) ", round(skorokhod_distance(pi, chk), 5), "<=", r)
print("d(Pi check, Pi hat)", round(skorokhod_distance(chk, hat), 5), "<=", 3 * r)

# the bounds shrink with n
for n in range(1, 7):
    spec = GridSpec(n, 1, 1.0)
    paths = sample_paths({"kind": "compound-jump", "max_jumps": 8, "sigma": 0.3}, 200, seed=n)
    worst = max(skorokhod_distance(p, map_pi_hat(p, spec)) for p in paths)
    print(f"n={n}  max d(S, Pi hat) over 200 paths = {worst:.4f}   5r = {5 * spec.radius:.4f}")
