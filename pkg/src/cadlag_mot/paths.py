"""
Piecewise-constant cadlag paths and Skorokhod-type distances.

A path starts at (1, ..., 1), jumps at finitely many times inside (0, T) and
is constant on its last interval, so it is continuous at the horizon.  The
distance routines are exact for such paths: the infimum over time changes is
reduced to a bottleneck shortest path over interleavings of the two jump
sequences.
"""

import math
from typing import Dict, List, Optional, Sequence

import numba
import numpy as np

TOL = 1e-12

__all__ = [
    "StepPath",
    "TimeChange",
    "evaluate",
    "sup_norm",
    "sup_distance",
    "path_time_integral",
    "canonical",
    "same_function",
    "skorokhod_distance",
    "skorokhod_distance_oracle",
    "modified_distance",
    "sample_paths",
    "path_to_json",
    "path_from_json",
]


class StepPath:
    """Right-continuous step path on [0, T] started at the all-ones vector.

    Parameters
    ----------
    T : float
        Horizon.
    times : array_like, shape (m,)
        Strictly increasing knot times in (0, T).  A knot may carry the same
        value as its predecessor; lattice paths use such knots to record
        their partition.
    values : array_like, shape (m + 1, d)
        Level held on [0, t_1), [t_1, t_2), ..., [t_m, T].
    positive : bool
        Whether every coordinate must be strictly positive.
    """

    __slots__ = ("T", "times", "values", "positive")

    def __init__(self, T, times, values, positive: bool = True, check: bool = True):
        times = np.array(times, dtype=float).reshape(-1)
        values = np.array(values, dtype=float)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        self.T = float(T)
        self.times = times
        self.values = values
        self.positive = bool(positive)
        if check:
            self._validate()
        self.times.setflags(write=False)
        self.values.setflags(write=False)

    def _validate(self):
        if not self.T > 0:
            raise ValueError("horizon must be positive")
        m = self.times.shape[0]
        if self.values.shape[0] != m + 1 or self.values.shape[1] < 1:
            raise ValueError("need one value per interval")
        if not np.all(np.isfinite(self.values)) or not np.all(np.isfinite(self.times)):
            raise ValueError("non-finite entries")
        if np.any(self.values[0] != 1.0):
            raise ValueError("paths start at (1, ..., 1)")
        if m:
            if self.times[0] <= 0 or self.times[-1] >= self.T:
                raise ValueError("jump times must lie strictly inside (0, T)")
            if np.any(np.diff(self.times) <= 0):
                raise ValueError("jump times must be strictly increasing")
        if self.positive and np.any(self.values <= 0):
            raise ValueError("positive path with a nonpositive coordinate")

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def n_jumps(self) -> int:
        return self.times.shape[0]

    @property
    def terminal(self) -> np.ndarray:
        return self.values[-1]

    @classmethod
    def constant(cls, d: int = 1, T: float = 1.0, positive: bool = True) -> "StepPath":
        return cls(T, [], np.ones((1, d)), positive)

    @classmethod
    def from_jumps(cls, T, jumps, d: Optional[int] = None, positive: bool = True) -> "StepPath":
        """Build from ``[(t, value), ...]`` pairs; value may be scalar when d = 1."""
        jumps = sorted(jumps, key=lambda tv: tv[0])
        if d is None:
            d = np.size(jumps[0][1]) if jumps else 1
        vals = [np.ones(d)] + [np.broadcast_to(np.asarray(v, dtype=float), (d,)) for _, v in jumps]
        return cls(T, [t for t, _ in jumps], np.array(vals), positive)

    def __call__(self, t):
        return evaluate(self, t)

    def __repr__(self):
        return f"StepPath(d={self.d}, T={self.T}, jumps={self.n_jumps})"


class TimeChange:
    """Piecewise-linear increasing bijection of [0, T] given by breakpoints."""

    def __init__(self, T: float, knots: Sequence[float], images: Sequence[float]):
        x = np.concatenate([[0.0], np.asarray(knots, float), [T]])
        y = np.concatenate([[0.0], np.asarray(images, float), [T]])
        if np.any(np.diff(x) <= 0) or np.any(np.diff(y) <= 0):
            raise ValueError("time change must be strictly increasing")
        self.T = float(T)
        self.x = x
        self.y = y

    def __call__(self, t):
        return np.interp(t, self.x, self.y)

    def inverse(self, s):
        return np.interp(s, self.y, self.x)

    def displacement(self) -> float:
        return float(np.max(np.abs(self.y - self.x)))


def _check_t(path: StepPath, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t > path.T):
        raise ValueError("time outside [0, T]")
    return t


def evaluate(path: StepPath, t):
    """Right-continuous value at ``t`` (vectorised over ``t``)."""
    t = _check_t(path, t)
    idx = np.searchsorted(path.times, t, side="right")
    return path.values[idx]


def left_limit(path: StepPath, t):
    t = _check_t(path, t)
    idx = np.searchsorted(path.times, t, side="left")
    return path.values[idx]


def sup_norm(path: StepPath) -> float:
    return float(np.max(np.linalg.norm(path.values, axis=1)))


def _merged_grid(a: StepPath, b: StepPath):
    grid = np.union1d(a.times, b.times)
    pts = np.concatenate([[0.0], grid])
    return evaluate(a, pts), evaluate(b, pts)


def sup_distance(a: StepPath, b: StepPath) -> float:
    """Uniform distance sup_t |a(t) - b(t)|."""
    _same_space(a, b)
    va, vb = _merged_grid(a, b)
    return float(np.max(np.linalg.norm(va - vb, axis=1)))


def path_time_integral(path: StepPath) -> np.ndarray:
    edges = np.concatenate([[0.0], path.times, [path.T]])
    return np.diff(edges) @ path.values


def canonical(path: StepPath) -> StepPath:
    """Drop knots that do not change the value."""
    if path.n_jumps == 0:
        return path
    keep = np.any(path.values[1:] != path.values[:-1], axis=1)
    if keep.all():
        return path
    vals = np.vstack([path.values[:1], path.values[1:][keep]])
    return StepPath(path.T, path.times[keep], vals, path.positive, check=False)


def same_function(a: StepPath, b: StepPath) -> bool:
    if a.T != b.T or a.d != b.d:
        return False
    ca, cb = canonical(a), canonical(b)
    return (
        ca.n_jumps == cb.n_jumps
        and np.array_equal(ca.times, cb.times)
        and np.array_equal(ca.values, cb.values)
    )


def _same_space(a: StepPath, b: StepPath):
    if a.d != b.d:
        raise ValueError("dimension mismatch")
    if abs(a.T - b.T) > TOL:
        raise ValueError("horizon mismatch")


@numba.njit(cache=True)
def _bottleneck(ta, va, tb, vb, T, additive):
    p = ta.shape[0]
    q = tb.shape[0]
    cost = np.empty((p + 1, q + 1))
    for i in range(p + 1):
        for j in range(q + 1):
            s = 0.0
            for c in range(va.shape[1]):
                diff = va[i, c] - vb[j, c]
                s += diff * diff
            cost[i, j] = math.sqrt(s)
    best = np.full((p + 1, q + 1), np.inf)
    best[0, 0] = cost[0, 0]
    for i in range(p + 1):
        for j in range(q + 1):
            cur = best[i, j]
            c0 = cost[i, j]
            if i < p:
                # next jump of a falls while b is in state j
                t = ta[i]
                lo = 0.0 if j == 0 else tb[j - 1]
                hi = T if j == q else tb[j]
                disp = max(lo - t, t - hi, 0.0)
                vc = max(c0, cost[i + 1, j])
                w = disp + vc if additive else max(disp, vc)
                w = max(w, cur)
                if w < best[i + 1, j]:
                    best[i + 1, j] = w
            if j < q:
                # next jump of b is placed strictly inside a's current gap
                s_ = tb[j]
                lo = 0.0 if i == 0 else ta[i - 1]
                hi = T if i == p else ta[i]
                disp = max(lo - s_, s_ - hi, 0.0)
                vc = max(c0, cost[i, j + 1])
                w = disp + vc if additive else max(disp, vc)
                w = max(w, cur)
                if w < best[i, j + 1]:
                    best[i, j + 1] = w
            if i < p and j < q:
                disp = abs(ta[i] - tb[j])
                vc = max(c0, cost[i + 1, j + 1])
                w = disp + vc if additive else max(disp, vc)
                w = max(w, cur)
                if w < best[i + 1, j + 1]:
                    best[i + 1, j + 1] = w
    return best[p, q]


def _kind_flag(kind: str) -> bool:
    if kind not in ("max", "sum"):
        raise ValueError("kind must be 'max' or 'sum'")
    return kind == "sum"


def skorokhod_distance(a: StepPath, b: StepPath, kind: str = "max") -> float:
    """Exact Skorokhod distance between two step paths.

    ``kind="max"`` is inf over time changes of max(sup |a - b o lambda|,
    sup |lambda - id|); ``kind="sum"`` takes the sup of the pointwise sum
    instead.  Both are computed by a bottleneck dynamic programme over the
    states (i, j) = (jumps of a consumed, jumps of b consumed).
    """
    _same_space(a, b)
    additive = _kind_flag(kind)
    ca, cb = canonical(a), canonical(b)
    return float(
        _bottleneck(
            np.ascontiguousarray(ca.times),
            np.ascontiguousarray(ca.values),
            np.ascontiguousarray(cb.times),
            np.ascontiguousarray(cb.values),
            a.T,
            additive,
        )
    )


def _interleavings(p: int, q: int):
    # move sequences over {0: a-jump, 1: b-jump, 2: simultaneous}
    def rec(i, j, acc):
        if i == p and j == q:
            yield tuple(acc)
            return
        if i < p:
            acc.append(0)
            yield from rec(i + 1, j, acc)
            acc.pop()
        if j < q:
            acc.append(1)
            yield from rec(i, j + 1, acc)
            acc.pop()
        if i < p and j < q:
            acc.append(2)
            yield from rec(i + 1, j + 1, acc)
            acc.pop()

    yield from rec(0, 0, [])


def _spread(targets: List[float], lo: float, hi: float, eta: float) -> List[float]:
    # clamp into (lo, hi), then force strict increase with gaps >= eta
    r = len(targets)
    out = []
    prev = lo
    for k, v in enumerate(targets):
        v = min(max(v, prev + eta), hi - (r - k) * eta)
        out.append(v)
        prev = v
    return out


def _time_change_for(moves, ta, tb, T, eta):
    """Concrete time change realising an interleaving, with eta-separated anchors."""
    ta_ext = [0.0] + list(ta) + [T]
    tb_ext = [0.0] + list(tb) + [T]
    # gap of a (index i) hosting each unmatched b jump; b-state hosting each unmatched a jump
    i = j = 0
    b_gap: Dict[int, List[int]] = {}
    a_state: Dict[int, List[int]] = {}
    pairs = []
    for mv in moves:
        if mv == 0:
            a_state.setdefault(j, []).append(i)
            i += 1
        elif mv == 1:
            b_gap.setdefault(i, []).append(j)
            j += 1
        else:
            pairs.append((i, j))
            i += 1
            j += 1
    knots, images = [], []
    for i0, (ai, bj) in enumerate(pairs):
        knots.append(ta[ai])
        images.append(tb[bj])
    for gi, js in b_gap.items():
        # b jumps js placed in (ta_ext[gi], ta_ext[gi+1])
        us = _spread([tb[jj] for jj in js], ta_ext[gi], ta_ext[gi + 1], eta)
        knots.extend(us)
        images.extend(tb[jj] for jj in js)
    for sj, is_ in a_state.items():
        ls = _spread([ta[ii] for ii in is_], tb_ext[sj], tb_ext[sj + 1], eta)
        knots.extend(ta[ii] for ii in is_)
        images.extend(ls)
    order = np.argsort(knots, kind="stable")
    knots = np.asarray(knots)[order]
    images = np.asarray(images)[order]
    return TimeChange(T, knots, images)


def _sup_for_time_change(a: StepPath, b: StepPath, lam: TimeChange, additive: bool) -> float:
    # on each piece between breakpoints a and b o lambda are constant and
    # lambda - id is linear, so the sup sits at the piece ends
    x = lam.x
    mids = 0.5 * (x[:-1] + x[1:])
    va = evaluate(a, mids)
    vb = evaluate(b, np.clip(lam(mids), 0.0, b.T))
    mismatch = np.linalg.norm(va - vb, axis=1)
    disp = np.abs(lam.y - lam.x)
    dmax = np.maximum(disp[:-1], disp[1:])
    if additive:
        return float(np.max(mismatch + dmax))
    return float(max(np.max(mismatch), np.max(disp)))


def skorokhod_distance_oracle(
    a: StepPath, b: StepPath, kind: str = "max", eta: float = 1e-12, max_jumps: int = 12
) -> float:
    """Brute-force Skorokhod distance for small paths.

    Every interleaving of the two jump sequences (each jump of one path
    either matched with a jump of the other or absorbed between two of its
    jumps) is turned into an explicit piecewise-linear time change, and the
    supremum is evaluated directly.  Exponential in the number of jumps.
    """
    _same_space(a, b)
    additive = _kind_flag(kind)
    ca, cb = canonical(a), canonical(b)
    if ca.n_jumps + cb.n_jumps > max_jumps:
        raise ValueError("too many jumps for the exhaustive oracle")
    ta, tb = list(ca.times), list(cb.times)
    best = math.inf
    for moves in _interleavings(len(ta), len(tb)):
        lam = _time_change_for(moves, ta, tb, a.T, eta)
        best = min(best, _sup_for_time_change(ca, cb, lam, additive))
    return best


def modified_distance(a: StepPath, b: StepPath, kind: str = "max") -> float:
    """Skorokhod distance plus the norm of the difference of time integrals."""
    gap = np.linalg.norm(path_time_integral(a) - path_time_integral(b))
    return skorokhod_distance(a, b, kind) + float(gap)


# ---------------------------------------------------------------- sampling

def _uniform_times(rng, k: int, T: float) -> np.ndarray:
    t = np.unique(rng.uniform(0.0, T, size=k))
    return t[(t > 0) & (t < T)]


def _binomial_walk(rng, prm) -> StepPath:
    d, T = int(prm.get("d", 1)), float(prm.get("T", 1.0))
    steps, up = int(prm.get("steps", 10)), float(prm.get("up", 1.1))
    times = _uniform_times(rng, steps, T)
    signs = rng.choice([-1.0, 1.0], size=(times.size, d))
    vals = np.vstack([np.ones((1, d)), up ** np.cumsum(signs, axis=0)])
    return StepPath(T, times, vals, True)


def _compound_jump(rng, prm) -> StepPath:
    d, T = int(prm.get("d", 1)), float(prm.get("T", 1.0))
    max_jumps = int(prm.get("max_jumps", 8))
    sigma = float(prm.get("sigma", 0.2))
    positive = bool(prm.get("positive", True))
    k = int(rng.integers(0, max_jumps + 1))
    times = _uniform_times(rng, k, T)
    z = rng.normal(size=(times.size, d))
    if positive:
        incr = np.exp(sigma * z - 0.5 * sigma ** 2)
        vals = np.cumprod(np.vstack([np.ones((1, d)), incr]), axis=0)
    else:
        vals = np.vstack([np.ones((1, d)), 1.0 + np.cumsum(sigma * z, axis=0)])
    return StepPath(T, times, vals, positive)


def _geometric_steps(rng, prm) -> StepPath:
    d, T = int(prm.get("d", 1)), float(prm.get("T", 1.0))
    steps = int(prm.get("steps", 10))
    sigma = float(prm.get("sigma", 0.2))
    dt = T / (steps + 1)
    times = dt * np.arange(1, steps + 1)
    z = rng.normal(size=(steps, d)) * math.sqrt(dt)
    logs = np.cumsum(sigma * z - 0.5 * sigma ** 2 * dt, axis=0)
    vals = np.vstack([np.ones((1, d)), np.exp(logs)])
    return StepPath(T, times, vals, True)


def _ball_walk(rng, prm) -> StepPath:
    """Free jumps only at multiples of the ball radius; small moves in between.

    Between two grid times the path stays strictly inside the open ball of
    radius ``sqrt(d) 2^-n`` around its value at the last grid time, so its
    exit times are exactly the grid.  Values stay inside ``window``.
    """
    d, T = int(prm.get("d", 1)), float(prm.get("T", 1.0))
    n = int(prm["n"])
    lo, hi = prm.get("window", (0.5, 1.5))
    per_cell = int(prm.get("jumps_per_cell", 3))
    margin = float(prm.get("margin", 0.95))
    r = math.sqrt(d) * 2.0 ** -n
    grid = []
    t = r
    while t < T - TOL:
        grid.append(t)
        t += r
    edges = [0.0] + grid + [T]
    times, vals = [], [np.ones(d)]
    anchor = np.ones(d)
    for c in range(len(edges) - 1):
        a, b = edges[c], edges[c + 1]
        if c > 0:
            anchor = rng.uniform(lo, hi, size=d)
            times.append(a)
            vals.append(anchor)
        k = int(rng.integers(0, per_cell + 1))
        for s in np.sort(rng.uniform(a, b, size=k)):
            if s <= a or s >= b or (times and s <= times[-1]):
                continue
            # uniform direction, radius inside margin * r / sqrt(d) per coordinate
            step = rng.uniform(-1.0, 1.0, size=d) * margin * r / math.sqrt(d)
            v = np.clip(anchor + step, lo, hi)
            times.append(s)
            vals.append(v)
    return StepPath(T, times, np.array(vals), True)


_GENERATORS = {
    "binomial-walk": _binomial_walk,
    "compound-jump": _compound_jump,
    "geometric-steps": _geometric_steps,
    "ball-walk": _ball_walk,
}


def sample_paths(spec: dict, count: int, seed: int) -> List[StepPath]:
    """Draw ``count`` paths from a named generator.

    ``spec`` holds ``kind`` plus generator parameters.  Path ``i`` uses the
    stream ``default_rng([seed, i])`` so results do not depend on how the
    corpus is split.
    """
    kind = spec.get("kind")
    if kind not in _GENERATORS:
        raise ValueError(f"unknown generator {kind!r}")
    if count < 0:
        raise ValueError("count must be nonnegative")
    gen = _GENERATORS[kind]
    prm = {k: v for k, v in spec.items() if k != "kind"}
    return [gen(np.random.default_rng([int(seed), i]), prm) for i in range(count)]


def path_to_json(path: StepPath) -> dict:
    return {
        "d": path.d,
        "T": path.T,
        "jumps": [
            {"t": float(t), "value": [float(x) for x in v]}
            for t, v in zip(path.times, path.values[1:])
        ],
        "positive": path.positive,
    }


def path_from_json(doc: dict) -> StepPath:
    d = int(doc["d"])
    jumps = [(j["t"], j["value"]) for j in doc.get("jumps", [])]
    return StepPath.from_jumps(doc["T"], jumps, d=d, positive=bool(doc.get("positive", True)))
