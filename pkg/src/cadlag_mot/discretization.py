"""
Dyadic discretisation of path space.

Stopping times that advance either by a fixed time step or when the path
leaves a ball, shifted times that place every knot on a dyadic duration set,
the three projection maps ``map_pi``, ``map_pi_check`` and ``map_pi_hat``,
and finite truncations of the resulting lattice of step paths.

Lattice elements are handled through an exact integer encoding (``Knot``)
so that prefixes of different paths can be compared without floating-point
keys.  A knot records its interval (between consecutive marginal dates),
its index inside that interval, how its time was reached and its level as
integers on the dyadic grid of that knot.
"""

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterator, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .paths import TOL, StepPath

__all__ = [
    "GridSpec",
    "DyadicGrid",
    "DurationSet",
    "StoppingTimeTrace",
    "ShiftedTrace",
    "Knot",
    "LatticeTruncation",
    "ceil_project",
    "grid_ints",
    "stopping_times",
    "shifted_times",
    "map_pi",
    "map_pi_check",
    "map_pi_hat",
    "pi_hat_knots",
    "lattice_code",
    "lattice_membership",
    "knots_to_path",
    "count_lattice",
    "enumerate_lattice",
    "enumerate_lattice_codes",
    "multi_marginal_stopping_times",
    "multi_marginal_map_pi",
    "multi_marginal_map_pi_check",
    "multi_marginal_map_pi_hat",
]

MAX_LEVEL = 1000  # beyond this 2**-m underflows towards subnormals

# how a knot time was reached
FIRST, MUL, DIV, DATE = 0, 1, 2, 3


@dataclass(frozen=True)
class GridSpec:
    n: int
    d: int
    T: float

    def __post_init__(self):
        if self.n < 1 or self.d < 1:
            raise ValueError("need n >= 1 and d >= 1")
        if not self.radius < self.T:
            raise ValueError("mesh sqrt(d) 2^-n must be smaller than T")

    @property
    def radius(self) -> float:
        return math.sqrt(self.d) * math.ldexp(1.0, -self.n)

    def to_json(self) -> dict:
        return {"n": self.n, "d": self.d, "T": self.T}


def ceil_project(x, m: int) -> np.ndarray:
    """Coordinatewise 2^-m * ceil(2^m x)."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("ceil_project needs positive coordinates")
    if m >= MAX_LEVEL:
        return x.copy()
    return np.ldexp(np.ceil(np.ldexp(x, m)), -m)


def grid_ints(x, m: int, tol: float = TOL) -> Optional[Tuple[int, ...]]:
    """Integer coordinates of ``x`` on A^(m), or None if off the grid."""
    x = np.asarray(x, dtype=float)
    scaled = np.ldexp(x, m)
    k = np.rint(scaled)
    if np.any(np.abs(np.ldexp(k, -m) - x) > tol) or np.any(k < 1):
        return None
    return tuple(int(v) for v in k)


@dataclass(frozen=True)
class DyadicGrid:
    """Points of A^(m) with coordinates in [v_min, v_max]."""

    m: int
    d: int
    v_max: float
    v_min: float = 0.0

    def axis(self) -> np.ndarray:
        lo = max(1, math.ceil(math.ldexp(self.v_min, self.m) - 1e-9))
        hi = math.floor(math.ldexp(self.v_max, self.m) + 1e-9)
        return np.arange(lo, hi + 1, dtype=np.int64)

    def size(self) -> int:
        return len(self.axis()) ** self.d

    def points(self) -> Iterator[Tuple[int, ...]]:
        ax = [int(v) for v in self.axis()]
        return itertools.product(ax, repeat=self.d)

    def contains(self, x) -> bool:
        x = np.asarray(x, float)
        return grid_ints(x, self.m) is not None and bool(
            np.all(x <= self.v_max + TOL) and np.all(x >= self.v_min - TOL)
        )


def _rm(m: int, d: int) -> float:
    if m > MAX_LEVEL:
        raise ValueError("duration level too deep for double precision")
    return math.sqrt(d) * math.ldexp(1.0, -m)


def duration_value(fam: int, j: int, m: int, d: int) -> float:
    rm = _rm(m, d)
    return j * rm if fam == MUL else rm / j


@dataclass(frozen=True)
class DurationSet:
    """B^(m) = {j sqrt(d) 2^-m} u {sqrt(d) 2^-m / j}, both families cut at K_max."""

    m: int
    d: int
    K_max: int = 64

    def members(self) -> List[Tuple[float, Tuple[int, int]]]:
        out = {}
        for j in range(1, self.K_max + 1):
            out[(MUL, j)] = duration_value(MUL, j, self.m, self.d)
            if j > 1:
                out[(DIV, j)] = duration_value(DIV, j, self.m, self.d)
        return sorted(((v, c) for c, v in out.items()), reverse=True)

    def below(self, bound: float, count: int) -> List[Tuple[int, int]]:
        """The ``count`` largest codes with value strictly below ``bound``."""
        return [c for v, c in self.members() if v < bound - TOL][:count]

    def sup_below(self, delta: float) -> Tuple[Tuple[int, int], float]:
        """Largest member strictly below ``delta`` (closed form, no truncation).

        Values within TOL of ``delta`` count as equal to it.
        """
        if not delta > 0:
            raise ValueError("duration bound must be positive")
        rm = _rm(self.m, self.d)
        cut = delta - min(TOL, 0.5 * delta)
        if cut >= rm:
            j = int(math.floor(cut / rm))
            code = (MUL, j)
        else:
            j = int(math.ceil(rm / cut))
            code = (MUL, 1) if j == 1 else (DIV, j)
        val = duration_value(code[0], code[1], self.m, self.d)
        assert val < delta
        return code, val

    def code_of(self, delta: float) -> Optional[Tuple[int, int]]:
        rm = _rm(self.m, self.d)
        q = delta / rm
        j = int(round(q))
        if j >= 1 and abs(delta - j * rm) <= TOL:
            return (MUL, j)
        if q > 0:
            j = int(round(1.0 / q))
            if j >= 2 and abs(delta - rm / j) <= TOL:
                return (DIV, j)
        return None


@dataclass
class StoppingTimeTrace:
    """Times tau_0 < ... < tau_M and the path values at them."""

    times: np.ndarray
    levels: np.ndarray
    start: float = 0.0

    @property
    def M(self) -> int:
        return len(self.times) - 1

    def increments(self) -> np.ndarray:
        return np.diff(self.times)


@dataclass
class ShiftedTrace:
    """Shifted times tau_hat_0..tau_hat_{M+1} with the duration codes used."""

    times: np.ndarray
    codes: List[Tuple[int, int]] = field(default_factory=list)

    @property
    def M(self) -> int:
        return len(self.times) - 2


def _dates(spec: GridSpec, dates: Optional[Sequence[float]]) -> Tuple[float, ...]:
    if dates is None:
        return (spec.T,)
    dates = tuple(float(t) for t in dates)
    if abs(dates[-1] - spec.T) > TOL or any(b <= a for a, b in zip(dates, dates[1:])):
        raise ValueError("dates must increase strictly and end at T")
    if dates[0] <= 0:
        raise ValueError("dates must be positive")
    return dates[:-1] + (spec.T,)


def _interval_trace(path: StepPath, a: float, b: float, r: float, capped: bool, max_steps: int):
    times, values = path.times, path.values
    ptr = int(np.searchsorted(times, a, side="right"))
    anchor = values[ptr]
    taus, levels = [a], [anchor]
    prev_inc = None
    while taus[-1] < b:
        tk = taus[-1]
        inc = r if (not capped or prev_inc is None) else min(r, prev_inc)
        cap = tk + inc
        if cap >= b - TOL:
            cap = b
        nxt = cap
        while ptr < len(times) and times[ptr] <= cap:
            ptr += 1
            if np.linalg.norm(values[ptr] - anchor) >= r:
                nxt = times[ptr - 1]
                break
        if nxt == cap:
            ptr = int(np.searchsorted(times, cap, side="right"))
        anchor = values[ptr]
        prev_inc = nxt - tk
        taus.append(nxt)
        levels.append(anchor)
        if len(taus) > max_steps:
            raise ValueError("stopping-time trace exceeds max_steps")
    return StoppingTimeTrace(np.array(taus), np.array(levels), a)


def stopping_times(
    path: StepPath, spec: GridSpec, capped: bool = False, max_steps: int = 10 ** 6
) -> StoppingTimeTrace:
    """Time-capped ball-exit stopping times on [0, T].

    tau_{k+1} = T ^ (tau_k + r) ^ (first jump after tau_k landing outside the
    open ball of radius r = sqrt(d) 2^-n around S_{tau_k}).  With
    ``capped=True`` the time step is further limited by the previous
    increment.
    """
    _check_path(path, spec)
    return _interval_trace(path, 0.0, spec.T, spec.radius, capped, max_steps)


def multi_marginal_stopping_times(
    path: StepPath, spec: GridSpec, dates: Sequence[float], capped: bool = True,
    max_steps: int = 10 ** 6,
) -> List[StoppingTimeTrace]:
    """Stopping times restarted at every marginal date; one trace per interval."""
    _check_path(path, spec)
    ds = _dates(spec, dates)
    out, a = [], 0.0
    for b in ds:
        out.append(_interval_trace(path, a, b, spec.radius, capped, max_steps))
        a = b
    return out


def _check_path(path: StepPath, spec: GridSpec):
    if path.d != spec.d or abs(path.T - spec.T) > TOL:
        raise ValueError("path does not match grid spec")
    if np.any(path.values <= 0):
        raise ValueError("discretisation needs a positive path")


def _rho(spec: GridSpec, a: float, b: float) -> float:
    length = b - a
    if not spec.radius < length:
        raise ValueError("mesh must be smaller than every date interval")
    return 1.0 - spec.radius / length


def shifted_times(trace: StoppingTimeTrace, spec: GridSpec, end: Optional[float] = None) -> ShiftedTrace:
    """Shifted times of one interval.

    tau_hat_0 = start, tau_hat_1 = start + r, tau_hat_{M+1} = end and for
    2 <= k <= M, tau_hat_k = tau_hat_{k-1} + rho * sup{b in B^(n+k): b <
    tau_{k-1} - tau_{k-2}} with rho = 1 - r / (end - start).
    """
    a = trace.start
    b = spec.T if end is None else end
    r = spec.radius
    rho = _rho(spec, a, b)
    M = trace.M
    taus = trace.times
    hat = [a, a + r]
    codes = []
    for k in range(2, M + 1):
        code, val = DurationSet(spec.n + k, spec.d).sup_below(taus[k - 1] - taus[k - 2])
        codes.append(code)
        hat.append(hat[-1] + rho * val)
    hat.append(b)
    return ShiftedTrace(np.array(hat), codes)


class Knot(NamedTuple):
    """Exact encoding of one lattice knot.

    ``fam`` is FIRST (time = interval start + r), MUL / DIV (duration
    rho * j r_m or rho * r_m / j at level m = n + index) or DATE (the knot
    sits on a marginal date).  ``level`` holds integers on the grid of level
    n + index (n for date knots).
    """

    interval: int
    index: int
    fam: int
    j: int
    level: Tuple[int, ...]

    @property
    def slot(self) -> Tuple[int, int, int, int]:
        return (self.interval, self.index, self.fam, self.j)


def _knot_scale(spec: GridSpec, knot: Knot) -> int:
    return spec.n if knot.fam == DATE else spec.n + knot.index


def knots_to_path(knots: Sequence[Knot], spec: GridSpec, dates: Optional[Sequence[float]] = None) -> StepPath:
    ds = _dates(spec, dates)
    starts = (0.0,) + ds[:-1]
    times, vals = [], [np.ones(spec.d)]
    prev = 0.0
    for kn in knots:
        a = starts[kn.interval]
        if kn.fam == FIRST:
            t = a + spec.radius
        elif kn.fam == DATE:
            t = ds[kn.interval]
        else:
            rho = _rho(spec, a, ds[kn.interval])
            t = prev + rho * duration_value(kn.fam, kn.j, spec.n + kn.index, spec.d)
        times.append(t)
        vals.append(np.ldexp(np.asarray(kn.level, dtype=float), -_knot_scale(spec, kn)))
        prev = t
    return StepPath(spec.T, times, np.array(vals), True)


def _pi_hat_parts(path, spec, dates, capped):
    ds = _dates(spec, dates)
    N = len(ds)
    traces = []
    a = 0.0
    for b in ds:
        traces.append(_interval_trace(path, a, b, spec.radius, capped, 10 ** 6))
        a = b
    knots: List[Knot] = []
    times: List[float] = []
    for i, (tr, b) in enumerate(zip(traces, ds)):
        sh = shifted_times(tr, spec, end=b)
        M = tr.M
        last = i == N - 1
        top = M if last else M - 1
        for k in range(1, top + 1):
            if last and k == M:
                lvl = ceil_project(tr.levels[M], spec.n)
            else:
                lvl = ceil_project(tr.levels[k], spec.n + k)
            ints = grid_ints(lvl, spec.n + k)
            if k == 1:
                knots.append(Knot(i, 1, FIRST, 0, ints))
            else:
                fam, j = sh.codes[k - 2]
                knots.append(Knot(i, k, fam, j, ints))
            times.append(sh.times[k])
        if not last:
            lvl = ceil_project(tr.levels[M], spec.n)
            knots.append(Knot(i, 0, DATE, 0, grid_ints(lvl, spec.n)))
            times.append(b)
    return traces, knots, times


def pi_hat_knots(path: StepPath, spec: GridSpec, dates=None, capped: bool = False) -> List[Knot]:
    """Lattice encoding of ``map_pi_hat(path)``."""
    _check_path(path, spec)
    return _pi_hat_parts(path, spec, dates, capped)[1]


def multi_marginal_map_pi_hat(path: StepPath, spec: GridSpec, dates, capped: bool = True) -> StepPath:
    """Projection onto the lattice with knots restarted at every date.

    Inside interval i the knots sit at the shifted times of that interval
    with levels ceil-projected at level n + k; the value at each date T_i
    (i < N) is ceil_project(S_{T_i}, n) and is placed exactly at T_i; the
    last interval ends with ceil_project(S_T, n) at its final shifted time.
    """
    _check_path(path, spec)
    _, knots, times = _pi_hat_parts(path, spec, dates, capped)
    vals = [np.ones(spec.d)] + [
        np.ldexp(np.asarray(kn.level, float), -_knot_scale(spec, kn)) for kn in knots
    ]
    return StepPath(spec.T, times, np.array(vals), True)


def map_pi_hat(path: StepPath, spec: GridSpec) -> StepPath:
    return multi_marginal_map_pi_hat(path, spec, None, capped=False)


def _skeleton(path, spec, dates, capped, project):
    _check_path(path, spec)
    ds = _dates(spec, dates)
    N = len(ds)
    times, vals = [], [np.ones(spec.d)]
    a = 0.0
    for i, b in enumerate(ds):
        tr = _interval_trace(path, a, b, spec.radius, capped, 10 ** 6)
        M = tr.M
        last = i == N - 1
        for k in range(1, M):
            lvl = tr.levels[k]
            if project:
                lvl = ceil_project(lvl, spec.n if (last and k == M - 1) else spec.n + k)
            times.append(tr.times[k])
            vals.append(lvl)
        if not last:
            lvl = tr.levels[M]
            if project:
                lvl = ceil_project(lvl, spec.n)
            times.append(b)
            vals.append(lvl)
        a = b
    return StepPath(spec.T, times, np.array(vals), path.positive)


def multi_marginal_map_pi(path, spec, dates, capped: bool = True) -> StepPath:
    return _skeleton(path, spec, dates, capped, False)


def multi_marginal_map_pi_check(path, spec, dates, capped: bool = True) -> StepPath:
    return _skeleton(path, spec, dates, capped, True)


def map_pi(path: StepPath, spec: GridSpec) -> StepPath:
    """S sampled at the stopping times: S_{tau_k} on [tau_k, tau_{k+1}), last level S_{tau_{M-1}}."""
    return _skeleton(path, spec, None, False, False)


def map_pi_check(path: StepPath, spec: GridSpec) -> StepPath:
    """``map_pi`` with level k ceil-projected at n + k (the last one at n)."""
    return _skeleton(path, spec, None, False, True)


# ------------------------------------------------------------ membership

def lattice_code(path: StepPath, spec: GridSpec, dates=None) -> Optional[Tuple[Knot, ...]]:
    """Decode a step path into lattice knots, or None if it is not a member."""
    if path.d != spec.d or abs(path.T - spec.T) > TOL or np.any(path.values[0] != 1.0):
        return None
    ds = _dates(spec, dates)
    N = len(ds)
    r = spec.radius
    i, k, prev = 0, 0, 0.0
    out: List[Knot] = []
    for t, v in zip(path.times, path.values[1:]):
        if i < N - 1 and t > ds[i] + TOL:
            return None
        if i < N - 1 and abs(t - ds[i]) <= TOL:
            ints = grid_ints(v, spec.n)
            if ints is None:
                return None
            out.append(Knot(i, 0, DATE, 0, ints))
            prev = ds[i]
            i, k = i + 1, 0
            continue
        k += 1
        start = 0.0 if i == 0 else ds[i - 1]
        if k == 1:
            if abs(t - (start + r)) > TOL:
                return None
            fam, j = FIRST, 0
        else:
            rho = _rho(spec, start, ds[i])
            code = DurationSet(spec.n + k, spec.d).code_of((t - prev) / rho)
            if code is None:
                return None
            fam, j = code
        ints = grid_ints(v, spec.n + k)
        if ints is None:
            return None
        out.append(Knot(i, k, fam, j, ints))
        prev = t
    if i < N - 1:
        return None
    if k >= 1:
        # terminal level must lie on the coarse grid
        last = np.ldexp(np.asarray(out[-1].level, float), -(spec.n + k))
        if grid_ints(last, spec.n) is None:
            return None
    return tuple(out)


def lattice_membership(path: StepPath, spec: GridSpec, dates=None) -> bool:
    """Membership of the stored partition; falls back to the path without silent knots."""
    from .paths import canonical

    if lattice_code(path, spec, dates) is not None:
        return True
    c = canonical(path)
    return c is not path and lattice_code(c, spec, dates) is not None


# ------------------------------------------------------------ truncation

@dataclass(frozen=True)
class LatticeTruncation:
    """Finite piece of the lattice.

    ``M_max`` bounds the number of knots per date interval, levels lie in
    [V_min, V_max] per coordinate and knot k >= 2 uses the
    ``durations_per_level`` largest elements of B^(n+k) below the mesh.
    """

    spec: GridSpec
    M_max: int = 3
    V_max: float = 4.0
    durations_per_level: int = 6
    V_min: float = 0.0
    dates: Optional[Tuple[float, ...]] = None
    max_paths: int = 100_000

    @property
    def date_tuple(self) -> Tuple[float, ...]:
        return _dates(self.spec, self.dates)

    def to_json(self) -> dict:
        doc = {
            "n": self.spec.n, "d": self.spec.d, "T": self.spec.T, "M_max": self.M_max,
            "V_max": self.V_max, "durations_per_level": self.durations_per_level,
            "V_min": self.V_min, "max_paths": self.max_paths,
        }
        if self.dates is not None:
            doc["dates"] = list(self.dates)
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "LatticeTruncation":
        spec = GridSpec(int(doc["n"]), int(doc["d"]), float(doc["T"]))
        dates = doc.get("dates")
        return cls(
            spec,
            int(doc.get("M_max", 3)),
            float(doc.get("V_max", 4.0)),
            int(doc.get("durations_per_level", 6)),
            float(doc.get("V_min", 0.0)),
            tuple(dates) if dates is not None else None,
            int(doc.get("max_paths", 100_000)),
        )


def _time_branches(tr: LatticeTruncation, i: int):
    """All admissible knot-time sequences of interval i as lists of (fam, j)."""
    spec = tr.spec
    ds = tr.date_tuple
    a = 0.0 if i == 0 else ds[i - 1]
    b = ds[i]
    rho = _rho(spec, a, b)
    last = i == len(ds) - 1
    out = []

    def rec(seq, t):
        out.append(list(seq))
        k = len(seq) + 1
        # interior knots of a non-final interval leave room for the date knot
        kmax = tr.M_max if last else tr.M_max - 1
        if k > kmax:
            return
        if k == 1:
            cand = [((FIRST, 0), a + spec.radius)]
        else:
            cand = [
                (c, t + rho * duration_value(c[0], c[1], spec.n + k, spec.d))
                for c in DurationSet(spec.n + k, spec.d).below(spec.radius, tr.durations_per_level)
            ]
        for c, tt in cand:
            if tt < b - TOL:
                seq.append(c)
                rec(seq, tt)
                seq.pop()

    rec([], a)
    if last and not (tr.M_max == 0 and len(ds) == 1):
        out = [s for s in out if len(s) >= 1]
    return out


def _level_axes(tr: LatticeTruncation, m: int) -> List[int]:
    return [int(v) for v in DyadicGrid(m, tr.spec.d, tr.V_max, tr.V_min).axis()]


def count_lattice(tr: LatticeTruncation) -> int:
    """Number of paths the truncation describes (product of per-knot level counts)."""
    spec = tr.spec
    ds = tr.date_tuple
    date_count = len(_level_axes(tr, spec.n)) ** spec.d
    total = 1
    for i in range(len(ds)):
        last = i == len(ds) - 1
        sub = 0
        for seq in _time_branches(tr, i):
            M = len(seq)
            prod = 1
            for k in range(1, M + 1):
                if last and k == M:
                    prod *= date_count
                else:
                    prod *= len(_level_axes(tr, spec.n + k)) ** spec.d
            if not last:
                prod *= date_count
            sub += prod
        total *= sub
    return total


def enumerate_lattice_codes(tr: LatticeTruncation) -> List[Tuple[Knot, ...]]:
    count = count_lattice(tr)
    if count > tr.max_paths:
        raise ValueError(f"truncation describes {count} paths, above max_paths={tr.max_paths}")
    spec = tr.spec
    ds = tr.date_tuple
    N = len(ds)

    def axis_points(m):
        ax = _level_axes(tr, m)
        return list(itertools.product(ax, repeat=spec.d))

    def coarse_on(m):
        # points of A^(n) written at scale m
        shift = 1 << (m - spec.n)
        return [tuple(v * shift for v in p) for p in axis_points(spec.n)]

    def interval_paths(i):
        last = i == N - 1
        res = []
        for seq in _time_branches(tr, i):
            M = len(seq)
            choices = []
            for k in range(1, M + 1):
                lv = coarse_on(spec.n + k) if (last and k == M) else axis_points(spec.n + k)
                choices.append([Knot(i, k, c[0], c[1], p) for c in [seq[k - 1]] for p in lv])
            if not last:
                choices.append([Knot(i, 0, DATE, 0, p) for p in axis_points(spec.n)])
            res.extend(itertools.product(*choices))
        return res

    per = [interval_paths(i) for i in range(N)]
    out = [tuple(itertools.chain.from_iterable(c)) for c in itertools.product(*per)]
    assert len(out) == count
    return out


def enumerate_lattice(tr: LatticeTruncation) -> List[StepPath]:
    """All paths of the truncation, in a fixed deterministic order."""
    return [knots_to_path(c, tr.spec, tr.dates) for c in enumerate_lattice_codes(tr)]
