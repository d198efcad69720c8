"""
Pathwise hedging for step strategies.

Integrals of piecewise-constant, left-continuous strategies against step
paths are finite sums, so every inequality below is checked path by path.
The module covers the lift of a lattice hedge to arbitrary paths, the
super-replication report and two explicit hedges: a Doob-type power hedge
and a Burkholder-type hedge for the square function of the skeleton.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .discretization import (
    GridSpec,
    _dates,
    _knot_scale,
    ceil_project,
    grid_ints,
    multi_marginal_map_pi,
    multi_marginal_stopping_times,
    pi_hat_knots,
    stopping_times,
)
from .mot import MOTSolution, PathLattice
from .paths import TOL, StepPath, evaluate, left_limit

__all__ = [
    "DynamicStrategy",
    "SemiStaticPortfolio",
    "LiftedPortfolio",
    "HedgeReport",
    "pathwise_integral",
    "pathwise_integral_by_parts",
    "running_integral",
    "lift_portfolio",
    "lattice_lookup",
    "lift_dynamic",
    "projected_integral",
    "lattice_hedge_slacks",
    "verify_superreplication",
    "DoobHedge",
    "doob_power_hedge",
    "BurkholderHedge",
    "burkholder_qv_hedge",
    "jump_leg_value",
    "payoff_reductions",
    "Reductions",
]

VIOLATION_TOL = 1e-10


@dataclass
class DynamicStrategy:
    """Left-continuous step strategy.

    ``values[k]`` is held on (breaks[k], breaks[k+1]]; breaks[0] = 0 and the
    last break is T.  ``jumps`` maps a date to an extra position held at that
    single instant (the jump legs).  The value at 0 is 0.
    """

    T: float
    breaks: np.ndarray
    values: np.ndarray
    jumps: Dict[float, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.breaks = np.asarray(self.breaks, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 1:
            self.values = self.values.reshape(-1, 1)
        if len(self.breaks) != len(self.values) + 1:
            raise ValueError("need one value per interval")
        if abs(self.breaks[0]) > TOL or abs(self.breaks[-1] - self.T) > TOL or np.any(np.diff(self.breaks) <= 0):
            raise ValueError("breaks must increase from 0 to T")

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @classmethod
    def zero(cls, d: int, T: float) -> "DynamicStrategy":
        return cls(T, [0.0, T], np.zeros((1, d)))

    @classmethod
    def constant(cls, c, T: float) -> "DynamicStrategy":
        c = np.atleast_1d(np.asarray(c, dtype=float))
        return cls(T, [0.0, T], c.reshape(1, -1))

    def __call__(self, t: float) -> np.ndarray:
        if t <= 0:
            return np.zeros(self.d)
        k = int(np.searchsorted(self.breaks, t, side="left")) - 1
        v = self.values[min(max(k, 0), len(self.values) - 1)].copy()
        for s, b in self.jumps.items():
            if abs(t - s) <= TOL:
                v = v + b
        return v

    def bound(self) -> float:
        """Largest Euclidean norm of the strategy."""
        vals = [np.linalg.norm(self.values, axis=1).max()]
        for s, b in self.jumps.items():
            vals.append(np.linalg.norm(self(s)))
        return float(max(vals))


def _check_horizon(gamma: DynamicStrategy, path: StepPath):
    if abs(gamma.T - path.T) > TOL or gamma.d != path.d:
        raise ValueError("strategy and path must share horizon and dimension")


def pathwise_integral(gamma: DynamicStrategy, path: StepPath, upto: Optional[float] = None) -> float:
    """sum over jumps t_j <= upto of gamma(t_j) . (S(t_j) - S(t_j-))."""
    _check_horizon(gamma, path)
    upto = path.T if upto is None else upto
    total = 0.0
    for t, v0, v1 in zip(path.times, path.values[:-1], path.values[1:]):
        if t > upto:
            break
        total += float(gamma(t) @ (v1 - v0))
    return total


def pathwise_integral_by_parts(gamma: DynamicStrategy, path: StepPath, upto: Optional[float] = None) -> float:
    """gamma_t S_t - gamma_0 S_0 - sum_u S_u (gamma(next event) - gamma(u)).

    Events are the jumps of S, the breaks of gamma and the jump-leg dates up
    to ``upto``; between events both processes are constant on the relevant
    side, so the Stieltjes sum is exact.
    """
    _check_horizon(gamma, path)
    t = path.T if upto is None else upto
    ev = set(float(s) for s in path.times if s <= t)
    ev |= set(float(s) for s in gamma.breaks[1:-1] if s < t)
    ev |= set(float(s) for s in gamma.jumps if s <= t)
    for s in sorted(gamma.jumps):
        # the position changes right after a jump-leg instant
        if s < t:
            ev.add(s + 0.5 * min([e - s for e in ev if e > s] + [t - s]))
    ev.discard(0.0)
    ev.add(t)
    grid = [0.0] + sorted(e for e in ev if 0 < e <= t)
    out = float(gamma(t) @ evaluate(path, t)) - float(gamma(0.0) @ path.values[0])
    for u, nxt in zip(grid[:-1], grid[1:]):
        out -= float(evaluate(path, u) @ (gamma(nxt) - gamma(u)))
    return out


def running_integral(gamma: DynamicStrategy, path: StepPath) -> np.ndarray:
    """Values of t -> int_0^t gamma dS after each jump of the path (starting with 0)."""
    _check_horizon(gamma, path)
    out = [0.0]
    for t, v0, v1 in zip(path.times, path.values[:-1], path.values[1:]):
        out.append(out[-1] + float(gamma(t) @ (v1 - v0)))
    return np.array(out)


# ----------------------------------------------------------------- portfolios

@dataclass
class SemiStaticPortfolio:
    """Static legs (date, function of S at that date) plus a dynamic strategy.

    ``dynamic`` is a DynamicStrategy or a callable building one from the path
    (for strategies defined through stopping times of the path itself).
    """

    statics: List[Tuple[float, Callable[[np.ndarray], float]]]
    dynamic: object
    cost: float = math.nan

    def strategy(self, path: StepPath) -> DynamicStrategy:
        return self.dynamic(path) if callable(self.dynamic) and not isinstance(self.dynamic, DynamicStrategy) else self.dynamic

    def static_value(self, path: StepPath) -> float:
        return float(sum(g(evaluate(path, t)) for t, g in self.statics))

    def value(self, path: StepPath) -> float:
        return self.static_value(path) + pathwise_integral(self.strategy(path), path)


@dataclass
class LiftedPortfolio(SemiStaticPortfolio):
    """Lift of a lattice hedge; ``flags`` collects paths that left the truncation."""

    spec: Optional[GridSpec] = None
    lattice: Optional[PathLattice] = None
    flags: List[str] = field(default_factory=list)


def _static_table(sol: MOTSolution, date: int, spec: GridSpec, flags: List[str]):
    table = sol.static.get(date, {})

    def g(x):
        key = grid_ints(ceil_project(np.asarray(x, float), spec.n), spec.n)
        if key not in table:
            flags.append(f"static atom {key} at date {date} outside the table")
            return 0.0
        return table[key]

    return g


Lookup = Callable[[Tuple, Tuple[int, int, int, int]], Optional[np.ndarray]]


def lattice_lookup(lat: PathLattice, gamma: np.ndarray) -> Lookup:
    """gamma-hat as a function of (knot prefix, slot of the next knot)."""

    def look(prefix, slot):
        q = lat.decision_for(prefix, slot)
        return None if q is None else gamma[q]

    return look


def _projection(path: StepPath, spec: GridSpec, dates):
    ds = _dates(spec, dates)
    if len(ds) > 1:
        return multi_marginal_stopping_times(path, spec, ds, capped=True), pi_hat_knots(path, spec, ds, capped=True)
    return [stopping_times(path, spec)], pi_hat_knots(path, spec)


def lift_dynamic(path: StepPath, spec: GridSpec, lookup: Lookup, dates=None,
                 flags: Optional[List[str]] = None) -> DynamicStrategy:
    """Lifted position: on (tau_k, tau_{k+1}] hold gamma-hat(first k knots of Pi-hat(S), slot of knot k+1)."""
    traces, knots = _projection(path, spec, dates)
    breaks = [0.0]
    for tr in traces:
        breaks.extend(float(t) for t in tr.times[1:])
    if len(breaks) - 1 != len(knots):
        raise AssertionError("knot count does not match the stopping-time trace")
    vals = []
    for k, kn in enumerate(knots):
        v = lookup(tuple(knots[:k]), kn.slot)
        if v is None:
            if flags is not None:
                flags.append(f"prefix of length {k} outside the truncation")
            v = np.zeros(spec.d)
        vals.append(np.asarray(v, dtype=float))
    if not vals:
        return DynamicStrategy.zero(spec.d, spec.T)
    return DynamicStrategy(spec.T, breaks, np.array(vals))


def projected_integral(path: StepPath, spec: GridSpec, lookup: Lookup, dates=None) -> Tuple[float, bool]:
    """int gamma-hat d(Pi-hat(S)) as a sum over the knots of the projected path.

    Returns the value and whether every prefix was found.
    """
    _, knots = _projection(path, spec, dates)
    prev = np.ones(spec.d)
    total, found = 0.0, True
    for k, kn in enumerate(knots):
        level = np.ldexp(np.asarray(kn.level, float), -_knot_scale(spec, kn))
        v = lookup(tuple(knots[:k]), kn.slot)
        if v is None:
            found = False
        else:
            total += float(np.asarray(v, float) @ (level - prev))
        prev = level
    return total, found


def lift_portfolio(sol: MOTSolution, lat: PathLattice, gamma: Optional[np.ndarray] = None) -> LiftedPortfolio:
    """Lift a lattice hedge to all paths.

    g_i = ghat_i o ceil-projection at level n; on (tau_k, tau_{k+1}] the
    position is gamma-hat at the decision node reached by the first k knots
    of the projected path, at the slot of its knot k + 1.  Both depend only
    on the path up to tau_k, so the lift is predictable.  Prefixes outside
    the truncation get position 0 and are recorded in ``flags``.
    """
    spec = lat.spec
    flags: List[str] = []
    gamma = sol.gamma if gamma is None else np.asarray(gamma, dtype=float)
    look = lattice_lookup(lat, gamma)
    statics = [(lat.dates[i], _static_table(sol, i, spec, flags)) for i in sorted(sol.static)]
    dyn = lambda path: lift_dynamic(path, spec, look, lat.dates, flags)
    return LiftedPortfolio(statics, dyn, sol.value, spec, lat, flags)


def lattice_hedge_slacks(sol: MOTSolution, lat: PathLattice, payoff_values: np.ndarray) -> np.ndarray:
    """cash + sum_i ghat_i(S_{T_i}) + sum_k gamma-hat . dS_k - G on every lattice path."""
    out = np.full(lat.n_paths, sol.cash)
    for i, table in sol.static.items():
        atoms = lat.date_atoms[i] if i == lat.n_dates - 1 else None
        for p, code in enumerate(lat.codes):
            a = atoms[p] if atoms is not None else next(tuple(k.level) for k in code if k.fam == 3 and k.interval == i)
            out[p] += table[a]
    for p, (qs, inc) in enumerate(zip(lat.path_decisions, lat.path_increments)):
        out[p] += float(np.sum(sol.gamma[qs] * inc))
    return out - np.asarray(payoff_values, dtype=float)


@dataclass
class HedgeReport:
    slacks: np.ndarray
    running_min: np.ndarray
    tolerance: float = VIOLATION_TOL
    flags: List[str] = field(default_factory=list)

    @property
    def min_slack(self) -> float:
        return float(self.slacks.min()) if self.slacks.size else math.inf

    @property
    def violations(self) -> int:
        return int(np.sum(self.slacks < -self.tolerance))

    @property
    def violating_paths(self) -> List[int]:
        return [int(i) for i in np.nonzero(self.slacks < -self.tolerance)[0]]

    @property
    def admissibility_floor(self) -> float:
        return float(self.running_min.min()) if self.running_min.size else 0.0

    def to_json(self) -> dict:
        return {
            "paths": int(self.slacks.size), "violations": self.violations, "min_slack": self.min_slack,
            "violating_paths": self.violating_paths[:100], "admissibility_floor": self.admissibility_floor,
            "flags": sorted(set(self.flags))[:100], "slacks": self.slacks.tolist(),
        }


def verify_superreplication(portfolio: SemiStaticPortfolio, payoff: Callable[[StepPath], float],
                            paths: Sequence[StepPath], shift: float = 0.0,
                            tol: float = VIOLATION_TOL) -> HedgeReport:
    """Per-path slack g(S) + int gamma dS - (G(S) - shift)."""
    slacks, floors = [], []
    if isinstance(portfolio, LiftedPortfolio):
        portfolio.flags.clear()
    for p in paths:
        gam = portfolio.strategy(p)
        run = running_integral(gam, p)
        slacks.append(portfolio.static_value(p) + run[-1] - (payoff(p) - shift))
        floors.append(run.min())
    flags = list(portfolio.flags) if isinstance(portfolio, LiftedPortfolio) else []
    return HedgeReport(np.array(slacks), np.array(floors), tol, flags)


# ------------------------------------------------------------- Doob hedge

@dataclass
class DoobHedge:
    p: float
    portfolio: SemiStaticPortfolio
    min_slack: float
    violations: int
    terminal_slack: float


def _doob_g(p: float, d: int):
    a = (p / (p - 1)) ** p
    return lambda x: a * float(np.sum(np.asarray(x, float) ** p)) - p * d / (p - 1)


def _doob_strategy(path: StepPath, p: float, spec: GridSpec) -> DynamicStrategy:
    tr = stopping_times(path, spec)
    run = np.maximum.accumulate(tr.levels, axis=0)
    vals = -(p * p / (p - 1)) * run[:-1] ** (p - 1)
    return DynamicStrategy(path.T, tr.times, vals)


def doob_power_hedge(p: float, d: int, paths: Sequence[StepPath], n: int = 4,
                     tol: float = VIOLATION_TOL) -> DoobHedge:
    """Pathwise Doob hedge on the stopping times of level ``n``.

    gamma = -(p^2 / (p - 1)) (max_{i<=k} S^(j)_{tau_i})^(p-1) on (tau_k, tau_{k+1}],
    g(x) = (p / (p - 1))^p sum_j x_j^p - p d / (p - 1).  For t in
    (tau_k, tau_{k+1}] the certificate checks
    g(S_t) + int_0^t gamma dS >= sum_j max(S^(j)_t, max_{i<=k} S^(j)_{tau_i})^p,
    which dominates max(|S_t|_p^p, max_i |S_{tau_i}|_p^p).  The check runs at
    every jump and every tau_k, which covers all t for step paths.
    """
    if p <= 1:
        raise ValueError("p must exceed 1")
    g = _doob_g(p, d)
    worst, viol, tslack = math.inf, 0, math.inf
    for path in paths:
        if path.d != d:
            raise ValueError("path dimension differs from d")
        spec = GridSpec(n, d, path.T)
        gam = _doob_strategy(path, p, spec)
        tr = stopping_times(path, spec)
        checks = sorted(set(float(t) for t in path.times) | set(float(t) for t in tr.times[1:]))
        for t in checks:
            k = int(np.searchsorted(tr.times, t, side="left")) - 1
            St = evaluate(path, t)
            running = np.maximum(St, tr.levels[: k + 1].max(axis=0))
            slack = g(St) + pathwise_integral(gam, path, t) - float(np.sum(running ** p))
            worst = min(worst, slack)
            viol += slack < -tol
        tslack = min(tslack, g(path.terminal) + pathwise_integral(gam, path)
                     - float(np.sum(tr.levels.max(axis=0) ** p)))
    port = SemiStaticPortfolio([(paths[0].T if paths else 1.0, g)],
                               lambda path: _doob_strategy(path, p, GridSpec(n, d, path.T)))
    return DoobHedge(p, port, worst, int(viol), tslack)


# ------------------------------------------------------- Burkholder hedge

@dataclass
class BurkholderHedge:
    """Hedge of the skeleton's square function on one path."""

    times: np.ndarray
    skeleton_values: np.ndarray
    gammas: np.ndarray
    X: float
    strategy: DynamicStrategy
    slacks_skeleton: np.ndarray
    slacks_path: np.ndarray

    @property
    def gamma_bound(self) -> float:
        return float(np.linalg.norm(self.gammas, axis=1).max()) if len(self.gammas) else 0.0


def _eps_times(skel: StepPath, dates: Sequence[float], eps: float) -> List[float]:
    events = sorted(set(float(t) for t in skel.times) | set(float(t) for t in dates[:-1]))
    out = [0.0]
    anchor = skel.values[0]
    for t in events:
        is_date = any(abs(t - s) <= TOL for s in dates[:-1])
        v = evaluate(skel, t)
        if is_date or np.linalg.norm(v - anchor) >= eps:
            out.append(t)
            anchor = v
    if out[-1] < skel.T:
        out.append(skel.T)
    return out


def burkholder_qv_hedge(eps: float, path: StepPath, dates: Sequence[float] = (), n: int = 4,
                        capped: bool = False) -> BurkholderHedge:
    """Square-function hedge on the eps-moves of the skeleton Pi(S).

    tau_j stops at the marginal dates and whenever Pi moves by at least eps;
    X = sqrt(sum_j |Pi_{tau_j} - Pi_{tau_{j-1}}|^2).  On (tau_{i-1}, tau_i]
    coordinate k holds
    -Pi^k_{tau_{i-1}} / sqrt(sum_{j<i} (dPi^k_j)^2 + max_{j<i} (Pi^k_{tau_j})^2).
    The certificate is, for every i,
    int_0^{tau_i} gamma dPi + 3 d max_{j<=i} |Pi_{tau_j}| >= sqrt(sum_{j<=i} |dPi_j|^2),
    reported also with the integral taken against S.  The skeleton uses
    stopping times restarted at every date; ``capped`` selects the variant
    with non-increasing increments.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    spec = GridSpec(n, path.d, path.T)
    inner = tuple(float(t) for t in dates if t < path.T - TOL)
    ds = _dates(spec, inner + (path.T,))
    skel = multi_marginal_map_pi(path, spec, ds, capped=capped)
    taus = _eps_times(skel, ds, eps)
    P = np.array([evaluate(skel, t) for t in taus])
    d = path.d
    m = len(taus) - 1
    gam = np.zeros((m, d))
    qv = np.zeros(d)
    for i in range(1, m + 1):
        prev = P[: i]
        den = np.sqrt(qv + np.max(prev ** 2, axis=0))
        gam[i - 1] = -P[i - 1] / den
        qv += (P[i] - P[i - 1]) ** 2
    strat = DynamicStrategy(path.T, taus, gam)
    dP = np.diff(P, axis=0)
    Xi = np.sqrt(np.cumsum(np.sum(dP ** 2, axis=1)))
    runmax = np.maximum.accumulate(np.linalg.norm(P, axis=1))[1:]
    int_skel = np.cumsum(np.sum(gam * dP, axis=1))
    int_path = np.array([pathwise_integral(strat, path, t) for t in taus[1:]])
    s_skel = int_skel + 3 * d * runmax - Xi
    s_path = int_path + 3 * d * runmax - Xi
    X = float(Xi[-1]) if m else 0.0
    return BurkholderHedge(np.array(taus), P, gam, X, strat, s_skel, s_path)


# --------------------------------------------------------------- jump legs

def jump_leg_value(betas, path: StepPath, dates: Sequence[float]) -> float:
    """sum_i beta_i . (S_{T_i} - S_{T_i-}) over the interior dates.

    ``betas`` is a sequence of vectors or a callable (path, i) -> vector.
    """
    total = 0.0
    for i, t in enumerate(dates):
        if t >= path.T - TOL:
            continue
        b = betas(path, i) if callable(betas) else np.asarray(betas[i], float)
        total += float(np.atleast_1d(np.asarray(b, float)) @ (evaluate(path, t) - left_limit(path, t)))
    return total


# -------------------------------------------------------------- reductions

@dataclass
class Reductions:
    shifted: Callable[[StepPath], float]
    capped: Callable[[StepPath], float]
    floored: Callable[[StepPath], float]
    C: float
    K: float


def payoff_reductions(G: Callable[[StepPath], float], C: float, K: float, c: Optional[float] = None) -> Reductions:
    """Shifted G + C (1 + sum_i S_T^(i)), capped G ^ C (d K + 1), floored G v (-c (K + 1))."""
    c = C if c is None else c

    def shifted(p):
        return G(p) + C * (1.0 + float(np.sum(p.terminal)))

    def capped(p):
        return min(G(p), C * (p.d * K + 1.0))

    def floored(p):
        return max(G(p), -c * (K + 1.0))

    return Reductions(shifted, capped, floored, C, K)
