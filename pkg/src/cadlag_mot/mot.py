"""
Discrete martingale optimal transport on a finite path lattice.

The lattice is stored as a prefix tree of knot sequences.  A *decision
node* is a prefix together with the slot (interval, index, time code) of the
next knot: the time of the next move is known there, its level is not.  This
is where dynamic positions live and where martingale conditions are imposed.

Four linear programs are built on the tree:

* ``solve_primal``: maximise E_Q[G] over martingale Q with prescribed law of
  S at every marginal date;
* ``solve_dual_superhedge``: the cheapest semi-static super-hedge with a box
  on the dynamic position;
* ``solve_relaxed``: the primal with l1 marginal deviation and martingale
  defect budgets c / n;
* ``solve_multi_marginal``: ``solve_primal`` for several dates with a
  convex-order pre-check.
"""

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .discretization import (
    DATE,
    GridSpec,
    Knot,
    LatticeTruncation,
    _dates,
    _knot_scale,
    enumerate_lattice_codes,
    grid_ints,
    knots_to_path,
    lattice_code,
)
from .lp import LinearProgram, LPSolution, solve
from .measures import DiscreteMeasure, convex_order_check
from .paths import StepPath, canonical

__all__ = [
    "PathLattice",
    "MOTProblem",
    "MOTSolution",
    "MOTError",
    "build_prefix_tree",
    "lattice_from_truncation",
    "martingale_defect",
    "doob_decomposition",
    "solve_primal",
    "solve_dual_superhedge",
    "solve_relaxed",
    "solve_multi_marginal",
    "value_of_marginal",
    "marginal_on_grid",
]

Atom = Tuple[int, ...]


class MOTError(RuntimeError):
    """Raised with a stable ``code``: TRUNCATION_INFEASIBLE, CONVEX_ORDER_VIOLATION,
    MARGINAL_OFF_GRID or LP_FAILURE."""

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


# ------------------------------------------------------------------ tree

@dataclass
class PathLattice:
    """Prefix tree over a finite set of lattice paths.

    ``node_level[v]`` is the value of S at tree node ``v`` (node 0 is the
    root, level 1).  Decision node ``q`` sits below tree node
    ``dec_parent[q]`` and has slot ``dec_slot[q]``.  Path ``p`` visits the
    decision nodes ``path_decisions[p]`` with increments
    ``path_increments[p]`` and ends at leaf ``leaf[p]``.
    """

    spec: GridSpec
    dates: Tuple[float, ...]
    codes: List[Tuple[Knot, ...]]
    node_level: np.ndarray
    node_parent: np.ndarray
    node_depth: np.ndarray
    node_key: Dict[Tuple[Knot, ...], int]
    dec_parent: np.ndarray
    dec_slot: List[Tuple[int, int, int, int]]
    dec_key: Dict[Tuple[int, Tuple[int, int, int, int]], int]
    path_decisions: List[np.ndarray]
    path_increments: List[np.ndarray]
    leaf: np.ndarray
    date_atoms: List[List[Atom]]
    _paths: Optional[List[StepPath]] = None
    _incidence: Optional[sp.csr_matrix] = None

    @property
    def d(self) -> int:
        return self.spec.d

    @property
    def n_paths(self) -> int:
        return len(self.codes)

    @property
    def n_nodes(self) -> int:
        return len(self.node_level)

    @property
    def n_decisions(self) -> int:
        return len(self.dec_slot)

    @property
    def n_dates(self) -> int:
        return len(self.dates)

    @property
    def paths(self) -> List[StepPath]:
        if self._paths is None:
            self._paths = [knots_to_path(c, self.spec, self.dates) for c in self.codes]
        return self._paths

    def is_date_decision(self, q: int) -> bool:
        return self.dec_slot[q][2] == DATE

    def atoms(self, date: int) -> List[Atom]:
        """Distinct values of S at marginal date ``date`` (grid integers at level n)."""
        return sorted(set(self.date_atoms[date]))

    def atom_values(self, date: int) -> np.ndarray:
        return np.ldexp(np.array(self.atoms(date), dtype=float), -self.spec.n)

    def incidence(self) -> sp.csr_matrix:
        """Rows (decision, coordinate), columns paths, entries the increments."""
        if self._incidence is None:
            rows, cols, vals = [], [], []
            d = self.d
            for p, (qs, inc) in enumerate(zip(self.path_decisions, self.path_increments)):
                for q, dx in zip(qs, inc):
                    for c in range(d):
                        if dx[c] != 0.0:
                            rows.append(q * d + c)
                            cols.append(p)
                            vals.append(dx[c])
            self._incidence = sp.csr_matrix(
                (vals, (rows, cols)), shape=(self.n_decisions * d, self.n_paths)
            )
        return self._incidence

    def decision_for(self, prefix: Tuple[Knot, ...], slot) -> Optional[int]:
        v = self.node_key.get(tuple(prefix))
        if v is None:
            return None
        return self.dec_key.get((v, tuple(slot)))

    def path_index(self, code: Sequence[Knot]) -> Optional[int]:
        v = self.node_key.get(tuple(code))
        if v is None:
            return None
        hits = np.nonzero(self.leaf == v)[0]
        return int(hits[0]) if hits.size else None

    def evaluate(self, payoff: Callable[[StepPath], float]) -> np.ndarray:
        return np.array([float(payoff(p)) for p in self.paths])


def _knot_value(spec: GridSpec, kn: Knot) -> np.ndarray:
    return np.ldexp(np.asarray(kn.level, dtype=float), -_knot_scale(spec, kn))


def _from_codes(codes: Sequence[Tuple[Knot, ...]], spec: GridSpec, dates) -> PathLattice:
    ds = _dates(spec, dates)
    N = len(ds)
    if len(set(codes)) != len(codes):
        raise ValueError("inconsistent path set: duplicate lattice paths")
    node_key: Dict[Tuple[Knot, ...], int] = {(): 0}
    node_level = [np.ones(spec.d)]
    node_parent = [-1]
    node_depth = [0]
    dec_key: Dict[Tuple[int, tuple], int] = {}
    dec_parent: List[int] = []
    dec_slot: List[tuple] = []
    path_decisions, path_increments, leaves = [], [], []
    date_atoms: List[List[Atom]] = [[] for _ in range(N)]
    for code in codes:
        v = 0
        qs, incs = [], []
        for k, kn in enumerate(code):
            slot = kn.slot
            q = dec_key.get((v, slot))
            if q is None:
                q = len(dec_slot)
                dec_key[(v, slot)] = q
                dec_parent.append(v)
                dec_slot.append(slot)
            prefix = code[: k + 1]
            w = node_key.get(prefix)
            level = _knot_value(spec, kn)
            if w is None:
                w = len(node_level)
                node_key[prefix] = w
                node_level.append(level)
                node_parent.append(v)
                node_depth.append(k + 1)
            qs.append(q)
            incs.append(level - node_level[v])
            if kn.fam == DATE:
                date_atoms[kn.interval].append(tuple(kn.level))
            v = w
        # terminal value at level n
        term = node_level[v]
        ints = grid_ints(term, spec.n)
        if ints is None:
            raise ValueError("inconsistent path set: terminal value off the level-n grid")
        date_atoms[N - 1].append(ints)
        if N > 1 and any(kn.fam == DATE for kn in code) is False:
            raise ValueError("inconsistent path set: missing date knots")
        path_decisions.append(np.array(qs, dtype=np.int64))
        path_increments.append(np.array(incs, dtype=float).reshape(-1, spec.d))
        leaves.append(v)
    if len(set(leaves)) != len(leaves):
        raise ValueError("inconsistent path set: one path is a prefix of another")
    return PathLattice(
        spec, ds, list(codes), np.array(node_level), np.array(node_parent), np.array(node_depth),
        node_key, np.array(dec_parent, dtype=np.int64), dec_slot, dec_key,
        path_decisions, path_increments, np.array(leaves), date_atoms,
    )


def build_prefix_tree(paths: Sequence[StepPath], spec: GridSpec, dates=None) -> PathLattice:
    """Prefix tree of lattice paths; every path must be a lattice member."""
    if not paths:
        raise ValueError("inconsistent path set: empty")
    codes = []
    for i, p in enumerate(paths):
        if p.d != spec.d or abs(p.T - spec.T) > 1e-12:
            raise ValueError(f"inconsistent path set: path {i} has the wrong shape")
        c = lattice_code(p, spec, dates)
        if c is None:
            c = lattice_code(canonical(p), spec, dates)
        if c is None:
            raise ValueError(f"inconsistent path set: path {i} is not a lattice member")
        codes.append(c)
    lat = _from_codes(codes, spec, dates)
    lat._paths = list(paths)
    return lat


def lattice_from_truncation(tr: LatticeTruncation) -> PathLattice:
    """Prefix tree of the whole truncation, built from exact codes."""
    return _from_codes(enumerate_lattice_codes(tr), tr.spec, tr.dates)


# ------------------------------------------------------------- diagnostics

def _node_sums(Q: np.ndarray, lat: PathLattice) -> np.ndarray:
    """Per decision node, sum over paths through it of Q * increment."""
    return (lat.incidence() @ Q).reshape(lat.n_decisions, lat.d)


def martingale_defect(Q, lat: PathLattice, norm: str = "euclidean"):
    """Sum over decision nodes of |E_Q[(next - current) 1_node]|.

    By the tower property this equals E_Q of the summed conditional-mean
    deviations.  ``norm`` is ``"euclidean"`` or ``"l1"`` (the LP encoding).
    Returns the total and the per-node terms.
    """
    Q = np.asarray(Q, dtype=float)
    sums = _node_sums(Q, lat)
    if norm == "euclidean":
        terms = np.linalg.norm(sums, axis=1)
    elif norm == "l1":
        terms = np.abs(sums).sum(axis=1)
    else:
        raise ValueError(f"unknown norm {norm!r}")
    return float(terms.sum()), terms


@dataclass
class DoobDecomposition:
    """Compensator A and martingale part M = S + A at tree nodes (and per path)."""

    compensator: np.ndarray
    martingale: np.ndarray
    zero_mass_decisions: List[int]

    def leaf_compensator(self, lat: PathLattice) -> np.ndarray:
        return self.compensator[lat.leaf]


def doob_decomposition(Q, lat: PathLattice) -> DoobDecomposition:
    """A^Q at a node accumulates -(E_Q[next | decision] - current) along the walk.

    Then M^Q = S + A^Q has zero conditional drift at every decision node.
    Decision nodes carrying no mass get a zero drift and are reported.
    """
    Q = np.asarray(Q, dtype=float)
    mass = np.zeros(lat.n_decisions)
    for p, qs in enumerate(lat.path_decisions):
        mass[qs] += Q[p]
    sums = _node_sums(Q, lat)
    drift = np.zeros_like(sums)
    pos = mass > 0
    drift[pos] = sums[pos] / mass[pos, None]
    A = np.zeros((lat.n_nodes, lat.d))
    done = np.zeros(lat.n_nodes, dtype=bool)
    done[0] = True
    for code, qs in zip(lat.codes, lat.path_decisions):
        v = 0
        for k, q in enumerate(qs):
            w = lat.node_key[code[: k + 1]]
            if not done[w]:
                A[w] = A[v] - drift[q]
                done[w] = True
            v = w
    M = lat.node_level + A
    return DoobDecomposition(A, M, [int(q) for q in np.nonzero(~pos)[0]])


# --------------------------------------------------------------- problems

def marginal_on_grid(m: DiscreteMeasure, spec: GridSpec) -> Dict[Atom, float]:
    """Atoms of ``m`` as level-n grid integers; raises if any atom is off the grid."""
    out: Dict[Atom, float] = {}
    for a, w in zip(m.atoms, m.weights):
        ints = grid_ints(a, spec.n)
        if ints is None:
            raise MOTError("MARGINAL_OFF_GRID", f"atom {a.tolist()} is not on the level-{spec.n} grid; project first")
        out[ints] = out.get(ints, 0.0) + float(w)
    return out


@dataclass
class MOTProblem:
    """Payoff values on a lattice with marginal targets.

    ``marginals`` is a list of (date index, measure); ``mode`` is
    ``"exact"`` or ``"relaxed"`` (then ``c`` and ``relax_n`` apply).
    ``gamma_bound`` is the box on the dynamic position in the hedging LP.
    """

    lattice: PathLattice
    payoff: np.ndarray
    marginals: List[Tuple[int, DiscreteMeasure]]
    mode: str = "exact"
    c: float = 1.0
    relax_n: int = 1
    gamma_bound: Optional[float] = None

    def __post_init__(self):
        self.payoff = np.asarray(self.payoff, dtype=float).reshape(-1)
        if self.payoff.shape[0] != self.lattice.n_paths:
            raise ValueError("one payoff value per lattice path required")
        if self.mode not in ("exact", "relaxed"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "relaxed" and not (self.c > 0 and self.relax_n >= 1):
            raise ValueError("relaxed mode needs c > 0 and n >= 1")
        if self.gamma_bound is None:
            self.gamma_bound = float(self.lattice.spec.n)
        dates = [i for i, _ in self.marginals]
        if len(set(dates)) != len(dates) or any(not 0 <= i < self.lattice.n_dates for i in dates):
            raise ValueError("invalid marginal dates")

    @classmethod
    def terminal(cls, lattice: PathLattice, payoff, marginal: DiscreteMeasure, **kw) -> "MOTProblem":
        return cls(lattice, payoff, [(lattice.n_dates - 1, marginal)], **kw)

    def targets(self) -> List[Tuple[int, Dict[Atom, float]]]:
        return [(i, marginal_on_grid(m, self.lattice.spec)) for i, m in self.marginals]


@dataclass
class MOTSolution:
    value: float
    status: str
    Q: Optional[np.ndarray] = None
    static: Dict[int, Dict[Atom, float]] = field(default_factory=dict)
    gamma: Optional[np.ndarray] = None
    cash: float = 0.0
    gap: float = math.nan
    defect: float = math.nan
    marginal_deviation: float = math.nan
    gamma_slack: bool = True
    infeasible: bool = False
    runtime_ms: float = 0.0
    lp: Optional[LPSolution] = None
    kind: str = "primal"

    def static_function(self, date: int = -1) -> Callable[[np.ndarray], float]:
        """Static leg at a date as a function of a point on the level-n grid."""
        key = sorted(self.static)[date] if date < 0 else date
        table = self.static[key]
        return lambda atom: table[tuple(int(v) for v in atom)]

    def to_json(self, lat: Optional[PathLattice] = None) -> dict:
        doc = {
            "kind": self.kind, "status": self.status, "value": self.value, "gap": self.gap,
            "defect": self.defect, "marginal_deviation": self.marginal_deviation,
            "gamma_slack": self.gamma_slack, "infeasible": self.infeasible,
            "runtime_ms": self.runtime_ms, "cash": self.cash,
            "static": {str(i): [[list(a), v] for a, v in sorted(t.items())] for i, t in self.static.items()},
        }
        if self.Q is not None:
            nz = np.nonzero(self.Q > 1e-15)[0]
            doc["Q"] = [[int(p), float(self.Q[p])] for p in nz]
        if self.gamma is not None:
            doc["gamma"] = self.gamma.tolist()
        return doc


def _marginal_rows(lat: PathLattice, targets):
    """One row per (date, atom): indicator of S_{T_i} = atom."""
    rows, rhs, index = [], [], []
    for i, tab in targets:
        per_path = lat.date_atoms[i] if i == lat.n_dates - 1 else _date_values(lat, i)
        atoms = sorted(set(per_path) | set(tab))
        pos = {a: r for r, a in enumerate(atoms)}
        cols = np.arange(lat.n_paths)
        rr = np.array([pos[a] for a in per_path])
        M = sp.csr_matrix((np.ones(lat.n_paths), (rr, cols)), shape=(len(atoms), lat.n_paths))
        rows.append(M)
        rhs.append(np.array([tab.get(a, 0.0) for a in atoms]))
        index.append((i, atoms))
    return rows, rhs, index


def _date_values(lat: PathLattice, i: int) -> List[Atom]:
    out = []
    for code in lat.codes:
        out.append(next(tuple(k.level) for k in code if k.fam == DATE and k.interval == i))
    return out


def _check_reachable(lat, targets):
    for i, tab in targets:
        per_path = set(lat.date_atoms[i] if i == lat.n_dates - 1 else _date_values(lat, i))
        missing = [a for a, w in tab.items() if w > 0 and a not in per_path]
        if missing:
            raise MOTError("TRUNCATION_INFEASIBLE", f"marginal atoms {missing[:3]} at date {i} are not reachable on the truncated lattice")


def _primal_lp(problem: MOTProblem):
    lat = problem.lattice
    targets = problem.targets()
    mrows, mrhs, index = _marginal_rows(lat, targets)
    Bmart = lat.incidence()
    A = sp.vstack(mrows + [Bmart]).tocsr()
    b = np.concatenate(mrhs + [np.zeros(Bmart.shape[0])])
    lp = LinearProgram(problem.payoff, A, ["="] * A.shape[0], b, maximize=True)
    return lp, index


def _finish_primal(problem, lp, sol, index, t0, kind="primal") -> MOTSolution:
    lat = problem.lattice
    if sol.status == "infeasible":
        raise MOTError("TRUNCATION_INFEASIBLE", "no martingale measure on the truncated lattice matches the marginals")
    if not sol.optimal:
        raise MOTError("LP_FAILURE", sol.status + " " + sol.message)
    Q = np.maximum(sol.x[: lat.n_paths], 0.0)
    static, r = {}, 0
    for i, atoms in index:
        static[i] = {a: float(sol.y[r + j]) for j, a in enumerate(atoms)}
        r += len(atoms)
    gamma = sol.y[r: r + lat.n_decisions * lat.d].reshape(lat.n_decisions, lat.d)
    defect, _ = martingale_defect(Q, lat)
    dev = 0.0
    for i, tab in problem.targets():
        per_path = lat.date_atoms[i] if i == lat.n_dates - 1 else _date_values(lat, i)
        got: Dict[Atom, float] = {}
        for a, q in zip(per_path, Q):
            got[a] = got.get(a, 0.0) + q
        dev += sum(abs(got.get(a, 0.0) - tab.get(a, 0.0)) for a in set(got) | set(tab))
    slack = _gamma_slack(lat, gamma, problem.gamma_bound)
    return MOTSolution(
        value=float(sol.objective), status="optimal", Q=Q, static=static, gamma=gamma,
        gap=float(sol.residuals.get("gap", math.nan)), defect=defect, marginal_deviation=dev,
        gamma_slack=slack, runtime_ms=(time.perf_counter() - t0) * 1e3, lp=sol, kind=kind,
    )


def _gamma_slack(lat, gamma, bound) -> bool:
    if bound is None or not np.isfinite(bound):
        return True
    mask = np.array([not lat.is_date_decision(q) for q in range(lat.n_decisions)], dtype=bool)
    return bool(np.all(np.abs(gamma[mask]) < bound - 1e-9)) if mask.any() else True


def solve_primal(problem: MOTProblem, method: str = "auto") -> MOTSolution:
    """sup E_Q[G] over martingale measures on the lattice with the given marginals.

    The row duals form an optimal super-hedge with unbounded dynamic
    position: ``static`` per date and atom, ``gamma`` per decision node.
    """
    if problem.mode != "exact":
        raise ValueError("solve_primal needs an exact-mode problem")
    t0 = time.perf_counter()
    _check_reachable(problem.lattice, problem.targets())
    lp, index = _primal_lp(problem)
    sol = solve(lp, method=method)
    return _finish_primal(problem, lp, sol, index, t0)


def value_of_marginal(lat: PathLattice, payoff, marginal: DiscreteMeasure) -> float:
    return solve_primal(MOTProblem.terminal(lat, payoff, marginal)).value


# ----------------------------------------------------------------- hedging

def solve_dual_superhedge(problem: MOTProblem, method: str = "auto") -> MOTSolution:
    """Cheapest super-hedge on the lattice.

    Variables: cash z, static legs ghat_i(a) per date and atom, dynamic
    gamma per decision node and coordinate.  One constraint per path:
    z + sum_i ghat_i(S_{T_i}) + sum_k gamma(node_k).dS_k >= G.  Interior
    gamma lies in [-gamma_bound, gamma_bound]; positions at date knots (the
    jump legs) are free.  In exact mode z = 0 and the static legs are free;
    in relaxed mode they are boxed by ``relax_n`` and z is free.
    """
    t0 = time.perf_counter()
    lat = problem.lattice
    d = lat.d
    targets = problem.targets()
    mrows, mrhs, index = _marginal_rows(lat, targets)
    n_static = sum(len(a) for _, a in index)
    nq = lat.n_decisions * d
    relaxed = problem.mode == "relaxed"
    # columns: [z, ghat..., gamma...]
    G = sp.hstack([sp.csr_matrix(np.ones((lat.n_paths, 1)))] + [m.T for m in mrows] + [lat.incidence().T]).tocsr()
    cost = np.concatenate([[1.0], *mrhs, np.zeros(nq)])
    lb = np.full(1 + n_static + nq, -np.inf)
    ub = np.full(1 + n_static + nq, np.inf)
    if relaxed:
        lb[1:1 + n_static], ub[1:1 + n_static] = -problem.relax_n, problem.relax_n
        box = float(problem.relax_n)
    else:
        lb[0] = ub[0] = 0.0
        box = float(problem.gamma_bound)
    gb = np.repeat([not lat.is_date_decision(q) for q in range(lat.n_decisions)], d)
    gl, gu = lb[1 + n_static:], ub[1 + n_static:]
    gl[gb], gu[gb] = -box, box
    lp = LinearProgram(cost, G, [">"] * lat.n_paths, problem.payoff, lb, ub)
    sol = solve(lp, method=method)
    if sol.status == "unbounded":
        raise MOTError("TRUNCATION_INFEASIBLE", "hedging LP unbounded: some marginal atom is not reachable")
    if not sol.optimal:
        raise MOTError("LP_FAILURE", sol.status + " " + sol.message)
    x = sol.x
    static, r = {}, 1
    for i, atoms in index:
        static[i] = {a: float(x[r + j]) for j, a in enumerate(atoms)}
        r += len(atoms)
    gamma = x[r:].reshape(lat.n_decisions, d)
    return MOTSolution(
        value=float(sol.objective), status="optimal", static=static, gamma=gamma, cash=float(x[0]),
        gap=float(sol.residuals.get("gap", math.nan)), gamma_slack=_gamma_slack(lat, gamma, box),
        runtime_ms=(time.perf_counter() - t0) * 1e3, lp=sol, kind="dual",
    )


def solve_relaxed(problem: MOTProblem, method: str = "auto") -> MOTSolution:
    """sup E_Q[G] over probabilities Q on the lattice with

    sum_a |Q(S_T = a) - mu(a)| <= c / n   and   sum_nodes |E_Q[dS 1_node]|_1 <= c / n.

    Absolute values use pairs of nonnegative slacks.  An empty feasible set
    gives value 0 with ``infeasible`` set.
    """
    if problem.mode != "relaxed":
        raise ValueError("solve_relaxed needs a relaxed-mode problem")
    t0 = time.perf_counter()
    lat = problem.lattice
    targets = problem.targets()
    mrows, mrhs, index = _marginal_rows(lat, targets)
    B = lat.incidence()
    P = lat.n_paths
    na = sum(m.shape[0] for m in mrows)
    nb = B.shape[0]
    budget = problem.c / problem.relax_n
    nv = P + 2 * na + 2 * nb
    blocks = []
    # marginal rows: Q-indicator - p + m = mu
    Mm = sp.vstack(mrows)
    blocks.append(sp.hstack([Mm, -sp.eye(na), sp.eye(na), sp.csr_matrix((na, 2 * nb))]))
    # node rows: B Q - u + v = 0
    blocks.append(sp.hstack([B, sp.csr_matrix((nb, 2 * na)), -sp.eye(nb), sp.eye(nb)]))
    mass = np.zeros(nv); mass[:P] = 1.0
    devrow = np.zeros(nv); devrow[P:P + 2 * na] = 1.0
    defrow = np.zeros(nv); defrow[P + 2 * na:] = 1.0
    A = sp.vstack(blocks + [sp.csr_matrix(np.vstack([mass, devrow, defrow]))]).tocsr()
    b = np.concatenate([np.concatenate(mrhs), np.zeros(nb), [1.0, budget, budget]])
    senses = ["="] * (na + nb) + ["=", "<", "<"]
    cost = np.zeros(nv); cost[:P] = problem.payoff
    lp = LinearProgram(cost, A, senses, b, maximize=True)
    sol = solve(lp, method=method)
    if sol.status == "infeasible":
        return MOTSolution(value=0.0, status="infeasible", infeasible=True,
                           runtime_ms=(time.perf_counter() - t0) * 1e3, lp=sol, kind="relaxed")
    if not sol.optimal:
        raise MOTError("LP_FAILURE", sol.status + " " + sol.message)
    Q = np.maximum(sol.x[:P], 0.0)
    defect_l1, _ = martingale_defect(Q, lat, norm="l1")
    dev = float(np.abs(Mm @ Q - np.concatenate(mrhs)).sum())
    return MOTSolution(
        value=float(sol.objective), status="optimal", Q=Q, gap=float(sol.residuals.get("gap", math.nan)),
        defect=defect_l1, marginal_deviation=dev, runtime_ms=(time.perf_counter() - t0) * 1e3,
        lp=sol, kind="relaxed",
    )


def solve_multi_marginal(problem: MOTProblem, method: str = "auto", check_order: bool = True) -> MOTSolution:
    """Primal with a law at every marginal date, after a convex-order check."""
    if problem.mode != "exact":
        raise ValueError("multi-marginal problems are exact-mode")
    ms = sorted(problem.marginals, key=lambda im: im[0])
    for _, m in ms:
        if np.max(np.abs(m.mean() - 1.0)) > 1e-9:
            raise MOTError("TRUNCATION_INFEASIBLE", "every marginal must have mean (1, ..., 1)")
    if check_order:
        for (i, a), (j, b) in zip(ms, ms[1:]):
            res = convex_order_check(a, b)
            if not res.ok:
                err = MOTError("CONVEX_ORDER_VIOLATION", f"marginal at date {i} is not below date {j}; {res.message}")
                err.witness = res.witness
                raise err
    return solve_primal(problem, method=method)
