"""Finitely supported measures on the positive orthant."""

import itertools
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple, Union

import networkx as nx
import numpy as np

from .discretization import ceil_project
from .lp import LinearProgram, solve

__all__ = [
    "DiscreteMeasure",
    "MartingaleCoupling",
    "ConvexWitness",
    "ConvexOrderResult",
    "price_static",
    "check_unit_first_moment",
    "project_measure",
    "l1_marginal_deviation",
    "prokhorov_distance",
    "convex_order_check",
    "pth_moment",
    "measure_to_json",
    "measure_from_json",
]


class DiscreteMeasure:
    """Probability measure with finitely many atoms in R^d."""

    def __init__(self, atoms, weights, check: bool = True):
        atoms = np.array(atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms.reshape(-1, 1)
        weights = np.array(weights, dtype=float).reshape(-1)
        self.atoms = atoms
        self.weights = weights
        if check:
            if atoms.shape[0] != weights.shape[0] or atoms.shape[0] == 0:
                raise ValueError("need one weight per atom")
            if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
                raise ValueError("weights must be nonnegative and sum to 1")
            if len({tuple(a) for a in atoms}) != len(atoms):
                raise ValueError("duplicate atoms")

    @classmethod
    def from_pairs(cls, atoms, weights) -> "DiscreteMeasure":
        """Merge repeated atoms and drop zero weights."""
        acc: Dict[Tuple[float, ...], float] = {}
        for a, w in zip(np.atleast_2d(np.asarray(atoms, float).reshape(len(weights), -1)), weights):
            key = tuple(float(v) for v in a)
            acc[key] = acc.get(key, 0.0) + float(w)
        keys = sorted(k for k, w in acc.items() if w > 0)
        w = np.array([acc[k] for k in keys])
        return cls(np.array(keys), w / w.sum())

    @classmethod
    def dirac(cls, x) -> "DiscreteMeasure":
        return cls(np.atleast_2d(np.asarray(x, float)), [1.0])

    @property
    def d(self) -> int:
        return self.atoms.shape[1]

    def __len__(self):
        return self.atoms.shape[0]

    def mean(self) -> np.ndarray:
        return self.weights @ self.atoms

    def as_dict(self) -> Dict[Tuple[float, ...], float]:
        return {tuple(float(v) for v in a): float(w) for a, w in zip(self.atoms, self.weights)}

    def __repr__(self):
        return f"DiscreteMeasure(atoms={len(self)}, d={self.d})"


def price_static(g: Union[Callable, Dict], m: DiscreteMeasure) -> float:
    """Integral of g against m; g is a callable on atoms or a dict keyed by atom tuples."""
    if isinstance(g, dict):
        vals = [g[tuple(float(v) for v in a)] for a in m.atoms]
    else:
        vals = [g(a) for a in m.atoms]
    return float(np.dot(np.asarray(vals, float), m.weights))


def check_unit_first_moment(m: DiscreteMeasure, tol: float = 1e-9):
    dev = m.mean() - 1.0
    return bool(np.all(np.abs(dev) <= tol)), dev


def project_measure(m: DiscreteMeasure, n: int) -> DiscreteMeasure:
    """Push-forward under ceil_project at level n, merging collisions."""
    return DiscreteMeasure.from_pairs(ceil_project(m.atoms, n), m.weights)


def l1_marginal_deviation(a: DiscreteMeasure, b: DiscreteMeasure) -> float:
    da, db = a.as_dict(), b.as_dict()
    return float(sum(abs(da.get(k, 0.0) - db.get(k, 0.0)) for k in set(da) | set(db)))


def pth_moment(m: DiscreteMeasure, p: float) -> float:
    if p < 1:
        raise ValueError("p must be at least 1")
    return float(m.weights @ np.linalg.norm(m.atoms, axis=1) ** p)


# -------------------------------------------------------------- Prokhorov

def _dist(a: DiscreteMeasure, b: DiscreteMeasure) -> np.ndarray:
    return np.linalg.norm(a.atoms[:, None, :] - b.atoms[None, :, :], axis=2)


def _excess_exact(wa, wb, near) -> float:
    """max over subsets C of supp(a) of a(C) - b(C^delta); near[x, y] = |x - y| < delta."""
    p = wa.shape[0]
    subsets = np.array(list(itertools.product([0, 1], repeat=p)), dtype=bool)
    covered = (subsets.astype(np.int32) @ near.astype(np.int32)) > 0
    return float(np.max(subsets @ wa - covered @ wb))


def _excess_flow(wa, wb, near) -> float:
    """Same quantity via max-flow: total mass minus the largest transport along near pairs."""
    G = nx.DiGraph()
    for i, w in enumerate(wa):
        G.add_edge("s", ("a", i), capacity=float(w))
    for j, w in enumerate(wb):
        G.add_edge(("b", j), "t", capacity=float(w))
    for i, j in zip(*np.nonzero(near)):
        G.add_edge(("a", i), ("b", j))
    if not G.has_node("t"):
        return float(wa.sum())
    flow = nx.maximum_flow_value(G, "s", "t")
    return float(wa.sum() - flow)


def prokhorov_distance(a: DiscreteMeasure, b: DiscreteMeasure, exact: Optional[bool] = None,
                       tol: float = 1e-5) -> float:
    """Prokhorov distance with open delta-neighbourhoods.

    Exact mode (at most 12 atoms in total) scans the distinct pairwise atom
    distances r_0 = 0 < r_1 < ...; on (r_k, r_{k+1}] the neighbourhood
    structure is fixed, so the worst subset excess f_k is constant there and
    the distance is min_k max(r_k, f_k).  Otherwise bisection on delta with a
    max-flow evaluation of the excess.
    """
    if a.d != b.d:
        raise ValueError("dimension mismatch")
    D = _dist(a, b)
    total = len(a) + len(b)
    if exact is None:
        exact = total <= 12
    if exact and total > 12:
        raise ValueError("exact Prokhorov distance limited to 12 atoms")
    wa, wb = a.weights, b.weights
    if exact:
        radii = np.unique(np.concatenate([[0.0], D.ravel()]))
        best = 1.0
        for rk in radii:
            near = D <= rk
            f = max(_excess_exact(wa, wb, near), _excess_exact(wb, wa, near.T))
            best = min(best, max(rk, f))
        return float(best)

    def ok(delta):
        near = D < delta
        return max(_excess_flow(wa, wb, near), _excess_flow(wb, wa, near.T)) <= delta + 1e-12

    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return float(hi)


# ----------------------------------------------------------- convex order

@dataclass
class MartingaleCoupling:
    row_atoms: np.ndarray
    col_atoms: np.ndarray
    row_weights: np.ndarray
    col_weights: np.ndarray
    kernel: np.ndarray

    def residuals(self) -> Dict[str, float]:
        K = self.kernel
        return {
            "row_sum": float(np.max(np.abs(K.sum(axis=1) - 1.0))),
            "row_mean": float(np.max(np.abs(K @ self.col_atoms - self.row_atoms))),
            "marginal": float(np.max(np.abs(self.row_weights @ K - self.col_weights))),
            "negativity": float(max(0.0, -K.min())),
        }

    def check(self, tol: float = 1e-8) -> bool:
        r = self.residuals()
        return r["row_sum"] <= tol and r["row_mean"] <= tol and r["marginal"] <= tol and r["negativity"] <= tol


@dataclass
class ConvexWitness:
    """phi(y) = max_i (intercepts_i + slopes_i . y), with int phi da > int phi db."""

    slopes: np.ndarray
    intercepts: np.ndarray
    gap: float

    def __call__(self, y) -> np.ndarray:
        y = np.atleast_2d(np.asarray(y, float))
        return np.max(y @ self.slopes.T + self.intercepts, axis=1)

    def breakpoints(self) -> List[float]:
        """Kinks of phi on the real line (d = 1)."""
        s = self.slopes[:, 0]
        c = self.intercepts
        pts = []
        for i, j in itertools.combinations(range(len(s)), 2):
            if s[i] != s[j]:
                x = (c[j] - c[i]) / (s[i] - s[j])
                v = self(np.array([[x]]))[0]
                if abs(v - (c[i] + s[i] * x)) <= 1e-9 * (1 + abs(v)):
                    pts.append(float(x))
        return sorted(set(round(p, 12) for p in pts))


@dataclass
class ConvexOrderResult:
    ok: bool
    coupling: Optional[MartingaleCoupling] = None
    witness: Optional[ConvexWitness] = None
    message: str = ""

    def __bool__(self):
        return self.ok


def _coupling_lp(a: DiscreteMeasure, b: DiscreteMeasure, slack: bool):
    p, q, d = len(a), len(b), a.d
    nk = p * q
    rows, rhs = [], []
    # kernel rows sum to one, reproduce the row atom in mean, and average to b
    for i in range(p):
        r = np.zeros(nk); r[i * q:(i + 1) * q] = 1.0
        rows.append(r); rhs.append(1.0)
    for i in range(p):
        for c in range(d):
            r = np.zeros(nk); r[i * q:(i + 1) * q] = b.atoms[:, c]
            rows.append(r); rhs.append(a.atoms[i, c])
    for j in range(q):
        r = np.zeros(nk); r[j::q] = a.weights
        rows.append(r); rhs.append(b.weights[j])
    A = np.array(rows)
    m = A.shape[0]
    if not slack:
        return LinearProgram(np.zeros(nk), A, ["="] * m, rhs), m
    A = np.hstack([A, np.eye(m), -np.eye(m)])
    cost = np.concatenate([np.zeros(nk), np.ones(2 * m)])
    return LinearProgram(cost, A, ["="] * m, rhs), m


def convex_order_check(a: DiscreteMeasure, b: DiscreteMeasure) -> ConvexOrderResult:
    """Decide a <= b in convex order by searching for a martingale kernel.

    On success the kernel is returned.  Otherwise the duals of the
    minimum-residual problem give affine pieces l_i whose maximum phi is a
    convex function with int phi da > int phi db.
    """
    if a.d != b.d:
        raise ValueError("dimension mismatch")
    keep = a.weights > 0
    a = DiscreteMeasure(a.atoms[keep], a.weights[keep] / a.weights[keep].sum())
    if len(a) == len(b) and np.array_equal(a.atoms, b.atoms) and np.allclose(a.weights, b.weights, atol=1e-15):
        K = np.eye(len(a))
        return ConvexOrderResult(True, MartingaleCoupling(a.atoms, b.atoms, a.weights, b.weights, K))
    lp, m = _coupling_lp(a, b, slack=True)
    sol = solve(lp, method="primal")
    if not sol.optimal:
        raise RuntimeError(f"convex-order LP failed: {sol.status}")
    p, q = len(a), len(b)
    if sol.objective <= 1e-9:
        K = sol.x[: p * q].reshape(p, q)
        cpl = MartingaleCoupling(a.atoms, b.atoms, a.weights, b.weights, np.maximum(K, 0.0))
        if cpl.check(1e-8):
            return ConvexOrderResult(True, cpl)
    # Farkas certificate from the residual problem
    y = sol.y
    u = y[:p]
    v = y[p:p + p * a.d].reshape(p, a.d)
    slopes = v / a.weights[:, None]
    intercepts = u / a.weights
    w = ConvexWitness(slopes, intercepts, 0.0)
    w.gap = float(a.weights @ w(a.atoms) - b.weights @ w(b.atoms))
    if not w.gap > 1e-10:
        raise RuntimeError("convex-order LP infeasible but no separating witness recovered")
    return ConvexOrderResult(False, witness=w, message=f"convex witness gap {w.gap:.6g}")


def measure_to_json(m: DiscreteMeasure) -> dict:
    return {"atoms": m.atoms.tolist(), "weights": m.weights.tolist()}


def measure_from_json(doc: dict) -> DiscreteMeasure:
    atoms = np.asarray(doc["atoms"], dtype=float)
    if atoms.ndim == 1:
        atoms = atoms.reshape(-1, 1)
    return DiscreteMeasure(atoms, doc["weights"])
