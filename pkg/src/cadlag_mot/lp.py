"""
Bounded-variable revised simplex with Bland's rule.

The kernel keeps an explicit dense basis inverse with rank-one updates and
periodic refactorisation; the constraint matrix may be dense or
``scipy.sparse``.  Problems with many more rows than columns are solved
through their dual.  ``certify`` recomputes every residual from scratch.
"""

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

__all__ = [
    "LinearProgram",
    "LPSolution",
    "CertificateReport",
    "solve",
    "certify",
    "vertex_enumeration",
    "to_lp_format",
]

FEAS_TOL = 1e-9
OPT_TOL = 1e-9
PIVOT_TOL = 1e-9
REFACTOR_EVERY = 64


@dataclass
class LinearProgram:
    """min (or max) c.x  s.t.  A_i x (<=, =, >=) b_i,  lb <= x <= ub."""

    c: np.ndarray
    A: object
    senses: np.ndarray
    b: np.ndarray
    lb: Optional[np.ndarray] = None
    ub: Optional[np.ndarray] = None
    maximize: bool = False

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).reshape(-1)
        n = self.c.shape[0]
        if sp.issparse(self.A):
            self.A = sp.csr_matrix(self.A, dtype=float)
        else:
            self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        m = self.A.shape[0]
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        self.senses = np.array([_sense(s) for s in np.asarray(self.senses).reshape(-1)], dtype="<U1")
        self.lb = np.zeros(n) if self.lb is None else np.asarray(self.lb, dtype=float).reshape(-1)
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float).reshape(-1)
        if self.A.shape != (m, n) or self.b.shape != (m,) or self.senses.shape != (m,):
            raise ValueError("inconsistent LP dimensions")
        if self.lb.shape != (n,) or self.ub.shape != (n,):
            raise ValueError("bounds must match the number of variables")
        data = self.A.data if sp.issparse(self.A) else self.A
        if not (np.all(np.isfinite(data)) and np.all(np.isfinite(self.b)) and np.all(np.isfinite(self.c))):
            raise ValueError("LP data must be finite")
        if np.any(self.lb > self.ub) or np.any(self.lb == np.inf) or np.any(self.ub == -np.inf):
            raise ValueError("inconsistent variable bounds")

    @property
    def shape(self):
        return self.A.shape

    def matrix(self) -> sp.csr_matrix:
        return self.A if sp.issparse(self.A) else sp.csr_matrix(self.A)


def _sense(s) -> str:
    table = {"<": "<", "<=": "<", "L": "<", "=": "=", "==": "=", "E": "=", ">": ">", ">=": ">", "G": ">"}
    if s not in table:
        raise ValueError(f"unknown row sense {s!r}")
    return table[s]


@dataclass
class LPSolution:
    """Solver output.

    ``y`` are row duals and ``z = c - A^T y`` reduced costs, both in the
    sense of the problem as posed: for a minimisation the optimal value is
    b.y plus bound terms and z >= 0 at lower bounds; for a maximisation the
    signs of z flip.
    """

    status: str
    x: Optional[np.ndarray] = None
    y: Optional[np.ndarray] = None
    z: Optional[np.ndarray] = None
    objective: float = math.nan
    iterations: int = 0
    method: str = "primal"
    message: str = ""
    residuals: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


# ----------------------------------------------------------- simplex core

AT_LOWER, AT_UPPER, AT_ZERO, BASIC = 0, 1, 2, 3


class _Simplex:
    """min c.x, A x = b, l <= x <= u on a fixed column set."""

    def __init__(self, A: sp.csc_matrix, b, l, u, max_iter):
        self.A = A
        self.AT = A.T.tocsr()
        self.b = b
        self.l = l
        self.u = u
        self.m, self.N = A.shape
        self.max_iter = max_iter
        self.iterations = 0

    def _col(self, j):
        s, e = self.A.indptr[j], self.A.indptr[j + 1]
        return self.A.indices[s:e], self.A.data[s:e]

    def refactor(self):
        B = self.A[:, self.basis].toarray()
        try:
            self.Binv = np.linalg.inv(B)
        except np.linalg.LinAlgError:
            return False
        if not np.all(np.isfinite(self.Binv)):
            return False
        xN = self.x.copy()
        xN[self.basis] = 0.0
        self.x[self.basis] = self.Binv @ (self.b - self.A @ xN)
        return True

    def run(self, c):
        """Primal simplex from the current basis; returns a status string."""
        m = self.m
        since = 0
        while True:
            if self.iterations >= self.max_iter:
                return "iteration_limit"
            y = self.Binv.T @ c[self.basis]
            d = c - self.AT @ y
            # Bland: smallest eligible index enters
            st = self.state
            cand = ((st == AT_LOWER) & (d < -OPT_TOL)) | ((st == AT_UPPER) & (d > OPT_TOL)) | (
                (st == AT_ZERO) & (np.abs(d) > OPT_TOL)
            )
            cand &= self.l < self.u
            idx = np.flatnonzero(cand)
            if idx.size == 0:
                self.y = y
                self.d = d
                return "optimal"
            q = int(idx[0])
            sigma = 1.0 if d[q] < 0 else -1.0
            rows, vals = self._col(q)
            alpha = self.Binv[:, rows] @ vals
            sa = sigma * alpha
            xb = self.x[self.basis]
            lb = self.l[self.basis]
            ub = self.u[self.basis]
            theta = self.u[q] - self.l[q]
            leave = -1
            with np.errstate(divide="ignore", invalid="ignore"):
                dec = sa > PIVOT_TOL
                inc = sa < -PIVOT_TOL
                ratios = np.full(m, np.inf)
                ratios[dec] = (xb[dec] - lb[dec]) / sa[dec]
                ratios[inc] = (ub[inc] - xb[inc]) / (-sa[inc])
            ratios = np.maximum(ratios, 0.0)
            rmin = ratios.min() if m else np.inf
            if rmin < theta - 1e-12 or (not math.isfinite(theta) and math.isfinite(rmin)):
                ties = np.flatnonzero(ratios <= rmin + 1e-12)
                leave = int(ties[np.argmin(self.basis[ties])])
                theta = ratios[leave]
            if not math.isfinite(theta):
                self.ray = (q, sigma, alpha)
                return "unbounded"
            self.iterations += 1
            # move
            self.x[self.basis] = xb - theta * sa
            self.x[q] += sigma * theta
            if leave < 0:
                self.state[q] = AT_UPPER if sigma > 0 else AT_LOWER
                continue
            out = self.basis[leave]
            self.state[out] = AT_LOWER if sa[leave] > 0 else AT_UPPER
            if not math.isfinite(self.l[out]) and self.state[out] == AT_LOWER:
                self.state[out] = AT_ZERO
            if not math.isfinite(self.u[out]) and self.state[out] == AT_UPPER:
                self.state[out] = AT_ZERO
            self.x[out] = {AT_LOWER: self.l[out], AT_UPPER: self.u[out], AT_ZERO: 0.0}[self.state[out]]
            self.basis[leave] = q
            self.state[q] = BASIC
            piv = alpha[leave]
            row = self.Binv[leave] / piv
            self.Binv -= np.outer(alpha, row)
            self.Binv[leave] = row
            since += 1
            if since >= REFACTOR_EVERY:
                since = 0
                if not self.refactor():
                    return "singular"


def _standard_form(lp: LinearProgram):
    """Equality form with slack columns; returns (A, b, l, u, c_min, n_struct)."""
    A = lp.matrix()
    m, n = A.shape
    ineq = np.flatnonzero(lp.senses != "=")
    sgn = np.where(lp.senses[ineq] == "<", 1.0, -1.0)
    S = sp.csr_matrix((sgn, (ineq, np.arange(ineq.size))), shape=(m, ineq.size))
    Af = sp.hstack([A, S], format="csc")
    l = np.concatenate([lp.lb, np.zeros(ineq.size)])
    u = np.concatenate([lp.ub, np.full(ineq.size, np.inf)])
    c = np.concatenate([-lp.c if lp.maximize else lp.c, np.zeros(ineq.size)])
    slack_of_row = np.full(m, -1)
    slack_of_row[ineq] = n + np.arange(ineq.size)
    return Af, lp.b.copy(), l, u, c, n, slack_of_row, sgn


def _solve_primal(lp: LinearProgram, max_iter: int) -> LPSolution:
    A, b, l, u, c, n, slack_of_row, sgn = _standard_form(lp)
    m, N = A.shape
    # nonbasic starting point
    x = np.where(np.isfinite(l), l, np.where(np.isfinite(u), u, 0.0))
    x[n:] = 0.0
    r = b - A @ x
    basis = np.empty(m, dtype=np.int64)
    art_rows, art_sign = [], []
    for i in range(m):
        j = slack_of_row[i]
        if j >= 0:
            coef = A[i, j]
            if r[i] / coef >= 0:
                basis[i] = j
                x[j] = r[i] / coef
                continue
        art_rows.append(i)
        art_sign.append(1.0 if r[i] >= 0 else -1.0)
    k = len(art_rows)
    if k:
        Art = sp.csc_matrix((art_sign, (art_rows, np.arange(k))), shape=(m, k))
        A = sp.hstack([A, Art], format="csc")
        l = np.concatenate([l, np.zeros(k)])
        u = np.concatenate([u, np.full(k, np.inf)])
        x = np.concatenate([x, np.abs(r[art_rows])])
        for t, i in enumerate(art_rows):
            basis[i] = N + t
    S = _Simplex(A, b, l, u, max_iter)
    S.x = x
    S.basis = basis
    S.state = np.where(np.isfinite(l), AT_LOWER, np.where(np.isfinite(u), AT_UPPER, AT_ZERO)).astype(np.int8)
    S.state[basis] = BASIC
    if not S.refactor():
        return LPSolution("singular", message="initial basis singular")
    if k:
        c1 = np.zeros(N + k)
        c1[N:] = 1.0
        status = S.run(c1)
        if status != "optimal":
            return LPSolution(status, iterations=S.iterations, message="phase 1")
        infeas = float(np.sum(S.x[N:]))
        scale = 1.0 + float(np.max(np.abs(b), initial=0.0))
        if infeas > FEAS_TOL * scale:
            return LPSolution("infeasible", iterations=S.iterations, objective=math.nan,
                              message=f"phase 1 residual {infeas:.3e}")
        # artificials are frozen at zero from now on
        S.u[N:] = 0.0
        S.x[N:] = 0.0
        nb = S.state[N:] != BASIC
        S.state[N:][nb] = AT_LOWER
        c2 = np.concatenate([c, np.zeros(k)])
    else:
        c2 = c
    status = S.run(c2)
    if status != "optimal":
        return LPSolution(status, iterations=S.iterations, message="phase 2")
    S.refactor()
    xs = S.x[:n].copy()
    # snap tiny bound violations caused by round-off
    xs = np.minimum(np.maximum(xs, lp.lb), lp.ub)
    y = S.Binv.T @ c2[S.basis]
    sol = _package(lp, xs, y, S.iterations, "primal")
    return sol


def _package(lp: LinearProgram, x, y_min, iters, method) -> LPSolution:
    y = -y_min if lp.maximize else y_min
    z = lp.c - lp.matrix().T @ y
    obj = float(lp.c @ x)
    return LPSolution("optimal", x, y, z, obj, iters, method)


def _dual_program(lp: LinearProgram):
    """Dual of the min-form problem after moving bounds into sign constraints."""
    A = lp.matrix().tocsc()
    m, n = A.shape
    c = -lp.c if lp.maximize else lp.c.copy()
    lb, ub = lp.lb, lp.ub
    shift = np.zeros(n)
    flip = np.ones(n)
    keep = []
    free = []
    box_rows = []
    for j in range(n):
        lo, hi = lb[j], ub[j]
        if lo == hi:
            shift[j] = lo
            continue
        if math.isfinite(lo):
            shift[j] = lo
            if math.isfinite(hi):
                box_rows.append((len(keep), hi - lo))
        elif math.isfinite(hi):
            shift[j] = hi
            flip[j] = -1.0
        else:
            free.append(len(keep))
        keep.append(j)
    keep = np.array(keep, dtype=np.int64)
    Ak = A[:, keep] @ sp.diags(flip[keep])
    bk = lp.b - A @ shift
    ck = flip[keep] * c[keep]
    const = float(c @ shift)
    senses = list(lp.senses)
    if box_rows:
        cols = [k for k, _ in box_rows]
        B = sp.csr_matrix((np.ones(len(cols)), (np.arange(len(cols)), cols)), shape=(len(cols), len(keep)))
        Ak = sp.vstack([Ak, B], format="csr")
        bk = np.concatenate([bk, [w for _, w in box_rows]])
        senses += ["<"] * len(cols)
    senses = np.array(senses)
    # dual: max bk.y  s.t.  Ak^T y (<= or =) ck,  y sign by row sense
    dl = np.where(senses == ">", 0.0, -np.inf)
    du = np.where(senses == "<", 0.0, np.inf)
    col_sense = np.array(["<"] * len(keep))
    if free:
        col_sense[free] = "="
    dual = LinearProgram(bk, Ak.T.tocsr(), col_sense, ck, dl, du, maximize=True)
    return dual, keep, flip, shift, const, m


def _solve_via_dual(lp: LinearProgram, max_iter: int) -> LPSolution:
    dual, keep, flip, shift, const, m = _dual_program(lp)
    ds = _solve_primal(dual, max_iter)
    if ds.status == "unbounded":
        return LPSolution("infeasible", iterations=ds.iterations, method="dual")
    if ds.status == "infeasible":
        # primal is unbounded or infeasible; let the primal simplex decide
        out = _solve_primal(lp, max_iter)
        out.method = "primal-fallback"
        return out
    if ds.status != "optimal":
        return LPSolution(ds.status, iterations=ds.iterations, method="dual", message=ds.message)
    x = shift.copy()
    x[keep] += flip[keep] * ds.y
    x = np.minimum(np.maximum(x, lp.lb), lp.ub)
    y_min = ds.x[:m]
    return _package(lp, x, y_min, ds.iterations, "dual")


def solve(lp: LinearProgram, method: str = "auto", max_iter: Optional[int] = None) -> LPSolution:
    """Solve ``lp``.

    ``method`` is ``"primal"``, ``"dual"`` (simplex on the dual problem) or
    ``"auto"``, which picks the dual when there are more rows than columns.
    """
    m, n = lp.shape
    if max_iter is None:
        max_iter = 50 * (m + n) + 1000
    if method == "auto":
        method = "dual" if m > n else "primal"
    if method == "primal":
        sol = _solve_primal(lp, max_iter)
    elif method == "dual":
        sol = _solve_via_dual(lp, max_iter)
    else:
        raise ValueError(f"unknown method {method!r}")
    if sol.optimal:
        sol.residuals = certify(lp, sol).as_dict()
    return sol


# ------------------------------------------------------------ certificates

@dataclass
class CertificateReport:
    ok: bool
    primal_residual: float = math.nan
    dual_residual: float = math.nan
    complementarity: float = math.nan
    gap: float = math.nan
    primal_value: float = math.nan
    dual_value: float = math.nan
    reason: str = ""

    def as_dict(self) -> dict:
        return {
            "ok": self.ok, "primal_residual": self.primal_residual, "dual_residual": self.dual_residual,
            "complementarity": self.complementarity, "gap": self.gap,
            "primal_value": self.primal_value, "dual_value": self.dual_value, "reason": self.reason,
        }


def certify(lp: LinearProgram, sol: LPSolution, feas_tol: float = FEAS_TOL,
            cs_tol: float = 1e-8, gap_tol: float = 1e-8) -> CertificateReport:
    """Recompute feasibility, dual feasibility, complementarity and the duality gap."""
    if sol.status != "optimal" or sol.x is None or sol.y is None:
        return CertificateReport(False, reason=f"status {sol.status}")
    A = lp.matrix()
    x = np.asarray(sol.x, float)
    s = -1.0 if lp.maximize else 1.0
    # work in min form: min s c.x with duals s y
    c = s * lp.c
    y = s * np.asarray(sol.y, float)
    Ax = A @ x
    row = Ax - lp.b
    viol = np.where(lp.senses == "<", np.maximum(row, 0), np.where(lp.senses == ">", np.maximum(-row, 0), np.abs(row)))
    bviol = np.maximum(lp.lb - x, 0) + np.maximum(x - lp.ub, 0)
    scale = 1.0 + np.abs(lp.b)
    pres = float(max(np.max(viol / scale, initial=0.0), np.max(bviol, initial=0.0)))
    # dual sign conditions on rows
    ysign = np.where(lp.senses == "<", np.maximum(y, 0), np.where(lp.senses == ">", np.maximum(-y, 0), 0.0))
    z = c - A.T @ y
    # z > 0 needs a finite lower bound, z < 0 a finite upper bound
    zpos = np.where(np.isfinite(lp.lb), 0.0, np.maximum(z, 0))
    zneg = np.where(np.isfinite(lp.ub), 0.0, np.maximum(-z, 0))
    dres = float(max(np.max(ysign, initial=0.0), np.max(zpos, initial=0.0), np.max(zneg, initial=0.0)))
    # complementary slackness
    cs_rows = np.abs(y * row)
    cs_rows[lp.senses == "="] = 0.0
    at_l = np.where(np.isfinite(lp.lb), np.abs(x - lp.lb), np.abs(x))
    at_u = np.where(np.isfinite(lp.ub), np.abs(lp.ub - x), np.abs(x))
    cs_cols = np.maximum(z, 0) * at_l + np.maximum(-z, 0) * at_u
    cs = float(max(np.max(cs_rows, initial=0.0), np.max(cs_cols, initial=0.0)))
    primal_val = float(c @ x)
    lbf = np.where(np.isfinite(lp.lb), lp.lb, 0.0)
    ubf = np.where(np.isfinite(lp.ub), lp.ub, 0.0)
    dual_val = float(lp.b @ y + np.maximum(z, 0) @ lbf - np.maximum(-z, 0) @ ubf)
    gap = abs(primal_val - dual_val)
    ok = pres <= feas_tol and dres <= feas_tol and cs <= cs_tol and gap <= gap_tol * (1 + abs(primal_val))
    rep = CertificateReport(ok, pres, dres, cs, gap, s * primal_val, s * dual_val)
    if not ok:
        rep.reason = "certificate tolerances exceeded"
    return rep


# ------------------------------------------------------------ oracle

def vertex_enumeration(lp: LinearProgram, tol: float = 1e-9):
    """Best vertex of a bounded feasible region by brute force.

    Intended for tiny problems (a handful of variables); the feasible set is
    assumed bounded.  Returns (status, value, x).
    """
    A = lp.matrix().toarray()
    m, n = A.shape
    eq_rows, eq_rhs, ineq_rows, ineq_rhs = [], [], [], []
    for i in range(m):
        if lp.senses[i] == "=":
            eq_rows.append(A[i]); eq_rhs.append(lp.b[i])
        elif lp.senses[i] == "<":
            ineq_rows.append(A[i]); ineq_rhs.append(lp.b[i])
        else:
            ineq_rows.append(-A[i]); ineq_rhs.append(-lp.b[i])
    for j in range(n):
        e = np.zeros(n); e[j] = 1.0
        if math.isfinite(lp.ub[j]):
            ineq_rows.append(e); ineq_rhs.append(lp.ub[j])
        if math.isfinite(lp.lb[j]):
            ineq_rows.append(-e); ineq_rhs.append(-lp.lb[j])
    E = np.array(eq_rows).reshape(-1, n)
    e = np.array(eq_rhs)
    G = np.array(ineq_rows).reshape(-1, n)
    g = np.array(ineq_rhs)
    best, arg = None, None
    sgn = -1.0 if lp.maximize else 1.0
    for k in range(0, n + 1):
        for S in itertools.combinations(range(G.shape[0]), k):
            M = np.vstack([E, G[list(S)]])
            if M.shape[0] < n or np.linalg.matrix_rank(M) < n:
                continue
            rhs = np.concatenate([e, g[list(S)]])
            x = np.linalg.lstsq(M, rhs, rcond=None)[0]
            if np.max(np.abs(M @ x - rhs)) > tol * (1 + np.max(np.abs(rhs), initial=0)):
                continue
            if G.shape[0] and np.max(G @ x - g) > tol * 10:
                continue
            val = sgn * float(lp.c @ x)
            if best is None or val < best - 1e-12:
                best, arg = val, x
    if best is None:
        return "infeasible", math.nan, None
    return "optimal", sgn * best, arg


def to_lp_format(lp: LinearProgram, name: str = "problem") -> str:
    """CPLEX-LP text of ``lp`` for cross-checks with external solvers."""
    A = lp.matrix().tocsr()

    def term_list(idx, vals):
        parts = []
        for j, v in zip(idx, vals):
            parts.append(f"{'+' if v >= 0 else '-'} {abs(v):.17g} x{j}")
        return " ".join(parts) if parts else "0 x0"

    out = [f"\\ {name}", "Maximize" if lp.maximize else "Minimize"]
    nz = np.flatnonzero(lp.c)
    out.append(" obj: " + term_list(nz, lp.c[nz]))
    out.append("Subject To")
    ops = {"<": "<=", "=": "=", ">": ">="}
    for i in range(A.shape[0]):
        s, e = A.indptr[i], A.indptr[i + 1]
        out.append(f" r{i}: {term_list(A.indices[s:e], A.data[s:e])} {ops[lp.senses[i]]} {lp.b[i]:.17g}")
    out.append("Bounds")
    for j in range(lp.c.shape[0]):
        lo, hi = lp.lb[j], lp.ub[j]
        if lo == -np.inf and hi == np.inf:
            out.append(f" x{j} free")
        else:
            los = "-inf" if lo == -np.inf else f"{lo:.17g}"
            his = "+inf" if hi == np.inf else f"{hi:.17g}"
            out.append(f" {los} <= x{j} <= {his}")
    out.append("End")
    return "\n".join(out) + "\n"
