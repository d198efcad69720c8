"""Path-dependent payoffs with declared continuity moduli and growth bounds."""

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from .paths import StepPath, modified_distance, path_time_integral, skorokhod_distance, sup_norm

__all__ = [
    "Payoff",
    "ModulusReport",
    "make_lookback",
    "make_asian",
    "make_terminal",
    "h_cash",
    "h_k",
    "zero_payoff",
    "modulus_check",
    "growth_check",
    "payoff_from_json",
    "PAYOFF_NAMES",
]


@dataclass
class Payoff:
    """G on step paths with its metric flavour, modulus m_G and growth bound.

    ``metric`` is ``"skorokhod"`` or ``"modified"``.  ``growth`` is
    ``"terminal"`` (|G| <= C (1 + |S_T|)) or ``"sup"`` (|G| <= C (1 + ||S||)).
    """

    name: str
    evaluator: Callable[[StepPath], float]
    modulus: Callable[[float], float]
    metric: str = "skorokhod"
    growth: str = "terminal"
    C: float = 1.0
    bounds: Optional[Tuple[float, float]] = None
    params: Dict = field(default_factory=dict)
    terminal_only: bool = False

    def __call__(self, path: StepPath) -> float:
        return float(self.evaluator(path))

    def distance(self, a: StepPath, b: StepPath) -> float:
        if self.metric == "modified":
            return modified_distance(a, b)
        return skorokhod_distance(a, b)

    def growth_bound(self, path: StepPath) -> float:
        if self.growth == "terminal":
            return self.C * (1.0 + float(np.linalg.norm(path.terminal)))
        return self.C * (1.0 + sup_norm(path))

    def to_json(self) -> dict:
        return {"name": self.name, "params": dict(self.params)}


def _coord(path: StepPath, i: int) -> np.ndarray:
    return path.values[:, i]


def _average(path: StepPath, i: int) -> float:
    return float(path_time_integral(path)[i]) / path.T


def make_lookback(kind: str, K: float = 1.0, coord: int = 0) -> Payoff:
    """Lookback payoffs on coordinate ``coord``.

    put_fixed (K - min S)+, call_fixed (max S - K)+, call_floating
    (S_T - min S)+, max_minus_terminal max S - S_T.  Fixed-strike moduli are
    delta, floating ones 2 delta.
    """
    if K < 0:
        raise ValueError("strike must be nonnegative")
    prm = {"kind": kind, "K": K, "coord": coord}
    if kind == "put_fixed":
        f = lambda p: max(K - _coord(p, coord).min(), 0.0)
        return Payoff("lookback_put_fixed", f, lambda x: x, growth="terminal", C=K,
                      bounds=(0.0, K), params=prm)
    if kind == "call_fixed":
        f = lambda p: max(_coord(p, coord).max() - K, 0.0)
        return Payoff("lookback_call_fixed", f, lambda x: x, growth="sup", C=1.0, params=prm)
    if kind == "call_floating":
        f = lambda p: max(p.terminal[coord] - _coord(p, coord).min(), 0.0)
        return Payoff("lookback_call_floating", f, lambda x: 2 * x, growth="terminal", C=1.0, params=prm)
    if kind == "max_minus_terminal":
        f = lambda p: _coord(p, coord).max() - p.terminal[coord]
        return Payoff("lookback_max_minus_terminal", f, lambda x: 2 * x, growth="sup", C=1.0, params=prm)
    raise ValueError(f"unknown lookback kind {kind!r}")


def make_asian(kind: str, K: float = 1.0, coord: int = 0, T: float = 1.0) -> Payoff:
    """Asian payoffs on the exact time average (1/T) int_0^T S_t dt.

    Fixed strikes have modulus delta / T, floating strikes
    max(1, 1/T) delta, both for the modified metric.
    """
    if K < 0:
        raise ValueError("strike must be nonnegative")
    prm = {"kind": kind, "K": K, "coord": coord, "T": T}
    fixed = lambda x: x / T
    floating = lambda x: max(1.0, 1.0 / T) * x
    if kind == "call_fixed":
        f = lambda p: max(_average(p, coord) - K, 0.0)
        return Payoff("asian_call_fixed", f, fixed, "modified", "sup", 1.0, params=prm)
    if kind == "put_fixed":
        f = lambda p: max(K - _average(p, coord), 0.0)
        return Payoff("asian_put_fixed", f, fixed, "modified", "terminal", K, (0.0, K), params=prm)
    if kind == "terminal_minus_average":
        f = lambda p: max(p.terminal[coord] - _average(p, coord), 0.0)
        return Payoff("asian_terminal_minus_average", f, floating, "modified", "terminal", 1.0, params=prm)
    if kind == "average_minus_terminal":
        f = lambda p: max(_average(p, coord) - p.terminal[coord], 0.0)
        return Payoff("asian_average_minus_terminal", f, floating, "modified", "sup", 1.0, params=prm)
    raise ValueError(f"unknown asian kind {kind!r}")


def make_terminal(kind: str, K: float = 1.0, coord: int = 0) -> Payoff:
    """Vanilla payoffs of S_T: call, put, straddle |S_T - K|."""
    prm = {"kind": kind, "K": K, "coord": coord}
    table = {
        "call": lambda x: max(x - K, 0.0),
        "put": lambda x: max(K - x, 0.0),
        "straddle": lambda x: abs(x - K),
    }
    if kind not in table:
        raise ValueError(f"unknown terminal kind {kind!r}")
    g = table[kind]
    return Payoff(f"terminal_{kind}", lambda p: g(p.terminal[coord]), lambda x: x, growth="terminal",
                  C=max(K, 1.0), params=prm, terminal_only=True)


def h_cash() -> Payoff:
    return Payoff("h_cash", lambda p: 1.0, lambda x: 0.0, growth="terminal", C=1.0, bounds=(1.0, 1.0),
                  terminal_only=True)


def zero_payoff() -> Payoff:
    return Payoff("zero", lambda p: 0.0, lambda x: 0.0, growth="terminal", C=0.0, bounds=(0.0, 0.0),
                  terminal_only=True)


def h_k(k: int) -> Payoff:
    """The k-th asset delivered at T."""
    return Payoff(f"h_{k}", lambda p: float(p.terminal[k]), lambda x: x, growth="terminal", C=1.0,
                  params={"k": k}, terminal_only=True)


@dataclass
class ModulusReport:
    pairs: int
    violations: int
    worst_excess: float
    worst_pair: Optional[int] = None

    @property
    def ok(self) -> bool:
        return self.violations == 0


def modulus_check(payoff: Payoff, pairs: Sequence[Tuple[StepPath, StepPath]], tol: float = 1e-10) -> ModulusReport:
    """Check |G(a) - G(b)| <= m_G(dist(a, b)) under the payoff's metric flavour."""
    viol, worst, wi = 0, -math.inf, None
    for i, (a, b) in enumerate(pairs):
        if a.d != b.d or abs(a.T - b.T) > 1e-12:
            raise ValueError("pair does not share d and T")
        excess = abs(payoff(a) - payoff(b)) - payoff.modulus(payoff.distance(a, b))
        if excess > worst:
            worst, wi = excess, i
        if excess > tol:
            viol += 1
    return ModulusReport(len(pairs), viol, float(worst), wi)


def growth_check(payoff: Payoff, paths: Sequence[StepPath], tol: float = 1e-10) -> int:
    """Number of paths violating the declared growth bound."""
    return sum(abs(payoff(p)) > payoff.growth_bound(p) + tol for p in paths)


PAYOFF_NAMES = {
    "lookback": make_lookback,
    "asian": make_asian,
    "terminal": make_terminal,
}


def payoff_from_json(doc: dict, T: float = 1.0) -> Payoff:
    """{"name": "lookback" | "asian" | "terminal" | "h_cash" | "h_k" | "zero", "params": {...}}."""
    name = doc.get("name")
    prm = dict(doc.get("params", {}))
    if name == "zero":
        return zero_payoff()
    if name == "h_cash":
        return h_cash()
    if name == "h_k":
        return h_k(int(prm.get("k", 0)))
    if name == "asian":
        prm.setdefault("T", T)
    if name not in PAYOFF_NAMES:
        raise ValueError(f"unknown payoff {name!r}")
    if "kind" not in prm:
        raise ValueError("payoff params need a 'kind'")
    return PAYOFF_NAMES[name](**prm)
