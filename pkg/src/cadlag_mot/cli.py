"""Command-line front end.

Every subcommand reads a JSON config, writes its outputs to ``--out`` and
embeds the resolved config and seed in each file.  Exit codes: 0 success,
1 configuration error, 2 infeasible problem, 3 solver failure, 4 hedge
violation.
"""

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional

import numpy as np

from .discretization import GridSpec, LatticeTruncation
from .hedging import (
    DynamicStrategy,
    SemiStaticPortfolio,
    lattice_hedge_slacks,
    lift_portfolio,
    verify_superreplication,
)
from .measures import (
    DiscreteMeasure,
    convex_order_check,
    l1_marginal_deviation,
    measure_from_json,
    project_measure,
    prokhorov_distance,
)
from .mot import (
    MOTError,
    MOTProblem,
    lattice_from_truncation,
    solve_dual_superhedge,
    solve_multi_marginal,
    solve_primal,
    solve_relaxed,
)
from .paths import modified_distance, path_from_json, sample_paths, skorokhod_distance, sup_distance
from .payoffs import payoff_from_json

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_SOLVER, EXIT_VIOLATION = 0, 1, 2, 3, 4


class ConfigError(ValueError):
    pass


# ------------------------------------------------------------------ config

def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path} at line {exc.lineno}, column {exc.colno}: {exc.msg}")


def _measure(doc, base: str) -> DiscreteMeasure:
    if isinstance(doc, dict) and "file" in doc:
        p = doc["file"] if os.path.isabs(doc["file"]) else os.path.join(base, doc["file"])
        doc = load_config(p)
    try:
        return measure_from_json(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad measure: {exc}")


def _truncation(doc: dict) -> LatticeTruncation:
    try:
        return LatticeTruncation.from_json(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad lattice config: {exc}")


def _payoff(cfg: dict, T: float):
    try:
        return payoff_from_json(cfg["payoff"], T)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad payoff config: {exc}")


def _marginals(cfg: dict, base: str, n_dates: int):
    if "marginals" in cfg:
        out = []
        for item in cfg["marginals"]:
            out.append((int(item.get("date", n_dates - 1)), _measure(item, base)))
        return out
    if "marginal" in cfg:
        return [(n_dates - 1, _measure(cfg["marginal"], base))]
    raise ConfigError("config needs 'marginal' or 'marginals'")


class Run:
    """Shared state of one invocation: resolved config, seed, output directory."""

    def __init__(self, command: str, cfg: dict, seed: int, out: str, base: str, exact_prokhorov: bool):
        self.command = command
        self.cfg = cfg
        self.seed = seed
        self.out = out
        self.base = base
        self.exact_prokhorov = exact_prokhorov
        os.makedirs(out, exist_ok=True)

    def header(self) -> dict:
        return {"command": self.command, "config": self.cfg, "seed": self.seed}

    def write_json(self, name: str, payload: dict) -> str:
        path = os.path.join(self.out, name)
        doc = dict(self.header())
        doc.update(payload)
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True, default=_jsonable)
        return path

    def write_csv(self, name: str, columns: List[str], rows: List[list]) -> str:
        path = os.path.join(self.out, name)
        with open(path, "w", newline="") as fh:
            fh.write("# " + json.dumps(self.header(), sort_keys=True, default=_jsonable) + "\n")
            w = csv.writer(fh)
            w.writerow(columns)
            w.writerows(rows)
        return path

    def write_text(self, name: str, text: str) -> str:
        path = os.path.join(self.out, name)
        with open(path, "w") as fh:
            fh.write("# " + json.dumps(self.header(), sort_keys=True, default=_jsonable) + "\n")
            fh.write(text)
        return path


def _jsonable(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, tuple):
        return list(x)
    return str(x)


def _build(cfg: dict, base: str):
    if "lattice" not in cfg:
        raise ConfigError("config needs a 'lattice' section")
    tr = _truncation(cfg["lattice"])
    try:
        lat = lattice_from_truncation(tr)
    except ValueError as exc:
        raise ConfigError(str(exc))
    G = _payoff(cfg, tr.spec.T)
    margs = _marginals(cfg, base, lat.n_dates)
    return tr, lat, G, margs


def _problem(cfg, lat, G, margs):
    mode = cfg.get("mode", "exact")
    try:
        return MOTProblem(lat, lat.evaluate(G), margs, mode=mode, c=float(cfg.get("c", 1.0)),
                          relax_n=int(cfg.get("relax_n", 1)), gamma_bound=cfg.get("gamma_bound"))
    except ValueError as exc:
        raise ConfigError(str(exc))


# ---------------------------------------------------------------- commands

def cmd_price(run: Run) -> int:
    cfg = run.cfg
    tr, lat, G, margs = _build(cfg, run.base)
    problem = _problem(cfg, lat, G, margs)
    out = {"lattice_paths": lat.n_paths, "decision_nodes": lat.n_decisions}
    lines = [f"lattice paths: {lat.n_paths}", f"decision nodes: {lat.n_decisions}"]
    if problem.mode == "exact":
        solver = solve_multi_marginal if len(margs) > 1 else solve_primal
        primal = solver(problem)
        dual = solve_dual_superhedge(problem)
        out["primal"] = primal.to_json()
        out["dual"] = dual.to_json()
        out["duality_gap"] = abs(primal.value - dual.value)
        static = None
        if G.terminal_only and len(margs) == 1:
            m = margs[0][1]
            static = float(sum(w * G.evaluator(_const_terminal(a, tr.spec)) for a, w in zip(m.atoms, m.weights)))
            out["static_price"] = static
        lines += [
            f"value (primal): {primal.value:.12g}",
            f"value (hedge): {dual.value:.12g}",
            f"primal-dual difference: {abs(primal.value - dual.value):.3g}",
            f"certified LP gap: {primal.gap:.3g}",
            f"martingale defect: {primal.defect:.3g}",
            f"marginal deviation: {primal.marginal_deviation:.3g}",
            f"gamma box slack: {dual.gamma_slack}",
            f"runtime ms: {primal.runtime_ms + dual.runtime_ms:.1f}",
        ]
        if static is not None:
            lines.append(f"static price: {static:.12g}")
    else:
        rel = solve_relaxed(problem)
        hedge = solve_dual_superhedge(problem)
        out["relaxed"] = rel.to_json()
        out["hedge"] = hedge.to_json()
        lines += [
            f"relaxed value: {rel.value:.12g} (infeasible={rel.infeasible})",
            f"capped hedge value: {hedge.value:.12g}",
            f"defect (l1): {rel.defect:.3g}",
            f"marginal deviation: {rel.marginal_deviation:.3g}",
        ]
    run.write_json("solution.json", out)
    text = "\n".join(lines) + "\n"
    run.write_text("summary.txt", text)
    sys.stdout.write(text)
    return EXIT_OK


def _const_terminal(atom, spec: GridSpec):
    from .paths import StepPath

    atom = np.asarray(atom, dtype=float)
    if np.allclose(atom, 1.0):
        return StepPath.constant(spec.d, spec.T)
    return StepPath.from_jumps(spec.T, [(spec.T / 2, atom)], d=spec.d)


def _converge_point(cfg: dict, base: str, n: int) -> list:
    tr = _truncation(dict(cfg["lattice"], n=n))
    lat = lattice_from_truncation(tr)
    G = _payoff(cfg, tr.spec.T)
    margs = [(i, project_measure(m, n)) for i, m in _marginals(cfg, base, lat.n_dates)]
    problem = _problem(dict(cfg, gamma_bound=cfg.get("gamma_bound", n)), lat, G, margs)
    t0 = time.perf_counter()
    sol = solve_dual_superhedge(problem)
    d = tr.spec.d
    lift_term = math.sqrt(d) * n * 2.0 ** (-n + 1)
    mod_term = 3 * G.modulus(3 * math.sqrt(d) * 2.0 ** -n)
    return [n, lat.n_paths, sol.value, sol.gap, lift_term, mod_term, sol.value + lift_term + mod_term,
            round((time.perf_counter() - t0) * 1e3, 3)]


CONVERGE_COLUMNS = ["n", "lattice_paths", "V_n", "gap", "lift_term", "modulus_term", "upper_bound", "runtime_ms"]


def cmd_converge(run: Run) -> int:
    cfg = run.cfg
    if "lattice" not in cfg:
        raise ConfigError("config needs a 'lattice' section")
    lo, hi = cfg.get("n_range", [cfg["lattice"].get("n", 2)] * 2)
    ns = list(range(int(lo), int(hi) + 1))
    if not ns:
        raise ConfigError("empty n_range")
    workers = max(1, int(cfg.get("workers", 1)))
    # points run concurrently; map keeps the rows in n order
    with ThreadPoolExecutor(max_workers=workers) as pool:
        rows = list(pool.map(lambda n: _converge_point(cfg, run.base, n), ns))
    run.write_csv("converge.csv", CONVERGE_COLUMNS, rows)
    _print_table(CONVERGE_COLUMNS, rows)
    return EXIT_OK


def perturbation_sequence(mu: DiscreteMeasure, sigma: DiscreteMeasure, m0: float, steps: int) -> List[DiscreteMeasure]:
    """nu_k = (1 - m_k) mu + m_k sigma with m_k = m0 2^-k; means are preserved when sigma has mu's mean."""
    out = []
    for k in range(steps):
        m = m0 * 2.0 ** -k
        atoms = np.vstack([mu.atoms, sigma.atoms])
        w = np.concatenate([(1 - m) * mu.weights, m * sigma.weights])
        out.append(DiscreteMeasure.from_pairs(atoms, w))
    return out


def cmd_continuity(run: Run) -> int:
    cfg = run.cfg
    tr, lat, G, margs = _build(cfg, run.base)
    mu = margs[-1][1]
    if "sequence" in cfg:
        seq = [_measure(m, run.base) for m in cfg["sequence"]]
    elif "perturbation" in cfg:
        pt = cfg["perturbation"]
        seq = perturbation_sequence(mu, _measure(pt["towards"], run.base), float(pt.get("mass", 0.1)),
                                    int(pt.get("steps", 6)))
    else:
        raise ConfigError("continuity needs 'sequence' or 'perturbation'")
    vals = lat.evaluate(G)
    base_v = solve_primal(MOTProblem.terminal(lat, vals, mu)).value
    rows = []
    for k, nu in enumerate(seq):
        v = solve_primal(MOTProblem.terminal(lat, vals, nu)).value
        dist = prokhorov_distance(nu, mu, exact=True if run.exact_prokhorov else None)
        rows.append([k, dist, v, abs(v - base_v)])
    verdict = bool(rows) and rows[-1][3] <= rows[0][3]
    cols = ["k", "prokhorov", "value", "value_gap"]
    run.write_csv("continuity.csv", cols, rows)
    run.write_json("continuity.json", {"base_value": base_v, "rows": rows, "continuity_verdict": verdict})
    _print_table(cols, rows)
    print(f"base value {base_v:.12g}; final gap below first gap: {verdict}")
    return EXIT_OK


def cmd_hedge_verify(run: Run) -> int:
    cfg = run.cfg
    tr, lat, G, margs = _build(cfg, run.base)
    problem = _problem(cfg, lat, G, margs)
    if cfg.get("portfolio", "dual") == "zero":
        port = SemiStaticPortfolio([], DynamicStrategy.zero(tr.spec.d, tr.spec.T), 0.0)
        cost, lat_min = 0.0, None
    else:
        sol = solve_dual_superhedge(problem)
        offset = float(cfg.get("static_offset", 0.0))
        if offset:
            # negative control: shift every static entry
            for tab in sol.static.values():
                for a in tab:
                    tab[a] += offset
            sol.value += offset * len(sol.static)
        port = lift_portfolio(sol, lat)
        cost = sol.value
        lat_min = float(lattice_hedge_slacks(sol, lat, problem.payoff).min())
    spec = tr.spec
    shift = cfg.get("shift", "auto")
    if shift == "auto":
        n, d = spec.n, spec.d
        shift = math.sqrt(d) * n * 2.0 ** (-n + 1) + 3 * G.modulus(3 * math.sqrt(d) * 2.0 ** -n)
    shift = float(shift)
    sampler = cfg.get("paths")
    if sampler is None:
        raise ConfigError("hedge-verify needs a 'paths' sampler section")
    sampler = dict(sampler)
    count = int(sampler.pop("count", 1000))
    sampler.setdefault("d", spec.d)
    sampler.setdefault("T", spec.T)
    try:
        paths = sample_paths(sampler, count, run.seed)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad path sampler: {exc}")
    rep = verify_superreplication(port, G, paths, shift)
    payload = {"hedge_cost": cost, "shift": shift, "report": rep.to_json(), "lattice_min_slack": lat_min}
    run.write_json("hedge_report.json", payload)
    run.write_csv("hedge_slacks.csv", ["path", "slack", "running_min"],
                  [[i, s, f] for i, (s, f) in enumerate(zip(rep.slacks, rep.running_min))])
    print(f"hedge cost {cost:.12g}; shift {shift:.6g}; paths {count}; violations {rep.violations}; "
          f"min slack {rep.min_slack:.6g}")
    if rep.violations:
        print("violating paths: " + " ".join(str(i) for i in rep.violating_paths[:50]))
        return EXIT_VIOLATION
    return EXIT_OK


def cmd_measure_tools(run: Run) -> int:
    cfg = run.cfg
    if "a" not in cfg or "b" not in cfg:
        raise ConfigError("measure-tools needs measures 'a' and 'b'")
    a, b = _measure(cfg["a"], run.base), _measure(cfg["b"], run.base)
    if a.d != b.d:
        raise ConfigError("measures live in different dimensions")
    dist = prokhorov_distance(a, b, exact=True if run.exact_prokhorov else None)
    l1 = l1_marginal_deviation(a, b)
    co = convex_order_check(a, b)
    out = {"prokhorov": dist, "l1_deviation": l1, "convex_order": co.ok}
    lines = [f"prokhorov: {dist:.12g}", f"l1 deviation: {l1:.12g}", f"a below b in convex order: {co.ok}"]
    if co.ok:
        out["coupling"] = {"rows": co.coupling.row_atoms, "cols": co.coupling.col_atoms, "kernel": co.coupling.kernel}
        lines.append("martingale kernel (rows: atoms of a, columns: atoms of b):")
        lines.append(np.array2string(co.coupling.kernel, precision=6))
    else:
        w = co.witness
        out["witness"] = {"slopes": w.slopes, "intercepts": w.intercepts, "gap": w.gap}
        lines.append(f"convex witness phi(y) = max_i (c_i + s_i . y), gap {w.gap:.6g}")
        for s, c in zip(w.slopes, w.intercepts):
            lines.append(f"  s = {np.array2string(s, precision=6)}, c = {c:.6g}")
    run.write_json("measures.json", out)
    print("\n".join(lines))
    return EXIT_OK


def cmd_distance(run: Run) -> int:
    cfg = run.cfg
    try:
        a, b = path_from_json(cfg["a"]), path_from_json(cfg["b"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad path: {exc}")
    kind = cfg.get("kind", "max")
    out = {
        "skorokhod": skorokhod_distance(a, b, kind),
        "modified": modified_distance(a, b, kind),
        "uniform": sup_distance(a, b),
        "kind": kind,
    }
    run.write_json("distance.json", out)
    for k in ("skorokhod", "modified", "uniform"):
        print(f"{k}: {out[k]:.12g}")
    return EXIT_OK


def _print_table(cols, rows):
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(cols)
    w.writerows(rows)
    sys.stdout.write(buf.getvalue())


COMMANDS = {
    "price": cmd_price,
    "converge": cmd_converge,
    "continuity": cmd_continuity,
    "hedge-verify": cmd_hedge_verify,
    "measure-tools": cmd_measure_tools,
    "distance": cmd_distance,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cadlag-mot", description="Model-free super-hedging bounds on path lattices.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--exact-prokhorov", action="store_true", help="force the exact Prokhorov computation")
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a JSON object")
        seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
        cfg = dict(cfg, seed=seed)
        run = Run(args.command, cfg, seed, args.out, os.path.dirname(os.path.abspath(args.config)),
                  args.exact_prokhorov)
        return COMMANDS[args.command](run)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MOTError as exc:
        print(str(exc), file=sys.stderr)
        if exc.code in ("TRUNCATION_INFEASIBLE", "CONVEX_ORDER_VIOLATION"):
            return EXIT_INFEASIBLE
        if exc.code == "MARGINAL_OFF_GRID":
            return EXIT_CONFIG
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
