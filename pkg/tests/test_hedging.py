import hashlib
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cadlag_mot.discretization import GridSpec, LatticeTruncation, ceil_project, grid_ints
from cadlag_mot.hedging import (
    DynamicStrategy,
    SemiStaticPortfolio,
    burkholder_qv_hedge,
    doob_power_hedge,
    jump_leg_value,
    lattice_hedge_slacks,
    lift_dynamic,
    lift_portfolio,
    pathwise_integral,
    pathwise_integral_by_parts,
    payoff_reductions,
    projected_integral,
    running_integral,
    verify_superreplication,
)
from cadlag_mot.measures import DiscreteMeasure, project_measure
from cadlag_mot.mot import MOTProblem, build_prefix_tree, lattice_from_truncation, solve_dual_superhedge, \
    solve_multi_marginal, solve_primal
from cadlag_mot.paths import StepPath, left_limit, sample_paths
from cadlag_mot.payoffs import make_lookback
from conftest import jump_path
from strategies import step_paths


def hashed_lookup(n, d, seed):
    """Deterministic pseudo-random gamma-hat with Euclidean norm at most n."""

    def look(prefix, slot):
        h = hashlib.blake2b(repr((seed, prefix, slot)).encode(), digest_size=8).digest()
        v = np.random.default_rng(int.from_bytes(h, "little")).uniform(-1, 1, d) * n
        return v / max(1.0, np.linalg.norm(v) / n)

    return look


# ------------------------------------------------------------ integrals

def test_integral_examples():
    S = jump_path(1.0, [(0.3, 1.5), (0.7, 1.25)])
    assert pathwise_integral(DynamicStrategy.zero(1, 1.0), S) == 0.0
    assert pathwise_integral(DynamicStrategy.constant([0.7], 1.0), S) == pytest.approx(0.7 * 0.25)
    g = DynamicStrategy(1.0, [0.0, 0.5, 1.0], [[1.0], [2.0]])
    assert pathwise_integral(g, S) == pytest.approx(0.0)


@given(step_paths(max_jumps=5), st.lists(st.floats(-3, 3), min_size=3, max_size=3))
def test_integral_sum_equals_by_parts(S, vals):
    g = DynamicStrategy(1.0, [0.0, 0.25, 0.6, 1.0], np.array(vals).reshape(3, 1))
    assert pathwise_integral(g, S) == pytest.approx(pathwise_integral_by_parts(g, S), abs=1e-10)
    run = running_integral(g, S)
    assert run[-1] == pytest.approx(pathwise_integral(g, S), abs=1e-12)


def test_strategy_is_left_continuous():
    g = DynamicStrategy(1.0, [0.0, 0.5, 1.0], [[1.0], [2.0]])
    assert g(0.5)[0] == 1.0 and g(0.5000001)[0] == 2.0 and g(0.0)[0] == 0.0


# ------------------------------------------------------------------ lift

@pytest.fixture(scope="module")
def one_step_solution():
    spec = GridSpec(1, 1, 1.0)
    lat = build_prefix_tree([jump_path(1.0, [(0.5, 0.5)]), jump_path(1.0, [(0.5, 1.5)])], spec)
    G = lat.evaluate(lambda p: abs(p.terminal[0] - 1.0))
    sol = solve_primal(MOTProblem.terminal(lat, G, DiscreteMeasure([[0.5], [1.5]], [0.5, 0.5])))
    return lat, sol


def test_static_lift_composes_with_ceiling(one_step_solution):
    lat, sol = one_step_solution
    port = lift_portfolio(sol, lat)
    _, g = port.statics[0]
    assert g(np.array([0.3])) == pytest.approx(sol.static[0][(1,)])
    assert g(np.array([1.2])) == pytest.approx(sol.static[0][(3,)])


@given(st.integers(1, 5), st.integers(0, 10 ** 6))
def test_static_cost_equality(n, seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, 6))
    mu = DiscreteMeasure.from_pairs(rng.uniform(0.1, 3.0, (k, 1)), rng.dirichlet(np.ones(k)))
    mu_hat = project_measure(mu, n)
    table = {grid_ints(a, n): float(rng.normal()) for a in mu_hat.atoms}
    g = lambda x: table[grid_ints(ceil_project(x, n), n)]
    lhs = sum(w * g(a) for a, w in zip(mu.atoms, mu.weights))
    rhs = sum(w * table[grid_ints(a, n)] for a, w in zip(mu_hat.atoms, mu_hat.weights))
    assert lhs == pytest.approx(rhs, abs=1e-12)


@pytest.mark.parametrize("d", [1, 2])
def test_lift_integral_error(d):
    for n in (2, 4):
        spec = GridSpec(n, d, 1.0)
        look = hashed_lookup(n, d, n)
        bound = math.sqrt(d) * n * 2.0 ** (-n + 1)
        for p in sample_paths({"kind": "compound-jump", "d": d, "max_jumps": 6, "sigma": 0.3}, 80, 21 + n):
            a, _ = projected_integral(p, spec, look)
            b = pathwise_integral(lift_dynamic(p, spec, look), p)
            assert abs(a - b) <= bound + 1e-12


def test_lift_is_predictable():
    # the position on (tau_k, tau_k+1] depends only on the path up to tau_k
    spec = GridSpec(3, 1, 1.0)
    look = hashed_lookup(3, 1, 0)
    a = jump_path(1.0, [(0.2, 1.3), (0.7, 0.6)])
    b = jump_path(1.0, [(0.2, 1.3), (0.7, 1.9)])
    ga, gb = lift_dynamic(a, spec, look), lift_dynamic(b, spec, look)
    for t in np.linspace(0.01, 0.7, 30):
        assert np.array_equal(ga(t), gb(t))


# --------------------------------------------------------- verification

def test_zero_portfolio_zero_payoff():
    port = SemiStaticPortfolio([], DynamicStrategy.zero(1, 1.0), 0.0)
    paths = sample_paths({"kind": "compound-jump"}, 20, 0)
    rep = verify_superreplication(port, lambda p: 0.0, paths)
    assert np.allclose(rep.slacks, 0.0) and rep.violations == 0


@pytest.fixture(scope="module")
def small_lookback_hedge():
    spec = GridSpec(2, 1, 0.6)
    lat = lattice_from_truncation(LatticeTruncation(spec, M_max=2, V_max=1.5, V_min=0.5, durations_per_level=2))
    G = make_lookback("put_fixed", K=1.2)
    mu = DiscreteMeasure([[0.5], [1.0], [1.5]], [0.25, 0.5, 0.25])
    prob = MOTProblem.terminal(lat, lat.evaluate(G), mu)
    return lat, G, prob, solve_dual_superhedge(prob)


def test_lattice_slacks_nonnegative(small_lookback_hedge):
    lat, G, prob, sol = small_lookback_hedge
    assert lattice_hedge_slacks(sol, lat, prob.payoff).min() >= -1e-10


def test_lift_on_lattice_paths_at_shift(small_lookback_hedge):
    lat, G, prob, sol = small_lookback_hedge
    n, d = lat.spec.n, lat.spec.d
    shift = math.sqrt(d) * n * 2.0 ** (-n + 1) + 3 * G.modulus(3 * math.sqrt(d) * 2.0 ** -n)
    rep = verify_superreplication(lift_portfolio(sol, lat), G, lat.paths, shift)
    assert rep.violations == 0


def test_corrupted_static_is_caught(small_lookback_hedge):
    lat, G, prob, sol = small_lookback_hedge
    bad = solve_dual_superhedge(prob)
    for tab in bad.static.values():
        for a in tab:
            tab[a] -= 1.0
    rep = verify_superreplication(lift_portfolio(bad, lat), G, lat.paths, 0.0)
    assert rep.violations > 0 and len(rep.violating_paths) == rep.violations


# ---------------------------------------------------------- explicit hedges

def test_doob_examples():
    h = doob_power_hedge(2.0, 1, [StepPath.constant(1, 1.0)])
    assert h.violations == 0 and h.min_slack == pytest.approx(1.0)
    h = doob_power_hedge(2.0, 1, [jump_path(1.0, [(0.3, 1.5)])])
    assert h.violations == 0 and h.min_slack > 0


@pytest.mark.parametrize("d", [1, 2])
def test_doob_random(d):
    paths = sample_paths({"kind": "compound-jump", "d": d, "max_jumps": 8, "sigma": 0.3}, 300, 5)
    for p in (1.5, 2.0, 3.0):
        assert doob_power_hedge(p, d, paths).violations == 0


def test_burkholder_examples():
    B = burkholder_qv_hedge(0.1, StepPath.constant(1, 1.0))
    assert B.X == 0.0 and B.slacks_path.min() >= 0
    B = burkholder_qv_hedge(0.1, jump_path(1.0, [(0.3, 1.5)]))
    assert B.X == pytest.approx(0.5)
    assert B.gammas[0, 0] == pytest.approx(-1.0)
    # left side -0.5 + 4.5 = 4 against X = 0.5
    assert B.slacks_path[-1] == pytest.approx(3.5)


@pytest.mark.parametrize("d", [1, 2])
def test_burkholder_random(d):
    for eps in (0.05, 0.5):
        for p in sample_paths({"kind": "compound-jump", "d": d, "max_jumps": 8, "sigma": 0.3}, 100, 6):
            B = burkholder_qv_hedge(eps, p, dates=(0.5,))
            assert B.slacks_skeleton.min() >= -1e-10 and B.slacks_path.min() >= -1e-10
            assert B.gamma_bound <= math.sqrt(d) + 1e-12


# ------------------------------------------------------------ jump legs

def test_jump_leg_examples():
    assert jump_leg_value([3.0], jump_path(1.0, [(0.3, 1.2)]), [0.5]) == 0.0
    assert jump_leg_value([3.0], jump_path(1.0, [(0.5, 1.2)]), [0.5]) == pytest.approx(0.6)


def test_jump_leg_martingale_average():
    tr = LatticeTruncation(GridSpec(1, 1, 1.5), M_max=2, V_max=1.5, V_min=0.5, durations_per_level=1,
                           dates=(0.75, 1.5))
    lat = lattice_from_truncation(tr)
    G = lat.evaluate(make_lookback("max_minus_terminal"))
    m1 = DiscreteMeasure([[0.5], [1.0], [1.5]], [0.25, 0.5, 0.25])
    m2 = DiscreteMeasure([[0.5], [1.0], [1.5]], [0.4, 0.2, 0.4])
    sol = solve_multi_marginal(MOTProblem(lat, G, [(0, m1), (1, m2)]))

    def beta(path, i):
        # any function of the path strictly before the date
        before = left_limit(path, 0.75)
        return np.array([np.sin(7 * before[0]) + len([t for t in path.times if t < 0.75])])

    avg = sum(q * jump_leg_value(beta, p, [0.75, 1.5]) for q, p in zip(sol.Q, lat.paths))
    assert abs(avg) <= 1e-9


# ------------------------------------------------------------ reductions

def test_reduction_identities():
    G = make_lookback("call_floating")
    p = jump_path(1.0, [(0.4, 0.7), (0.8, 2.5)])
    assert payoff_reductions(G, 0.0, 1.0).shifted(p) == G(p)
    R = payoff_reductions(G, 1.0, 100.0)
    assert R.capped(p) == G(p)
    R = payoff_reductions(G, 1.0, 0.5)
    assert R.capped(p) == pytest.approx(min(G(p), 1.5))
    assert R.shifted(p) == pytest.approx(G(p) + 1 + 2.5)


def test_shift_adds_cash_and_forwards():
    spec = GridSpec(2, 1, 0.6)
    lat = lattice_from_truncation(LatticeTruncation(spec, M_max=2, V_max=1.5, V_min=0.5, durations_per_level=2))
    mu = DiscreteMeasure([[0.5], [1.0], [1.5]], [0.25, 0.5, 0.25])
    G = make_lookback("call_floating")
    R = payoff_reductions(G, 0.7, 1.0)
    v = solve_primal(MOTProblem.terminal(lat, lat.evaluate(G), mu)).value
    vs = solve_primal(MOTProblem.terminal(lat, lat.evaluate(R.shifted), mu)).value
    assert vs - v == pytest.approx(2 * 0.7, abs=1e-8)
