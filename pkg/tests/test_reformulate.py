import numpy as np
import pytest
from _factories import growing_interval_instance, make_instance

from ddu_ro.milp import INF, Lin, Model, dot
from ddu_ro.model import Scenario
from ddu_ro.reformulate import (add_lp_kkt, build_OU_mixed, build_OU_point,
                                build_OU_tuple, build_parametric_lp,
                                complementarity_products,
                                kkt_of_recourse_lp, slice_feasible,
                                solve_recourse)

M = 1e4


def empty_slice_instance():
    """Rows u_c <= x and u_c >= 1 + x: U(x) empty for every x >= 0."""
    return make_instance(
        m_x=1, x_bounds=[[0, 3]], c1=[1.0],
        n_u=1, F_c=[[1.0], [-1.0]], G=[[1.0], [-1.0]], h=[0.0, -1.0],
        n_y=1, B2c=[[1.0]], E_c=[[-1.0]], d=[0.0], c2c=[1.0])


def mixed_slice_instance():
    """m_u = 1 with F_d(x) dependence; some (x, u_d) slices are empty."""
    return make_instance(
        m_x=1, x_bounds=[[0, 2]], c1=[1.0],
        n_u=1, m_u=1,
        F_c=[[1.0], [-1.0]],
        F_d0=[[1.0], [2.0]],
        F_d_lin=[[[0.5], [-1.0]]],
        G=[[1.0], [0.5]], h=[2.0, 1.0], u_d_bounds=[[0, 2]],
        n_y=1, B2c=[[1.0]], E_c=[[-1.0]], E_d=[[0.0]], d=[0.0], c2c=[1.0])


# -- parametric LP ----------------------------------------------------------

def test_parametric_lp_nonempty_slice_zero_slack():
    inst = growing_interval_instance()
    m, names = build_parametric_lp(inst, [1.0], [], np.ones(1), M)
    out = m.solve()
    assert out.status == "optimal"
    assert sum(out.primal[n] for n in names["u_tilde"]) <= 1e-8


def test_parametric_lp_empty_slice_positive_slack():
    inst = empty_slice_instance()
    m, names = build_parametric_lp(inst, [0.0], [], np.zeros(1), M)
    out = m.solve()
    assert sum(out.primal[n] for n in names["u_tilde"]) > 1e-6


def test_parametric_lp_zero_beta_zero_objective():
    inst = growing_interval_instance()
    m, _ = build_parametric_lp(inst, [2.0], [], np.zeros(1), M)
    out = m.solve()
    assert out.objective == pytest.approx(0.0, abs=1e-9)


@pytest.mark.parametrize("seed", range(4))
def test_lemma1_dichotomy_random_probes(seed):
    inst = mixed_slice_instance()
    rng = np.random.default_rng(seed)
    hits = {True: 0, False: 0}
    for _ in range(50):
        x = np.array([float(rng.integers(0, 3))])
        u_d = np.array([float(rng.integers(0, 3))])
        m, names = build_parametric_lp(inst, x, u_d, np.zeros(1), M)
        out = m.solve()
        slack = sum(out.primal[n] for n in names["u_tilde"])
        direct = _direct_slice_feasible(inst, x, u_d)
        assert (slack <= 1e-7) == direct
        assert slice_feasible(inst, x, u_d) == direct
        hits[direct] += 1
    assert hits[True] and hits[False]  # both branches exercised


def _direct_slice_feasible(inst, x, u_d):
    m = Model()
    uc = m.add_vars("uc", inst.ddu.n_u)
    rhs = inst.ddu.h + inst.ddu.G @ x - inst.ddu.F_d(x) @ u_d
    for i in range(inst.ddu.mu_u):
        m.add_constr(f"r[{i}]", dot(inst.ddu.F_c[i], uc), "<=", rhs[i])
    return m.solve().status == "optimal"


# -- generic KKT block -------------------------------------------------------

def test_kkt_maxmin_1d():
    # max over u in [0,3] of min{y : y >= u, y >= 0} -> 3
    inst = make_instance(
        m_x=1, x_bounds=[[0, 0]], c1=[0.0],
        n_u=1, F_c=[[1.0]], h=[3.0],
        n_y=1, B2c=[[1.0]], E_c=[[-1.0]], d=[0.0], c2c=[1.0])
    m = Model("maxmin", sense="max")
    u = m.add_var("u", ub=3.0)
    blk = kkt_of_recourse_lp(m, inst, "rec", [0.0], [u], None, M)
    m.set_objective(blk["value"])
    out = m.solve()
    assert out.objective == pytest.approx(3.0, abs=1e-6)
    assert complementarity_products(out, m) <= 1e-4


def test_kkt_zero_cost_recourse():
    inst = make_instance(
        m_x=1, x_bounds=[[0, 0]], c1=[0.0],
        n_u=1, F_c=[[1.0]], h=[3.0],
        n_y=1, B2c=[[1.0]], E_c=[[-1.0]], d=[0.0], c2c=[0.0])
    m = Model("maxmin", sense="max")
    u = m.add_var("u", ub=3.0)
    blk = kkt_of_recourse_lp(m, inst, "rec", [0.0], [u], None, M)
    m.set_objective(blk["value"])
    assert m.solve().objective == pytest.approx(0.0, abs=1e-8)


def test_kkt_penalized_always_feasible():
    # infeasible plain recourse (y >= 1, -y >= 0.5) feasible with slacks;
    # value 0 iff the original system is feasible
    inst = make_instance(
        m_x=1, x_bounds=[[0, 0]], c1=[0.0],
        n_u=1, F_c=[[1.0]], h=[1.0],
        n_y=1, B2c=[[1.0], [-1.0]], E_c=[[-1.0], [0.0]], d=[0.0, 0.5],
        c2c=[1.0])
    m = Model("feas", sense="max")
    u = m.add_var("u", ub=1.0)
    blk = kkt_of_recourse_lp(m, inst, "rec", [0.0], [u], None, M,
                             penalty="vector")
    m.set_objective(blk["value"])
    out = m.solve()
    assert out.status == "optimal"
    assert out.objective > 1e-6  # no u makes the plain system feasible

    feasible = make_instance(
        m_x=1, x_bounds=[[0, 0]], c1=[0.0],
        n_u=1, F_c=[[1.0]], h=[1.0],
        n_y=1, B2c=[[1.0], [-1.0]], E_c=[[-1.0], [0.0]], d=[0.0, -5.0],
        c2c=[1.0])
    m = Model("feas", sense="max")
    u = m.add_var("u", ub=1.0)
    blk = kkt_of_recourse_lp(m, feasible, "rec", [0.0], [u], None, M,
                             penalty="vector")
    m.set_objective(blk["value"])
    assert m.solve().objective == pytest.approx(0.0, abs=1e-7)


def test_add_lp_kkt_matches_direct_lp():
    rng = np.random.default_rng(11)
    for _ in range(10):
        W = rng.uniform(0.2, 1.5, size=(3, 2))
        q = rng.uniform(0.5, 2.0, size=2)
        r = rng.uniform(-0.5, 1.0, size=3)
        direct = Model()
        vs = direct.add_vars("v", 2)
        for i in range(3):
            direct.add_constr(f"r[{i}]", dot(W[i], vs), ">=", r[i])
        direct.set_objective(dot(q, vs))
        ref = direct.solve()
        m = Model()
        blk = add_lp_kkt(m, "k", W, q, [float(v) for v in r], M)
        m.set_objective(blk["value"])
        out = m.solve()
        assert ref.status == out.status == "optimal"
        assert out.objective == pytest.approx(ref.objective, abs=1e-6)
        assert complementarity_products(out, m) <= 1e-4


# -- OU point blocks ---------------------------------------------------------

def scaled_interval_instance():
    """U(x) = {0 <= u_c <= x}; recourse row y >= u with dual pi."""
    return make_instance(
        m_x=1, x_bounds=[[0, 5]], c1=[1.0],
        n_u=1, F_c=[[1.0]], G=[[1.0]], h=[0.0],
        n_y=1, B2c=[[1.0]], E_c=[[-1.0]], d=[0.0], c2c=[1.0])


def test_ou_point_forces_maximizer():
    inst = scaled_interval_instance()
    # pi = 1 gives inner objective coefficient -E'pi = +1: maximizer u_c = x
    m = Model("probe")
    blk = build_OU_point(m, inst, [2.0], [], np.array([1.0]), M, "b0")
    m.set_objective(Lin.var(blk.u_c[0]))
    lo = m.solve()
    m2 = Model("probe", sense="max")
    blk2 = build_OU_point(m2, inst, [2.0], [], np.array([1.0]), M, "b0")
    m2.set_objective(Lin.var(blk2.u_c[0]))
    hi = m2.solve()
    assert lo.objective == pytest.approx(2.0, abs=1e-5)
    assert hi.objective == pytest.approx(2.0, abs=1e-5)


def test_ou_point_negative_coefficient_forces_zero():
    inst = scaled_interval_instance()
    m = Model("probe", sense="max")
    blk = build_OU_point(m, inst, [2.0], [], np.array([-1.0]), M, "b0")
    m.set_objective(Lin.var(blk.u_c[0]))
    out = m.solve()
    assert out.objective == pytest.approx(0.0, abs=1e-6)


def test_ou_point_empty_slice_slack_and_indicator():
    inst = empty_slice_instance()
    m = Model("probe", sense="max")
    blk = build_OU_point(m, inst, [0.0], [], np.array([1.0]), M, "b0")
    m.set_objective(Lin.var(blk.indicator.theta))
    out = m.solve()
    assert out.objective == pytest.approx(1.0)  # theta usable
    assert sum(out.primal[n] for n in blk.u_tilde) > 1e-6


def test_ou_point_nonempty_slice_theta_zero():
    inst = scaled_interval_instance()
    m = Model("probe", sense="max")
    blk = build_OU_point(m, inst, [2.0], [], np.array([1.0]), M, "b0")
    m.set_objective(Lin.var(blk.indicator.theta))
    out = m.solve()
    assert sum(out.primal[n] for n in blk.u_tilde) <= 1e-6
    assert out.primal[blk.indicator.theta] == pytest.approx(0.0, abs=1e-7)


def test_ou_point_attains_parametric_optimum():
    inst = mixed_slice_instance()
    rng = np.random.default_rng(5)
    for _ in range(10):
        x = np.array([float(rng.integers(0, 3))])
        u_d = np.array([float(rng.integers(0, 3))])
        pi = np.array([rng.uniform(0.0, 1.0)])
        plp, _ = build_parametric_lp(inst, x, u_d, pi, M)
        ref = plp.solve().objective
        for sense in ("min", "max"):
            m = Model("probe", sense=sense)
            blk = build_OU_point(m, inst, x, u_d, pi, M, "b0")
            obj = dot(-(inst.recourse.E_c.T @ pi), blk.u_c) \
                - M * dot(np.ones(len(blk.u_tilde)), blk.u_tilde)
            m.set_objective(obj)
            out = m.solve()
            assert out.status == "optimal"
            assert out.objective == pytest.approx(ref, abs=1e-2)
            assert complementarity_products(out, m) <= 1e-4


# -- OU pair-family blocks ---------------------------------------------------

def mip_recourse_instance():
    """U(x)=[0, 1+x]; recourse min 3 y_c + 2 y_d, y_c + y_d >= u, y_d binary."""
    return make_instance(
        m_x=1, x_bounds=[[0, 2]], c1=[1.0],
        n_u=1, F_c=[[1.0]], G=[[1.0]], h=[1.0],
        n_y=1, m_y=1, B2c=[[1.0]], B2d=[[1.0]], E_c=[[-1.0]], d=[0.0],
        c2c=[3.0], c2d=[2.0], y_d_bounds=[[0, 1]])


def _full_pairs(inst, x, u_star):
    """Pair family with duals recorded at the worst-case scenario, where the
    recourse rows bind; duals taken at slack scenarios are legitimately
    weaker and would under-approximate eta^."""
    pairs = []
    for y_d in inst.recourse.enumerate_y_d():
        sol = solve_recourse(inst, x, u_star, fix_y_d=y_d)
        pairs.append((y_d, sol.pi))
    return pairs


def test_ou_tuple_matches_maxmin():
    inst = mip_recourse_instance()
    x = np.array([1.0])
    grid = [Scenario([u], []) for u in np.linspace(0, 2, 81)]
    u_star = max(grid, key=lambda s: solve_recourse(inst, x, s).value)
    pairs = _full_pairs(inst, x, u_star)
    m = Model("probe", sense="max")
    blk = build_OU_tuple(m, inst, x, pairs, M, "b0")
    m.set_objective(Lin.var(blk.eta_hat))
    out = m.solve()
    # brute: max over u grid of exact MIP recourse value
    brute = max(solve_recourse(inst, x, Scenario([u], [])).value
                for u in np.linspace(0, 2, 81))
    assert out.objective == pytest.approx(brute, abs=1e-5)
    assert complementarity_products(out, m) <= 1e-4


def test_ou_tuple_rejects_bad_pairs():
    inst = mip_recourse_instance()
    m = Model("probe")
    with pytest.raises(ValueError):
        build_OU_tuple(m, inst, [1.0], [], M, "b0")
    # same y_d with distinct duals is a legal (tighter) family; an exact
    # duplicate pair is not
    pairs = [([0.0], [3.0]), ([0.0], [3.0])]
    with pytest.raises(ValueError):
        build_OU_tuple(m, inst, [1.0], pairs, M, "b1")


def test_ou_mixed_degenerates_to_tuple():
    inst = mip_recourse_instance()
    pairs = _full_pairs(inst, np.array([1.0]), Scenario([2.0], []))
    m1, m2 = Model("a"), Model("b")
    b1 = build_OU_tuple(m1, inst, [1.0], pairs, M, "b0")
    b2 = build_OU_mixed(m2, inst, [1.0], np.zeros(0), pairs, M, "b0")
    assert b2.kind == "tuple_yd_pi"

    def rows(m):
        return {n: (sorted(e.terms.items()), e.const, s, r)
                for n, (e, s, r) in m._constrs.items()}

    assert rows(m1) == rows(m2)
    assert b1.eta_hat == b2.eta_hat


def mixed_full_instance():
    """Both discrete uncertainty and discrete recourse."""
    return make_instance(
        m_x=1, x_bounds=[[0, 2]], c1=[1.0],
        n_u=1, m_u=1,
        F_c=[[1.0]], F_d0=[[1.0]], F_d_lin=[[[0.5]]], G=[[1.0]], h=[1.0],
        u_d_bounds=[[0, 1]],
        n_y=1, m_y=1, B2c=[[1.0]], B2d=[[1.0]], E_c=[[-1.0]], E_d=[[-0.5]],
        d=[0.0], c2c=[3.0], c2d=[2.0], y_d_bounds=[[0, 1]])


def test_ou_mixed_matches_maxmin_on_slice():
    inst = mixed_full_instance()
    x = np.array([2.0])
    u_d = np.array([1.0])
    grid = [Scenario([u], u_d) for u in np.linspace(0, 1, 41)]
    u_star = max(grid, key=lambda s: solve_recourse(inst, x, s).value)
    pairs = []
    for y_d in inst.recourse.enumerate_y_d():
        sol = solve_recourse(inst, x, u_star, fix_y_d=y_d)
        pairs.append((y_d, sol.pi))
    m = Model("probe", sense="max")
    blk = build_OU_mixed(m, inst, x, u_d, pairs, M, "b0")
    m.set_objective(Lin.var(blk.eta_hat))
    out = m.solve()
    # slice: u_c + F_d(x) u_d <= h + Gx -> u_c <= 1 + 2 - 2 = 1
    brute = max(solve_recourse(inst, x, Scenario([u], u_d)).value
                for u in np.linspace(0, 1, 41))
    assert out.objective == pytest.approx(brute, abs=1e-5)
    assert sum(out.primal[n] for n in blk.u_tilde) <= 1e-6
    assert out.primal[blk.indicator.theta] == pytest.approx(0.0, abs=1e-7)
