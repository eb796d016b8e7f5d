import numpy as np
import pytest
from _factories import (empty_recourse_instance, growing_interval_instance,
                        make_instance, random_pure_integer_instance,
                        single_point_instance)

from ddu_ro.milp import Model, dot, mat_vec
from ddu_ro.model import (Scenario, instance_from_dict, instance_to_dict,
                          relaxation_bound_wR, scenario_membership, validate)


def test_validate_accepts_well_formed():
    assert validate(single_point_instance()) == []
    assert validate(growing_interval_instance()) == []


def test_validate_row_mismatch():
    inst = single_point_instance()
    inst.ddu.F_c = np.zeros((0, 1))
    assert any("ddu" in v for v in validate(inst))


def test_validate_unbounded_uncertainty():
    inst = growing_interval_instance()
    inst = make_instance(
        m_x=1, x_bounds=[[0, 1]], c1=[1.0],
        m_u=1, F_d0=[[1.0]], h=[1.0], u_d_bounds=[[0, np.inf]])
    assert any(v.startswith("A2") for v in validate(inst))


def test_scenario_membership_basic():
    inst = growing_interval_instance()
    x = np.array([1.0])
    assert scenario_membership(inst, x, Scenario([0.0], []))
    assert scenario_membership(inst, x, Scenario([2.0], []))
    assert not scenario_membership(inst, x, Scenario([2.0 + 2e-6], [],), 1e-6)
    assert not scenario_membership(inst, x, Scenario([-1.0], []))


def test_scenario_membership_pure_constraints():
    inst = make_instance(
        m_x=1, x_bounds=[[0, 1]],
        m_u=2, F_d0=[[0.0, 0.0]], h=[10.0], u_d_bounds=[[0, 1], [0, 1]],
        pure_C=[[1.0, 1.0]], pure_rhs=[1.0], c1=[0.0])
    x = np.zeros(1)
    assert scenario_membership(inst, x, Scenario([], [1, 0]))
    assert not scenario_membership(inst, x, Scenario([], [1, 1]))


def test_wR_single_point():
    out = relaxation_bound_wR(single_point_instance())
    assert out.status == "optimal"
    assert out.value == pytest.approx(1.0)


def test_wR_empty_recourse_infeasible():
    assert relaxation_bound_wR(empty_recourse_instance()).status == "infeasible"


def test_wR_picks_friendly_scenario():
    # relaxation chooses u freely, so it undercuts the robust value 2
    out = relaxation_bound_wR(growing_interval_instance())
    assert out.status == "optimal"
    assert out.value == pytest.approx(0.0)


def _brute_wR(inst):
    """Enumerate (x_d, u_d) pairs and take the cheapest feasible leaf."""
    fs, ddu, rc = inst.first_stage, inst.ddu, inst.recourse
    best = np.inf
    x_ranges = [range(int(lo), int(hi) + 1) for lo, hi in fs.integer_bounds]
    import itertools
    for xv in itertools.product(*x_ranges):
        x = np.array(xv, dtype=float)
        if fs.A.shape[0] and not (fs.A @ x >= fs.b - 1e-9).all():
            continue
        for u_d in ddu.enumerate_u_d():
            if not ((ddu.F_d(x) @ u_d) <= ddu.h + ddu.G @ x + 1e-9).all():
                continue
            m = Model()
            ys = m.add_vars("y", rc.n_y)
            yd = m.add_box_vars("yd", rc.y_d_bounds, integer=True)
            r = rc.rhs(x, np.zeros(0), u_d)
            rows = mat_vec(rc.B2c, ys)
            if rc.m_y:
                rows = [a + b for a, b in zip(rows, mat_vec(rc.B2d, yd))]
            m.add_constrs("rec", rows, ">=", r)
            m.set_objective(dot(rc.c2c, ys) + dot(rc.c2d, yd))
            out = m.solve()
            if out.status == "optimal":
                best = min(best, inst.c1 @ x + out.objective)
    return best


@pytest.mark.parametrize("seed", range(8))
def test_wR_product_linearization_matches_enumeration(seed):
    inst = random_pure_integer_instance(seed)
    out = relaxation_bound_wR(inst)
    brute = _brute_wR(inst)
    if out.status == "infeasible":
        assert brute == np.inf
    else:
        assert out.value == pytest.approx(brute, abs=1e-6)


def test_wR_rejects_continuous_x_dependence():
    inst = make_instance(
        n_x=1, c1=[1.0],
        m_u=1, F_d0=[[1.0]], F_d_lin=[[[1.0]]], h=[2.0],
        u_d_bounds=[[0, 1]])
    with pytest.raises(ValueError):
        relaxation_bound_wR(inst)


def test_serialization_round_trip():
    inst = random_pure_integer_instance(42)
    d = instance_to_dict(inst)
    back = instance_from_dict(d)
    for a, b in [(inst.first_stage.A, back.first_stage.A),
                 (inst.ddu.F_d_lin, back.ddu.F_d_lin),
                 (inst.ddu.h, back.ddu.h),
                 (inst.recourse.B2c, back.recourse.B2c),
                 (inst.recourse.d, back.recourse.d),
                 (inst.c1, back.c1)]:
        assert np.array_equal(a, b)
    assert instance_to_dict(back) == d


def test_enumerate_u_d_respects_pure_rows():
    inst = make_instance(
        m_u=2, F_d0=[[0.0, 0.0]], h=[5.0], u_d_bounds=[[0, 1], [0, 1]],
        pure_C=[[1.0, 1.0]], pure_rhs=[1.0])
    pts = [tuple(p) for p in inst.ddu.enumerate_u_d()]
    assert pts == [(0, 0), (0, 1), (1, 0)]
