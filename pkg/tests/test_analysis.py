import csv
import dataclasses
import io
import json

import numpy as np
import pytest

from oracles import penalty_feasibility_minimize
from pffa.analysis import (
    CSV_COLUMNS, find_collapse_point, loading_sweep, report_to_csv,
    report_to_json, run_contingency, solve_and_report,
)
from pffa.casefile import (
    Branch, Bus, BusKind, Load, NetworkCase, apply_loading_factor,
    remove_branch, validate,
)
from pffa.cases import (
    make_parallel_pair, make_radial_3bus, radial_3bus_collapse_loading,
)
from pffa.errors import ConvergenceError
from pffa.solver import SolverOptions, solve_case


def random_overloaded_case(seed: int) -> NetworkCase:
    """Seeded path-plus-chords network loaded past its transfer capacity."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 11))
    buses = [Bus(1, BusKind.SLACK, v_set=1.0)]
    buses += [Bus(k + 1, BusKind.PQ) for k in range(1, n)]
    branches = [
        Branch(k, k + 1, r=float(rng.uniform(0.01, 0.05)),
               x=float(rng.uniform(0.15, 0.4)))
        for k in range(1, n)
    ]
    for _ in range(int(rng.integers(0, n // 3 + 1))):
        a, b = rng.choice(np.arange(1, n + 1), size=2, replace=False)
        lo, hi = int(min(a, b)), int(max(a, b))
        branches.append(Branch(lo, hi, r=float(rng.uniform(0.02, 0.08)),
                               x=float(rng.uniform(0.3, 0.6))))
    loads = [
        Load(k, p=float(rng.uniform(0.5, 1.2)), q=float(rng.uniform(0.1, 0.5)))
        for k in range(2, n + 1)
    ]
    return validate(NetworkCase(
        name=f"overloaded_{seed}", buses=tuple(buses),
        branches=tuple(branches), loads=tuple(loads),
    ))


@pytest.mark.parametrize("seed", [1, 2, 3, 4, 5])
def test_minimum_norm_compensation_matches_penalty_oracle(seed):
    """The coupled solve and an augmented-Lagrangian minimizer must agree
    on the compensation currents and the objective for infeasible cases."""
    case = random_overloaded_case(seed)
    sol = solve_case(case, SolverOptions())
    assert sol.converged, f"seed {seed} did not converge"
    lam = sol.state.feasibility_currents
    if np.abs(lam).max() < 1e-7:
        pytest.skip(f"seed {seed} drew a feasible case")

    objective = 0.5 * float(np.sum(lam.real ** 2 + lam.imag ** 2))
    oracle_obj, oracle_if, _ = penalty_feasibility_minimize(
        case, seed_state=sol.state)
    assert objective == pytest.approx(oracle_obj, rel=1e-4, abs=1e-10)
    for k, bus in enumerate(case.buses):
        got = complex(lam[k])
        want = oracle_if[bus.id]
        assert abs(got - want) < 2e-4 * max(1.0, abs(want)), (
            f"seed {seed} bus {bus.id}: {got} vs oracle {want}")


def test_report_fields_and_ranking():
    case = remove_branch(make_parallel_pair(), 2, 3)
    sol, report = solve_and_report(case, second_order=True)
    assert report.schema_version == 1
    assert report.verdict == "infeasible"
    assert report.converged
    assert report.loading == 1.0
    mags = [np.hypot(b.if_real, b.if_imag) for b in report.buses]
    assert mags == sorted(mags, reverse=True)
    assert report.buses[0].bus == 3
    assert report.buses[0].norm_mag == pytest.approx(1.0)
    assert all(0 <= b.norm_mag <= 1 for b in report.buses)
    lam = sol.state.feasibility_currents
    assert report.objective == pytest.approx(
        0.5 * float(np.sum(np.abs(lam) ** 2)))
    assert report.total_p_inf == pytest.approx(
        sum(abs(b.p_def) for b in report.buses))
    assert report.total_q_inf == pytest.approx(
        sum(abs(b.q_def) for b in report.buses))
    assert report.second_order is not None
    assert report.second_order.verdict == "minimum"
    # p_def/q_def recompose V conj(I_F) per bus
    by_bus = {b.bus: b for b in report.buses}
    for k, bus in enumerate(case.buses):
        v = sol.state.v_complex[k]
        s = v * np.conj(lam[k])
        assert by_bus[bus.id].p_def == pytest.approx(s.real, abs=1e-12)
        assert by_bus[bus.id].q_def == pytest.approx(s.imag, abs=1e-12)
    vm = {v.bus: v.vm for v in report.voltages}
    assert len(vm) == len(case.buses)
    assert vm[1] == pytest.approx(1.0)


def test_report_feasible_verdict():
    _, report = solve_and_report(make_parallel_pair())
    assert report.verdict == "feasible"
    assert report.total_p_inf < 1e-7
    assert report.total_q_inf < 1e-7
    assert report.second_order is None


def test_report_json_round_trip():
    _, report = solve_and_report(remove_branch(make_parallel_pair(), 2, 3),
                                 second_order=True)
    payload = json.loads(report_to_json(report))
    assert payload["schema_version"] == 1
    assert payload["verdict"] == "infeasible"
    assert {"bus", "if_real", "if_imag", "p_def", "q_def", "norm_mag"} <= set(
        payload["buses"][0])
    assert payload["second_order"]["verdict"] == "minimum"
    assert isinstance(payload["total_p_inf"], float)
    assert payload["voltages"][0]["bus"] == 1


def test_report_csv_schema():
    _, report = solve_and_report(remove_branch(make_parallel_pair(), 2, 3))
    text = report_to_csv(report)
    rows = list(csv.reader(io.StringIO(text)))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert len(rows) == 1 + len(report.buses)
    assert rows[1][0] == "3"
    back = [float(v) for v in rows[1][1:]]
    top = report.buses[0]
    assert back == pytest.approx([top.if_real, top.if_imag, top.p_def,
                                  top.q_def, top.norm_mag])


def test_loading_sweep_crosses_the_limit():
    case = make_radial_3bus()
    eta = radial_3bus_collapse_loading(case)
    factors = [0.7, 0.85, 0.95, 1.05]
    points = loading_sweep(case, factors)
    verdicts = [p.verdict for p in points]
    assert verdicts == ["feasible", "feasible", "infeasible", "infeasible"]
    assert all(p.converged for p in points)
    assert [p.factor for p in points] == factors
    # deficiency grows monotonically past the limit
    assert points[3].total_p_inf > points[2].total_p_inf > 0
    assert eta == pytest.approx(0.9053, abs=1e-4)


def test_find_collapse_point_matches_analytic_limit():
    case = make_radial_3bus()
    eta = radial_3bus_collapse_loading(case)
    res = find_collapse_point(case, 0.5, 1.2, tol=1e-5)
    assert res.collapse_factor == pytest.approx(eta, abs=1e-3)
    assert res.feasible_below <= res.collapse_factor <= res.infeasible_above
    assert res.infeasible_above - res.feasible_below <= 1e-5 * 1.2
    statuses = dict(res.evaluations)
    assert statuses[0.5] == "feasible"
    assert statuses[1.2] == "infeasible"


def test_find_collapse_point_rejects_bad_bracket():
    case = make_radial_3bus()
    with pytest.raises(ValueError):
        find_collapse_point(case, 0.1, 0.5)   # both ends feasible
    with pytest.raises(ValueError):
        find_collapse_point(case, 1.5, 2.0)   # both ends infeasible
    with pytest.raises(ValueError):
        find_collapse_point(case, 1.0, 0.5)   # inverted bracket


def test_contingency_ranking():
    case = make_parallel_pair()
    results = run_contingency(case)
    assert len(results) == len(case.branches)
    by_branch = {(r.from_bus, r.to_bus): r for r in results}
    feeder = by_branch[(1, 2)]
    assert feeder.status == "islanding"
    assert feeder.total_p_inf == np.inf
    pair = by_branch[(2, 3)]
    assert pair.status == "infeasible"
    assert pair.worst_bus == 3
    assert pair.total_p_inf > 0
    # islanding sorts ahead of finite deficiency
    assert results[0].status == "islanding"
    severities = [r.total_p_inf for r in results]
    assert severities == sorted(severities, reverse=True)


def test_contingency_explicit_list():
    case = make_parallel_pair()
    results = run_contingency(case, outages=[(2, 3, 0)])
    assert len(results) == 1
    assert results[0].status == "infeasible"
    assert results[0].report is not None


def test_results_invariant_under_renumbering():
    base = random_overloaded_case(3)
    mapping = {b.id: 1000 - 7 * b.id for b in base.buses}
    renamed = validate(dataclasses.replace(
        base,
        buses=tuple(dataclasses.replace(b, id=mapping[b.id])
                    for b in base.buses),
        branches=tuple(dataclasses.replace(br, from_bus=mapping[br.from_bus],
                                           to_bus=mapping[br.to_bus])
                       for br in base.branches),
        loads=tuple(dataclasses.replace(ld, bus=mapping[ld.bus])
                    for ld in base.loads),
    ))
    _, rep_a = solve_and_report(base)
    _, rep_b = solve_and_report(renamed)
    assert rep_a.verdict == rep_b.verdict
    a = {b.bus: (b.p_def, b.q_def) for b in rep_a.buses}
    b = {bb.bus: (bb.p_def, bb.q_def) for bb in rep_b.buses}
    for bus_id, (p, q) in a.items():
        p2, q2 = b[mapping[bus_id]]
        assert p == pytest.approx(p2, abs=1e-8)
        assert q == pytest.approx(q2, abs=1e-8)


def test_sweep_respects_loading_factor_semantics():
    case = make_radial_3bus()
    scaled = apply_loading_factor(case, 0.85)
    _, direct = solve_and_report(scaled)
    point = loading_sweep(case, [0.85])[0]
    assert point.verdict == direct.verdict == "feasible"
    assert point.report.loading == 0.85


def test_collapse_solver_failure_raises():
    case = make_radial_3bus()
    bad = dataclasses.replace(
        SolverOptions(), max_iterations=1,
        homotopy=dataclasses.replace(SolverOptions().homotopy,
                                     enabled=False),
    )
    with pytest.raises(ConvergenceError):
        find_collapse_point(case, 0.5, 1.2, options=bad)
