"""Feasibility reporting and study drivers built on the coupled solver.

The feasibility current at each bus is the adjoint voltage pair of its KCL
rows; a converged coupled solve therefore prices infeasibility bus by bus.
``build_report`` turns a Solution into the exchange-format report, and the
drivers (loading sweeps, collapse bisection, N-1 screening) compose solves
over case transforms.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, replace as dc_replace

import numpy as np

from .casefile import NetworkCase, apply_loading_factor, remove_branch
from .errors import ConvergenceError, IslandingError
from .solver import (
    SecondOrderResult, Solution, SolverOptions, check_second_order, solve_case,
)

REPORT_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class BusDeficiency:
    """Feasibility source response at one bus.

    ``p_def``/``q_def`` split V conj(I_F) into real and reactive power the
    source must inject to keep KCL satisfied; ``norm_mag`` is the current
    magnitude normalized by the largest one in the report.
    """

    bus: int
    if_real: float
    if_imag: float
    p_def: float
    q_def: float
    norm_mag: float


@dataclass(frozen=True)
class BusVoltage:
    bus: int
    vm: float
    va_deg: float


@dataclass(frozen=True)
class FeasibilityReport:
    schema_version: int
    case_name: str
    loading: float
    verdict: str                 # feasible | infeasible | not_converged
    converged: bool
    iterations: int
    final_stage_iterations: int
    residual: float
    threshold: float
    total_p_inf: float           # sum of |p_def| over placed buses
    total_q_inf: float
    objective: float             # 0.5 * ||I_F||^2
    buses: tuple[BusDeficiency, ...]   # sorted by |I_F| descending
    voltages: tuple[BusVoltage, ...]
    events: tuple[str, ...] = ()
    failure: str | None = None
    second_order: SecondOrderResult | None = None


def build_report(solution: Solution,
                 threshold: float | None = None) -> FeasibilityReport:
    """Summarize a solve: verdict, per-bus deficiencies, voltages.

    Deficiency totals are sums of absolute per-bus real/reactive injections
    of the feasibility sources. A converged coupled solve whose largest
    feasibility current stays under the threshold is a standard power-flow
    solution; a power-flow-only solve reports zero currents by definition.
    """
    case = solution.case
    st = solution.state
    threshold = (solution.options.infeasibility_threshold
                 if threshold is None else threshold)

    if solution.coupled:
        placed = solution.options.placement.mask(case)
    else:
        placed = np.zeros(len(case.buses), dtype=bool)
    i_f = np.where(placed, st.feasibility_currents, 0.0)
    s_inj = st.v_complex * np.conj(i_f)
    mags = np.abs(i_f)
    max_mag = float(mags.max(initial=0.0))

    if not solution.converged:
        verdict = "not_converged"
    elif max_mag < threshold:
        verdict = "feasible"
    else:
        verdict = "infeasible"

    order = [int(b) for b in np.flatnonzero(placed)]
    order.sort(key=lambda b: -mags[b])
    buses = tuple(
        BusDeficiency(
            bus=int(case.buses[b].id),
            if_real=float(i_f[b].real), if_imag=float(i_f[b].imag),
            p_def=float(s_inj[b].real), q_def=float(s_inj[b].imag),
            norm_mag=float(mags[b] / max_mag) if max_mag > 0 else 0.0,
        )
        for b in order
    )
    vm = np.hypot(st.v_r, st.v_i)
    va = np.degrees(np.arctan2(st.v_i, st.v_r))
    voltages = tuple(
        BusVoltage(bus=int(b.id), vm=float(vm[k]), va_deg=float(va[k]))
        for k, b in enumerate(case.buses)
    )
    return FeasibilityReport(
        schema_version=REPORT_SCHEMA_VERSION,
        case_name=case.name,
        loading=1.0,
        verdict=verdict,
        converged=solution.converged,
        iterations=solution.iterations,
        final_stage_iterations=solution.final_stage_iterations,
        residual=solution.residual,
        threshold=threshold,
        total_p_inf=float(np.abs(s_inj.real[placed]).sum()) if placed.any() else 0.0,
        total_q_inf=float(np.abs(s_inj.imag[placed]).sum()) if placed.any() else 0.0,
        objective=float(0.5 * (mags ** 2).sum()),
        buses=buses,
        voltages=voltages,
        events=tuple(solution.switch_events) + tuple(solution.trace.events),
        failure=solution.failure,
    )


def solve_and_report(case: NetworkCase, loading: float = 1.0,
                     options: SolverOptions | None = None,
                     second_order: bool = False):
    """Apply a loading factor, solve, report. Returns (solution, report)."""
    options = options or SolverOptions()
    scaled = apply_loading_factor(case, loading) if loading != 1.0 else case
    solution = solve_case(scaled, options)
    report = build_report(solution)
    report = dc_replace(report, loading=loading)
    if second_order:
        report = dc_replace(report,
                            second_order=check_second_order(solution))
    return solution, report


# ---------------------------------------------------------------------------
# serialization


def report_to_dict(report: FeasibilityReport) -> dict:
    doc = {
        "schema_version": report.schema_version,
        "case": report.case_name,
        "loading": report.loading,
        "verdict": report.verdict,
        "converged": report.converged,
        "iterations": report.iterations,
        "final_stage_iterations": report.final_stage_iterations,
        "residual": report.residual,
        "threshold": report.threshold,
        "total_p_inf": report.total_p_inf,
        "total_q_inf": report.total_q_inf,
        "objective": report.objective,
        "buses": [
            {"bus": b.bus, "if_real": b.if_real, "if_imag": b.if_imag,
             "p_def": b.p_def, "q_def": b.q_def, "norm_mag": b.norm_mag}
            for b in report.buses
        ],
        "voltages": [
            {"bus": v.bus, "vm": v.vm, "va_deg": v.va_deg}
            for v in report.voltages
        ],
        "events": list(report.events),
        "failure": report.failure,
    }
    if report.second_order is not None:
        doc["second_order"] = {
            "verdict": report.second_order.verdict,
            "min_eigenvalue": report.second_order.min_eigenvalue,
            "null_dimension": report.second_order.null_dimension,
            "note": report.second_order.note,
        }
    return doc


def report_to_json(report: FeasibilityReport) -> str:
    return json.dumps(report_to_dict(report), indent=2)


CSV_COLUMNS = ("bus", "if_real", "if_imag", "p_def", "q_def", "norm_mag")


def report_to_csv(report: FeasibilityReport) -> str:
    """Per-bus deficiency table, one row per placed bus, ranked by |I_F|."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for b in report.buses:
        writer.writerow([b.bus, f"{b.if_real:.12g}", f"{b.if_imag:.12g}",
                         f"{b.p_def:.12g}", f"{b.q_def:.12g}",
                         f"{b.norm_mag:.12g}"])
    return out.getvalue()


# ---------------------------------------------------------------------------
# study drivers


@dataclass(frozen=True)
class SweepPoint:
    factor: float
    verdict: str
    total_p_inf: float
    total_q_inf: float
    iterations: int
    converged: bool
    report: FeasibilityReport


def loading_sweep(case: NetworkCase, factors, options: SolverOptions | None = None
                  ) -> list[SweepPoint]:
    """Solve the case at each loading factor, warm-starting along the path."""
    options = options or SolverOptions()
    points: list[SweepPoint] = []
    state = None
    for factor in factors:
        scaled = apply_loading_factor(case, float(factor))
        solution = solve_case(scaled, options, initial_state=state)
        report = dc_replace(build_report(solution), loading=float(factor))
        points.append(SweepPoint(
            factor=float(factor), verdict=report.verdict,
            total_p_inf=report.total_p_inf, total_q_inf=report.total_q_inf,
            iterations=solution.iterations, converged=solution.converged,
            report=report,
        ))
        state = solution.state if solution.converged else None
    return points


@dataclass(frozen=True)
class CollapseResult:
    collapse_factor: float
    feasible_below: float
    infeasible_above: float
    evaluations: tuple[tuple[float, str], ...]


def find_collapse_point(case: NetworkCase, lo: float, hi: float,
                        tol: float = 1e-4,
                        options: SolverOptions | None = None) -> CollapseResult:
    """Bisect the loading factor across the feasibility boundary.

    ``lo`` must solve feasible and ``hi`` infeasible; the boundary is where
    nonzero feasibility currents first appear, i.e. the loading limit
    (voltage collapse point for load-driven stress).
    """
    options = options or SolverOptions()
    if not lo < hi:
        raise ValueError(f"collapse bracket needs lo < hi, got [{lo}, {hi}]")
    evals: list[tuple[float, str]] = []

    def verdict_at(factor: float) -> str:
        _, report = solve_and_report(case, factor, options)
        if not report.converged:
            raise ConvergenceError(
                f"solver failed at loading {factor:.6f}: "
                f"{report.failure or 'no convergence'}")
        evals.append((factor, report.verdict))
        return report.verdict

    v_lo, v_hi = verdict_at(lo), verdict_at(hi)
    if v_lo != "feasible" or v_hi != "infeasible":
        raise ValueError(
            f"bracket does not straddle the feasibility boundary: "
            f"loading {lo} is {v_lo}, {hi} is {v_hi}")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if verdict_at(mid) == "feasible":
            lo = mid
        else:
            hi = mid
    return CollapseResult(
        collapse_factor=0.5 * (lo + hi), feasible_below=lo,
        infeasible_above=hi, evaluations=tuple(evals),
    )


@dataclass(frozen=True)
class ContingencyResult:
    from_bus: int
    to_bus: int
    ordinal: int
    status: str                     # feasible | infeasible | islanding | not_converged
    total_p_inf: float
    total_q_inf: float
    worst_bus: int | None
    report: FeasibilityReport | None
    detail: str = ""


def _severity(res: ContingencyResult) -> tuple:
    rank = {"islanding": 3, "infeasible": 2, "not_converged": 2,
            "feasible": 0}[res.status]
    return (rank, res.total_p_inf + res.total_q_inf)


def run_contingency(case: NetworkCase, outages=None,
                    options: SolverOptions | None = None
                    ) -> list[ContingencyResult]:
    """Screen branch outages; returns results ranked most severe first.

    ``outages`` is an iterable of (from_bus, to_bus, ordinal) triples, or
    None for all in-service branches. Outages that island the network are
    flagged structurally and not solved; the rest get a full feasibility
    solve on the post-outage case.
    """
    options = options or SolverOptions()
    if outages is None:
        counts: dict[tuple[int, int], int] = {}
        outages = []
        for br in case.branches:
            if not br.in_service:
                continue
            key = (min(br.from_bus, br.to_bus), max(br.from_bus, br.to_bus))
            outages.append((br.from_bus, br.to_bus, counts.get(key, 0)))
            counts[key] = counts.get(key, 0) + 1

    results: list[ContingencyResult] = []
    for f_bus, t_bus, ordinal in outages:
        try:
            modified = remove_branch(case, f_bus, t_bus, ordinal)
        except IslandingError as exc:
            results.append(ContingencyResult(
                f_bus, t_bus, ordinal, "islanding", math.inf, math.inf,
                None, None, detail=str(exc)))
            continue
        _, report = solve_and_report(modified, 1.0, options)
        status = report.verdict
        worst = report.buses[0].bus if (
            report.buses and report.verdict == "infeasible") else None
        results.append(ContingencyResult(
            f_bus, t_bus, ordinal, status,
            report.total_p_inf, report.total_q_inf, worst, report,
            detail=report.failure or ""))
    results.sort(key=_severity, reverse=True)
    return results
