"""HTTP service exposing the feasibility solver.

Every endpoint takes the case inline, so the service is stateless and safe
to run multiple workers of. Solver non-convergence is part of the report
payload, not an HTTP error; only malformed input and impossible study
parameters map to error statuses.
"""

from __future__ import annotations

import math

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..analysis import (
    find_collapse_point, loading_sweep, report_to_dict, run_contingency,
    solve_and_report,
)
from ..errors import (
    CaseValidationError, ConvergenceError, ParseError, PffaError,
)
from ..casefile import validate as validate_case
from .models import (
    CollapseRequest, CollapseResponse, ContingencyRequest,
    ContingencyResponse, ContingencyRow, ReportModel, SolveRequest,
    SweepRequest, SweepResponse, SweepRow, ValidateRequest, ValidateResponse,
)


def _report_model(report) -> ReportModel:
    return ReportModel(**report_to_dict(report))


def create_app() -> FastAPI:
    app = FastAPI(title="pffa", version=__version__,
                  description="Power flow feasibility analysis service")

    @app.exception_handler(ParseError)
    async def _parse_error(request: Request, exc: ParseError):
        return JSONResponse(status_code=400,
                            content={"detail": str(exc)})

    @app.exception_handler(CaseValidationError)
    async def _case_error(request: Request, exc: CaseValidationError):
        return JSONResponse(status_code=422,
                            content={"detail": str(exc)})

    @app.exception_handler(ValueError)
    async def _value_error(request: Request, exc: ValueError):
        return JSONResponse(status_code=400,
                            content={"detail": str(exc)})

    @app.exception_handler(ConvergenceError)
    async def _convergence_error(request: Request, exc: ConvergenceError):
        return JSONResponse(status_code=409,
                            content={"detail": str(exc)})

    @app.exception_handler(PffaError)
    async def _pffa_error(request: Request, exc: PffaError):
        return JSONResponse(status_code=422,
                            content={"detail": str(exc)})

    @app.get("/health")
    async def health():
        return {"status": "ok", "version": __version__}

    @app.post("/api/v1/solve", response_model=ReportModel)
    def solve(req: SolveRequest) -> ReportModel:
        case = req.case.to_case()
        _, report = solve_and_report(case, req.loading,
                                     req.options.to_options(),
                                     second_order=req.second_order)
        return _report_model(report)

    @app.post("/api/v1/sweep", response_model=SweepResponse)
    def sweep(req: SweepRequest) -> SweepResponse:
        case = req.case.to_case()
        points = loading_sweep(case, req.factors, req.options.to_options())
        return SweepResponse(
            case=case.name,
            points=[SweepRow(factor=p.factor, verdict=p.verdict,
                             total_p_inf=p.total_p_inf,
                             total_q_inf=p.total_q_inf,
                             iterations=p.iterations, converged=p.converged)
                    for p in points],
            reports=[_report_model(p.report) for p in points],
        )

    @app.post("/api/v1/collapse", response_model=CollapseResponse)
    def collapse(req: CollapseRequest) -> CollapseResponse:
        case = req.case.to_case()
        result = find_collapse_point(case, req.lo, req.hi, req.tol,
                                     req.options.to_options())
        return CollapseResponse(
            case=case.name,
            collapse_factor=result.collapse_factor,
            feasible_below=result.feasible_below,
            infeasible_above=result.infeasible_above,
            evaluations=list(result.evaluations),
        )

    @app.post("/api/v1/contingency", response_model=ContingencyResponse)
    def contingency(req: ContingencyRequest) -> ContingencyResponse:
        case = req.case.to_case()
        outages = [tuple(o) for o in req.outages] if req.outages else None
        results = run_contingency(case, outages, req.options.to_options())

        def finite(v: float) -> float | None:
            return v if math.isfinite(v) else None

        return ContingencyResponse(
            case=case.name,
            results=[ContingencyRow(
                from_bus=r.from_bus, to_bus=r.to_bus, ordinal=r.ordinal,
                status=r.status, total_p_inf=finite(r.total_p_inf),
                total_q_inf=finite(r.total_q_inf), worst_bus=r.worst_bus,
                detail=r.detail) for r in results],
            reports=[_report_model(r.report) if r.report is not None
                     else None for r in results],
        )

    @app.post("/api/v1/validate", response_model=ValidateResponse)
    def validate(req: ValidateRequest) -> ValidateResponse:
        case = validate_case(req.case.to_case())
        return ValidateResponse(
            valid=True, case=case.name, buses=len(case.buses),
            branches=len(case.branches), generators=len(case.generators),
            loads=len(case.loads),
        )

    return app


app = create_app()
