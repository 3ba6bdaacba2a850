"""Request and response schemas for the HTTP service.

Requests carry the case inline (file text or a builtin name) plus solver
options in the same flat key layout the config file uses; responses mirror
the report exchange format one to one, so a CLI or script can consume either
the HTTP payload or the library dict interchangeably.
"""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, Field, model_validator

from ..assembler import Placement
from ..casefile import NetworkCase, parse_matpower, parse_native_json
from ..cases import builtin_case
from ..errors import ParseError
from ..solver import HomotopyParams, SolverOptions


class CaseSpec(BaseModel):
    """A network case sent over the wire.

    ``builtin`` names a packaged example; the other formats carry the file
    content in ``text``.
    """

    format: Literal["matpower", "native", "builtin"] = "matpower"
    text: str | None = None
    name: str | None = None

    @model_validator(mode="after")
    def _check_payload(self):
        if self.format == "builtin":
            if not self.name:
                raise ValueError("builtin case needs a name")
        elif not self.text:
            raise ValueError(f"{self.format} case needs file text")
        return self

    def to_case(self) -> NetworkCase:
        if self.format == "builtin":
            try:
                return builtin_case(self.name)
            except KeyError as exc:
                raise ParseError(str(exc.args[0])) from None
        if self.format == "native":
            return parse_native_json(self.text, name=self.name or "case")
        return parse_matpower(self.text, name=self.name or "case")


class HomotopyModel(BaseModel):
    enabled: bool = True
    y_scale: float = Field(100.0, gt=0)
    mu_start: float = Field(1.0, gt=0)
    mu_divisor: float = Field(4.0, gt=1)
    mu_floor: float = Field(1e-3, gt=0)
    max_subproblem_iterations: int = Field(50, ge=1)
    max_refinements: int = Field(12, ge=0)

    def to_params(self) -> HomotopyParams:
        return HomotopyParams(**self.model_dump())


class OptionsModel(BaseModel):
    """Solver options; every field is also a config-file key."""

    nr_tolerance: float = Field(1e-8, gt=0)
    max_iterations: int = Field(100, ge=1)
    delta_v_max: float = Field(0.1, gt=0)
    q_step_max: float = Field(0.5, gt=0)
    v_mag_min: float = Field(0.2, ge=0)
    v_mag_max: float = Field(2.0, gt=0)
    v_floor: float = Field(1e-4, gt=0)
    feasibility: bool = True
    placement: Literal["all", "loads", "explicit"] = "all"
    placement_buses: list[int] = Field(default_factory=list)
    q_limit_mode: Literal["outer", "ignore"] = "outer"
    max_outer_iterations: int = Field(20, ge=1)
    start: Literal["flat", "from_input"] = "flat"
    infeasibility_threshold: float = Field(1e-6, gt=0)
    second_order_cap: int = Field(200, ge=0)
    matrix_dump_path: str | None = None
    homotopy: HomotopyModel = Field(default_factory=HomotopyModel)

    @model_validator(mode="after")
    def _check_placement(self):
        if self.placement == "explicit" and not self.placement_buses:
            raise ValueError("explicit placement needs placement_buses")
        return self

    def to_options(self) -> SolverOptions:
        data = self.model_dump(exclude={"homotopy", "placement",
                                        "placement_buses"})
        return SolverOptions(
            placement=Placement(self.placement,
                                tuple(self.placement_buses)),
            homotopy=self.homotopy.to_params(),
            **data,
        )


class SolveRequest(BaseModel):
    case: CaseSpec
    loading: float = Field(1.0, gt=0)
    options: OptionsModel = Field(default_factory=OptionsModel)
    second_order: bool = False


class SweepRequest(BaseModel):
    case: CaseSpec
    factors: list[float] = Field(min_length=1)
    options: OptionsModel = Field(default_factory=OptionsModel)


class CollapseRequest(BaseModel):
    case: CaseSpec
    lo: float = Field(gt=0)
    hi: float = Field(gt=0)
    tol: float = Field(1e-4, gt=0)
    options: OptionsModel = Field(default_factory=OptionsModel)


class ContingencyRequest(BaseModel):
    case: CaseSpec
    # Each outage is (from_bus, to_bus, ordinal); null screens all branches.
    outages: list[tuple[int, int, int]] | None = None
    options: OptionsModel = Field(default_factory=OptionsModel)


class ValidateRequest(BaseModel):
    case: CaseSpec


# ---------------------------------------------------------------------------
# responses


class BusRow(BaseModel):
    bus: int
    if_real: float
    if_imag: float
    p_def: float
    q_def: float
    norm_mag: float


class VoltageRow(BaseModel):
    bus: int
    vm: float
    va_deg: float


class SecondOrderModel(BaseModel):
    verdict: str
    min_eigenvalue: float
    null_dimension: int
    note: str = ""


class ReportModel(BaseModel):
    schema_version: int
    case: str
    loading: float
    verdict: str
    converged: bool
    iterations: int
    final_stage_iterations: int
    residual: float
    threshold: float
    total_p_inf: float
    total_q_inf: float
    objective: float
    buses: list[BusRow]
    voltages: list[VoltageRow]
    events: list[str]
    failure: str | None = None
    second_order: SecondOrderModel | None = None


class SweepRow(BaseModel):
    factor: float
    verdict: str
    total_p_inf: float
    total_q_inf: float
    iterations: int
    converged: bool


class SweepResponse(BaseModel):
    case: str
    points: list[SweepRow]
    reports: list[ReportModel]


class CollapseResponse(BaseModel):
    case: str
    collapse_factor: float
    feasible_below: float
    infeasible_above: float
    evaluations: list[tuple[float, str]]


class ContingencyRow(BaseModel):
    from_bus: int
    to_bus: int
    ordinal: int
    status: str
    # None when the outage islands the network and is not solved
    total_p_inf: float | None
    total_q_inf: float | None
    worst_bus: int | None = None
    detail: str = ""


class ContingencyResponse(BaseModel):
    case: str
    results: list[ContingencyRow]
    reports: list[ReportModel | None]


class ValidateResponse(BaseModel):
    valid: bool
    case: str
    buses: int
    branches: int
    generators: int
    loads: int
