from .app import app, create_app
from .models import (
    CaseSpec, CollapseRequest, CollapseResponse, ContingencyRequest,
    ContingencyResponse, HomotopyModel, OptionsModel, ReportModel,
    SolveRequest, SweepRequest, SweepResponse, ValidateRequest,
    ValidateResponse,
)

__all__ = [name for name in dir() if not name.startswith("_")]
