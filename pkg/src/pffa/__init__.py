"""Power flow feasibility analysis.

Solves AC power flow as an equivalent split circuit coupled to its adjoint
network through per-bus feasibility current sources. A solvable case returns
the standard power-flow solution with zero adjoint response; an unsolvable
one converges to the minimum-norm current injections that would restore
feasibility, localizing real and reactive power deficiency by bus.
"""

from .analysis import (
    BusDeficiency, CollapseResult, ContingencyResult, FeasibilityReport,
    SweepPoint, build_report, find_collapse_point, loading_sweep,
    report_to_csv, report_to_dict, report_to_json, run_contingency,
    solve_and_report,
)
from .assembler import (
    ALL_BUSES, Assembler, Placement, assemble_coupled, assemble_powerflow,
    build_index_map, solve_linear,
)
from .casefile import (
    Branch, Bus, BusKind, FixedShunt, Generator, Load, NetworkCase,
    apply_loading_factor, emit_native_json, load_case, parse_matpower,
    parse_native_json, remove_branch, validate,
)
from .cases import builtin_case
from .errors import (
    CaseValidationError, ConvergenceError, IslandingError, ParseError,
    PffaError, SingularSystemError, VoltageFloorError,
)
from .solver import (
    HomotopyParams, IterationTrace, SecondOrderResult, Solution,
    SolverOptions, StateVector, check_second_order, enforce_q_limits,
    initialize, limit_step, nr_solve, solve_case, tx_stepping_solve,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
