"""Newton-Raphson driver, step limiting, homotopy continuation, Q limits.

The solver works on the flat unknown vector of the assembled system. Each
iteration solves the affine system for the next full iterate, converts it to
a step, limits the step per component, and applies the hard voltage
magnitude clamp. Convergence is judged on the infinity norm of the true
nonlinear residual, never on the step size.

Hard cases go through transmission stepping: series admittances are inflated
by (1 + mu * y_scale) which collapses electrical distance and makes the
network trivially solvable, then mu walks a geometric schedule down to
exactly zero, warm-starting each subproblem from the last. Failed steps
are retried at half the decrement; the mu = 0 end point restores the
original equations exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .assembler import (
    ALL_BUSES, Assembler, Placement, dump_matrix_market, solve_linear,
)
from .casefile import NetworkCase
from .errors import (
    CaseValidationError, SingularSystemError, VoltageFloorError,
)


@dataclass(frozen=True)
class HomotopyParams:
    """Transmission-stepping schedule parameters.

    ``y_scale`` is the series admittance inflation at mu = 1. The schedule
    divides mu by ``mu_divisor`` until it falls under ``mu_floor``, then
    jumps to exactly zero; a failed subproblem halves the decrement up to
    ``max_refinements`` times across the run.
    """

    enabled: bool = True
    y_scale: float = 100.0
    mu_start: float = 1.0
    mu_divisor: float = 4.0
    mu_floor: float = 1e-3
    max_subproblem_iterations: int = 50
    max_refinements: int = 12


@dataclass(frozen=True)
class SolverOptions:
    nr_tolerance: float = 1e-8
    max_iterations: int = 100
    delta_v_max: float = 0.1      # per-component limit on v and lam steps
    q_step_max: float = 0.5       # per-component limit on Q_G/auxiliary steps
    v_mag_min: float = 0.2        # hard clamp on voltage magnitude
    v_mag_max: float = 2.0
    v_floor: float = 1e-4         # abort guard, far below the clamp
    feasibility: bool = True      # couple the adjoint network
    placement: Placement = ALL_BUSES
    homotopy: HomotopyParams = field(default_factory=HomotopyParams)
    q_limit_mode: str = "outer"   # outer | ignore
    max_outer_iterations: int = 20
    start: str = "flat"           # flat | from_input
    infeasibility_threshold: float = 1e-6
    second_order_cap: int = 200
    matrix_dump_path: str | None = None


@dataclass
class StateVector:
    """Solver state split into named arrays (all internal bus order)."""

    v_r: np.ndarray
    v_i: np.ndarray
    q_g: np.ndarray
    slack_i: np.ndarray      # slack source current (re, im)
    lam_r: np.ndarray
    lam_i: np.ndarray
    lam_v: np.ndarray
    adj_src: np.ndarray      # adjoint slack source current (re, im)

    @classmethod
    def zeros(cls, n_bus: int, n_gen: int) -> "StateVector":
        return cls(np.zeros(n_bus), np.zeros(n_bus), np.zeros(n_gen),
                   np.zeros(2), np.zeros(n_bus), np.zeros(n_bus),
                   np.zeros(n_gen), np.zeros(2))

    def to_flat(self, index_map) -> np.ndarray:
        x = np.zeros(index_map.dim)
        x[index_map.vr] = self.v_r
        x[index_map.vi] = self.v_i
        x[index_map.qg] = self.q_g
        x[index_map.slack_ir] = self.slack_i[0]
        x[index_map.slack_ii] = self.slack_i[1]
        if index_map.coupled:
            x[index_map.lam_r] = self.lam_r
            x[index_map.lam_i] = self.lam_i
            x[index_map.lam_v] = self.lam_v
            x[index_map.adj_src_r] = self.adj_src[0]
            x[index_map.adj_src_i] = self.adj_src[1]
        return x

    @classmethod
    def from_flat(cls, x: np.ndarray, index_map) -> "StateVector":
        st = cls.zeros(index_map.n_bus, index_map.n_gen)
        st.v_r = x[index_map.vr].copy()
        st.v_i = x[index_map.vi].copy()
        st.q_g = x[index_map.qg].copy()
        st.slack_i = np.array([x[index_map.slack_ir], x[index_map.slack_ii]])
        if index_map.coupled:
            st.lam_r = x[index_map.lam_r].copy()
            st.lam_i = x[index_map.lam_i].copy()
            st.lam_v = x[index_map.lam_v].copy()
            st.adj_src = np.array([x[index_map.adj_src_r],
                                   x[index_map.adj_src_i]])
        return st

    @property
    def v_complex(self) -> np.ndarray:
        return self.v_r + 1j * self.v_i

    @property
    def feasibility_currents(self) -> np.ndarray:
        """Per-bus feasibility current I_F = lam at the KCL rows."""
        return self.lam_r + 1j * self.lam_i


@dataclass
class TraceRecord:
    mu: float
    iteration: int
    residual: float
    min_step_scale: float = 1.0
    n_limited: int = 0


@dataclass
class IterationTrace:
    records: list[TraceRecord] = field(default_factory=list)
    events: list[str] = field(default_factory=list)

    def add(self, **kw) -> None:
        self.records.append(TraceRecord(**kw))

    def note(self, event: str) -> None:
        self.events.append(event)


@dataclass
class Solution:
    converged: bool
    state: StateVector
    iterations: int
    residual: float
    case: NetworkCase
    options: SolverOptions
    coupled: bool
    gen_modes: np.ndarray
    trace: IterationTrace
    final_stage_iterations: int = 0
    mu_schedule: list[float] = field(default_factory=list)
    switch_events: list[str] = field(default_factory=list)
    failure: str | None = None


# ---------------------------------------------------------------------------
# initialization


def initialize(case: NetworkCase, options: SolverOptions,
               coupled: bool | None = None):
    """Initial state per the start policy.

    Flat start: voltage setpoint magnitude at angle zero where a setpoint
    exists (slack keeps its angle), 1.0 p.u. elsewhere; machine reactive
    output at the midpoint of its limits (zero when unbounded). The adjoint
    voltages start at the NR tolerance rather than zero: the all-zero
    adjoint plane is invariant under Newton, and a feasible case returns to
    it while an infeasible one must leave it.
    """
    coupled = options.feasibility if coupled is None else coupled
    n, g = len(case.buses), len(case.generators)
    st = StateVector.zeros(n, g)
    index = case.bus_index
    if options.start == "flat":
        st.v_r[:] = 1.0
        for gen in case.generators:
            st.v_r[index[gen.bus]] = gen.v_set
        s = case.slack
        st.v_r[index[s.id]] = s.v_set * math.cos(s.angle_set)
        st.v_i[index[s.id]] = s.v_set * math.sin(s.angle_set)
        for k, gen in enumerate(case.generators):
            if math.isfinite(gen.q_min) and math.isfinite(gen.q_max):
                st.q_g[k] = 0.5 * (gen.q_min + gen.q_max)
    elif options.start == "from_input":
        for b in case.buses:
            if b.vm is None or b.va is None:
                raise CaseValidationError(
                    f"bus {b.id} has no stored voltage; warm start needs "
                    "vm/va on every bus"
                )
            st.v_r[index[b.id]] = b.vm * math.cos(b.va)
            st.v_i[index[b.id]] = b.vm * math.sin(b.va)
        for k, gen in enumerate(case.generators):
            if gen.q_init is not None:
                st.q_g[k] = min(max(gen.q_init, gen.q_min), gen.q_max)
            elif math.isfinite(gen.q_min) and math.isfinite(gen.q_max):
                st.q_g[k] = 0.5 * (gen.q_min + gen.q_max)
    else:
        raise CaseValidationError(f"unknown start policy {options.start!r}")
    if coupled:
        st.lam_r[:] = options.nr_tolerance
        st.lam_i[:] = options.nr_tolerance
    return st


# ---------------------------------------------------------------------------
# step limiting


def current_block_mask(index_map) -> np.ndarray:
    """Entries limited by q_step_max: machine Q, source and adjoint currents."""
    im = index_map
    mask = np.zeros(im.dim, dtype=bool)
    mask[im.qg] = True
    mask[[im.slack_ir, im.slack_ii]] = True
    if im.coupled:
        mask[im.lam_v] = True
        mask[[im.adj_src_r, im.adj_src_i]] = True
    return mask


def clamp_voltage_magnitudes(x: np.ndarray, index_map,
                             options: SolverOptions) -> np.ndarray:
    """Pull every bus voltage back inside the hard magnitude band."""
    im = index_map
    v_r, v_i = x[im.vr], x[im.vi]
    vm = np.hypot(v_r, v_i)
    lo, hi = options.v_mag_min, options.v_mag_max
    shrink = np.ones_like(vm)
    np.divide(hi, vm, out=shrink, where=vm > hi)
    grow = vm < lo
    safe = np.where(vm > 0, vm, 1.0)
    shrink[grow] = (lo / safe)[grow]
    x[im.vr] = np.where(grow & (vm == 0), lo, v_r * shrink)
    x[im.vi] = np.where(grow & (vm == 0), 0.0, v_i * shrink)
    return x


def step_bounds(index_map, options: SolverOptions) -> np.ndarray:
    bound = np.full(index_map.dim, options.delta_v_max)
    bound[current_block_mask(index_map)] = options.q_step_max
    return bound


def limit_step(x_prev: np.ndarray, x_solved: np.ndarray, index_map,
               options: SolverOptions, bound_scale: np.ndarray | None = None):
    """Damp the Newton step per component and clamp voltage magnitudes.

    Every entry moves at most its bound: delta_v_max for voltage-like and
    adjoint entries, q_step_max for machine reactive outputs and source
    currents. ``bound_scale`` widens individual bounds (trust-region growth
    for components that keep pushing in one direction). Returns
    (x_new, min_scale, n_limited, sat_sign) where sat_sign holds the step
    direction for components clipped by their bound and 0 elsewhere.
    """
    im = index_map
    delta = x_solved - x_prev
    bound = step_bounds(im, options)
    if bound_scale is not None:
        bound = bound * bound_scale

    mag = np.abs(delta)
    with np.errstate(divide="ignore"):
        scale = np.minimum(1.0, np.where(mag > 0, bound / mag, 1.0))
    x_new = x_prev + scale * delta
    sat_sign = np.where(scale < 1.0, np.sign(delta), 0.0).astype(np.int8)
    x_new = clamp_voltage_magnitudes(x_new, im, options)

    limited = int(np.count_nonzero(scale < 1.0))
    return x_new, float(scale.min(initial=1.0)), limited, sat_sign


def directional_step(x_prev: np.ndarray, x_solved: np.ndarray, index_map,
                     options: SolverOptions, gamma: float,
                     bound_scale: np.ndarray | None = None):
    """Take a shortened step along the exact Newton direction.

    Per-component clipping redirects large steps into a sign pattern that
    can orbit; scaling the whole direction by one factor preserves the
    descent property of the Newton step (every residual component shrinks
    to first order), so it is used while progress has stalled.
    """
    im = index_map
    delta = x_solved - x_prev
    mag = np.abs(delta)
    bound = step_bounds(im, options)
    if bound_scale is not None:
        bound = bound * bound_scale
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(mag > 0, bound / mag, np.inf)
    xi = min(1.0, float(ratios.min(initial=1.0)))
    x_new = x_prev + gamma * xi * delta
    limited = 0 if gamma * xi >= 1.0 else im.dim
    x_new = clamp_voltage_magnitudes(x_new, im, options)
    return x_new, gamma * xi, limited, xi


# ---------------------------------------------------------------------------
# Newton-Raphson


def nr_solve(case: NetworkCase, options: SolverOptions,
             initial_state: StateVector | None = None,
             gen_modes: np.ndarray | None = None, mu: float = 0.0,
             max_iterations: int | None = None,
             trace: IterationTrace | None = None) -> Solution:
    """Solve one (optionally homotopy-scaled) system by damped NR.

    Returns a Solution whose ``converged`` flag reflects whether the true
    residual dropped under nr_tolerance within the iteration budget;
    numerical failures (singular systems, voltage floor) are captured in
    ``failure`` rather than raised so continuation drivers can react.
    """
    coupled = options.feasibility
    y_scale = options.homotopy.y_scale if mu > 0 else 0.0
    asm = Assembler(case, coupled=coupled, placement=options.placement,
                    mu=mu, y_scale=y_scale, v_floor=options.v_floor)
    im = asm.index_map
    if gen_modes is None:
        gen_modes = np.zeros(im.n_gen, dtype=int)
    state = initial_state or initialize(case, options, coupled)
    x = state.to_flat(im)
    if coupled:
        # the lam = 0 plane is invariant under the Newton map, so a warm
        # start whose feasibility response decayed to zero (a feasible
        # subproblem drives it there) must be nudged off the plane again
        lam_dead = max(np.abs(x[im.lam_r]).max(initial=0.0),
                       np.abs(x[im.lam_i]).max(initial=0.0))
        if lam_dead < options.nr_tolerance:
            x[im.lam_r] = options.nr_tolerance
            x[im.lam_i] = options.nr_tolerance
    trace = trace if trace is not None else IterationTrace()
    budget = max_iterations if max_iterations is not None \
        else options.max_iterations

    # components that keep saturating their step bound in one direction get
    # a geometrically growing bound; any reversal or free step resets it
    accel_ok = current_block_mask(im)
    accel = np.ones(im.dim)
    last_sign = np.zeros(im.dim, dtype=np.int8)
    # the admittance inflation scales every current in the network by
    # (1 + mu * y_scale), so current-like unknowns (machine reactive
    # output, source currents) legitimately traverse that much farther per
    # step; voltages stay order one and keep their bound
    base_scale = np.ones(im.dim)
    if mu > 0.0 and y_scale > 0.0:
        base_scale[accel_ok] = 1.0 + mu * y_scale
    # limited Newton can fall into step-bound limit cycles near turning
    # points; when the residual stops improving on its recent window the
    # step switches to the damped exact Newton direction, and the damping
    # relaxes again as progress resumes
    gamma = 1.0
    window: list[float] = []
    stale = 0
    directional = False

    labels = None
    iters = 0
    residual = math.inf
    failure = None
    converged = False
    dumped = options.matrix_dump_path is None
    try:
        for iters in range(budget + 1):
            residual = float(np.abs(asm.residual(x, gen_modes)).max())
            if residual < options.nr_tolerance:
                converged = True
                trace.add(mu=mu, iteration=iters, residual=residual)
                break
            if iters == budget:
                break
            if not window or residual < min(window) * (1.0 - 1e-6):
                stale = 0
                gamma = min(1.0, gamma * 2.0)
            else:
                stale += 1
                if stale >= 4:
                    gamma = max(gamma * 0.5, 1.0 / 1024.0)
                    stale = 0
            window.append(residual)
            del window[:-4]
            a, rhs = asm.system(x, gen_modes)
            if not dumped:
                dump_matrix_market(a, rhs, options.matrix_dump_path)
                dumped = True
            if labels is None:
                labels = asm.labels()
            x_next, _ = solve_linear(a, rhs, labels)
            if directional or gamma < 1.0:
                # stalled: move along the exact Newton direction instead
                # of clipping per component, which restores guaranteed
                # first-order descent of the residual; return to clipped
                # stepping once the raw step nearly fits its bounds again
                directional = True
                x, min_scale, limited, xi = directional_step(
                    x, x_next, im, options, gamma, bound_scale=base_scale)
                if gamma >= 1.0 and xi >= 0.5:
                    directional = False
                accel[:] = 1.0
                last_sign[:] = 0
            else:
                x, min_scale, limited, sat = limit_step(
                    x, x_next, im, options, bound_scale=accel * base_scale)
                pushing = (sat != 0) & (sat == last_sign) & accel_ok
                accel[pushing] = np.minimum(accel[pushing] * 2.0, 1e6)
                accel[~pushing] = 1.0
                last_sign = sat
            trace.add(mu=mu, iteration=iters, residual=residual,
                      min_step_scale=min_scale, n_limited=limited)
    except (SingularSystemError, VoltageFloorError) as exc:
        failure = str(exc)
        trace.note(f"mu={mu:g}: {failure}")

    return Solution(
        converged=converged, state=StateVector.from_flat(x, im),
        iterations=iters, residual=residual, case=case, options=options,
        coupled=coupled, gen_modes=gen_modes.copy(), trace=trace,
        final_stage_iterations=iters if mu == 0.0 else 0,
        mu_schedule=[mu], failure=failure,
    )


# ---------------------------------------------------------------------------
# transmission stepping


def least_squares_rescue(case: NetworkCase, options: SolverOptions,
                         state: StateVector, gen_modes: np.ndarray | None,
                         mu: float, max_nfev: int = 200):
    """Drive the full residual down by trust-region least squares.

    A fallback for continuation steps Newton cannot traverse: the residual
    is minimized as a least-squares objective with the exact sparse
    Jacobian, which handles near-singular systems and long curved paths
    that defeat clipped Newton steps. Returns the improved state, or None
    when no near-solution was found.
    """
    import scipy.optimize
    import scipy.sparse as sp

    coupled = options.feasibility
    y_scale = options.homotopy.y_scale if mu > 0 else 0.0
    asm = Assembler(case, coupled=coupled, placement=options.placement,
                    mu=mu, y_scale=y_scale, v_floor=1e-12)
    im = asm.index_map
    if gen_modes is None:
        gen_modes = np.zeros(im.n_gen, dtype=int)
    x0 = state.to_flat(im)
    big = 1e8

    def fun(x):
        try:
            r = asm.residual(x, gen_modes)
        except (VoltageFloorError, FloatingPointError):
            return np.full(im.dim, big)
        return np.where(np.isfinite(r), r, big)

    def jac(x):
        try:
            return asm.system(x, gen_modes)[0]
        except (VoltageFloorError, FloatingPointError):
            return sp.eye(im.dim, format="csc")

    try:
        res = scipy.optimize.least_squares(
            fun, x0, jac=jac, method="trf", tr_solver="lsmr",
            max_nfev=max_nfev, xtol=1e-14, ftol=1e-14, gtol=1e-14)
    except Exception:
        return None
    if not np.isfinite(res.fun).all():
        return None
    if float(np.abs(res.fun).max()) > 1e-5:
        return None
    return StateVector.from_flat(res.x, im)


def tx_stepping_solve(case: NetworkCase, options: SolverOptions,
                      initial_state: StateVector | None = None,
                      gen_modes: np.ndarray | None = None) -> Solution:
    """Homotopy continuation over the series-admittance scaling.

    Walks mu down the geometric schedule, warm-starting each subproblem.
    When a subproblem fails the decrement is halved and the step retried;
    the run fails once the refinement budget is exhausted. The mu = 0
    subproblem is the original system, so its solution and iteration count
    are what the caller ultimately receives.
    """
    hp = options.homotopy
    trace = IterationTrace()
    state = initial_state or initialize(case, options)
    schedule: list[float] = []
    total_iters = 0

    def subsolve(mu: float, st: StateVector) -> Solution:
        return nr_solve(case, options, initial_state=st, gen_modes=gen_modes,
                        mu=mu, trace=trace,
                        max_iterations=hp.max_subproblem_iterations)

    mu = hp.mu_start
    sol = subsolve(mu, state)
    total_iters += sol.iterations
    schedule.append(mu)
    if not sol.converged:
        trace.note(f"homotopy entry point mu={mu:g} failed")
        return replace(sol, mu_schedule=schedule, iterations=total_iters,
                       failure=sol.failure or
                       f"homotopy entry subproblem mu={mu:g} did not converge")
    state = sol.state

    def spurious_branch(cand: Solution, at_mu: float):
        """A converged subproblem can land on a stationary point of the
        compensation norm that is not its minimum; continuing from there
        tracks the wrong branch into a stall, so it counts as a failure.
        Returns the curvature analysis when that happens, else None."""
        if not options.feasibility:
            return None
        if len(case.buses) > options.second_order_cap:
            return None
        lam = np.abs(cand.state.feasibility_currents).max(initial=0.0)
        if lam < options.infeasibility_threshold:
            return None
        so = check_second_order(cand)
        if so.verdict == "saddle":
            trace.note(f"mu={at_mu:g} converged onto a saddle branch "
                       f"(min curvature {so.min_eigenvalue:.2e})")
            return so
        return None

    def escape_start(cand: Solution, so: SecondOrderResult,
                     sign: float) -> StateVector:
        """Displace a saddle point along its negative-curvature direction.

        Both the voltage-side and the compensation-side components move,
        scaled so the largest entry shifts by half a step bound; the next
        solve then descends toward a lower stationary point."""
        im = Assembler(case, coupled=True,
                       placement=options.placement).index_map
        x = cand.state.to_flat(im)
        top = max(np.abs(so.descent_x).max(initial=0.0),
                  np.abs(so.descent_if).max(initial=0.0), 1e-12)
        step = sign * 0.5 * options.q_step_max / top
        x[:im.dim_pf] += step * so.descent_x
        x[im.dim_pf + so.placed_cols] += step * so.descent_if
        return StateVector.from_flat(x, im)

    refinements = 0
    rescued_at = None
    while mu > 0.0:
        nxt = mu / hp.mu_divisor
        if nxt < hp.mu_floor:
            nxt = 0.0
        escape_signs = iter((1.0, -1.0))
        start = state
        while True:
            cand = subsolve(nxt, start)
            total_iters += cand.iterations
            saddle = None
            if cand.converged:
                saddle = spurious_branch(cand, nxt)
                if saddle is None:
                    break
            if not cand.converged and rescued_at != nxt:
                # Newton lost the path; try trust-region least squares from
                # wherever it got to, then from the clean warm start, and
                # polish any near-solution with a fresh Newton pass. The
                # final subproblem also gets a cold start and a bigger
                # budget, since it is the one that matters.
                rescued_at = nxt
                seeds = [cand.state, start]
                budget = 200
                if nxt == 0.0:
                    seeds.append(initialize(case, options))
                    budget = 1000
                polished = None
                for seed in seeds:
                    fixed = least_squares_rescue(case, options, seed,
                                                 gen_modes, nxt,
                                                 max_nfev=budget)
                    if fixed is None:
                        continue
                    attempt = subsolve(nxt, fixed)
                    total_iters += attempt.iterations
                    if attempt.converged and \
                            spurious_branch(attempt, nxt) is None:
                        polished = attempt
                        break
                if polished is not None:
                    trace.note(f"mu={nxt:g}: least-squares rescue succeeded")
                    cand = polished
                    break
            refinements += 1
            if refinements > hp.max_refinements:
                return replace(
                    cand, converged=False, mu_schedule=schedule + [nxt],
                    iterations=total_iters,
                    failure=cand.failure or
                    f"homotopy stalled at mu={nxt:g} after "
                    f"{hp.max_refinements} refinements")
            if saddle is not None:
                sign = next(escape_signs, None)
                if sign is not None:
                    trace.note(f"mu={nxt:g}: retrying along the descent "
                               f"direction (sign {sign:+g})")
                    start = escape_start(cand, saddle, sign)
                    continue
            trace.note(f"mu={nxt:g} failed; refining schedule "
                       f"({refinements}/{hp.max_refinements})")
            nxt = 0.5 * (mu + nxt)
            escape_signs = iter((1.0, -1.0))
            start = state
        mu = nxt
        schedule.append(mu)
        state = cand.state
        sol = cand
        rescued_at = None

    return replace(sol, mu_schedule=schedule, iterations=total_iters,
                   final_stage_iterations=sol.iterations)


# ---------------------------------------------------------------------------
# reactive limit enforcement


def enforce_q_limits(case: NetworkCase, options: SolverOptions,
                     initial_state: StateVector | None = None) -> Solution:
    """Outer PV/PQ switching loop around the inner solver.

    After each converged solve, machines beyond a reactive limit are pinned
    to it and pinned machines whose bus voltage crossed back over the
    setpoint are released, so the final state satisfies exactly one branch
    of the complementarity logic per machine. Repeats until the mode vector
    is stable, an oscillation repeats a previous mode vector, or the outer
    budget runs out.
    """
    model_gens = case.generators
    n_gen = len(model_gens)
    gen_modes = np.zeros(n_gen, dtype=int)
    qmin = np.array([g.q_min for g in model_gens], dtype=float)
    qmax = np.array([g.q_max for g in model_gens], dtype=float)
    vset = np.array([g.v_set for g in model_gens], dtype=float)
    gen_bus = np.array([case.bus_index[g.bus] for g in model_gens], dtype=int)

    events: list[str] = []
    seen: list[tuple] = []
    state = initial_state
    sol: Solution | None = None
    eps = 1e-9

    def inner(st, modes, reuse_plain):
        if options.homotopy.enabled and not reuse_plain:
            return tx_stepping_solve(case, options, initial_state=st,
                                     gen_modes=modes)
        return nr_solve(case, options, initial_state=st, gen_modes=modes)

    for outer in range(options.max_outer_iterations):
        reuse_plain = sol is not None
        attempt = inner(state, gen_modes, reuse_plain)
        if not attempt.converged and reuse_plain \
                and options.homotopy.enabled:
            attempt = inner(state, gen_modes, False)  # retry with homotopy
        sol = attempt
        sol.switch_events = events
        if not sol.converged:
            return sol
        if options.q_limit_mode != "outer" or n_gen == 0:
            return sol

        st = sol.state
        v2 = st.v_r[gen_bus] ** 2 + st.v_i[gen_bus] ** 2
        new_modes = gen_modes.copy()
        for g in range(n_gen):
            if gen_modes[g] == 0:
                if st.q_g[g] > qmax[g] + eps:
                    new_modes[g] = 1
                    events.append(f"outer {outer}: gen {g} "
                                  f"(bus {model_gens[g].bus}) pinned at qmax")
                elif st.q_g[g] < qmin[g] - eps:
                    new_modes[g] = -1
                    events.append(f"outer {outer}: gen {g} "
                                  f"(bus {model_gens[g].bus}) pinned at qmin")
            elif gen_modes[g] == 1 and v2[g] > vset[g] ** 2 + eps:
                new_modes[g] = 0
                events.append(f"outer {outer}: gen {g} "
                              f"(bus {model_gens[g].bus}) released from qmax")
            elif gen_modes[g] == -1 and v2[g] < vset[g] ** 2 - eps:
                new_modes[g] = 0
                events.append(f"outer {outer}: gen {g} "
                              f"(bus {model_gens[g].bus}) released from qmin")

        if np.array_equal(new_modes, gen_modes):
            return sol
        key = tuple(new_modes)
        if key in seen:
            events.append(f"outer {outer}: oscillation detected, freezing "
                          "current modes")
            return sol
        seen.append(tuple(gen_modes))
        gen_modes = new_modes
        state = sol.state
        state.q_g = np.clip(state.q_g, qmin, qmax)

    events.append(f"reactive limit loop hit the outer budget "
                  f"({options.max_outer_iterations})")
    sol.switch_events = events
    return sol


# ---------------------------------------------------------------------------
# second-order (curvature) check


@dataclass
class SecondOrderResult:
    verdict: str            # minimum | saddle | not_applicable | skipped
    min_eigenvalue: float | None = None
    null_dimension: int = 0
    note: str = ""
    # negative-curvature direction at a saddle: components over the
    # power-flow unknowns and over the adjoint columns listed in placed_cols
    descent_x: np.ndarray | None = None
    descent_if: np.ndarray | None = None
    placed_cols: np.ndarray | None = None


def check_second_order(solution: Solution,
                       threshold: float | None = None) -> SecondOrderResult:
    """Classify the converged point of the feasibility optimization.

    Projects the Hessian of the Lagrangian onto the null space of the
    constraint Jacobian (over voltages and feasibility currents) and reports
    whether the curvature is nonnegative there, i.e. whether the point is a
    constrained local minimum of the squared feasibility current objective.
    Dense computation, refused above the configured bus-count cap.
    """
    options = solution.options
    case = solution.case
    if not solution.coupled:
        return SecondOrderResult("not_applicable",
                                 note="power-flow-only solution")
    if not solution.converged:
        return SecondOrderResult("not_applicable", note="not converged")
    if len(case.buses) > options.second_order_cap:
        return SecondOrderResult(
            "skipped",
            note=f"{len(case.buses)} buses exceeds the dense-check cap "
                 f"{options.second_order_cap}")
    lam_max = float(np.abs(solution.state.feasibility_currents).max())
    if lam_max < options.infeasibility_threshold:
        return SecondOrderResult(
            "not_applicable", note="feasible case: zero adjoint response")

    # classify at the continuation level the state was actually solved at
    mu = solution.mu_schedule[-1] if solution.mu_schedule else 0.0
    y_scale = options.homotopy.y_scale if mu > 0 else 0.0
    asm = Assembler(case, coupled=True, placement=options.placement,
                    mu=mu, y_scale=y_scale)
    x = solution.state.to_flat(asm.index_map)
    a_full, _ = asm.system(x, solution.gen_modes)
    d = asm.index_map.dim_pf
    a_dense = a_full.toarray()
    jac_x = a_dense[:d, :d]
    coupling = a_dense[:d, d:]
    placed_cols = np.flatnonzero(np.any(coupling != 0.0, axis=0))
    sel = -coupling[:, placed_cols]
    hess_x = a_dense[d:, :d]

    import scipy.linalg as sla

    jc = np.hstack([jac_x, -sel])
    null = sla.null_space(jc)
    if null.shape[1] == 0:
        return SecondOrderResult("minimum", min_eigenvalue=None,
                                 null_dimension=0,
                                 note="constraint Jacobian has full rank")
    n_if = sel.shape[1]
    h_full = np.zeros((d + n_if, d + n_if))
    h_full[:d, :d] = 0.5 * (hess_x + hess_x.T)
    h_full[d:, d:] = np.eye(n_if)
    proj = null.T @ h_full @ null
    eigs, vecs = sla.eigh(0.5 * (proj + proj.T))
    min_eig = float(eigs[0])
    tol = -1e-8 if threshold is None else threshold
    if min_eig >= tol:
        return SecondOrderResult("minimum", min_eigenvalue=min_eig,
                                 null_dimension=null.shape[1])
    direction = null @ vecs[:, 0]
    return SecondOrderResult(
        "saddle", min_eigenvalue=min_eig, null_dimension=null.shape[1],
        descent_x=direction[:d], descent_if=direction[d:],
        placed_cols=placed_cols)


# ---------------------------------------------------------------------------
# top-level dispatch


def solve_case(case: NetworkCase, options: SolverOptions | None = None,
               initial_state: StateVector | None = None) -> Solution:
    """Solve a case per the configured policies (the main entry point)."""
    options = options or SolverOptions()
    if options.q_limit_mode == "outer" and case.generators:
        return enforce_q_limits(case, options, initial_state)
    if options.homotopy.enabled:
        return tx_stepping_solve(case, options, initial_state=initial_state)
    return nr_solve(case, options, initial_state=initial_state)
